'''
DEANet Low-Light Enhancement Toolkit
Evaluation over paired data: enhance every low image, score it against its
normal-light reference and report per-image rows plus the mean.

Date: 2026-10-19
'''

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from iqa.metrics import IqaConfig, MetricReport, compute_report
from pipeline.inference import NetworkBundle, enhance_image, load_networks
from utilities.decorators import time_it
from utilities.exceptions import DeaNetError


logger = logging.getLogger(__name__)

METRICS = ('psnr', 'ssim', 'fsim', 'mae', 'gmsd', 'niqe')
MEAN_ROW = 'mean'
REPORT_CSV = 'eval_report.csv'
REPORT_TXT = 'eval_report.txt'


@dataclass
class EvaluationResult:
    '''Outcome of evaluate().

    Attributes:
        table (pd.DataFrame): one row per pair plus the mean row; columns
            image, the metric names and status
        mean (MetricReport): averages over the successful pairs
        partial (bool): True when at least one pair failed
        footnotes (list of str): remarks printed under the table
    '''

    table: pd.DataFrame
    mean: MetricReport
    partial: bool = False
    footnotes: list = field(default_factory=list)

    def formatted(self):
        '''The table with every metric as a 3-decimal string ("inf" kept).'''

        table = self.table.copy()
        for column in METRICS:
            if column in table:
                table[column] = [MetricReport.format_value(v) if v is not None
                                 and not (isinstance(v, float) and math.isnan(v)) else ''
                                 for v in table[column]]
        return table

    def to_text(self):
        lines = [self.formatted().to_string(index=False)]
        lines.extend(self.footnotes)
        return '\n'.join(lines) + '\n'


def _enhancer(checkpoints, config):
    if callable(checkpoints) and not isinstance(checkpoints, NetworkBundle):
        return checkpoints
    bundle = checkpoints
    if isinstance(checkpoints, (str, Path)):
        bundle = load_networks(checkpoints, config)
    return lambda name, low: enhance_image(low, bundle, config).final


def mean_report(reports):
    '''Average of MetricReports; infinite PSNR values are left out of the PSNR mean.

    Returns:
        tuple: (MetricReport, number of infinite PSNR values excluded)
    '''

    if not reports:
        nan = math.nan
        return MetricReport(nan, nan, nan, nan, nan), 0
    psnrs = [r.psnr for r in reports]
    finite = [p for p in psnrs if math.isfinite(p)]
    excluded = len(psnrs) - len(finite)
    values = {'psnr': float(np.mean(finite)) if finite else math.inf}
    for name in ('ssim', 'fsim', 'mae', 'gmsd'):
        values[name] = float(np.mean([getattr(r, name) for r in reports]))
    niqes = [r.niqe for r in reports if r.niqe is not None]
    values['niqe'] = float(np.mean(niqes)) if niqes else None
    return MetricReport(**values), excluded


@time_it
def evaluate(dataset, checkpoints, config, niqe_model=None):
    '''Score the enhancement of every pair of a dataset.

    Arguments:
        dataset (PairedDataset)
        checkpoints: checkpoint directory, NetworkBundle, or a callable
            (name, low image) -> enhanced image
        config (RunConfig)
        niqe_model (NiqeModel or None): adds a NIQE column when given

    Returns:
        EvaluationResult
    '''

    enhance = _enhancer(checkpoints, config)
    iqa_config = config.iqa if config is not None else IqaConfig()

    def score(index):
        name = dataset.pairs[index].name
        low, high = dataset[index]
        try:
            output = enhance(name, low)
            return name, compute_report(output, high, iqa_config, niqe_model), None
        except (DeaNetError, ValueError, ArithmeticError) as err:
            logger.error('%s: %s: %s', name, err.__class__.__name__, err)
            return name, None, f'{err.__class__.__name__}: {err}'

    workers = max(1, iqa_config.workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(score, range(len(dataset))))
    else:
        outcomes = [score(index) for index in range(len(dataset))]

    columns = [m for m in METRICS if m != 'niqe' or niqe_model is not None]
    rows, reports = [], []
    for name, report, failure in outcomes:
        row = {'image': name}
        if report is None:
            row.update({m: math.nan for m in columns})
            row['status'] = f'failed: {failure}'
        else:
            reports.append(report)
            row.update({m: getattr(report, m) for m in columns})
            row['status'] = 'ok'
        rows.append(row)

    mean, excluded = mean_report(reports)
    partial = len(reports) < len(outcomes)
    rows.append({'image': MEAN_ROW, **{m: getattr(mean, m) for m in columns},
                 'status': 'partial' if partial else 'ok'})

    footnotes = []
    if excluded:
        footnotes.append(f'* psnr mean excludes {excluded} image(s) with identical '
                         'output and reference (psnr = inf)')
    if partial:
        footnotes.append(f'* partial results: {len(outcomes) - len(reports)} of '
                         f'{len(outcomes)} image(s) failed')
    table = pd.DataFrame(rows, columns=['image', *columns, 'status'])
    logger.info('Evaluated %d pairs (%d failed)', len(outcomes), len(outcomes) - len(reports))
    return EvaluationResult(table=table, mean=mean, partial=partial, footnotes=footnotes)


def write_report(result, out_dir):
    '''Write eval_report.csv and the aligned eval_report.txt table.

    Returns:
        tuple: (csv path, text path)
    '''

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, txt_path = out_dir / REPORT_CSV, out_dir / REPORT_TXT
    result.formatted().to_csv(csv_path, index=False)
    txt_path.write_text(result.to_text(), encoding='utf-8')
    logger.info('Wrote %s and %s', csv_path, txt_path)
    return csv_path, txt_path
