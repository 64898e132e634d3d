'''
DEANet Low-Light Enhancement Toolkit
Command line: wls, decompose, train, enhance, metrics, evaluate, niqe-fit.

Results go to stdout, logs to stderr. Exit codes: 0 success, 1 usage or
configuration error, 2 data or checkpoint error, 3 numerical failure.

Date: 2026-10-19
'''

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from iqa.metrics import compute_report
from iqa.niqe import load_niqe_model, niqe_fit, save_niqe_model
from pipeline.config import load_config
from pipeline.dataset import ingest_root
from pipeline.evaluation import evaluate, write_report
from pipeline.image_io import read_png, write_png
from pipeline.inference import decompose_image, enhance_image, load_networks
from pipeline.training import train_stage1, train_stage2
from utilities.exceptions import (ConfigError, DataError, DeaNetError, NumericalError,
                                  SolverDivergenceError, UsageError)
from utilities.logging_setup import configure_logging
from wls_split.wls_filter import frequency_split


logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
SIGNED_LAYERS = ('hf', 'hf_enhanced')


class ArgumentParser(argparse.ArgumentParser):
    '''argparse parser that raises UsageError instead of exiting.'''

    def error(self, message):
        raise UsageError(f'{self.prog}: {message}')


def exit_code(err):
    if isinstance(err, ConfigError):
        return EXIT_USAGE
    if isinstance(err, (NumericalError, SolverDivergenceError)):
        return EXIT_NUMERICAL
    return EXIT_DATA


def _require(args, *names):
    missing = [f'--{name.replace("_", "-")}' for name in names if getattr(args, name) is None]
    if missing:
        raise UsageError(f'{args.command}: missing required option(s) {", ".join(missing)}')


def _signed_to_png(layer):
    '''Detail layers are stored around mid-grey: 0.5 + hf.'''
    return 0.5 + layer


def cmd_wls(args, config):
    _require(args, 'input', 'out_base', 'out_detail')
    image = read_png(args.input)
    split = frequency_split(image, config.wls)
    write_png(args.out_base, split.low_freq)
    write_png(args.out_detail, _signed_to_png(split.high_freq))
    sidecar = Path(args.out_detail).with_suffix('.npz')
    np.savez(sidecar, low_freq=split.low_freq, high_freq=split.high_freq)
    print(f'base: {args.out_base}\ndetail: {args.out_detail}\nlayers: {sidecar}')


def cmd_decompose(args, config):
    _require(args, 'input', 'ckpt', 'out_reflectance', 'out_illumination')
    bundle = load_networks(args.ckpt, config, names=('decom',))
    reflectance, illumination = decompose_image(read_png(args.input), bundle, config)
    write_png(args.out_reflectance, reflectance)
    write_png(args.out_illumination, illumination)
    print(f'reflectance: {args.out_reflectance}\nillumination: {args.out_illumination}')


def cmd_train(args, config):
    _require(args, 'data', 'ckpt')
    stage = {'1': 'decom', '2': 'joint'}.get(args.stage, args.stage) or config.train.stage
    dataset = ingest_root(args.data, config.train.patch_size, config.train.seed)
    if stage == 'decom':
        log = train_stage1(dataset, config, args.ckpt, resume=args.resume)
    else:
        log = train_stage2(dataset, config, args.ckpt, stage1_ckpt=args.stage1_ckpt,
                           resume=args.resume)
    last = log.iloc[-1] if len(log) else None
    print(f'stage: {stage}\nsteps: {int(last["step"]) if last is not None else 0}'
          f'\ncheckpoints: {args.ckpt}')
    if last is not None:
        print(f'final total loss: {last["total"]:.6f}')


def cmd_enhance(args, config):
    _require(args, 'input', 'ckpt', 'out')
    result = enhance_image(read_png(args.input), args.ckpt, config,
                           intermediates=args.dump_intermediates is not None,
                           skip_enhance=args.skip_enhance, skip_adjust=args.skip_adjust)
    write_png(args.out, result.final)
    if args.dump_intermediates is not None:
        out_dir = Path(args.dump_intermediates)
        for name, layer in result.intermediates.items():
            write_png(out_dir / f'{name}.png',
                      _signed_to_png(layer) if name in SIGNED_LAYERS else layer)
    print(f'output: {args.out}')


def cmd_metrics(args, config):
    if len(args.images) != 2:
        raise UsageError('metrics: expected exactly two images, output and reference')
    output, reference = (read_png(path) for path in args.images)
    model = load_niqe_model(args.niqe_model) if args.niqe_model else None
    report = compute_report(output, reference, config.iqa, model)
    print(report)
    if args.csv:
        report.to_frame().to_csv(args.csv, index=False)


def cmd_evaluate(args, config):
    _require(args, 'data', 'ckpt', 'out')
    dataset = ingest_root(args.data, config.train.patch_size, config.train.seed)
    model = load_niqe_model(args.niqe_model) if args.niqe_model else None
    result = evaluate(dataset, args.ckpt, config, niqe_model=model)
    write_report(result, args.out)
    sys.stdout.write(result.to_text())


def cmd_niqe_fit(args, config):
    _require(args, 'corpus', 'out')
    corpus_dir = Path(args.corpus)
    if not corpus_dir.is_dir():
        raise DataError(f'NIQE corpus directory {corpus_dir} does not exist')
    paths = sorted(p for p in corpus_dir.iterdir() if p.suffix.lower() == '.png')
    model = niqe_fit([read_png(p) for p in paths], config.iqa.niqe_patch_size,
                     config.iqa.niqe_sharpness_fraction)
    save_niqe_model(model, args.out)
    print(f'niqe model: {args.out} ({len(paths)} images)')


def build_parser():
    common = ArgumentParser(add_help=False)
    common.add_argument('--config', help='flat section.key = value config file')
    common.add_argument('--set', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help='override one config value (repeatable)')
    common.add_argument('--seed', type=int, help='shortcut for train.seed')
    common.add_argument('--verbose', action='store_true', help='debug logging')
    common.add_argument('--dump-config', action='store_true',
                        help='print the effective config and exit')

    parser = ArgumentParser(prog='deanet', description='DEANet low-light enhancement toolkit')
    commands = parser.add_subparsers(dest='command', required=True)

    wls = commands.add_parser('wls', parents=[common], help='WLS base/detail split')
    wls.add_argument('--in', dest='input')
    wls.add_argument('--out-base')
    wls.add_argument('--out-detail')
    wls.set_defaults(handler=cmd_wls)

    decompose = commands.add_parser('decompose', parents=[common],
                                    help='reflectance and illumination of an image')
    decompose.add_argument('--in', dest='input')
    decompose.add_argument('--ckpt')
    decompose.add_argument('--out-reflectance')
    decompose.add_argument('--out-illumination')
    decompose.set_defaults(handler=cmd_decompose)

    train = commands.add_parser('train', parents=[common], help='run a training stage')
    train.add_argument('--stage', choices=['1', '2', 'decom', 'joint'])
    train.add_argument('--data', help='dataset root with low/ and high/')
    train.add_argument('--ckpt', help='checkpoint directory')
    train.add_argument('--stage1-ckpt', help='decom.dean used by stage 2')
    train.add_argument('--resume', action='store_true')
    train.set_defaults(handler=cmd_train)

    enhance = commands.add_parser('enhance', parents=[common], help='enhance one image')
    enhance.add_argument('--in', dest='input')
    enhance.add_argument('--ckpt')
    enhance.add_argument('--out')
    enhance.add_argument('--dump-intermediates', metavar='DIR')
    enhance.add_argument('--skip-enhance', action='store_true')
    enhance.add_argument('--skip-adjust', action='store_true')
    enhance.set_defaults(handler=cmd_enhance)

    metrics = commands.add_parser('metrics', parents=[common],
                                  help='full-reference metrics of output vs reference')
    metrics.add_argument('images', nargs='*')
    metrics.add_argument('--niqe-model')
    metrics.add_argument('--csv')
    metrics.set_defaults(handler=cmd_metrics)

    evaluation = commands.add_parser('evaluate', parents=[common],
                                     help='score a checkpoint on a paired dataset')
    evaluation.add_argument('--data')
    evaluation.add_argument('--ckpt')
    evaluation.add_argument('--out', help='report directory')
    evaluation.add_argument('--niqe-model')
    evaluation.set_defaults(handler=cmd_evaluate)

    fit = commands.add_parser('niqe-fit', parents=[common], help='fit a NIQE model')
    fit.add_argument('--corpus', help='directory of pristine PNGs')
    fit.add_argument('--out')
    fit.set_defaults(handler=cmd_niqe_fit)
    return parser


def run(argv=None):
    '''Run one command.

    Arguments:
        argv (list of str): arguments without the program name

    Returns:
        int: exit code
    '''

    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        print(f'{err.__class__.__name__}: {err}', file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_OK

    configure_logging(args.verbose)
    try:
        config = load_config(args.config, args.set, args.seed)
        if args.dump_config:
            print(config.dump())
            return EXIT_OK
        logger.info('Effective configuration:\n%s', config.dump())
        args.handler(args, config)
        return EXIT_OK
    except (DeaNetError, OSError, ValueError, ArithmeticError) as err:
        print(f'{err.__class__.__name__}: {err}', file=sys.stderr)
        return exit_code(err)
