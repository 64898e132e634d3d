import numpy as np
import pytest

from cli.deanet_cli import run
from conftest import natural_image
from pipeline.config import RunConfig, load_config, parse_config_text
from pipeline.image_io import read_png, write_png

TINY = ['--set', 'net.depth_levels=3', '--set', 'net.base_channels=4',
        '--set', 'net.dense_growth=4', '--set', 'net.dense_layers=2',
        '--set', 'net.input_size=16', '--set', 'train.patch_size=16',
        '--set', 'train.max_steps=1']


@pytest.fixture
def image_path(tmp_path):
    return write_png(tmp_path / 'image.png', natural_image(0, 32))


@pytest.fixture
def data_root(tmp_path):
    for index in range(2):
        name = f'{index:03d}.png'
        high = natural_image(index, 24)
        write_png(tmp_path / 'data' / 'low' / name, 0.3 * high)
        write_png(tmp_path / 'data' / 'high' / name, high)
    return tmp_path / 'data'


def test_metrics_of_identical_images(image_path, capsys):
    assert run(['metrics', str(image_path), str(image_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert 'psnr  inf' in lines
    assert 'ssim  1.000' in lines
    assert 'fsim  1.000' in lines
    assert 'mae   0.000' in lines
    assert 'gmsd  0.000' in lines


def test_metrics_csv(image_path, tmp_path):
    assert run(['metrics', str(image_path), str(image_path), '--csv',
                str(tmp_path / 'm.csv')]) == 0
    assert (tmp_path / 'm.csv').read_text().startswith('metric,value')


def test_unknown_config_key_is_usage_error(image_path, capsys):
    code = run(['metrics', str(image_path), str(image_path), '--set', 'iqa.ssim_win=7'])
    assert code == 1
    assert 'iqa.ssim_win' in capsys.readouterr().err


def test_dump_config_parses_back(capsys):
    assert run(['wls', '--dump-config', '--set', 'wls.lambda=0.25', '--seed', '9']) == 0
    dumped = capsys.readouterr().out
    expected = load_config(overrides=['wls.lambda=0.25'], seed=9)
    assert RunConfig().with_values(parse_config_text(dumped)) == expected


def test_wls_writes_layers(image_path, tmp_path, capsys):
    base, detail = tmp_path / 'out' / 'base.png', tmp_path / 'out' / 'detail.png'
    assert run(['wls', '--in', str(image_path), '--out-base', str(base),
                '--out-detail', str(detail)]) == 0
    layers = np.load(tmp_path / 'out' / 'detail.npz')
    source = read_png(image_path)
    assert np.abs(layers['low_freq'] + layers['high_freq'] - source).max() < 1e-6
    assert np.abs(read_png(base) - layers['low_freq']).max() <= 0.5 / 255 + 1e-9
    assert 'base:' in capsys.readouterr().out


def test_missing_input_is_data_error(tmp_path, capsys):
    code = run(['wls', '--in', str(tmp_path / 'nope.png'), '--out-base',
                str(tmp_path / 'b.png'), '--out-detail', str(tmp_path / 'd.png')])
    assert code == 2
    assert 'DataError' in capsys.readouterr().err


def test_missing_option_is_usage_error(capsys):
    assert run(['enhance', '--in', 'x.png']) == 1
    assert '--ckpt' in capsys.readouterr().err


def test_missing_command_is_usage_error():
    assert run([]) == 1


def test_help_exits_cleanly(capsys):
    assert run(['--help']) == 0
    assert 'niqe-fit' in capsys.readouterr().out


def test_enhance_without_checkpoint(image_path, tmp_path):
    assert run(['enhance', '--in', str(image_path), '--ckpt', str(tmp_path / 'none'),
                '--out', str(tmp_path / 'out.png')]) == 2


def test_train_enhance_evaluate(data_root, tmp_path, capsys):
    ckpt = tmp_path / 'ckpt'
    assert run(['train', '--stage', '1', '--data', str(data_root), '--ckpt', str(ckpt)] + TINY) == 0
    assert run(['train', '--stage', '2', '--data', str(data_root), '--ckpt', str(ckpt)] + TINY) == 0
    assert {p.name for p in ckpt.iterdir()} >= {'decom.dean', 'enhance.dean', 'adjust.dean',
                                                'train_log.csv'}

    out, layers = tmp_path / 'enhanced.png', tmp_path / 'layers'
    assert run(['enhance', '--in', str(data_root / 'low' / '000.png'), '--ckpt', str(ckpt),
                '--out', str(out), '--dump-intermediates', str(layers)] + TINY) == 0
    assert read_png(out).shape == (24, 24, 3)
    assert (layers / 'illumination.png').exists()

    report = tmp_path / 'report'
    assert run(['evaluate', '--data', str(data_root), '--ckpt', str(ckpt),
                '--out', str(report)] + TINY) == 0
    assert (report / 'eval_report.csv').exists()
    assert 'mean' in capsys.readouterr().out
