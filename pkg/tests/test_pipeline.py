import math

import cv2
import numpy as np
import pandas as pd
import pytest
from PIL import Image

from conftest import natural_image
from iqa.metrics import psnr
from pipeline.config import RunConfig, load_config, parse_config_text
from pipeline.dataset import PairedDataset, ingest, ingest_root, paired_crop
from pipeline.evaluation import evaluate, write_report
from pipeline.image_io import read_png, write_png
from pipeline.inference import NetworkBundle, enhance_image, load_networks, pad_to_multiple
from pipeline.training import Trainer, train_stage1, train_stage2
from retinex_nets.checkpoint import read_checkpoint
from retinex_nets.networks import build_networks
from tensor_core.tensor import Tensor, default_dtype, get_default_dtype
from utilities.exceptions import CheckpointError, ConfigError, DataError, NumericalError

TINY_NET = ['net.depth_levels=3', 'net.base_channels=4', 'net.dense_growth=4',
            'net.dense_layers=2', 'net.input_size=16', 'train.patch_size=16',
            'train.log_every=0']


FULL_SIZE = ['net.base_channels=8', 'net.dense_growth=8', 'net.dense_layers=2',
             'train.epochs=500', 'train.lr=1e-3', 'train.flip=false', 'train.log_every=0']


def tiny_config(**train):
    overrides = TINY_NET + [f'train.{key}={value}' for key, value in train.items()]
    return load_config(overrides=overrides)


def tiny_dataset(count=2, size=24, seed=0):
    pairs = [(0.3 * natural_image(seed + i, size), natural_image(seed + i, size))
             for i in range(count)]
    return PairedDataset.from_arrays(pairs, patch_size=16, seed=seed)


def save_png(path, image):
    path.parent.mkdir(parents=True, exist_ok=True)
    return write_png(path, image)


class TestConfig:

    def test_file_values_are_typed(self, tmp_path):
        path = tmp_path / 'run.cfg'
        path.write_text('# training\ntrain.lr = 1e-4\ntrain.flip = false\n'
                        'loss.content_taps = 0,2\nnet.upsample_mode = pixel_shuffle\n')
        config = load_config(path)
        assert config.train.lr == 1e-4
        assert config.train.flip is False
        assert config.loss.content_taps == [0, 2]
        assert config.net.upsample_mode == 'pixel_shuffle'

    def test_dump_parses_back(self):
        config = load_config(overrides=['wls.lambda=0.5', 'train.wls_cache=cache',
                                        'iqa.workers=2'])
        assert RunConfig().with_values(parse_config_text(config.dump())) == config

    def test_unknown_key_is_named(self):
        with pytest.raises(ConfigError, match='train.learning_rate'):
            load_config(overrides=['train.learning_rate=0.1'])

    def test_lambda_alias(self):
        assert load_config(overrides=['wls.lambda=2']).wls.lam == 2.0
        with pytest.raises(ConfigError, match='wls.lam'):
            load_config(overrides=['wls.lam=2'])

    def test_precedence(self, tmp_path):
        path = tmp_path / 'run.cfg'
        path.write_text('train.seed = 1\ntrain.epochs = 5\n')
        config = load_config(path, overrides=['train.seed=2', 'train.epochs=7'], seed=3)
        assert (config.train.seed, config.train.epochs) == (3, 7)

    def test_invalid_value(self):
        with pytest.raises(ConfigError, match='train'):
            load_config(overrides=['train.stage=enhance'])
        with pytest.raises(ConfigError, match='not a valid int'):
            load_config(overrides=['train.epochs=many'])

    def test_malformed_line_reports_position(self, tmp_path):
        path = tmp_path / 'run.cfg'
        path.write_text('train.seed = 1\nnonsense\n')
        with pytest.raises(ConfigError, match=r'run.cfg:2'):
            load_config(path)

    def test_lr_schedule(self):
        train = tiny_config(lr=0.01, lr_decay_every=2, lr_decay_factor=0.5).train
        assert [train.lr_at(e) for e in range(5)] == [0.01, 0.01, 0.005, 0.005, 0.0025]


class TestImageIO:

    def test_eight_bit_endpoints(self, tmp_path):
        pixels = np.zeros((2, 2, 3), dtype=np.uint8)
        pixels[0, 0] = 255
        Image.fromarray(pixels).save(tmp_path / 'a.png')
        image = read_png(tmp_path / 'a.png')
        assert image.dtype == np.float64 and image.shape == (2, 2, 3)
        assert image[0, 0, 0] == 1.0 and image[1, 1, 2] == 0.0

    def test_sixteen_bit_grey(self, tmp_path):
        Image.fromarray(np.array([[65535, 0]], dtype=np.uint16)).save(tmp_path / 'g.png')
        image = read_png(tmp_path / 'g.png')
        assert image.shape == (1, 2, 3)
        np.testing.assert_array_equal(image[0, :, 1], [1.0, 0.0])

    def test_sixteen_bit_colour(self, tmp_path):
        rgb = np.array([[[257, 1000, 65535], [0, 40000, 12345]]], dtype=np.uint16)
        assert cv2.imwrite(str(tmp_path / 'c.png'), rgb[:, :, ::-1].copy())
        image = read_png(tmp_path / 'c.png')
        assert image.shape == (1, 2, 3)
        np.testing.assert_allclose(image, rgb / 65535.0, rtol=0, atol=1e-12)

    def test_write_clamps(self, tmp_path):
        path = write_png(tmp_path / 'sub' / 'x.png', np.array([[[-0.2, 0.5, 1.4]]]))
        np.testing.assert_array_equal(np.asarray(Image.open(path)), [[[0, 128, 255]]])

    def test_unreadable_file(self, tmp_path):
        (tmp_path / 'bad.png').write_bytes(b'not a png')
        with pytest.raises(DataError, match='bad.png'):
            read_png(tmp_path / 'bad.png')


class TestDataset:

    def test_ingest_pairs_by_name(self, tmp_path):
        for name, seed in (('a.png', 0), ('b.png', 1)):
            save_png(tmp_path / 'low' / name, 0.3 * natural_image(seed, 24))
            save_png(tmp_path / 'high' / name, natural_image(seed, 24))
        dataset = ingest_root(tmp_path)
        assert [pair.name for pair in dataset.pairs] == ['a.png', 'b.png']
        assert dataset[0][0].shape == (24, 24, 3)

    def test_unpaired_file(self, tmp_path):
        save_png(tmp_path / 'low' / 'a.png', natural_image(0, 8))
        save_png(tmp_path / 'high' / 'a.png', natural_image(0, 8))
        save_png(tmp_path / 'low' / 'b.png', natural_image(1, 8))
        with pytest.raises(DataError, match='Unpaired file .*b.png'):
            ingest(tmp_path / 'low', tmp_path / 'high')

    def test_dimension_mismatch(self, tmp_path):
        save_png(tmp_path / 'low' / 'a.png', natural_image(0, 8))
        save_png(tmp_path / 'high' / 'a.png', natural_image(0, 12))
        with pytest.raises(DataError, match='a.png'):
            ingest_root(tmp_path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DataError, match='does not exist'):
            ingest_root(tmp_path)

    def test_crops_stay_aligned(self, rng):
        low = rng.uniform(0, 1, (20, 30, 3))
        for _ in range(10):
            low_crop, high_crop = paired_crop(low, 2 * low, 8, rng)
            np.testing.assert_array_equal(high_crop, 2 * low_crop)

    def test_crop_larger_than_image(self, rng):
        with pytest.raises(DataError, match='smaller'):
            paired_crop(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)), 16, rng)

    def test_epoch_order_is_reproducible(self):
        dataset = tiny_dataset(count=5)
        np.testing.assert_array_equal(dataset.epoch_order(3), dataset.epoch_order(3))
        assert sorted(dataset.epoch_order(3)) == list(range(5))


class TestTraining:

    def test_stage1_is_deterministic(self, tmp_path):
        config = tiny_config(epochs=2, max_steps=3)
        for name in ('a', 'b'):
            log = train_stage1(tiny_dataset(), config, tmp_path / name)
        assert len(log) == 3
        assert (tmp_path / 'a' / 'train_log.csv').read_bytes() == \
            (tmp_path / 'b' / 'train_log.csv').read_bytes()
        assert (tmp_path / 'a' / 'decom.dean').read_bytes() == \
            (tmp_path / 'b' / 'decom.dean').read_bytes()

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        train_stage1(tiny_dataset(), tiny_config(max_steps=2), tmp_path / 'full')
        train_stage1(tiny_dataset(), tiny_config(max_steps=1), tmp_path / 'split')
        train_stage1(tiny_dataset(), tiny_config(max_steps=2), tmp_path / 'split', resume=True)
        assert (tmp_path / 'full' / 'decom.dean').read_bytes() == \
            (tmp_path / 'split' / 'decom.dean').read_bytes()
        pd.testing.assert_frame_equal(pd.read_csv(tmp_path / 'full' / 'train_log.csv'),
                                      pd.read_csv(tmp_path / 'split' / 'train_log.csv'))

    def test_stage2_keeps_decom_frozen(self, tmp_path):
        config = tiny_config(max_steps=1)
        train_stage1(tiny_dataset(), config, tmp_path)
        stage1 = (tmp_path / 'decom.dean').read_bytes()
        before = read_checkpoint(tmp_path / 'decom.dean')
        log = train_stage2(tiny_dataset(), config, tmp_path)
        assert (tmp_path / 'decom.dean').read_bytes() == stage1
        assert not (tmp_path / 'decom_joint.dean').exists()
        after = read_checkpoint(tmp_path / 'decom.dean')
        decom, _, _ = build_networks(config.net, config.train.seed)
        for name, _ in decom.named_parameters():
            np.testing.assert_array_equal(before[name], after[name])
        fresh = load_networks(tmp_path, config, names=('decom',))
        trained = load_networks(tmp_path, config)
        for net in ('enhance', 'adjust'):
            changed = [not np.array_equal(a.data, b.data) for (_, a), (_, b) in
                       zip(getattr(fresh, net).named_parameters(),
                           getattr(trained, net).named_parameters())]
            assert any(changed), net
        assert list(log['stage']) == ['decom', 'joint']
        assert {'l_enhance', 'l_colour', 'l_content'} <= set(log.columns)

    def test_stage2_leaves_stage1_resumable(self, tmp_path):
        train_stage1(tiny_dataset(), tiny_config(max_steps=1), tmp_path)
        stage1 = (tmp_path / 'decom.dean').read_bytes()
        config = tiny_config(max_steps=1, freeze_decom='false')
        train_stage2(tiny_dataset(), config, tmp_path)
        assert (tmp_path / 'decom.dean').read_bytes() == stage1
        joint = read_checkpoint(tmp_path / 'decom_joint.dean')
        assert joint['adam.step_count'][0] == 1
        for name, param in load_networks(tmp_path, config).decom.named_parameters():
            np.testing.assert_array_equal(param.data, joint[name])

        train_stage1(tiny_dataset(), tiny_config(max_steps=2), tmp_path / 'full')
        train_stage1(tiny_dataset(), tiny_config(max_steps=2), tmp_path, resume=True)
        assert (tmp_path / 'full' / 'decom.dean').read_bytes() == \
            (tmp_path / 'decom.dean').read_bytes()

    def test_stage2_needs_stage1_checkpoint(self, tmp_path):
        with pytest.raises(CheckpointError, match='stage-1'):
            train_stage2(tiny_dataset(), tiny_config(max_steps=1), tmp_path)

    def test_non_finite_loss_stops_training(self, tmp_path, monkeypatch):
        monkeypatch.setattr(Trainer, 'decom_step',
                            lambda self, low, high: {'total': Tensor(np.array(math.nan))})
        with pytest.raises(NumericalError) as info:
            train_stage1(tiny_dataset(), tiny_config(), tmp_path)
        assert info.value.step == 1
        assert math.isnan(info.value.terms['total'])

    def test_patch_size_must_match_depth(self, tmp_path):
        with pytest.raises(ConfigError, match='patch_size'):
            Trainer(load_config(overrides=TINY_NET + ['train.patch_size=18']), tmp_path)

    @pytest.mark.slow
    def test_stage1_overfits_one_pair(self, tmp_path):
        dataset = tiny_dataset(count=1, size=16)
        config = tiny_config(epochs=500, lr=1e-3, flip='false')
        log = train_stage1(dataset, config, tmp_path)
        assert log['total'].iloc[-1] <= log['total'].iloc[0] / 10
        smoothed = log['total'].rolling(50).mean().dropna()
        assert smoothed.iloc[-1] < smoothed.iloc[0]

    @pytest.mark.slow
    def test_stage2_improves_psnr(self, tmp_path):
        dataset = tiny_dataset(count=1, size=16)
        low, high = dataset[0]
        config = tiny_config(epochs=500, lr=1e-3, flip='false')
        train_stage1(dataset, config, tmp_path)
        train_stage2(dataset, config, tmp_path)
        after = enhance_image(low, tmp_path, config)
        assert psnr(after.final, high) >= psnr(low, high) + 3.0

    @pytest.mark.slow
    def test_overfits_at_full_size(self, tmp_path):
        config = load_config(overrides=FULL_SIZE)
        assert (config.net.depth_levels, config.train.patch_size) == (6, 192)
        dataset = tiny_dataset(count=1, size=192)
        low, high = dataset[0]
        log = train_stage1(dataset, config, tmp_path)
        assert log['total'].iloc[-1] <= log['total'].iloc[0] / 10
        train_stage2(dataset, config, tmp_path)
        after = enhance_image(low, tmp_path, config)
        assert psnr(after.final, high) >= psnr(low, high) + 3.0
        cropped = enhance_image(low[:181, :170], tmp_path, config)
        assert cropped.final.shape == (181, 170, 3)


class TestInference:

    @pytest.fixture
    def bundle(self):
        return NetworkBundle(*build_networks(tiny_config().net, seed=0))

    def test_keeps_dimensions_of_any_size(self, bundle):
        image = natural_image(0, 32)[:21, :27]
        result = enhance_image(image, bundle, tiny_config(), intermediates=True)
        assert result.final.shape == (21, 27, 3)
        assert result.final.min() >= 0.0 and result.final.max() <= 1.0
        assert result.intermediates['illumination'].shape == (21, 27, 1)
        assert set(result.intermediates) == {
            'lf', 'hf', 'reflectance', 'illumination', 'hf_enhanced',
            'reflectance_enhanced', 'illumination_enhanced'}

    def test_deterministic(self, bundle):
        image = natural_image(1, 16)
        first = enhance_image(image, bundle, tiny_config()).final
        assert np.array_equal(first, enhance_image(image, bundle, tiny_config()).final)

    def test_skipping_both_networks_recomposes(self, bundle):
        image = natural_image(2, 16)
        result = enhance_image(image, bundle, tiny_config(), intermediates=True,
                               skip_enhance=True, skip_adjust=True)
        inner = result.intermediates
        recomposed = np.clip(inner['reflectance'] * inner['illumination'] + inner['hf'], 0, 1)
        np.testing.assert_allclose(result.final, recomposed, atol=1e-5)

    def test_edge_padding(self):
        padded, size = pad_to_multiple(np.arange(6.0).reshape(2, 3, 1), 4)
        assert padded.shape == (4, 4, 1) and size == (2, 3)
        assert padded[3, 3, 0] == 5.0

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(CheckpointError, match='decom.dean'):
            load_networks(tmp_path, tiny_config())


class TestEvaluation:

    def test_identical_output_excludes_infinite_psnr(self, tmp_path):
        dataset = PairedDataset.from_arrays([(natural_image(i, 24),) * 2 for i in range(2)])
        result = evaluate(dataset, lambda name, low: low, RunConfig())
        mean = result.table.set_index('image').loc['mean']
        assert math.isinf(mean['psnr'])
        assert mean['ssim'] == pytest.approx(1.0)
        assert any('excludes 2 image(s)' in note for note in result.footnotes)
        csv_path, txt_path = write_report(result, tmp_path)
        assert 'inf' in txt_path.read_text()
        assert list(pd.read_csv(csv_path)['image']) == ['pair_000', 'pair_001', 'mean']

    def test_mean_over_pairs(self):
        dataset = tiny_dataset(count=2)
        result = evaluate(dataset, lambda name, low: np.clip(3 * low, 0, 1), RunConfig())
        rows = result.table.set_index('image')
        assert rows.loc['mean', 'mae'] == pytest.approx(rows.loc[['pair_000', 'pair_001'],
                                                                 'mae'].mean())
        assert not result.partial

    def test_partial_failure(self):
        def enhancer(name, low):
            if name == 'pair_001':
                raise DataError('corrupt output')
            return low

        result = evaluate(tiny_dataset(count=3), enhancer, RunConfig())
        rows = result.table.set_index('image')
        assert result.partial
        assert rows.loc['pair_001', 'status'].startswith('failed: DataError')
        assert rows.loc['mean', 'status'] == 'partial'
        assert math.isnan(rows.loc['pair_001', 'psnr'])
        assert any('1 of 3' in note for note in result.footnotes)

    def test_parallel_matches_sequential(self):
        dataset = tiny_dataset(count=3)
        enhancer = lambda name, low: np.clip(2 * low, 0, 1)  # noqa: E731
        sequential = evaluate(dataset, enhancer, RunConfig())
        parallel = evaluate(dataset, enhancer, load_config(overrides=['iqa.workers=3']))
        pd.testing.assert_frame_equal(sequential.table, parallel.table)

    def test_parallel_float64_networks(self):
        config = tiny_config(precision='float64')
        with default_dtype(np.float64):
            bundle = NetworkBundle(*build_networks(config.net, seed=0))
        dataset = tiny_dataset(count=6, size=16)
        outputs = {}

        def enhancer(name, low):
            outputs.setdefault(name, []).append(enhance_image(low, bundle, config).final)
            return outputs[name][-1]

        sequential = evaluate(dataset, enhancer, config)
        parallel = evaluate(dataset, enhancer, config.with_values([('iqa.workers', '4')]))
        assert get_default_dtype() == np.float32
        assert all(p.dtype == np.float64 for _, p in bundle.adjust.named_parameters())
        pd.testing.assert_frame_equal(sequential.table, parallel.table)
        for first, second in outputs.values():
            np.testing.assert_array_equal(first, second)
