'''
DEANet Low-Light Enhancement Toolkit
Two-stage training.

    stage 1 (decom): DecomNet on the WLS base layers of both exposures
    stage 2 (joint): EnhanceNet + AdjustNet with DecomNet frozen (or trained
                     along when train.freeze_decom is false)

The checkpoint directory holds decom.dean, enhance.dean, adjust.dean (each
with its Adam moments and the training position) and train_log.csv. Stage 2
never rewrites decom.dean; a DecomNet trained along in the joint stage goes to
decom_joint.dean.

Date: 2026-10-19
'''

import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from losses.loss_functions import (DecomSample, EnhanceTargets, decom_loss,
                                   enhance_loss, joint_loss)
from retinex_nets.checkpoint import read_checkpoint, save_network
from retinex_nets.networks import (adjust_forward, build_networks, decom_forward,
                                   enhance_forward)
from tensor_core import functional as F
from tensor_core.optim import Adam
from tensor_core.tensor import backward, default_dtype
from utilities.decorators import time_it
from utilities.exceptions import CheckpointError, ConfigError, NumericalError
from wls_split.wls_cache import WlsCache
from wls_split.wls_filter import frequency_split


logger = logging.getLogger(__name__)

CHECKPOINT_FILES = {'decom': 'decom.dean', 'enhance': 'enhance.dean', 'adjust': 'adjust.dean',
                    'decom_joint': 'decom_joint.dean'}
LOG_FILE = 'train_log.csv'
PROGRESS_KEYS = ('train.epoch', 'train.step_in_epoch', 'train.global_step')


def adam_tensors(net, optimiser):
    '''Adam state of one network as adam.* checkpoint tensors.'''

    state = optimiser.state
    tensors = {'adam.step_count': np.array([state.step_count])}
    names = [name for name, _ in net.named_parameters()]
    for name, m, v in zip(names, state.first_moment, state.second_moment):
        tensors[f'adam.m.{name}'] = m
        tensors[f'adam.v.{name}'] = v
    return tensors


def restore_adam(net, optimiser, tensors, source):
    state = optimiser.state
    state.step_count = int(tensors.get('adam.step_count', np.zeros(1))[0])
    names = [name for name, _ in net.named_parameters()]
    if state.step_count == 0 or f'adam.m.{names[0]}' not in tensors:
        return
    try:
        state.first_moment = [tensors[f'adam.m.{n}'].astype(p.dtype)
                              for n, p in net.named_parameters()]
        state.second_moment = [tensors[f'adam.v.{n}'].astype(p.dtype)
                               for n, p in net.named_parameters()]
    except KeyError as err:
        raise CheckpointError(f'{source}: incomplete Adam state, missing {err}') from err


class Trainer:
    '''Training loop shared by both stages.

    Attributes:
        config (RunConfig): effective configuration
        checkpoint_dir (Path): where checkpoints and train_log.csv go
        decom, enhance, adjust (Module): the three networks
        global_step (int): optimisation steps taken so far in this stage
        records (list of dict): one train_log.csv row per step
    '''

    def __init__(self, config, checkpoint_dir):
        '''See help(Trainer) for accurate signature.'''

        self.config = config
        self.checkpoint_dir = Path(checkpoint_dir)
        train = config.train
        if train.patch_size % config.net.divisor:
            raise ConfigError(f'train.patch_size {train.patch_size} must be divisible by '
                              f'2^(net.depth_levels-1) = {config.net.divisor}')
        self.decom, self.enhance, self.adjust = build_networks(config.net, train.seed)
        self.cache = WlsCache(train.wls_cache) if train.wls_cache else None
        self.global_step = 0
        self.start_epoch = 0
        self.start_step = 0
        self.records = []
        self.extractor = None

    def split(self, batch):
        '''WLS split of every image of an N x H x W x 3 batch.

        Returns:
            tuple: (low-frequency batch, high-frequency batch)
        '''

        splits = [self.cache.split(image, self.config.wls) if self.cache
                  else frequency_split(image, self.config.wls) for image in batch]
        return (np.stack([s.low_freq for s in splits]),
                np.stack([s.high_freq for s in splits]))

    def decom_inputs(self, image, low_freq):
        return low_freq if self.config.net.decom_input == 'low_frequency' else image

    def decom_terms(self, low, high, low_split, high_split):
        d_low = decom_forward(self.decom, self.decom_inputs(low, low_split[0]))
        d_high = decom_forward(self.decom, self.decom_inputs(high, high_split[0]))
        full = self.config.loss.decom_target == 'full'
        return decom_loss(
            DecomSample(low if full else low_split[0], d_low.reflectance, d_low.illumination),
            DecomSample(high if full else high_split[0], d_high.reflectance,
                        d_high.illumination))

    def decom_step(self, low, high):
        return vars(self.decom_terms(low, high, self.split(low), self.split(high)))

    def joint_step(self, low, high):
        low_split, high_split = self.split(low), self.split(high)
        d_low = decom_forward(self.decom, self.decom_inputs(low, low_split[0]))
        d_high = decom_forward(self.decom, self.decom_inputs(high, high_split[0])).detach()
        enh = enhance_forward(self.enhance, low_split[1], d_low)
        final = adjust_forward(self.adjust, enh)
        enhance_terms = enhance_loss(enh, EnhanceTargets(high_split[1], d_high.reflectance,
                                                         d_high.illumination))
        terms = vars(joint_loss(final, high, enhance_terms, self.extractor))
        if not self.config.train.freeze_decom:
            decom_total = self.decom_terms(low, high, low_split, high_split).total
            terms['l_decom'] = decom_total
            terms['total'] = F.add(terms.pop('total'), decom_total)
        return terms

    def sample_batch(self, dataset, order, epoch, step):
        '''Crops of one step; randomness depends only on (seed, epoch, step).'''

        batch_size = self.config.train.batch_size
        rng = np.random.default_rng([self.config.train.seed, epoch, step])
        crops = [dataset.sample(int(i), rng, self.config.train.flip)
                 for i in order[step * batch_size:(step + 1) * batch_size]]
        return np.stack([c[0] for c in crops]), np.stack([c[1] for c in crops])

    def resume_from(self, path, stage):
        tensors = read_checkpoint(path)
        if all(key in tensors for key in PROGRESS_KEYS):
            self.start_epoch, self.start_step, self.global_step = (
                int(tensors[key][0]) for key in PROGRESS_KEYS)
        log_path = self.checkpoint_dir / LOG_FILE
        if log_path.exists():
            log = pd.read_csv(log_path)
            keep = (log['stage'] != stage) | (log['step'] <= self.global_step)
            self.records = log[keep].to_dict('records')
        logger.info('Resuming from %s at epoch %d, step %d', path,
                    self.start_epoch, self.global_step)
        return tensors

    def save(self, nets, optimisers, epoch, step_in_epoch):
        progress = dict(zip(PROGRESS_KEYS, (np.array([epoch]), np.array([step_in_epoch]),
                                            np.array([self.global_step]))))
        for name, net in nets.items():
            extra = dict(progress)
            if name in optimisers:
                extra.update(adam_tensors(net, optimisers[name]))
            save_network(net, self.checkpoint_dir / CHECKPOINT_FILES[name], extra)
        self.write_log()

    def write_log(self):
        log = pd.DataFrame(self.records)
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        log.to_csv(self.checkpoint_dir / LOG_FILE, index=False)
        return log

    def run(self, dataset, stage, step_fn, nets, optimisers):
        '''Optimise over the dataset for train.epochs epochs.

        Arguments:
            dataset (PairedDataset)
            stage (str): label written to the log
            step_fn (callable): (low batch, high batch) -> dict of loss Tensors
                including 'total'
            nets (dict): checkpoint name -> network saved by this stage
            optimisers (dict): checkpoint name -> Adam of the trained networks

        Returns:
            pd.DataFrame: the training log
        '''

        train = self.config.train
        dataset.patch_size = train.patch_size
        steps_per_epoch = math.ceil(len(dataset) / train.batch_size)
        for epoch in range(self.start_epoch, train.epochs):
            lr = train.lr_at(epoch)
            for optimiser in optimisers.values():
                optimiser.state.lr = lr
            order = dataset.epoch_order(epoch)
            first = self.start_step if epoch == self.start_epoch else 0
            for step in range(first, steps_per_epoch):
                low, high = self.sample_batch(dataset, order, epoch, step)
                terms = step_fn(low, high)
                values = {name: float(value.item()) for name, value in terms.items()}
                if not all(math.isfinite(v) for v in values.values()):
                    self.write_log()
                    detail = ', '.join(f'{k}={v:.6g}' for k, v in values.items())
                    raise NumericalError(f'Non-finite {stage} loss at step {self.global_step + 1} '
                                         f'(epoch {epoch}): {detail}',
                                         step=self.global_step + 1, terms=values)
                for optimiser in optimisers.values():
                    optimiser.zero_grad()
                backward(terms['total'])
                for optimiser in optimisers.values():
                    optimiser.step()
                self.global_step += 1
                self.records.append({'stage': stage, 'epoch': epoch,
                                     'step': self.global_step, 'lr': lr, **values})
                if train.log_every and self.global_step % train.log_every == 0:
                    logger.info('%s step %d: %s', stage, self.global_step,
                                ' '.join(f'{k}={v:.5f}' for k, v in values.items()))
                if train.max_steps and self.global_step >= train.max_steps:
                    self.save(nets, optimisers, epoch, step + 1)
                    logger.info('Reached train.max_steps = %d', train.max_steps)
                    return self.write_log()
            self.save(nets, optimisers, epoch + 1, 0)
            logger.info('%s epoch %d done, last total %.5f', stage, epoch,
                        self.records[-1]['total'] if self.records else float('nan'))
        return self.write_log()

    def train_decom(self, dataset, resume=False):
        train = self.config.train
        optimiser = Adam(self.decom.parameters(), train.lr, train.beta1, train.beta2,
                         train.epsilon)
        path = self.checkpoint_dir / CHECKPOINT_FILES['decom']
        if resume and path.exists():
            tensors = self.resume_from(path, 'decom')
            self.decom.load_state_dict(tensors, source=str(path))
            restore_adam(self.decom, optimiser, tensors, path)
        return self.run(dataset, 'decom', self.decom_step, {'decom': self.decom},
                        {'decom': optimiser})

    def train_joint(self, dataset, stage1_ckpt=None, resume=False):
        train = self.config.train
        stage1_ckpt = Path(stage1_ckpt or self.checkpoint_dir / CHECKPOINT_FILES['decom'])
        if not stage1_ckpt.exists():
            raise CheckpointError(f'The joint stage needs a stage-1 checkpoint; '
                                  f'{stage1_ckpt} does not exist')
        self.decom.load_state_dict(read_checkpoint(stage1_ckpt), source=str(stage1_ckpt))
        self.decom.set_trainable(not train.freeze_decom)
        self.extractor = self.config.loss.build_extractor()

        nets = {'enhance': self.enhance, 'adjust': self.adjust}
        optimisers = {name: Adam(net.parameters(), train.lr, train.beta1, train.beta2,
                                 train.epsilon) for name, net in nets.items()}
        joint_decom = self.checkpoint_dir / CHECKPOINT_FILES['decom_joint']
        if not train.freeze_decom:
            nets['decom_joint'] = self.decom
            optimisers['decom_joint'] = Adam(self.decom.parameters(), train.lr, train.beta1,
                                             train.beta2, train.epsilon)
        elif joint_decom.exists() and not resume:
            logger.warning('Removing %s left by a run with train.freeze_decom = false',
                           joint_decom)
            joint_decom.unlink()

        progress_path = self.checkpoint_dir / CHECKPOINT_FILES['enhance']
        if resume and progress_path.exists():
            self.resume_from(progress_path, 'joint')
            for name, optimiser in optimisers.items():
                path = self.checkpoint_dir / CHECKPOINT_FILES[name]
                tensors = read_checkpoint(path)
                nets[name].load_state_dict(tensors, source=str(path))
                restore_adam(nets[name], optimiser, tensors, path)
        else:
            log_path = self.checkpoint_dir / LOG_FILE
            if log_path.exists():
                log = pd.read_csv(log_path)
                self.records = log[log['stage'] == 'decom'].to_dict('records')
        return self.run(dataset, 'joint', self.joint_step, nets, optimisers)


@time_it
def train_stage1(dataset, config, checkpoint_dir, resume=False):
    '''Train DecomNet; returns the training log as a DataFrame.

    Arguments:
        dataset (PairedDataset)
        config (RunConfig)
        checkpoint_dir (str or Path)
        resume (bool): continue from the checkpoint in checkpoint_dir

    Returns:
        pd.DataFrame
    '''

    with default_dtype(config.train.precision):
        return Trainer(config, checkpoint_dir).train_decom(dataset, resume)


@time_it
def train_stage2(dataset, config, checkpoint_dir, stage1_ckpt=None, resume=False):
    '''Train EnhanceNet and AdjustNet on top of a stage-1 DecomNet.

    Arguments:
        dataset (PairedDataset)
        config (RunConfig)
        checkpoint_dir (str or Path)
        stage1_ckpt (str or Path or None): decom.dean to start from;
            defaults to the one in checkpoint_dir
        resume (bool): continue from the checkpoints in checkpoint_dir

    Returns:
        pd.DataFrame
    '''

    with default_dtype(config.train.precision):
        return Trainer(config, checkpoint_dir).train_joint(dataset, stage1_ckpt, resume)
