'''
DEANet Low-Light Enhancement Toolkit

Train and evaluate

Ingest a paired low/normal-light dataset; train the decomposition network
(stage 1); train the enhancement and adjustment networks on top of it
(stage 2); evaluate the result on a held-out pair directory and write the
report tables.

Usage: python 01_train_and_evaluate.py [config file]

Date: 2026-10-19
'''

import sys

from pipeline.config import load_config
from pipeline.dataset import ingest_root
from pipeline.evaluation import evaluate, write_report
from pipeline.training import train_stage1, train_stage2
from utilities.logging_setup import configure_logging


TRAIN_ROOT = 'data/train'
EVAL_ROOT = 'data/eval'
CHECKPOINT_DIR = 'checkpoints'
REPORT_DIR = 'reports'


if __name__ == '__main__':

    configure_logging()
    config = load_config(sys.argv[1] if len(sys.argv) > 1 else None)

    # Load training pairs
    dataset = ingest_root(TRAIN_ROOT, config.train.patch_size, config.train.seed)

    # Stage 1: decomposition
    train_stage1(dataset, config, CHECKPOINT_DIR)

    # Stage 2: enhancement + adjustment
    train_stage2(dataset, config, CHECKPOINT_DIR)

    # Evaluate on held-out pairs
    eval_set = ingest_root(EVAL_ROOT, config.train.patch_size, config.train.seed)
    result = evaluate(eval_set, CHECKPOINT_DIR, config)
    write_report(result, REPORT_DIR)
    print(result.to_text())
