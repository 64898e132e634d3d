'''
DEANet Low-Light Enhancement Toolkit
Logging configuration: logs go to stderr, results go to stdout.
'''

import logging
import sys


LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def configure_logging(verbose=False, stream=None):
    '''Attach a single stderr handler to the root logger.

    Arguments:
        verbose (bool): if True, log at DEBUG level; otherwise INFO
        stream (file-like): destination, stderr by default

    Returns:
        logging.Logger: the root logger
    '''

    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, '_deanet', False):
            root.removeHandler(handler)

    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._deanet = True
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    return root
