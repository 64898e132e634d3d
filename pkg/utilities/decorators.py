'''
DEANet Low-Light Enhancement Toolkit
Decorators for timing execution, logging record counts
'''

import logging
from functools import wraps
from time import perf_counter

import pandas as pd


logger = logging.getLogger(__name__)


def time_it(func):
    '''Function decorator. Times the execution, and logs the number of
    records returned (if function returns a dataframe)'''

    @wraps(func)
    def wrapper(*args, **kwargs):
        start = perf_counter()
        result = func(*args, **kwargs)
        if isinstance(result, pd.DataFrame):
            logger.info('\tRecords: %s', f'{len(result):,}')
        logger.info('\t%s run time: %.4f seconds',
                    func.__name__, perf_counter() - start)
        return result
    return wrapper
