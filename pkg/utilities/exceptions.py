'''
DEANet Low-Light Enhancement Toolkit
Exception hierarchy shared by every package. Library code raises these;
the command line maps them to exit codes.

'''


class DeaNetError(Exception):
    '''Base class for all toolkit errors.'''


class ShapeError(DeaNetError, ValueError):
    '''Array or tensor dimensions do not satisfy an operation's contract.'''


class ConfigError(DeaNetError):
    '''Unknown or malformed configuration key or value.'''


class UsageError(ConfigError):
    '''Invalid command-line arguments.'''


class DataError(DeaNetError):
    '''Unreadable, unpaired or inconsistent input data.'''


class CheckpointError(DataError):
    '''Missing, corrupt or mismatched checkpoint file.'''


class SolverDivergenceError(DeaNetError, ArithmeticError):
    '''Iterative solver did not reach its tolerance within the iteration cap.

    Attributes:
        residual (float): relative residual at the last iteration
        iterations (int): number of iterations performed
    '''

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NumericalError(DeaNetError, ArithmeticError):
    '''Non-finite value encountered during training.

    Attributes:
        step (int): global training step at which the failure occurred
        terms (dict): loss term name -> value at that step
    '''

    def __init__(self, message, step=None, terms=None):
        super().__init__(message)
        self.step = step
        self.terms = dict(terms or {})
