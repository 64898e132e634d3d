'''
DEANet Low-Light Enhancement Toolkit
Adam optimizer with bias correction.

'''

from dataclasses import dataclass, field

import numpy as np

from utilities.exceptions import ShapeError


@dataclass
class AdamState:
    '''Optimizer state. Moment buffers are allocated on the first step and
    follow the order of the parameter list passed to adam_step.'''

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(params, state):
    '''Apply one Adam update in place. Gradients are left untouched.

    Arguments:
        params (list of Tensor): parameters with populated .grad
        state (AdamState): updated in place

    Returns:
        None
    '''

    params = list(params)
    for index, param in enumerate(params):
        if param.grad is None:
            raise ValueError(f'adam_step: parameter {index} (shape {param.shape}) '
                             'has no gradient; run backward() first')

    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(state.first_moment) != len(params):
        raise ShapeError(f'adam_step: state holds {len(state.first_moment)} '
                         f'moment buffers for {len(params)} parameters')
    for index, (param, moment) in enumerate(zip(params, state.first_moment)):
        if moment.shape != param.shape:
            raise ShapeError(f'adam_step: moment buffer {index} has shape '
                             f'{moment.shape}, parameter has {param.shape}')

    state.step_count += 1
    correction1 = 1.0 - state.beta1 ** state.step_count
    correction2 = 1.0 - state.beta2 ** state.step_count
    for param, m, v in zip(params, state.first_moment, state.second_moment):
        grad = param.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        param.data -= update.astype(param.dtype, copy=False)


def zero_grad(params):
    for param in params:
        param.grad = None


class Adam:
    '''Convenience wrapper binding a parameter list to an AdamState.

    Attributes:
        params (list of Tensor): trainable parameters
        state (AdamState)
    '''

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        '''See help(Adam) for accurate signature.'''

        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)

    def step(self):
        adam_step(self.params, self.state)

    def zero_grad(self):
        zero_grad(self.params)
