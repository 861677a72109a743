"""
AdamW with bias correction and decoupled weight decay.
"""

import dataclasses

import numpy as np

import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)


@dataclasses.dataclass
class AdamWHyper:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"Betas must lie in [0, 1): {self}")

        if self.lr < 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ValueError(f"Invalid AdamW hyper-parameters: {self}")


@dataclasses.dataclass
class Moments:
    first: dict = dataclasses.field(default_factory=dict)  # name -> ndarray
    second: dict = dataclasses.field(default_factory=dict)
    step: int = 0


def adamw_step(params: dict, grads: dict, moments: Moments, hyper: AdamWHyper) -> bool:
    """
    Updates `params` (name -> Parameter) in place from `grads` (name ->
    ndarray). Returns False, leaving everything untouched, when some gradient
    is non-finite.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            log.warning(adamw_step, "non-finite gradient of", name, "step", moments.step + 1, "skipped")

            return False

    moments.step += 1
    t = moments.step
    correction1 = 1.0 - hyper.beta1 ** t
    correction2 = 1.0 - hyper.beta2 ** t

    for name, g in grads.items():
        p = params[name]
        m = moments.first.get(name, np.zeros_like(p.data))
        v = moments.second.get(name, np.zeros_like(p.data))
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g
        moments.first[name] = m
        moments.second[name] = v
        update = (m / correction1) / (np.sqrt(v / correction2) + hyper.eps)
        p.data = (p.data - hyper.lr * hyper.weight_decay * p.data - hyper.lr * update).astype(p.data.dtype)

    return True


class AdamW:

    def __init__(self, params: dict, hyper: AdamWHyper = None):
        self.params = params
        self.hyper = hyper or AdamWHyper()
        self.moments = Moments()

    def step(self, lr=None):
        """
        Applies the accumulated `.grad` of every parameter that has one
        """
        if lr is not None:
            self.hyper.lr = lr

        grads = {name: p.grad for name, p in self.params.items() if p.grad is not None}

        return adamw_step(self.params, grads, self.moments, self.hyper)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
