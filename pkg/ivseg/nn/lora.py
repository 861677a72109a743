"""
Low-rank adapters for linear projections.

`attach_lora` walks a module tree, wraps every `Linear` whose attribute name
is among the targets with a `LoraAdapter`, and freezes the base weights of the
walked tree so that only adapters (and parameters outside the tree) train.
"""

import numpy as np

import ivseg.autograd.tensor as tensor
import ivseg.nn.module as module
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)

DEFAULT_TARGETS = ("q_proj", "v_proj")


class LoraAdapter(module.Module):

    def __init__(self, in_dim, out_dim, rank, rng, scaling=1.0):
        if rank < 1 or rank >= min(in_dim, out_dim):
            raise ValueError(f"LoRA rank {rank} must lie in [1, {min(in_dim, out_dim)})")

        self.rank = rank
        self.scaling = float(scaling)
        self.down = module.Parameter(rng.normal(0.0, 1.0 / np.sqrt(in_dim), (in_dim, rank)))
        self.up = module.Parameter(np.zeros((rank, out_dim)))

    def forward(self, base_out, x):
        return lora_apply(base_out, x, self)


def lora_apply(base_out, x, adapter: LoraAdapter):
    """
    base_out + scaling · (x·down)·up
    """
    delta = tensor.matmul(tensor.matmul(x, adapter.down), adapter.up)

    return base_out + delta * adapter.scaling


def attach_lora(root: module.Module, rank, rng, scaling=1.0, targets=DEFAULT_TARGETS):
    """
    Returns the list of attached adapter names
    """
    import ivseg.nn.layers

    root.freeze()
    attached = []

    for name, sub in list(root.named_modules()):
        if not isinstance(sub, ivseg.nn.layers.Linear):
            continue

        if name.split(".")[-1] not in targets:
            continue

        sub.lora = LoraAdapter(sub.in_dim, sub.out_dim, rank, rng, scaling)
        attached.append(name)

    if not attached:
        log.warning(attach_lora, "no projection matched", targets)

    log.debug(attach_lora, "attached", len(attached), "adapters of rank", rank)

    return attached
