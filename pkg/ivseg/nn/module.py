"""
Parameter containers.

A `Module` discovers its parameters by walking its public attributes:
`Parameter` instances, nested modules, and lists or tuples of modules.
Attributes starting with an underscore hold shared components owned
elsewhere and are not walked.
"""

import numpy as np

import ivseg.autograd.tensor as tensor


class Parameter(tensor.Tensor):

    def __init__(self, data, trainable=True, name=None):
        tensor.Tensor.__init__(self, data, grad_enabled=trainable, name=name)

    @property
    def trainable(self):
        return self.grad_enabled

    def freeze(self):
        self.grad_enabled = False
        self.grad = None


def xavier_normal(rng, fan_in, fan_out, shape=None):
    std = np.sqrt(2.0 / (fan_in + fan_out))

    return rng.normal(0.0, std, shape or (fan_in, fan_out))


class Module:

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError()

    def _iter_members(self, prefix):
        for attribute, value in vars(self).items():
            if attribute.startswith("_"):
                continue

            if isinstance(value, Parameter):
                yield prefix + attribute, value
            elif isinstance(value, Module):
                yield from value._iter_members(prefix + attribute + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._iter_members(f"{prefix}{attribute}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{prefix}{attribute}.{i}", item

    def named_parameters(self, prefix=""):
        """
        Deterministic (attribute order) sequence of `(name, Parameter)`; a
        parameter reachable through several paths is reported once
        """
        seen = set()

        for name, parameter in self._iter_members(prefix):
            if id(parameter) in seen:
                continue

            seen.add(id(parameter))

            yield name, parameter

    def named_modules(self, prefix=""):
        yield prefix.rstrip("."), self

        for attribute, value in vars(self).items():
            if attribute.startswith("_"):
                continue

            if isinstance(value, Module):
                yield from value.named_modules(prefix + attribute + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{prefix}{attribute}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self):
        return {name: p for name, p in self.named_parameters() if p.trainable}

    def freeze(self):
        for _, p in self.named_parameters():
            p.freeze()

        return self

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))

        if missing or unexpected:
            raise KeyError(f"State mismatch, missing: {missing}, unexpected: {unexpected}")

        for name, value in state.items():
            if tuple(value.shape) != own[name].shape:
                raise tensor.ShapeError(f"Parameter `{name}` has a different shape", own[name].shape, value.shape)

            own[name].data = np.array(value, dtype=own[name].data.dtype)
