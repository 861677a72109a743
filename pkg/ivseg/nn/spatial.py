"""
Operations on `[H, W, C]` feature grids.
"""

import numpy as np

import ivseg.autograd.tensor as tensor
import ivseg.nn.module as module


def _interpolation_matrix(n):
    """
    `[2n, n]` bilinear ×2 resampling with half-pixel centers and edge clamping;
    rows sum to 1
    """
    out = np.zeros((2 * n, n))

    for i in range(2 * n):
        source = min(max((i + 0.5) / 2.0 - 0.5, 0.0), n - 1.0)
        low = int(np.floor(source))
        high = min(low + 1, n - 1)
        fraction = source - low
        out[i, low] += 1.0 - fraction
        out[i, high] += fraction

    return out


def upsample2x(x):
    x = tensor.as_tensor(x)

    if x.ndim != 3:
        raise tensor.ShapeError("`upsample2x` expects a [H, W, C] grid", x.shape)

    rows = _interpolation_matrix(x.shape[0]).astype(x.data.dtype)
    columns = _interpolation_matrix(x.shape[1]).astype(x.data.dtype)

    def vjp(g):
        return (np.einsum("ip,ijc,jq->pqc", rows, g, columns),)

    return tensor.apply_op("upsample2x", np.einsum("ip,pqc,jq->ijc", rows, x.data, columns), (x,), vjp)


def _im2col(padded, height, width):
    return np.concatenate([padded[dy:dy + height, dx:dx + width, :]
        for dy in range(3) for dx in range(3)], axis=-1)


def conv3x3(x, weight, bias=None):
    """
    Zero-padded "same" convolution, `x [H, W, Cin]`, `weight [3, 3, Cin, Cout]`
    """
    x, weight = tensor.as_tensor(x), tensor.as_tensor(weight)

    if x.ndim != 3 or weight.shape[:3] != (3, 3, x.shape[2]):
        raise tensor.ShapeError("`conv3x3` extents disagree", x.shape, weight.shape)

    height, width, channels = x.shape
    cout = weight.shape[3]
    columns = _im2col(np.pad(x.data, ((1, 1), (1, 1), (0, 0))), height, width)
    kernel = weight.data.reshape(9 * channels, cout)
    out = columns @ kernel
    inputs = (x, weight)

    if bias is not None:
        out = out + bias.data
        inputs = (x, weight, bias)

    def vjp(g):
        grad_columns = g @ kernel.T
        grad_padded = np.zeros((height + 2, width + 2, channels), dtype=g.dtype)

        for k in range(9):
            dy, dx = divmod(k, 3)
            grad_padded[dy:dy + height, dx:dx + width, :] += grad_columns[..., k * channels:(k + 1) * channels]

        grad_kernel = columns.reshape(-1, 9 * channels).T @ g.reshape(-1, cout)
        grads = (grad_padded[1:-1, 1:-1, :], grad_kernel.reshape(weight.shape))

        if bias is not None:
            grads += (g.sum(axis=(0, 1)),)

        return grads

    return tensor.apply_op("conv3x3", out, inputs, vjp)


def avg_pool(x, factor):
    x = tensor.as_tensor(x)
    height, width, channels = x.shape

    if height % factor or width % factor:
        raise tensor.ShapeError(f"Grid is not divisible by pooling factor {factor}", x.shape)

    blocks = x.reshape(height // factor, factor, width // factor, factor, channels)

    return tensor.mean(blocks, axis=(1, 3))


class Conv3x3(module.Module):

    def __init__(self, in_channels, out_channels, rng, init="xavier"):
        if init == "xavier":
            weight = module.xavier_normal(rng, 9 * in_channels, 9 * out_channels, (3, 3, in_channels, out_channels))
        elif init == "identity":
            if in_channels != out_channels:
                raise ValueError("Identity convolution needs equal channel counts")

            weight = np.zeros((3, 3, in_channels, out_channels))
            weight[1, 1] = np.eye(in_channels)
        else:
            raise ValueError(f"Unknown initialization `{init}`")

        self.weight = module.Parameter(weight)
        self.bias = module.Parameter(np.zeros(out_channels))

    def forward(self, x):
        return conv3x3(x, self.weight, self.bias)
