"""Network building blocks: convolution layers, window attention, spectral mixers.

Every block is a plain object holding ``ParamLeaf`` weights and exposing
``__call__`` (or ``transform``) that records onto the active tape, plus a
``leaves()`` iterator used by the model and optimizer.  Construction order is
fixed, so a given (config, seed) pair always produces the same initial weights.

Residual convention: blocks whose equations include a residual apply it
internally (``SpectralMixer``, ``MobileNetV3Unit``); attention-style blocks
expose ``transform`` and the caller writes ``x + blk.transform(x)``.  Zeroing
every sub-path weight therefore reduces each residual block to the identity.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .errors import ConfigError
from .tensor import ParamLeaf, Tensor, constant, default_dtype


# Init gain for the last convolution of each residual branch. Full Kaiming
# there makes every residual add double the activation variance, which
# compounds to huge outputs over the cell stack and wastes the early training
# budget shrinking scales instead of learning structure.
BRANCH_GAIN = 0.1


def trunc_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float = 0.02) -> np.ndarray:
    """Normal(0, std) with resampling of draws outside +-2 std."""
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2.0 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2.0 * std
    return x


def kaiming_normal(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Fan-in Kaiming init for conv / linear weights (fan = prod of trailing dims)."""
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


class Conv2d:
    """Grouped 2-d convolution layer wrapping :func:`ops.conv2d`.

    ``gain`` scales the Kaiming std; residual blocks pass a small gain for
    their branch-final convolution so stacking residuals does not double the
    activation variance per block at initialization.
    """

    def __init__(
        self,
        name: str,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        bias: bool = True,
        zero_init: bool = False,
        gain: float = 1.0,
    ) -> None:
        if in_channels % groups or out_channels % groups:
            raise ConfigError(
                f"{name}: channels ({in_channels}->{out_channels}) not divisible by groups={groups}"
            )
        shape = (out_channels, in_channels // groups, kernel, kernel)
        w = np.zeros(shape) if zero_init else gain * kaiming_normal(rng, shape)
        self.weight = ParamLeaf(name + ".weight", w)
        self.bias = ParamLeaf(name + ".bias", np.zeros(out_channels)) if bias else None
        self.stride = stride
        self.padding = padding
        self.groups = groups

    def __call__(self, x: Tensor) -> Tensor:
        b = None if self.bias is None else self.bias.value
        return ops.conv2d(x, self.weight.value, b, self.stride, self.padding, self.groups)

    def leaves(self) -> Iterator[ParamLeaf]:
        yield self.weight
        if self.bias is not None:
            yield self.bias


class ConvTranspose2d:
    """Transposed convolution layer; used as the stride-2 up-sampler."""

    def __init__(
        self,
        name: str,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        padding: int = 0,
    ) -> None:
        shape = (in_channels, out_channels, kernel, kernel)
        self.weight = ParamLeaf(name + ".weight", kaiming_normal(rng, shape))
        self.bias = ParamLeaf(name + ".bias", np.zeros(out_channels))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight.value, self.bias.value, self.stride, self.padding)

    def leaves(self) -> Iterator[ParamLeaf]:
        yield self.weight
        yield self.bias


class LayerNormChannel:
    """LayerNorm over the channel axis of NCHW (or the last axis of NTC via ops)."""

    def __init__(self, name: str, channels: int, eps: float = 1e-5) -> None:
        self.gamma = ParamLeaf(name + ".gamma", np.ones(channels))
        self.beta = ParamLeaf(name + ".beta", np.zeros(channels))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma.value, self.beta.value, self.eps)

    def leaves(self) -> Iterator[ParamLeaf]:
        yield self.gamma
        yield self.beta


def relative_position_index(window: int) -> np.ndarray:
    """(window^2, window^2) int index into a (2*window-1)^2 bias table.

    Entry [i, j] encodes the (dy, dx) displacement between window positions i
    and j, shifted to be non-negative and flattened row-major.
    """
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :]
    return (rel[0] + window - 1) * (2 * window - 1) + (rel[1] + window - 1)


class WindowTransformer:
    """Multi-head self-attention over non-overlapping M x M windows.

    LN -> window partition -> softmax(Q K^T / sqrt(d) + B) V per head ->
    concat -> Z0 -> LN -> Z1 -> GELU -> Z2 -> window merge.  B is a learned
    relative-position bias table, zero-initialized.  All projection matrices
    are bias-free.  ``transform`` returns the branch output only; callers add
    the residual.
    """

    def __init__(
        self,
        name: str,
        rng: np.random.Generator,
        channels: int,
        heads: int,
        window: int,
        expansion: int = 4,
    ) -> None:
        if channels % heads:
            raise ConfigError(f"{name}: channels={channels} not divisible by heads={heads}")
        self.channels = channels
        self.heads = heads
        self.window = window
        self.head_dim = channels // heads
        self.norm_in = LayerNormChannel(name + ".norm_in", channels)
        self.wq = ParamLeaf(name + ".wq", trunc_normal(rng, (channels, channels)))
        self.wk = ParamLeaf(name + ".wk", trunc_normal(rng, (channels, channels)))
        self.wv = ParamLeaf(name + ".wv", trunc_normal(rng, (channels, channels)))
        self.bias_table = ParamLeaf(
            name + ".bias_table", np.zeros((heads, (2 * window - 1) ** 2))
        )
        self.proj = ParamLeaf(name + ".proj", trunc_normal(rng, (channels, channels)))
        self.norm_mlp = LayerNormChannel(name + ".norm_mlp", channels)
        hidden = expansion * channels
        self.z1 = ParamLeaf(name + ".z1", trunc_normal(rng, (channels, hidden)))
        self.z2 = ParamLeaf(name + ".z2", trunc_normal(rng, (hidden, channels)))
        self._rel_index = relative_position_index(window).ravel()

    def transform(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        m = self.window
        if h % m or w % m:
            raise ConfigError(f"spatial extent {h}x{w} not divisible by window={m}")
        nh, nw = h // m, w // m
        nwin = n * nh * nw
        t = m * m

        normed = self.norm_in(x)
        parts = ops.reshape(normed, (n, c, nh, m, nw, m))
        parts = ops.permute(parts, (0, 2, 4, 3, 5, 1))
        tokens = ops.reshape(parts, (nwin, t, c))

        def heads_of(mat: ParamLeaf) -> Tensor:
            p = ops.matmul(tokens, mat.value)
            p = ops.reshape(p, (nwin, t, self.heads, self.head_dim))
            p = ops.permute(p, (0, 2, 1, 3))
            return ops.reshape(p, (nwin * self.heads, t, self.head_dim))

        q = heads_of(self.wq)
        k = heads_of(self.wk)
        v = heads_of(self.wv)

        scores = ops.scale(ops.matmul(q, ops.permute(k, (0, 2, 1))), 1.0 / math.sqrt(self.head_dim))
        scores = ops.reshape(scores, (nwin, self.heads, t, t))
        bias = ops.take_last(self.bias_table.value, self._rel_index)
        bias = ops.reshape(bias, (1, self.heads, t, t))
        attn = ops.softmax(ops.add(scores, bias), axis=-1)
        attn = ops.reshape(attn, (nwin * self.heads, t, t))

        ctx = ops.matmul(attn, v)
        ctx = ops.reshape(ctx, (nwin, self.heads, t, self.head_dim))
        ctx = ops.permute(ctx, (0, 2, 1, 3))
        ctx = ops.reshape(ctx, (nwin, t, c))
        mixed = ops.matmul(ctx, self.proj.value)

        tl = ops.permute(mixed, (0, 2, 1))
        tl = self.norm_mlp(tl)
        tl = ops.permute(tl, (0, 2, 1))
        out_tok = ops.matmul(ops.gelu(ops.matmul(tl, self.z1.value)), self.z2.value)

        merged = ops.reshape(out_tok, (n, nh, nw, m, m, c))
        merged = ops.permute(merged, (0, 5, 1, 3, 2, 4))
        return ops.reshape(merged, (n, c, h, w))

    def attention_rows(self, x: Tensor) -> Tensor:
        """Post-softmax attention matrix, (windows*heads, M^2, M^2); test hook."""
        n, c, h, w = x.shape
        m = self.window
        nh, nw = h // m, w // m
        nwin = n * nh * nw
        t = m * m
        normed = self.norm_in(x)
        parts = ops.reshape(normed, (n, c, nh, m, nw, m))
        tokens = ops.reshape(ops.permute(parts, (0, 2, 4, 3, 5, 1)), (nwin, t, c))

        def heads_of(mat: ParamLeaf) -> Tensor:
            p = ops.matmul(tokens, mat.value)
            p = ops.reshape(p, (nwin, t, self.heads, self.head_dim))
            return ops.reshape(ops.permute(p, (0, 2, 1, 3)), (nwin * self.heads, t, self.head_dim))

        q, k = heads_of(self.wq), heads_of(self.wk)
        scores = ops.scale(ops.matmul(q, ops.permute(k, (0, 2, 1))), 1.0 / math.sqrt(self.head_dim))
        scores = ops.reshape(scores, (nwin, self.heads, t, t))
        bias = ops.reshape(ops.take_last(self.bias_table.value, self._rel_index), (1, self.heads, t, t))
        attn = ops.softmax(ops.add(scores, bias), axis=-1)
        return ops.reshape(attn, (nwin * self.heads, t, t))

    def leaves(self) -> Iterator[ParamLeaf]:
        yield from self.norm_in.leaves()
        yield self.wq
        yield self.wk
        yield self.wv
        yield self.bias_table
        yield self.proj
        yield from self.norm_mlp.leaves()
        yield self.z1
        yield self.z2


class ConvTokenMixer:
    """Convolutional stand-in for window attention: LN -> 3x3 -> GELU -> 1x1.

    Same ``transform`` interface as :class:`WindowTransformer` so it can drop
    into the same residual slots.
    """

    def __init__(self, name: str, rng: np.random.Generator, channels: int) -> None:
        self.norm = LayerNormChannel(name + ".norm", channels)
        self.conv = Conv2d(name + ".conv", rng, channels, channels, 3, padding=1)
        self.proj = Conv2d(name + ".proj", rng, channels, channels, 1, gain=BRANCH_GAIN)

    def transform(self, x: Tensor) -> Tensor:
        return self.proj(ops.gelu(self.conv(self.norm(x))))

    def leaves(self) -> Iterator[ParamLeaf]:
        yield from self.norm.leaves()
        yield from self.conv.leaves()
        yield from self.proj.leaves()


class MobileNetV3Unit:
    """Inverted-residual unit with squeeze-excitation and GELU/LayerNorm.

    pointwise -> depthwise 5x5 -> SE gate -> pointwise, three LayerNorms, and
    an internal residual: returns ``x + pw_out(gated)``.
    """

    def __init__(self, name: str, rng: np.random.Generator, channels: int, squeeze: int = 16) -> None:
        if channels % squeeze:
            raise ConfigError(f"{name}: channels={channels} not divisible by squeeze={squeeze}")
        self.norm0 = LayerNormChannel(name + ".norm0", channels)
        self.pw_in = Conv2d(name + ".pw_in", rng, channels, channels, 1)
        self.norm1 = LayerNormChannel(name + ".norm1", channels)
        self.dw = Conv2d(name + ".dw", rng, channels, channels, 5, padding=2, groups=channels)
        self.norm2 = LayerNormChannel(name + ".norm2", channels)
        self.se_sq = Conv2d(name + ".se_sq", rng, channels, channels // squeeze, 1)
        self.se_ex = Conv2d(name + ".se_ex", rng, channels // squeeze, channels, 1)
        self.pw_out = Conv2d(name + ".pw_out", rng, channels, channels, 1, gain=BRANCH_GAIN)

    def __call__(self, x: Tensor) -> Tensor:
        t = ops.gelu(self.norm1(self.pw_in(self.norm0(x))))
        t = ops.gelu(self.norm2(self.dw(t)))
        gate = ops.sigmoid(self.se_ex(ops.gelu(self.se_sq(ops.global_avg_pool(t)))))
        return ops.add(x, self.pw_out(ops.mul(t, gate)))

    def leaves(self) -> Iterator[ParamLeaf]:
        for sub in (self.norm0, self.pw_in, self.norm1, self.dw, self.norm2,
                    self.se_sq, self.se_ex, self.pw_out):
            yield from sub.leaves()


class SpectralMixer:
    """Depthwise + mobile unit + expansion MLP, each residual; identity at zero weights."""

    def __init__(
        self,
        name: str,
        rng: np.random.Generator,
        channels: int,
        expansion: int = 4,
        squeeze: int = 16,
    ) -> None:
        self.dw = Conv2d(name + ".dw", rng, channels, channels, 3, padding=1, groups=channels)
        self.mobile = MobileNetV3Unit(name + ".mobile", rng, channels, squeeze)
        self.expand = Conv2d(name + ".expand", rng, channels, expansion * channels, 1)
        self.reduce = Conv2d(name + ".reduce", rng, expansion * channels, channels, 1,
                             gain=BRANCH_GAIN)

    def __call__(self, x: Tensor) -> Tensor:
        a = ops.add(x, self.dw(x))
        b = self.mobile(a)
        return ops.add(b, self.reduce(ops.gelu(self.expand(b))))

    def leaves(self) -> Iterator[ParamLeaf]:
        for sub in (self.dw, self.mobile, self.expand, self.reduce):
            yield from sub.leaves()


class ResidualConv3x3:
    """``x + conv3x3(x)``; convolutional stand-in for :class:`SpectralMixer`."""

    def __init__(self, name: str, rng: np.random.Generator, channels: int) -> None:
        self.conv = Conv2d(name + ".conv", rng, channels, channels, 3, padding=1,
                           gain=BRANCH_GAIN)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add(x, self.conv(x))

    def leaves(self) -> Iterator[ParamLeaf]:
        yield from self.conv.leaves()


class CodingCell:
    """One encoder/decoder cell: mixer cascade, 1x1 fusion with residual, attention.

    out = s + attn.transform(s) where s = GELU(fuse(cascade(x)) + x).
    """

    def __init__(
        self,
        name: str,
        rng: np.random.Generator,
        channels: int,
        n_mixers: int,
        heads: int,
        window: int,
        expansion: int = 4,
        squeeze: int = 16,
        use_spectral_mixers: bool = True,
        use_window_attention: bool = True,
    ) -> None:
        self.mixers: list = []
        for i in range(n_mixers):
            sub = f"{name}.mix{i}"
            if use_spectral_mixers:
                self.mixers.append(SpectralMixer(sub, rng, channels, expansion, squeeze))
            else:
                self.mixers.append(ResidualConv3x3(sub, rng, channels))
        self.fuse = Conv2d(name + ".fuse", rng, channels, channels, 1, gain=BRANCH_GAIN)
        if use_window_attention:
            self.attn = WindowTransformer(name + ".attn", rng, channels, heads, window, expansion)
        else:
            self.attn = ConvTokenMixer(name + ".attn", rng, channels)

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for mix in self.mixers:
            h = mix(h)
        s = ops.gelu(ops.add(self.fuse(h), x))
        return ops.add(s, self.attn.transform(s))

    def leaves(self) -> Iterator[ParamLeaf]:
        for mix in self.mixers:
            yield from mix.leaves()
        yield from self.fuse.leaves()
        yield from self.attn.leaves()


class DeformableGroupedConv:
    """Grouped 3x3 conv sampling at learned fractional offsets.

    A zero-initialized grouped conv predicts per-tap (dy, dx) offsets shared
    by all channels of a group (layout: group-major, then tap, then dy before
    dx).  Sampling is bilinear in the original frame with coordinates clamped
    to the image rectangle, so a constant input stays constant under any
    offsets, and zero offsets reproduce a standard grouped conv over an
    edge-replicated input.
    """

    def __init__(
        self,
        name: str,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        kernel: int = 3,
        groups: int = 4,
    ) -> None:
        if in_channels % groups or out_channels % groups:
            raise ConfigError(
                f"{name}: channels ({in_channels}->{out_channels}) not divisible by groups={groups}"
            )
        self.kernel = kernel
        self.groups = groups
        self.cg = in_channels // groups
        self.cog = out_channels // groups
        shape = (out_channels, self.cg, kernel, kernel)
        self.weight = ParamLeaf(name + ".weight", kaiming_normal(rng, shape))
        self.bias = ParamLeaf(name + ".bias", np.zeros(out_channels))
        self.offset = Conv2d(
            name + ".offset", rng, in_channels, groups * 2 * kernel * kernel, kernel,
            padding=kernel // 2, groups=groups, zero_init=True,
        )

    def _base_grid(self, h: int, w: int, dtype: np.dtype) -> np.ndarray:
        k = self.kernel
        ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        taps = []
        for i in range(k):
            for j in range(k):
                by = ys + (i - k // 2)
                bx = xs + (j - k // 2)
                taps.append(np.stack([by.ravel(), bx.ravel()], axis=-1))
        return np.asarray(np.stack(taps), dtype=dtype)  # (k^2, P, 2)

    def __call__(self, x: Tensor) -> Tensor:
        n, cin, h, w = x.shape
        k = self.kernel
        p = h * w
        base = self._base_grid(h, w, x.dtype)

        offs = self.offset(x)
        offs = ops.reshape(offs, (n, self.groups, k * k, 2, h, w))
        group_offs = ops.split(offs, [1] * self.groups, axis=1)
        group_ins = ops.split(x, [self.cg] * self.groups, axis=1)
        w_groups = ops.split(self.weight.value, [self.cog] * self.groups, axis=0)
        b_groups = ops.split(self.bias.value, [self.cog] * self.groups, axis=0)

        outs = []
        for g in range(self.groups):
            og = ops.reshape(group_offs[g], (n, k * k, 2, h, w))
            taps = ops.split(og, [1] * (k * k), axis=1)
            sampled = []
            for t in range(k * k):
                off_t = ops.permute(ops.reshape(taps[t], (n, 2, p)), (0, 2, 1))
                coords = ops.add(off_t, constant(base[t], dtype=base.dtype))
                sampled.append(ops.bilinear_sample(group_ins[g], coords))
            stacked = ops.concat(sampled, axis=1)  # (N, k^2*cg, P), tap-major
            wg = ops.reshape(ops.permute(w_groups[g], (0, 2, 3, 1)), (self.cog, k * k * self.cg))
            out_g = ops.matmul(wg, stacked)
            out_g = ops.add(out_g, ops.reshape(b_groups[g], (self.cog, 1)))
            outs.append(ops.reshape(out_g, (n, self.cog, h, w)))
        return ops.concat(outs, axis=1)

    def leaves(self) -> Iterator[ParamLeaf]:
        yield self.weight
        yield self.bias
        yield from self.offset.leaves()
