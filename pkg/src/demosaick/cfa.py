"""Bayer color filter array pipeline: mosaicking, RGGB packing, warm start.

Conventions (0-based): the CFA phase is RGGB with R at (0, 0), G at (0, 1)
and (1, 0), B at (1, 1). An RGB image is (..., 3, 2H, 2W), a mosaic is
(..., 1, 2H, 2W), and the packed stack is (..., 4, H, W) with subband order
[r, g1, g2, b] taken row-major from each 2x2 tile. All functions are pure
numpy; the model lifts their outputs onto the tape as constants.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

# Pre-shuffle channel duplication for the nearest-neighbor warm start: RGB
# output channel c at tile offset (dy, dx) reads pre-shuffle channel
# c*4 + dy*2 + dx, so this order places r everywhere in the R plane, g1 on the
# top row and g2 on the bottom row of the G plane, and b everywhere in B.
WARM_START_ORDER = (0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 3, 3)


def _check_even_spatial(arr: np.ndarray, what: str) -> None:
    h, w = arr.shape[-2], arr.shape[-1]
    if h % 2 or w % 2:
        raise ContractError(f"{what}: spatial extents must be even, got {h}x{w}")


def mosaic(rgb: np.ndarray) -> np.ndarray:
    """Sample an RGB image (..., 3, 2H, 2W) onto a Bayer mosaic (..., 1, 2H, 2W)."""
    rgb = np.asarray(rgb)
    if rgb.shape[-3] != 3:
        raise ContractError(f"mosaic: expected 3 color channels, got shape {rgb.shape}")
    _check_even_spatial(rgb, "mosaic")
    out = np.empty(rgb.shape[:-3] + (1,) + rgb.shape[-2:], dtype=rgb.dtype)
    m = out[..., 0, :, :]
    m[..., 0::2, 0::2] = rgb[..., 0, 0::2, 0::2]
    m[..., 0::2, 1::2] = rgb[..., 1, 0::2, 1::2]
    m[..., 1::2, 0::2] = rgb[..., 1, 1::2, 0::2]
    m[..., 1::2, 1::2] = rgb[..., 2, 1::2, 1::2]
    return out


def pack_rggb(bayer: np.ndarray) -> np.ndarray:
    """Pack a mosaic (..., 1, 2H, 2W) into subbands (..., 4, H, W)."""
    bayer = np.asarray(bayer)
    if bayer.shape[-3] != 1:
        raise ContractError(f"pack_rggb: expected a single-channel mosaic, got shape {bayer.shape}")
    _check_even_spatial(bayer, "pack_rggb")
    x = bayer[..., 0, :, :]
    return np.stack(
        [x[..., 0::2, 0::2], x[..., 0::2, 1::2], x[..., 1::2, 0::2], x[..., 1::2, 1::2]],
        axis=-3,
    )


def unpack_rggb(stack: np.ndarray) -> np.ndarray:
    """Inverse of pack_rggb: (..., 4, H, W) -> (..., 1, 2H, 2W), bit-exact."""
    stack = np.asarray(stack)
    if stack.shape[-3] != 4:
        raise ContractError(f"unpack_rggb: expected 4 subbands, got shape {stack.shape}")
    h, w = stack.shape[-2], stack.shape[-1]
    out = np.empty(stack.shape[:-3] + (1, 2 * h, 2 * w), dtype=stack.dtype)
    m = out[..., 0, :, :]
    m[..., 0::2, 0::2] = stack[..., 0, :, :]
    m[..., 0::2, 1::2] = stack[..., 1, :, :]
    m[..., 1::2, 0::2] = stack[..., 2, :, :]
    m[..., 1::2, 1::2] = stack[..., 3, :, :]
    return out


def warm_start(stack: np.ndarray) -> np.ndarray:
    """Duplicate RGGB subbands (..., 4, H, W) into the 12-channel pre-shuffle init.

    Per token [r, g1, g2, b] the 12-vector is [r,r,r,r, g1,g1, g2,g2, b,b,b,b],
    so pixel-shuffling by 2 yields the nearest-neighbor RGB interpolation.
    """
    stack = np.asarray(stack)
    if stack.shape[-3] != 4:
        raise ContractError(f"warm_start: expected 4 subbands, got shape {stack.shape}")
    return stack[..., WARM_START_ORDER, :, :]


def shuffle2(pre: np.ndarray) -> np.ndarray:
    """Numpy pixel shuffle by 2: (..., 4C, H, W) -> (..., C, 2H, 2W)."""
    pre = np.asarray(pre)
    c4, h, w = pre.shape[-3], pre.shape[-2], pre.shape[-1]
    if c4 % 4:
        raise ContractError(f"shuffle2: channel count {c4} not divisible by 4")
    c = c4 // 4
    lead = pre.shape[:-3]
    x = pre.reshape(lead + (c, 2, 2, h, w))
    x = np.moveaxis(x, (-4, -3), (-3, -1))  # (..., c, h, 2, w, 2)
    return x.reshape(lead + (c, 2 * h, 2 * w))


def demosaic_nn(bayer: np.ndarray) -> np.ndarray:
    """Nearest-neighbor demosaicking: the model's warm-start baseline.

    Equals pixel_shuffle(warm_start(pack_rggb(X)), 2) exactly.
    """
    return shuffle2(warm_start(pack_rggb(bayer)))


def add_noise(bayer: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add white Gaussian noise in [0,1] units (sigma = sigma_8bit / 255).

    No clipping here; values clamp only at 8-bit I/O boundaries.
    """
    if sigma < 0:
        raise ContractError(f"add_noise: sigma must be nonnegative, got {sigma}")
    bayer = np.asarray(bayer)
    if sigma == 0:
        return bayer.copy()
    return bayer + rng.standard_normal(bayer.shape).astype(bayer.dtype) * bayer.dtype.type(sigma)


def attach_noise_map(stack: np.ndarray, sigma) -> np.ndarray:
    """Interleave a constant noise plane with each subband: [r,s,g1,s,g2,s,b,s].

    (..., 4, H, W) -> (..., 8, H, W), pairing each spectrum with the noise map
    so the grouped input convolution sees (spectrum, sigma) per group. sigma
    is a scalar shared by all images or one value per leading (batch) entry.
    """
    stack = np.asarray(stack)
    if stack.shape[-3] != 4:
        raise ContractError(f"attach_noise_map: expected 4 subbands, got shape {stack.shape}")
    sig = np.asarray(sigma, dtype=stack.dtype)
    if np.any(sig < 0):
        raise ContractError(f"attach_noise_map: sigma must be nonnegative, got {sigma}")
    if sig.ndim:
        if sig.shape != stack.shape[:-3]:
            raise ContractError(
                f"attach_noise_map: per-image sigma shape {sig.shape} does not match "
                f"batch shape {stack.shape[:-3]}")
        sig = sig.reshape(sig.shape + (1, 1, 1))
    out = np.empty(stack.shape[:-3] + (8,) + stack.shape[-2:], dtype=stack.dtype)
    out[..., 0::2, :, :] = stack
    out[..., 1::2, :, :] = sig
    return out
