"""Training loss tests: oracle comparisons and finite-difference checks.

The differentiable MS-SSIM is compared against the float64 metric (same
windows, same truncation rule), and the smoothed L1 against an explicit
zero-padded 2-d Gaussian convolution.
"""

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from conftest import fd_gradcheck
from demosaick import metrics
from demosaick.errors import ContractError
from demosaick.losses import LossConfig, mixed_loss, ms_ssim_tape, smoothed_l1
from demosaick.tensor import ParamLeaf, constant


def _smooth_pair(rng, shape, amp=0.02):
    """Blurred random field plus a small perturbation, both in [0, 1]."""
    c, h, w = shape
    base = rng.random((c, h + 4, w + 4))
    k = np.ones((5, 5)) / 25.0
    win = sliding_window_view(base, (5, 5), axis=(1, 2))
    sm = np.einsum("chwij,ij->chw", win, k)
    a = np.clip(sm, 0.0, 1.0)
    b = np.clip(sm + amp * rng.standard_normal(sm.shape), 0.0, 1.0)
    return a, b


@pytest.mark.parametrize("kwargs,field", [
    (dict(alpha=-0.1), "alpha"),
    (dict(alpha=1.5), "alpha"),
    (dict(l1_sigma=0.0), "l1_sigma"),
    (dict(window=4), "window"),
    (dict(window=0), "window"),
    (dict(window_sigma=0.0), "window_sigma"),
    (dict(k1=0.0), "k1"),
    (dict(k2=-1.0), "k2"),
    (dict(ms_weights=()), "ms_weights"),
    (dict(ms_weights=(0.5, 0.0)), "ms_weights"),
])
def test_loss_config_rejects_bad_fields(kwargs, field):
    with pytest.raises(ContractError, match=field):
        LossConfig(**kwargs).validate()


def test_loss_config_defaults_valid():
    cfg = LossConfig()
    cfg.validate()
    assert cfg.alpha == 0.16
    assert cfg.l1_sigma == 8.0
    assert cfg.window == 11


def test_mixed_loss_zero_iff_identical(high):
    rng = np.random.default_rng(0)
    a, b = _smooth_pair(rng, (3, 32, 32))
    same = mixed_loss(constant(a[None]), constant(a[None])).item()
    assert abs(same) <= 1e-9
    diff = mixed_loss(constant(a[None]), constant(b[None])).item()
    assert diff > 1e-6


def test_mixed_loss_rejects_bad_shapes():
    a = np.zeros((2, 8, 8))
    with pytest.raises(ContractError, match="NCHW"):
        mixed_loss(constant(a), constant(a))
    with pytest.raises(ContractError, match="shapes differ"):
        mixed_loss(constant(np.zeros((1, 2, 8, 8))), np.zeros((1, 2, 8, 6)))


def test_smoothed_l1_matches_padded_convolution_oracle(high):
    rng = np.random.default_rng(1)
    a = rng.random((2, 2, 10, 12))
    b = rng.random((2, 2, 10, 12))
    sigma = 1.0
    got = smoothed_l1(constant(a), constant(b), sigma).item()

    k1d = metrics.gaussian_kernel1d(sigma)
    r = (k1d.size - 1) // 2
    k2d = np.outer(k1d, k1d)
    diff = np.abs(a - b)
    pad = np.pad(diff, ((0, 0), (0, 0), (r, r), (r, r)))
    win = sliding_window_view(pad, (k1d.size, k1d.size), axis=(2, 3))
    oracle = float(np.einsum("nchwij,ij->nchw", win, k2d).mean())
    assert abs(got - oracle) <= 1e-12


def test_smoothed_l1_default_radius_is_three_sigma():
    k = metrics.gaussian_kernel1d(8.0)
    assert k.size == 2 * 24 + 1
    assert abs(k.sum() - 1.0) <= 1e-12


def test_ms_ssim_tape_matches_metric(high):
    rng = np.random.default_rng(7)
    a, b = _smooth_pair(rng, (3, 48, 48))
    tape_val = ms_ssim_tape(constant(a[None]), constant(b[None])).item()
    with pytest.warns(UserWarning, match="scales"):
        metric_val = metrics.ms_ssim(a, b)
    assert abs(tape_val - metric_val) <= 1e-6
    assert 0.0 < tape_val < 1.0


def test_ms_ssim_tape_identical_is_one(high):
    rng = np.random.default_rng(2)
    a, _ = _smooth_pair(rng, (1, 24, 24))
    assert abs(ms_ssim_tape(constant(a[None]), constant(a[None])).item() - 1.0) <= 1e-9


def test_alpha_one_reduces_to_smoothed_l1(high):
    rng = np.random.default_rng(3)
    a, b = _smooth_pair(rng, (2, 16, 16))
    cfg = LossConfig(alpha=1.0)
    left = mixed_loss(constant(a[None]), constant(b[None]), cfg).item()
    right = smoothed_l1(constant(a[None]), constant(b[None]), cfg.l1_sigma).item()
    assert left == right


def test_alpha_zero_reduces_to_one_minus_ms_ssim(high):
    rng = np.random.default_rng(4)
    a, b = _smooth_pair(rng, (2, 24, 24))
    cfg = LossConfig(alpha=0.0)
    left = mixed_loss(constant(a[None]), constant(b[None]), cfg).item()
    right = 1.0 - ms_ssim_tape(constant(a[None]), constant(b[None]), cfg).item()
    assert abs(left - right) <= 1e-15


def test_mixed_loss_gradcheck_small_pair(high):
    # 8x8 is below the default window, so this also exercises the shrink
    # path (window 7, single scale).
    rng = np.random.default_rng(5)
    pred = ParamLeaf("pred", np.clip(
        0.5 + 0.2 * rng.standard_normal((1, 2, 8, 8)), 0.05, 0.95))
    target = np.clip(pred.value.data + 0.1 * rng.standard_normal((1, 2, 8, 8)), 0.0, 1.0)
    worst = fd_gradcheck(lambda: mixed_loss(pred.value, target), [pred],
                         samples=12, eps=1e-6)
    assert worst <= 1e-3


def test_ms_ssim_tape_gradcheck_small_pair(high):
    rng = np.random.default_rng(6)
    pred = ParamLeaf("pred", np.clip(
        0.5 + 0.2 * rng.standard_normal((1, 2, 8, 8)), 0.05, 0.95))
    target = np.clip(pred.value.data + 0.1 * rng.standard_normal((1, 2, 8, 8)), 0.0, 1.0)
    worst = fd_gradcheck(lambda: ms_ssim_tape(pred.value, target), [pred],
                         samples=12, eps=1e-6)
    assert worst <= 1e-3


def test_mixed_loss_monotone_in_perturbation(high):
    rng = np.random.default_rng(8)
    a, _ = _smooth_pair(rng, (1, 32, 32))
    noise = rng.standard_normal(a.shape)
    losses = []
    for amp in (0.0, 0.02, 0.05, 0.1):
        b = np.clip(a + amp * noise, 0.0, 1.0)
        losses.append(mixed_loss(constant(a[None]), constant(b[None])).item())
    assert losses == sorted(losses)
    assert losses[0] == 0.0
