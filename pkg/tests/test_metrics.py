import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from oracles import mape_loop, ms_ssim_oracle, numerical_grad, rel_error, ssim_oracle, ssim_single_window
from scanfill.autodiff import Tensor, backward
from scanfill.metrics import (MsSsimParams, MsSsimScaleWarning, SsimParams, mape, mape_with_diagnostics, ms_ssim,
                              ms_ssim_loss, ms_ssim_score, mse, ssim)


def _pair(seed, size=64, noise=0.1):
    rng = np.random.default_rng(seed)
    x = ndimage.gaussian_filter(rng.random((size, size, 3)), (1.5, 1.5, 0))
    y = np.clip(x + rng.normal(0, noise, x.shape), 0, 1)
    return x, y


def test_ssim_identity():
    x, _ = _pair(0)
    assert ssim(x, x).item() == pytest.approx(1.0, abs=1e-12)


def test_ssim_of_inverse_below_one():
    x = np.random.default_rng(1).random((32, 32, 3))
    assert ssim(x, 1 - x).item() < 1


def test_ssim_single_window_matches_direct_formula():
    # an 11x11 image holds exactly one window; a flat (box) window reduces SSIM to plain moments
    rng = np.random.default_rng(7)
    grad = np.linspace(0, 1, 11)[None, :] * np.ones((11, 1))
    noisy = np.clip(grad + rng.normal(0, 0.1, grad.shape), 0, 1)
    engine = ssim(grad[..., None], noisy[..., None], SsimParams(window_size=11, window_sigma=1e6)).item()
    assert engine == pytest.approx(ssim_single_window(grad, noisy), abs=1e-6)


def test_ssim_16px_gradient_matches_windowed_oracle():
    rng = np.random.default_rng(7)
    grad = np.tile(np.linspace(0, 1, 16), (16, 1))[..., None]
    noisy = np.clip(grad + rng.normal(0, 0.1, grad.shape), 0, 1)
    assert ssim(grad, noisy).item() == pytest.approx(ssim_oracle(grad, noisy), abs=1e-6)


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError, match="smaller"):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_ssim_params_validation():
    with pytest.raises(ValueError):
        SsimParams(window_size=4)
    with pytest.raises(ValueError):
        SsimParams(k1=0)


@pytest.mark.parametrize("seed", range(50))
def test_ms_ssim_matches_independent_implementation(seed):
    x, y = _pair(seed, noise=0.02 + 0.01 * (seed % 10))
    assert ms_ssim(x, y).item() == pytest.approx(ms_ssim_oracle(x, y), abs=1e-6)


def test_ms_ssim_identity_and_symmetry():
    x, y = _pair(3)
    assert abs(ms_ssim(x, x).item() - 1.0) < 1e-9
    assert abs(ms_ssim(x, y).item() - ms_ssim(y, x).item()) < 1e-9


def test_ms_ssim_blur_monotone():
    rng = np.random.default_rng(11)
    x = ndimage.gaussian_filter(rng.random((64, 64, 3)), (1, 1, 0))
    light = ndimage.gaussian_filter(x, (1, 1, 0))
    heavy = ndimage.gaussian_filter(x, (3, 3, 0))
    assert ms_ssim(x, light).item() >= ms_ssim(x, heavy).item()


def test_ms_ssim_scale_reduction_warns_and_renormalizes():
    x, y = _pair(0, size=32)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ms_ssim(x, y)
    assert any(issubclass(w.category, MsSsimScaleWarning) for w in caught)
    for size in (32, 48, 64, 200):
        fitted = MsSsimParams().fitted(size, size)
        assert sum(fitted.scale_weights) == pytest.approx(1.0, abs=1e-15)
    assert len(MsSsimParams().fitted(64, 64).scale_weights) == 3
    assert len(MsSsimParams().fitted(48, 48).scale_weights) == 3


def test_ms_ssim_rejects_below_one_scale():
    with pytest.raises(ValueError):
        ms_ssim(np.zeros((10, 10, 3)), np.zeros((10, 10, 3)))


@given(st.integers(0, 10_000))
def test_reported_ms_ssim_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((2, 3, 24, 24)), rng.random((2, 3, 24, 24))
    b[1] = 1 - a[1]
    vals = ms_ssim_score(a, b)
    assert np.all((vals >= 0) & (vals <= 1))


def test_loss_zero_for_perfect_prediction_and_bounded():
    x, y = _pair(4)
    assert ms_ssim_loss(x, x).item() == pytest.approx(0.0, abs=1e-12)
    assert 0 <= ms_ssim_loss(x, y).item() <= 1


def test_loss_decreases_along_path_to_target():
    rng = np.random.default_rng(5)
    target, _ = _pair(5)
    noise = rng.random(target.shape)
    losses = [ms_ssim_loss(noise + t * (target - noise), target).item() for t in np.linspace(0, 1, 5)]
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_loss_gradient_finite_differences_32px():
    rng = np.random.default_rng(6)
    target = rng.random((1, 3, 32, 32))
    pred = np.clip(target + rng.normal(0, 0.2, target.shape), 0, 1)
    p = Tensor(pred, requires_grad=True)
    backward(ms_ssim_loss(p, Tensor(target)))
    sub = (0, 1, slice(10, 14), slice(5, 9))
    block = pred[sub].copy()

    def f():
        full = pred.copy()
        full[sub] = block
        return ms_ssim_loss(Tensor(full), Tensor(target)).item()

    assert rel_error(p.grad[sub], numerical_grad(f, block)) < 1e-3


def test_mape_and_mse_basics():
    t = np.array([1.0, -2.0, 4.0])
    assert mape(t, t) == 0 and mse(t, t) == 0
    assert mape(1.1 * t, t) == pytest.approx(10.0)


def test_mape_matches_loop():
    rng = np.random.default_rng(20)
    p, t = rng.normal(size=20), rng.normal(size=20) + 3
    assert mape(p, t) == pytest.approx(mape_loop(p, t), abs=1e-9)


def test_mape_excludes_near_zero_targets():
    value, excluded = mape_with_diagnostics([1.0, 2.0, 5.0], [1.0, 1e-9, 4.0])
    assert excluded == 1
    assert value == pytest.approx(12.5)
