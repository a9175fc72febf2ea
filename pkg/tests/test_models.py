import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import masked_local_mean
from scanfill.autodiff import Tensor, no_grad
from scanfill.metrics import ms_ssim
from scanfill.models.convnp import (ConvCNP, ConvCnpConfig, ConvLNP, ConvLnpConfig, PredictionResult,
                                    composite_tensor, np_loss)
from scanfill.models.setconv import SetConv, positive_kernel, set_conv

SMALL_CNP = ConvCnpConfig(setconv_kernel=5, trunk_depth=4, trunk_width=16, mlp_hidden=16)
SMALL_LNP = ConvLnpConfig(setconv_kernel=5, trunk_depth=2, trunk_width=8, latent_channels=4, mlp_hidden=8)

SHIFTS = [(1, 0), (0, 1), (2, 3), (4, 4), (-1, 2), (3, -2), (-4, -4), (0, -3), (-2, 0), (4, -1)]


def _task(seed, size=16, b=1, p_missing=0.3):
    rng = np.random.default_rng(seed)
    img = rng.random((b, 3, size, size))
    ctx = (rng.random((b, 1, size, size)) > p_missing).astype(np.float64)
    return img * ctx, ctx, img


# ------------------------------------------------------------------- SetConv

def test_full_mask_unit_kernel_reproduces_image():
    img = np.random.default_rng(0).random((2, 3, 6, 7))
    rep = set_conv(img, np.ones((2, 1, 6, 7)), Tensor(np.ones((1, 1))))
    np.testing.assert_array_equal(rep.signal.data, img)


def test_single_context_point_identity():
    img = np.zeros((1, 3, 9, 9))
    img[0, :, 4, 4] = [0.2, 0.7, 0.9]
    mask = np.zeros((1, 1, 9, 9))
    mask[0, 0, 4, 4] = 1
    # power-of-two weights make w * v / w exact in binary floating point
    dyadic = Tensor(2.0 ** np.random.default_rng(1).integers(-3, 3, (3, 3)))
    sig = set_conv(img * mask, mask, dyadic).signal.data[0]
    for c, v in enumerate([0.2, 0.7, 0.9]):
        np.testing.assert_array_equal(sig[c, 3:6, 3:6], np.full((3, 3), v))
    # arbitrary positive weights: one rounding of the product, one of the quotient
    kernel = Tensor(np.random.default_rng(1).uniform(0.1, 2.0, (3, 3)))
    sig = set_conv(img * mask, mask, kernel).signal.data[0]
    for c, v in enumerate([0.2, 0.7, 0.9]):
        np.testing.assert_array_max_ulp(sig[c, 3:6, 3:6], np.full((3, 3), v), maxulp=1)


@pytest.mark.parametrize("seed", range(20))
def test_uniform_kernel_equals_masked_local_mean(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((3, 8, 8))
    mask = rng.random((8, 8)) > 0.4
    rep = set_conv((img * mask)[None], mask[None, None].astype(np.float64), Tensor(np.ones((3, 3))))
    ref = masked_local_mean(img, mask, 3)
    defined = ~np.isnan(ref)
    np.testing.assert_allclose(rep.signal.data[0][defined], ref[defined], atol=1e-6)
    assert (rep.density.data >= 0).all()


def test_empty_context_is_defined_and_flagged():
    rep = set_conv(np.zeros((2, 3, 5, 5)), np.stack([np.zeros((1, 5, 5)), np.ones((1, 5, 5))]),
                   Tensor(np.ones((3, 3))))
    assert np.isfinite(rep.grid.data).all()
    assert rep.empty_context.tolist() == [True, False]


def test_set_conv_rejects_mismatched_dims():
    with pytest.raises(ValueError):
        set_conv(np.zeros((1, 3, 5, 5)), np.zeros((1, 1, 4, 5)), Tensor(np.ones((3, 3))))


@given(hnp.arrays(np.float64, (5, 5), elements=st.floats(-5, 5)))
def test_effective_kernel_strictly_positive(raw):
    assert (positive_kernel(Tensor(raw)).data > 0).all()


def test_coverage_grid_density_in_unit_interval():
    sc = SetConv(5, np.random.default_rng(0))
    corrupted, ctx, _ = _task(0)
    feats = sc.features(corrupted.astype(np.float32), ctx.astype(np.float32)).data
    assert feats.shape == (1, 4, 16, 16)
    assert feats[:, 0].min() >= 0 and feats[:, 0].max() <= 1 + 1e-6
    full = sc.features(np.ones((1, 3, 16, 16), np.float32), np.ones((1, 1, 16, 16), np.float32)).data
    assert full[0, 0, 8, 8] == pytest.approx(1.0, abs=1e-6)


# ------------------------------------------------------------------- ConvCNP

def test_untrained_convcnp_shape_and_range():
    model = ConvCNP(SMALL_CNP, seed=0)
    corrupted, ctx, _ = _task(1, b=2)
    out = model.predict(corrupted, ctx)
    assert out.shape == (2, 3, 16, 16)
    assert out.min() >= 0 and out.max() <= 1


def test_composited_output_equals_context_exactly():
    model = ConvCNP(SMALL_CNP, seed=0)
    corrupted, ctx, clean = _task(2)
    with no_grad():
        res = model.forward(corrupted.astype(np.float32), ctx.astype(np.float32))
    keep = np.broadcast_to(ctx.astype(bool), clean.shape)
    assert np.array_equal(res.composited.data[keep], corrupted.astype(np.float32)[keep])


def test_same_seed_same_weights():
    a, b = ConvCNP(SMALL_CNP, seed=3), ConvCNP(SMALL_CNP, seed=3)
    for (k, va), (_, vb) in zip(sorted(a.state_dict().items()), sorted(b.state_dict().items())):
        assert np.array_equal(va, vb), k


def test_receptive_radius():
    assert SMALL_CNP.receptive_radius == 2 + 4
    assert ConvCnpConfig().receptive_radius == 4 + 10


def check_translation_equivariance(model, radius: int, size: int = 64, seed: int = 0) -> float:
    """Largest interior mismatch between predictions on shifted inputs and shifted predictions."""
    rng = np.random.default_rng(seed)
    img = rng.random((1, 3, size, size)).astype(np.float32)
    ctx = (rng.random((1, 1, size, size)) > 0.2).astype(np.float32)
    base = model.predict(img * ctx, ctx)
    worst = 0.0
    for dy, dx in SHIFTS:
        si, sc = np.roll(img, (dy, dx), (2, 3)), np.roll(ctx, (dy, dx), (2, 3))
        shifted = model.predict(si * sc, sc)
        m = radius + max(abs(dy), abs(dx))
        lo, hi = m, size - m
        a = shifted[..., lo:hi, lo:hi]
        b = np.roll(base, (dy, dx), (2, 3))[..., lo:hi, lo:hi]
        worst = max(worst, float(np.abs(a - b).max()))
    return worst


def test_untrained_convcnp_translation_equivariant():
    model = ConvCNP(SMALL_CNP, seed=0)
    assert check_translation_equivariance(model, SMALL_CNP.receptive_radius) < 1e-4


def test_convcnp_is_not_trivially_equivariant_at_the_border():
    # sanity check on the probe: near the image edge, zero padding breaks equivariance
    model = ConvCNP(SMALL_CNP, seed=0)
    rng = np.random.default_rng(0)
    img = rng.random((1, 3, 32, 32)).astype(np.float32)
    ctx = np.ones((1, 1, 32, 32), np.float32)
    a = model.predict(np.roll(img, 3, 3), ctx)
    b = np.roll(model.predict(img, ctx), 3, 3)
    assert np.abs(a - b)[..., :4].max() > 1e-4


# ------------------------------------------------------------------- ConvLNP

def test_latent_field_shape_and_determinism():
    model = ConvLNP(SMALL_LNP, seed=0)
    corrupted, ctx, _ = _task(3, b=2)
    f1 = model.encode(corrupted.astype(np.float32), ctx.astype(np.float32))
    f2 = model.encode(corrupted.astype(np.float32), ctx.astype(np.float32))
    assert f1.mean.shape == (2, 4, 16, 16)
    assert np.array_equal(f1.mean.data, f2.mean.data) and np.array_equal(f1.logvar.data, f2.logvar.data)
    assert (f1.variance > 0).all()


def test_deterministic_limit_samples_equal_mean():
    model = ConvLNP(SMALL_LNP, seed=0)
    corrupted, ctx, _ = _task(4)
    with no_grad():
        res = model.forward(corrupted.astype(np.float32), ctx.astype(np.float32), num_samples=5, deterministic=True)
    s = res.samples.data
    assert all(np.array_equal(s[0], s[i]) for i in range(1, 5))


def test_single_zero_variance_sample_matches_deterministic_forward():
    model = ConvLNP(SMALL_LNP, seed=0)
    corrupted, ctx, _ = _task(5)
    c32, x32 = corrupted.astype(np.float32), ctx.astype(np.float32)
    with no_grad():
        field = model.encode(c32, x32)
        direct = model.decode(field.mean).data
        res = model.forward(c32, x32, num_samples=1, deterministic=True)
    np.testing.assert_array_equal(res.mu.data, direct)


def test_mean_over_samples_is_arithmetic_mean():
    model = ConvLNP(SMALL_LNP, seed=0)
    corrupted, ctx, _ = _task(6)
    with no_grad():
        res = model.forward(corrupted.astype(np.float32), ctx.astype(np.float32), 32, np.random.default_rng(1))
    np.testing.assert_allclose(res.composited.data, res.samples.data.mean(axis=0), atol=1e-6)


def test_zero_samples_rejected():
    model = ConvLNP(SMALL_LNP, seed=0)
    corrupted, ctx, _ = _task(7)
    with pytest.raises(ValueError):
        model.forward(corrupted, ctx, num_samples=0)


def test_sample_spread_vanishes_with_clamped_log_variance():
    cfg = ConvLnpConfig(**{**SMALL_LNP.__dict__, "logvar_min": -20.0, "logvar_max": -20.0})
    corrupted, ctx, _ = _task(8)
    args = corrupted.astype(np.float32), ctx.astype(np.float32)
    with no_grad():
        tight = ConvLNP(cfg, seed=0).forward(*args, 16, np.random.default_rng(0)).samples.data
        loose = ConvLNP(SMALL_LNP, seed=0).forward(*args, 16, np.random.default_rng(0)).samples.data
    assert tight.var(axis=0).max() < 1e-8
    assert loose.var(axis=0).max() > 1e-6


def test_monte_carlo_error_shrinks_with_more_samples():
    model = ConvLNP(SMALL_LNP, seed=0)
    corrupted, ctx, _ = _task(9)
    args = corrupted.astype(np.float32), ctx.astype(np.float32)
    errors = []
    for n in (1, 2, 4, 8, 16):
        means = np.stack([model.predict(*args, seed=s, num_samples=n) for s in range(10)])
        errors.append(float(means.std(axis=0, ddof=1).mean()))
    assert all(b <= a for a, b in zip(errors, errors[1:])), errors


def test_convlnp_predict_reproducible_with_seed():
    model = ConvLNP(SMALL_LNP, seed=0)
    corrupted, ctx, _ = _task(10)
    a = model.predict(corrupted, ctx, seed=4, num_samples=3)
    b = model.predict(corrupted, ctx, seed=4, num_samples=3)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------- loss

def test_loss_zero_for_perfect_prediction():
    _, ctx, clean = _task(11, size=32)
    mu = Tensor(clean)
    res = PredictionResult(mu, composite_tensor(mu, clean * ctx, ctx))
    assert np_loss(res, clean).item() == pytest.approx(0.0, abs=1e-12)


def test_latent_loss_with_identical_samples_equals_conditional_loss():
    rng = np.random.default_rng(12)
    clean = rng.random((2, 3, 32, 32))
    pred = Tensor(rng.random((2, 3, 32, 32)))
    samples = Tensor(np.stack([pred.data] * 4))
    a = np_loss(PredictionResult(pred, pred), clean).item()
    b = np_loss(PredictionResult(pred, pred, samples), clean).item()
    assert a == pytest.approx(b, abs=1e-12)


def test_loss_equals_one_minus_ms_ssim_of_stored_pair():
    rng = np.random.default_rng(13)
    clean = rng.random((1, 3, 32, 32))
    pred = np.clip(clean + rng.normal(0, 0.1, clean.shape), 0, 1)
    t = Tensor(pred)
    assert np_loss(PredictionResult(t, t), clean).item() == pytest.approx(1 - ms_ssim(pred, clean).item(), abs=1e-12)
