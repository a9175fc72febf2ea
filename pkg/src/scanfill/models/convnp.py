"""On-the-grid convolutional neural processes (conditional and latent)."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import Conv2d, Module, Tensor, concat, no_grad
from ..metrics import MsSsimParams, ms_ssim
from .layers import PointwiseMLP, ResNetTrunk
from .setconv import SetConv


@dataclass(frozen=True)
class ConvCnpConfig:
    channels: int = 3
    setconv_kernel: int = 9
    trunk_depth: int = 10
    trunk_width: int = 128
    mlp_layers: int = 4
    mlp_hidden: int = 128
    eps_div: float = 1e-8

    @property
    def receptive_radius(self) -> int:
        return self.setconv_kernel // 2 + self.trunk_depth


@dataclass(frozen=True)
class ConvLnpConfig:
    channels: int = 3
    setconv_kernel: int = 9
    trunk_depth: int = 8
    trunk_width: int = 64
    latent_channels: int = 16
    mlp_layers: int = 4
    mlp_hidden: int = 128
    logvar_min: float = -10.0
    logvar_max: float = 10.0
    eps_div: float = 1e-8

    @property
    def receptive_radius(self) -> int:
        return self.setconv_kernel // 2 + 2 * self.trunk_depth


@dataclass
class LatentField:
    mean: Tensor
    logvar: Tensor

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.logvar.data)


@dataclass
class PredictionResult:
    """Mean prediction, composited output and (latent models) composited samples (L, B, C, H, W)."""

    mu: Tensor
    composited: Tensor
    samples: Tensor | None = None


def composite_tensor(mu: Tensor, corrupted, context) -> Tensor:
    """Context pixels from the input, everything else from ``mu``; exact on context pixels."""
    ctx = np.asarray(context, dtype=mu.dtype)
    return Tensor(np.asarray(corrupted, dtype=mu.dtype) * ctx) + mu * Tensor(1.0 - ctx)


class ConvCNP(Module):
    kind = "convcnp"

    def __init__(self, config: ConvCnpConfig | None = None, seed: int = 0):
        self.config = config or ConvCnpConfig()
        rng = np.random.default_rng(seed)
        c = self.config
        self.setconv = SetConv(c.setconv_kernel, rng, c.eps_div)
        self.trunk = ResNetTrunk(1 + c.channels, c.trunk_width, c.trunk_depth, rng)
        self.decoder = PointwiseMLP(c.trunk_width, c.mlp_hidden, c.channels, c.mlp_layers, rng)

    def mean(self, corrupted, context) -> Tensor:
        return self.decoder(self.trunk(self.setconv.features(corrupted, context))).sigmoid()

    def forward(self, corrupted, context) -> PredictionResult:
        mu = self.mean(corrupted, context)
        return PredictionResult(mu, composite_tensor(mu, corrupted, context))

    def predict(self, corrupted: np.ndarray, context: np.ndarray, seed: int = 0) -> np.ndarray:
        with no_grad():
            return self.mean(_param_dtype(self, corrupted), _param_dtype(self, context)).data


class ConvLNP(Module):
    kind = "convlnp"

    def __init__(self, config: ConvLnpConfig | None = None, seed: int = 0):
        self.config = config or ConvLnpConfig()
        rng = np.random.default_rng(seed)
        c = self.config
        self.setconv = SetConv(c.setconv_kernel, rng, c.eps_div)
        self.encoder = ResNetTrunk(1 + c.channels, c.trunk_width, c.trunk_depth, rng)
        self.latent_head = Conv2d(c.trunk_width, 2 * c.latent_channels, 1, rng)
        self.decoder_trunk = ResNetTrunk(c.latent_channels, c.trunk_width, c.trunk_depth, rng)
        self.decoder = PointwiseMLP(c.trunk_width, c.mlp_hidden, c.channels, c.mlp_layers, rng)

    def encode(self, corrupted, context) -> LatentField:
        h = self.latent_head(self.encoder(self.setconv.features(corrupted, context)).relu())
        cz = self.config.latent_channels
        return LatentField(h[:, :cz], h[:, cz:].clip(self.config.logvar_min, self.config.logvar_max))

    def decode(self, z: Tensor) -> Tensor:
        return self.decoder(self.decoder_trunk(z)).sigmoid()

    def sample_latents(self, field: LatentField, num_samples: int, rng: np.random.Generator,
                       deterministic: bool = False) -> Tensor:
        """(L * B, Cz, H, W) reparameterized draws, sample-major."""
        if num_samples < 1:
            raise ValueError("need at least one latent sample")
        b = field.mean.shape[0]
        mean = _tile(field.mean, num_samples)
        if deterministic:
            return mean
        std = _tile((field.logvar * 0.5).exp(), num_samples)
        noise = rng.standard_normal((num_samples * b,) + field.mean.shape[1:]).astype(mean.dtype)
        return mean + std * Tensor(noise)

    def forward(self, corrupted, context, num_samples: int = 1, rng: np.random.Generator | None = None,
                deterministic: bool = False) -> PredictionResult:
        if num_samples < 1:
            raise ValueError("need at least one latent sample")
        rng = rng if rng is not None else np.random.default_rng(0)
        field = self.encode(corrupted, context)
        z = self.sample_latents(field, num_samples, rng, deterministic)
        mu = self.decode(z)
        b = field.mean.shape[0]
        comp = composite_tensor(mu, np.concatenate([np.asarray(corrupted)] * num_samples),
                                np.concatenate([np.asarray(context)] * num_samples))
        shape = (num_samples, b) + mu.shape[1:]
        samples = comp.reshape(shape)
        return PredictionResult(mu.reshape(shape).mean(axis=0), samples.mean(axis=0), samples)

    def predict(self, corrupted: np.ndarray, context: np.ndarray, seed: int = 0,
                num_samples: int = 8) -> np.ndarray:
        with no_grad():
            out = self.forward(_param_dtype(self, corrupted), _param_dtype(self, context),
                               num_samples, np.random.default_rng(seed))
        return out.mu.data


def _tile(x: Tensor, n: int) -> Tensor:
    return x if n == 1 else concat([x] * n, axis=0)


def _param_dtype(model: Module, arr) -> np.ndarray:
    return np.asarray(arr, dtype=model.parameters()[0].dtype)


def np_loss(prediction: PredictionResult, clean, params: MsSsimParams | None = None) -> Tensor:
    """``1 - MS-SSIM`` of the composited mean (ConvCNP) or the average over composited samples (ConvLNP)."""
    clean = np.asarray(clean)
    if prediction.samples is None:
        return 1.0 - ms_ssim(prediction.composited, Tensor(clean.astype(prediction.composited.dtype)), params)
    s = prediction.samples
    flat = s.reshape((s.shape[0] * s.shape[1],) + s.shape[2:])
    target = np.concatenate([clean] * s.shape[0]).astype(flat.dtype)
    return 1.0 - ms_ssim(flat, Tensor(target), params)


def config_dict(config) -> dict:
    return asdict(config)
