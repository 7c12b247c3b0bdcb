"""VAE cross-band channel predictor.

The encoder maps standardized [Re; Im] CSI of the measured band to a
Gaussian latent (mean, log-variance); the decoder maps a latent sample to
standardized [Re; Im] CSI of the target band.  Training minimizes the
beta-VAE loss: squared reconstruction error plus ``beta`` times the KL
divergence to a standard normal prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from multiband_loc import nn
from multiband_loc.channel import BandSpec, CsiVector
from multiband_loc.features import Standardizer, to_complex, to_real
from multiband_loc.fingerprint import Database


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, what: str = "loss"):
        super().__init__(f"non-finite {what} in epoch {epoch}")
        self.epoch = epoch


class BandMismatchError(ValueError):
    pass


@dataclass
class VaeTrainConfig:
    learning_rate: float = 1e-5
    epochs: int = 50
    beta: float = 0.1
    batch_size: int = 128
    seed: int = 0
    latent_dim: int = 25

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class VaeModel:
    encoder: nn.MlpModel
    decoder: nn.MlpModel
    latent_dim: int
    source_band: BandSpec
    target_band: BandSpec
    n_antennas: int
    in_norm: Standardizer
    out_norm: Standardizer
    beta: float = 0.1
    history: list[tuple[float, float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.encoder.out_dim != 2 * self.latent_dim:
            raise nn.ShapeError("encoder must output 2 x latent_dim values")
        if self.decoder.in_dim != self.latent_dim:
            raise nn.ShapeError("decoder input must equal latent_dim")
        if self.decoder.out_dim != 2 * self.target_band.n_subcarriers * self.n_antennas:
            raise nn.ShapeError("decoder output must be 2 x N_sc x antennas")


def init_vae(
    source_band: BandSpec,
    target_band: BandSpec,
    n_antennas: int = 1,
    latent_dim: int = 25,
    rng: np.random.Generator | None = None,
    in_norm: Standardizer | None = None,
    out_norm: Standardizer | None = None,
) -> VaeModel:
    rng = rng if rng is not None else np.random.default_rng(0)
    d_in = 2 * source_band.n_subcarriers * n_antennas
    d_out = 2 * target_band.n_subcarriers * n_antennas
    enc = nn.build_mlp([d_in, 64, 64, 2 * latent_dim], "leaky_relu", rng)
    dec = nn.build_mlp([latent_dim, 50, 64, 64, d_out], "leaky_relu", rng)
    return VaeModel(
        enc, dec, latent_dim, source_band, target_band, n_antennas,
        in_norm or Standardizer.identity(d_in),
        out_norm or Standardizer.identity(d_out),
    )


def _source_features(model, csi) -> tuple[np.ndarray, bool]:
    if isinstance(csi, CsiVector):
        if csi.band != model.source_band or csi.n_antennas != model.n_antennas:
            raise BandMismatchError(
                f"model expects band {model.source_band.band_index}, got {csi.band.band_index}"
            )
        h = csi.values
    else:
        h = np.asarray(csi)
    width = model.source_band.n_subcarriers * model.n_antennas
    if h.shape[-1] != width:
        raise nn.ShapeError(f"source CSI width {h.shape[-1]} != {width}")
    return model.in_norm.apply(to_real(h)), h.ndim == 1


def encode(model: VaeModel, csi_source) -> tuple[np.ndarray, np.ndarray]:
    """Latent mean and log-variance for one CSI vector or a (batch, width) array."""
    x, _ = _source_features(model, csi_source)
    out, _ = nn.forward(model.encoder, x)
    return out[..., : model.latent_dim], out[..., model.latent_dim :]


def reparameterize(mu: np.ndarray, logvar: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    logvar = np.asarray(logvar, dtype=float)
    if mu.shape != logvar.shape:
        raise nn.ShapeError("mu and logvar differ in shape")
    return mu + np.exp(0.5 * logvar) * rng.standard_normal(mu.shape)


def decode_array(model: VaeModel, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.latent_dim:
        raise nn.ShapeError(f"latent width {z.shape[-1]} != {model.latent_dim}")
    out, _ = nn.forward(model.decoder, z)
    return to_complex(model.out_norm.invert(out))


def decode(model: VaeModel, z: np.ndarray) -> CsiVector:
    """Predicted target-band CSI for a single latent vector."""
    return CsiVector(decode_array(model, np.asarray(z).reshape(-1)), model.target_band, model.n_antennas)


def vae_loss(
    pred: np.ndarray, target: np.ndarray, mu: np.ndarray, logvar: np.ndarray, beta: float
) -> tuple[float, float, float]:
    """(total, recon, kl), each averaged over the batch.

    recon is the squared error summed over features; kl is
    ``0.5 * sum(-logvar + mu^2 + exp(logvar) - 1)`` over latent dims.
    """
    pred, target, mu, logvar = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (pred, target, mu, logvar))
    if pred.shape != target.shape or mu.shape != logvar.shape:
        raise nn.ShapeError("vae_loss inputs differ in shape")
    for a in (pred, target, mu, logvar):
        if not np.all(np.isfinite(a)):
            raise nn.NonFiniteError("non-finite input to vae_loss")
    recon = float(np.mean(np.sum((pred - target) ** 2, axis=1)))
    kl = float(np.mean(0.5 * np.sum(-logvar + mu**2 + np.exp(logvar) - 1.0, axis=1)))
    return recon + beta * kl, recon, kl


def loss_and_grads(
    model: VaeModel, x: np.ndarray, y: np.ndarray, eps: np.ndarray, beta: float
) -> tuple[tuple[float, float, float], list[np.ndarray]]:
    """Loss on normalized features with frozen noise ``eps`` and gradients
    aligned with ``encoder.parameters() + decoder.parameters()``."""
    L = model.latent_dim
    b = x.shape[0]
    enc_out, c_enc = nn.forward(model.encoder, x)
    mu, logvar = enc_out[:, :L], enc_out[:, L:]
    sigma = np.exp(0.5 * logvar)
    z = mu + sigma * eps
    pred, c_dec = nn.forward(model.decoder, z)
    losses = vae_loss(pred, y, mu, logvar, beta)

    g_dec = nn.backward(model.decoder, c_dec, 2.0 * (pred - y) / b)
    dz = g_dec.input
    dmu = dz + beta * mu / b
    dlogvar = dz * eps * 0.5 * sigma + beta * 0.5 * (np.exp(logvar) - 1.0) / b
    g_enc = nn.backward(model.encoder, c_enc, np.concatenate([dmu, dlogvar], axis=1))
    return losses, g_enc.grads + g_dec.grads


def pair_arrays(db: Database, source: int, target: int) -> tuple[np.ndarray, np.ndarray]:
    """Real [Re; Im] features of the source and target bands for every record."""
    return to_real(db.band_csi(source)), to_real(db.band_csi(target))


def train_vae(
    train_db: Database, source_band: int, target_band: int, cfg: VaeTrainConfig = VaeTrainConfig()
) -> VaeModel:
    """Fit one VAE mapping ``source_band`` CSI to ``target_band`` CSI.

    Per-epoch mean (total, recon, kl) losses land in ``model.history``.
    """
    src, tgt = train_db.band(source_band), train_db.band(target_band)
    x_raw, y_raw = pair_arrays(train_db, source_band, target_band)
    in_norm, out_norm = Standardizer.fit(x_raw), Standardizer.fit(y_raw)
    rng = np.random.default_rng(cfg.seed)
    model = init_vae(src, tgt, train_db.n_antennas, cfg.latent_dim, rng, in_norm, out_norm)
    model.beta = cfg.beta
    x, y = in_norm.apply(x_raw), out_norm.apply(y_raw)
    params = model.encoder.parameters() + model.decoder.parameters()
    state = nn.AdamState(learning_rate=cfg.learning_rate)
    n = len(x)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            eps = rng.standard_normal((len(idx), model.latent_dim))
            losses, grads = loss_and_grads(model, x[idx], y[idx], eps, cfg.beta)
            if not math.isfinite(losses[0]):
                raise TrainingDivergedError(epoch)
            try:
                nn.adam_step(params, grads, state)
            except nn.NonFiniteError:
                raise TrainingDivergedError(epoch, "gradient") from None
            nn.mark_updated(model.encoder, model.decoder)
            sums += np.array(losses) * len(idx)
        model.history.append(tuple(float(v) for v in sums / n))
    return model


def predict_array(
    model: VaeModel, h_source: np.ndarray, mode: str = "mean", rng: np.random.Generator | None = None
) -> np.ndarray:
    """Batch prediction on raw complex CSI rows (batch, width)."""
    mu, logvar = encode(model, h_source)
    if mode == "mean":
        z = mu
    elif mode == "sample":
        z = reparameterize(mu, logvar, rng if rng is not None else np.random.default_rng())
    else:
        raise ValueError(f"unknown prediction mode {mode!r}")
    return decode_array(model, z)


def predict_band(
    model: VaeModel, csi_source: CsiVector, mode: str = "mean", rng: np.random.Generator | None = None
) -> CsiVector:
    if csi_source.band != model.source_band:
        raise BandMismatchError(
            f"model expects band {model.source_band.band_index}, got {csi_source.band.band_index}"
        )
    return CsiVector(predict_array(model, csi_source, mode, rng), model.target_band, model.n_antennas)


def _band_dict(b: BandSpec) -> dict:
    return {
        "band_index": b.band_index,
        "center_freq": b.center_freq,
        "bandwidth": b.bandwidth,
        "n_subcarriers": b.n_subcarriers,
        "channel": b.channel,
    }


def save_vae(model: VaeModel, path: str | Path, meta: dict | None = None) -> None:
    nn.save_checkpoint(
        path,
        "vae",
        {"encoder": model.encoder, "decoder": model.decoder},
        {
            "latent_dim": model.latent_dim,
            "source_band": _band_dict(model.source_band),
            "target_band": _band_dict(model.target_band),
            "n_antennas": model.n_antennas,
            "beta": model.beta,
            "history": [list(h) for h in model.history],
            **(meta or {}),
        },
        {
            "in_mean": model.in_norm.mean,
            "in_std": model.in_norm.std,
            "out_mean": model.out_norm.mean,
            "out_std": model.out_norm.std,
        },
    )


def load_vae(path: str | Path) -> VaeModel:
    kind, nets, meta, extra = nn.load_checkpoint(path)
    if kind != "vae":
        raise ValueError(f"{path} holds a {kind!r} checkpoint, not a VAE")
    return VaeModel(
        nets["encoder"],
        nets["decoder"],
        meta["latent_dim"],
        BandSpec(**meta["source_band"]),
        BandSpec(**meta["target_band"]),
        meta["n_antennas"],
        Standardizer(extra["in_mean"], extra["in_std"]),
        Standardizer(extra["out_mean"], extra["out_std"]),
        meta["beta"],
        [tuple(h) for h in meta["history"]],
    )


class PredictorRegistry:
    """Cross-band predictors keyed by (source, target); identity pairs pass through."""

    def __init__(self):
        self._models: dict[tuple[int, int], object] = {}

    def add(self, source: int, target: int, model) -> None:
        if source == target:
            raise ValueError("identity pairs are implicit")
        self._models[(source, target)] = model

    def get(self, source: int, target: int):
        if source == target:
            return None
        return self._models[(source, target)]

    def targets(self, source: int) -> list[int]:
        return sorted({source} | {t for s, t in self._models if s == source})

    def __len__(self) -> int:
        return len(self._models)
