"""Baseline cross-band predictors.

* MLP regression from source-band to target-band CSI (no latent bottleneck).
* Auto-regressive extrapolation across subcarriers with Kalman-tracked
  AR coefficients.
* Pass-through of the actually measured band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from multiband_loc import nn
from multiband_loc.channel import BandSpec, CsiVector
from multiband_loc.features import Standardizer, to_complex, to_real
from multiband_loc.fingerprint import Database, FingerprintRecord
from multiband_loc.vae import TrainingDivergedError, _band_dict, pair_arrays


class SingularFitError(np.linalg.LinAlgError):
    pass


class MissingBandError(KeyError):
    pass


# -- Baseline 1: MLP ----------------------------------------------------------


@dataclass
class MlpTrainConfig:
    learning_rate: float = 1e-5
    epochs: int = 50
    batch_size: int = 128
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)


@dataclass
class MlpPredictor:
    net: nn.MlpModel
    source_band: BandSpec
    target_band: BandSpec
    n_antennas: int
    in_norm: Standardizer
    out_norm: Standardizer
    history: list[float] = field(default_factory=list)


def train_mlp_predictor(
    train_db: Database, source_band: int, target_band: int, cfg: MlpTrainConfig = MlpTrainConfig()
) -> MlpPredictor:
    src, tgt = train_db.band(source_band), train_db.band(target_band)
    x_raw, y_raw = pair_arrays(train_db, source_band, target_band)
    in_norm, out_norm = Standardizer.fit(x_raw), Standardizer.fit(y_raw)
    rng = np.random.default_rng(cfg.seed)
    d_in, d_out = x_raw.shape[1], y_raw.shape[1]
    net = nn.build_mlp([d_in, *cfg.hidden, d_out], "leaky_relu", rng)
    model = MlpPredictor(net, src, tgt, train_db.n_antennas, in_norm, out_norm)
    x, y = in_norm.apply(x_raw), out_norm.apply(y_raw)
    params = net.parameters()
    state = nn.AdamState(learning_rate=cfg.learning_rate)
    n = len(x)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            pred, cache = nn.forward(net, x[idx])
            err = pred - y[idx]
            loss = float(np.mean(np.sum(err**2, axis=1)))
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch)
            grads = nn.backward(net, cache, 2.0 * err / len(idx)).grads
            try:
                nn.adam_step(params, grads, state)
            except nn.NonFiniteError:
                raise TrainingDivergedError(epoch, "gradient") from None
            nn.mark_updated(net)
            total += loss * len(idx)
        model.history.append(total / n)
    return model


def mlp_predict_array(model: MlpPredictor, h_source: np.ndarray) -> np.ndarray:
    h = np.asarray(h_source.values if isinstance(h_source, CsiVector) else h_source)
    out, _ = nn.forward(model.net, model.in_norm.apply(to_real(h)))
    return to_complex(model.out_norm.invert(out))


def save_mlp_predictor(model: MlpPredictor, path: str | Path) -> None:
    nn.save_checkpoint(
        path,
        "mlp_predictor",
        {"net": model.net},
        {
            "source_band": _band_dict(model.source_band),
            "target_band": _band_dict(model.target_band),
            "n_antennas": model.n_antennas,
            "history": model.history,
        },
        {
            "in_mean": model.in_norm.mean,
            "in_std": model.in_norm.std,
            "out_mean": model.out_norm.mean,
            "out_std": model.out_norm.std,
        },
    )


def load_mlp_predictor(path: str | Path) -> MlpPredictor:
    kind, nets, meta, extra = nn.load_checkpoint(path)
    if kind != "mlp_predictor":
        raise ValueError(f"{path} holds a {kind!r} checkpoint, not an MLP predictor")
    return MlpPredictor(
        nets["net"],
        BandSpec(**meta["source_band"]),
        BandSpec(**meta["target_band"]),
        meta["n_antennas"],
        Standardizer(extra["in_mean"], extra["in_std"]),
        Standardizer(extra["out_mean"], extra["out_std"]),
        meta["history"],
    )


# -- Baseline 2: AR extrapolation with Kalman-tracked coefficients -----------


@dataclass(frozen=True)
class ArEkfConfig:
    ar_order: int = 4
    process_noise: float = 1e-6
    observation_noise: float = 1e-3
    init_covariance: float = 1.0

    def __post_init__(self):
        if self.ar_order < 1:
            raise ValueError("ar_order must be >= 1")
        if min(self.process_noise, self.observation_noise, self.init_covariance) <= 0:
            raise ValueError("ArEkfConfig variances must be positive")


def _regressors(x: np.ndarray, p: int) -> np.ndarray:
    # row k-p holds [x_{k-1}, ..., x_{k-p}] for k = p..N-1
    n = x.size
    return np.column_stack([x[p - i : n - i] for i in range(1, p + 1)])


def fit_ar(x: np.ndarray, order: int) -> np.ndarray:
    """Least-squares complex AR coefficients (minimum-norm if rank deficient)."""
    n = x.size
    if n - order < order:
        raise SingularFitError(
            f"{n} samples cannot determine an AR({order}) model; use ar_order <= {n // 2}"
        )
    X = _regressors(x, order)
    a, _, rank, _ = np.linalg.lstsq(X, x[order:], rcond=None)
    if rank == 0:
        raise SingularFitError("AR regression matrix has rank 0; try a lower ar_order")
    return a


def kalman_track(x: np.ndarray, a0: np.ndarray, cfg: ArEkfConfig) -> np.ndarray:
    """Track AR coefficients along ``x`` with a random-walk Kalman filter.

    The state stacks real and imaginary coefficient parts; each subcarrier
    contributes a 2-D real observation.
    """
    p = a0.size
    theta = np.concatenate([a0.real, a0.imag])
    P = cfg.init_covariance * np.eye(2 * p)
    Q = cfg.process_noise * np.eye(2 * p)
    R = cfg.observation_noise * np.eye(2)
    U = _regressors(x, p)
    for u, y in zip(U, x[p:]):
        H = np.block([[u.real, -u.imag], [u.imag, u.real]])
        P = P + Q
        innov = np.array([y.real, y.imag]) - H @ theta
        S = H @ P @ H.T + R
        K = np.linalg.solve(S, H @ P).T
        theta = theta + K @ innov
        P = (np.eye(2 * p) - K @ H) @ P
    return theta[:p] + 1j * theta[p:]


def extrapolate(x: np.ndarray, a: np.ndarray, steps: int) -> np.ndarray:
    p = a.size
    buf = list(x[-p:][::-1])  # most recent first
    out = np.empty(steps, np.complex128)
    for j in range(steps):
        nxt = np.dot(a, buf[:p])
        out[j] = nxt
        buf.insert(0, nxt)
    return out


def _gap_steps(source: BandSpec, target: BandSpec) -> tuple[int, bool]:
    if source.n_subcarriers != target.n_subcarriers or not math.isclose(
        source.subcarrier_spacing, target.subcarrier_spacing
    ):
        raise ValueError("AR extrapolation needs bands with equal subcarrier grids")
    fs, ft = source.subcarrier_freqs(), target.subcarrier_freqs()
    forward = target.center_freq >= source.center_freq
    edge_gap = (ft[0] - fs[-1]) if forward else (fs[0] - ft[-1])
    steps = edge_gap / source.subcarrier_spacing
    if steps < 1 - 1e-6:
        raise ValueError("target band overlaps the source band")
    if abs(steps - round(steps)) > 1e-6:
        raise ValueError("target subcarriers are not on the source grid")
    return int(round(steps)) - 1, forward


def ar_ekf_predict_rows(
    h_source: np.ndarray, source: BandSpec, target: BandSpec, cfg: ArEkfConfig = ArEkfConfig()
) -> np.ndarray:
    """AR prediction for each antenna row of ``h_source`` (antennas, N_sc)."""
    gap, forward = _gap_steps(source, target)
    h_source = np.atleast_2d(np.asarray(h_source, dtype=np.complex128))
    out = np.empty((h_source.shape[0], target.n_subcarriers), np.complex128)
    for i, row in enumerate(h_source):
        seq = row if forward else row[::-1]
        scale = math.sqrt(float(np.mean(np.abs(seq) ** 2)))
        if scale == 0:
            raise SingularFitError("all-zero CSI cannot be extrapolated")
        seq = seq / scale
        a = kalman_track(seq, fit_ar(seq, cfg.ar_order), cfg)
        pred = extrapolate(seq, a, gap + target.n_subcarriers)[gap:] * scale
        out[i] = pred if forward else pred[::-1]
    return out


def ar_ekf_predict(csi_source: CsiVector, cfg: ArEkfConfig, target_band: BandSpec) -> CsiVector:
    rows = ar_ekf_predict_rows(csi_source.per_antenna(), csi_source.band, target_band, cfg)
    return CsiVector(rows.reshape(-1), target_band, csi_source.n_antennas)


# -- Baseline 3: measured pass-through ----------------------------------------


def passthrough_band(record: FingerprintRecord, band: int) -> CsiVector:
    for key, csi in record.csi.items():
        if key == band or csi.band.matches(band):
            return csi
    raise MissingBandError(f"record {record.sample_id} has no band {band}")
