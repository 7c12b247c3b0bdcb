"""Prediction and localization metrics, ELBO bookkeeping and ranging CRLBs."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from multiband_loc.channel import SPEED_OF_LIGHT, BandSpec, CsiVector

CCNE_FLOOR_DB = -200.0
METRICS_FORMAT_VERSION = 1


def _values(v) -> np.ndarray:
    return v.values if isinstance(v, CsiVector) else np.asarray(v)


def ccne(pred, truth) -> float:
    """Channel coefficient normalized error in dB; ``-inf`` for an exact match."""
    p, t = _values(pred), _values(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    ref = float(np.sum(np.abs(t) ** 2))
    if ref == 0:
        raise ZeroDivisionError("CCNE undefined for an all-zero reference")
    err = float(np.sum(np.abs(p - t) ** 2))
    return -math.inf if err == 0 else 10 * math.log10(err / ref)


def ccne_rows(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-row CCNE (dB) for (records, width) arrays, floored at ``CCNE_FLOOR_DB``."""
    pred, truth = np.atleast_2d(pred), np.atleast_2d(truth)
    ref = np.sum(np.abs(truth) ** 2, axis=1)
    if np.any(ref == 0):
        raise ZeroDivisionError("CCNE undefined for an all-zero reference")
    err = np.sum(np.abs(pred - truth) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        db = 10 * np.log10(err / ref)
    return np.maximum(db, CCNE_FLOOR_DB)


def elbo_components(pred, target, mu, logvar) -> tuple[float, float, float]:
    """(recon, kl, elbo) for one sample with unit-variance Gaussian likelihood.

    recon = -0.5 ||pred - target||^2 (constants dropped), elbo = recon - kl.
    """
    pred, target, mu, logvar = (np.asarray(a, dtype=float) for a in (pred, target, mu, logvar))
    for a in (pred, target, mu, logvar):
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite input to elbo_components")
    recon = -0.5 * float(np.sum((pred - target) ** 2))
    kl = 0.5 * float(np.sum(-logvar + mu**2 + np.exp(logvar) - 1.0))
    return recon, kl, recon - kl


def effective_bandwidth(band: BandSpec | np.ndarray) -> float:
    """RMS spread of the subcarrier frequencies about their mean (Hz)."""
    f = band.subcarrier_freqs() if isinstance(band, BandSpec) else np.asarray(band, dtype=float)
    return float(np.sqrt(np.mean((f - f.mean()) ** 2)))


@dataclass(frozen=True)
class CrlbInputs:
    effective_bandwidth_hz: float
    snr_linear: float
    speed_of_light: float = SPEED_OF_LIGHT
    predicted_band_quality: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.predicted_band_quality <= 1.0:
            raise ValueError("predicted_band_quality must lie in [0, 1]")


def _crlb(beta: float, snr: float, c: float) -> float:
    if beta <= 0 or snr <= 0:
        raise ValueError("CRLB needs positive bandwidth and SNR")
    return c**2 / (8 * math.pi**2 * beta**2 * snr)


def crlb_single(inputs: CrlbInputs) -> float:
    """Ranging-error variance bound c^2 / (8 pi^2 beta^2 SNR), in m^2."""
    return _crlb(inputs.effective_bandwidth_hz, inputs.snr_linear, inputs.speed_of_light)


def crlb_spliced(
    beta: float, predicted_weight: float | Sequence[float], snr: float, c: float = SPEED_OF_LIGHT
) -> float:
    """CRLB with the spliced bandwidth beta * (1 + sum of predicted-band weights)."""
    weights = np.atleast_1d(np.asarray(predicted_weight, dtype=float))
    if np.any((weights < 0) | (weights > 1)):
        raise ValueError("predicted-band weights must lie in [0, 1]")
    return _crlb(beta * (1.0 + float(weights.sum())), snr, c)


def quality_from_ccne(ccne_db: float) -> float:
    """Predicted-band weight 1 - 10^(CCNE/10), clamped to [0, 1]."""
    return float(min(1.0, max(0.0, 1.0 - 10 ** (ccne_db / 10))))


def db_to_linear(db: float) -> float:
    return 10 ** (db / 10)


@dataclass
class MetricsReport:
    scheme: str
    snr_db: float
    seed: int | None
    loc_mse_m2: float = math.nan
    loc_rmse_m: float = math.nan
    ccne_db_mean: float = math.nan
    crlb_m2: float | None = None
    n_samples: int = 0
    ccne_db: list[float] = field(default_factory=list)
    squared_errors: list[float] = field(default_factory=list)
    estimates: list[tuple[float, float]] = field(default_factory=list)
    truths: list[tuple[float, float]] = field(default_factory=list)

    @classmethod
    def from_localization(cls, scheme, snr_db, seed, est: np.ndarray, truth: np.ndarray) -> "MetricsReport":
        sq = np.sum((np.asarray(est) - np.asarray(truth)) ** 2, axis=1)
        mse = float(np.mean(sq)) if sq.size else math.nan
        return cls(
            scheme=scheme,
            snr_db=snr_db,
            seed=seed,
            loc_mse_m2=mse,
            loc_rmse_m=math.sqrt(mse) if sq.size else math.nan,
            n_samples=int(sq.size),
            squared_errors=sq.tolist(),
            estimates=[tuple(r) for r in np.asarray(est).tolist()],
            truths=[tuple(r) for r in np.asarray(truth).tolist()],
        )

    def aggregates(self) -> dict:
        return {
            "format_version": METRICS_FORMAT_VERSION,
            "scheme": self.scheme,
            "snr_db": self.snr_db,
            "seed": self.seed,
            "loc_mse_m2": self.loc_mse_m2,
            "loc_rmse_m": self.loc_rmse_m,
            "ccne_db_mean": self.ccne_db_mean,
            "crlb_m2": self.crlb_m2,
            "n_samples": self.n_samples,
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.aggregates(), indent=2, sort_keys=True) + "\n")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# format_version={METRICS_FORMAT_VERSION} scheme={self.scheme} seed={self.seed}\n")
            w = csv.writer(fh)
            w.writerow(["index", "x_true", "y_true", "x_est", "y_est", "sq_error_m2"])
            for i, (t, e, s) in enumerate(zip(self.truths, self.estimates, self.squared_errors)):
                w.writerow([i, repr(t[0]), repr(t[1]), repr(e[0]), repr(e[1]), repr(s)])

    def cdf_table(self, points: int = 101) -> list[tuple[float, float]]:
        """(error_m, fraction <= error) pairs of the empirical error CDF."""
        err = np.sort(np.sqrt(np.asarray(self.squared_errors)))
        if err.size == 0:
            return []
        grid = np.linspace(0.0, float(err[-1]), points)
        return [(float(g), float(np.searchsorted(err, g, side="right") / err.size)) for g in grid]

    def as_dict(self) -> dict:
        return asdict(self)
