"""Complex CSI <-> real feature conversion and per-feature standardization.

All learned components (VAE, MLP baseline, localizer) use these helpers so
identical inputs produce byte-identical feature matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def to_real(h: np.ndarray) -> np.ndarray:
    """(..., W) complex -> (..., 2W) real laid out as [Re; Im]."""
    h = np.asarray(h)
    return np.concatenate([h.real, h.imag], axis=-1).astype(float)


def to_complex(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    w = x.shape[-1] // 2
    return x[..., :w] + 1j * x[..., w:]


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, floor: float = 1e-12) -> "Standardizer":
        x = np.asarray(x, dtype=float)
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), floor))

    @classmethod
    def identity(cls, width: int) -> "Standardizer":
        return cls(np.zeros(width), np.ones(width))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.std + self.mean
