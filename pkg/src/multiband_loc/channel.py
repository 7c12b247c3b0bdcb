"""Parametric multipath OFDM channel simulator.

A location's channel on band ``n`` is the sum over propagation paths

    H_k = sum_p alpha_p(L, n) * exp(-j 2 pi (f_k - f_ref) tau_p(L))

where ``f_k`` are the subcarrier frequencies of the band.  Path 1 is the
line-of-sight path; the others bounce off point scatterers that are fixed
per scenario, so the channel is a deterministic, smooth function of the
receiver location.  ``f_ref`` is a reference carrier whose phase term is
folded into the complex gains (``f_ref = 0`` gives absolute frequencies).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# 5 GHz WiFi channels used for the three-band setup: channel -> center Hz
WIFI_5G_CHANNELS = {153: 5.765e9, 157: 5.785e9, 161: 5.805e9}


class ChannelError(ValueError):
    """Invalid channel-model input."""


@dataclass(frozen=True)
class Location:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ChannelError(f"non-finite location ({self.x}, {self.y})")

    def distance(self, other: "Location") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Area:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ChannelError(f"degenerate area {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def contains(self, loc: Location) -> bool:
        return self.x_min <= loc.x <= self.x_max and self.y_min <= loc.y <= self.y_max

    def clamp(self, xy: np.ndarray) -> np.ndarray:
        """Project points (..., 2) onto the rectangle."""
        xy = np.asarray(xy, dtype=float)
        out = np.empty_like(xy)
        out[..., 0] = np.clip(xy[..., 0], self.x_min, self.x_max)
        out[..., 1] = np.clip(xy[..., 1], self.y_min, self.y_max)
        return out


@dataclass(frozen=True)
class BandSpec:
    """One OFDM band. ``band_index`` is n in 1..N_B; ``channel`` the WiFi number."""

    band_index: int
    center_freq: float
    bandwidth: float = 20e6
    n_subcarriers: int = 64
    channel: int | None = None

    def __post_init__(self):
        if self.n_subcarriers <= 0:
            raise ChannelError("n_subcarriers must be positive")
        if self.bandwidth <= 0:
            raise ChannelError("bandwidth must be positive")

    @property
    def subcarrier_spacing(self) -> float:
        return self.bandwidth / self.n_subcarriers

    def subcarrier_freqs(self) -> np.ndarray:
        k = np.arange(self.n_subcarriers)
        return self.center_freq + (k - self.n_subcarriers / 2) * self.subcarrier_spacing

    def matches(self, key: int) -> bool:
        return key == self.band_index or (self.channel is not None and key == self.channel)


def default_bands(n_subcarriers: int = 64) -> list[BandSpec]:
    """The three contiguous 20 MHz bands at channels 153, 157 and 161."""
    return [
        BandSpec(i + 1, freq, 20e6, n_subcarriers, ch)
        for i, (ch, freq) in enumerate(sorted(WIFI_5G_CHANNELS.items()))
    ]


@dataclass
class CsiVector:
    """Complex CSI of one band, flattened antenna-major (antenna 0 subcarriers first)."""

    values: np.ndarray
    band: BandSpec
    n_antennas: int = 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128).reshape(-1)
        if self.values.size != self.band.n_subcarriers * self.n_antennas:
            raise ChannelError(
                f"CSI length {self.values.size} != {self.band.n_subcarriers} x {self.n_antennas}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ChannelError("CSI contains non-finite entries")

    def per_antenna(self) -> np.ndarray:
        return self.values.reshape(self.n_antennas, self.band.n_subcarriers)

    def replace(self, values: np.ndarray) -> "CsiVector":
        return CsiVector(values, self.band, self.n_antennas)


@dataclass
class PathSet:
    """Multipath parameters of one location.

    ``alpha`` has shape (P, N_B) with columns ordered like ``band_indices``.
    """

    alpha: np.ndarray
    tau: np.ndarray
    band_indices: tuple[int, ...]
    freq_reference: float = 0.0

    def __post_init__(self):
        self.alpha = np.atleast_2d(np.asarray(self.alpha, dtype=np.complex128))
        self.tau = np.atleast_1d(np.asarray(self.tau, dtype=float))
        self.band_indices = tuple(int(b) for b in self.band_indices)
        if self.tau.size < 1:
            raise ChannelError("a PathSet needs at least one path")
        if self.alpha.shape != (self.tau.size, len(self.band_indices)):
            raise ChannelError(
                f"alpha shape {self.alpha.shape} does not match "
                f"{self.tau.size} paths x {len(self.band_indices)} bands"
            )
        if np.any(self.tau < 0):
            raise ChannelError("path delays must be non-negative")

    @property
    def n_paths(self) -> int:
        return self.tau.size

    def gains(self, band_index: int) -> np.ndarray:
        try:
            col = self.band_indices.index(band_index)
        except ValueError:
            raise ChannelError(f"no path gains for band {band_index}") from None
        return self.alpha[:, col]


@dataclass(frozen=True)
class ScenarioConfig:
    area: tuple[float, float, float, float] = (0.0, 4.0, 0.0, 4.0)
    rp_count: int = 16
    tp_count: int = 11
    ap_location: tuple[float, float] = (0.0, 0.0)
    seed: int = 0


@dataclass(frozen=True)
class Scenario:
    area: Area
    reference_points: tuple[Location, ...]
    test_points: tuple[Location, ...]
    ap_location: Location
    rng_seed: int

    def points(self, role: str) -> tuple[Location, ...]:
        if role == "rp":
            return self.reference_points
        if role == "tp":
            return self.test_points
        raise ChannelError(f"unknown point role {role!r}")

    def summary(self) -> dict:
        return {
            "area": [self.area.x_min, self.area.x_max, self.area.y_min, self.area.y_max],
            "rp_count": len(self.reference_points),
            "tp_count": len(self.test_points),
            "ap": [self.ap_location.x, self.ap_location.y],
            "seed": self.rng_seed,
        }


@dataclass(frozen=True)
class PathModelConfig:
    p_count: int = 8
    power_decay_s: float = 30e-9
    excess_delay_mean_s: float = 50e-9
    tilt_magnitude: tuple[float, float] = (0.8, 1.2)
    tilt_max_phase: float = math.pi / 8
    scatterer_margin_m: float = 2.0
    gain_jitter: float = 0.05
    min_distance_m: float = 0.1
    # None -> lowest band center; 0.0 -> absolute subcarrier frequencies
    reference_freq_hz: float | None = None


def _grid(area: Area, count: int) -> list[Location]:
    nx = math.ceil(math.sqrt(count))
    ny = math.ceil(count / nx)
    dx, dy = area.width / nx, area.height / ny
    pts = [
        Location(area.x_min + (i + 0.5) * dx, area.y_min + (j + 0.5) * dy)
        for j in range(ny)
        for i in range(nx)
    ]
    return pts[:count]


def gen_scenario(cfg: ScenarioConfig) -> Scenario:
    """Lay reference points on a regular grid and draw test points uniformly."""
    if cfg.rp_count < 1:
        raise ChannelError("rp_count must be >= 1")
    if cfg.tp_count < 0:
        raise ChannelError("tp_count must be >= 0")
    area = Area(*cfg.area)
    rng = np.random.default_rng([cfg.seed, 0x5CE])
    tps = [
        Location(float(x), float(y))
        for x, y in zip(
            rng.uniform(area.x_min, area.x_max, cfg.tp_count),
            rng.uniform(area.y_min, area.y_max, cfg.tp_count),
        )
    ]
    return Scenario(
        area=area,
        reference_points=tuple(_grid(area, cfg.rp_count)),
        test_points=tuple(tps),
        ap_location=Location(*cfg.ap_location),
        rng_seed=cfg.seed,
    )


@dataclass(frozen=True)
class ScattererField:
    """Scenario-fixed scatterers: positions, extra bounce delay, gain and band tilt."""

    positions: np.ndarray  # (P-1, 2)
    extra_delay: np.ndarray  # (P-1,)
    gain: np.ndarray  # (P-1,) complex
    tilt: np.ndarray  # (P-1, N_B) complex


def scatterer_field(
    scenario: Scenario, bands: Sequence[BandSpec], model_cfg: PathModelConfig
) -> ScattererField:
    n = model_cfg.p_count - 1
    rng = np.random.default_rng([scenario.rng_seed, 0x5CA7, model_cfg.p_count])
    a, m = scenario.area, model_cfg.scatterer_margin_m
    positions = np.column_stack(
        [
            rng.uniform(a.x_min - m, a.x_max + m, n),
            rng.uniform(a.y_min - m, a.y_max + m, n),
        ]
    )
    extra = rng.exponential(model_cfg.excess_delay_mean_s, n)
    power = np.exp(-extra / model_cfg.power_decay_s)
    gain = np.sqrt(power / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))

    # smooth tilt: magnitude and phase interpolate linearly across band centers
    lo, hi = model_cfg.tilt_magnitude
    mag_ends = rng.uniform(lo, hi, (n, 2))
    drift = rng.uniform(-model_cfg.tilt_max_phase, model_cfg.tilt_max_phase, n)
    centers = np.array([b.center_freq for b in bands])
    span = centers.max() - centers.min()
    u = (centers - centers.min()) / span if span > 0 else np.zeros_like(centers)
    mag = mag_ends[:, :1] + (mag_ends[:, 1:] - mag_ends[:, :1]) * u[None, :]
    tilt = mag * np.exp(1j * drift[:, None] * u[None, :])
    return ScattererField(positions, extra, gain, tilt)


def gen_paths(
    scenario: Scenario,
    loc: Location,
    bands: Sequence[BandSpec],
    model_cfg: PathModelConfig,
    rng: np.random.Generator,
) -> PathSet:
    """Paths from the scenario AP to ``loc``; LOS first, then scatterer bounces."""
    if model_cfg.p_count < 1:
        raise ChannelError("p_count must be >= 1")
    if not scenario.area.contains(loc):
        raise ChannelError(f"{loc} outside the scenario area")
    ap = scenario.ap_location.as_array()
    rx = loc.as_array()
    d_los = max(float(np.hypot(*(rx - ap))), model_cfg.min_distance_m)
    if model_cfg.reference_freq_hz is None:
        f_ref = min(b.center_freq for b in bands)
    else:
        f_ref = model_cfg.reference_freq_hz

    n_b = len(bands)
    taus = [d_los / SPEED_OF_LIGHT]
    alphas = [np.full(n_b, 1.0 / d_los, dtype=np.complex128)]
    if model_cfg.p_count > 1:
        sf = scatterer_field(scenario, bands, model_cfg)
        d1 = np.hypot(*(sf.positions - ap).T)
        d2 = np.hypot(*(sf.positions - rx).T)
        geo = np.maximum(d1 + d2, d_los)
        tau_nlos = geo / SPEED_OF_LIGHT + sf.extra_delay
        amp = sf.gain / np.maximum(geo, model_cfg.min_distance_m)
        jitter = model_cfg.gain_jitter * (
            rng.standard_normal(amp.size) + 1j * rng.standard_normal(amp.size)
        ) / math.sqrt(2)
        amp = amp * (1.0 + jitter)
        taus.extend(tau_nlos)
        alphas.extend(amp[:, None] * sf.tilt)
    return PathSet(
        alpha=np.array(alphas),
        tau=np.array(taus),
        band_indices=tuple(b.band_index for b in bands),
        freq_reference=f_ref,
    )


def channel_response(paths: PathSet, band: BandSpec, n_antennas: int = 1) -> CsiVector:
    """Frequency response of ``paths`` on the subcarriers of ``band``."""
    gains = paths.gains(band.band_index)
    f = band.subcarrier_freqs() - paths.freq_reference
    phase = np.exp(-2j * np.pi * np.outer(f, paths.tau))
    h = phase @ gains
    return CsiVector(np.tile(h, n_antennas), band, n_antennas)


def observe_many(
    true_csi: CsiVector,
    snr_db: float,
    corrupt_phase: bool,
    rng: np.random.Generator,
    count: int,
    max_slope: float = 0.1,
) -> np.ndarray:
    """``count`` independent noisy estimates of ``true_csi`` as rows of an array."""
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise ChannelError(f"invalid snr_db {snr_db}")
    h = np.broadcast_to(true_csi.values, (count, true_csi.values.size)).copy()
    if math.isfinite(snr_db):
        noise_power = np.sum(np.abs(true_csi.values) ** 2) / (h.shape[1] * 10 ** (snr_db / 10))
        noise = rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
        h += np.sqrt(noise_power / 2) * noise
    if corrupt_phase:
        k = np.arange(true_csi.band.n_subcarriers)
        a = rng.uniform(-max_slope, max_slope, (count, 1, 1))
        b = rng.uniform(-np.pi, np.pi, (count, 1, 1))
        h = (h.reshape(count, true_csi.n_antennas, -1) * np.exp(1j * (a * k + b))).reshape(count, -1)
    return h


def observe_csi(
    true_csi: CsiVector,
    snr_db: float,
    corrupt_phase: bool,
    rng: np.random.Generator,
    max_slope: float = 0.1,
) -> CsiVector:
    """Noisy estimate of ``true_csi`` with unit pilots at the given SNR.

    Noise power per entry is ``||H||^2 / (len(H) * 10^(snr/10))``; ``snr_db = inf``
    means noiseless.  With ``corrupt_phase`` the vector is multiplied by
    ``exp(j(a k + b))`` per antenna (SFO slope ``a``, CFO offset ``b``).
    """
    return true_csi.replace(observe_many(true_csi, snr_db, corrupt_phase, rng, 1, max_slope)[0])


def sanitize_rows(h: np.ndarray) -> np.ndarray:
    """Remove the least-squares linear phase fit from each row of ``h`` (..., N_sc)."""
    h = np.asarray(h, dtype=np.complex128)
    n = h.shape[-1]
    if n < 2:
        raise ChannelError("phase sanitization needs at least 2 subcarriers")
    phase = np.unwrap(np.angle(h), axis=-1)
    k = np.arange(n, dtype=float)
    kc = k - k.mean()
    slope = (phase @ kc) / (kc @ kc)
    intercept = phase.mean(axis=-1) - slope * k.mean()
    fit = slope[..., None] * k + intercept[..., None]
    return h * np.exp(-1j * fit)


def sanitize_phase(csi: CsiVector) -> CsiVector:
    """Strip the linear phase trend across subcarriers, per antenna."""
    return csi.replace(sanitize_rows(csi.per_antenna()).reshape(-1))
