"""Experiment configuration: INI-style key/value file, profiles, hashing.

Schema (all sections and keys optional; missing keys take profile defaults)::

    [experiment]  seed, snr_db (list), schemes (list of vae|mlp|ar_ekf|passthrough),
                  profile (desk|paper), source_band, corrupt_phase, figures,
                  save_databases, csv (prototype CSV path; replaces simulation)
    [scenario]    area (x_min,x_max,y_min,y_max), rp_count, tp_count, ap (x,y)
    [paths]       p_count, power_decay_s, excess_delay_mean_s, tilt_magnitude (lo,hi),
                  tilt_max_phase, scatterer_margin_m, gain_jitter, reference_freq_hz
    [bands]       channels (list), n_subcarriers, bandwidth_hz, n_antennas
    [data]        rp_samples, tp_samples
    [vae]         learning_rate, epochs, beta, batch_size, latent_dim
    [mlp]         learning_rate, epochs, batch_size
    [ar_ekf]      ar_order, process_noise, observation_noise, init_covariance
    [localizer]   learning_rate, epochs, batch_size, hidden (list), dropout_rate

Lists are comma separated.  ``reference_freq_hz = none`` selects the lowest
band center.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from multiband_loc.baselines import ArEkfConfig, MlpTrainConfig
from multiband_loc.channel import WIFI_5G_CHANNELS, BandSpec, PathModelConfig, ScenarioConfig
from multiband_loc.localizer import LocalizerConfig
from multiband_loc.vae import VaeTrainConfig

SCHEMES = ("vae", "mlp", "ar_ekf", "passthrough")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    rp_samples: int = 2000
    tp_samples: int = 400


@dataclass
class BandConfig:
    channels: tuple[int, ...] = (153, 157, 161)
    n_subcarriers: int = 64
    bandwidth_hz: float = 20e6
    n_antennas: int = 1

    def specs(self) -> list[BandSpec]:
        out = []
        for i, ch in enumerate(self.channels):
            if ch in WIFI_5G_CHANNELS:
                freq = WIFI_5G_CHANNELS[ch]
            else:
                freq = 5.0e9 + 5e6 * ch  # 5 GHz channel numbering
            out.append(BandSpec(i + 1, freq, self.bandwidth_hz, self.n_subcarriers, ch))
        return out


@dataclass
class ExperimentSection:
    seed: int = 0
    snr_db: tuple[float, ...] = (10.0, 20.0, 30.0)
    schemes: tuple[str, ...] = SCHEMES
    profile: str = "desk"
    source_band: int = 1
    corrupt_phase: bool = True
    figures: bool = True
    save_databases: bool = False
    csv: str = ""


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    paths: PathModelConfig = field(default_factory=PathModelConfig)
    bands: BandConfig = field(default_factory=BandConfig)
    data: DataConfig = field(default_factory=DataConfig)
    vae: VaeTrainConfig = field(default_factory=VaeTrainConfig)
    mlp: MlpTrainConfig = field(default_factory=MlpTrainConfig)
    ar_ekf: ArEkfConfig = field(default_factory=ArEkfConfig)
    localizer: LocalizerConfig = field(default_factory=LocalizerConfig)

    def validate(self) -> None:
        e = self.experiment
        if not e.schemes:
            raise ConfigError("at least one scheme is required")
        unknown = set(e.schemes) - set(SCHEMES)
        if unknown:
            raise ConfigError(f"unknown schemes {sorted(unknown)}")
        if not e.snr_db:
            raise ConfigError("snr_db list must not be empty")
        if not 1 <= e.source_band <= len(self.bands.channels):
            raise ConfigError(f"source_band {e.source_band} outside 1..{len(self.bands.channels)}")
        if e.profile not in PROFILES:
            raise ConfigError(f"unknown profile {e.profile!r}")
        self.bands.specs()
        if self.scenario.rp_count < 1:
            raise ConfigError("rp_count must be >= 1")

    def resolved_text(self) -> str:
        cp = configparser.ConfigParser()
        for name in SECTIONS:
            obj = getattr(self, name)
            cp[name] = {f.name: _fmt(getattr(obj, f.name)) for f in fields(obj)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def hash(self) -> str:
        return hashlib.sha256(self.resolved_text().encode()).hexdigest()[:16]


SECTIONS = ("experiment", "scenario", "paths", "bands", "data", "vae", "mlp", "ar_ekf", "localizer")

# Table II learning rates/epochs only converge with far more optimizer steps
# than a laptop run allows; the desk profile trades them for larger steps.
PROFILES = {
    "desk": {
        "data": {"rp_samples": 2000, "tp_samples": 400},
        "vae": {"learning_rate": 1e-3, "epochs": 20, "beta": 0.1, "batch_size": 128},
        "mlp": {"learning_rate": 1e-3, "epochs": 20, "batch_size": 128},
        "localizer": {"learning_rate": 1e-3, "epochs": 30, "batch_size": 128},
    },
    "paper": {
        "data": {"rp_samples": 10000, "tp_samples": 2000},
        "vae": {"learning_rate": 1e-5, "epochs": 50, "beta": 0.1, "batch_size": 128},
        "mlp": {"learning_rate": 1e-5, "epochs": 50, "batch_size": 128},
        "localizer": {"learning_rate": 1e-6, "epochs": 90, "batch_size": 128},
    },
}


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text: str, like):
    text = text.strip()
    if isinstance(like, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if isinstance(like, tuple):
        items = [t for t in (s.strip() for s in text.split(",")) if t]
        proto = like[0] if like else ""
        return tuple(_parse(t, proto) for t in items)
    if like is None or isinstance(like, float):
        if text.lower() == "none":
            return None
        return float(text)
    if isinstance(like, int):
        return int(text)
    return text


def _replace(obj, values: dict):
    known = {f.name: f for f in fields(obj)}
    kwargs = {}
    for key, text in values.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{type(obj).__name__}]")
        current = getattr(obj, key)
        try:
            kwargs[key] = text if not isinstance(text, str) else _parse(text, current)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    return dataclasses.replace(obj, **kwargs)


def load_config(path: str | Path | None = None, overrides: dict[str, dict] | None = None) -> ExperimentConfig:
    """Read a config file (optional) and apply ``{section: {key: value}}`` overrides.

    Profile defaults sit under file values, which sit under overrides.
    """
    cp = configparser.ConfigParser()
    if path is not None:
        if not Path(path).exists():
            raise FileNotFoundError(path)
        cp.read(path)
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
    layered: dict[str, dict] = {s: dict(cp[s]) if cp.has_section(s) else {} for s in SECTIONS}
    for section, vals in (overrides or {}).items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        layered[section].update({k: v for k, v in vals.items() if v is not None})

    cfg = ExperimentConfig()
    cfg.experiment = _replace(cfg.experiment, layered["experiment"])
    if cfg.experiment.profile not in PROFILES:
        raise ConfigError(f"unknown profile {cfg.experiment.profile!r}")
    for section, vals in PROFILES[cfg.experiment.profile].items():
        setattr(cfg, section, _replace(getattr(cfg, section), vals))
    if "seed" not in layered["scenario"]:
        layered["scenario"]["seed"] = cfg.experiment.seed
    for section in SECTIONS[1:]:
        setattr(cfg, section, _replace(getattr(cfg, section), layered[section]))
    cfg.validate()
    return cfg
