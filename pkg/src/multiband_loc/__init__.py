"""Multi-band WiFi CSI fingerprint localization with VAE cross-band prediction."""

from multiband_loc.channel import (
    Area,
    BandSpec,
    CsiVector,
    Location,
    PathModelConfig,
    PathSet,
    Scenario,
    ScenarioConfig,
    channel_response,
    default_bands,
    gen_paths,
    gen_scenario,
    observe_csi,
    sanitize_phase,
)

__version__ = "0.1.0"

__all__ = [
    "Area",
    "BandSpec",
    "CsiVector",
    "Location",
    "PathModelConfig",
    "PathSet",
    "Scenario",
    "ScenarioConfig",
    "channel_response",
    "default_bands",
    "gen_paths",
    "gen_scenario",
    "observe_csi",
    "sanitize_phase",
]
