"""Band splicing and MLP location regression."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from multiband_loc import nn
from multiband_loc.channel import Area, Location
from multiband_loc.features import Standardizer, to_real
from multiband_loc.fingerprint import Database, FingerprintRecord
from multiband_loc.metrics import MetricsReport
from multiband_loc.vae import TrainingDivergedError


class SpliceError(KeyError):
    pass


@dataclass(frozen=True)
class BandPredictor:
    """Named cross-band predictor: complex source rows -> complex target rows."""

    name: str
    source: int
    target: int
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, h: np.ndarray) -> np.ndarray:
        return self.fn(h)


@dataclass(frozen=True)
class SpliceSpec:
    """Which bands feed the localizer and where each one comes from.

    ``per_band_source`` maps band -> "measured", "passthrough" or
    "predicted:<model_id>".
    """

    band_order: tuple[int, ...]
    per_band_source: Mapping[int, str]

    def __post_init__(self):
        if len(set(self.band_order)) != len(self.band_order) or not self.band_order:
            raise ValueError(f"band_order must list distinct bands, got {self.band_order}")
        if set(self.per_band_source) != set(self.band_order):
            raise ValueError("per_band_source must cover band_order exactly")
        for src in self.per_band_source.values():
            if src not in ("measured", "passthrough") and not src.startswith("predicted:"):
                raise ValueError(f"unknown band source {src!r}")

    @classmethod
    def single(cls, band: int) -> "SpliceSpec":
        return cls((band,), {band: "measured"})

    @classmethod
    def all_measured(cls, bands) -> "SpliceSpec":
        bands = tuple(bands)
        return cls(bands, {b: ("measured" if i == 0 else "passthrough") for i, b in enumerate(bands)})

    @classmethod
    def predicted(cls, measured: int, bands, model_ids: Mapping[int, str]) -> "SpliceSpec":
        bands = tuple(bands)
        return cls(
            bands, {b: ("measured" if b == measured else f"predicted:{model_ids[b]}") for b in bands}
        )

    def to_dict(self) -> dict:
        return {"band_order": list(self.band_order), "sources": {str(k): v for k, v in self.per_band_source.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "SpliceSpec":
        return cls(tuple(d["band_order"]), {int(k): v for k, v in d["sources"].items()})


def _record_db(record: FingerprintRecord, n_antennas: int) -> Database:
    bands = [c.band for c in record.csi.values()]
    return Database(
        bands=bands,
        locations=np.array([[record.location.x, record.location.y]]),
        csi=np.stack([c.values for c in record.csi.values()])[None],
        sample_ids=[record.sample_id],
        point_ids=[0],
        roles=[0],
        n_antennas=n_antennas,
    )


def splice_raw(
    data: Database | FingerprintRecord,
    spec: SpliceSpec,
    predictors: Mapping[str, BandPredictor] | None = None,
) -> np.ndarray:
    """Unnormalized spliced features: per-band [Re; Im] blocks in ``band_order``."""
    if isinstance(data, FingerprintRecord):
        n_ant = next(iter(data.csi.values())).n_antennas
        data = _record_db(data, n_ant)
    predictors = predictors or {}
    blocks = []
    for band in spec.band_order:
        src = spec.per_band_source[band]
        if src in ("measured", "passthrough"):
            try:
                h = data.band_csi(band)
            except KeyError:
                raise SpliceError(f"band {band} not available in the data") from None
        else:
            model_id = src.split(":", 1)[1]
            if model_id not in predictors:
                raise SpliceError(f"no predictor {model_id!r} for band {band}")
            pred = predictors[model_id]
            if pred.target != band:
                raise SpliceError(f"predictor {model_id!r} targets band {pred.target}, not {band}")
            try:
                h = pred(data.band_csi(pred.source))
            except KeyError:
                raise SpliceError(f"source band {pred.source} not available") from None
        blocks.append(to_real(h))
    return np.concatenate(blocks, axis=1)


@dataclass
class LocalizerConfig:
    learning_rate: float = 1e-6
    epochs: int = 90
    batch_size: int = 128
    hidden: tuple[int, ...] = (256, 128, 64)
    dropout_rate: float = 0.1
    seed: int = 0


@dataclass
class LocalizerModel:
    mlp: nn.MlpModel
    norm: Standardizer
    area: Area
    spec: SpliceSpec
    history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.mlp.out_dim != 2:
            raise nn.ShapeError("localizer must output 2 coordinates")


def _area_of(db: Database) -> Area:
    sc = db.metadata.get("scenario")
    if sc:
        return Area(*sc["area"])
    lo, hi = db.locations.min(axis=0), db.locations.max(axis=0)
    return Area(lo[0], max(hi[0], lo[0] + 1e-9), lo[1], max(hi[1], lo[1] + 1e-9))


def _to_unit(area: Area, xy: np.ndarray) -> np.ndarray:
    return (xy - [area.x_min, area.y_min]) / [area.width, area.height]


def _from_unit(area: Area, u: np.ndarray) -> np.ndarray:
    return u * [area.width, area.height] + [area.x_min, area.y_min]


def splice_bands(
    data: Database | FingerprintRecord,
    spec: SpliceSpec,
    norm: Standardizer | None = None,
    predictors: Mapping[str, BandPredictor] | None = None,
) -> np.ndarray:
    raw = splice_raw(data, spec, predictors)
    return raw if norm is None else norm.apply(raw)


def train_localizer(
    train_db: Database,
    spec: SpliceSpec,
    cfg: LocalizerConfig = LocalizerConfig(),
    predictors: Mapping[str, BandPredictor] | None = None,
    area: Area | None = None,
    train_on: str = "measured",
) -> LocalizerModel:
    """Fit the localization MLP on spliced features by minimizing squared
    coordinate error (targets scaled to the unit square).

    With ``train_on="measured"`` the fingerprint database supplies every band
    in ``spec.band_order``; the spec's predicted sources only apply when
    localizing.  ``train_on="spec"`` builds training features through the
    spec's own sources instead.
    """
    area = area or _area_of(train_db)
    if train_on == "measured":
        raw = splice_raw(train_db, SpliceSpec.all_measured(spec.band_order))
    elif train_on == "spec":
        raw = splice_raw(train_db, spec, predictors)
    else:
        raise ValueError(f"unknown train_on {train_on!r}")
    norm = Standardizer.fit(raw)
    x = norm.apply(raw)
    y = _to_unit(area, train_db.locations)
    rng = np.random.default_rng(cfg.seed)
    net = nn.build_mlp([x.shape[1], *cfg.hidden, 2], "relu", rng, dropout_rate=cfg.dropout_rate)
    model = LocalizerModel(net, norm, area, spec)
    net.mode = "train"
    params = net.parameters()
    state = nn.AdamState(learning_rate=cfg.learning_rate)
    n = len(x)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            pred, cache = nn.forward(net, x[idx], rng)
            err = pred - y[idx]
            loss = float(np.mean(np.sum(err**2, axis=1)))
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch)
            try:
                nn.adam_step(params, nn.backward(net, cache, 2.0 * err / len(idx)).grads, state)
            except nn.NonFiniteError:
                raise TrainingDivergedError(epoch, "gradient") from None
            nn.mark_updated(net)
            total += loss * len(idx)
        model.history.append(total / n)
    net.mode = "infer"
    return model


def localize_array(model: LocalizerModel, features: np.ndarray) -> np.ndarray:
    """Clamped (records, 2) location estimates from normalized features."""
    features = np.atleast_2d(features)
    if features.shape[1] != model.mlp.in_dim:
        raise nn.ShapeError(f"feature width {features.shape[1]} != {model.mlp.in_dim}")
    mode, model.mlp.mode = model.mlp.mode, "infer"
    try:
        out, _ = nn.forward(model.mlp, features)
    finally:
        model.mlp.mode = mode
    return model.area.clamp(_from_unit(model.area, out))


def localize(model: LocalizerModel, features: np.ndarray) -> Location:
    xy = localize_array(model, np.asarray(features).reshape(1, -1))[0]
    return Location(float(xy[0]), float(xy[1]))


def evaluate_localization(
    model: LocalizerModel,
    test_db: Database,
    spec: SpliceSpec | None = None,
    predictors: Mapping[str, BandPredictor] | None = None,
    scheme: str = "",
    snr_db: float = math.nan,
    seed: int | None = None,
) -> MetricsReport:
    spec = spec or model.spec
    est = localize_array(model, splice_bands(test_db, spec, model.norm, predictors))
    return MetricsReport.from_localization(scheme, snr_db, seed, est, test_db.locations)


def save_localizer(model: LocalizerModel, path: str | Path) -> None:
    a = model.area
    nn.save_checkpoint(
        path,
        "localizer",
        {"mlp": model.mlp},
        {"area": [a.x_min, a.x_max, a.y_min, a.y_max], "spec": model.spec.to_dict(), "history": model.history},
        {"norm_mean": model.norm.mean, "norm_std": model.norm.std},
    )


def load_localizer(path: str | Path) -> LocalizerModel:
    kind, nets, meta, extra = nn.load_checkpoint(path)
    if kind != "localizer":
        raise ValueError(f"{path} holds a {kind!r} checkpoint, not a localizer")
    return LocalizerModel(
        nets["mlp"],
        Standardizer(extra["norm_mean"], extra["norm_std"]),
        Area(*meta["area"]),
        SpliceSpec.from_dict(meta["spec"]),
        meta["history"],
    )
