"""Fingerprint databases of (location, multi-band CSI) records."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from multiband_loc import binio
from multiband_loc.binio import ChecksumError, TruncatedFileError, VersionMismatchError
from multiband_loc.channel import (
    BandSpec,
    CsiVector,
    Location,
    PathModelConfig,
    Scenario,
    channel_response,
    gen_paths,
    observe_many,
    sanitize_rows,
)

log = logging.getLogger(__name__)

DB_MAGIC = b"MBLOCDB"
DB_VERSION = 1

ROLE_CODES = {"rp": 0, "tp": 1}
ROLE_NAMES = {v: k for k, v in ROLE_CODES.items()}

CSV_COLUMNS = ["sample_id", "x", "y", "band_index", "antenna", "subcarrier", "re", "im"]

__all__ = [
    "ChecksumError",
    "Database",
    "FingerprintRecord",
    "IngestError",
    "TruncatedFileError",
    "VersionMismatchError",
    "build_database",
    "ingest_prototype_csv",
    "load_database",
    "save_database",
    "split_train_test",
]


class IngestError(ValueError):
    pass


@dataclass
class FingerprintRecord:
    location: Location
    csi: dict[int, CsiVector]
    sample_id: int
    role: str = "rp"


@dataclass
class Database:
    """Immutable-by-convention columnar store of fingerprint records.

    ``csi`` has shape (records, bands, antennas * subcarriers), antenna-major,
    phase-sanitized.
    """

    bands: list[BandSpec]
    locations: np.ndarray
    csi: np.ndarray
    sample_ids: np.ndarray
    point_ids: np.ndarray
    roles: np.ndarray
    n_antennas: int = 1
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n_sc = {b.n_subcarriers for b in self.bands}
        if len(n_sc) > 1:
            raise ValueError("all bands must share one subcarrier count")
        r = len(self.sample_ids)
        width = self.bands[0].n_subcarriers * self.n_antennas if self.bands else 0
        self.locations = np.asarray(self.locations, dtype=float).reshape(r, 2)
        self.csi = np.asarray(self.csi, dtype=np.complex128).reshape(r, len(self.bands), width)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        self.point_ids = np.asarray(self.point_ids, dtype=np.int64)
        self.roles = np.asarray(self.roles, dtype=np.uint8)

    def __len__(self) -> int:
        return len(self.sample_ids)

    @property
    def n_subcarriers(self) -> int:
        return self.bands[0].n_subcarriers

    @property
    def band_indices(self) -> list[int]:
        return [b.band_index for b in self.bands]

    def band_position(self, key: int) -> int:
        for i, b in enumerate(self.bands):
            if b.matches(key):
                return i
        raise KeyError(f"band {key} not in database (bands {self.band_indices})")

    def band(self, key: int) -> BandSpec:
        return self.bands[self.band_position(key)]

    def band_csi(self, key: int) -> np.ndarray:
        """All records' CSI on one band, shape (records, antennas * subcarriers)."""
        return self.csi[:, self.band_position(key)]

    def record(self, i: int) -> FingerprintRecord:
        return FingerprintRecord(
            location=Location(*self.locations[i]),
            csi={
                b.band_index: CsiVector(self.csi[i, j], b, self.n_antennas)
                for j, b in enumerate(self.bands)
            },
            sample_id=int(self.sample_ids[i]),
            role=ROLE_NAMES.get(int(self.roles[i]), "rp"),
        )

    @property
    def records(self) -> Iterator[FingerprintRecord]:
        return (self.record(i) for i in range(len(self)))

    def subset(self, idx: np.ndarray, **meta) -> "Database":
        return Database(
            bands=list(self.bands),
            locations=self.locations[idx],
            csi=self.csi[idx],
            sample_ids=self.sample_ids[idx],
            point_ids=self.point_ids[idx],
            roles=self.roles[idx],
            n_antennas=self.n_antennas,
            metadata={**self.metadata, **meta},
        )

    def info(self) -> dict:
        return {
            "records": len(self),
            "bands": [b.channel or b.band_index for b in self.bands],
            "n_subcarriers": self.n_subcarriers if self.bands else 0,
            "n_antennas": self.n_antennas,
            "points": int(np.unique(self.point_ids).size),
            "roles": {name: int(np.sum(self.roles == code)) for name, code in ROLE_CODES.items()},
            "metadata": self.metadata,
        }


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def build_database(
    scenario: Scenario,
    bands: Sequence[BandSpec],
    samples_per_point: int | Mapping[str, int],
    snr_db: float,
    rng: np.random.Generator | int,
    *,
    roles: Sequence[str] = ("rp",),
    model_cfg: PathModelConfig = PathModelConfig(),
    n_antennas: int = 1,
    corrupt_phase: bool = True,
) -> Database:
    """Simulate noisy, phase-sanitized CSI fingerprints for the scenario's points.

    Path sets depend only on the scenario (its seed and the point), so two
    databases built at different SNRs share the same underlying channels;
    ``rng`` drives the measurement noise and phase offsets only.
    """
    if isinstance(samples_per_point, Mapping):
        counts = dict(samples_per_point)
        roles = list(counts)
    else:
        counts = {role: samples_per_point for role in roles}
    if any(c < 1 for c in counts.values()):
        raise ValueError("samples_per_point must be >= 1")
    noise_rng = _as_rng(rng)
    seed_meta = rng if isinstance(rng, (int, np.integer)) else None
    bands = list(bands)

    locs, csis, pids, role_col = [], [], [], []
    for role in roles:
        code = ROLE_CODES[role]
        for p, loc in enumerate(scenario.points(role)):
            path_rng = np.random.default_rng([scenario.rng_seed, 0xBA7, code, p])
            paths = gen_paths(scenario, loc, bands, model_cfg, path_rng)
            n = counts[role]
            per_band = []
            for band in bands:
                truth = channel_response(paths, band, n_antennas)
                obs = observe_many(truth, snr_db, corrupt_phase, noise_rng, n)
                obs = sanitize_rows(obs.reshape(n, n_antennas, -1)).reshape(n, -1)
                per_band.append(obs)
            csis.append(np.stack(per_band, axis=1))
            locs.append(np.tile([loc.x, loc.y], (n, 1)))
            pids.append(np.full(n, code * 1_000_000 + p))
            role_col.append(np.full(n, code))
    if csis:
        csi = np.concatenate(csis)
        locations = np.concatenate(locs)
        point_ids = np.concatenate(pids)
        role_arr = np.concatenate(role_col)
    else:
        csi = np.zeros((0, len(bands), bands[0].n_subcarriers * n_antennas), np.complex128)
        locations = np.zeros((0, 2))
        point_ids = role_arr = np.zeros(0, np.int64)
    return Database(
        bands=bands,
        locations=locations,
        csi=csi,
        sample_ids=np.arange(len(csi)),
        point_ids=point_ids,
        roles=role_arr,
        n_antennas=n_antennas,
        metadata={
            "source": "simulated",
            "seed": None if seed_meta is None else int(seed_meta),
            "snr_db": snr_db,
            "samples_per_point": counts,
            "scenario": scenario.summary(),
            "path_model": {
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in model_cfg.__dict__.items()
            },
        },
    )


def _band_to_dict(b: BandSpec) -> dict:
    return {
        "band_index": b.band_index,
        "center_freq": b.center_freq,
        "bandwidth": b.bandwidth,
        "n_subcarriers": b.n_subcarriers,
        "channel": b.channel,
    }


def save_database(db: Database, path: str | Path) -> None:
    meta = {
        "bands": [_band_to_dict(b) for b in db.bands],
        "n_antennas": db.n_antennas,
        "metadata": db.metadata,
    }
    binio.dump(
        path,
        DB_MAGIC,
        DB_VERSION,
        meta,
        {
            "locations": db.locations,
            "csi": db.csi,
            "sample_ids": db.sample_ids,
            "point_ids": db.point_ids,
            "roles": db.roles,
        },
    )


def load_database(path: str | Path) -> Database:
    meta, arrays = binio.load(path, DB_MAGIC, DB_VERSION)
    return Database(
        bands=[BandSpec(**b) for b in meta["bands"]],
        n_antennas=meta["n_antennas"],
        metadata=meta["metadata"],
        **arrays,
    )


def ingest_prototype_csv(
    path: str | Path, bands: Sequence[BandSpec], n_antennas: int | None = None
) -> Database:
    """Load exported per-subcarrier CSI rows into a sanitized database.

    Rows are grouped by ``sample_id``; a record must cover every declared band,
    antenna and subcarrier or it is dropped with a warning.  ``band_index`` may
    hold either the band number n or the WiFi channel number.  An optional
    trailing ``role`` column (``rp``/``tp``) tags points for role-based splits.
    """
    bands = list(bands)
    n_sc = bands[0].n_subcarriers
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: missing header") from None
        has_role = header == CSV_COLUMNS + ["role"]
        if header != CSV_COLUMNS and not has_role:
            raise IngestError(f"{path}: expected columns {CSV_COLUMNS}, got {header}")
        groups: dict[int, dict] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                sid, band_key, ant, sc = (int(row[i]) for i in (0, 3, 4, 5))
                x, y, re, im = (float(row[i]) for i in (1, 2, 6, 7))
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in (x, y, re, im)):
                raise IngestError(f"{path}:{lineno}: non-finite value")
            g = groups.setdefault(
                sid, {"xy": (x, y), "cells": {}, "role": row[8].strip() if has_role else "rp"}
            )
            if g["xy"] != (x, y):
                raise IngestError(f"{path}:{lineno}: sample {sid} changes location")
            g["cells"][(band_key, ant, sc)] = complex(re, im)

    if n_antennas is None:
        n_antennas = 1 + max(
            (k[1] for g in groups.values() for k in g["cells"]), default=0
        )
    present = {k[0] for g in groups.values() for k in g["cells"]}
    for b in bands:
        if groups and not any(b.matches(k) for k in present):
            raise IngestError(f"{path}: no rows for band {b.channel or b.band_index}")

    keep_sid, keep_xy, keep_csi, keep_role = [], [], [], []
    rejected = 0
    for sid in sorted(groups):
        g = groups[sid]
        arr = np.empty((len(bands), n_antennas, n_sc), np.complex128)
        complete = True
        for j, b in enumerate(bands):
            keys = [k for k in (b.band_index, b.channel) if k is not None]
            for a in range(n_antennas):
                for s in range(n_sc):
                    v = next((g["cells"][(k, a, s)] for k in keys if (k, a, s) in g["cells"]), None)
                    if v is None:
                        complete = False
                        break
                    arr[j, a, s] = v
                if not complete:
                    break
            if not complete:
                break
        if not complete:
            rejected += 1
            log.warning("%s: sample %d lacks full band/antenna/subcarrier coverage; rejected", path, sid)
            continue
        keep_sid.append(sid)
        keep_xy.append(g["xy"])
        keep_csi.append(sanitize_rows(arr).reshape(len(bands), -1))
        keep_role.append(ROLE_CODES.get(g["role"], 0))

    xy = np.array(keep_xy, dtype=float).reshape(-1, 2)
    _, point_ids = np.unique(xy, axis=0, return_inverse=True) if len(xy) else (None, np.zeros(0))
    return Database(
        bands=bands,
        locations=xy,
        csi=np.array(keep_csi).reshape(len(keep_sid), len(bands), n_sc * n_antennas),
        sample_ids=np.array(keep_sid, dtype=np.int64),
        point_ids=np.asarray(point_ids).reshape(-1),
        roles=np.array(keep_role, dtype=np.uint8),
        n_antennas=n_antennas,
        metadata={"source": "prototype_csv", "path": str(path), "rejected": rejected},
    )


def split_train_test(
    db: Database, policy: str = "by_point_role", fraction: float = 0.5, seed: int = 0
) -> tuple[Database, Database]:
    """Disjoint train/test split.

    ``by_point_role`` sends RP records to train and TP records to test;
    ``random_fraction`` puts a seeded random ``fraction`` of records in train.
    """
    if policy == "by_point_role":
        train = np.flatnonzero(db.roles == ROLE_CODES["rp"])
        test = np.flatnonzero(db.roles != ROLE_CODES["rp"])
    elif policy == "random_fraction":
        if not 0.0 < fraction < 1.0:
            raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
        perm = np.random.default_rng(seed).permutation(len(db))
        cut = int(round(fraction * len(db)))
        train, test = np.sort(perm[:cut]), np.sort(perm[cut:])
    else:
        raise ValueError(f"unknown split policy {policy!r}")
    return db.subset(train, split="train"), db.subset(test, split="test")
