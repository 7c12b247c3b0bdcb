"""End-to-end experiment: data -> cross-band predictors -> CCNE -> localization.

A run directory holds::

    config.resolved     fully resolved configuration
    log.txt             stage log
    tables/*.csv        result tables, each starting with a provenance comment
    models/*.ckpt       trained predictors and localizers
    figures/*.png       plots rendered from the tables (optional)
    FAILED              present only if a stage raised
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from multiband_loc import baselines, localizer, metrics, vae
from multiband_loc.channel import gen_scenario, sanitize_rows
from multiband_loc.config import ExperimentConfig
from multiband_loc.fingerprint import (
    Database,
    build_database,
    ingest_prototype_csv,
    save_database,
    split_train_test,
)

log = logging.getLogger(__name__)

TABLE_FORMAT_VERSION = 1
PREDICTIVE_SCHEMES = ("vae", "mlp", "ar_ekf")


class ExperimentStageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def derive_seed(master: int, *tags: int) -> int:
    return int(np.random.SeedSequence([master, *tags]).generate_state(1)[0])


def _scheme_tag(name: str) -> int:
    return sum(ord(c) * 31**i for i, c in enumerate(name)) % 100_003


@dataclass
class RunContext:
    cfg: ExperimentConfig
    out: Path
    config_hash: str
    seed: int
    tables: dict[str, list[list]] = field(default_factory=dict)

    def table(self, name: str, header: list[str], rows: list[list]) -> Path:
        path = self.out / "tables" / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            fh.write(
                f"# format_version={TABLE_FORMAT_VERSION} config_hash={self.config_hash} seed={self.seed}\n"
            )
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
        self.tables[name] = [header, *rows]
        return path


def _predictor_fn(scheme: str, model, source_band, target_band, ar_cfg):
    if scheme == "vae":
        return lambda h: vae.predict_array(model, h, "mean")
    if scheme == "mlp":
        return lambda h: baselines.mlp_predict_array(model, h)
    if scheme == "ar_ekf":
        def ar(h):
            rows = np.asarray(h).reshape(-1, source_band.n_subcarriers)
            pred = np.array(
                [baselines.ar_ekf_predict_rows(r, source_band, target_band, ar_cfg)[0] for r in rows]
            )
            return sanitize_rows(pred).reshape(np.asarray(h).shape[0], -1)
        return ar
    raise ValueError(scheme)


def _databases(ctx: RunContext, snr: float, snr_i: int) -> tuple[Database, Database]:
    cfg = ctx.cfg
    bands = cfg.bands.specs()
    if cfg.experiment.csv:
        db = ingest_prototype_csv(cfg.experiment.csv, bands)
        return split_train_test(db, "by_point_role")
    scenario = gen_scenario(cfg.scenario)
    common = dict(
        model_cfg=cfg.paths,
        n_antennas=cfg.bands.n_antennas,
        corrupt_phase=cfg.experiment.corrupt_phase,
    )
    train = build_database(
        scenario, bands, cfg.data.rp_samples, snr, derive_seed(ctx.seed, 1, snr_i), roles=("rp",), **common
    )
    test = build_database(
        scenario, bands, cfg.data.tp_samples, snr, derive_seed(ctx.seed, 2, snr_i), roles=("tp",), **common
    )
    return train, test


def _stage(name: str, ctx: RunContext):
    class _Stage:
        def __enter__(self):
            log.info("stage %s: start", name)
            self.t0 = time.perf_counter()

        def __exit__(self, et, ev, tb):
            if ev is None:
                log.info("stage %s: done in %.1fs", name, time.perf_counter() - self.t0)
                return False
            (ctx.out / "FAILED").write_text(
                f"stage: {name}\n" + "".join(traceback.format_exception(et, ev, tb))
            )
            log.error("stage %s failed: %s", name, ev)
            if isinstance(ev, ExperimentStageError):
                return False
            raise ExperimentStageError(name, ev) from ev

    return _Stage()


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path, dry_run: bool = False) -> Path:
    """Run every stage into ``out_dir``; returns the run directory."""
    cfg.validate()
    out = Path(out_dir)
    if dry_run:
        return out
    for sub in ("tables", "models"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    failed = out / "FAILED"
    if failed.exists():
        failed.unlink()
    seed = cfg.experiment.seed
    ctx = RunContext(cfg, out, cfg.hash(), seed)
    (out / "config.resolved").write_text(
        f"# format_version={TABLE_FORMAT_VERSION} config_hash={ctx.config_hash} seed={seed}\n"
        + cfg.resolved_text()
    )
    handler = logging.FileHandler(out / "log.txt", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    pkg_log = logging.getLogger("multiband_loc")
    pkg_log.addHandler(handler)
    old_level = pkg_log.level
    pkg_log.setLevel(logging.INFO)
    try:
        _run(ctx)
    finally:
        pkg_log.removeHandler(handler)
        pkg_log.setLevel(old_level)
        handler.close()
    return out


def _run(ctx: RunContext) -> None:
    cfg = ctx.cfg
    e = cfg.experiment
    bands = cfg.bands.specs()
    src = e.source_band
    targets = [b.band_index for b in bands if b.band_index != src]
    band_order = tuple(b.band_index for b in bands)
    predictive = [s for s in e.schemes if s in PREDICTIVE_SCHEMES]

    ccne_rows, ccne_samples, loc_rows, cdf_rows, crlb_rows, dump_rows = [], [], [], [], [], []
    for snr_i, snr in enumerate(e.snr_db):
        with _stage(f"database[snr={snr:g}]", ctx):
            train_db, test_db = _databases(ctx, snr, snr_i)
            log.info("train %d records, test %d records", len(train_db), len(test_db))
            if e.save_databases:
                save_database(train_db, ctx.out / "models" / f"train_snr{snr:g}.db")
                save_database(test_db, ctx.out / "models" / f"test_snr{snr:g}.db")

        predictors: dict[str, localizer.BandPredictor] = {}
        with _stage(f"predictors[snr={snr:g}]", ctx):
            for scheme in predictive:
                for tgt in targets:
                    tag = (3, snr_i, _scheme_tag(scheme), tgt)
                    model = None
                    ckpt = ctx.out / "models" / f"{scheme}_snr{snr:g}_{src}to{tgt}.ckpt"
                    if scheme == "vae":
                        model = vae.train_vae(
                            train_db, src, tgt, dataclasses.replace(cfg.vae, seed=derive_seed(ctx.seed, *tag))
                        )
                        vae.save_vae(model, ckpt, {"config_hash": ctx.config_hash, "seed": ctx.seed})
                    elif scheme == "mlp":
                        model = baselines.train_mlp_predictor(
                            train_db, src, tgt, dataclasses.replace(cfg.mlp, seed=derive_seed(ctx.seed, *tag))
                        )
                        baselines.save_mlp_predictor(model, ckpt)
                    name = f"{scheme}:{tgt}"
                    predictors[name] = localizer.BandPredictor(
                        name, src, tgt,
                        _predictor_fn(scheme, model, train_db.band(src), train_db.band(tgt), cfg.ar_ekf),
                    )

        with _stage(f"ccne[snr={snr:g}]", ctx):
            scheme_ccne: dict[str, float] = {}
            for scheme in predictive:
                per_target = []
                for tgt in targets:
                    pred = predictors[f"{scheme}:{tgt}"](test_db.band_csi(src))
                    vals = metrics.ccne_rows(pred, test_db.band_csi(tgt))
                    per_target.append(vals)
                    ccne_rows.append([snr, scheme, tgt, float(np.mean(vals)), len(vals)])
                    ccne_samples.extend(
                        [snr, scheme, tgt, int(sid), float(v)] for sid, v in zip(test_db.sample_ids, vals)
                    )
                    if snr_i == len(e.snr_db) - 1 and scheme == predictive[0]:
                        dump_rows.extend(_channel_dump(scheme, test_db, pred, tgt))
                mean = float(np.mean(np.concatenate(per_target)))
                scheme_ccne[scheme] = mean
                ccne_rows.append([snr, scheme, "all", mean, sum(len(v) for v in per_target)])

        with _stage(f"localization[snr={snr:g}]", ctx):
            lcfg = cfg.localizer
            single_spec = localizer.SpliceSpec.single(src)
            multi_spec = localizer.SpliceSpec.all_measured(band_order)
            single = localizer.train_localizer(
                train_db, single_spec, dataclasses.replace(lcfg, seed=derive_seed(ctx.seed, 4, snr_i, 1))
            )
            multi = localizer.train_localizer(
                train_db, multi_spec, dataclasses.replace(lcfg, seed=derive_seed(ctx.seed, 4, snr_i, 3))
            )
            localizer.save_localizer(single, ctx.out / "models" / f"loc_single_snr{snr:g}.ckpt")
            localizer.save_localizer(multi, ctx.out / "models" / f"loc_multi_snr{snr:g}.ckpt")
            runs = [("single_band", single, single_spec)]
            for scheme in e.schemes:
                if scheme == "passthrough":
                    runs.append(("passthrough", multi, multi_spec))
                else:
                    spec = localizer.SpliceSpec.predicted(
                        src, band_order, {t: f"{scheme}:{t}" for t in targets}
                    )
                    runs.append((scheme, multi, spec))
            for scheme, model, spec in runs:
                rep = localizer.evaluate_localization(model, test_db, spec, predictors, scheme, snr, ctx.seed)
                loc_rows.append([snr, scheme, rep.loc_mse_m2, rep.loc_rmse_m, rep.n_samples])
                cdf_rows.extend([snr, scheme, err, frac] for err, frac in rep.cdf_table())
                rep.write_csv(ctx.out / "tables" / f"loc_samples_snr{snr:g}_{scheme}.csv")

        with _stage(f"crlb[snr={snr:g}]", ctx):
            beta = metrics.effective_bandwidth(bands[src - 1])
            snr_lin = metrics.db_to_linear(snr)
            single_bound = metrics.crlb_single(metrics.CrlbInputs(beta, snr_lin))
            crlb_rows.append([snr, "single_band", beta, 0.0, single_bound, single_bound])
            for scheme in e.schemes:
                if scheme == "passthrough":
                    w = [1.0] * len(targets)
                else:
                    w = [metrics.quality_from_ccne(scheme_ccne[scheme])] * len(targets)
                crlb_rows.append(
                    [snr, scheme, beta, float(sum(w)), single_bound, metrics.crlb_spliced(beta, w, snr_lin)]
                )

    with _stage("tables", ctx):
        ctx.table("ccne", ["snr_db", "scheme", "target_band", "ccne_db_mean", "n"], ccne_rows)
        ctx.table("ccne_samples", ["snr_db", "scheme", "target_band", "sample_id", "ccne_db"], ccne_samples)
        ctx.table("localization", ["snr_db", "scheme", "mse_m2", "rmse_m", "n"], loc_rows)
        ctx.table("localization_cdf", ["snr_db", "scheme", "error_m", "cdf"], cdf_rows)
        ctx.table(
            "crlb",
            ["snr_db", "scheme", "beta_hz", "predicted_weight", "crlb_single_m2", "crlb_spliced_m2"],
            crlb_rows,
        )
        ctx.table(
            "channel_overlay",
            ["scheme", "target_band", "subcarrier", "amp_est", "phase_est", "amp_pred", "phase_pred"],
            dump_rows,
        )

    if e.figures:
        with _stage("figures", ctx):
            from multiband_loc import plotting

            plotting.render_run(ctx.out)


def _channel_dump(scheme: str, test_db: Database, pred: np.ndarray, tgt: int) -> list[list]:
    est = test_db.band_csi(tgt)[0]
    p = np.asarray(pred)[0]
    return [
        [scheme, tgt, k, float(abs(a)), float(np.angle(a)), float(abs(b)), float(np.angle(b))]
        for k, (a, b) in enumerate(zip(est, p))
    ]


def read_table(path: str | Path) -> tuple[dict, list[dict]]:
    """Parse a run table into (provenance, rows as dicts of strings)."""
    with open(path) as fh:
        first = fh.readline().lstrip("# ").split()
        prov = dict(kv.split("=", 1) for kv in first)
        return prov, list(csv.DictReader(fh))
