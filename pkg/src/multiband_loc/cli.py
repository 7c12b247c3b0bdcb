"""Command-line entry point: ``mbloc <group> <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from multiband_loc import baselines, localizer, metrics, vae
from multiband_loc.binio import FormatError
from multiband_loc.channel import ChannelError, gen_scenario, sanitize_rows
from multiband_loc.config import ConfigError, load_config
from multiband_loc.experiment import ExperimentStageError, TABLE_FORMAT_VERSION, run_experiment
from multiband_loc.fingerprint import (
    IngestError,
    build_database,
    ingest_prototype_csv,
    load_database,
    save_database,
    split_train_test,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING_FILE = 4
EXIT_FORMAT = 5
EXIT_DATA = 6
EXIT_DIVERGED = 7
EXIT_STAGE = 8

log = logging.getLogger("multiband_loc.cli")


def _overrides(args) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out.setdefault(section.strip(), {})[name.strip()] = value
    return out


def _cfg(args, extra: dict[str, dict] | None = None):
    ov = _overrides(args)
    for section, vals in (extra or {}).items():
        ov.setdefault(section, {}).update({k: v for k, v in vals.items() if v is not None})
    return load_config(getattr(args, "config", None), ov)


def _provenance(fh, **kw) -> None:
    fields = " ".join(f"{k}={v}" for k, v in {"format_version": TABLE_FORMAT_VERSION, **kw}.items())
    fh.write(f"# {fields}\n")


# -- db ---------------------------------------------------------------------------


def cmd_db_build(args) -> int:
    cfg = _cfg(args, {"experiment": {"seed": args.seed}})
    scenario = gen_scenario(cfg.scenario)
    roles = ("rp", "tp") if args.role == "all" else (args.role,)
    counts = {"rp": args.samples or cfg.data.rp_samples, "tp": args.tp_samples or cfg.data.tp_samples}
    db = build_database(
        scenario,
        cfg.bands.specs(),
        {r: counts[r] for r in roles},
        args.snr_db,
        cfg.experiment.seed,
        model_cfg=cfg.paths,
        n_antennas=cfg.bands.n_antennas,
        corrupt_phase=cfg.experiment.corrupt_phase,
    )
    save_database(db, args.out)
    print(json.dumps({"records": len(db), "path": str(args.out)}))
    return EXIT_OK


def cmd_db_ingest(args) -> int:
    cfg = _cfg(args)
    db = ingest_prototype_csv(args.csv, cfg.bands.specs())
    save_database(db, args.out)
    print(json.dumps({"records": len(db), "rejected": db.metadata["rejected"]}))
    return EXIT_OK


def cmd_db_split(args) -> int:
    db = load_database(args.db)
    train, test = split_train_test(db, args.policy, args.fraction, args.seed)
    save_database(train, args.train_out)
    save_database(test, args.test_out)
    print(json.dumps({"train": len(train), "test": len(test)}))
    return EXIT_OK


def cmd_db_info(args) -> int:
    print(json.dumps(load_database(args.db).info(), indent=2, sort_keys=True, default=str))
    return EXIT_OK


# -- vae / baselines --------------------------------------------------------------


def _train_overrides(args) -> dict:
    return {
        "learning_rate": args.lr,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "seed": args.seed,
    }


def cmd_vae_train(args) -> int:
    import dataclasses

    cfg = _cfg(args)
    tc = dataclasses.replace(
        cfg.vae,
        **{k: v for k, v in {**_train_overrides(args), "beta": args.beta, "latent_dim": args.latent_dim}.items() if v is not None},
    )
    db = load_database(args.db)
    model = vae.train_vae(db, args.source, args.target, tc)
    vae.save_vae(model, args.out, {"config_hash": cfg.hash()})
    print(json.dumps({"final_loss": model.history[-1] if model.history else None, "path": str(args.out)}))
    return EXIT_OK


def _write_predictions(path, db, pred, **prov) -> None:
    with open(path, "w", newline="") as fh:
        _provenance(fh, **prov)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "index", "re", "im"])
        for sid, row in zip(db.sample_ids, pred):
            for k, v in enumerate(row):
                w.writerow([int(sid), k, repr(float(v.real)), repr(float(v.imag))])


def _load_predictor(path):
    from multiband_loc import nn

    kind, *_ = nn.load_checkpoint(path)
    if kind == "vae":
        m = vae.load_vae(path)
        return m, lambda h: vae.predict_array(m, h, "mean")
    if kind == "mlp_predictor":
        m = baselines.load_mlp_predictor(path)
        return m, lambda h: baselines.mlp_predict_array(m, h)
    raise ValueError(f"{path} is a {kind!r} checkpoint, not a band predictor")


def cmd_vae_predict(args) -> int:
    model = vae.load_vae(args.model)
    db = load_database(args.db)
    pred = vae.predict_array(model, db.band_csi(model.source_band.band_index), args.mode, np.random.default_rng(args.seed))
    _write_predictions(args.out, db, pred, model=Path(args.model).name, mode=args.mode)
    return EXIT_OK


def _eval_json(model, fn, db) -> dict:
    vals = metrics.ccne_rows(fn(db.band_csi(model.source_band.band_index)), db.band_csi(model.target_band.band_index))
    return {
        "source_band": model.source_band.band_index,
        "target_band": model.target_band.band_index,
        "ccne_db_mean": float(np.mean(vals)),
        "n": int(vals.size),
    }


def cmd_predictor_eval(args) -> int:
    model, fn = _load_predictor(args.model)
    print(json.dumps(_eval_json(model, fn, load_database(args.db))))
    return EXIT_OK


def cmd_mlp_train(args) -> int:
    import dataclasses

    cfg = _cfg(args)
    tc = dataclasses.replace(cfg.mlp, **{k: v for k, v in _train_overrides(args).items() if v is not None})
    model = baselines.train_mlp_predictor(load_database(args.db), args.source, args.target, tc)
    baselines.save_mlp_predictor(model, args.out)
    print(json.dumps({"final_loss": model.history[-1] if model.history else None, "path": str(args.out)}))
    return EXIT_OK


def cmd_ar_predict(args) -> int:
    cfg = _cfg(args)
    ar = baselines.ArEkfConfig(
        args.ar_order or cfg.ar_ekf.ar_order,
        cfg.ar_ekf.process_noise,
        cfg.ar_ekf.observation_noise,
        cfg.ar_ekf.init_covariance,
    )
    db = load_database(args.db)
    src, tgt = db.band(args.source), db.band(args.target)
    rows = db.band_csi(args.source).reshape(-1, src.n_subcarriers)
    pred = np.array([baselines.ar_ekf_predict_rows(r, src, tgt, ar)[0] for r in rows])
    pred = sanitize_rows(pred).reshape(len(db), -1)
    if args.out:
        _write_predictions(args.out, db, pred, scheme="ar_ekf", ar_order=ar.ar_order)
    vals = metrics.ccne_rows(pred, db.band_csi(args.target))
    print(json.dumps({"ccne_db_mean": float(np.mean(vals)), "n": int(vals.size)}))
    return EXIT_OK


# -- localizer ----------------------------------------------------------------------


def _bands_arg(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def cmd_loc_train(args) -> int:
    import dataclasses

    cfg = _cfg(args)
    lc = dataclasses.replace(cfg.localizer, **{k: v for k, v in _train_overrides(args).items() if v is not None})
    spec = localizer.SpliceSpec.all_measured(_bands_arg(args.bands))
    model = localizer.train_localizer(load_database(args.db), spec, lc)
    localizer.save_localizer(model, args.out)
    print(json.dumps({"final_loss": model.history[-1] if model.history else None, "path": str(args.out)}))
    return EXIT_OK


def _loc_inputs(args):
    model = localizer.load_localizer(args.model)
    db = load_database(args.db)
    spec, predictors = model.spec, {}
    for item in args.predictor or []:
        band_s, _, path = item.partition("=")
        band = int(band_s)
        pm, fn = _load_predictor(path)
        name = f"p{band}"
        predictors[name] = localizer.BandPredictor(name, pm.source_band.band_index, band, fn)
    if predictors:
        sources = dict(spec.per_band_source)
        for name, p in predictors.items():
            sources[p.target] = f"predicted:{name}"
        spec = localizer.SpliceSpec(spec.band_order, sources)
    return model, db, spec, predictors


def cmd_loc_eval(args) -> int:
    model, db, spec, predictors = _loc_inputs(args)
    rep = localizer.evaluate_localization(model, db, spec, predictors, args.scheme)
    if args.json:
        rep.write_json(args.json)
    if args.csv:
        rep.write_csv(args.csv)
    print(json.dumps(rep.aggregates(), sort_keys=True))
    return EXIT_OK


def cmd_loc_predict(args) -> int:
    model, db, spec, predictors = _loc_inputs(args)
    est = localizer.localize_array(model, localizer.splice_bands(db, spec, model.norm, predictors))
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        _provenance(out, model=Path(args.model).name)
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["sample_id", "x", "y"])
        for sid, (x, y) in zip(db.sample_ids, est):
            w.writerow([int(sid), repr(float(x)), repr(float(y))])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


# -- metrics / experiment -----------------------------------------------------------


def cmd_metrics_crlb(args) -> int:
    snr = metrics.db_to_linear(args.snr_db)
    if args.weight is None:
        value = metrics.crlb_single(metrics.CrlbInputs(args.beta_hz, snr))
    else:
        value = metrics.crlb_spliced(args.beta_hz, args.weight, snr)
    print(repr(value))
    return EXIT_OK


def cmd_experiment_run(args) -> int:
    extra = {
        "experiment": {
            "seed": args.seed,
            "profile": args.profile,
            "snr_db": args.snr_db,
            "schemes": args.schemes,
            "figures": "false" if args.no_figures else None,
        }
    }
    cfg = _cfg(args, extra)
    out = run_experiment(cfg, args.out, dry_run=args.dry_run)
    if args.dry_run:
        print(json.dumps({"valid": True, "config_hash": cfg.hash()}))
    else:
        print(json.dumps({"run_dir": str(out), "config_hash": cfg.hash()}))
    return EXIT_OK


def _common(p, config=True):
    if config:
        p.add_argument("--config", help="key/value config file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")


def _train_flags(p):
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mbloc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    groups = parser.add_subparsers(dest="group", required=True)

    db = groups.add_parser("db", help="fingerprint databases").add_subparsers(dest="cmd", required=True)
    p = db.add_parser("build")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--role", choices=("rp", "tp", "all"), default="all")
    p.add_argument("--samples", type=int, help="samples per reference point")
    p.add_argument("--tp-samples", type=int, help="samples per test point")
    p.add_argument("--snr-db", type=float, default=30.0)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_db_build)
    p = db.add_parser("ingest")
    _common(p)
    p.add_argument("csv")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_db_ingest)
    p = db.add_parser("split")
    p.add_argument("db")
    p.add_argument("--policy", choices=("by_point_role", "random_fraction"), default="by_point_role")
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.set_defaults(fn=cmd_db_split)
    p = db.add_parser("info")
    p.add_argument("db")
    p.set_defaults(fn=cmd_db_info)

    v = groups.add_parser("vae", help="VAE cross-band predictor").add_subparsers(dest="cmd", required=True)
    p = v.add_parser("train")
    _common(p)
    p.add_argument("--db", required=True)
    p.add_argument("--source", type=int, default=1)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--out", required=True)
    _train_flags(p)
    p.add_argument("--beta", type=float)
    p.add_argument("--latent-dim", type=int)
    p.set_defaults(fn=cmd_vae_train)
    p = v.add_parser("predict")
    p.add_argument("--model", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("mean", "sample"), default="mean")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_vae_predict)
    p = v.add_parser("eval")
    p.add_argument("--model", required=True)
    p.add_argument("--db", required=True)
    p.set_defaults(fn=cmd_predictor_eval)

    b = groups.add_parser("baseline", help="baseline predictors").add_subparsers(dest="cmd", required=True)
    p = b.add_parser("mlp-train")
    _common(p)
    p.add_argument("--db", required=True)
    p.add_argument("--source", type=int, default=1)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--out", required=True)
    _train_flags(p)
    p.set_defaults(fn=cmd_mlp_train)
    p = b.add_parser("ar-predict")
    _common(p)
    p.add_argument("--db", required=True)
    p.add_argument("--source", type=int, default=1)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--ar-order", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_ar_predict)
    p = b.add_parser("eval")
    p.add_argument("--model", required=True)
    p.add_argument("--db", required=True)
    p.set_defaults(fn=cmd_predictor_eval)

    lo = groups.add_parser("loc", help="localizer").add_subparsers(dest="cmd", required=True)
    p = lo.add_parser("train")
    _common(p)
    p.add_argument("--db", required=True)
    p.add_argument("--bands", default="1,2,3", help="comma separated band order")
    p.add_argument("--out", required=True)
    _train_flags(p)
    p.set_defaults(fn=cmd_loc_train)
    for name, fn in (("eval", cmd_loc_eval), ("predict", cmd_loc_predict)):
        p = lo.add_parser(name)
        p.add_argument("--model", required=True)
        p.add_argument("--db", required=True)
        p.add_argument("--predictor", action="append", metavar="BAND=CKPT",
                       help="replace a band with a predictor's output")
        if name == "eval":
            p.add_argument("--scheme", default="")
            p.add_argument("--json")
            p.add_argument("--csv")
        else:
            p.add_argument("--out")
        p.set_defaults(fn=fn)

    m = groups.add_parser("metrics", help="closed-form metrics").add_subparsers(dest="cmd", required=True)
    p = m.add_parser("crlb")
    p.add_argument("--beta-hz", type=float, required=True)
    p.add_argument("--snr-db", type=float, required=True)
    p.add_argument("--weight", type=float, help="predicted-band weight for the spliced bound")
    p.set_defaults(fn=cmd_metrics_crlb)

    e = groups.add_parser("experiment", help="end-to-end runs").add_subparsers(dest="cmd", required=True)
    p = e.add_parser("run")
    _common(p)
    p.add_argument("--out", default="runs/default")
    p.add_argument("--dry-run", action="store_true", help="validate the config and exit")
    p.add_argument("--profile", choices=("desk", "paper"))
    p.add_argument("--seed", type=int)
    p.add_argument("--snr-db", help="comma separated SNR list")
    p.add_argument("--schemes", help="comma separated scheme list")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_experiment_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")
    for handler in logging.getLogger().handlers:
        handler.setLevel(level)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except FormatError as exc:
        print(f"file format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ExperimentStageError as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except vae.TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (IngestError, ChannelError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled error", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
