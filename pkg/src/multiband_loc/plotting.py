"""Render run tables to PNG figures next to them."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from multiband_loc.experiment import read_table  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "legend.fontsize": 8,
    "savefig.bbox": "tight",
}

SCHEME_LABELS = {
    "vae": "VAE prediction",
    "mlp": "MLP prediction",
    "ar_ekf": "AR + Kalman",
    "passthrough": "all bands measured",
    "single_band": "single band",
}


def _save(fig, path: Path) -> Path:
    # fixed metadata keeps reruns byte-stable
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_channel_overlay(rows: list[dict], path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, (ax_a, ax_p) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 5.0))
        by_band = defaultdict(list)
        for r in rows:
            by_band[r["target_band"]].append(r)
        for band, rs in sorted(by_band.items()):
            k = [int(r["subcarrier"]) for r in rs]
            line = ax_a.plot(k, [float(r["amp_est"]) for r in rs], label=f"band {band} estimated")[0]
            ax_a.plot(k, [float(r["amp_pred"]) for r in rs], "--", color=line.get_color(), label=f"band {band} predicted")
            ax_p.plot(k, [float(r["phase_est"]) for r in rs], color=line.get_color())
            ax_p.plot(k, [float(r["phase_pred"]) for r in rs], "--", color=line.get_color())
        ax_a.set_ylabel("amplitude")
        ax_p.set_ylabel("phase (rad)")
        ax_p.set_xlabel("subcarrier")
        ax_a.legend()
        return _save(fig, path)


def plot_ccne(rows: list[dict], path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        series = defaultdict(list)
        for r in rows:
            if r["target_band"] == "all":
                series[r["scheme"]].append((float(r["snr_db"]), float(r["ccne_db_mean"])))
        for scheme, pts in series.items():
            pts.sort()
            ax.plot(*zip(*pts), marker="o", label=SCHEME_LABELS.get(scheme, scheme))
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel("mean CCNE (dB)")
        ax.legend()
        return _save(fig, path)


def plot_localization(rows: list[dict], path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        series = defaultdict(list)
        for r in rows:
            series[r["scheme"]].append((float(r["snr_db"]), float(r["mse_m2"])))
        for scheme, pts in series.items():
            pts.sort()
            ax.semilogy(*zip(*pts), marker="s", label=SCHEME_LABELS.get(scheme, scheme))
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel("localization MSE (m$^2$)")
        ax.legend()
        return _save(fig, path)


def plot_error_cdf(rows: list[dict], path: Path) -> Path:
    snrs = sorted({float(r["snr_db"]) for r in rows})
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if snrs:
            top = snrs[-1]
            series = defaultdict(list)
            for r in rows:
                if float(r["snr_db"]) == top:
                    series[r["scheme"]].append((float(r["error_m"]), float(r["cdf"])))
            for scheme, pts in series.items():
                ax.step(*zip(*pts), where="post", label=SCHEME_LABELS.get(scheme, scheme))
            ax.set_title(f"SNR {top:g} dB")
        ax.set_xlabel("localization error (m)")
        ax.set_ylabel("CDF")
        ax.legend()
        return _save(fig, path)


def render_run(run_dir: str | Path) -> list[Path]:
    run_dir = Path(run_dir)
    tables, figs = run_dir / "tables", run_dir / "figures"
    figs.mkdir(exist_ok=True)
    out = []
    jobs = [
        ("channel_overlay", plot_channel_overlay, "channel_overlay.png"),
        ("ccne", plot_ccne, "ccne_vs_snr.png"),
        ("localization", plot_localization, "localization_mse.png"),
        ("localization_cdf", plot_error_cdf, "localization_cdf.png"),
    ]
    for table, fn, name in jobs:
        path = tables / f"{table}.csv"
        if path.exists():
            _, rows = read_table(path)
            out.append(fn(rows, figs / name))
    return out
