"""Figure rendering for result bundles.

Optional visual layer over the delimited output (the CSV/JSON files remain
the machine contract): measure evolution, variance-identity comparison,
spectral constants over time, worst-case error against its bound, and the
one-dimensional certification tables.  PNG files land next to the CSVs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_bundle"]


def _measure_figure(bundle, family, out: Path):
    from .model import measure_at

    ts = np.linspace(0.0, float(bundle.config["t"]), 9)
    fig, ax = plt.subplots(figsize=(6, 4))
    for t in ts:
        ax.plot(measure_at(family, float(t)).weights, label=f"t={t:.2f}", alpha=0.8)
    ax.set_xlabel("state")
    ax.set_ylabel("mass")
    ax.set_title("evolving measure")
    ax.legend(fontsize=7, ncol=3)
    fig.tight_layout()
    fig.savefig(out / "measure_evolution.png", dpi=120)
    plt.close(fig)


def _variance_figure(bundle, out: Path):
    reports = bundle.sections.get("variance", {}).get("reports", [])
    if not reports:
        return
    names = [r["function_id"] for r in reports]
    lhs = np.array([r["lhs"] for r in reports])
    rhs = np.array([r["rhs"] for r in reports])
    lhs_err = np.array([[r["lhs"] - r["lhs_ci"][0], r["lhs_ci"][1] - r["lhs"]] for r in reports]).T
    rhs_err = np.array([[r["rhs"] - r["rhs_ci"][0], r["rhs_ci"][1] - r["rhs"]] for r in reports]).T
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.errorbar(x - 0.12, lhs, yerr=lhs_err, fmt="o", capsize=3, label="N x MSE (simulated)")
    ax.errorbar(x + 0.12, rhs, yerr=rhs_err, fmt="s", capsize=3, label="decomposition")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=20, fontsize=8)
    ax.set_title("variance identity, both sides with CIs")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "variance_identity.png", dpi=120)
    plt.close(fig)


def _constants_figure(bundle, out: Path):
    rows = bundle.sections.get("constants", {}).get("rows", [])
    if not rows:
        return
    ts = [r["t"] for r in rows]
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.plot(ts, [r["poincare"] for r in rows], "o-", label="Poincare")
    ax.plot(ts, [r["rate_weighted"] for r in rows], "s-", label="weighted (A)")
    ax.plot(ts, [r["rate_dual_norm_sq"] for r in rows], "^-", label="dual norm sq (B)")
    ax.plot(ts, [r["lsi_lower"] for r in rows], "v-", label="LSI lower")
    uppers = [r["lsi_upper"] for r in rows]
    if all(u is not None for u in uppers):
        ax.plot(ts, uppers, "--", color="gray", label="LSI upper")
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_title("spectral constants along the schedule")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "constants.png", dpi=120)
    plt.close(fig)


def _bounds_figure(bundle, out: Path):
    sec = bundle.sections.get("bounds")
    if not sec:
        return
    rows = sec["theorem"]["bounds"]
    fig, ax = plt.subplots(figsize=(6.5, 4))
    x = np.arange(len(rows))
    ax.bar(x - 0.15, [r["lhs"] for r in rows], width=0.3, label="measured (lower est.)")
    ax.bar(x + 0.15, [r["rhs"] for r in rows], width=0.3, label="bound")
    ax.set_xticks(x)
    ax.set_xticklabels([r["id"] for r in rows], rotation=15, fontsize=7)
    ax.set_title("worst-case error vs non-asymptotic bounds")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "bounds.png", dpi=120)
    plt.close(fig)


def _appendix_figure(bundle, out: Path):
    models = bundle.sections.get("appendix", {}).get("models", [])
    if not models:
        return
    fig, ax = plt.subplots(figsize=(6.5, 4))
    labels = []
    exact, hardy, closed = [], [], []
    for m in models:
        labels.append(f"s{m['sigma']}/w{m['width']}")
        exact.append(m["poincare_exact"])
        hardy.append(m["hardy_poincare_bound"])
        closed.append(m["thm_poincare"])
    x = np.arange(len(labels))
    ax.bar(x - 0.22, exact, width=0.22, label="exact gap")
    ax.bar(x, hardy, width=0.22, label="4 max(B)")
    ax.bar(x + 0.22, closed, width=0.22, label="closed form")
    ax.set_yscale("log")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_title("certification chain: Poincare constants")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "appendix_chain.png", dpi=120)
    plt.close(fig)


def render_bundle(bundle, out_dir) -> list[str]:
    """Render every figure supported by the bundle's sections; returns the
    file names written."""
    from .config import build_generator
    from .harness import resolve_intensity

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved, _ = resolve_intensity(bundle.config)
    family, _gens = build_generator(resolved)
    _measure_figure(bundle, family, out)
    _variance_figure(bundle, out)
    _constants_figure(bundle, out)
    _bounds_figure(bundle, out)
    _appendix_figure(bundle, out)
    return sorted(p.name for p in out.glob("*.png"))
