"""
Summaries of finished runs: slope fits with confidence intervals, pass/fail against
ACCEPTANCE_THRESHOLDS, plot-data CSVs and plotly HTML figures under <run>/report/.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from chaos import default_sobolev_index
from config import ACCEPTANCE_THRESHOLDS, OUTPUT_FILES
from utils import file_digest, loglog_slope, write_frame, write_json
from visualizations import create_loglog_chart, create_series_chart, create_violation_chart

logger = logging.getLogger(__name__)

REPORT_DIR = "report"


class ReportError(ValueError):
    """Run directory without a manifest."""


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class Section:
    """What a per-kind summarizer produces."""

    lines: List[str] = field(default_factory=list)
    checks: List[Check] = field(default_factory=list)
    plots: Dict[str, pd.DataFrame] = field(default_factory=dict)
    figures: Dict[str, go.Figure] = field(default_factory=dict)


@dataclass
class RunReport:
    run_dir: Path
    kind: str
    section: Section
    missing: List[str]
    modified: List[str]
    files: List[Path] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.missing and all(c.passed for c in self.section.checks)

    def text(self) -> str:
        lines = [f"Run {self.run_dir} ({self.kind})"]
        if self.missing:
            lines.append(f"Missing outputs: {', '.join(self.missing)}")
        if self.modified:
            lines.append(f"Outputs modified since the run: {', '.join(self.modified)}")
        lines += self.section.lines
        if self.section.checks:
            lines.append("")
            lines.append("Checks:")
            for c in self.section.checks:
                lines.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}" + (f" ({c.detail})" if c.detail else ""))
        lines.append("")
        lines.append(f"Overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _slope_line(label: str, x, y) -> Tuple[str, object]:
    fit = loglog_slope(x, y)
    half = (fit.ci_high - fit.ci_low) / 2
    line = (f"{label}: slope {fit.slope:.3f} ± {half:.3f} "
            f"(95% CI [{fit.ci_low:.3f}, {fit.ci_high:.3f}], R²={fit.r_squared:.3f}, {fit.n_points} points)")
    return line, fit


def _strictly_decreasing(values: np.ndarray, stderr: np.ndarray, n_sigma: float) -> bool:
    """Each step down exceeds n_sigma combined standard errors."""
    se = np.nan_to_num(stderr)
    drops = values[:-1] - values[1:]
    return bool(np.all(drops > n_sigma * np.sqrt(se[:-1] ** 2 + se[1:] ** 2)))


# ---------------------------------------------------------------------------
# Per-kind summaries
# ---------------------------------------------------------------------------

def summarize_simulate(run_dir: Path, config: Dict) -> Section:
    section = Section()
    obs = pd.read_csv(run_dir / "observables.csv")
    threshold = ACCEPTANCE_THRESHOLDS["simulate"]["max_relative_drift"]
    momentum_cols = [c for c in obs.columns if c.startswith("momentum_")]
    worst = 0.0
    for _, sub in obs.groupby("replica"):
        sub = sub.sort_values("t")
        e0 = sub["energy"].iloc[0]
        worst = max(worst, float(np.max(np.abs(sub["energy"] - e0))) / e0)
        p = sub[momentum_cols].to_numpy()
        worst = max(worst, float(np.max(np.abs(p - p[0]))) / np.sqrt(e0))
    events = obs.groupby("replica")["n_events"].max()
    section.lines.append(f"{obs['replica'].nunique()} replicas, {int(events.sum())} collision events in total")
    section.lines.append(f"Largest relative drift of momentum or energy: {worst:.3e}")
    section.checks.append(Check("conservation", worst <= threshold, f"drift {worst:.2e} <= {threshold:g}"))

    mean_series = obs.groupby("t", as_index=False)[["energy", "m4"]].mean()
    section.plots["observables"] = mean_series
    section.figures["observables"] = create_series_chart(mean_series, "t", ["energy", "m4"], "Energy and M4 (replica mean)")
    return section


def summarize_lln(run_dir: Path, config: Dict) -> Section:
    section = Section()
    frame = pd.read_csv(run_dir / "lln.csv")
    d = config["kernel"]["d"]
    thresholds = ACCEPTANCE_THRESHOLDS["lln"]
    for distance, sub in frame.groupby("estimator", sort=True):
        sub = sub.sort_values("N")
        s = config["metric"]["s"] if config["metric"]["s"] is not None else default_sobolev_index(d)
        label = f"{distance} d={d}" + (f" s={s:g}" if distance == "sobolev_sq" else "")
        section.plots[f"lln_{distance}"] = sub[["N", "value", "stderr", "exact"]]
        section.figures[f"lln_{distance}"] = create_loglog_chart(sub, "N", "value", error="stderr", reference="exact",
                                                                 title=f"W^N for {label}")
        if len(sub) < 3 or (sub["value"] <= 0).any():
            section.lines.append(f"{label}: not enough positive points for a slope fit")
            section.checks.append(Check(f"slope[{distance}]", False, "no fit"))
            continue
        line, fit = _slope_line(label, sub["N"], sub["value"])
        section.lines.append(line)

        if distance == "sobolev_sq":
            rule = thresholds["sobolev_sq"]
            ok = abs(fit.slope - rule["slope_target"]) <= rule["slope_tolerance"]
            section.checks.append(Check(f"slope[{distance}]", ok,
                                        f"{fit.slope:.3f} within {rule['slope_target']} ± {rule['slope_tolerance']}"))
            exact = sub.dropna(subset=["exact"])
            if len(exact):
                z = np.abs(exact["value"] - exact["exact"]) / exact["stderr"]
                section.checks.append(Check("exact_identity", bool((z <= rule["identity_n_sigma"]).all()),
                                            f"largest deviation {float(z.max()):.2f} standard errors"))
        else:
            bound = -1.0 / (d + 1)
            section.checks.append(Check(f"slope[{distance}]", fit.slope <= bound, f"{fit.slope:.3f} <= {bound:.3f}"))
            if distance == "W1" and d == 1:
                cap = thresholds["W1"]["slope_max_d1"]
                section.checks.append(Check("slope[W1, d=1]", fit.slope <= cap, f"{fit.slope:.3f} <= {cap}"))
            if distance == "W2sq":
                section.lines.append(f"  classical exponent for W2^2: {-2.0 / (d + 4):.3f}")
    return section


def summarize_chaos(run_dir: Path, config: Dict) -> Section:
    section = Section()
    rule = ACCEPTANCE_THRESHOLDS["chaos"]
    frame = pd.read_csv(run_dir / "chaos.csv")
    sym = frame[frame["estimator"] == "sym"]
    cols = ["ell", "t", "N", "value", "stderr", "dictionary_id"]
    section.plots["gap_vs_n"] = sym.sort_values(["ell", "t", "N"])[cols]
    section.plots["gap_vs_t"] = sym.sort_values(["ell", "N", "t"])[["ell", "N", "t", "value", "stderr", "dictionary_id"]]

    for ell, by_ell in sym.groupby("ell"):
        section.lines.append(f"ell={ell}:")
        for t, sub in by_ell.groupby("t"):
            sub = sub.sort_values("N")
            tags = ", ".join(f"N={n}: {v:.3e}±{e:.1e} [{tag}]"
                             for n, v, e, tag in zip(sub["N"], sub["value"], sub["stderr"], sub["dictionary_id"]))
            section.lines.append(f"  t={t:g}: {tags}")
            if t > 0 and len(sub) >= 2:
                ok = _strictly_decreasing(sub["value"].to_numpy(), sub["stderr"].to_numpy(), rule["n_sigma"])
                section.checks.append(Check(f"decreasing_in_N[ell={ell}, t={t:g}]", ok))
        early = by_ell[by_ell["t"].isin(rule["early_times"])]
        late = by_ell[by_ell["t"] >= rule["late_time_min"]]
        if len(early) and len(late):
            for n, _ in by_ell.groupby("N"):
                hi_late = late.loc[late["N"] == n, "value"].max()
                hi_early = early.loc[early["N"] == n, "value"].max()
                ok = bool(hi_late <= rule["uniform_in_time_factor"] * hi_early)
                section.checks.append(Check(f"uniform_in_time[ell={ell}, N={n}]", ok,
                                            f"{hi_late:.3e} <= {rule['uniform_in_time_factor']:g} x {hi_early:.3e}"))

        positive = by_ell[(by_ell["t"] > 0) & (by_ell["value"] > 0)]
        if len(positive):
            section.figures[f"gap_vs_n_ell{ell}"] = create_loglog_chart(positive, "N", "value", group="t", error="stderr",
                                                                        title=f"Chaos gap vs N (ell={ell})")
        wide = by_ell.pivot_table(index="t", columns="N", values="value").reset_index()
        wide.columns = ["t"] + [f"N={n}" for n in wide.columns[1:]]
        section.figures[f"gap_vs_t_ell{ell}"] = create_series_chart(wide, "t", list(wide.columns[1:]),
                                                                    f"Chaos gap vs t (ell={ell})")
    return section


def summarize_contraction(run_dir: Path, config: Dict) -> Section:
    section = Section()
    rule = ACCEPTANCE_THRESHOLDS["contraction"]
    contraction_path = run_dir / "contraction.csv"
    if contraction_path.exists():
        frame = pd.read_csv(contraction_path)
        violations = int(frame["toscani_violation"].sum() + frame["w2_violation"].sum())
        section.lines.append(f"Contraction: {violations} violations beyond the split-replica noise floor")
        section.checks.append(Check("contraction", violations <= rule["max_violations"], f"{violations} violations"))
        section.plots["contraction"] = frame[["t", "toscani", "toscani_noise", "w2", "w2_noise"]]
        section.figures["contraction"] = create_series_chart(frame, "t", ["toscani", "toscani_noise", "w2", "w2_noise"],
                                                             "Distance between the two solutions", log_y=True)

    relaxation_path = run_dir / "relaxation.json"
    if relaxation_path.exists():
        fit = json.loads(relaxation_path.read_text())
        section.lines.append(
            f"Relaxation ({fit['status']}): rate {fit['rate']:.3g} [{fit['ci_low']:.3g}, {fit['ci_high']:.3g}], "
            f"spectral gap {fit['spectral_gap']:.3g}, contraction constant {fit['bobylev_constant']:.3g}"
        )

    equilibrium_path = run_dir / "equilibrium.csv"
    if equilibrium_path.exists():
        eq = pd.read_csv(equilibrium_path)
        w1 = eq[eq["kind"] == "W1"].sort_values("t")
        if len(w1) >= 2 and np.isclose(w1["t"].iloc[0], 0.0):
            first, last = float(w1["distance"].iloc[0]), float(w1["distance"].iloc[-1])
            ok = last < rule["equilibrium_ratio"] * first
            section.checks.append(Check("equilibrium_W1", ok, f"W1 {last:.3e} at t={w1['t'].iloc[-1]:g} vs {first:.3e} at t=0"))
        section.plots["equilibrium"] = eq
        wide = eq.pivot_table(index="t", columns="kind", values="distance").reset_index()
        section.figures["equilibrium"] = create_series_chart(wide, "t", [c for c in wide.columns if c != "t"],
                                                             "Distance to the Maxwellian", log_y=True)
    return section


def summarize_mehler(run_dir: Path, config: Dict) -> Section:
    section = Section()
    frame = pd.read_csv(run_dir / "mehler.csv")
    n_sigma = ACCEPTANCE_THRESHOLDS["mehler"]["n_sigma"]
    for ell, sub in frame.groupby("ell"):
        sub = sub.sort_values("N")
        section.lines.append(f"ell={ell}: " + ", ".join(f"N={n}: {w:.3e}±{e:.1e}" for n, w, e in
                                                     zip(sub["N"], sub["w1"], sub["stderr"])))
        ok = _strictly_decreasing(sub["w1"].to_numpy(), sub["stderr"].to_numpy(), n_sigma)
        section.checks.append(Check(f"marginal_decreasing[ell={ell}]", ok, f"beyond {n_sigma:g} sigma"))
    section.plots["mehler"] = frame
    section.figures["mehler"] = create_loglog_chart(frame, "N", "w1", group="ell", error="stderr",
                                                    title="W1 of the marginal to the Gaussian")
    return section


def summarize_battery(run_dir: Path, config: Dict) -> Section:
    section = Section()
    summary = pd.read_csv(run_dir / "battery_summary.csv")
    for _, row in summary.iterrows():
        tag = "explicit" if row["explicit"] else "fitted"
        section.lines.append(f"{row['inequality_id']} ({tag}): {int(row['violations'])}/{int(row['trials'])} violations, "
                             f"worst lhs/rhs {row['max_ratio']:.3g}")
    explicit = int(summary.loc[summary["explicit"], "violations"].sum())
    limit = ACCEPTANCE_THRESHOLDS["battery"]["max_explicit_violations"]
    section.checks.append(Check("explicit_inequalities", explicit <= limit, f"{explicit} violations"))
    section.plots["battery"] = summary
    section.figures["battery"] = create_violation_chart(summary)
    return section


SUMMARIZERS: Dict[str, Callable[[Path, Dict], Section]] = {
    "simulate": summarize_simulate,
    "lln": summarize_lln,
    "chaos": summarize_chaos,
    "contraction": summarize_contraction,
    "mehler": summarize_mehler,
    "battery": summarize_battery,
}


def report_run(run_dir: Path) -> RunReport:
    """Builds and writes the report of a run directory; missing outputs are listed, not fatal."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ReportError(f"{run_dir}: no manifest.json, not a finished run")
    manifest = json.loads(manifest_path.read_text())
    kind = manifest["kind"]
    config = json.loads((run_dir / "config.json").read_text()) if (run_dir / "config.json").exists() else {}

    expected = set(OUTPUT_FILES[kind]) | set(manifest.get("files", {}))
    missing = sorted(name for name in expected if not (run_dir / name).exists())
    modified = sorted(name for name, digest in manifest.get("files", {}).items()
                      if (run_dir / name).exists() and file_digest(run_dir / name) != digest)
    for name in missing:
        logger.warning("Missing output %s", name)

    try:
        section = SUMMARIZERS[kind](run_dir, config)
    except (FileNotFoundError, KeyError, ValueError) as e:
        # Résumé partiel si une sortie manque
        logger.warning("Partial summary for %s: %s", run_dir, e)
        section = Section(lines=[f"Summary incomplete: {e}"])

    report = RunReport(run_dir, kind, section, missing, modified)
    out = run_dir / REPORT_DIR
    out.mkdir(exist_ok=True)
    for name, frame in section.plots.items():
        report.files.append(write_frame(frame, out / f"plot_{name}.csv"))
    for name, fig in section.figures.items():
        path = out / f"{name}.html"
        fig.write_html(path, include_plotlyjs="cdn")
        report.files.append(path)
    summary_path = out / "summary.txt"
    summary_path.write_text(report.text() + "\n", encoding="utf-8")
    report.files.append(summary_path)
    checks = {
        "kind": kind,
        "passed": report.passed,
        "missing": missing,
        "modified": modified,
        "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in section.checks],
    }
    report.files.append(write_json(checks, out / "checks.json"))
    return report
