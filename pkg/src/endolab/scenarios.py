"""Scenario runners: each turns a validated config into checks and output files.

Every scenario returns a ScenarioResult; ``run_scenario`` writes the tables
and a JSON manifest carrying the config hash, so every emitted number can be
traced back to the config and scenario that produced it. Nothing that
depends on wall time or on the worker count is written.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from . import families
from .conjugacy import (
    ConjugacyField,
    conjugacy_residual,
    error_vs_reference,
    holder_exponent_wu,
    pushforward_density,
    solve_conjugacy,
    stable_backward_sum,
)
from .errors import UnsupportedDimension
from .foliation import chain_dispersion, constant_unstable_plane, holonomy_jacobian, quasi_isometry_scan, wu_leaf
from .lattice import count_linear_periodic
from .lyapunov import ensemble_spectrum
from .periodic import periodic_orbits, periodic_specialness_certificate, volume_criterion

SCENARIOS = ("spectrum", "periodic", "conjugacy", "specialness", "holonomy", "quasi-isometry", "thmB-scan", "report")


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    informational: bool = False

    def to_dict(self):
        return {
            "name": self.name,
            "value": _plain(self.value),
            "threshold": _plain(self.threshold),
            "passed": bool(self.passed),
            "informational": self.informational,
        }


@dataclass
class ScenarioResult:
    scenario: str
    config_hash: str
    checks: list = field(default_factory=list)
    files: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks if not c.informational)

    def check(self, name, value, threshold, passed, informational=False):
        self.checks.append(Check(name, value, threshold, bool(passed), informational))

    def manifest(self, cfg):
        return {
            "scenario": self.scenario,
            "config_hash": self.config_hash,
            "seed": cfg.seed,
            "model": cfg.model,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "files": sorted(self.files),
            "metrics": _plain(self.metrics),
        }


def _plain(v):
    """JSON-ready copy with numpy scalars and arrays turned into Python values."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return v


class Workspace:
    """Output directory plus the provenance columns prepended to every table."""

    def __init__(self, cfg, scenario):
        self.cfg = cfg
        self.scenario = scenario
        self.directory = cfg.output["directory"]
        self.csv = "csv" in cfg.output["formats"]
        os.makedirs(self.directory, exist_ok=True)

    def path(self, name):
        return os.path.join(self.directory, name)

    def table(self, result, name, header, rows):
        if not self.csv:
            return
        with open(self.path(name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "config_hash"] + list(header))
            for row in rows:
                w.writerow([self.scenario, result.config_hash] + [_fmt(v) for v in row])
        result.files.append(name)


# --------------------------------------------------------------------------
# model classification


def unstable_shears(model):
    """Shear chains whose moves all lie in the unstable eigenspace of A.

    For these g^s = 0, E^u_A is Df-invariant and the stable exponent and the
    sum of unstable exponents are pinned to those of A.
    """
    if model.kind != K.SHEAR:
        return False
    Ps = np.asarray(model.splitting.adapted_inverse, float)[: model.splitting.stable_dim]
    return bool(np.abs(model.shear_directions @ Ps.T).max() < 1e-12)


def predicted_special(model):
    return model.kind in (K.LINEAR, K.CONJUGATE) or unstable_shears(model)


def _log_moduli(model):
    return np.asarray(model.splitting.log_moduli, float)


# --------------------------------------------------------------------------
# scenarios


def _ensemble(model, cfg, workers):
    run = cfg.run
    return ensemble_spectrum(model, run["orbits"], run["steps"], cfg.seed, workers, run["burn_in"], run["batches"])


def scenario_spectrum(cfg, model, ws, res, workers=1):
    th = cfg.thresholds
    ens = _ensemble(model, cfg, workers)
    ref = _log_moduli(model)
    d = model.dim
    ws.table(res, "spectrum.csv", ["index", "lambda", "stderr", "log_modulus_A", "delta"],
             [(i, ens.exponents[i], ens.stderr[i], ref[i], ens.exponents[i] - ref[i]) for i in range(d)])
    ws.table(res, "spectrum_orbits.csv", ["orbit"] + [f"lambda_{i}" for i in range(d)] + ["mean_log_jac"],
             [(j, *ens.per_orbit[j], ens.per_orbit_log_jac[j]) for j in range(ens.n_orbits)])
    res.metrics.update(exponents=ens.exponents, stderr=ens.stderr, sums=ens.sums, sum_stderr=ens.sum_stderr)
    res.check("telescope", ens.telescope_error, th["telescope_tol"], ens.telescope_error <= th["telescope_tol"])
    if model.conservative:
        err = float(np.abs(ens.per_orbit.sum(1) - math.log(model.degree)).max())
        res.check("sum_equals_log_degree", err, th["degree_tol"], err <= th["degree_tol"])
    if model.kind == K.LINEAR:
        err = float(np.abs(ens.per_orbit - ref).max())
        res.check("linear_spectrum", err, th["spectrum_tol"], err <= th["spectrum_tol"])
    if unstable_shears(model):
        ks = model.splitting.stable_dim
        err = float(np.abs(ens.exponents[:ks] - ref[:ks]).max())
        res.check("stable_exponent_pinned", err, th["stable_exponent_tol"], err <= th["stable_exponent_tol"])
        nu = d - ks
        delta = ens.sums[nu] - float(ref[ks:].sum())
        bound = th["sigma_factor"] * ens.sum_stderr[nu]
        res.check("unstable_sum_pinned", abs(delta), bound, abs(delta) <= bound)
    return res


def scenario_periodic(cfg, model, ws, res, workers=1):
    th = cfg.thresholds
    rows = []
    special = predicted_special(model)
    volume_expected = model.conservative or model.kind == K.CONJUGATE
    for n in cfg.run["periods"]:
        search = periodic_orbits(model, int(n))
        expected = count_linear_periodic(model.linear, int(n))
        res.check(f"count_n{n}", search.count, expected, search.count == expected)
        vol_ok, _ = volume_criterion(search.records, model.degree, th["volume_rtol"])
        worst = max(abs(r.jacobian - model.degree ** n) / model.degree ** n for r in search.records)
        res.check(f"volume_n{n}", worst, th["volume_rtol"], vol_ok, informational=not volume_expected)
        if model.splitting.stable_dim == 1:
            _, verdicts, gap = periodic_specialness_certificate(search.records, model.splitting, th["periodic_stable_tol"])
            res.check(f"stable_moduli_n{n}", gap, th["periodic_stable_tol"], all(verdicts), informational=not special)
        res.metrics[f"duplicates_n{n}"] = len(search.duplicates)
        for r in search.records:
            rows.append((n, *r.point, *r.lattice_vector, r.jacobian, *r.moduli, r.residual))
    d = model.dim
    ws.table(res, "periodic.csv",
             ["period"] + [f"x{i}" for i in range(d)] + [f"m{i}" for i in range(d)] + ["jacobian"]
             + [f"modulus_{i}" for i in range(d)] + ["residual"], rows)
    return res


def _holder(model, cfg, seed):
    run = cfg.run
    fld = ConjugacyField.series_only(model)
    X = np.random.default_rng(seed).random((int(run["holder_leaves"]), model.dim))
    segs = [wu_leaf(model, x, run["holder_length"], run["holder_step"]) for x in X]
    return holder_exponent_wu(fld, segs, ks=[int(k) for k in run["scales"]], n_boot=int(run["bootstrap"]), seed=seed)


def scenario_conjugacy(cfg, model, ws, res, workers=1):
    th = cfg.thresholds
    grids = sorted(int(n) for n in cfg.run["grids"])
    rows, errs = [], []
    fld = None
    for N in grids:
        fld = solve_conjugacy(model, N, seed=cfg.seed)
        err = float("nan")
        if model.kind == K.CONJUGATE:
            err = error_vs_reference(fld, lambda X: model.conjugacy_H(X, inverse=True), seed=cfg.seed + 1)
            errs.append(err)
        rows.append((N, fld.residual_sup, err, len(fld.solve_updates), fld.apriori_bound))
    ws.table(res, "conjugacy.csv", ["N", "residual_sup", "error_vs_H_inverse", "sweeps", "apriori_bound"], rows)
    stem = f"conjugacy_field_N{grids[-1]}"
    fld.save(ws.path(stem), extra={"config_hash": res.config_hash, "scenario": ws.scenario})
    res.files += [stem + ".bin", stem + ".json"]
    smooth = model.kind in (K.LINEAR, K.CONJUGATE)
    res.check("residual_finest", fld.residual_sup, th["conjugacy_residual"], fld.residual_sup <= th["conjugacy_residual"],
              informational=not smooth)
    series = conjugacy_residual(fld, seed=cfg.seed, method="series")
    res.check("residual_series", series, th["conjugacy_residual"], series <= th["conjugacy_residual"])
    if len(errs) >= 2:
        order = -float(np.polyfit(np.log(grids), np.log(errs), 1)[0])
        const = max(e * N ** 2 for e, N in zip(errs, grids))
        res.metrics.update(errors=errs, error_constant=const)
        res.check("convergence_order", order, th["conjugacy_order_min"], order >= th["conjugacy_order_min"])
    if model.conservative:
        dens = pushforward_density(fld, int(cfg.run["density_bins"]), int(cfg.run["density_samples"]), cfg.seed,
                                   th["density_level"])
        res.metrics.update(density_band=dens.band)
        res.check("pushforward_uniform", dens.statistic, dens.band[1], dens.uniform)
    if cfg.run["holder"] and predicted_special(model):
        est = _holder(model, cfg, cfg.seed)
        res.metrics.update(holder_alpha=est.alpha, holder_ci=est.ci)
        res.check("holder_ci_contains_1" if smooth else "holder_ci", est.alpha, 1.0, est.contains(1.0),
                  informational=not smooth)
    return res


def scenario_specialness(cfg, model, ws, res, workers=1):
    th = cfg.thresholds
    run = cfg.run
    rows, worst = [], []
    for s in run["seeds"]:
        s = int(s)
        X = np.random.default_rng(s).random((int(run["points"]), model.dim))
        diag = stable_backward_sum(model, X, n_chains=int(run["chains"]), rng=s)
        worst.append(diag.max_variance)
        rows += [(s, i, *x, v) for i, (x, v) in enumerate(zip(X, diag.variance))]
    ws.table(res, "specialness.csv", ["seed", "point"] + [f"x{i}" for i in range(model.dim)] + ["variance"], rows)
    res.metrics.update(max_variance_by_seed=worst)
    if predicted_special(model):
        v = max(worst)
        res.check("special_variance", v, th["special_variance"], v < th["special_variance"])
    elif model.kind == K.GENERIC:
        v = min(worst)
        res.check("non_special_witness_all_seeds", v, th["generic_variance"], v > th["generic_variance"])
    if model.dim == 3 and model.splitting.stable_dim == 1:
        X = np.random.default_rng(cfg.seed).random((4, 3))
        plane = [chain_dispersion(model, x, 10, rng=cfg.seed + i).plane for i, x in enumerate(X)]
        res.metrics.update(unstable_plane_dispersion=plane)
        if predicted_special(model):
            res.check("unstable_plane_chain_independent", max(plane), th["frame_tol"], max(plane) < th["frame_tol"])
    return res


def _sum_equality(model, cfg, workers, k=1):
    ens = _ensemble(model, cfg, workers)
    ref = _log_moduli(model)
    ks = model.splitting.stable_dim
    delta = ens.sums[k] - float(ref[ks:ks + k].sum())
    bound = cfg.thresholds["sigma_factor"] * ens.sum_stderr[k]
    return abs(delta) <= bound, delta, bound


def scenario_holonomy(cfg, model, ws, res, workers=1):
    th = cfg.thresholds
    run = cfg.run
    if model.kind != K.LINEAR and not constant_unstable_plane(model):
        raise UnsupportedDimension("holonomy needs a linear model or one with a constant unstable plane")
    P = np.random.default_rng(cfg.seed).random((int(run["points"]), model.dim))
    rep = holonomy_jacobian(model, P, run["holonomy_offset"], [int(k) for k in run["holonomy_scales"]],
                            th["holonomy_T"], int(run["bootstrap"]), cfg.seed, th["ac_slope_tol"])
    ws.table(res, "holonomy.csv", ["delta", "log_ratio_spread", "max_abs_log_ratio", "outside_mass"],
             zip(rep.scales, rep.spread, rep.max_abs_log, rep.outside_mass))
    ws.table(res, "holonomy_ratios.csv", ["delta", "point", "ratio"],
             [(dl, j, r) for dl, rr in zip(rep.scales, rep.ratios) for j, r in enumerate(rr)])
    res.metrics.update(verdict=rep.verdict, trend_slope=rep.trend_slope, trend_ci=rep.trend_ci)
    if model.kind == K.LINEAR:
        v = float(rep.max_abs_log.max())
        res.check("linear_ratios_one", v, th["holonomy_linear_tol"], v <= th["holonomy_linear_tol"])
    else:
        equal, delta, bound = _sum_equality(model, cfg, workers, k=1)
        res.metrics.update(wu_sum_delta=delta, wu_sum_bound=bound, sum_equal=equal)
        agree = rep.verdict != "inconclusive" and (rep.verdict == "AC-band") == equal
        res.check("ac_iff_sum_equality", float(agree), 1.0, agree)
    return res


def scenario_quasi_isometry(cfg, model, ws, res, workers=1):
    th = cfg.thresholds
    run = cfg.run
    if model.splitting.stable_dim != 1 or model.dim not in (2, 3):
        raise UnsupportedDimension("quasi-isometry scan needs d in {2, 3} with one stable direction")
    x0 = np.random.default_rng(cfg.seed).random(model.dim)
    levelset = model.kind != K.LINEAR and model.dim == 3 and constant_unstable_plane(model)
    seg = wu_leaf(model, x0, run["leaf_length"], run["levelset_step"] if levelset else run["leaf_step"])
    direction = model.splitting.basis[:, 1]
    rep = quasi_isometry_scan(seg, direction, rng=cfg.seed)
    ws.table(res, "quasi_isometry.csv", ["length", "Q", "R_c"], zip(rep.lengths, rep.Q_by_length, rep.R_by_length))
    ws.table(res, "quasi_isometry_angles.csv", ["distance_low", "distance_high", "mean_angle"],
             zip(rep.angle_bins[:-1], rep.angle_bins[1:], rep.angle_means))
    ws.table(res, "quasi_isometry_leaf.csv", ["s"] + [f"x{i}" for i in range(model.dim)],
             [(s, *p) for s, p in zip(seg.arclength, seg.points)])
    res.metrics.update(Q=rep.Q, R_c=rep.R_c, leaf_method=seg.method)
    res.check("Q_finite", rep.Q, 1.0, math.isfinite(rep.Q) and rep.Q >= 1.0)
    res.check("Q_doubling_drift", rep.drift, th["qi_drift"], rep.drift < th["qi_drift"])
    r_drift = abs(rep.R_by_length[-1] - rep.R_by_length[-2]) / max(rep.R_by_length[-2], th["exact_tol"])
    res.check("R_c_plateau", r_drift, th["qi_drift"], r_drift < th["qi_drift"] or rep.R_c <= th["exact_tol"])
    if model.kind == K.LINEAR:
        res.check("linear_Q_one", rep.Q - 1.0, th["exact_tol"], rep.Q - 1.0 <= th["exact_tol"])
        res.check("linear_R_c_zero", rep.R_c, th["exact_tol"], rep.R_c <= th["exact_tol"])
    else:
        res.check("chord_angle_decreasing", 0.0, 0.0, rep.angle_trend_decreasing)
    return res


def scenario_thmb_scan(cfg, model, ws, res, workers=1):
    th = cfg.thresholds
    run = cfg.run
    sp = model.splitting
    if model.dim != 3 or sp.stable_dim != 1 or not sp.anosov:
        raise UnsupportedDimension("the amplitude scan needs a 3x3 hyperbolic matrix with 2 unstable directions")
    ref = _log_moduli(model)
    k = cfg.thresholds["sigma_factor"]
    rows = []
    fired_with_sum = False
    live_rows = 0
    for ea, eb in itertools.product(run["eps_a"], run["eps_b"]):
        m = families.cross_shear(float(ea), float(eb), A=model.linear)
        certified = m.certified_anosov
        if not certified:
            rows.append((ea, eb, False, "", "", "", "", "", "", "", ""))
            res.check(f"certified({ea:g},{eb:g})", 0.0, 1.0, False, informational=True)
            continue
        ens = _ensemble(m, cfg, workers)
        d_wu = float(ens.exponents[1] - ref[1])
        s_wu = float(ens.stderr[1])
        d_sum = float(ens.sums[2] - ref[1:].sum())
        s_sum = float(ens.sum_stderr[2])
        sum_ok = abs(d_sum) <= k * s_sum
        fires = abs(d_wu) > k * s_wu
        alpha, ci = float("nan"), (float("nan"), float("nan"))
        res.check(f"sum_pinned({ea:g},{eb:g})", abs(d_sum), k * s_sum, sum_ok)
        if eb == 0:
            res.check(f"control_null({ea:g},0)", abs(d_wu), k * s_wu, not fires)
        elif ea != 0:
            live_rows += 1
            fired_with_sum |= fires and sum_ok
            if fires and run["holder"]:
                est = _holder(m, cfg, cfg.seed)
                alpha, ci = est.alpha, est.ci
                res.check(f"holder_ci_excludes_1({ea:g},{eb:g})", alpha, 1.0, not est.contains(1.0))
        rows.append((ea, eb, True, d_wu, s_wu, d_sum, s_sum, sum_ok, fires, alpha, f"{ci[0]:.6g};{ci[1]:.6g}"))
    if live_rows:
        res.check("live_probe_fires", float(fired_with_sum), 1.0, fired_with_sum)
    ws.table(res, "thmB_scan.csv",
             ["eps_a", "eps_b", "certified", "delta_lambda_wu", "stderr_wu", "delta_sum", "stderr_sum", "sum_pinned",
              "delta_wu_significant", "holder_alpha", "holder_ci"], rows)
    return res


def scenario_report(cfg, model, ws, res, workers=1):
    names = sorted(f for f in os.listdir(ws.directory) if f.endswith(".manifest.json") and f != "report.manifest.json")
    rows = []
    for name in names:
        with open(ws.path(name)) as fh:
            man = json.load(fh)
        same = man.get("config_hash") == res.config_hash
        for c in man["checks"]:
            rows.append((man["scenario"], man["config_hash"], c["name"], c["value"], c["threshold"], c["passed"],
                         c["informational"]))
        res.check(f"{man['scenario']}", float(man["passed"]), 1.0, man["passed"])
        if not same:
            res.metrics.setdefault("foreign_config", []).append(name)
    ws.table(res, "report.csv", ["source_scenario", "source_config_hash", "check", "value", "threshold", "passed",
                                 "informational"], rows)
    res.check("manifests_found", len(names), 1, len(names) >= 1)
    return res


RUNNERS = {
    "spectrum": scenario_spectrum,
    "periodic": scenario_periodic,
    "conjugacy": scenario_conjugacy,
    "specialness": scenario_specialness,
    "holonomy": scenario_holonomy,
    "quasi-isometry": scenario_quasi_isometry,
    "thmB-scan": scenario_thmb_scan,
    "report": scenario_report,
}


def write_manifest(path, document):
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(_plain(document), sort_keys=True, indent=2) + "\n")


def run_scenario(name, cfg, workers=1):
    """Run one scenario, write its files and manifest, and return the result."""
    if name not in RUNNERS:
        raise ValueError(f"unknown scenario {name!r}")
    ws = Workspace(cfg, name)
    res = ScenarioResult(name, cfg.hash)
    model = cfg.build_model()
    RUNNERS[name](cfg, model, ws, res, workers)
    write_manifest(ws.path(f"{name}.manifest.json"), res.manifest(cfg))
    return res
