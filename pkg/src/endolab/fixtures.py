"""Regeneration of derived reference values through independent oracles.

Each manifest entry records the computed value, the oracle's value, the
oracle's name and whether they agree. A previous manifest in the output
directory is compared entry by entry; drift raises OracleMismatch.
"""

from __future__ import annotations

import cmath
import json
import math
import os

import numpy as np

from . import _kernels as K
from .errors import OracleMismatch
from .lattice import count_linear_periodic, linear_periodic_points_exact
from .lyapunov import qr_spectrum
from .periodic import periodic_orbits

MANIFEST = "fixtures.json"


def closed_form_roots(coeffs):
    """Roots of a monic quadratic or cubic by the quadratic formula or Cardano."""
    if len(coeffs) == 2:
        return [complex(-coeffs[1])]
    if len(coeffs) == 3:
        _, b, c = coeffs
        disc = cmath.sqrt(b * b - 4 * c)
        return [(-b + disc) / 2, (-b - disc) / 2]
    if len(coeffs) == 4:
        _, a, b, c = (float(v) for v in coeffs)
        p = b - a * a / 3
        q = 2 * a ** 3 / 27 - a * b / 3 + c
        omega = complex(-0.5, math.sqrt(3) / 2)
        if abs(p) < 1e-300:
            base = [complex(-q) ** (1 / 3) * omega ** k for k in range(3)]
        else:
            u = (-q / 2 + cmath.sqrt(q * q / 4 + p ** 3 / 27)) ** (1 / 3)
            base = [u * omega ** k - p / (3 * u * omega ** k) for k in range(3)]
        return [t - a / 3 for t in base]
    raise ValueError("closed form implemented for degree <= 3")


def _entry(name, value, reference, oracle, tol):
    err = abs(value - reference)
    return {"name": name, "value": value, "reference": reference, "oracle": oracle, "abs_err": err,
            "ok": bool(err <= tol)}


def compute_entries(cfg):
    model = cfg.build_model()
    tol = cfg.thresholds["oracle_tol"]
    entries = []
    moduli = sorted(abs(r) for r in closed_form_roots(model.linear.char_poly()))
    for i, (ours, ref) in enumerate(zip(model.splitting.moduli, moduli)):
        entries.append(_entry(f"eigen_modulus_{i}", float(ours), float(ref), "closed-form roots", tol))
    for n in cfg.run["periods"]:
        n = int(n)
        enum = len(linear_periodic_points_exact(model.linear, n))
        entries.append(_entry(f"linear_periodic_count_n{n}", count_linear_periodic(model.linear, n), enum,
                              "lattice enumeration", 0))
        search = periodic_orbits(model, n)
        entries.append(_entry(f"continued_periodic_count_n{n}", search.count, enum, "lattice enumeration", 0))
    if model.kind == K.LINEAR:
        rep = qr_spectrum(model, np.random.default_rng(cfg.seed).random(model.dim), 10_000)
        for i, (lam, mod) in enumerate(zip(rep.exponents, model.splitting.moduli)):
            entries.append(_entry(f"linear_exponent_{i}", float(lam), math.log(mod), "log eigen-modulus",
                                  cfg.thresholds["spectrum_tol"]))
    return entries


def render(cfg, entries):
    doc = {"config_hash": cfg.hash, "seed": cfg.seed, "entries": entries}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def regenerate_fixtures(cfg):
    """Recompute every entry, compare with any previous manifest, then write.

    Returns the manifest path. Raises OracleMismatch (after writing the new
    manifest next to the old one as ``fixtures.new.json``) when an entry
    disagrees with its oracle or drifts from the previous manifest.
    """
    entries = compute_entries(cfg)
    text = render(cfg, entries)
    directory = cfg.output["directory"]
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, MANIFEST)
    drift = [e["name"] for e in entries if not e["ok"]]
    if os.path.exists(path):
        with open(path) as fh:
            old = {e["name"]: e for e in json.load(fh)["entries"]}
        tol = cfg.thresholds["oracle_tol"]
        for e in entries:
            prev = old.get(e["name"])
            if prev is None or abs(prev["value"] - e["value"]) > tol * max(1.0, abs(e["value"])):
                drift.append(e["name"])
    if drift:
        with open(os.path.join(directory, "fixtures.new.json"), "w") as fh:
            fh.write(text)
        raise OracleMismatch(sorted(set(drift)))
    with open(path, "w") as fh:
        fh.write(text)
    return path
