"""Experiment dispatch, replica orchestration and persistence.

Every experiment returns ``(rows, summary)``.  Rows are written to
``results.csv`` in replica order; the summary (estimates, standard errors and
named pass/fail assertions) goes to ``summary.json``.  Replica ``r`` always
draws from RNG substream ``r``, and replicas are processed in fixed-size
chunks, so output bytes do not depend on the worker count.
"""

from __future__ import annotations

import csv
import itertools
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .. import __version__
from ..atomicity import atom_decay_scan, count_paths_by_turns
from ..diagnostics import a_delta_mass, b_delta_indicator, coverage_of, draw_distinct_centers
from ..exact import ExactBudget, ExactGibbs
from ..flows import ou_variance_experiment, temperature_equivalence_test
from ..models import build_model, sample_environment
from .config import ExperimentConfig

log = logging.getLogger(__name__)

CHUNK = 32
WORKERS_ENV = "GAUSSLOC_WORKERS"

# Columns of the plot-ready long-format file, per experiment.
PLOT_COLUMNS = {
    "identity_check": ("beta", "replica", "identity_residual"),
    "moments": ("beta", "replica", "z_ratio"),
    "localization_scan": ("beta", "delta", "replica", "a_delta_mass"),
    "ball_cover": ("beta", "delta", "k", "replica", "covered_fraction"),
    "ou_variance": ("beta", "T", "replica", "time_average"),
    "temperature_equivalence": ("replica", "F_perturbed", "F_equivalent"),
    "atom_decay": ("n", "replica", "max_atom", "n_times_atom"),
    "turn_census": ("n", "d", "j", "formula"),
}


@dataclass
class Assertion:
    name: str
    lhs: float
    rhs: float
    passed: bool
    detail: str = ""

    def as_dict(self):
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "passed": bool(self.passed), "detail": self.detail}


@dataclass
class RunResult:
    config: ExperimentConfig
    rows: list
    estimates: dict
    assertions: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    @property
    def failures(self) -> list:
        return [a for a in self.assertions if not a.passed]


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring non-integer %s=%r", WORKERS_ENV, raw)
        return 1


def _map_chunks(fn, cfg: ExperimentConfig, workers: int | None = None) -> list:
    """Apply ``fn(cfg_dict, replica_ids)`` over fixed replica chunks; rows in replica order."""
    chunks = [list(range(i, min(i + CHUNK, cfg.replicas))) for i in range(0, cfg.replicas, CHUNK)]
    workers = worker_count() if workers is None else workers
    payload = cfg.to_dict()
    if workers <= 1 or len(chunks) <= 1:
        parts = [fn(payload, c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, itertools.repeat(payload), chunks))
    return [row for part in parts for row in part]


def _model(cfg: dict):
    m = cfg["model"]
    return build_model(m["kind"], m["n"], m.get("params") or None)


def _gibbs(model, env, beta, cfg):
    return ExactGibbs(model, env, beta, ExactBudget(**cfg["budget"]))


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
    return float(x.mean()), se


# -- per-replica jobs -------------------------------------------------------

def _identity_job(cfg, replicas):
    model = _model(cfg)
    rows = []
    for r in replicas:
        env = sample_environment(model, cfg["seed"], r)
        for beta in cfg["betas"]:
            s = _gibbs(model, env, beta, cfg).summary
            rows.append(
                {
                    "beta": beta,
                    "replica": r,
                    "fprime": s.free_energy_derivative,
                    "mean_overlap": s.mean_overlap,
                    "identity_residual": s.free_energy_derivative - beta * (1.0 - s.mean_overlap),
                }
            )
    return rows


def _moments_job(cfg, replicas):
    model = _model(cfg)
    n = model.n
    rows = []
    for r in replicas:
        env = sample_environment(model, cfg["seed"], r)
        for beta in cfg["betas"]:
            lz = _gibbs(model, env, beta, cfg).log_z
            half = beta * beta * n / 2.0
            rows.append({"beta": beta, "replica": r, "log_z": lz, "z_ratio": math.exp(lz - half), "inverse_ratio": math.exp(-lz - half)})
    return rows


def _localization_job(cfg, replicas):
    model = _model(cfg)
    rows = []
    for r in replicas:
        env = sample_environment(model, cfg["seed"], r)
        for beta in cfg["betas"]:
            g = _gibbs(model, env, beta, cfg)
            for delta in cfg["deltas"]:
                rows.append(
                    {
                        "beta": beta,
                        "delta": delta,
                        "replica": r,
                        "a_delta_mass": a_delta_mass(g, delta),
                        "b_delta": int(b_delta_indicator(g, delta)),
                        "mean_overlap": g.mean_overlap,
                    }
                )
    return rows


def _ball_cover_job(cfg, replicas):
    model = _model(cfg)
    ks = sorted(cfg["options"].get("k", [1, 2, 5]))
    rows = []
    for r in replicas:
        env = sample_environment(model, cfg["seed"], r)
        for bi, beta in enumerate(cfg["betas"]):
            g = _gibbs(model, env, beta, cfg)
            centers = draw_distinct_centers(g, max(ks), cfg["seed"], r * 1024 + bi, int(np.count_nonzero(g.probs > 0)))
            for delta in cfg["deltas"]:
                for k in ks:
                    rows.append(
                        {
                            "beta": beta,
                            "delta": delta,
                            "k": k,
                            "replica": r,
                            "distinct_centers": min(k, len(centers)),
                            "covered_fraction": coverage_of(g, centers[:k], delta),
                        }
                    )
    return rows


# -- experiments ------------------------------------------------------------

def _run_identity(cfg):
    rows = _map_chunks(_identity_job, cfg)
    est, asserts = {}, []
    for beta in cfg.betas:
        res = [row["identity_residual"] for row in rows if row["beta"] == beta]
        m, se = _mean_se(res)
        est[f"beta={beta}"] = {"residual": m, "se": se, "three_se": 3 * se}
        asserts.append(Assertion(f"|mean(F') - beta(1 - mean<R>)| <= 3 SE at beta={beta}", abs(m), 3 * se, abs(m) <= 3 * se))
    return rows, est, asserts


def _run_moments(cfg):
    rows = _map_chunks(_moments_job, cfg)
    est, asserts = {}, []
    for beta in cfg.betas:
        z = [row["z_ratio"] for row in rows if row["beta"] == beta]
        inv = [row["inverse_ratio"] for row in rows if row["beta"] == beta]
        mz, sz = _mean_se(z)
        mi, si = _mean_se(inv)
        est[f"beta={beta}"] = {"z_ratio": mz, "z_ratio_se": sz, "inverse_ratio": mi, "inverse_ratio_se": si}
        asserts.append(Assertion(f"|mean(Z e^(-beta^2 n/2)) - 1| <= 3 SE at beta={beta}", abs(mz - 1), 3 * sz, abs(mz - 1) <= 3 * sz))
        asserts.append(Assertion(f"mean(1/Z) e^(-beta^2 n/2) - 3 SE <= 1 at beta={beta}", mi - 3 * si, 1.0, mi - 3 * si <= 1.0))
    return rows, est, asserts


def _run_localization(cfg):
    rows = _map_chunks(_localization_job, cfg)
    est, asserts = {}, []
    for delta in cfg.deltas:
        a_means, b_means = [], []
        for beta in cfg.betas:
            sel = [row for row in rows if row["beta"] == beta and row["delta"] == delta]
            a, a_se = _mean_se([row["a_delta_mass"] for row in sel])
            b, b_se = _mean_se([row["b_delta"] for row in sel])
            est[f"beta={beta},delta={delta}"] = {"a_delta_mass": a, "a_delta_mass_se": a_se, "p_b_delta": b, "p_b_delta_se": b_se}
            a_means.append(a)
            b_means.append(b)
        ordered = np.argsort(cfg.betas, kind="stable")
        a_sorted = [a_means[i] for i in ordered]
        b_sorted = [b_means[i] for i in ordered]
        a_ok = all(x >= y for x, y in zip(a_sorted, a_sorted[1:]))
        b_ok = all(x >= y for x, y in zip(b_sorted, b_sorted[1:]))
        asserts.append(Assertion(f"mean A_delta mass non-increasing in beta at delta={delta}", float(np.max(np.diff(a_sorted), initial=0.0)), 0.0, a_ok))
        asserts.append(Assertion(f"P(B_delta) non-increasing in beta at delta={delta}", float(np.max(np.diff(b_sorted), initial=0.0)), 0.0, b_ok))
    return rows, est, asserts


def _run_ball_cover(cfg):
    rows = _map_chunks(_ball_cover_job, cfg)
    ks = sorted(cfg.options.get("k", [1, 2, 5]))
    est, violations = {}, 0
    for beta in cfg.betas:
        for delta in cfg.deltas:
            for k in ks:
                sel = [row["covered_fraction"] for row in rows if row["beta"] == beta and row["delta"] == delta and row["k"] == k]
                m, se = _mean_se(sel)
                est[f"beta={beta},delta={delta},k={k}"] = {"covered_fraction": m, "se": se}
    by_key = {}
    for row in rows:
        by_key.setdefault((row["beta"], row["delta"], row["replica"]), []).append(row["covered_fraction"])
    for fr in by_key.values():
        violations += sum(1 for x, y in zip(fr, fr[1:]) if y < x - 1e-12)
    return rows, est, [Assertion("coverage non-decreasing in k for nested centers", violations, 0, violations == 0)]


def _run_ou_variance(cfg):
    model = _model(cfg.to_dict())
    rows, est, asserts = [], {}, []
    for bi, beta in enumerate(cfg.betas):
        for ti, T in enumerate(cfg.options.get("T", [2.0, 4.0, 8.0])):
            rep = ou_variance_experiment(model, beta, float(T), cfg.replicas, cfg.seed)
            tav = rep.extra.get("time_average", np.zeros(cfg.replicas))
            rhs = rep.extra.get("rhs", np.zeros(cfg.replicas))
            for r in range(cfg.replicas):
                rows.append({"beta": beta, "T": float(T), "replica": r, "time_average": float(tav[r]), "gradient_rhs": float(rhs[r])})
            est[f"beta={beta},T={T}"] = {
                "variance_lhs": rep.variance_lhs,
                "variance_lhs_se": rep.variance_lhs_se,
                "variance_rhs": rep.variance_rhs,
                "variance_rhs_se": rep.variance_rhs_se,
                "integrand_mean": rep.integrand_mean,
                "integrand_mean_se": rep.integrand_mean_se,
                "refinement_shift": rep.refinement_shift,
                "refinement_ok": rep.refinement_ok,
            }
            asserts.append(Assertion(f"Var(time-avg Lf) <= (2/t)E|grad f|^2 + 3 SE at beta={beta}, T={T}", rep.variance_lhs, rep.variance_rhs + 3 * rep.combined_se, rep.passed))
            if ti == 0:
                z = abs(rep.integrand_mean)
                asserts.append(Assertion(f"|mean Lf| <= 3 SE at beta={beta}", z, 3 * rep.integrand_mean_se, z <= 3 * rep.integrand_mean_se))
    return rows, est, asserts


def _run_temperature(cfg):
    model = _model(cfg.to_dict())
    k = int(cfg.options.get("k", 1))
    rows, est, asserts = [], {}, []
    for beta in cfg.betas:
        rep = temperature_equivalence_test(model, beta, k, cfg.replicas, cfg.seed)
        for r in range(cfg.replicas):
            rows.append({"beta": beta, "replica": r, **{key: float(v[r]) for key, v in rep.samples.items()}})
        est[f"beta={beta}"] = {
            "beta_equivalent": rep.beta_equivalent,
            "ks_free_energy": rep.ks_free_energy,
            "p_free_energy": rep.p_free_energy,
            "ks_overlap": rep.ks_overlap,
            "p_overlap": rep.p_overlap,
        }
        asserts.append(Assertion(f"KS p-value of F_n > 0.01 at beta={beta}, k={k}", rep.p_free_energy, 0.01, rep.p_free_energy > 0.01))
    return rows, est, asserts


def _run_atom_decay(cfg):
    opts = cfg.options
    d = int(opts.get("d", 1))
    n_list = sorted(opts.get("n_list", [6, 10, 14, 18]))
    rows, est, asserts = [], {}, []
    for beta in cfg.betas:
        scan = atom_decay_scan(d, beta, n_list, cfg.replicas, opts.get("env_dist", "gaussian"), cfg.seed)
        rows.extend(scan.records)
        for row in scan.rows:
            est[f"beta={beta},n={row.n}"] = {
                "median_atom": row.median_atom,
                "q1_atom": row.q1_atom,
                "q3_atom": row.q3_atom,
                "median_n_atom": row.median_n_atom,
                "mean_passage_per_n": row.mean_passage_per_n,
                "lambda_estimate": row.lambda_estimate,
            }
        est[f"beta={beta}"] = {"lambda_estimate": scan.rows[-1].lambda_estimate, "exceeds_mean_weight": scan.exceeds_mean_weight}
        meds = [row.median_atom for row in scan.rows]
        if beta > 0:
            asserts.append(Assertion(f"median max_atom strictly decreasing in n at beta={beta}", float(np.max(np.diff(meds), initial=-1.0)), 0.0, all(b < a for a, b in zip(meds, meds[1:]))))
            ratio = scan.rows[-1].median_n_atom / scan.rows[0].median_n_atom
            asserts.append(Assertion(f"median n*max_atom at n={n_list[-1]} <= 2x its n={n_list[0]} value at beta={beta}", ratio, 2.0, ratio <= 2.0))
    return rows, est, asserts


def _run_turn_census(cfg):
    opts = cfg.options
    rows, mismatches = [], 0
    for n in sorted(opts.get("n_list", [1, 2, 3, 4, 5, 6, 7, 8, 9, 10])):
        for d in sorted(opts.get("d_list", [1, 2])):
            formula = count_paths_by_turns(n, d)
            enumerated = [0] * n
            if (2 * d) ** n <= 1 << 22:
                for idx in itertools.product(range(2 * d), repeat=n):
                    enumerated[sum(1 for a, b in zip(idx, idx[1:]) if a != b)] += 1
            else:
                enumerated = [None] * n
            for j in range(n):
                match = enumerated[j] is None or enumerated[j] == formula[j]
                mismatches += not match
                rows.append({"n": n, "d": d, "j": j, "formula": formula[j], "enumerated": enumerated[j] if enumerated[j] is not None else "", "match": int(match)})
    return rows, {"mismatches": mismatches}, [Assertion("turn-count formula equals enumeration", mismatches, 0, mismatches == 0)]


RUNNERS = {
    "identity_check": _run_identity,
    "moments": _run_moments,
    "localization_scan": _run_localization,
    "ball_cover": _run_ball_cover,
    "ou_variance": _run_ou_variance,
    "temperature_equivalence": _run_temperature,
    "atom_decay": _run_atom_decay,
    "turn_census": _run_turn_census,
}


def execute(cfg: ExperimentConfig) -> RunResult:
    rows, est, asserts = RUNNERS[cfg.experiment](cfg)
    return RunResult(cfg, rows, est, asserts)


# -- persistence --------------------------------------------------------------

def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def rows_to_csv(rows: list, config_hash: str) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    columns = ["config_hash"] + list(rows[0].keys())
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([config_hash] + [format_value(row[c]) for c in columns[1:]])
    return buf.getvalue()


def write_result(result: RunResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = result.config.config_hash
    (out / "results.csv").write_text(rows_to_csv(result.rows, h))
    summary = {
        "experiment": result.config.experiment,
        "config_hash": h,
        "config": result.config.to_dict(),
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "estimates": _jsonable(result.estimates),
        "assertions": [a.as_dict() for a in result.assertions],
        "passed": result.passed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def emit_summary(results_dir: str | Path) -> Path:
    """Write ``plot.csv``: long format, one observation per row, from a run directory."""
    d = Path(results_dir)
    csv_path, json_path = d / "results.csv", d / "summary.json"
    if not d.is_dir() or not csv_path.is_file() or not json_path.is_file():
        raise FileNotFoundError(f"{d} does not contain results.csv and summary.json")
    summary = json.loads(json_path.read_text())
    with open(csv_path, newline="") as fh:
        records = list(csv.DictReader(fh))
    if not records:
        raise ValueError(f"{csv_path} has no result rows")
    keys = PLOT_COLUMNS[summary["experiment"]]
    hashes = {r["config_hash"] for r in records}
    if len(hashes) != 1:
        raise ValueError(f"mixed config hashes in {csv_path}: {sorted(hashes)}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("config_hash",) + keys)
    for r in records:
        w.writerow([r["config_hash"]] + [r[k] for k in keys])
    target = d / "plot.csv"
    target.write_text(buf.getvalue())
    return target
