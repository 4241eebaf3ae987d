"""Experiment orchestration: validated configs, sweep execution, persistence.

A run is described by a JSON or TOML config (see ``ExperimentConfig``),
executed by ``run``, and leaves behind CSV row files plus a ``summary.json``
carrying the full config, a SHA-256 config hash, measured statistics and
verdict booleans.  Exit status convention: 0 all checks pass, 1 an invariant
failed (including truncation budgets), 2 the config is invalid.

Sweep cells (n, seed) are independent; they may be executed by a thread
pool and are always merged in deterministic (n, seed) order, so reruns with
the same config and seeds are bit-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import empirical, funcalc, theory
from .filters import audit_real_axis, make_filter
from .spectrum import make_powerlaw_system, make_sphere_system, make_torus_system, make_source

__all__ = ["ExperimentConfig", "ConfigError", "run", "report_diff", "RunResult"]

MODES = ("curve", "sweep", "verify-filter", "verify-contour", "saturation", "interpolating")


class ConfigError(ValueError):
    """Invalid experiment configuration; carries a field path."""


def _require(cond, path, msg):
    if not cond:
        raise ConfigError(f"{path}: {msg}")


@dataclass
class ExperimentConfig:
    """Validated description of one run.

    ``lambda_rule`` is either {'mode': 'grid', 'values': [...]} (or
    min/max/points_per_decade), or {'mode': 'n-linked', 'a': a, 'theta': t}
    meaning lam(n) = a * n**-theta.
    """

    mode: str
    system: dict
    filter: dict
    source: dict | None = None
    filter_b: dict | None = None
    sigma_sq: float = 1.0
    n_grid: list = field(default_factory=list)
    lambda_rule: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    out: str = "runs/out"
    threads: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        _require(not unknown, sorted(unknown)[0] if unknown else "", "unknown config field")
        try:
            cfg = cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            raw = tomllib.loads(text)
        else:
            raw = json.loads(text)
        return cls.from_dict(raw)

    def validate(self):
        _require(self.mode in MODES, "mode", f"must be one of {MODES}")
        sysd = self.system
        _require(isinstance(sysd, dict) and "family" in sysd, "system", "needs a family tag")
        fam = sysd["family"]
        _require(fam in ("torus", "sphere", "powerlaw"), "system.family", f"unknown family {fam!r}")
        _require(sysd.get("M_max", 1) >= 1, "system.M_max", "must be >= 1")
        if fam in ("torus", "powerlaw"):
            _require(sysd.get("beta", 0) > 1, "system.beta", "must exceed 1")
        if fam == "sphere":
            _require(sysd.get("d", 0) >= 2, "system.d", "must be >= 2")
            _require(sysd.get("beta", 0) > 1, "system.beta", "must exceed 1")
        if fam == "powerlaw":
            _require(sysd.get("gamma", 1.0) >= 1.0, "system.gamma", "must be >= 1")
        for key, fd in (("filter", self.filter), ("filter_b", self.filter_b)):
            if fd is None:
                continue
            _require(isinstance(fd, dict) and "family" in fd, key, "needs a family tag")
            _require(
                fd["family"] in ("krr", "iterated_ridge", "gradient_flow", "gradient_descent"),
                f"{key}.family",
                f"unknown family {fd['family']!r}",
            )
            if fd["family"] == "iterated_ridge":
                _require(fd.get("p", 0) >= 1, f"{key}.p", "must be >= 1")
            if fd["family"] == "gradient_descent":
                frac = fd.get("eta_frac")
                _require(
                    frac is None or 0 < frac < 0.5,
                    f"{key}.eta_frac",
                    "must lie in (0, 0.5) as a fraction of 1/kappa_sq",
                )
        if self.source is not None:
            _require(self.source.get("s", 0) > 0, "source.s", "must be positive")
            _require(
                self.source.get("style", "exact-powerlaw") in ("exact-powerlaw", "gapped"),
                "source.style",
                "must be exact-powerlaw or gapped",
            )
        _require(self.sigma_sq >= 0, "sigma_sq", "must be >= 0")
        _require(self.threads >= 1, "threads", "must be >= 1")
        if self.mode in ("sweep", "saturation", "interpolating"):
            _require(len(self.n_grid) >= 1, "n_grid", "must be nonempty")
            _require(all(int(n) >= 1 for n in self.n_grid), "n_grid", "entries must be >= 1")
            _require(len(self.seeds) >= 1, "seeds", "must be nonempty for empirical modes")
            _require(self.source is not None, "source", "required for empirical modes")
        if self.mode == "saturation":
            _require(self.filter_b is not None, "filter_b", "saturation mode compares two filters")
        lr = self.lambda_rule
        if lr:
            _require(lr.get("mode") in ("grid", "n-linked"), "lambda_rule.mode", "grid or n-linked")
            if lr.get("mode") == "n-linked":
                _require(lr.get("theta", -1) > 0, "lambda_rule.theta", "must be positive")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "system": self.system,
            "filter": self.filter,
            "filter_b": self.filter_b,
            "source": self.source,
            "sigma_sq": self.sigma_sq,
            "n_grid": list(self.n_grid),
            "lambda_rule": self.lambda_rule,
            "seeds": list(self.seeds),
            "out": self.out,
            "threads": self.threads,
        }

    def config_hash(self) -> str:
        """Hash of the experiment-defining fields.

        Output location and worker count do not change what is computed, so
        they are excluded: reruns of the same experiment hash identically.
        """
        payload = {k: v for k, v in self.to_dict().items() if k not in ("out", "threads")}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _build_system(sysd: dict):
    fam = sysd["family"]
    if fam == "torus":
        return make_torus_system(sysd["beta"], sysd.get("M_max", 1024))
    if fam == "sphere":
        return make_sphere_system(sysd["d"], M_max=sysd.get("M_max", 64), beta=sysd["beta"])
    return make_powerlaw_system(sysd["beta"], sysd.get("gamma", 1.0), sysd.get("M_max", 1000))


def _build_filter(fd: dict, kappa_sq: float):
    fam = fd["family"]
    if fam == "iterated_ridge":
        return make_filter(fam, kappa_sq, p=fd["p"])
    if fam == "gradient_descent":
        eta = fd.get("eta")
        if eta is None:
            eta = fd.get("eta_frac", 0.4) / kappa_sq
        return make_filter(fam, kappa_sq, eta=eta)
    return make_filter(fam, kappa_sq)


def _build_source(sys_, srcd: dict):
    return make_source(
        sys_, srcd["s"], srcd.get("style", "exact-powerlaw"), srcd.get("q", 2.0)
    )


def _lambda_for_n(cfg: ExperimentConfig, n: int) -> float:
    lr = cfg.lambda_rule or {"mode": "n-linked", "a": 1.0, "theta": 2.0 / 3.0}
    if lr["mode"] == "n-linked":
        return lr.get("a", 1.0) * float(n) ** (-lr["theta"])
    values = _lambda_grid(cfg)
    if len(values) != 1:
        raise ConfigError("lambda_rule: sweep with mode=grid needs exactly one value per n")
    return float(values[0])


def _lambda_grid(cfg: ExperimentConfig) -> np.ndarray:
    lr = cfg.lambda_rule
    if lr.get("values"):
        return np.asarray(lr["values"], dtype=float)
    lo = lr.get("min", 1e-4)
    hi = lr.get("max", 1e-1)
    ppd = lr.get("points_per_decade", 32)
    npts = max(int(round(math.log10(hi / lo) * ppd)) + 1, 2)
    return np.geomspace(lo, hi, npts)


def _write_csv(path: Path, rows: list[dict], config_hash: str):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


@dataclass
class RunResult:
    exit_code: int
    summary: dict
    out_dir: Path


def run(config: ExperimentConfig) -> RunResult:
    """Execute one configured experiment and persist its outputs."""
    t0 = time.time()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    dispatch = {
        "curve": _run_curve,
        "sweep": _run_sweep,
        "verify-filter": _run_verify_filter,
        "verify-contour": _run_verify_contour,
        "saturation": _run_saturation,
        "interpolating": _run_interpolating,
    }
    summary = {
        "mode": config.mode,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
    }
    try:
        body, ok = dispatch[config.mode](config, out)
    except ConfigError:
        raise
    except (theory.TruncationBudgetError, ValueError, RuntimeError) as exc:
        summary["error"] = str(exc)
        summary["runtime_s"] = time.time() - t0
        (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float))
        return RunResult(1, summary, out)
    summary.update(body)
    summary["runtime_s"] = time.time() - t0
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float))
    return RunResult(0 if ok else 1, summary, out)


def _run_curve(cfg: ExperimentConfig, out: Path):
    sys_ = _build_system(cfg.system)
    filt = _build_filter(cfg.filter, sys_.kappa_sq)
    src = _build_source(sys_, cfg.source)
    lam_grid = _lambda_grid(cfg)
    n_grid = cfg.n_grid or [256, 1024, 4096]
    curve = theory.theory_curve(sys_, src, filt, lam_grid, n_grid, cfg.sigma_sq)
    _write_csv(out / "curve.csv", list(curve.rows()), cfg.config_hash())
    bias_monotone = bool(np.all(np.diff(curve.bias_sq) >= -1e-14 * curve.bias_sq[:-1]))
    eff_monotone = bool(np.all(np.diff(curve.eff_dim_2) <= 1e-14 * curve.eff_dim_2[:-1]))
    quasiconvex = all(
        _is_quasiconvex(curve.predicted(n)) for n in n_grid
    )
    body = {
        "lambda_min": float(lam_grid.min()),
        "lambda_max": float(lam_grid.max()),
        "argmin_lambda": {str(n): curve.argmin_lambda(n) for n in n_grid},
        "verdicts": {
            "bias_nondecreasing_in_lambda": bias_monotone,
            "eff_dim_nonincreasing_in_lambda": eff_monotone,
            "predicted_risk_quasiconvex": quasiconvex,
        },
    }
    return body, bias_monotone and eff_monotone and quasiconvex


def _is_quasiconvex(y: np.ndarray, rel_tol: float = 1e-12) -> bool:
    """No interior strict local maximum between two lower values."""
    i = int(np.argmin(y))
    left = y[: i + 1]
    right = y[i:]
    return bool(
        np.all(np.diff(left) <= rel_tol * np.abs(left[:-1]) + 1e-300)
        and np.all(np.diff(right) >= -rel_tol * np.abs(right[:-1]) - 1e-300)
    )


def _run_sweep(cfg: ExperimentConfig, out: Path):
    sys_ = _build_system(cfg.system)
    filt = _build_filter(cfg.filter, sys_.kappa_sq)
    src = _build_source(sys_, cfg.source)
    lam_min = min(_lambda_for_n(cfg, int(n)) for n in cfg.n_grid)
    theory.ensure_truncation_budget(sys_, src, filt, lam_min)

    cells = [(int(n), int(seed)) for n in sorted(cfg.n_grid) for seed in cfg.seeds]

    def cell(args):
        n, seed = args
        lam = _lambda_for_n(cfg, n)
        X = empirical.sample_design(sys_, n, seed)
        gp = empirical.build_gram(sys_, src, X)
        return empirical.exact_conditional_risk(gp, filt, lam, cfg.sigma_sq).row()

    rows = _map_cells(cell, cells, cfg.threads)
    _write_csv(out / "rows.csv", rows, cfg.config_hash())
    per_n = {}
    ok = True
    for n in sorted({r["n"] for r in rows}):
        ratios = np.array([r["ratio"] for r in rows if r["n"] == n])
        q75, q25 = np.percentile(ratios, [75, 25])
        per_n[str(n)] = {
            "median_ratio": float(np.median(ratios)),
            "iqr_ratio": float(q75 - q25),
            "spread_ratio": float(ratios.max() - ratios.min()),
            "lambda": _lambda_for_n(cfg, n),
        }
        ok = ok and bool(np.all(np.isfinite(ratios)) and np.all(ratios > 0))
    finite = all(
        math.isfinite(r["bias_sq"]) and r["bias_sq"] >= -1e-12 and r["var"] >= 0
        for r in rows
    )
    return {"per_n": per_n, "verdicts": {"rows_finite_nonnegative": finite}}, ok and finite


def _map_cells(fn, cells, threads):
    if threads <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, cells))


def _run_verify_filter(cfg: ExperimentConfig, out: Path):
    sys_ = _build_system(cfg.system)
    filt = _build_filter(cfg.filter, sys_.kappa_sq)
    lam_grid = cfg.lambda_rule.get("values") or np.geomspace(1e-5, 0.5, 100)
    z_grid = np.linspace(0.0, sys_.kappa_sq, 100)
    tau_grid = [t for t in (0.5, 1.0, 2.0, 4.0, 8.0) if t <= min(filt.qualification, 8.0)]
    report = audit_real_axis(filt, lam_grid, z_grid, tau_grid)
    payload = json.loads(report.to_json())
    payload["config_hash"] = cfg.config_hash()
    (out / "filter_audit.json").write_text(json.dumps(payload, indent=2, default=float))
    body = {
        "measured_E": report.E_measured,
        "measured_F": report.F_measured,
        "declared_F": report.F_declared,
        "verdicts": {
            "axioms_ok": report.ok(),
            "F_within_declared": all(
                report.F_measured[t] <= report.F_declared[t] * (1 + 1e-9)
                for t in report.F_measured
            ),
        },
    }
    return body, bool(body["verdicts"]["axioms_ok"] and body["verdicts"]["F_within_declared"])


def _run_verify_contour(cfg: ExperimentConfig, out: Path):
    sys_ = _build_system(cfg.system)
    filt = _build_filter(cfg.filter, sys_.kappa_sq)
    lam_grid = cfg.lambda_rule.get("values") or [10.0 ** -k for k in range(1, 6)]
    report = funcalc.audit_analytic_conditions(filt, lam_grid)
    payload = json.loads(report.to_json())
    payload["config_hash"] = cfg.config_hash()
    (out / "contour_audit.json").write_text(json.dumps(payload, indent=2, default=float))
    bound_ratios = {}
    for lam in lam_grid:
        path = funcalc.build_contour(float(lam), sys_.kappa_sq)
        bound_ratios[str(lam)] = path.resolvent_abs_integral() / math.log(1.0 / lam)
    rng = np.random.default_rng(2718)
    A = rng.standard_normal((16, 16))
    A = A @ A.T
    A *= 0.9 * sys_.kappa_sq / np.linalg.eigvalsh(A).max()
    rel_errs = {}
    reductions = {}
    for lam in (0.3, 0.05):
        ref = funcalc.matrix_filter_eig(A, filt, "phi", lam)
        approx = funcalc.matrix_filter_contour(A, filt, lam)
        err1 = np.linalg.norm(approx - ref, 2) / np.linalg.norm(ref, 2)
        approx2 = funcalc.matrix_filter_contour(
            A, filt, lam, funcalc.build_contour(lam, filt.kappa_sq, 1024)
        )
        err2 = np.linalg.norm(approx2 - ref, 2) / np.linalg.norm(ref, 2)
        rel_errs[str(lam)] = float(err1)
        reductions[str(lam)] = float(err1 / max(err2, 1e-300))
    cross_ok = all(e <= 1e-6 for e in rel_errs.values())
    bounded = max(bound_ratios.values()) < 20.0
    body = {
        "E_tilde": report.E_tilde,
        "F_tilde": report.F_tilde,
        "resolvent_bound_over_log": bound_ratios,
        "eig_vs_contour_rel_err": rel_errs,
        "doubling_reduction": reductions,
        "verdicts": {"cross_check_ok": cross_ok, "resolvent_bound_bounded": bounded},
    }
    return body, cross_ok and bounded


def _run_saturation(cfg: ExperimentConfig, out: Path):
    if cfg.filter_b is None:
        raise ConfigError("filter_b: saturation mode compares two filters")
    sys_ = _build_system(cfg.system)
    src = _build_source(sys_, cfg.source)
    filt_a = _build_filter(cfg.filter, sys_.kappa_sq)
    filt_b = _build_filter(cfg.filter_b, sys_.kappa_sq)
    lam_grid = _lambda_grid(cfg) if cfg.lambda_rule else np.geomspace(5e-3, 0.6, 22)
    theory.ensure_truncation_budget(sys_, src, filt_a, float(lam_grid.min()))

    cells = [(int(n), int(seed)) for n in sorted(cfg.n_grid) for seed in cfg.seeds]

    def cell(args):
        n, seed = args
        X = empirical.sample_design(sys_, n, seed)
        gp = empirical.build_gram(sys_, src, X)
        out_rows = []
        for tag, filt in (("a", filt_a), ("b", filt_b)):
            for lam in lam_grid:
                r = empirical.exact_conditional_risk(gp, filt, float(lam), cfg.sigma_sq)
                row = r.row()
                row["filter"] = tag
                out_rows.append(row)
        return out_rows

    rows = [r for chunk in _map_cells(cell, cells, cfg.threads) for r in chunk]
    _write_csv(out / "rows.csv", rows, cfg.config_hash())

    slopes = {}
    for tag, filt in (("a", filt_a), ("b", filt_b)):
        best = []
        ns = sorted({r["n"] for r in rows})
        for n in ns:
            med = [
                np.median(
                    [r["total"] for r in rows if r["filter"] == tag and r["n"] == n and r["lambda"] == lam]
                )
                for lam in lam_grid
            ]
            best.append(min(med))
        slope, se = theory.fit_loglog(ns, best)
        slopes[tag] = {
            "filter": filt.label(),
            "slope": slope,
            "stderr": se,
            "best_risk": dict(zip(map(str, ns), map(float, best))),
        }
    body = {
        "slopes": slopes,
        "slope_delta": slopes["a"]["slope"] - slopes["b"]["slope"],
        "verdicts": {"finite": all(math.isfinite(s["slope"]) for s in slopes.values())},
    }
    return body, bool(body["verdicts"]["finite"])


def _run_interpolating(cfg: ExperimentConfig, out: Path):
    sys_ = _build_system(cfg.system)
    filt = _build_filter(cfg.filter, sys_.kappa_sq)
    src = _build_source(sys_, cfg.source)
    lam_min = float(max(cfg.n_grid)) ** (-sys_.beta)
    theory.ensure_truncation_budget(sys_, None, filt, lam_min)

    reports = [
        empirical.interpolating_probe(sys_, src, filt, cfg.sigma_sq, cfg.n_grid, int(seed))
        for seed in cfg.seeds
    ]
    rows = [dict(r, seed=rep["seed"]) for rep in reports for r in rep["rows"]]
    _write_csv(out / "rows.csv", rows, cfg.config_hash())
    per_n = {}
    for n in sorted(cfg.n_grid):
        vals = [r["var_over_sigma_sq"] for r in rows if r["n"] == n]
        per_n[str(n)] = float(np.median(vals))
    slope, se = theory.fit_loglog(sorted(cfg.n_grid), [per_n[str(n)] for n in sorted(cfg.n_grid)])
    floor = min(per_n.values())
    body = {
        "per_n_median_var_over_sigma_sq": per_n,
        "slope": slope,
        "slope_stderr": se,
        "floor": floor,
        "verdicts": {"floor_positive": floor > 0},
    }
    return body, floor > 0


def report_diff(summary_a: dict | str | Path, summary_b: dict | str | Path) -> dict:
    """Compare two run summaries: per-key ratio tables and slope deltas.

    Both runs must carry the same mode-specific tables; mismatched schemas
    raise ConfigError.
    """
    a = _load_summary(summary_a)
    b = _load_summary(summary_b)
    diff: dict = {"mode_a": a.get("mode"), "mode_b": b.get("mode")}
    slope_a, slope_b = _extract_slope(a), _extract_slope(b)
    if slope_a is not None and slope_b is not None:
        diff["slope_delta"] = slope_a - slope_b
    if "per_n" in a and "per_n" in b:
        common = sorted(set(a["per_n"]) & set(b["per_n"]), key=float)
        if not common:
            raise ConfigError("per_n tables share no sample sizes")
        diff["per_n_median_ratio"] = {
            n: a["per_n"][n]["median_ratio"] / b["per_n"][n]["median_ratio"] for n in common
        }
        diff["per_n_median_delta"] = {
            n: a["per_n"][n]["median_ratio"] - b["per_n"][n]["median_ratio"] for n in common
        }
    if a.get("mode") == b.get("mode") == "saturation":
        diff["slope_delta"] = a["slopes"]["a"]["slope"] - b["slopes"]["a"]["slope"]
        diff["within_run_delta_a"] = a["slope_delta"]
        diff["within_run_delta_b"] = b["slope_delta"]
    if not any(k for k in diff if k.startswith(("slope", "per_n", "within"))):
        raise ConfigError("summaries share no comparable tables")
    return diff


def _extract_slope(summary: dict):
    if "slope" in summary:
        return summary["slope"]
    if "slopes" in summary:
        return summary["slopes"]["a"]["slope"]
    return None


def _load_summary(obj) -> dict:
    if isinstance(obj, dict):
        return obj
    return json.loads(Path(obj).read_text())
