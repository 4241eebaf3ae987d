"""Deterministic risk predictions: bias main term, effective dimensions,
counting function, sandwich bounds, and rate arithmetic.

For a system with distinct eigenvalues mu_m (multiplicity d_m), a source
with block masses fbar_m^2 and a filter (phi, psi), the two quantities that
govern the large-sample risk are

    bias_main_term      R^2(lam)   = sum_m psi_lam(mu_m)^2 fbar_m^2
    phi_effective_dim   N_p(lam)   = sum_m d_m [mu_m phi_lam(mu_m)]^p

and the predicted risk at sample size n and noise variance sigma^2 is
R^2(lam) + (sigma^2 / n) N_2(lam).  Everything here is a finite sum over
the represented blocks; helpers estimate the truncated tails so the harness
can refuse configurations whose truncation is too coarse for the smallest
regularization probed.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .filters import FilterSpec
from .spectrum import EigenSystem, SourceFunction

__all__ = [
    "bias_main_term",
    "phi_effective_dim",
    "counting_function",
    "predicted_risk",
    "minimax_rate",
    "MinimaxRate",
    "TheoryCurve",
    "theory_curve",
    "effective_dim_sandwich",
    "residual_lower_bound",
    "effective_dim_tail_estimate",
    "ensure_truncation_budget",
    "TruncationBudgetError",
    "fit_loglog",
]

TAIL_BUDGET = 1e-3


class TruncationBudgetError(RuntimeError):
    """The represented spectrum is too short for the requested lambda range."""


def bias_main_term(sys: EigenSystem, f: SourceFunction, filt: FilterSpec, lam: float) -> float:
    """Main bias term sum_m psi_lam(mu_m)^2 fbar_m^2 over represented blocks."""
    psi = filt.psi(lam, sys.mu)
    return float(np.sum(psi ** 2 * f.fbar_sq))


def phi_effective_dim(sys: EigenSystem, filt: FilterSpec, p: float, lam: float) -> float:
    """Effective dimension of order p: sum_m d_m [mu_m phi_lam(mu_m)]^p."""
    if p < 1:
        raise ValueError(f"order p must be >= 1, got {p}")
    zp = sys.mu * filt.phi(lam, sys.mu)
    return float(np.sum(sys.mult * zp ** p))


def effective_dim_tail_estimate(sys: EigenSystem, filt: FilterSpec, p: float, lam: float) -> float:
    """Upper estimate of the truncated contribution to the order-p dimension.

    Beyond the represented blocks mu phi <= E mu / lam, so the tail is at
    most (E / lam)^p * sum_{m > M} d_m mu_m^p, estimated by power-law
    extrapolation of the represented trace sequence.
    """
    M = sys.M_max
    if M < 8:
        return math.nan
    mm = np.arange(M // 2, M + 1, dtype=float)
    mass = (sys.mult * sys.mu ** p)[M // 2 - 1 :]
    r = -np.polyfit(np.log(mm), np.log(np.maximum(mass, 1e-300)), 1)[0]
    if r <= 1.0:
        return math.inf
    tail = mass[-1] * M / (r - 1.0)
    return float((filt.E_const / lam) ** p * tail)


def counting_function(sys: EigenSystem, eps: float) -> int:
    """Number of counted eigenvalues >= eps in the represented spectrum."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if eps < sys.mu[-1]:
        warnings.warn(
            f"counting truncated: eps={eps:.3e} is below the smallest represented "
            f"eigenvalue {sys.mu[-1]:.3e}",
            RuntimeWarning,
        )
    return int(np.sum(sys.mult[sys.mu >= eps]))


def predicted_risk(
    sys: EigenSystem,
    f: SourceFunction,
    filt: FilterSpec,
    lam: float,
    n: int,
    sigma_sq: float,
) -> float:
    """Deterministic risk prediction R^2(lam) + (sigma^2 / n) N_2(lam)."""
    return bias_main_term(sys, f, filt, lam) + sigma_sq / n * phi_effective_dim(
        sys, filt, 2.0, lam
    )


@dataclass(frozen=True)
class MinimaxRate:
    """Risk-rate exponent and the matching regularization exponent.

    ``exponent`` is the power of n in the best achievable risk for source
    smoothness s under qualification tau_max; saturation caps the usable
    smoothness at 2 tau_max.  ``theta`` is the exponent of the optimal
    schedule lam ~ n^-theta.
    """

    exponent: float
    theta: float
    s_effective: float
    saturated: bool


def minimax_rate(beta: float, s: float, tau_max: float) -> MinimaxRate:
    if beta <= 1:
        raise ValueError("beta must exceed 1")
    if s <= 0:
        raise ValueError("s must be positive")
    s_eff = min(s, 2.0 * tau_max)
    return MinimaxRate(
        exponent=-s_eff * beta / (s_eff * beta + 1.0),
        theta=beta / (s_eff * beta + 1.0),
        s_effective=s_eff,
        saturated=s >= 2.0 * tau_max and math.isfinite(tau_max),
    )


def residual_lower_bound(sys: EigenSystem, f: SourceFunction, filt: FilterSpec, lam: float) -> float:
    """Lower bound (1/4) sum_{mu_m < lam / (2E)} fbar_m^2 for the bias term."""
    cut = lam / (2.0 * filt.E_const)
    return 0.25 * float(np.sum(f.fbar_sq[sys.mu < cut]))


def effective_dim_sandwich(
    sys: EigenSystem,
    filt: FilterSpec,
    p: float,
    lam: float,
    E: float | None = None,
    F1: float | None = None,
):
    """Two-sided bound for the order-p effective dimension.

    Returns (lower, value, upper) with
        lower = 2^-p * Phi(2 F1 lam)
        upper = p E^p / lam * integral_0^lam Phi(x) dx,
    where Phi is the counting function of the represented spectrum and the
    integral is exact for the piecewise-constant Phi: sum_j min(lam, lambda_j).
    ``E`` and ``F1`` default to constants measured on the represented
    eigenvalues so the inequality is airtight for the truncated system.
    """
    mu = sys.mu
    if E is None:
        E = float(np.max((mu + lam) * filt.phi(lam, mu)))
    if F1 is None:
        F1 = float(np.max(mu * filt.psi(lam, mu) / lam))
    counted = sys.counted_eigenvalues()
    lower = 2.0 ** (-p) * float(np.sum(counted >= 2.0 * F1 * lam))
    upper = p * E ** p / lam * float(np.sum(np.minimum(lam, counted)))
    return lower, phi_effective_dim(sys, filt, p, lam), upper


@dataclass
class TheoryCurve:
    """Deterministic risk curves over a lambda grid for several sample sizes."""

    lam_grid: np.ndarray
    n_grid: np.ndarray
    sigma_sq: float
    bias_sq: np.ndarray          # (len(lam_grid),)
    eff_dim_2: np.ndarray        # (len(lam_grid),)
    provenance: dict = field(default_factory=dict)

    def var_term(self, n: int) -> np.ndarray:
        return self.sigma_sq / n * self.eff_dim_2

    def predicted(self, n: int) -> np.ndarray:
        return self.bias_sq + self.var_term(n)

    def argmin_lambda(self, n: int) -> float:
        return float(self.lam_grid[int(np.argmin(self.predicted(n)))])

    def rows(self):
        for n in self.n_grid:
            for lam, b, e in zip(self.lam_grid, self.bias_sq, self.eff_dim_2):
                v = self.sigma_sq / n * e
                yield {
                    "lambda": float(lam),
                    "bias_sq": float(b),
                    "n": int(n),
                    "var_term": float(v),
                    "predicted_risk": float(b + v),
                }

    def to_json(self, **kwargs) -> str:
        return json.dumps(
            {
                "provenance": self.provenance,
                "sigma_sq": self.sigma_sq,
                "lambda": self.lam_grid.tolist(),
                "n_grid": self.n_grid.tolist(),
                "bias_sq": self.bias_sq.tolist(),
                "eff_dim_2": self.eff_dim_2.tolist(),
            },
            **kwargs,
        )


def theory_curve(
    sys: EigenSystem,
    f: SourceFunction,
    filt: FilterSpec,
    lam_grid,
    n_grid,
    sigma_sq: float,
) -> TheoryCurve:
    lam_grid = np.asarray(lam_grid, dtype=float)
    n_grid = np.asarray(n_grid, dtype=int)
    ensure_truncation_budget(sys, f, filt, float(lam_grid.min()))
    bias = np.array([bias_main_term(sys, f, filt, l) for l in lam_grid])
    eff = np.array([phi_effective_dim(sys, filt, 2.0, l) for l in lam_grid])
    return TheoryCurve(
        lam_grid=lam_grid,
        n_grid=n_grid,
        sigma_sq=sigma_sq,
        bias_sq=bias,
        eff_dim_2=eff,
        provenance={
            "system": sys.to_descriptor(),
            "source": f.to_descriptor(),
            "filter": filt.to_descriptor(),
        },
    )


def ensure_truncation_budget(
    sys: EigenSystem,
    f: SourceFunction | None,
    filt: FilterSpec,
    lam_min: float,
    budget: float = TAIL_BUDGET,
) -> dict:
    """Check the truncated tails against the computed quantities at lam_min.

    Raises TruncationBudgetError when either the effective-dimension tail or
    the source tail exceeds ``budget`` times the represented value; returns
    the computed tail ratios otherwise.
    """
    report = {}
    n2 = phi_effective_dim(sys, filt, 2.0, lam_min)
    n2_tail = effective_dim_tail_estimate(sys, filt, 2.0, lam_min)
    report["eff_dim_2"] = n2
    report["eff_dim_2_tail"] = n2_tail
    if not n2_tail < budget * n2:
        raise TruncationBudgetError(
            f"effective-dimension tail {n2_tail:.3e} exceeds {budget:.0e} of "
            f"N_2 = {n2:.3e} at lambda = {lam_min:.3e}; increase M_max"
        )
    if f is not None:
        r2 = bias_main_term(sys, f, filt, lam_min)
        f_tail = f.tail_mass()
        report["bias_sq"] = r2
        report["source_tail"] = f_tail
        if not f_tail < budget * r2:
            raise TruncationBudgetError(
                f"source tail {f_tail:.3e} exceeds {budget:.0e} of "
                f"R^2 = {r2:.3e} at lambda = {lam_min:.3e}; increase M_max"
            )
    return report


def fit_loglog(x, y, trim_half_decades: bool = False):
    """Least-squares slope of log y against log x.

    Returns (slope, stderr).  With ``trim_half_decades`` the first and last
    half decade of x are dropped before fitting, which removes grid-edge
    transients from rate measurements on lambda sweeps.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if trim_half_decades:
        keep = (x >= x.min() * math.sqrt(10.0)) & (x <= x.max() / math.sqrt(10.0))
        if np.count_nonzero(keep) >= 3:
            x, y = x[keep], y[keep]
    lx, ly = np.log(x), np.log(y)
    A = np.vstack([lx, np.ones_like(lx)]).T
    sol, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ sol
    dof = max(len(x) - 2, 1)
    denom = float(np.sum((lx - lx.mean()) ** 2))
    stderr = math.sqrt(float(np.sum(resid ** 2)) / dof / denom) if denom > 0 else math.inf
    return float(sol[0]), stderr
