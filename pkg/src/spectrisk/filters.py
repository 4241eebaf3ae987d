"""Analytic spectral-regularization filters and their real-axis audits.

A filter family phi_lam approximates z -> 1/z with regularization strength
lam in (0, 1); its remainder is psi_lam(z) = 1 - z * phi_lam(z).  Four
families are implemented, all analytic in a neighbourhood of the spectrum:

* ``krr``               phi = 1/(z + lam)                   qualification 1
* ``iterated_ridge``    psi = (lam/(z + lam))**p            qualification p
* ``gradient_flow``     psi = exp(-z/lam)                   qualification inf
* ``gradient_descent``  psi = (1 - eta z)**(1/(eta lam))    qualification inf

Both evaluators accept real or complex ``z`` (scalars or arrays) and handle
the removable singularity at z = 0 by a 5-term series branch whenever
``|z| < 1e-4 * lam``; the direct formulas are written through
cancellation-free log1p/expm1 compositions.  Gradient descent uses the
principal branch of
(1 - eta z)**t, legitimate wherever Re(1 - eta z) > 0, which holds on the
wedge-plus-arc region used by the contour machinery when eta < 1/(2 kappa^2).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["FilterSpec", "make_filter", "audit_real_axis", "FilterAuditReport"]

FAMILIES = ("krr", "iterated_ridge", "gradient_flow", "gradient_descent")

_SERIES_CUTOFF = 1e-4
_SERIES_TERMS = 5


def _as_complex(z):
    arr = np.asarray(z)
    return np.atleast_1d(arr).astype(complex), np.isrealobj(arr), arr.ndim == 0


def _log1p_c(w):
    """Principal log(1 + w) for complex arrays without cancellation near 0."""
    re = 0.5 * np.log1p(2.0 * w.real + w.real ** 2 + w.imag ** 2)
    return re + 1j * np.arctan2(w.imag, 1.0 + w.real)


def _expm1_c(w):
    """exp(w) - 1 for complex arrays without cancellation near 0."""
    x, y = w.real, w.imag
    return (np.expm1(x) * np.cos(y) - 2.0 * np.sin(0.5 * y) ** 2) + 1j * (
        np.exp(x) * np.sin(y)
    )


def _phi_krr(lam, z):
    return 1.0 / (z + lam)


def _phi_iterated_ridge(lam, z, p):
    out = np.empty_like(z)
    small = np.abs(z) < _SERIES_CUTOFF * lam
    zb = z[~small]
    out[~small] = -_expm1_c(-p * _log1p_c(zb / lam)) / zb
    # (1 - (1+u)^-p)/z = (1/lam) sum_{k>=1} (-1)^(k+1) binom(p+k-1, k) u^(k-1)
    u = z[small] / lam
    acc = np.zeros_like(u)
    coef = float(p)
    upow = np.ones_like(u)
    for k in range(1, _SERIES_TERMS + 1):
        acc += coef * upow
        coef *= -(p + k) / (k + 1.0)
        upow = upow * u
    out[small] = acc / lam
    return out


def _phi_gradient_flow(lam, z):
    t = 1.0 / lam
    out = np.empty_like(z)
    w = t * z
    small = np.abs(w) < _SERIES_CUTOFF
    out[~small] = -_expm1_c(-w[~small]) / z[~small]
    # (1 - e^-w)/z = t sum_{k>=0} (-w)^k / (k+1)!
    ws = w[small]
    acc = np.zeros_like(ws)
    wpow = np.ones_like(ws)
    for k in range(_SERIES_TERMS):
        acc += (-1.0) ** k * wpow / math.factorial(k + 1)
        wpow = wpow * ws
    out[small] = t * acc
    return out


def _phi_gradient_descent(lam, z, eta):
    t = 1.0 / (eta * lam)
    out = np.empty_like(z)
    small = np.abs(z) < _SERIES_CUTOFF * lam
    zb = z[~small]
    out[~small] = -_expm1_c(t * _log1p_c(-eta * zb)) / zb
    # phi = sum_{k>=1} (-1)^(k+1) binom(t, k) eta^k z^(k-1)
    zs = z[small]
    acc = np.zeros_like(zs)
    coef = t * eta
    zpow = np.ones_like(zs)
    for k in range(1, _SERIES_TERMS + 1):
        acc += coef * zpow
        coef *= -(t - k) * eta / (k + 1.0)
        zpow = zpow * zs
    out[small] = acc
    return out


def _psi_krr(lam, z):
    return lam / (z + lam)


def _psi_iterated_ridge(lam, z, p):
    return np.exp(-p * _log1p_c(z / lam))


def _psi_gradient_flow(lam, z):
    return np.exp(-z / lam)


def _psi_gradient_descent(lam, z, eta):
    t = 1.0 / (eta * lam)
    return np.exp(t * _log1p_c(-eta * z))


@dataclass(frozen=True)
class FilterSpec:
    """One filter family bound to a spectrum bound kappa_sq.

    ``E_const`` bounds (z + lam) phi_lam(z) on the real segment [0, kappa_sq];
    ``F_tau(tau)`` bounds sup_z z^tau psi_lam(z) / lam^tau; ``F_lower``
    bounds psi from below as psi >= F_lower * lam^qualification when the
    qualification is finite.
    """

    family: str
    kappa_sq: float
    qualification: float
    E_const: float
    F_lower: float | None
    params: dict = field(default_factory=dict)

    def phi(self, lam: float, z):
        self._check_lambda(lam)
        zc, was_real, scalar = _as_complex(z)
        if self.family == "krr":
            out = _phi_krr(lam, zc)
        elif self.family == "iterated_ridge":
            out = _phi_iterated_ridge(lam, zc, self.params["p"])
        elif self.family == "gradient_flow":
            out = _phi_gradient_flow(lam, zc)
        else:
            out = _phi_gradient_descent(lam, zc, self.params["eta"])
        out = out.real if was_real else out
        return out[0] if scalar else out

    def psi(self, lam: float, z):
        self._check_lambda(lam)
        zc, was_real, scalar = _as_complex(z)
        if self.family == "krr":
            out = _psi_krr(lam, zc)
        elif self.family == "iterated_ridge":
            out = _psi_iterated_ridge(lam, zc, self.params["p"])
        elif self.family == "gradient_flow":
            out = _psi_gradient_flow(lam, zc)
        else:
            out = _psi_gradient_descent(lam, zc, self.params["eta"])
        out = out.real if was_real else out
        return out[0] if scalar else out

    def F_tau(self, tau: float) -> float:
        """Remainder constant: sup_z z^tau psi_lam(z) <= F_tau * lam^tau."""
        if tau < 0:
            raise ValueError("tau must be >= 0")
        if tau == 0:
            return 1.0
        if self.family in ("krr", "iterated_ridge"):
            p = self.params.get("p", 1.0)
            if tau > p:
                raise ValueError(f"tau={tau} exceeds qualification {p}")
            if tau == p:
                return 1.0
            return tau ** tau * (p - tau) ** (p - tau) / p ** p
        return (tau / math.e) ** tau

    def _check_lambda(self, lam: float):
        # the family is defined for lam in (0, 1) but the evaluators extend
        # to any positive lam (large lam is the psi -> 1 limit)
        if not lam > 0.0:
            raise ValueError(f"regularization lambda must be positive, got {lam}")

    def to_descriptor(self) -> dict:
        return {"family": self.family, "kappa_sq": self.kappa_sq, **self.params}

    def label(self) -> str:
        if self.family == "iterated_ridge":
            return f"iterated_ridge({self.params['p']:g})"
        if self.family == "gradient_descent":
            return f"gradient_descent(eta={self.params['eta']:.4g})"
        return self.family


# sup_{u>0} (1 + 1/u)(1 - e^-u) = 1.298426 at u = 1.7933, rounded up so the
# constant stays a valid upper bound for (z + lam) phi of the flow filter.
_FLOW_E = 1.29845


def make_filter(family: str, kappa_sq: float = 1.0, *, p: float | None = None, eta: float | None = None) -> FilterSpec:
    """Construct a filter family; see the module docstring for the catalog.

    ``iterated_ridge`` requires p >= 1 and ``gradient_descent`` a step size
    eta < 1/(2 kappa_sq), which keeps Re(1 - eta z) positive on the analytic
    region.
    """
    if kappa_sq <= 0:
        raise ValueError("kappa_sq must be positive")
    if family == "krr":
        return FilterSpec("krr", kappa_sq, 1.0, 1.0, 1.0 / (1.0 + kappa_sq))
    if family == "iterated_ridge":
        if p is None or p < 1:
            raise ValueError(f"iterated_ridge needs p >= 1, got {p}")
        return FilterSpec(
            "iterated_ridge", kappa_sq, float(p), float(p),
            (1.0 + kappa_sq) ** (-float(p)), params={"p": float(p)},
        )
    if family == "gradient_flow":
        return FilterSpec("gradient_flow", kappa_sq, math.inf, _FLOW_E, None)
    if family == "gradient_descent":
        if eta is None or eta >= 0.5 / kappa_sq:
            raise ValueError(
                f"gradient_descent needs eta < 1/(2 kappa_sq) = {0.5 / kappa_sq:.4g}, got {eta}"
            )
        if eta <= 0:
            raise ValueError("step size eta must be positive")
        # step-size inflation of the flow constant: (1-x)^(1/x) = e^-c(x) with
        # c(x) = -log(1-x)/x >= 1, so the flow bound applies after u -> c u.
        infl = -math.log1p(-eta * kappa_sq) / (eta * kappa_sq)
        return FilterSpec(
            "gradient_descent", kappa_sq, math.inf, _FLOW_E * infl,
            None, params={"eta": float(eta)},
        )
    raise ValueError(f"unknown filter family {family!r}; expected one of {FAMILIES}")


@dataclass
class FilterAuditReport:
    """Measured real-axis constants and axiom verdicts for one filter."""

    family: str
    kappa_sq: float
    identity_residual: float
    E_measured: float
    F_measured: dict
    F_declared: dict
    F_lower_measured: float | None
    psi_range_ok: bool
    psi_monotone_z_violations: int
    psi_monotone_lambda_violations: int
    monotone_worst_gap: float
    interpolation_ok: bool
    half_bound_ok: bool
    per_lambda_E: dict

    def ok(self) -> bool:
        return (
            self.identity_residual < 1e-12
            and self.psi_range_ok
            and self.psi_monotone_z_violations == 0
            and self.psi_monotone_lambda_violations == 0
            and self.interpolation_ok
            and self.half_bound_ok
        )

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.__dict__, default=float, **kwargs)


def audit_real_axis(f: FilterSpec, lambda_grid, z_grid, tau_grid) -> FilterAuditReport:
    """Measure the defining filter constants on a real (lambda, z) grid.

    Violations are recorded in the report, never raised: the audit is a
    measurement device.  The interpolation check verifies the multiplicative
    bound F_r <= F_0^(1 - r/tau) * F_tau^(r/tau) between measured constants,
    and the half bound checks psi_lam(z) >= 1/2 whenever z <= lam / (2 E).
    """
    lambda_grid = np.asarray(lambda_grid, dtype=float)
    z_grid = np.sort(np.asarray(z_grid, dtype=float))
    tau_grid = np.asarray(tau_grid, dtype=float)
    if lambda_grid.size == 0 or z_grid.size == 0:
        raise ValueError("audit grids must be nonempty")
    if np.any(lambda_grid <= 0) or np.any(lambda_grid >= 1):
        raise ValueError("audit lambda grid must lie in (0, 1)")
    if np.any(z_grid < 0) or np.any(z_grid > f.kappa_sq * (1 + 1e-12)):
        raise ValueError("z grid must lie in [0, kappa_sq]")

    taus = [
        float(t)
        for t in tau_grid
        if not math.isfinite(f.qualification) or float(t) <= f.qualification + 1e-12
    ]
    ident = 0.0
    E_meas = 0.0
    per_lambda_E = {}
    F_meas = {t: 0.0 for t in taus}
    F_low = math.inf if math.isfinite(f.qualification) else None
    range_ok = True
    viol_z = 0
    viol_lam = 0
    worst_gap = 0.0
    half_ok = True
    prev_psi = None
    for lam in np.sort(lambda_grid)[::-1]:
        phi = f.phi(lam, z_grid)
        psi = f.psi(lam, z_grid)
        ident = max(ident, float(np.max(np.abs(psi + z_grid * phi - 1.0))))
        e_here = float(np.max((z_grid + lam) * phi))
        per_lambda_E[float(lam)] = e_here
        E_meas = max(E_meas, e_here)
        if np.any(psi < -1e-12) or np.any(psi > 1.0 + 1e-12):
            range_ok = False
        dz = np.diff(psi)
        bad = dz > 1e-12
        viol_z += int(np.count_nonzero(bad))
        if np.any(bad):
            worst_gap = max(worst_gap, float(dz[bad].max()))
        if prev_psi is not None:
            # lambda decreases along the loop, so psi must not increase
            dpsi = psi - prev_psi
            bad = dpsi > 1e-12
            viol_lam += int(np.count_nonzero(bad))
            if np.any(bad):
                worst_gap = max(worst_gap, float(dpsi[bad].max()))
        prev_psi = psi
        for t in taus:
            F_meas[t] = max(F_meas[t], float(np.max(z_grid ** t * psi / lam ** t)))
        if F_low is not None:
            F_low = min(F_low, float(np.min(psi) / lam ** f.qualification))
        small = z_grid <= lam / (2.0 * f.E_const)
        if np.any(small) and np.min(psi[small]) < 0.5 - 1e-12:
            half_ok = False

    interp_ok = True
    pos = sorted(t for t in taus if t > 0)
    if pos:
        t_top = pos[-1]
        F0 = F_meas.get(0.0, 1.0)
        for r in pos[:-1]:
            bound = F0 ** (1 - r / t_top) * F_meas[t_top] ** (r / t_top)
            if F_meas[r] > bound * (1 + 1e-9):
                interp_ok = False

    F_declared = {t: f.F_tau(t) for t in taus}

    return FilterAuditReport(
        family=f.label(),
        kappa_sq=f.kappa_sq,
        identity_residual=ident,
        E_measured=E_meas,
        F_measured=F_meas,
        F_declared=F_declared,
        F_lower_measured=F_low,
        psi_range_ok=range_ok,
        psi_monotone_z_violations=viol_z,
        psi_monotone_lambda_violations=viol_lam,
        monotone_worst_gap=worst_gap,
        interpolation_ok=interp_ok,
        half_bound_ok=half_ok,
        per_lambda_E=per_lambda_E,
    )
