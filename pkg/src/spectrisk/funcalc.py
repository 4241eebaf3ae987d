"""Complex-plane machinery: the wedge-plus-arc contour, boundary audits of
the analytic filter bounds, and matrix filter functions computed two ways.

The contour around the spectrum [0, kappa^2] consists of two wedge legs
x -+ (x + eta) i for x in [-eta, kappa^2] with eta = lam/2, closed on the
right by the arc |z - kappa^2| = kappa^2 + eta, Re z >= kappa^2.  It is
traversed counterclockwise starting and ending at the corner z = -eta.

Quadrature: each segment is a composite trapezoid rule on a uniform
parameter grid v in [0, 1] with analytic derivative weights h * z'(v).  The
wedge legs are graded log-uniformly in (x + eta + lam/2), which resolves the
corner at the lam scale, and the grading is composed with an
endpoint-regularized map whose derivatives vanish at the segment ends.  The
composition kills the Euler-Maclaurin boundary terms at the three contour
corners; a plain log-graded trapezoid stalls near 1e-5 relative error at 512
nodes per segment, while this rule reaches ~1e-12 and keeps the trapezoid
signature (doubling the nodes cuts the error by ~16x).

Matrix functions of a Hermitian matrix are computed either by
eigendecomposition (the reference path) or by the Cauchy integral
(1/2 pi i) \oint f(z) (z - A)^{-1} dz over this contour with one linear
solve per node; their agreement is the module's central cross-check.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .filters import FilterSpec

__all__ = [
    "ContourPath",
    "build_contour",
    "audit_analytic_conditions",
    "matrix_filter_eig",
    "matrix_filter_contour",
    "AnalyticAuditReport",
]

GRADING_ORDER = 4


def _endpoint_regularized(v: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Monotone map [0,1] -> [0,1] with ``order - 1`` vanishing derivatives
    at both ends, and its derivative."""
    a = v ** order
    b = (1.0 - v) ** order
    m = a / (a + b)
    dm = order * (v ** (order - 1) * b + (1.0 - v) ** (order - 1) * a) / (a + b) ** 2
    return m, dm


@dataclass(frozen=True)
class ContourPath:
    """Discretized closed contour with quadrature weights.

    ``weights`` are the complex dz-weights: \oint f(z) dz ~= sum w_k f(z_k).
    ``abs_weights`` integrate against arc length |dz|.  ``segment`` labels
    each node 'wedge' or 'arc'.
    """

    nodes: np.ndarray
    weights: np.ndarray
    abs_weights: np.ndarray
    segment: np.ndarray
    lam: float
    kappa_sq: float
    nodes_per_segment: int

    def winding_number(self, a: complex) -> complex:
        """(1/2 pi i) \oint dz / (z - a); ~1 for a inside the contour."""
        return complex(np.sum(self.weights / (self.nodes - a)) / (2j * math.pi))

    def resolvent_abs_integral(self) -> float:
        """\oint |dz| / |z + lam| over the discretized path."""
        return float(np.sum(self.abs_weights / np.abs(self.nodes + self.lam)))


def build_contour(lam: float, kappa_sq: float, nodes_per_segment: int = 512) -> ContourPath:
    """Counterclockwise closed discretization of the wedge-plus-arc contour.

    The three segments (lower leg, arc, upper leg) get ``nodes_per_segment``
    nodes each.  The first and last nodes are both the wedge corner -lam/2,
    so the path closes exactly.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    if kappa_sq <= 0:
        raise ValueError("kappa_sq must be positive")
    if nodes_per_segment < 16:
        raise ValueError("need at least 16 nodes per segment")
    eta = 0.5 * lam
    U = kappa_sq + eta
    N = nodes_per_segment
    v = np.linspace(0.0, 1.0, N)
    h = v[1] - v[0]
    m, dm = _endpoint_regularized(v, GRADING_ORDER)

    # wedge legs: u = x + eta in [0, U], graded log-uniformly in (u + eta)
    span = math.log((U + eta) / eta)
    u = eta * np.exp(span * m) - eta
    u[0], u[-1] = 0.0, U
    du = (u + eta) * span * dm
    w_param = np.full(N, h)
    w_param[0] *= 0.5
    w_param[-1] *= 0.5

    z_lo = -eta + (1.0 - 1.0j) * u
    w_lo = (1.0 - 1.0j) * du * w_param
    z_up = (-eta + (1.0 + 1.0j) * u)[::-1]
    w_up = (-(1.0 + 1.0j) * du * w_param)[::-1]

    R = kappa_sq + eta
    theta = -0.5 * math.pi + math.pi * m
    ztheta = R * np.exp(1j * theta)
    z_arc = kappa_sq + ztheta
    w_arc = 1j * ztheta * (math.pi * dm) * w_param

    nodes = np.concatenate([z_lo, z_arc, z_up])
    weights = np.concatenate([w_lo, w_arc, w_up])
    segment = np.array(["wedge"] * N + ["arc"] * N + ["wedge"] * N)
    return ContourPath(
        nodes=nodes,
        weights=weights,
        abs_weights=np.abs(weights),
        segment=segment,
        lam=lam,
        kappa_sq=kappa_sq,
        nodes_per_segment=N,
    )


def matrix_filter_eig(A: np.ndarray, f: FilterSpec, which: str, lam: float) -> np.ndarray:
    """Apply phi_lam or psi_lam to a Hermitian matrix by eigendecomposition.

    Eigenvalues slightly below zero (round-off) are clamped to 0; anything
    above kappa_sq + 1e-8 is outside the filter's domain and an error.
    """
    if which not in ("phi", "psi"):
        raise ValueError("which must be 'phi' or 'psi'")
    A = np.asarray(A)
    w, U = np.linalg.eigh(A)
    if w.min() < -1e-10 * max(f.kappa_sq, 1.0):
        raise ValueError(f"matrix has eigenvalue {w.min():.3e} below the PSD tolerance")
    if w.max() > f.kappa_sq + 1e-8:
        raise ValueError(
            f"matrix spectrum reaches {w.max():.6g}, beyond kappa_sq = {f.kappa_sq:.6g}"
        )
    w = np.clip(w, 0.0, None)
    fw = f.phi(lam, w) if which == "phi" else f.psi(lam, w)
    out = (U * fw) @ U.conj().T
    return 0.5 * (out + out.conj().T)


def matrix_filter_contour(
    A: np.ndarray,
    f: FilterSpec,
    lam: float,
    contour: ContourPath | None = None,
    which: str = "phi",
) -> np.ndarray:
    """Apply the filter to a Hermitian matrix by Cauchy-integral quadrature.

    One dense linear solve per contour node.  Nodes on the real axis are
    checked against the admissible spectrum interval; a node within 1e-8 of
    [0, kappa_sq] would make the resolvent solve ill-posed.
    """
    if contour is None:
        contour = build_contour(lam, f.kappa_sq)
    A = np.asarray(A, dtype=complex)
    n = A.shape[0]
    real_nodes = np.abs(contour.nodes.imag) < 1e-8
    if np.any(real_nodes):
        x = contour.nodes.real[real_nodes]
        dist = np.maximum(np.maximum(-x, x - f.kappa_sq), 0.0)
        if np.any(dist < 1e-8):
            warnings.warn(
                "contour node within 1e-8 of the admissible spectrum interval",
                RuntimeWarning,
            )
    fz = f.phi(lam, contour.nodes) if which == "phi" else f.psi(lam, contour.nodes)
    eye = np.eye(n, dtype=complex)
    acc = np.zeros((n, n), dtype=complex)
    for z_k, w_k, f_k in zip(contour.nodes, contour.weights, fz):
        acc += (w_k * f_k) * np.linalg.solve(z_k * eye - A, eye)
    return acc / (2j * math.pi)


@dataclass
class AnalyticAuditReport:
    """Boundary suprema of |(z+lam) phi| and |(z+lam) psi| / lam per lambda."""

    family: str
    kappa_sq: float
    per_lambda: dict = field(default_factory=dict)

    @property
    def E_tilde(self) -> float:
        return max(v["E"] for v in self.per_lambda.values())

    @property
    def F_tilde(self) -> float:
        return max(v["F"] for v in self.per_lambda.values())

    def to_json(self, **kwargs) -> str:
        payload = {
            "family": self.family,
            "kappa_sq": self.kappa_sq,
            "E_tilde": self.E_tilde,
            "F_tilde": self.F_tilde,
            "per_lambda": self.per_lambda,
        }
        return json.dumps(payload, default=float, **kwargs)


def audit_analytic_conditions(
    f: FilterSpec, lambda_grid, boundary_nodes: int = 512
) -> AnalyticAuditReport:
    """Measure the analytic filter bounds on the contour nodes.

    By the maximum modulus principle the suprema of |(z+lam) phi_lam| and
    |(z+lam) psi_lam| over the enclosed region are attained on the boundary,
    so sampling the contour nodes measures the two constants directly.
    Unbounded growth shows up as large report values, never as an exception.
    """
    report = AnalyticAuditReport(family=f.label(), kappa_sq=f.kappa_sq)
    for lam in np.sort(np.asarray(lambda_grid, dtype=float))[::-1]:
        path = build_contour(float(lam), f.kappa_sq, boundary_nodes)
        zl = path.nodes + lam
        phi_abs = np.abs(zl * f.phi(float(lam), path.nodes))
        psi_abs = np.abs(zl * f.psi(float(lam), path.nodes)) / lam
        ze = path.nodes[int(phi_abs.argmax())]
        zf = path.nodes[int(psi_abs.argmax())]
        report.per_lambda[float(lam)] = {
            "E": float(phi_abs.max()),
            "F": float(psi_abs.max()),
            "E_worst_node": [float(ze.real), float(ze.imag)],
            "F_worst_node": [float(zf.real), float(zf.imag)],
            "nonfinite_nodes": int(
                np.count_nonzero(~np.isfinite(phi_abs)) + np.count_nonzero(~np.isfinite(psi_abs))
            ),
        }
    return report
