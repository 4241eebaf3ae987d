"""Truncated eigen-systems of kernel integral operators and source functions.

Every system here is a finite stand-in for a trace-class positive operator
with distinct eigenvalues mu_1 > mu_2 > ... > mu_M and eigenspace dimensions
d_m.  Three concrete families are provided:

* the 1-d torus with the Fourier basis (multiplicities 1, 2, 2, ...),
* dot-product kernels on the d-sphere, where eigenspaces are the degree-m
  harmonic polynomials and block kernels are Gegenbauer polynomials,
* abstract diagonal systems with cumulative multiplicity ~ m^gamma, which
  carry no point evaluation and serve the deterministic computations only.

Eigenvalues are normalized so the largest counted eigenvalue is 1.  All
constructions keep the truncation explicit: the reported ``tail_mass``
estimates the trace mass of the discarded blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb

__all__ = [
    "EigenSystem",
    "SourceFunction",
    "make_torus_system",
    "make_sphere_system",
    "make_powerlaw_system",
    "kernel_eval",
    "make_source",
    "interp_norm_sq",
    "gegenbauer_block",
]


@dataclass(frozen=True)
class EigenSystem:
    """Truncated distinct-eigenvalue spectrum with eigenfunction access.

    ``mu`` holds the distinct eigenvalues (strictly decreasing), ``mult``
    their multiplicities.  ``beta`` is the decay exponent of the counted
    sequence, bracketed by ``c_eig * j**-beta <= lambda_j <= C_eig * j**-beta``
    over the represented range.  ``regularity_M`` bounds the running
    eigenfunction sums sup_x sum_{m<=N} k_m(x,x) / sum_{m<=N} d_m.
    """

    family: str
    mu: np.ndarray
    mult: np.ndarray
    beta: float
    c_eig: float
    C_eig: float
    regularity_M: float
    kappa_sq: float
    tail_mass: float
    params: dict = field(default_factory=dict)

    @property
    def M_max(self) -> int:
        return len(self.mu)

    @property
    def supports_points(self) -> bool:
        return self.family in ("torus", "sphere")

    @property
    def supports_eval_block(self) -> bool:
        return self.family == "torus"

    def counted_eigenvalues(self) -> np.ndarray:
        """Eigenvalues repeated with multiplicity, in decreasing order."""
        return np.repeat(self.mu, self.mult)

    def block_frequencies(self, m: int):
        """Integer frequencies of block ``m`` (torus only, 1-based)."""
        if self.family != "torus":
            raise ValueError(f"{self.family} system has no Fourier frequencies")
        if m == 1:
            return np.array([0])
        return np.array([m - 1, -(m - 1)])

    def eval_block(self, m: int, x):
        """Values (e_{m,1}(x), ..., e_{m,d_m}(x)) of the block eigenfunctions.

        For the torus these are the complex exponentials exp(i*k*x) for the
        block frequencies.  Sphere and abstract systems do not expose
        individual eigenfunctions.
        """
        if self.family != "torus":
            raise ValueError(
                f"{self.family} system does not support per-function evaluation"
            )
        freqs = self.block_frequencies(m)
        x = np.asarray(x, dtype=float)
        return np.exp(1j * np.multiply.outer(x, freqs))

    def block_kernel(self, m: int, x, y) -> np.ndarray:
        """Pairwise block kernel k_m(x_i, y_j) = sum_l conj(e_{m,l}(x)) e_{m,l}(y)."""
        if self.family == "torus":
            ex = self.eval_block(m, x)
            ey = self.eval_block(m, y)
            return np.conj(ex) @ ey.swapaxes(-1, -2) if ex.ndim > 1 else np.sum(
                np.conj(ex) * ey
            )
        if self.family == "sphere":
            d = self.params["d"]
            t = np.inner(np.atleast_2d(x), np.atleast_2d(y))
            return gegenbauer_block(m - 1, d, t)
        raise ValueError(f"{self.family} system does not support point evaluation")

    def to_descriptor(self) -> dict:
        return {"family": self.family, "M_max": self.M_max, **self.params}


def _tail_mass_powerlaw(coef: float, exponent: float, m_from: float) -> float:
    """Integral estimate of sum_{m > m_from} coef * m**-exponent."""
    if exponent <= 1.0:
        return math.inf
    return coef * m_from ** (1.0 - exponent) / (exponent - 1.0)


def make_torus_system(decay_beta: float, M_max: int) -> EigenSystem:
    """Shift-invariant kernel on the 1-d torus with uniform measure.

    Blocks are the Fourier frequency pairs {0}, {+-1}, {+-2}, ...; the block
    with frequencies +-k occupies counted positions 2k and 2k+1, and its
    eigenvalue is pinned to the power law at the first of them:
    mu_1 = 1 and mu_m = (2m-2)**-beta for m >= 2.  An exactly power-law
    counted sequence is impossible with the multiplicity-2 blocks, so the
    bracket constants are c_eig = 1 and C_eig = ((2m-1)/(2m-2))**beta <= 1.5**beta.
    """
    if M_max < 1:
        raise ValueError(f"M_max must be >= 1, got {M_max}")
    if decay_beta <= 1.0:
        raise ValueError(f"decay_beta must exceed 1, got {decay_beta}")
    m = np.arange(1, M_max + 1, dtype=float)
    mu = np.empty(M_max)
    mu[0] = 1.0
    if M_max > 1:
        mu[1:] = (2.0 * m[1:] - 2.0) ** (-decay_beta)
    mult = np.full(M_max, 2, dtype=np.int64)
    mult[0] = 1
    kappa_sq = float(np.sum(mult * mu))
    tail = _tail_mass_powerlaw(2.0 * 2.0 ** (-decay_beta), decay_beta, M_max - 1.0)
    return EigenSystem(
        family="torus",
        mu=mu,
        mult=mult,
        beta=decay_beta,
        c_eig=1.0,
        C_eig=1.5 ** decay_beta,
        regularity_M=1.0,
        kappa_sq=kappa_sq,
        tail_mass=tail,
        params={"beta": decay_beta, "M_max": int(M_max)},
    )


def sphere_block_dim(degree: int, d: int) -> int:
    """Dimension of degree-m harmonic polynomials on the d-sphere."""
    if degree == 0:
        return 1
    return int(comb(degree + d, degree, exact=True) - comb(degree - 2 + d, degree - 2, exact=True))


def gegenbauer_block(degree: int, d: int, t) -> np.ndarray:
    """Block reproducing kernel of degree-``degree`` spherical harmonics.

    Z_m(x, y) = ((m + a) / a) * C_m^a(<x, y>) with a = (d - 1) / 2, computed
    by the three-term recurrence
        C_0 = 1,  C_1 = 2 a t,
        m C_m = 2 t (m + a - 1) C_{m-1} - (m + 2a - 2) C_{m-2}.
    """
    if d < 2:
        raise ValueError("sphere dimension d must be >= 2")
    a = (d - 1) / 2.0
    t = np.asarray(t, dtype=float)
    if degree == 0:
        return np.ones_like(t)
    c_prev = np.ones_like(t)
    c = 2.0 * a * t
    for mm in range(2, degree + 1):
        c, c_prev = (2.0 * t * (mm + a - 1.0) * c - (mm + 2.0 * a - 2.0) * c_prev) / mm, c
    return (degree + a) / a * c


def make_sphere_system(
    d: int,
    eigenvalue_rule=None,
    M_max: int = 64,
    *,
    beta: float | None = None,
) -> EigenSystem:
    """Dot-product kernel on the d-sphere with uniform measure.

    ``eigenvalue_rule`` maps polynomial degree 0, 1, ... to the block
    eigenvalue; when omitted, the default ``mu = (1 + degree)**-(d*beta)``
    is used, which makes the counted sequence decay like j**-beta.  Block
    kernels are evaluated pairwise through Gegenbauer polynomials; the
    individual harmonics are never materialized.
    """
    if d < 2:
        raise ValueError(f"sphere dimension must be >= 2, got {d}")
    if M_max < 1:
        raise ValueError(f"M_max must be >= 1, got {M_max}")
    if eigenvalue_rule is None:
        if beta is None:
            raise ValueError("provide eigenvalue_rule or beta")
        eigenvalue_rule = lambda m: (1.0 + m) ** (-d * beta)
    degrees = np.arange(M_max)
    mu = np.array([float(eigenvalue_rule(int(m))) for m in degrees])
    if np.any(mu <= 0) or np.any(np.diff(mu) >= 0):
        raise ValueError("eigenvalue_rule must be strictly decreasing and positive")
    mu = mu / mu[0]
    mult = np.array([sphere_block_dim(int(m), d) for m in degrees], dtype=np.int64)
    kappa_sq = float(np.sum(mult * mu))
    # counted decay: with ~m^d counted functions below degree m the default
    # rule gives lambda_j ~ j^-beta; for custom rules fit the exponent.
    counted = np.repeat(mu, mult)
    j = np.arange(1, len(counted) + 1, dtype=float)
    eff_beta = beta if beta is not None else _fit_decay(j, counted)
    ratios = counted * j ** eff_beta
    if M_max >= 8:
        mm = np.arange(M_max // 2, M_max + 1, dtype=float)
        trace_mass = (mult * mu)[M_max // 2 - 1 :]
        r = -np.polyfit(np.log(mm), np.log(np.maximum(trace_mass, 1e-300)), 1)[0]
        tail = _tail_mass_powerlaw(trace_mass[-1] * M_max ** r, r, float(M_max))
    else:
        tail = math.nan
    return EigenSystem(
        family="sphere",
        mu=mu,
        mult=mult,
        beta=float(eff_beta),
        c_eig=float(ratios.min()),
        C_eig=float(ratios.max()),
        regularity_M=1.0,
        kappa_sq=kappa_sq,
        tail_mass=tail,
        params={"d": int(d), "beta": beta, "M_max": int(M_max)},
    )


def _fit_decay(j: np.ndarray, counted: np.ndarray) -> float:
    sl, _ = np.polyfit(np.log(j[1:]), np.log(counted[1:]), 1)
    return float(-sl)


def make_powerlaw_system(beta: float, gamma: float = 1.0, M_max: int = 1000) -> EigenSystem:
    """Abstract diagonal system with cumulative multiplicity ~ m^gamma.

    mu_m = m**-(gamma*beta) and d_m = round(m^gamma) - round((m-1)^gamma),
    so the counted sequence decays like j**-beta.  With gamma = 1 the counted
    sequence is exactly j**-beta.  No point evaluation is available.
    """
    if beta <= 1.0:
        raise ValueError(f"beta must exceed 1, got {beta}")
    if gamma < 1.0:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    if M_max < 1:
        raise ValueError(f"M_max must be >= 1, got {M_max}")
    m = np.arange(1, M_max + 1, dtype=float)
    mu = m ** (-gamma * beta)
    cum = np.round(m ** gamma).astype(np.int64)
    mult = np.diff(np.concatenate([[0], cum]))
    mult = np.maximum(mult, 1)
    counted = np.repeat(mu, mult)
    j = np.arange(1, len(counted) + 1, dtype=float)
    ratios = counted * j ** beta
    kappa_sq = float(np.sum(mult * mu))
    tail_exp = gamma * beta - (gamma - 1.0)
    tail = _tail_mass_powerlaw(gamma, tail_exp, float(M_max))
    return EigenSystem(
        family="powerlaw",
        mu=mu,
        mult=mult,
        beta=beta,
        c_eig=float(ratios.min()),
        C_eig=float(ratios.max()),
        regularity_M=math.nan,
        kappa_sq=kappa_sq,
        tail_mass=tail,
        params={"beta": beta, "gamma": gamma, "M_max": int(M_max)},
    )


def kernel_eval(sys: EigenSystem, power: int, x, y):
    """Evaluate sum_m mu_m**power * k_m(x, y) over the represented blocks.

    ``power = 1`` is the kernel itself; ``power = 2`` gives the pairwise
    L2 inner products <k_x, k_y> used by the exact-variance Gram matrix.
    """
    if power < 1:
        raise ValueError(f"power must be >= 1, got {power}")
    if not sys.supports_points:
        raise ValueError(f"{sys.family} system does not support point evaluation")
    if sys.family == "torus":
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        y_arr = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.zeros((x_arr.shape[0], y_arr.shape[0]), dtype=complex)
        for m in range(1, sys.M_max + 1):
            freqs = sys.block_frequencies(m)
            ex = np.exp(1j * np.outer(x_arr, freqs))
            ey = np.exp(1j * np.outer(y_arr, freqs))
            out += sys.mu[m - 1] ** power * (np.conj(ex) @ ey.T)
    else:
        xs = np.atleast_2d(np.asarray(x, dtype=float))
        ys = np.atleast_2d(np.asarray(y, dtype=float))
        t = xs @ ys.T
        out = np.zeros_like(t, dtype=complex)
        for m in range(1, sys.M_max + 1):
            out += sys.mu[m - 1] ** power * gegenbauer_block(m - 1, sys.params["d"], t)
    point_ndim = 0 if sys.family == "torus" else 1
    if np.asarray(x).ndim == point_ndim and np.asarray(y).ndim == point_ndim:
        return complex(out[0, 0])
    return out


@dataclass(frozen=True)
class SourceFunction:
    """Target function encoded by its block masses on an eigen-system.

    ``fbar_sq[m-1]`` is the squared L2 mass carried by eigenspace m.  When
    the system exposes eigenfunctions, ``coeff_blocks`` holds the complex
    coefficients per block and ``counted_real`` the equivalent coefficients
    on the real orthonormal basis (constant, sqrt(2) cos, sqrt(2) sin, ...),
    so that the function is real-valued.
    """

    fbar_sq: np.ndarray
    s: float
    style: str
    coeff_blocks: list | None = None
    counted_real: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    @property
    def f_norm_sq(self) -> float:
        return float(np.sum(self.fbar_sq))

    @property
    def has_coefficients(self) -> bool:
        return self.coeff_blocks is not None

    def tail_mass(self) -> float:
        """Power-law estimate of the truncated mass sum_{m > M_max} fbar_m^2."""
        M = len(self.fbar_sq)
        if M < 8:
            return math.nan
        tail_exp = -np.polyfit(
            np.log(np.arange(M // 2, M + 1, dtype=float)),
            np.log(np.maximum(self.fbar_sq[M // 2 - 1 :], 1e-300)),
            1,
        )[0]
        return _tail_mass_powerlaw(
            self.fbar_sq[-1] * M ** tail_exp, tail_exp, float(M)
        )

    def evaluate(self, sys: EigenSystem, x) -> np.ndarray:
        """Point values of the function (torus only)."""
        if self.counted_real is None:
            raise ValueError("source carries no coefficients for point evaluation")
        F, _ = torus_real_features(sys, np.atleast_1d(np.asarray(x, dtype=float)))
        return F @ self.counted_real

    def to_descriptor(self) -> dict:
        return {"s": self.s, "style": self.style, **self.params}


def torus_real_features(sys: EigenSystem, x: np.ndarray):
    """Real orthonormal eigenbasis values at the points ``x``.

    Returns (F, lam) with F[:, j] the j-th counted basis function
    (1, sqrt(2) cos kx, sqrt(2) sin kx, ...) and lam the matching counted
    eigenvalues.  The real basis spans the same eigenspaces as the complex
    exponentials, and every block kernel is basis-invariant, so Gram matrices
    built from F agree with the complex Mercer sums.
    """
    if sys.family != "torus":
        raise ValueError("real feature matrix is defined for the torus only")
    M = sys.M_max
    n = x.shape[0]
    F = np.empty((n, 2 * M - 1))
    F[:, 0] = 1.0
    if M > 1:
        ang = np.outer(x, np.arange(1, M))
        F[:, 1::2] = math.sqrt(2.0) * np.cos(ang)
        F[:, 2::2] = math.sqrt(2.0) * np.sin(ang)
    return F, sys.counted_eigenvalues()


def make_source(sys: EigenSystem, s: float, style: str = "exact-powerlaw", q: float = 2.0) -> SourceFunction:
    """Source function with tail mass sum_{mu_m < lam} fbar_m^2 of order lam^s.

    exact-powerlaw
        Counted coefficients f_j = j**-((s*beta + 1)/2), the canonical
        power-law profile; block masses are the block sums of f_j^2.
    gapped(q)
        Nonzero counted coefficients only at j(l) = ceil(l^q) with
        |f_{j(l)}| = l**-((p+1)/2) and p = s*q*beta.
    """
    if s <= 0:
        raise ValueError(f"source exponent s must be positive, got {s}")
    beta = sys.beta
    J = int(np.sum(sys.mult))
    j = np.arange(1, J + 1, dtype=float)
    counted = np.zeros(J)
    if style == "exact-powerlaw":
        counted = j ** (-(s * beta + 1.0) / 2.0)
    elif style == "gapped":
        if q < 1.0:
            raise ValueError(f"gap exponent q must be >= 1, got {q}")
        p = s * q * beta
        ell = 1
        while True:
            jl = int(math.ceil(ell ** q))
            if jl > J:
                break
            counted[jl - 1] = ell ** (-(p + 1.0) / 2.0)
            ell += 1
    else:
        raise ValueError(f"unknown source style {style!r}")

    edges = np.concatenate([[0], np.cumsum(sys.mult)])
    fbar_sq = np.add.reduceat(counted ** 2, edges[:-1])

    coeff_blocks = None
    counted_real = None
    if sys.family == "torus":
        counted_real = counted
        coeff_blocks = [np.array([counted[0] + 0j])]
        for m in range(2, sys.M_max + 1):
            a_cos, a_sin = counted[2 * m - 3], counted[2 * m - 2]
            coeff_blocks.append(
                np.array([(a_cos - 1j * a_sin), (a_cos + 1j * a_sin)]) / math.sqrt(2.0)
            )
    return SourceFunction(
        fbar_sq=fbar_sq,
        s=s,
        style=style if style != "gapped" else f"gapped({q})",
        coeff_blocks=coeff_blocks,
        counted_real=counted_real,
        params={"s": s, "style": style, "q": q if style == "gapped" else None},
    )


def interp_norm_sq(sys: EigenSystem, f: SourceFunction, t: float) -> float:
    """Squared interpolation norm sum_m mu_m**-t * fbar_m^2 (t = 0 is L2)."""
    if t < 0:
        raise ValueError(f"interpolation order t must be >= 0, got {t}")
    return float(np.sum(sys.mu ** (-t) * f.fbar_sq))
