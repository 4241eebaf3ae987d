"""Contour geometry, boundary audits of the analytic bounds, and the
eigendecomposition-vs-Cauchy-integral cross-check for matrix filters."""

import math

import numpy as np
import pytest

from spectrisk.filters import make_filter
from spectrisk.funcalc import (
    audit_analytic_conditions,
    build_contour,
    matrix_filter_contour,
    matrix_filter_eig,
)

KAPPA_SQ = 1.0
ALL_FILTERS = [
    ("krr", {}),
    ("iterated_ridge", {"p": 2.0}),
    ("gradient_flow", {}),
    ("gradient_descent", {"eta": 0.4}),
]


def filters():
    return [make_filter(fam, KAPPA_SQ, **kw) for fam, kw in ALL_FILTERS]


def random_psd(n, seed, kappa_sq=KAPPA_SQ):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    A = A @ A.T
    return A * (0.9 * kappa_sq / np.linalg.eigvalsh(A).max())


class TestContourGeometry:
    def test_leftmost_node_is_corner(self):
        path = build_contour(0.2, 1.0)
        assert path.nodes.real.min() == pytest.approx(-0.1, abs=1e-15)
        assert path.nodes[0] == path.nodes[-1]

    def test_closed_path(self):
        path = build_contour(0.05, 1.0)
        assert abs(path.nodes[0] - path.nodes[-1]) < 1e-12

    def test_nodes_satisfy_segment_equations(self):
        lam, kap = 0.08, 1.3
        path = build_contour(lam, kap)
        eta = lam / 2
        wedge = path.nodes[path.segment == "wedge"]
        np.testing.assert_allclose(np.abs(wedge.imag), wedge.real + eta, atol=1e-12)
        arc = path.nodes[path.segment == "arc"]
        np.testing.assert_allclose(np.abs(arc - kap), kap + eta, atol=1e-12)
        assert np.all(arc.real >= kap - 1e-12)

    def test_winding_number_around_spectrum(self):
        for lam in (0.3, 0.01):
            path = build_contour(lam, 1.0)
            w = path.winding_number(0.5)
            assert abs(w - 1.0) < 1e-10

    def test_resolvent_integral_log_bound(self):
        # \oint |dz|/|z+lam| <= C log(1/lam); bracket frozen from measurement
        for kap in (1.0, 1.8):
            for lam in (1e-1, 1e-2, 1e-3, 1e-4, 1e-5):
                ratio = build_contour(lam, kap).resolvent_abs_integral() / math.log(1 / lam)
                assert 2.0 <= ratio <= 5.0

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            build_contour(1.5, 1.0)
        with pytest.raises(ValueError):
            build_contour(-0.1, 1.0)
        with pytest.raises(ValueError):
            build_contour(0.1, 1.0, nodes_per_segment=8)


class TestAnalyticConditions:
    def test_krr_exactly_one(self):
        f = make_filter("krr", KAPPA_SQ)
        lam = 0.01
        path = build_contour(lam, KAPPA_SQ)
        vals = np.abs((path.nodes + lam) * f.phi(lam, path.nodes))
        np.testing.assert_allclose(vals, 1.0, atol=1e-12)

    def test_iterated_ridge_remainder_bound(self):
        # |(z+lam) psi| / lam = (lam/|z+lam|)^(p-1) <= 2^(p-1) right of -lam/2
        for p in (2.0, 3.0):
            f = make_filter("iterated_ridge", KAPPA_SQ, p=p)
            rep = audit_analytic_conditions(f, [1e-1, 1e-3, 1e-5])
            assert rep.F_tilde <= 2.0 ** (p - 1.0) * (1 + 1e-6)

    def test_flow_remainder_bound_left_halfplane(self):
        # on nodes with Re z <= 0 the remainder obeys (5/2) sqrt(e)
        f = make_filter("gradient_flow", KAPPA_SQ)
        cap = 2.5 * math.sqrt(math.e)
        for lam in (1e-1, 1e-3, 1e-5):
            path = build_contour(lam, KAPPA_SQ)
            left = path.nodes[path.nodes.real <= 0]
            vals = np.abs((left + lam) * f.psi(lam, left)) / lam
            assert vals.max() <= cap * (1 + 1e-9)

    def test_uniform_boundedness_all_families(self):
        caps = {
            "krr": (1.0 + 1e-9, 1.0 + 1e-9),
            "iterated_ridge": (3.01, 2.0 * (1 + 1e-6)),
            "gradient_flow": (1.5, 4.2),
            "gradient_descent": (1.6, 4.2),
        }
        for f in filters():
            rep = audit_analytic_conditions(f, [10.0 ** -k for k in range(1, 6)])
            cap_e, cap_f = caps[f.family]
            assert rep.E_tilde <= cap_e, f.family
            assert rep.F_tilde <= cap_f, f.family


class TestMatrixFilterEig:
    def test_scalar_krr(self):
        out = matrix_filter_eig(np.diag([0.5]), make_filter("krr", 1.0), "phi", 0.5)
        np.testing.assert_allclose(out, [[1.0]], atol=1e-14)

    def test_zero_matrix_remainder_is_identity(self):
        for f in filters():
            out = matrix_filter_eig(np.zeros((4, 4)), f, "psi", 0.2)
            np.testing.assert_allclose(out, np.eye(4), atol=1e-13)

    def test_descent_integer_steps_polynomial_oracle(self):
        eta, t = 0.3, 4
        lam = 1.0 / (eta * t)
        f = make_filter("gradient_descent", 1.0, eta=eta)
        A = random_psd(5, 21)
        expect = np.zeros_like(A)
        B = np.eye(5)
        for _ in range(t):
            expect += eta * B
            B = B @ (np.eye(5) - eta * A)
        out = matrix_filter_eig(A, f, "phi", lam)
        np.testing.assert_allclose(out, expect, atol=1e-10)

    def test_spectral_mapping(self):
        A = random_psd(8, 22)
        w = np.linalg.eigvalsh(A)
        for f in filters():
            out = matrix_filter_eig(A, f, "phi", 0.07)
            norm = np.linalg.norm(out, 2)
            assert abs(norm - np.max(np.abs(f.phi(0.07, w)))) < 1e-12 * norm

    def test_rejects_spectrum_beyond_kappa(self):
        f = make_filter("krr", 0.5)
        with pytest.raises(ValueError):
            matrix_filter_eig(np.diag([0.9]), f, "phi", 0.1)


class TestMatrixFilterContour:
    def test_krr_diagonal(self):
        f = make_filter("krr", 1.0)
        A = np.diag([0.3, 0.7])
        out = matrix_filter_contour(A, f, 0.1, build_contour(0.1, 1.0, 256))
        np.testing.assert_allclose(out, np.diag([2.5, 1.25]), atol=1e-8)

    def test_contour_independence(self):
        # different node densities agree to quadrature accuracy
        f = make_filter("gradient_flow", 1.0)
        A = random_psd(6, 23)
        a = matrix_filter_contour(A, f, 0.05, build_contour(0.05, 1.0, 256))
        b = matrix_filter_contour(A, f, 0.05, build_contour(0.05, 1.0, 384))
        assert np.linalg.norm(a - b, 2) < 1e-8 * np.linalg.norm(b, 2)

    def test_flow_matches_eig(self):
        f = make_filter("gradient_flow", 1.0)
        A = random_psd(8, 24)
        ref = matrix_filter_eig(A, f, "phi", 0.05)
        out = matrix_filter_contour(A, f, 0.05)
        assert np.linalg.norm(out - ref, 2) < 1e-7 * np.linalg.norm(ref, 2)

    def test_doubling_reduces_error(self):
        f = make_filter("iterated_ridge", 1.0, p=2.0)
        A = random_psd(8, 25)
        ref = matrix_filter_eig(A, f, "phi", 0.1)
        errs = []
        for nodes in (64, 128):
            out = matrix_filter_contour(A, f, 0.1, build_contour(0.1, 1.0, nodes))
            errs.append(np.linalg.norm(out - ref, 2))
        assert errs[0] / errs[1] >= 2.0

    def test_warns_when_real_node_grazes_spectrum_interval(self):
        # a corner at -lam/2 closer than 1e-8 to the admissible interval
        f = make_filter("krr", 1.0)
        A = np.diag([0.2, 0.4])
        path = build_contour(1e-9, 1.0, 32)
        with pytest.warns(RuntimeWarning):
            matrix_filter_contour(A, f, 0.05, path)


def test_resolvent_norm_bound_on_nodes():
    # sup_t |(t+lam)/(t-z)| <= sqrt(8) on the wedge, <= 2 on the arc
    t = np.linspace(0.0, KAPPA_SQ, 4001)
    for lam in (0.3, 0.03, 0.003):
        path = build_contour(lam, KAPPA_SQ)
        for z, seg in zip(path.nodes, path.segment):
            vals = np.abs((t + lam) / (t - z))
            cap = math.sqrt(8.0) if seg == "wedge" else 2.0
            assert vals.max() <= cap * (1 + 1e-12), (z, seg)
