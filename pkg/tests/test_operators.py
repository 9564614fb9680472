"""Deterministic operator layer: semigroups, resolvents, admissibility,
extended limits, transfer functions, and the input/output map.

Expected values tagged as oracle results below are computed by an
independent route (truncated exponential series, dense quadrature,
partial sums) before being asserted against the library path.
"""

import numpy as np
import pytest

from mildsde.errors import (
    DimensionMismatch,
    DomainViolation,
    SpectrumCollision,
    TruncationInsufficient,
)
from mildsde.operators import (
    ControlOp,
    DenseGenerator,
    DiagonalGenerator,
    ObservationOp,
    ShiftGridGenerator,
    YosidaLadder,
    ctrl_admissibility_check,
    extrapolated_convolution,
    io_map,
    obs_admissibility_constant,
    output_map,
    regularity_check,
    resolvent_apply,
    semigroup_apply,
    transfer_function,
    yosida_apply,
    yosida_limit,
)


def series_expm(a, t, terms=60):
    """Truncated exponential-series oracle for small dense matrices."""
    a = np.asarray(a, dtype=complex) * t
    acc = np.eye(a.shape[0], dtype=complex)
    term = np.eye(a.shape[0], dtype=complex)
    for m in range(1, terms):
        term = term @ a / m
        acc = acc + term
    return acc


class TestSemigroup:
    def test_scalar_decay(self):
        gen = DiagonalGenerator([-1.0])
        out = semigroup_apply(gen, 1.0, np.array([1.0]))
        assert out[0] == pytest.approx(np.exp(-1.0), abs=1e-15)

    def test_identity_at_zero(self, heat_like, rng):
        x = rng.standard_normal(heat_like.dim) + 1j * rng.standard_normal(heat_like.dim)
        np.testing.assert_array_equal(semigroup_apply(heat_like, 0.0, x), x)

    def test_nilpotent_dense_series_oracle(self, nilpotent2):
        # nilpotent: the series is exact, e^{2A}(0,1) = (2,1)
        oracle = series_expm(nilpotent2.matrix, 2.0) @ np.array([0.0, 1.0])
        out = semigroup_apply(nilpotent2, 2.0, np.array([0.0, 1.0]))
        np.testing.assert_allclose(out, oracle, atol=1e-14)
        np.testing.assert_allclose(out, [2.0, 1.0], atol=1e-14)

    def test_negative_time_rejected(self, heat_like):
        with pytest.raises(ValueError):
            semigroup_apply(heat_like, -0.1, np.zeros(heat_like.dim))

    def test_dimension_mismatch(self, heat_like):
        with pytest.raises(DimensionMismatch):
            semigroup_apply(heat_like, 1.0, np.zeros(3))

    def test_semigroup_law_diagonal(self, heat_like, rng):
        x = rng.standard_normal(heat_like.dim)
        once = semigroup_apply(heat_like, 0.7 + 0.4, x)
        twice = semigroup_apply(heat_like, 0.7, semigroup_apply(heat_like, 0.4, x))
        np.testing.assert_allclose(once, twice, rtol=1e-12, atol=1e-300)

    def test_semigroup_law_dense(self, rng):
        a = rng.standard_normal((5, 5)) * 0.5
        gen = DenseGenerator(a)
        x = rng.standard_normal(5)
        once = semigroup_apply(gen, 1.1, x)
        twice = semigroup_apply(gen, 0.6, semigroup_apply(gen, 0.5, x))
        np.testing.assert_allclose(once, twice, rtol=1e-12, atol=1e-12)

    def test_dense_matches_diagonal(self, rng):
        lam = np.array([-1.0, -2.5, 0.3])
        diag = DiagonalGenerator(lam, growth_bound=0.3)
        dense = DenseGenerator(np.diag(lam), growth_bound=0.3)
        x = rng.standard_normal(3)
        np.testing.assert_allclose(
            semigroup_apply(diag, 0.9, x), semigroup_apply(dense, 0.9, x), rtol=1e-12
        )

    def test_shift_grid(self):
        gen = ShiftGridGenerator(step=0.25, size=5)  # grid over [-1, 0]
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        out = semigroup_apply(gen, 0.5, x)
        np.testing.assert_array_equal(out, [3.0, 4.0, 5.0, 0.0, 0.0])
        # nilpotent: everything flushed past the span
        np.testing.assert_array_equal(semigroup_apply(gen, 1.25, x), np.zeros(5))

    def test_growth_bound_verified(self):
        with pytest.raises(ValueError):
            DiagonalGenerator([-1.0, 2.0], growth_bound=0.0)
        with pytest.raises(ValueError):
            DenseGenerator(np.diag([3.0, -1.0]), growth_bound=0.0)


class TestResolvent:
    def test_scalar(self):
        gen = DiagonalGenerator([-1.0])
        out = resolvent_apply(gen, 2.0, np.array([1.0]))
        assert out[0] == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_inverse_identity(self, heat_like, rng):
        x = rng.standard_normal(heat_like.dim)
        lam = 3.7
        rx = resolvent_apply(heat_like, lam, x)
        back = lam * rx - heat_like.eigenvalues * rx
        np.testing.assert_allclose(back, x, rtol=1e-12)

    def test_nilpotent_dense_solve_oracle(self, nilpotent2):
        # (I - N)^{-1} = I + N, so R(1, A)(1, 0) = (1, 0)
        oracle = np.linalg.solve(np.eye(2) - nilpotent2.matrix, np.array([1.0, 0.0]))
        out = resolvent_apply(nilpotent2, 1.0, np.array([1.0, 0.0]))
        np.testing.assert_allclose(out, oracle, atol=1e-14)
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-14)

    def test_spectrum_collision(self, heat_like):
        with pytest.raises(SpectrumCollision):
            resolvent_apply(heat_like, -4.0, np.ones(heat_like.dim))
        with pytest.raises(SpectrumCollision):
            resolvent_apply(DenseGenerator(np.diag([1.0, 2.0])), 2.0, np.ones(2))

    def test_resolvent_identity(self, heat_like, rng):
        # R(lam) - R(mu) = (mu - lam) R(lam) R(mu)
        x = rng.standard_normal(heat_like.dim)
        for lam, mu in [(1.0, 2.0), (0.5, 7.0), (3.0 + 1.0j, 5.0)]:
            lhs = resolvent_apply(heat_like, lam, x) - resolvent_apply(heat_like, mu, x)
            rhs = (mu - lam) * resolvent_apply(
                heat_like, lam, resolvent_apply(heat_like, mu, x)
            )
            np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-14)

    def test_shift_grid_resolvent_identity(self, rng):
        gen = ShiftGridGenerator(step=0.1, size=11)
        x = rng.standard_normal(11)
        lam = 2.0
        rx = resolvent_apply(gen, lam, x)
        back = lam * rx - rx @ gen.difference_matrix().T
        np.testing.assert_allclose(back, x, rtol=1e-10)


class TestExtrapolatedConvolution:
    def test_integrator_mode(self):
        # lam = 0, b = 1, u = 1: the response is just t
        gen = DiagonalGenerator([0.0])
        b = ControlOp.per_mode([1.0])
        out = extrapolated_convolution(gen, b, np.ones(100), dt=0.01)
        assert out[0] == pytest.approx(1.0, abs=1e-12)

    def test_scalar_relaxation_exact(self):
        # closed form: int_0^1 e^{-(1-s)} ds = 1 - e^{-1}; exact per-step rule
        gen = DiagonalGenerator([-1.0])
        b = ControlOp.per_mode([1.0])
        out = extrapolated_convolution(gen, b, np.ones(64), dt=1.0 / 64)
        assert out[0] == pytest.approx(1.0 - np.exp(-1.0), abs=1e-13)

    def test_zero_input(self, heat_like):
        b = ControlOp.per_mode(np.ones(heat_like.dim))
        out = extrapolated_convolution(gen=heat_like, b_op=b, u=np.zeros(16), dt=0.1)
        np.testing.assert_array_equal(out, np.zeros(heat_like.dim))

    def test_dense_matches_diagonal(self, rng):
        lam = np.array([-1.0, -3.0])
        u = rng.standard_normal(32)
        via_diag = extrapolated_convolution(
            DiagonalGenerator(lam), ControlOp.per_mode([1.0, 2.0]), u, dt=0.05
        )
        via_dense = extrapolated_convolution(
            DenseGenerator(np.diag(lam)), ControlOp.dense([[1.0], [2.0]]), u, dt=0.05
        )
        np.testing.assert_allclose(via_diag, via_dense, rtol=1e-11)


class TestOutputMap:
    def test_single_mode_norm(self):
        # int_0^1 e^{-2t} dt = (1 - e^{-2})/2, quadrature to <= 1e-6
        gen = DiagonalGenerator([-1.0])
        c = ObservationOp.per_mode([1.0])
        sig = output_map(gen, c, np.array([1.0]), horizon=1.0, dt=1e-4)
        assert sig.l2_norm_sq() == pytest.approx((1 - np.exp(-2)) / 2, abs=1e-6)

    def test_zero_state(self, heat_like):
        c = ObservationOp.per_mode(np.ones(heat_like.dim))
        sig = output_map(heat_like, c, np.zeros(heat_like.dim), horizon=1.0, dt=0.01)
        assert sig.l2_norm_sq() == 0.0

    def test_second_mode_signal(self):
        gen = DiagonalGenerator([-1.0, -4.0])
        c = ObservationOp.per_mode([1.0, 1.0])
        sig = output_map(gen, c, np.array([0.0, 1.0]), horizon=1.0, dt=0.05)
        np.testing.assert_allclose(
            sig.values[:, 1].real, np.exp(-4.0 * sig.times), rtol=1e-12
        )

    def test_domain_violation_flagged(self):
        # c_k = k, x_k = 1/k is outside the extended domain; with a heavy
        # tail the per-mode series test trips at small positive times.
        k = np.arange(1, 513).astype(float)
        gen = DiagonalGenerator(-(k**0.1))
        c = ObservationOp.per_mode(k)
        x = 1.0 / k
        with pytest.raises(DomainViolation):
            output_map(gen, c, x, horizon=1.0, dt=0.1)


class TestObsAdmissibility:
    def test_heat_profile_sup(self, heat_like):
        # gamma^2 = sup_k (1 - e^{-2 k^2}) / 2 = 1/2 at any horizon >= 1
        c = ObservationOp.per_mode(np.arange(1, 65).astype(float))
        gamma = obs_admissibility_constant(heat_like, c, horizon=1.0)
        assert gamma == pytest.approx(np.sqrt(0.5), abs=1e-12)

    def test_zero_operator(self, heat_like):
        c = ObservationOp.per_mode(np.zeros(64))
        assert obs_admissibility_constant(heat_like, c, 1.0) == 0.0

    def test_single_mode(self):
        gen = DiagonalGenerator([-1.0])
        c = ObservationOp.per_mode([1.0])
        gamma = obs_admissibility_constant(gen, c, 1.0)
        assert gamma**2 == pytest.approx((1 - np.exp(-2)) / 2, abs=1e-12)

    def test_divergent_profile_flagged(self):
        # c_k = k with bounded spectrum: sup diverges with the truncation
        k = np.arange(1, 65).astype(float)
        gen = DiagonalGenerator(-np.ones(64))
        gamma = obs_admissibility_constant(gen, ObservationOp.per_mode(k), 1.0)
        assert gamma == np.inf

    def test_upper_bound_on_random_states(self, rng):
        # discrete output L2 norm <= gamma^2 (1 + quadrature tolerance);
        # the scenario is chosen so dt resolves the stiffest mode.
        k = np.arange(1, 9).astype(float)
        gen = DiagonalGenerator(-(k**2))
        c = ObservationOp.per_mode(k)
        gamma = obs_admissibility_constant(gen, c, 1.0)
        for _ in range(100):
            x = rng.standard_normal(8) + 1j * rng.standard_normal(8)
            x /= np.linalg.norm(x)
            sig = output_map(gen, c, x, horizon=1.0, dt=1e-4)
            assert sig.l2_norm_sq() <= gamma**2 * 1.01

    def test_dense_gramian_route_matches_quadrature(self, rng):
        a = np.array([[-1.0, 0.3], [0.0, -2.0]])
        cmat = np.array([[1.0, 1.0]])
        gamma = obs_admissibility_constant(DenseGenerator(a), ObservationOp.dense(cmat), 1.0)
        # quadrature oracle for the Gramian's top eigenvalue
        ts = np.linspace(0, 1.0, 4001)
        import scipy.linalg as sla

        mats = [sla.expm(a * t).conj().T @ cmat.conj().T @ cmat @ sla.expm(a * t) for t in ts]
        w = np.trapezoid(np.array(mats), x=ts, axis=0)
        assert gamma**2 == pytest.approx(np.max(np.linalg.eigvalsh(w)), rel=1e-6)


class TestCtrlAdmissibility:
    def test_zero(self, heat_like):
        res = ctrl_admissibility_check(heat_like, ControlOp.per_mode(np.zeros(64)), 1.0)
        assert res.norm == 0.0 and res.admissible

    def test_scalar_closed_form(self):
        gen = DiagonalGenerator([-1.0])
        res = ctrl_admissibility_check(gen, ControlOp.per_mode([1.0]), 1.0)
        assert res.norm == pytest.approx(np.sqrt((1 - np.exp(-2)) / 2), abs=1e-12)

    def test_boundary_growth_profile_admissible(self, heat_like):
        res = ctrl_admissibility_check(
            heat_like, ControlOp.per_mode(np.arange(1, 65).astype(float)), 1.0
        )
        assert res.admissible
        assert res.norm == pytest.approx(np.sqrt(0.5), abs=1e-12)

    def test_duality_with_observation(self, heat_like):
        coeffs = np.arange(1, 65) ** 0.7
        gamma = obs_admissibility_constant(heat_like, ObservationOp.per_mode(coeffs), 0.8)
        res = ctrl_admissibility_check(heat_like, ControlOp.per_mode(coeffs.conj()), 0.8)
        assert res.norm == pytest.approx(gamma, rel=1e-14)

    def test_divergent_profile_flagged(self):
        gen = DiagonalGenerator(-np.ones(64))
        res = ctrl_admissibility_check(
            gen, ControlOp.per_mode(np.arange(1, 65).astype(float)), 1.0
        )
        assert not res.admissible and res.norm == np.inf


class TestYosida:
    def test_scalar_formula(self):
        gen = DiagonalGenerator([-1.0])
        c = ObservationOp.per_mode([1.0])
        val = yosida_apply(c, gen, 10.0, np.array([1.0]))
        assert val == pytest.approx(10.0 / 11.0, abs=1e-14)

    def test_zero_state(self, heat_like):
        c = ObservationOp.per_mode(np.ones(64))
        assert yosida_apply(c, heat_like, 50.0, np.zeros(64)) == 0.0

    def test_partial_sum_oracle(self):
        k = np.arange(1, 51).astype(float)
        gen = DiagonalGenerator(-(k**2))
        c = ObservationOp.per_mode(k)
        x = 1.0 / k**2
        oracle = np.sum((1.0 / k) * 100.0 / (100.0 + k**2))
        assert yosida_apply(c, gen, 100.0, x) == pytest.approx(oracle, rel=1e-14)

    def test_bounded_reaches_cx(self, rng):
        # bounded coefficients: full domain, limit equals the plain action
        lam = -rng.uniform(0.1, 1.0, size=4)
        gen = DiagonalGenerator(lam)
        c = ObservationOp.per_mode(rng.uniform(-1, 1, size=4))
        ladder = YosidaLadder.default_for(gen)
        for _ in range(100):
            x = rng.standard_normal(4)
            x /= np.linalg.norm(x)
            res = yosida_limit(c, gen, x, ladder)
            assert res.in_domain
            assert abs(res.value - np.sum(c.coeffs * x)) <= ladder.eps

    def test_not_in_domain_growth(self):
        # x_k = 1/k against c_k = k: the regularized values grow ~ sqrt(lam)
        k = np.arange(1, 257).astype(float)
        gen = DiagonalGenerator(-(k**2))
        c = ObservationOp.per_mode(k)
        res = yosida_limit(c, gen, 1.0 / k)
        assert not res.in_domain
        assert res.diffs.size >= 3

    def test_in_domain_dominated(self):
        # x_k = 1/k^3: dominated mode sums converge; oracle = partial sums
        k = np.arange(1, 257).astype(float)
        gen = DiagonalGenerator(-(k**2))
        c = ObservationOp.per_mode(k)
        res = yosida_limit(c, gen, 1.0 / k**3)
        assert res.in_domain
        oracle = np.sum(1.0 / k**2)
        assert abs(res.value - oracle) < 2e-3  # ladder top is finite


class TestTransferFunction:
    def test_zero_ops(self, heat_like):
        g = transfer_function(
            heat_like,
            ControlOp.per_mode(np.zeros(64)),
            ObservationOp.per_mode(np.zeros(64)),
            1.0,
        )
        assert g.shape == (1, 1) and g[0, 0] == 0.0

    def test_partial_sum_with_tail(self):
        # sum_k 1/(1 + k^2) = (pi coth(pi) - 1)/2; tail completion brings the
        # truncated library value within the tail tolerance of the limit.
        k = np.arange(1, 20001).astype(float)
        gen = DiagonalGenerator(-(k[:4000] ** 2))
        ones = np.ones(4000)
        g = transfer_function(
            gen, ControlOp.per_mode(ones), ObservationOp.per_mode(ones), 1.0
        )
        limit = (np.pi / np.tanh(np.pi) - 1.0) / 2.0
        assert g[0, 0].real == pytest.approx(limit, abs=3e-4)

    def test_single_mode(self):
        gen = DiagonalGenerator([-1.0])
        g = transfer_function(
            gen, ControlOp.per_mode([1.0]), ObservationOp.per_mode([1.0]), 1.0
        )
        assert g[0, 0] == pytest.approx(0.5, abs=1e-14)

    def test_truncation_insufficient(self, heat_like):
        k = np.arange(1, 65).astype(float)
        with pytest.raises(TruncationInsufficient):
            transfer_function(
                heat_like, ControlOp.per_mode(k), ObservationOp.per_mode(k), 1.0
            )

    def test_dense_route(self, rng):
        a = rng.standard_normal((3, 3)) - 3 * np.eye(3)
        b = rng.standard_normal((3, 2))
        c = rng.standard_normal((2, 3))
        gen = DenseGenerator(a)
        g = transfer_function(gen, ControlOp.dense(b), ObservationOp.dense(c), 1.5)
        oracle = c @ np.linalg.solve(1.5 * np.eye(3) - a, b)
        np.testing.assert_allclose(g, oracle, rtol=1e-10)


class TestRegularity:
    def test_bounded_is_regular(self):
        gen = DiagonalGenerator([-1.0, -2.0])
        res = regularity_check(
            gen, ControlOp.per_mode([1.0, 1.0]), ObservationOp.per_mode([1.0, 0.5])
        )
        assert res.verdict == "regular"

    def test_heat_unit_profile_regular(self, heat_like):
        ones = np.ones(64)
        res = regularity_check(
            heat_like, ControlOp.per_mode(ones), ObservationOp.per_mode(ones)
        )
        assert res.verdict == "regular"
        # oracle: values behave like pi/(2 sqrt(lam)) at lam = 1e2, 1e3, 1e4
        for lam in (1e2, 1e3, 1e4):
            k = np.arange(1, 500001)
            oracle = np.sum(1.0 / (lam + k.astype(float) ** 2))
            assert oracle == pytest.approx(np.pi / (2 * np.sqrt(lam)), rel=0.05)

    def test_growth_profile_not_regular(self, heat_like):
        k = np.arange(1, 65).astype(float)
        res = regularity_check(
            heat_like, ControlOp.per_mode(k), ObservationOp.per_mode(k)
        )
        assert res.verdict in ("non_regular", "inconclusive")
        assert res.verdict == "non_regular"


class TestIoMap:
    def test_zero_input(self, heat_like):
        b = ControlOp.per_mode(np.ones(64))
        c = ObservationOp.per_mode(np.ones(64))
        sig = io_map(heat_like, b, c, np.zeros(32), dt=1.0 / 32)
        assert sig.l2_norm_sq() == 0.0

    def test_scalar_relaxation_curve(self):
        gen = DiagonalGenerator([-1.0])
        sig = io_map(
            gen, ControlOp.per_mode([1.0]), ObservationOp.per_mode([1.0]),
            np.ones(200), dt=0.005,
        )
        np.testing.assert_allclose(
            sig.values[:, 0].real, 1.0 - np.exp(-sig.times), atol=1e-12
        )

    def test_shift_composition(self):
        # y(. + tau) = output_map(Phi_tau u) + io_map(shifted u), on the grid
        gen = DiagonalGenerator([-1.0, -2.0])
        b = ControlOp.per_mode([1.0, 0.5])
        c = ObservationOp.per_mode([1.0, 1.0])
        dt, n, m = 0.01, 100, 40
        u = np.sin(np.linspace(0, 3, n))
        full = io_map(gen, b, c, u, dt=dt)
        phi_tau = extrapolated_convolution(gen, b, u[:m], dt=dt)
        tail_from_state = output_map(gen, c, phi_tau, horizon=(n - m) * dt, dt=dt)
        tail_io = io_map(gen, b, c, u[m:], dt=dt)
        recomposed = tail_from_state.values + tail_io.values
        np.testing.assert_allclose(full.values[m:], recomposed, atol=1e-10)

    def test_linearity(self, rng):
        gen = DiagonalGenerator([-1.0, -2.0, -3.0])
        b = ControlOp.per_mode([1.0, 1.0, 1.0])
        c = ObservationOp.per_mode([1.0, 2.0, 0.5])
        u1 = rng.standard_normal(50)
        u2 = rng.standard_normal(50)
        combo = io_map(gen, b, c, u1 + 2 * u2, dt=0.02)
        parts = io_map(gen, b, c, u1, dt=0.02).values + 2 * io_map(
            gen, b, c, u2, dt=0.02
        ).values
        np.testing.assert_allclose(combo.values, parts, atol=1e-10)
