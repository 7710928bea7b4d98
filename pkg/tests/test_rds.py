import math

import numpy as np
import pytest

from affinectl.errors import (Ambiguous, BadParameter, BadRoots, RankDeficientAtNode,
                              StabilityViolated)
from affinectl.numerics import TimeGrid
from affinectl.rds import (RDGrid, RDSystem, SpaceTimeField, fhn_profile_residual,
                           measure_position, position_control_signal, rd_integrate,
                           rds_synthesize_control, schloegl_front, schloegl_rd,
                           smooth_sinusoidal_protocol, uniform_protocol)
from affinectl.systems import AffineSystem

FRONT = schloegl_front(1.0, 1.0, 1.5, 3.0, 1.0)


def span_for(grid, T, D=1.0):
    return TimeGrid(0, T, int(math.ceil(T / grid.stable_dt(D))))


def front_speed(N):
    g = RDGrid(100.0, N, "neumann")
    span = span_for(g, 30.0)
    f = rd_integrate(schloegl_rd(), g, None, FRONT(g.r - 30.0), span,
                     store_every=max(1, span.steps // 30))
    pos = np.array([measure_position(v, 0, "steepest-slope", g) for v in f.values])
    late = f.t >= 10
    return np.polyfit(f.t[late], pos[late], 1)[0]


def _no_kinetics():
    return AffineSystem(2, 1, lambda x: 0.0 * np.asarray(x), lambda x: np.zeros((2, 1)),
                        lambda x: np.zeros((2, 2)), lambda x: np.zeros((2, 1, 2)), "none", {})


class TestIntegrator:
    def test_homogeneous_steady_state(self):
        g = RDGrid(10.0, 32)
        f = rd_integrate(schloegl_rd(), g, None, np.full(32, 1.5), span_for(g, 1.0))
        assert np.max(np.abs(f.values[-1] - 1.5)) < 1e-12

    @pytest.mark.parametrize("bc", ["periodic", "neumann"])
    def test_pure_diffusion_conserves_mass(self, bc):
        g = RDGrid(10.0, 64, bc)
        sys_ = RDSystem(_no_kinetics(), np.diag([0.5, 1.0]))
        X0 = np.column_stack([np.exp(-(g.r - 3) ** 2), np.cos(g.r)])
        f = rd_integrate(sys_, g, None, X0, span_for(g, 2.0))
        np.testing.assert_allclose(f.values[-1].sum(axis=0), X0.sum(axis=0), atol=1e-10)

    def test_neumann_walls_have_no_flux(self):
        g = RDGrid(10.0, 64, "neumann")
        X = np.cos(np.pi * g.r / 10.0)[:, None]
        lap = g.laplacian(X)
        assert abs(np.sum(lap)) < 1e-10

    def test_stability_bound(self):
        g = RDGrid(10.0, 100)
        with pytest.raises(StabilityViolated):
            rd_integrate(schloegl_rd(), g, None, np.ones(100), TimeGrid(0, 1, 10))

    def test_grid_checks(self):
        with pytest.raises(BadParameter):
            RDGrid(10.0, 8)
        with pytest.raises(BadParameter):
            RDGrid(10.0, 64, "dirichlet")


class TestSchloeglFront:
    def test_limits_and_centre(self):
        assert abs(FRONT(np.array([0.0]))[0, 0] - 2.0) < 1e-15
        assert abs(FRONT(np.array([-1e3]))[0, 0] - 3.0) < 1e-12
        assert abs(FRONT(np.array([1e3]))[0, 0] - 1.0) < 1e-12

    def test_solves_profile_equation(self):
        xi = np.linspace(-10, 10, 41)
        X, dX, ddX = FRONT(xi)[:, 0], FRONT.d(xi)[:, 0], FRONT.dd(xi)[:, 0]
        R = -(X - 1.0) * (X - 1.5) * (X - 3.0)
        assert np.max(np.abs(ddX + FRONT.c * dX + R)) < 1e-12

    def test_symmetric_roots_stand_still(self):
        assert schloegl_front(1.0, 1.0, 2.0, 3.0, 1.0).c == 0.0

    def test_root_order(self):
        with pytest.raises(BadRoots):
            schloegl_front(1.0, 2.0, 1.0, 3.0, 1.0)

    def test_speed_within_one_percent(self):
        assert abs(front_speed(400) - FRONT.c) < 0.01 * FRONT.c

    def test_speed_converges_at_second_order(self):
        e1, e2 = abs(front_speed(200) - FRONT.c), abs(front_speed(400) - FRONT.c)
        assert 3.0 < e1 / e2 < 5.0


class TestControl:
    def grid(self):
        return RDGrid(100.0, 1000, "neumann")

    def test_uniform_protocol_needs_no_control(self):
        g = self.grid()
        pc = position_control_signal(FRONT, uniform_protocol(FRONT.c, 50.0),
                                     "schloegl-multiplicative", g, TimeGrid(0, 5, 10))
        for t in (0.0, 2.5, 5.0):
            assert np.max(np.abs(pc.u(t))) < 1e-12

    def test_amplitude_must_reach_free_speed(self):
        with pytest.raises(BadParameter):
            smooth_sinusoidal_protocol(FRONT.c, 50.0, 0.01, 20.0)

    def test_protocol_starts_with_free_motion(self):
        pr = smooth_sinusoidal_protocol(FRONT.c, 50.0, 10.0, 20.0)
        assert abs(pr.phi(0.0) - 50.0) < 1e-12 and abs(pr.phidot(0.0) - FRONT.c) < 1e-12

    def test_synthesis_matches_recipe(self):
        g = self.grid()
        pr = smooth_sinusoidal_protocol(FRONT.c, 50.0, 10.0, 20.0)
        t = np.linspace(0, 4, 5)
        pc = position_control_signal(FRONT, pr, "schloegl-multiplicative", g, TimeGrid(0, 4, 4))
        s = g.r[None, :] - np.array([pr.phi(v) for v in t])[:, None]
        V = FRONT(s)
        xt = -np.array([pr.phidot(v) for v in t])[:, None, None] * FRONT.d(s)
        field = SpaceTimeField(t, g.r, V)
        u = rds_synthesize_control(schloegl_rd(), field, g, xt=xt, lap=FRONT.dd(s))
        for k, v in enumerate(t):
            assert np.max(np.abs(u.values[k] - pc.u(v))) < 1e-10

    def test_actuation_window(self):
        g = RDGrid(10.0, 32)
        chi = np.zeros((32, 1))
        chi[8:16] = 1.0
        sys_ = RDSystem(schloegl_rd().base, np.array([[1.0]]), chi)
        V = np.tile(np.linspace(1, 2, 32)[:, None], (3, 1, 1)) * np.array([1.0, 1.1, 1.2])[:, None, None]
        u = rds_synthesize_control(sys_, SpaceTimeField(np.array([0.0, 1.0, 2.0]), g.r, V), g)
        assert np.all(u.values[:, :8] == 0) and np.all(u.values[:, 16:] == 0)
        assert np.max(np.abs(u.values[:, 8:16])) > 0

    def test_zero_coupling_node(self):
        g = RDGrid(10.0, 32)
        V = np.zeros((3, 32, 1))
        with pytest.raises(RankDeficientAtNode):
            rds_synthesize_control(schloegl_rd(), SpaceTimeField(np.arange(3.0), g.r, V), g)


class TestMeasurePosition:
    def test_tanh_front_subgrid(self):
        g = RDGrid(100.0, 1000, "neumann")
        for phi in (40.0, 40.037, 55.55):
            pos = measure_position(FRONT(g.r - phi), 0, "steepest-slope", g)
            assert abs(pos - phi) < g.dx / 10

    def test_robust_to_noise(self):
        g = RDGrid(100.0, 1000, "neumann")
        rng = np.random.default_rng(3)
        X = FRONT(g.r - 42.0) + 1e-4 * rng.normal(size=(1000, 1))
        assert abs(measure_position(X, 0, "steepest-slope", g) - 42.0) < g.dx

    def test_two_equal_peaks_are_ambiguous(self):
        g = RDGrid(100.0, 1000)
        x = np.exp(-(g.r - 30) ** 2) + np.exp(-(g.r - 70) ** 2)
        with pytest.raises(Ambiguous):
            measure_position(x, 0, "max", g)

    def test_periodic_unwrapping(self):
        g = RDGrid(100.0, 1000)
        x = np.exp(-(g.r - 5.0) ** 2)
        assert abs(measure_position(x, 0, "max", g, previous=103.0) - 105.0) < g.dx


@pytest.mark.slow
class TestPulse:
    def test_profile_residual(self, fhn_pulse):
        system, grid, prof = fhn_pulse
        assert np.max(np.abs(fhn_profile_residual(prof, system, grid))) <= 1e-3

    def test_speed_and_shape(self, fhn_pulse):
        _, grid, prof = fhn_pulse
        assert 0.5 < prof.c < 3.0
        assert abs(prof.xi[np.argmax(prof.values[:, 1])]) <= grid.dx

    def test_translation_invariance(self, fhn_pulse):
        system, grid, prof = fhn_pulse
        shifted = prof(grid.r - grid.L / 2 - 7.3)
        res = (grid.laplacian(shifted) * system.diffusion + prof.c * prof.d(grid.r - grid.L / 2 - 7.3)
               + system.kinetics(shifted))
        assert np.max(np.abs(res)) <= 2e-3
