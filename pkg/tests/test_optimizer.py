import numpy as np
import pytest

from tmera import gradients as grad
from tmera import models, network as net, optimizer as opt, simulator as sim
from tmera.errors import LineSearchError
from tmera.gates import haar_unitary

from conftest import max_abs


def tfim(g=1.25, q=1):
    return models.tfim_term(g, q)


def random_point(rng, dims=(4, 2)):
    return {i: haar_unitary(d, rng) for i, d in enumerate(dims)}


def random_tangent(point, rng):
    out = {}
    for gid, u in point.items():
        d = u.shape[0]
        h = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        out[gid] = 1j * u @ (0.5 * (h + h.conj().T))
    return out


class TestRetraction:
    def test_tau_zero_is_identity(self, rng):
        point = random_point(rng)
        p = random_tangent(point, rng)
        r0 = opt.retraction(point, p, 0.0)
        assert max(max_abs(r0[g] - point[g]) for g in point) < 1e-12

    def test_initial_velocity(self, rng):
        point = random_point(rng)
        p = random_tangent(point, rng)
        h = 1e-6
        rp = opt.retraction(point, p, h, reproject=False)
        rm = opt.retraction(point, p, -h, reproject=False)
        for g in point:
            der = (rp[g] - rm[g]) / (2 * h)
            assert max_abs(der - p[g]) < 1e-7

    def test_unitary_for_large_steps(self, rng):
        from tmera.qcore import is_unitary
        point = random_point(rng)
        p = random_tangent(point, rng)
        for tau in (-10.0, -1.0, 2.5, 10.0):
            r = opt.retraction(point, p, tau)
            assert all(is_unitary(r[g], 1e-10) for g in point)


class TestVectorTransport:
    def test_tau_zero_identity(self, rng):
        point = random_point(rng)
        p = random_tangent(point, rng)
        w = random_tangent(point, rng)
        tw = opt.vector_transport(point, p, 0.0, w)
        assert max(max_abs(tw[g] - w[g]) for g in point) < 1e-12

    def test_isometric(self, rng):
        point = random_point(rng)
        p = random_tangent(point, rng)
        for _ in range(5):
            w1 = random_tangent(point, rng)
            w2 = random_tangent(point, rng)
            t1 = opt.vector_transport(point, p, 0.9, w1)
            t2 = opt.vector_transport(point, p, 0.9, w2)
            assert abs(grad.tangent_inner(t1, t2)
                       - grad.tangent_inner(w1, w2)) < 1e-10

    def test_lands_in_new_tangent_space(self, rng):
        point = random_point(rng)
        p = random_tangent(point, rng)
        w = random_tangent(point, rng)
        tau = 0.6
        new_point = opt.retraction(point, p, tau, reproject=False)
        tw = opt.vector_transport(point, p, tau, w)
        for g in point:
            assert grad.skew_defect(new_point[g], tw[g]) < 1e-9


class TestWolfeSearch:
    def test_quadratic_toy(self):
        # E(tau) = (tau - 1)^2 with slope -2 at tau = 0

        class Trial:
            def __init__(self, tau):
                self.tau = tau
                self.energy = (tau - 1.0) ** 2
                self.slope = 2.0 * (tau - 1.0)
                self.point = self.grad = self.trans = None

        cfg = opt.LbfgsConfig(max_iter=1)
        trial, n = wolfe = opt.wolfe_line_search(Trial, 1.0, -2.0, cfg)
        assert trial.energy <= 1.0 + cfg.c1 * trial.tau * (-2.0)
        assert trial.slope >= cfg.c2 * (-2.0)
        # tau = 1 itself satisfies both conditions and is found first
        assert trial.tau == 1.0 and n == 1

    def test_requires_descent_direction(self):
        with pytest.raises(LineSearchError):
            opt.wolfe_line_search(lambda tau: None, 1.0, +1.0, opt.LbfgsConfig(max_iter=1))

    def test_budget_exhaustion(self):
        class Trial:
            def __init__(self, tau):
                self.tau = tau
                self.energy = 1.0 + tau  # never decreases fast enough
                self.slope = 1.0
                self.point = self.grad = self.trans = None

        with pytest.raises(LineSearchError):
            opt.wolfe_line_search(Trial, 1.0, -1e-30, opt.LbfgsConfig(max_iter=1))


class TestLbfgsMinimize:
    def test_converged_start_exits_immediately(self):
        model = tfim()
        st = net.build_network("mod-binary", 1, 1, 1, "free", "random", seed=10)
        final, rec = opt.lbfgs_minimize(st, model,
                                        opt.LbfgsConfig(max_iter=400, grad_tol=1e-6))
        assert rec.status == "converged"
        again, rec2 = opt.lbfgs_minimize(final, model,
                                         opt.LbfgsConfig(max_iter=400, grad_tol=1e-6))
        assert rec2.status == "converged"
        assert len(rec2.iterations) == 0

    def test_zero_iteration_cap_reports_initial_energy(self):
        model = tfim(g=1.4)
        st = net.build_network("mod-binary", 2, 1, 1, "free", "identity")
        final, rec = opt.lbfgs_minimize(st, model, opt.LbfgsConfig(max_iter=0))
        assert rec.final_energy == pytest.approx(1.4, abs=1e-12)
        assert len(rec.iterations) == 0

    def test_energy_never_increases_and_reaches_reference(self):
        model = tfim()
        ref = models.reference_energy(model).value
        st = net.build_network("mod-binary", 3, 1, 1, "free", "random", seed=15)
        final, rec = opt.lbfgs_minimize(st, model,
                                        opt.LbfgsConfig(max_iter=300, grad_tol=1e-8))
        energies = [r["energy"] for r in rec.iterations]
        assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))
        assert rec.final_energy >= ref - 1e-9

    def test_wolfe_conditions_on_every_accepted_step(self):
        model = tfim()
        st = net.build_network("mod-binary", 4, 1, 2, "free", "random", seed=16)
        cfg = opt.LbfgsConfig(max_iter=200, grad_tol=0.0)
        final, rec = opt.lbfgs_minimize(st, model, cfg)
        assert len(rec.iterations) >= 190  # essentially a 200-iteration run
        for prev, row in zip([None] + rec.iterations[:-1], rec.iterations):
            # sufficient decrease re-assembled from the logged quantities
            decrease = row["accepted_decrease"]
            assert decrease >= -cfg.c1 * row["step"] * abs(row["slope0"]) - 1e-12
            assert row["slope0"] < 0.0

    def test_reprojection_stability(self):
        model = tfim()
        st = net.build_network("mod-binary", 2, 1, 1, "free", "random", seed=17)
        final, rec = opt.lbfgs_minimize(st, model,
                                        opt.LbfgsConfig(max_iter=500, grad_tol=0.0))
        for row in rec.iterations:
            assert row["unitarity_defect"] <= 1e-10

    def test_euclidean_mode_on_angles(self):
        model = tfim()
        st = net.build_network("mod-binary", 2, 1, 1, "can", "random", seed=18)
        final, rec = opt.lbfgs_minimize(st, model,
                                        opt.LbfgsConfig(max_iter=150, grad_tol=1e-8))
        assert rec.final_energy < sim.energy_density(st, model)
        ref = models.reference_energy(model).value
        assert rec.final_energy >= ref - 1e-9

    def test_mode_form_compatibility(self):
        model = tfim()
        free = net.build_network("binary", 1, 1, 1, "free", "identity")
        angle = net.build_network("binary", 1, 1, 1, "can", "identity")
        with pytest.raises(ValueError):
            opt.lbfgs_minimize(free, model, opt.LbfgsConfig(max_iter=1),
                               mode="euclidean")
        with pytest.raises(ValueError):
            opt.lbfgs_minimize(angle, model, opt.LbfgsConfig(max_iter=1),
                               mode="riemannian")

    def test_cross_mode_equivalence_tiny_instance(self):
        model = tfim()
        stf = net.build_network("mod-binary", 1, 1, 1, "free", "random", seed=2)
        stc = net.build_network("mod-binary", 1, 1, 1, "can", "random", seed=2)
        _, rf = opt.lbfgs_minimize(stf, model,
                                   opt.LbfgsConfig(max_iter=400, grad_tol=1e-11))
        _, rc = opt.lbfgs_minimize(stc, model,
                                   opt.LbfgsConfig(max_iter=400, grad_tol=1e-11))
        assert abs(rf.final_energy - rc.final_energy) < 1e-6

    def test_config_validation(self):
        with pytest.raises(ValueError):
            opt.LbfgsConfig(c1=0.6).validate()
        with pytest.raises(ValueError):
            opt.LbfgsConfig(memory=0).validate()


class TestTwoLoopConformance:
    def test_matches_dense_bfgs_reconstruction(self):
        model = tfim(g=1.1)
        st = net.build_network("mod-binary", 1, 1, 1, "free", "random", seed=13)

        def vec_of(t):
            parts = []
            for gid in sorted(t):
                parts.append(np.real(t[gid]).ravel())
                parts.append(np.imag(t[gid]).ravel())
            return np.concatenate(parts)

        traces = []
        cfg = opt.LbfgsConfig(memory=3, max_iter=5, grad_tol=1e-14)
        opt.lbfgs_minimize(st, model, cfg, trace_hook=traces.append)
        assert len(traces) == 5
        for tr in traces:
            g = vec_of(tr["grad"])
            p = vec_of(tr["direction"])
            dim = len(g)
            hmat = tr["gamma"] * np.eye(dim)
            for rho_i, s_i, y_i in tr["memory"]:
                s, y = vec_of(s_i), vec_of(y_i)
                v = np.eye(dim) - rho_i * np.outer(s, y)
                hmat = v @ hmat @ v.T + rho_i * np.outer(s, s)
            assert max_abs(-hmat @ g - p) < 1e-9

    def test_curvature_pairs_positive(self):
        model = tfim()
        st = net.build_network("mod-binary", 2, 1, 1, "free", "random", seed=21)
        traces = []
        opt.lbfgs_minimize(st, model, opt.LbfgsConfig(max_iter=40, grad_tol=1e-9),
                           trace_hook=traces.append)
        for tr in traces:
            for rho_i, s_i, y_i in tr["memory"]:
                assert rho_i > 0.0  # stored pairs satisfy (s, y) > 0

    def test_hessian_action_positive_on_gradient(self):
        model = tfim()
        st = net.build_network("mod-binary", 2, 1, 1, "free", "random", seed=22)
        traces = []
        opt.lbfgs_minimize(st, model, opt.LbfgsConfig(max_iter=60, grad_tol=1e-9),
                           trace_hook=traces.append)
        for tr in traces:
            if tr["memory"]:
                # (g, H g) = -(g, p) > 0
                assert grad.tangent_inner(tr["grad"], tr["direction"]) < 0.0
