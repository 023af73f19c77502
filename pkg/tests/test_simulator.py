import numpy as np
import pytest

from tmera import models, network as net, simulator as sim
from tmera.errors import EmbeddingError, TopologyError

from conftest import max_abs


def tfim():
    return models.tfim_term(1.1, 1)


class TestChannelBasics:
    def test_identity_network_channel_is_trivial(self):
        st = net.build_network("mod-binary", 3, 1, 1)
        iface = sim.averaged_density(st, 0)
        for comp in iface.components.values():
            want = np.zeros_like(comp)
            want[0, 0] = 1.0
            assert max_abs(comp - want) < 1e-12

    def test_top_interface_is_product_of_top_states(self, rng):
        st = net.build_network("binary", 2, 1, 1, "free", "random", seed=9)
        iface = sim.averaged_density(st, st.T)
        top = sim.top_block_state(st)
        assert max_abs(iface.components[""] - top) < 1e-14

    def test_single_map_preserves_purity_for_identity_gates(self):
        st = net.build_network("binary", 1, 1, 1)
        ex = sim.MapExecutor(st)
        rho = sim.top_block_state(st)
        out = ex.apply("L", 1, rho)
        assert abs(np.trace(out @ out).real - 1.0) < 1e-10

    def test_trace_and_positivity_preserved(self, rng):
        for kind, T in (("binary", 2), ("mod-binary", 3), ("ternary", 2)):
            st = net.build_network(kind, T, 1, 2, "free", "random", seed=13)
            iface = sim.averaged_density(st, 0)
            for comp in iface.components.values():
                assert abs(np.trace(comp).real - 1.0) <= 1e-10
                assert np.linalg.eigvalsh(comp).min() >= -1e-9

    def test_weights_must_sum_to_one(self):
        st = net.build_network("binary", 1, 1, 1)
        iface = sim.initial_interface(st)
        with pytest.raises(ValueError):
            sim.channel_step(sim.MapExecutor(st), iface, 1,
                             weights={"L": 0.7, "R": 0.7})

    def test_parity_mismatch_raises(self):
        st = net.build_network("mod-binary", 2, 1, 1)
        bad = sim.InterfaceState(2, {"": sim.top_block_state(st)})
        with pytest.raises(TopologyError):
            sim.channel_step(sim.MapExecutor(st), bad, 2)

    def test_interface_bounds(self):
        st = net.build_network("binary", 2, 1, 1)
        with pytest.raises(ValueError):
            sim.averaged_density(st, 3)


class TestBranchEquivalence:
    def test_channel_equals_branch_average(self):
        for kind, T in (("binary", 3), ("binary", 4), ("ternary", 2), ("ternary", 3)):
            st = net.build_network(kind, T, 1, 1, "free", "random", seed=T + 40)
            avg = sim.enumerate_branch_average(st)
            ch = sim.averaged_density(st, 0).components[""]
            assert max_abs(avg - ch) < 1e-10

    def test_mod_binary_rejected(self):
        st = net.build_network("mod-binary", 2, 1, 1)
        with pytest.raises(TopologyError):
            sim.enumerate_branch_average(st)


class TestFlagDilation:
    def test_flag_channel_reproduces_recursion(self):
        for seed in (1, 2, 3):
            st = net.build_network("mod-binary", 3, 1, 2, "free", "random", seed=seed)
            ex = sim.MapExecutor(st)
            iface = sim.initial_interface(st)
            flag = sim.flag_join(iface, ex.block_qubits)
            for tau in range(st.T, 0, -1):
                iface = sim.channel_step(ex, iface, tau)
                flag = sim.flag_channel_step(ex, flag, tau)
                re_, ro_, off = sim.flag_split(flag, ex.block_qubits)
                assert off < 1e-10  # block structure preserved
                assert max_abs(re_ - iface.components["e"]) < 1e-10
                assert max_abs(ro_ - iface.components["o"]) < 1e-10

    def test_flag_state_trace(self, rng):
        st = net.build_network("mod-binary", 2, 1, 1, "free", "random", seed=5)
        ex = sim.MapExecutor(st)
        flag = sim.flag_join(sim.initial_interface(st), ex.block_qubits)
        for tau in (2, 1):
            flag = sim.flag_channel_step(ex, flag, tau)
        assert abs(np.trace(flag).real - 1.0) < 1e-10


class TestEnergyDensity:
    def test_identity_network_energy_is_g(self):
        for kind in ("binary", "mod-binary", "ternary"):
            st = net.build_network(kind, 2, 1, 1)
            m = models.tfim_term(1.3, 1)
            assert abs(sim.energy_density(st, m) - 1.3) < 1e-12

    def test_variational_bound(self):
        m = models.tfim_term(1.25, 1)
        ref = models.reference_energy(m).value
        for seed in range(5):
            st = net.build_network("mod-binary", 3, 1, 1, "free", "random", seed=seed)
            assert sim.energy_density(st, m) >= ref - 1e-9

    def test_q_mismatch_raises(self):
        st = net.build_network("binary", 1, 2, 1)
        with pytest.raises(EmbeddingError):
            sim.energy_density(st, models.tfim_term(1.0, 1))

    def test_matches_oracle_small_random(self):
        m = tfim()
        st = net.build_network("mod-binary", 2, 1, 2, "free", "random", seed=77)
        e_ch = sim.energy_density(st, m)
        e_or = sim.oracle_site_energy(st, m, net.oracle_ring_size(st))
        assert abs(e_ch - e_or) < 1e-10


class TestOracleEquivalence:
    def test_causal_cone_equals_oracle_per_site(self):
        m = tfim()
        for kind, T in (("binary", 2), ("ternary", 2)):
            st = net.build_network(kind, T, 1, 2, "free", "random", seed=21)
            n = net.oracle_ring_size(st)
            psi = net.full_state_oracle(st, n)
            h = sim.embedded_term(m, st)
            ex = sim.MapExecutor(st)
            b = st.info.b
            for i in range(b**T):
                labels = net.branch_sequence(kind, i, T)
                pos = net.branch_block_position(kind, labels, T, n)
                rho = sim.branch_state(st, labels, ex)
                e_branch = float(np.real(np.trace(rho @ h)))
                from tmera.qcore import apply_unitary_vec
                qubits = (pos, (pos + 1) % n)
                hpsi = apply_unitary_vec(psi, m.term, qubits, n)
                e_site = float(np.real(np.vdot(psi, hpsi)))
                assert abs(e_branch - e_site) < 1e-10

    def test_mod_binary_bond_paths_match_oracle(self):
        m = tfim()
        st = net.build_network("mod-binary", 3, 1, 1, "free", "random", seed=31)
        n = net.oracle_ring_size(st)
        psi = net.full_state_oracle(st, n)
        h = sim.embedded_term(m, st)
        ex = sim.MapExecutor(st)
        from tmera.qcore import apply_unitary_vec
        for bond in range(n):
            path = net.mod_binary_bond_path(bond, st.T, n)
            rho = sim.top_block_state(st)
            for tau in range(st.T, 0, -1):
                rho = ex.apply(path[tau - 1][0], tau, rho)
            e_branch = float(np.real(np.trace(rho @ h)))
            hpsi = apply_unitary_vec(psi, m.term, (bond, (bond + 1) % n), n)
            assert abs(e_branch - float(np.real(np.vdot(psi, hpsi)))) < 1e-10


class TestSampling:
    def test_eigenstate_gives_exact_value(self):
        # |+>^N with g = 0: the bond term is -XX, whose eigenstate this is,
        # so every projective shot returns -1 and the error estimate is zero.
        # (|0...0> is *not* an eigenstate of the bond term for g > 0: the
        # -XX piece mixes |00> and |11>, only the mean equals g there.)
        st = net.build_network("mod-binary", 2, 1, 1, "free", "product",
                               product_spec=(0.0, np.pi / 2, 0.0))
        m = models.tfim_term(0.0, 1)
        est = sim.sample_energy(st, m, 500, seed=4)
        assert est.mean == pytest.approx(-1.0, abs=1e-12)
        assert est.std_error == 0.0

    def test_identity_network_mean_is_g(self):
        st = net.build_network("mod-binary", 2, 1, 1)
        m = models.tfim_term(0.9, 1)
        est = sim.sample_energy(st, m, 200_000, seed=4)
        assert abs(est.mean - 0.9) < 5 * est.std_error
        assert est.std_error > 0.0

    def test_deterministic_given_seed(self):
        st = net.build_network("mod-binary", 2, 1, 1, "free", "random", seed=3)
        m = tfim()
        a = sim.sample_energy(st, m, 2000, seed=11)
        b = sim.sample_energy(st, m, 2000, seed=11)
        assert a == b
        c = sim.sample_energy(st, m, 2000, seed=12)
        assert a.mean != c.mean

    def test_mean_converges_to_energy_density(self):
        st = net.build_network("mod-binary", 2, 1, 1, "free", "random", seed=3)
        m = tfim()
        exact = sim.energy_density(st, m)
        est = sim.sample_energy(st, m, 200_000, seed=1)
        assert abs(est.mean - exact) < 5 * est.std_error + 1e-3
        assert est.std_error > 0.0

    def test_error_scales_with_shots(self):
        st = net.build_network("mod-binary", 2, 1, 1, "free", "random", seed=3)
        m = tfim()
        reps = 30
        logs = []
        for shots in (1_000, 10_000, 100_000):
            means = [sim.sample_energy(st, m, shots, seed=100 + 97 * r).mean
                     for r in range(reps)]
            logs.append((np.log(shots), np.log(np.std(means, ddof=1))))
        slope = np.polyfit([x for x, _ in logs], [y for _, y in logs], 1)[0]
        assert -0.65 <= slope <= -0.35
