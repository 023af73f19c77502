import numpy as np
import pytest

from tmera import qcore
from tmera.errors import DegenerateProjectionError, InvalidGeneratorError

from conftest import max_abs, random_density


def naive_partial_trace(rho, keep, n):
    """Index-summation oracle, deliberately independent of the library path."""
    keep = list(keep)
    traced = [q for q in range(n) if q not in keep]
    k = len(keep)
    out = np.zeros((2**k, 2**k), dtype=complex)

    def bits(x, n):
        return [(x >> (n - 1 - i)) & 1 for i in range(n)]

    def index(bitlist):
        val = 0
        for b in bitlist:
            val = (val << 1) | b
        return val

    for row in range(2**n):
        for col in range(2**n):
            rb, cb = bits(row, n), bits(col, n)
            if any(rb[q] != cb[q] for q in traced):
                continue
            r_keep = index([rb[q] for q in keep])
            c_keep = index([cb[q] for q in keep])
            out[r_keep, c_keep] += rho[row, col]
    return out


class TestRotationGate:
    def test_identity_angle(self):
        assert max_abs(qcore.rotation_gate(qcore.SZ, 0.0) - np.eye(2)) < 1e-15

    def test_pi_rotation_is_minus_i_sigma(self):
        got = qcore.rotation_gate(qcore.SZ, np.pi)
        assert max_abs(got - (-1j) * qcore.SZ) < 1e-15

    def test_two_qubit_generator(self):
        xx = qcore.pauli_string("XX")
        got = qcore.rotation_gate(xx, np.pi / 2)
        want = (np.eye(4) - 1j * xx) / np.sqrt(2)
        assert max_abs(got - want) < 1e-14

    def test_rejects_non_hermitian(self):
        with pytest.raises(InvalidGeneratorError):
            qcore.rotation_gate(np.array([[0, 1], [0, 0]], dtype=complex), 0.3)

    def test_rejects_hermitian_non_unitary(self):
        with pytest.raises(InvalidGeneratorError):
            qcore.rotation_gate(np.diag([1.0, 2.0]).astype(complex), 0.3)

    def test_angle_addition(self, rng):
        sigma = qcore.pauli_string("XY")
        for _ in range(25):
            t1, t2 = rng.uniform(-6, 6, 2)
            lhs = qcore.rotation_gate(sigma, t1) @ qcore.rotation_gate(sigma, t2)
            rhs = qcore.rotation_gate(sigma, t1 + t2)
            assert max_abs(lhs - rhs) < 1e-12


class TestPartialTrace:
    def test_bell_state(self):
        psi = np.zeros(4, dtype=complex)
        psi[0] = psi[3] = 1 / np.sqrt(2)
        rho = np.outer(psi, psi.conj())
        red = qcore.partial_trace(rho, [0], 2)
        assert max_abs(red - np.eye(2) / 2) < 1e-15

    def test_product_state(self):
        psi = np.kron(np.array([1, 0]), np.array([0, 1])).astype(complex)
        rho = np.outer(psi, psi.conj())
        red = qcore.partial_trace(rho, [1], 2)
        assert max_abs(red - np.diag([0.0, 1.0])) < 1e-15

    def test_against_naive_oracle(self, rng):
        rho = random_density(rng, 3)
        for keep in ([0, 2], [1], [0, 1, 2], [2, 0]):
            got = qcore.partial_trace(rho, keep, 3)
            want = naive_partial_trace(rho, keep, 3)
            assert max_abs(got - want) < 1e-12

    def test_empty_keep_returns_trace(self, rng):
        rho = random_density(rng, 2)
        got = qcore.partial_trace(rho, [], 2)
        assert got.shape == (1, 1)
        assert abs(got[0, 0] - 1.0) < 1e-12

    def test_preserves_trace_and_hermiticity(self, rng):
        for _ in range(10):
            rho = random_density(rng, 4)
            red = qcore.partial_trace(rho, [0, 3], 4)
            assert abs(np.trace(red) - 1.0) < 1e-12
            assert max_abs(red - red.conj().T) < 1e-12

    def test_qubit_zero_is_most_significant(self):
        # |10> has index 2 under the qubit-0-MSB convention
        psi = np.zeros(4, dtype=complex)
        psi[2] = 1.0
        rho = np.outer(psi, psi.conj())
        first = qcore.partial_trace(rho, [0], 2)
        second = qcore.partial_trace(rho, [1], 2)
        assert max_abs(first - np.diag([0.0, 1.0])) < 1e-15
        assert max_abs(second - np.diag([1.0, 0.0])) < 1e-15


class TestProjectToUnitary:
    def test_fixed_point(self, rng):
        from tmera.gates import haar_unitary
        u = haar_unitary(4, rng)
        assert max_abs(qcore.project_to_unitary(u) - u) < 1e-12

    def test_rescales_multiples(self):
        assert max_abs(qcore.project_to_unitary(2.0 * np.eye(3)) - np.eye(3)) < 1e-12

    def test_small_perturbation(self, rng):
        pert = 1e-8 * (rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))
        out = qcore.project_to_unitary(np.eye(4) + pert)
        assert qcore.is_unitary(out, 1e-12)
        assert max_abs(out - np.eye(4)) <= 10 * max_abs(pert)

    def test_idempotent(self, rng):
        m = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        once = qcore.project_to_unitary(m)
        twice = qcore.project_to_unitary(once)
        assert max_abs(once - twice) < 1e-12

    def test_rank_deficient_raises(self):
        m = np.diag([1.0, 1.0, 0.0, 1.0]).astype(complex)
        with pytest.raises(DegenerateProjectionError):
            qcore.project_to_unitary(m)


class TestExpmSkew:
    def test_unitary_output(self, rng):
        for dim in (2, 4, 16):
            h = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
            a = 1j * (h + h.conj().T)
            u = qcore.expm_skew(a)
            assert qcore.is_unitary(u, 1e-10)

    def test_matches_scipy(self, rng):
        import scipy.linalg
        h = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        a = 1j * (h + h.conj().T)
        assert max_abs(qcore.expm_skew(a) - scipy.linalg.expm(a)) < 1e-11

    def test_rejects_non_skew(self):
        with pytest.raises(ValueError):
            qcore.expm_skew(np.eye(2, dtype=complex))


class TestGateApplication:
    def test_vec_matches_expanded(self, rng):
        from tmera.gates import haar_unitary
        g = haar_unitary(4, rng)
        psi = rng.standard_normal(2**4) + 1j * rng.standard_normal(2**4)
        for qubits in ((0, 1), (2, 3), (1, 3), (3, 0)):
            got = qcore.apply_unitary_vec(psi, g, qubits, 4)
            want = qcore.expand_gate(g, qubits, 4) @ psi
            assert max_abs(got - want) < 1e-12

    def test_rho_matches_expanded(self, rng):
        from tmera.gates import haar_unitary
        g = haar_unitary(4, rng)
        rho = random_density(rng, 3)
        big = qcore.expand_gate(g, (2, 0), 3)
        got = qcore.apply_unitary_rho(rho, g, (2, 0), 3)
        assert max_abs(got - big @ rho @ big.conj().T) < 1e-12
