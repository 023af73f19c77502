import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_density(rng, n_qubits):
    d = 2**n_qubits
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def max_abs(x):
    return float(np.max(np.abs(x)))


def phase_aligned(mat, reference):
    """Rescale mat by a global phase so its largest entry matches reference."""
    idx = np.unravel_index(np.argmax(np.abs(reference)), reference.shape)
    return mat * (reference[idx] / mat[idx])
