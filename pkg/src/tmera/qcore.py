"""Dense complex linear algebra substrate for small qubit registers.

Conventions used throughout the package:

* All matrices are dense ``complex128`` numpy arrays in row-major order.
* A register of ``n`` qubits lives in a ``2**n`` dimensional space and
  qubit 0 is the *most significant* bit of the computational-basis index,
  i.e. basis state ``|b0 b1 ... b_{n-1}>`` has index ``b0*2**(n-1) + ...``.
* Tolerances are centralized below; channel compositions over <= 8 layers
  accumulate round-off near 1e-12 per step, so validation thresholds sit
  two orders above that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateProjectionError, InvalidGeneratorError

UNITARY_TOL = 1e-10
HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PAULI_TOL = 1e-12

ID2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"I": ID2, "X": SX, "Y": SY, "Z": SZ}


def kron_all(*ops) -> np.ndarray:
    """Kronecker product of the given operators, left factor most significant."""
    out = np.array([[1.0 + 0.0j]])
    for op in ops:
        out = np.kron(out, op)
    return out


def pauli_string(label: str) -> np.ndarray:
    """Tensor product of single-qubit Paulis, e.g. ``pauli_string("XX")``."""
    return kron_all(*(PAULIS[c] for c in label))


def two_qubit_pauli_strings() -> list[tuple[str, np.ndarray]]:
    """The 16 two-qubit Pauli strings in lexicographic {I,X,Y,Z}^2 order."""
    labels = [a + b for a in "IXYZ" for b in "IXYZ"]
    return [(lab, pauli_string(lab)) for lab in labels]


def is_unitary(mat: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    d = mat.shape[0]
    return np.max(np.abs(mat.conj().T @ mat - np.eye(d))) <= tol


def is_hermitian(mat: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return np.max(np.abs(mat - mat.conj().T)) <= tol


def check_hermitian_unitary(sigma: np.ndarray, tol: float = PAULI_TOL) -> None:
    """Raise unless sigma is both Hermitian and squares to the identity."""
    sigma = np.asarray(sigma, dtype=complex)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise InvalidGeneratorError("generator must be a square matrix")
    if np.max(np.abs(sigma - sigma.conj().T)) > tol:
        raise InvalidGeneratorError("generator is not Hermitian")
    d = sigma.shape[0]
    if np.max(np.abs(sigma @ sigma - np.eye(d))) > tol:
        raise InvalidGeneratorError("generator does not square to the identity")


def rotation_gate(sigma: np.ndarray, theta: float) -> np.ndarray:
    """exp(-i theta sigma / 2) for a Hermitian unitary generator sigma.

    Because sigma^2 = 1 the exponential closes on two terms:
    cos(theta/2) * 1 - i sin(theta/2) * sigma.
    """
    sigma = np.asarray(sigma, dtype=complex)
    check_hermitian_unitary(sigma)
    d = sigma.shape[0]
    return np.cos(theta / 2.0) * np.eye(d) - 1j * np.sin(theta / 2.0) * sigma


@dataclass(frozen=True)
class DensityMatrix:
    """Trace-one positive Hermitian operator on a register of ``qubits`` qubits."""

    qubits: int
    mat: np.ndarray

    def validate(self, tol: float = TRACE_TOL, psd_tol: float = 1e-9) -> "DensityMatrix":
        d = 2**self.qubits
        if self.mat.shape != (d, d):
            raise ValueError(f"expected a {d}x{d} matrix for {self.qubits} qubits")
        if np.max(np.abs(self.mat - self.mat.conj().T)) > tol:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(self.mat) - 1.0) > tol:
            raise ValueError("density matrix trace differs from one")
        evals = np.linalg.eigvalsh(self.mat)
        if evals.min() < -psd_tol:
            raise ValueError("density matrix has a significantly negative eigenvalue")
        return self


def pure_state_density(psi: np.ndarray, qubits: int) -> DensityMatrix:
    psi = np.asarray(psi, dtype=complex).ravel()
    return DensityMatrix(qubits, np.outer(psi, psi.conj()))


def basis_state(n_qubits: int, index: int = 0) -> np.ndarray:
    psi = np.zeros(2**n_qubits, dtype=complex)
    psi[index] = 1.0
    return psi


# ---------------------------------------------------------------------------
# gate application on state vectors and density matrices
# ---------------------------------------------------------------------------


def apply_unitary_vec(psi: np.ndarray, gate: np.ndarray, qubits: tuple[int, ...] | list[int],
                      n_qubits: int) -> np.ndarray:
    """Apply a k-qubit gate to the listed qubits of an n-qubit state vector."""
    k = len(qubits)
    if gate.shape != (2**k, 2**k):
        raise ValueError("gate dimension does not match qubit count")
    tens = psi.reshape((2,) * n_qubits)
    rest = [i for i in range(n_qubits) if i not in qubits]
    perm = list(qubits) + rest
    tens = tens.transpose(perm).reshape(2**k, -1)
    tens = gate @ tens
    tens = tens.reshape([2] * n_qubits).transpose(np.argsort(perm))
    return tens.reshape(-1)


def _apply_rows(mat: np.ndarray, gate: np.ndarray, qubits, n_qubits: int) -> np.ndarray:
    k = len(qubits)
    cols = mat.shape[1]
    tens = mat.reshape((2,) * n_qubits + (cols,))
    rest = [i for i in range(n_qubits) if i not in qubits]
    perm = list(qubits) + rest + [n_qubits]
    tens = tens.transpose(perm).reshape(2**k, -1)
    tens = gate @ tens
    tens = tens.reshape([2] * n_qubits + [cols]).transpose(np.argsort(perm))
    return tens.reshape(2**n_qubits, cols)


def apply_unitary_rho(rho: np.ndarray, gate: np.ndarray, qubits, n_qubits: int) -> np.ndarray:
    """Conjugate rho -> G rho G^dagger with G acting on the listed qubits."""
    left = _apply_rows(rho, gate, qubits, n_qubits)
    # (X G^dag) = (G X^dag)^dag
    return _apply_rows(left.conj().T, gate, qubits, n_qubits).conj().T


def conjugate_by_unitary(op: np.ndarray, gate: np.ndarray, qubits, n_qubits: int) -> np.ndarray:
    """Heisenberg-picture update op -> G^dagger op G on the listed qubits."""
    return apply_unitary_rho(op, gate.conj().T, qubits, n_qubits)


def expand_gate(gate: np.ndarray, qubits, n_qubits: int) -> np.ndarray:
    """Embed a k-qubit gate into the full 2**n unitary (identity elsewhere)."""
    d = 2**n_qubits
    return _apply_rows(np.eye(d, dtype=complex), gate, qubits, n_qubits)


def partial_trace(rho: np.ndarray, keep, n_qubits: int) -> np.ndarray:
    """Reduced density matrix on the ``keep`` qubits, preserving their order.

    An empty keep set returns the 1x1 matrix holding the trace.
    """
    keep = list(keep)
    if any(q < 0 or q >= n_qubits for q in keep):
        raise ValueError("keep indices outside the register")
    if len(set(keep)) != len(keep):
        raise ValueError("duplicate keep indices")
    traced = [q for q in range(n_qubits) if q not in keep]
    if not keep:
        return np.array([[np.trace(rho)]], dtype=complex)
    tens = rho.reshape((2,) * (2 * n_qubits))
    perm = keep + traced + [n_qubits + q for q in keep] + [n_qubits + q for q in traced]
    k, m = len(keep), len(traced)
    tens = tens.transpose(perm).reshape(2**k, 2**m, 2**k, 2**m)
    return np.einsum("ambm->ab", tens)


def trace_out(rho: np.ndarray, drop, n_qubits: int) -> np.ndarray:
    keep = [q for q in range(n_qubits) if q not in set(drop)]
    return partial_trace(rho, keep, n_qubits)


def embed_operator(op: np.ndarray, qubits, n_qubits: int) -> np.ndarray:
    """op acting on the listed qubits, identity on the rest of the register."""
    return expand_gate(op, qubits, n_qubits)


# ---------------------------------------------------------------------------
# unitary projection and matrix exponentials
# ---------------------------------------------------------------------------

_EXPM_EIG_MAX_DIM = 8


def project_to_unitary(mat: np.ndarray, rank_tol: float = 1e-12) -> np.ndarray:
    """Closest unitary in Frobenius norm: U V^dagger from the SVD U S V^dagger."""
    mat = np.asarray(mat, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("only square matrices can be projected onto the unitary group")
    u, s, vh = np.linalg.svd(mat)
    if s.min() < rank_tol:
        raise DegenerateProjectionError(
            f"smallest singular value {s.min():.3e} below rank tolerance {rank_tol:.0e}")
    return u @ vh


def expm_skew(a: np.ndarray) -> np.ndarray:
    """Matrix exponential of a skew-Hermitian matrix; the result is unitary.

    Eigendecomposition for dimension <= 8, scaling-and-squaring Pade above.
    """
    a = np.asarray(a, dtype=complex)
    skew_defect = np.max(np.abs(a + a.conj().T))
    scale = max(1.0, np.max(np.abs(a)))
    if skew_defect > 1e-9 * scale:
        raise ValueError(f"matrix is not skew-Hermitian (defect {skew_defect:.3e})")
    if a.shape[0] <= _EXPM_EIG_MAX_DIM:
        # a = i h with h Hermitian
        evals, vecs = np.linalg.eigh(-1j * a)
        return (vecs * np.exp(1j * evals)) @ vecs.conj().T
    return scipy.linalg.expm(a)
