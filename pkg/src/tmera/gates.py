"""Two-qubit Trotter gate construction, parametrization and decomposition.

Supported parametrizations of a 4x4 gate:

* ``FREE``  -- raw unitary matrix, no angle vector.
* ``CAN``   -- four general single-qubit rotations around a core of three
  commuting Ising rotations XX/YY/ZZ; 15 angles.
* ``CNOT``  -- three fixed CNOTs interleaved with one Rz and two Ry rotations,
  sandwiched by four general single-qubit rotations; 15 angles.
* ``XX``    -- used only inside XX-block tensor circuits, where layers of
  single-qubit rotations (3 angles each) alternate with single-angle XX
  Ising rotations.

The canonical (Weyl-chamber) point of a gate is extracted with the magic
basis method: transform to the magic basis, jointly diagonalize the real and
imaginary parts of the symmetric matrix V^T V with a real orthogonal basis,
and split the eigenphases into Ising angles plus a global phase.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ArityError, KakDegeneracyError
from .qcore import ID2, SX, SY, SZ, kron_all, pauli_string, rotation_gate, is_unitary

# magic (Bell-like) basis: columns are the magic basis states
MAGIC = np.array(
    [
        [1, 0, 0, 1j],
        [0, 1j, 1, 0],
        [0, 1j, -1, 0],
        [1, 0, 0, -1j],
    ],
    dtype=complex,
) / np.sqrt(2.0)

_XX = pauli_string("XX")
_YY = pauli_string("YY")
_ZZ = pauli_string("ZZ")

# Ising generators are diagonal in the magic basis; these are the diagonals.
_DIAG_XX = np.real(np.diag(MAGIC.conj().T @ _XX @ MAGIC))
_DIAG_YY = np.real(np.diag(MAGIC.conj().T @ _YY @ MAGIC))
_DIAG_ZZ = np.real(np.diag(MAGIC.conj().T @ _ZZ @ MAGIC))

# phases of B Theta B^dag: phi_j = -(x*dX + y*dY + z*dZ)/2 + phase
_PHASE_SYSTEM = np.column_stack(
    [-0.5 * _DIAG_XX, -0.5 * _DIAG_YY, -0.5 * _DIAG_ZZ, np.ones(4)]
)
_PHASE_SOLVE = np.linalg.inv(_PHASE_SYSTEM)

CNOT_01 = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)  # control = qubit 0 (MSB)
CNOT_10 = np.array(
    [[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=complex
)  # control = qubit 1 (LSB)


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a Ginibre matrix with the phase fix."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def single_qubit(euler: tuple[float, float, float]) -> np.ndarray:
    """General single-qubit rotation Rz(alpha) Ry(beta) Rz(gamma)."""
    alpha, beta, gamma = euler
    return rotation_gate(SZ, alpha) @ rotation_gate(SY, beta) @ rotation_gate(SZ, gamma)


def euler_zyz(u: np.ndarray) -> tuple[float, float, float, float]:
    """Angles (alpha, beta, gamma, delta) with u = e^{i delta} Rz(a) Ry(b) Rz(g)."""
    u = np.asarray(u, dtype=complex)
    delta = 0.5 * np.angle(np.linalg.det(u))
    su = u * np.exp(-1j * delta)
    beta = 2.0 * np.arctan2(np.abs(su[1, 0]), np.abs(su[0, 0]))
    if np.abs(su[0, 0]) < 1e-12:
        # pure off-diagonal: only alpha - gamma is fixed
        alpha = 2.0 * np.angle(su[1, 0])
        gamma = 0.0
    elif np.abs(su[1, 0]) < 1e-12:
        alpha = -2.0 * np.angle(su[0, 0])
        gamma = 0.0
    else:
        plus = -2.0 * np.angle(su[0, 0])
        minus = 2.0 * np.angle(su[1, 0])
        alpha = 0.5 * (plus + minus)
        gamma = 0.5 * (plus - minus)
    # fold the SU(2) sign ambiguity into delta
    rec = single_qubit((alpha, beta, gamma))
    idx = np.unravel_index(np.argmax(np.abs(rec)), rec.shape)
    phase = u[idx] / rec[idx]
    return alpha, beta, gamma, float(np.angle(phase))


@dataclass
class CanAngles:
    """Canonical decomposition u = (l3 x l4) Rxx Ryy Rzz (l1 x l2) e^{i phase}.

    ``ising`` lies in the Weyl chamber pi/2 >= xx >= yy >= |zz|; the global
    phase is kept explicitly so reconstruction can be exact, not projective.
    """

    ising: np.ndarray
    locals_: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    phase: float


def ising_core(xx: float, yy: float, zz: float) -> np.ndarray:
    return (
        rotation_gate(_XX, xx)
        @ rotation_gate(_YY, yy)
        @ rotation_gate(_ZZ, zz)
    )


def build_can(can: CanAngles) -> np.ndarray:
    l1, l2, l3, l4 = can.locals_
    for loc in can.locals_:
        if not is_unitary(np.asarray(loc, dtype=complex), 1e-9):
            raise ValueError("CAN local factors must be 2x2 unitaries")
    core = ising_core(*can.ising)
    return (
        kron_all(l3, l4) @ core @ kron_all(l1, l2) * np.exp(1j * can.phase)
    )


# ---------------------------------------------------------------------------
# KAK decomposition
# ---------------------------------------------------------------------------


def _group_indices(values: np.ndarray, tol: float) -> list[list[int]]:
    order = np.argsort(values)
    groups: list[list[int]] = [[int(order[0])]]
    for idx in order[1:]:
        if values[idx] - values[groups[-1][0]] <= tol:
            groups[-1].append(int(idx))
        else:
            groups.append([int(idx)])
    return groups


def _joint_orthogonal_diagonalize(p: np.ndarray) -> np.ndarray:
    """Real orthogonal O with O^T p O diagonal, for symmetric unitary p.

    Re(p) and Im(p) are commuting real symmetric matrices; diagonalize Re(p)
    and refine inside its degenerate eigenspaces with Im(p).
    """
    pr, pi = np.real(p), np.imag(p)
    w, q = np.linalg.eigh(pr)
    for grp in _group_indices(w, 1e-8):
        if len(grp) > 1:
            sub = q[:, grp]
            _, r = np.linalg.eigh(sub.T @ pi @ sub)
            q[:, grp] = sub @ r
    return q


def _diag_defect(o: np.ndarray, p: np.ndarray) -> float:
    m = o.T @ p @ o
    return float(np.max(np.abs(m - np.diag(np.diag(m)))))


def _orthogonal_eigenbasis(p: np.ndarray) -> np.ndarray:
    o = _joint_orthogonal_diagonalize(p)
    if _diag_defect(o, p) < 1e-9:
        return o
    # deterministic jitter to break ties in pathological spectra
    rng = np.random.default_rng(1234)
    for _ in range(4):
        jit = rng.standard_normal(p.shape) * 1e-12
        o = _joint_orthogonal_diagonalize(p + (jit + jit.T))
        if _diag_defect(o, p) < 1e-8:
            return o
    raise KakDegeneracyError("could not resolve magic-basis spectrum")


def _factor_local(l: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a product a (x) b of single-qubit unitaries into its factors."""
    m = l.reshape(2, 2, 2, 2).transpose(0, 2, 1, 3).reshape(4, 4)
    u, s, vh = np.linalg.svd(m)
    a = (u[:, 0] * np.sqrt(s[0])).reshape(2, 2)
    b = (vh[0, :] * np.sqrt(s[0])).reshape(2, 2)
    # normalize phases: put a in SU(2), keep the remainder on b
    da = np.sqrt(np.linalg.det(a) + 0j)
    a = a / da
    b = b * da
    # exact residual phase correction from the largest entry
    rec = kron_all(a, b)
    idx = np.unravel_index(np.argmax(np.abs(rec)), rec.shape)
    b = b * (l[idx] / rec[idx])
    return a, b


def _shift_pi(state: dict, axis: int, k: int) -> None:
    """theta_axis -> theta_axis + k*pi, compensated on the right locals.

    K(theta) = K(theta + k pi) (i sigma x sigma)^k, so the sigma factors land
    on the right locals and the scalar i^k on the global phase.
    """
    sig = (SX, SY, SZ)[axis]
    state["ising"][axis] += k * np.pi
    if k % 2:
        state["b1"] = sig @ state["b1"]
        state["b2"] = sig @ state["b2"]
    state["phase"] += k * np.pi / 2.0


def _negate_pair(state: dict, ax1: int, ax2: int) -> None:
    third = 3 - ax1 - ax2
    sig = (SX, SY, SZ)[third]
    state["ising"][ax1] *= -1.0
    state["ising"][ax2] *= -1.0
    state["a1"] = state["a1"] @ sig
    state["b1"] = sig @ state["b1"]


def _swap_pair(state: dict, ax1: int, ax2: int) -> None:
    s = (SX, SY, SZ)
    c = (s[ax1] + s[ax2]) / np.sqrt(2.0)
    state["ising"][[ax1, ax2]] = state["ising"][[ax2, ax1]]
    state["a1"] = state["a1"] @ c
    state["a2"] = state["a2"] @ c
    state["b1"] = c @ state["b1"]
    state["b2"] = c @ state["b2"]


def _canonicalize(state: dict) -> None:
    ising = state["ising"]
    # bring every angle into (-pi/2, pi/2]
    for ax in range(3):
        while ising[ax] > np.pi / 2.0 + 1e-14:
            _shift_pi(state, ax, -1)
        while ising[ax] <= -np.pi / 2.0 + 1e-14:
            _shift_pi(state, ax, +1)
    # at most one negative entry (negations only come in pairs)
    neg = [ax for ax in range(3) if ising[ax] < 0]
    if len(neg) >= 2:
        _negate_pair(state, neg[0], neg[1])
    # sort by decreasing magnitude, signs travel with the values
    for i in range(3):
        for j in range(2 - i):
            if np.abs(ising[j]) < np.abs(ising[j + 1]) - 1e-15:
                _swap_pair(state, j, j + 1)
    # a lone negative entry is moved to the zz slot
    neg = [ax for ax in range(3) if ising[ax] < 0]
    if neg and neg[0] != 2:
        _negate_pair(state, neg[0], 2)
    # boundary identification: at xx = pi/2 the sign of zz is a gauge choice
    if ising[2] < -1e-15 and ising[0] > np.pi / 2.0 - 1e-12:
        _negate_pair(state, 0, 2)
        _shift_pi(state, 0, +1)
    ising[np.abs(ising) < 1e-15] = 0.0


def kak_decompose(u: np.ndarray) -> CanAngles:
    """Canonical class of a two-qubit gate via the magic basis method.

    Returns angles in the Weyl chamber with locals and phase such that
    ``build_can`` reconstructs ``u`` exactly (not only projectively).
    """
    u = np.asarray(u, dtype=complex)
    if u.shape != (4, 4):
        raise ValueError("kak_decompose expects a 4x4 matrix")
    if not is_unitary(u, 1e-8):
        raise ValueError("kak_decompose expects a unitary matrix")

    delta = np.angle(np.linalg.det(u)) / 4.0
    su = u * np.exp(-1j * delta)

    v = MAGIC.conj().T @ su @ MAGIC
    p = v.T @ v
    o = _orthogonal_eigenbasis(p)
    if np.linalg.det(o) < 0:
        o[:, 0] = -o[:, 0]
    d = np.diag(o.T @ p @ o)
    phis = 0.5 * np.angle(d)
    # q2 = v o conj(Theta) must land in SO(4); fix the det with a pi shift
    if np.real(np.exp(-1j * np.sum(phis))) < 0:
        phis[0] += np.pi
    theta_inv = np.exp(-1j * phis)
    q2 = v @ o @ np.diag(theta_inv)
    if np.max(np.abs(np.imag(q2))) > 1e-7:
        raise KakDegeneracyError("left factor did not come out real orthogonal")
    q2 = np.real(q2)

    left = MAGIC @ q2 @ MAGIC.conj().T
    right = MAGIC @ o.T @ MAGIC.conj().T
    xx, yy, zz, phase_core = _PHASE_SOLVE @ phis

    a1, a2 = _factor_local(left)
    b1, b2 = _factor_local(right)
    state = {
        "ising": np.array([xx, yy, zz], dtype=float),
        "a1": a1,
        "a2": a2,
        "b1": b1,
        "b2": b2,
        "phase": float(phase_core + delta),
    }
    _canonicalize(state)
    return CanAngles(
        ising=state["ising"],
        locals_=(state["b1"], state["b2"], state["a1"], state["a2"]),
        phase=state["phase"],
    )


# ---------------------------------------------------------------------------
# 15-angle forms
# ---------------------------------------------------------------------------

N_U4_ANGLES = 15


def can_gate(angles: np.ndarray) -> np.ndarray:
    """CAN-form gate from 15 angles [xx, yy, zz, euler1, euler2, euler3, euler4]."""
    angles = np.asarray(angles, dtype=float)
    if angles.shape != (N_U4_ANGLES,):
        raise ArityError(f"CAN form takes {N_U4_ANGLES} angles, got {angles.shape}")
    l1 = single_qubit(tuple(angles[3:6]))
    l2 = single_qubit(tuple(angles[6:9]))
    l3 = single_qubit(tuple(angles[9:12]))
    l4 = single_qubit(tuple(angles[12:15]))
    return kron_all(l3, l4) @ ising_core(*angles[:3]) @ kron_all(l1, l2)


def can_angles_to_vector(can: CanAngles) -> np.ndarray:
    """Flatten a CanAngles into the 15-angle CAN vector (phase dropped)."""
    vec = np.empty(N_U4_ANGLES)
    vec[0:3] = can.ising
    for k, loc in enumerate(can.locals_):
        a, b, g, _ = euler_zyz(loc)
        vec[3 + 3 * k : 6 + 3 * k] = (a, b, g)
    return vec


def cnot_core(a: float, b: float, c: float) -> np.ndarray:
    """Three-CNOT core with inner Rz and two Ry rotations."""
    return (
        CNOT_10
        @ kron_all(ID2, rotation_gate(SY, c))
        @ CNOT_01
        @ kron_all(rotation_gate(SZ, a), rotation_gate(SY, b))
        @ CNOT_10
    )


def cnot_gate(angles: np.ndarray) -> np.ndarray:
    """CNOT-form gate from 15 angles [a, b, c, euler1, euler2, euler3, euler4]."""
    angles = np.asarray(angles, dtype=float)
    if angles.shape != (N_U4_ANGLES,):
        raise ArityError(f"CNOT form takes {N_U4_ANGLES} angles, got {angles.shape}")
    l1 = single_qubit(tuple(angles[3:6]))
    l2 = single_qubit(tuple(angles[6:9]))
    l3 = single_qubit(tuple(angles[9:12]))
    l4 = single_qubit(tuple(angles[12:15]))
    return kron_all(l3, l4) @ cnot_core(*angles[:3]) @ kron_all(l1, l2)


def cnot_angles_for(target: np.ndarray) -> np.ndarray:
    """15 CNOT-form angles reproducing ``target`` up to a global phase.

    The three-CNOT core realizes the Weyl point (pi/2 - a, pi/2 - b,
    pi/2 - c), so the inner angles follow from the target's canonical class
    in closed form; the local factors absorb the remaining difference.
    """
    can = kak_decompose(target)
    v = np.pi / 2.0 - can.ising
    core_can = kak_decompose(cnot_core(*v))
    if np.max(np.abs(core_can.ising - can.ising)) > 1e-9:
        raise KakDegeneracyError("CNOT-core Weyl inversion failed")
    # target = (L3xL4) K (L1xL2) e^{i p}; core = (C3xC4) K (C1xC2) e^{i q}
    # so target = (L3 C3^+ x L4 C4^+) core (C1^+ L1 x C2^+ L2) e^{i (p - q)}
    c1, c2, c3, c4 = core_can.locals_
    l1, l2, l3, l4 = can.locals_
    out1 = c1.conj().T @ l1
    out2 = c2.conj().T @ l2
    out3 = l3 @ c3.conj().T
    out4 = l4 @ c4.conj().T
    vec = np.empty(N_U4_ANGLES)
    vec[0:3] = v
    for k, loc in enumerate((out1, out2, out3, out4)):
        a, b, g, _ = euler_zyz(loc)
        vec[3 + 3 * k : 6 + 3 * k] = (a, b, g)
    return vec


@lru_cache(maxsize=1)
def cnot_identity_angles() -> tuple[float, ...]:
    """Angle vector whose CNOT-form circuit equals the identity up to phase."""
    return tuple(cnot_angles_for(np.eye(4, dtype=complex)))


def xx_gate(theta: float) -> np.ndarray:
    return rotation_gate(_XX, theta)
