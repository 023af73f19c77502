"""Causal-cone density-matrix propagation and energy evaluation.

The layer-transition channel conjugates the spatially averaged cone state
with each transition map (fresh |0> site groups attached, exit groups traced
out) and averages with uniform weights.  For the modified binary network the
even/odd bond pair is propagated through the coupled recursion

    rho_e' = 1/2 ( C[rho_e] + O[rho_o] ),   rho_o' = 1/2 ( L[rho_e] + R[rho_e] ),

with an optional flag-qubit dilation kept as a validation path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network as net
from .errors import EmbeddingError, TopologyError
from .models import LocalModel
from .qcore import (apply_unitary_rho, apply_unitary_vec, basis_state, embed_operator,
                    partial_trace, pure_state_density)


# ---------------------------------------------------------------------------
# compiled map schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MapOp:
    op: str                      # 'attach' | 'gate' | 'trace' | 'permute'
    qubits: tuple = ()
    tensor: tuple | None = None  # (role, gate_index) for 'gate'
    perm: tuple | None = None


def compile_map(tmap: net.TransitionMap, state: net.MeraState) -> list[MapOp]:
    """Lower a slot-level schedule to qubit-level ops for a given q.

    Positions are concrete because attaches always append at the register
    end and traces compact the remaining indices; the final permute restores
    the canonical child-block order.
    """
    q = state.q
    info = state.info
    slots: dict[str, list[int]] = {
        f"p{i}": list(range(i * q, (i + 1) * q)) for i in range(info.cone_sites)
    }
    width = info.cone_sites * q
    ops: list[MapOp] = []
    for step in tmap.steps:
        if step[0] == "attach":
            slots[step[1]] = list(range(width, width + q))
            width += q
            ops.append(MapOp("attach", tuple(range(width - q, width))))
        elif step[0] == "tensor":
            role, slot_names = step[1], step[2]
            wires = [qq for name in slot_names for qq in slots[name]]
            circ = state.layers[0][role]  # layout only; matrices resolved later
            for gi, g in enumerate(circ.gates):
                qubits = tuple(wires[w] for w in g.wires)
                ops.append(MapOp("gate", qubits, tensor=(role, gi)))
        elif step[0] == "trace":
            gone = slots.pop(step[1])
            ops.append(MapOp("trace", tuple(gone)))
            for name, idxs in slots.items():
                slots[name] = [i - sum(1 for g in gone if g < i) for i in idxs]
            width -= q
        else:
            raise ValueError(f"unknown step {step[0]}")
    out = [qq for name in tmap.out_slots for qq in slots[name]]
    if width != info.cone_sites * q or sorted(out) != list(range(width)):
        raise TopologyError(f"map {tmap.label} does not preserve the register size")
    if out != list(range(width)):
        ops.append(MapOp("permute", perm=tuple(out)))
    return ops


def _permute_rho(rho: np.ndarray, perm: tuple[int, ...], n: int) -> np.ndarray:
    """Reorder qubits so that new position i holds old qubit perm[i]."""
    axes = list(perm) + [n + p for p in perm]
    return rho.reshape((2,) * (2 * n)).transpose(axes).reshape(2**n, 2**n)


def _project_zero(op: np.ndarray, qubits: tuple[int, ...], n: int) -> np.ndarray:
    """<0...0| op |0...0> on the given qubits (adjoint of attaching fresh |0>)."""
    keep = [i for i in range(n) if i not in qubits]
    tens = op.reshape((2,) * (2 * n))
    for q in sorted(qubits, reverse=True):
        tens = np.take(tens, 0, axis=n + q)
        tens = np.take(tens, 0, axis=q)
        n -= 1
    k = len(keep)
    return tens.reshape(2**k, 2**k)


class MapExecutor:
    """Applies compiled transition maps to density matrices and duals."""

    def __init__(self, state: net.MeraState):
        self.state = state
        self.q = state.q
        self.block_qubits = state.info.cone_sites * state.q
        self._compiled = {lab: compile_map(m, state)
                          for lab, m in net.MAPS[state.kind].items()}

    def ops(self, label: str) -> list[MapOp]:
        return self._compiled[label]

    def _gate_matrix(self, tau: int, tensor: tuple) -> np.ndarray:
        role, gi = tensor
        return self.state.layers[tau - 1][role].gates[gi].matrix

    def apply(self, label: str, tau: int, rho: np.ndarray,
              override: dict | None = None) -> np.ndarray:
        """Forward channel for one map; override replaces selected gate
        matrices keyed by (role, gate_index)."""
        n = self.block_qubits
        for op in self._compiled[label]:
            if op.op == "attach":
                zero = np.zeros((2**self.q, 2**self.q), dtype=complex)
                zero[0, 0] = 1.0
                rho = np.kron(rho, zero)
                n += self.q
            elif op.op == "gate":
                mat = None if override is None else override.get(op.tensor)
                if mat is None:
                    mat = self._gate_matrix(tau, op.tensor)
                rho = apply_unitary_rho(rho, mat, op.qubits, n)
            elif op.op == "trace":
                keep = [i for i in range(n) if i not in op.qubits]
                rho = partial_trace(rho, keep, n)
                n -= self.q
            else:
                rho = _permute_rho(rho, op.perm, n)
        return rho

    def apply_adjoint(self, label: str, tau: int, dual: np.ndarray) -> np.ndarray:
        """Heisenberg-picture adjoint of the forward channel."""
        n = self.block_qubits
        for op in reversed(self._compiled[label]):
            if op.op == "permute":
                inv = np.argsort(op.perm)
                dual = _permute_rho(dual, tuple(inv), n)
            elif op.op == "trace":
                keep = [i for i in range(n + self.q) if i not in op.qubits]
                dual = embed_operator(dual, keep, n + self.q)
                n += self.q
            elif op.op == "gate":
                mat = self._gate_matrix(tau, op.tensor)
                dual = apply_unitary_rho(dual, mat.conj().T, op.qubits, n)
            else:
                dual = _project_zero(dual, op.qubits, n)
                n -= self.q
        return dual

    def global_unitary(self, label: str, tau: int) -> tuple[np.ndarray, list[int], tuple]:
        """Compose the map's gates as one unitary on the enlarged register.

        Returns (U, traced_qubits, final_perm): the channel equals tracing
        the listed qubits out of U (rho x |0..0><0..0|) U^dag and permuting
        the survivors; used to validate the scheduled executor.
        """
        comp = self._compiled[label]
        fresh = sum(1 for op in comp if op.op == "attach")
        n = self.block_qubits + fresh * self.q
        u = np.eye(2**n, dtype=complex)
        # replay the schedule tracking positions in the enlarged register
        live = list(range(self.block_qubits))
        next_fresh = self.block_qubits
        traced: list[int] = []
        perm: tuple | None = None
        for op in comp:
            if op.op == "attach":
                live.extend(range(next_fresh, next_fresh + self.q))
                next_fresh += self.q
            elif op.op == "gate":
                mat = self._gate_matrix(tau, op.tensor)
                qubits = tuple(live[i] for i in op.qubits)
                u = embed_operator(mat, qubits, n) @ u
            elif op.op == "trace":
                gone = [live[i] for i in op.qubits]
                traced.extend(gone)
                live = [x for x in live if x not in gone]
            else:
                perm = op.perm
        if perm is not None:
            live = [live[i] for i in perm]
        return u, traced, tuple(live)


# ---------------------------------------------------------------------------
# interface states and channel iteration
# ---------------------------------------------------------------------------


@dataclass
class InterfaceState:
    """Spatially averaged causal-cone state at one layer interface."""

    tau: int
    components: dict[str, np.ndarray]  # '' for single-class kinds, 'e'/'o' otherwise

    def validate(self, qubits: int) -> "InterfaceState":
        from .qcore import DensityMatrix
        for mat in self.components.values():
            DensityMatrix(qubits, mat).validate()
        return self


def top_block_state(state: net.MeraState) -> np.ndarray:
    """(|T><T|)^(x A): every cone site starts in the top-circuit state."""
    q, a = state.q, state.info.cone_sites
    psi = basis_state(q)
    for g in state.top.gates:
        psi = apply_unitary_vec(psi, g.matrix, g.wires, q)
    single = np.outer(psi, psi.conj())
    rho = single
    for _ in range(a - 1):
        rho = np.kron(rho, single)
    return rho


def initial_interface(state: net.MeraState) -> InterfaceState:
    rho = top_block_state(state)
    if state.kind == net.MOD_BINARY:
        return InterfaceState(state.T, {"e": rho, "o": rho.copy()})
    return InterfaceState(state.T, {"": rho})


def channel_step(ex: MapExecutor, iface: InterfaceState, tau: int,
                 weights: dict[str, float] | None = None) -> InterfaceState:
    """One layer transition tau -> tau - 1 of the averaged-state recursion."""
    state = ex.state
    if iface.tau != tau:
        raise TopologyError(f"interface at tau={iface.tau}, expected {tau}")
    if state.kind == net.MOD_BINARY:
        if set(iface.components) != {"e", "o"}:
            raise TopologyError("mod-binary interface needs 'e' and 'o' components")
        rho_e, rho_o = iface.components["e"], iface.components["o"]
        w = weights or {"L": 0.5, "C": 0.5, "R": 0.5, "O": 0.5}
        new_e = w["C"] * ex.apply("C", tau, rho_e) + w["O"] * ex.apply("O", tau, rho_o)
        new_o = w["L"] * ex.apply("L", tau, rho_e) + w["R"] * ex.apply("R", tau, rho_e)
        return InterfaceState(tau - 1, {"e": new_e, "o": new_o})
    labels = net.MAP_LABELS[state.kind]
    if set(iface.components) != {""}:
        raise TopologyError("single-class interface expected")
    rho = iface.components[""]
    w = weights or {lab: 1.0 / len(labels) for lab in labels}
    if abs(sum(w.values()) - 1.0) > 1e-12:
        raise ValueError("map weights must sum to one")
    out = sum(w[lab] * ex.apply(lab, tau, rho) for lab in labels)
    return InterfaceState(tau - 1, {"": out})


def apply_transition_channel(state: net.MeraState, iface: InterfaceState,
                             tau: int, weights=None) -> InterfaceState:
    return channel_step(MapExecutor(state), iface, tau, weights)


def averaged_density(state: net.MeraState, down_to: int = 0,
                     ex: MapExecutor | None = None) -> InterfaceState:
    """Propagate (|T><T|)^A from the top interface down to ``down_to``."""
    if not 0 <= down_to <= state.T:
        raise ValueError(f"interface index {down_to} outside 0..{state.T}")
    ex = ex or MapExecutor(state)
    iface = initial_interface(state)
    for tau in range(state.T, down_to, -1):
        iface = channel_step(ex, iface, tau)
    return iface


def embedded_term(model: LocalModel, state: net.MeraState) -> np.ndarray:
    """The two-site interaction embedded on the first two cone sites."""
    if model.q != state.q:
        raise EmbeddingError(f"model built for q={model.q}, network has q={state.q}")
    block = state.info.cone_sites * state.q
    return embed_operator(model.term, list(range(2 * state.q)), block)


def energy_density(state: net.MeraState, model: LocalModel,
                   iface: InterfaceState | None = None) -> float:
    """Exact energy per site of the infinite translation-averaged state."""
    h = embedded_term(model, state)
    iface = iface if iface is not None else averaged_density(state, 0)
    if state.kind == net.MOD_BINARY:
        ee = np.real(np.trace(iface.components["e"] @ h))
        eo = np.real(np.trace(iface.components["o"] @ h))
        return float(0.5 * (ee + eo))
    return float(np.real(np.trace(iface.components[""] @ h)))


# ---------------------------------------------------------------------------
# flag-qubit dilation (validation path for the mod-binary recursion)
# ---------------------------------------------------------------------------


def flag_join(iface: InterfaceState, qubits: int) -> np.ndarray:
    """1/2 (|0><0| x rho_e + |1><1| x rho_o) with the flag as qubit 0."""
    zero = np.zeros((2, 2), dtype=complex)
    one = np.zeros((2, 2), dtype=complex)
    zero[0, 0] = 1.0
    one[1, 1] = 1.0
    return 0.5 * (np.kron(zero, iface.components["e"])
                  + np.kron(one, iface.components["o"]))


def flag_split(rho: np.ndarray, qubits: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Extract (rho_e, rho_o, off_diagonal_norm) from a flagged state."""
    d = 2**qubits
    blk = rho.reshape(2, d, 2, d)
    off = max(np.max(np.abs(blk[0, :, 1, :])), np.max(np.abs(blk[1, :, 0, :])))
    rho_e = 2.0 * blk[0, :, 0, :]
    rho_o = 2.0 * blk[1, :, 1, :]
    return rho_e, rho_o, float(off)


def flag_channel_step(ex: MapExecutor, flag_rho: np.ndarray, tau: int) -> np.ndarray:
    """One transition of the flag-dilated channel: the four flagged Kraus
    branches |0><0| x C, |0><1| x O, |1><0| x L, |1><0| x R with weight 1/2."""
    n = ex.block_qubits
    d = 2**n
    blk = flag_rho.reshape(2, d, 2, d)
    branches = {
        ("C", 0, 0): blk[0, :, 0, :],
        ("O", 0, 1): blk[1, :, 1, :],
        ("L", 1, 0): blk[0, :, 0, :],
        ("R", 1, 0): blk[0, :, 0, :],
    }
    out = np.zeros_like(flag_rho).reshape(2, d, 2, d)
    for (lab, fout, _fin), rho in branches.items():
        out[fout, :, fout, :] += 0.5 * ex.apply(lab, tau, rho)
    return out.reshape(2 * d, 2 * d)


# ---------------------------------------------------------------------------
# projective sampling of the local term
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShotEstimate:
    mean: float
    shots: int
    std_error: float


def sample_energy(state: net.MeraState, model: LocalModel, n_shots: int,
                  seed: int) -> ShotEstimate:
    """Simulate projective measurements of the local term on rho^(0).

    The term is diagonalized once; eigenvalue indices are drawn from the
    Born distribution diag(V^dag rho V).  The modified binary network
    alternates even/odd bond parities shot by shot.
    """
    if n_shots < 1:
        raise ValueError("need at least one shot")
    h = embedded_term(model, state)
    evals, vecs = np.linalg.eigh(h)
    iface = averaged_density(state, 0)
    rng = np.random.default_rng(seed)

    def born(rho: np.ndarray) -> np.ndarray:
        p = np.real(np.einsum("ij,ji->i", vecs.conj().T @ rho, vecs))
        p = np.clip(p, 0.0, None)
        return p / p.sum()

    if state.kind == net.MOD_BINARY:
        pe, po = born(iface.components["e"]), born(iface.components["o"])
        n_e = (n_shots + 1) // 2
        shots_e = rng.choice(evals, size=n_e, p=pe)
        shots_o = rng.choice(evals, size=n_shots - n_e, p=po)
        samples = np.empty(n_shots)
        samples[0::2] = shots_e
        samples[1::2] = shots_o
    else:
        samples = rng.choice(evals, size=n_shots, p=born(iface.components[""]))
    mean = float(samples.mean())
    std_err = float(samples.std(ddof=1) / np.sqrt(n_shots)) if n_shots > 1 else 0.0
    return ShotEstimate(mean=mean, shots=n_shots, std_error=std_err)


# ---------------------------------------------------------------------------
# explicit branch enumeration (oracle for the averaged channel)
# ---------------------------------------------------------------------------


def branch_state(state: net.MeraState, labels: list[str],
                 ex: MapExecutor | None = None) -> np.ndarray:
    """Single-cone state U_{i1} ... U_{iT} (|T><T|)^A for a label sequence."""
    ex = ex or MapExecutor(state)
    rho = top_block_state(state)
    for tau in range(state.T, 0, -1):
        rho = ex.apply(labels[tau - 1], tau, rho)
    return rho


def enumerate_branch_average(state: net.MeraState) -> np.ndarray:
    """Uniform average over all b^T explicit branch sequences."""
    if state.kind == net.MOD_BINARY:
        raise TopologyError("use the parity recursion for mod-binary networks")
    labels = net.MAP_LABELS[state.kind]
    ex = MapExecutor(state)
    total = None
    seqs = [[]]
    for _ in range(state.T):
        seqs = [s + [lab] for s in seqs for lab in labels]
    for seq in seqs:
        rho = branch_state(state, list(reversed(seq)), ex)
        total = rho if total is None else total + rho
    return total / len(seqs)


def oracle_site_energy(state: net.MeraState, model: LocalModel, n_sites: int,
                       psi: np.ndarray | None = None) -> float:
    """Site-averaged energy of the full wavefunction on a periodic ring."""
    q = state.q
    n_qubits = n_sites * q
    if psi is None:
        psi = net.full_state_oracle(state, n_sites)
    total = 0.0
    for i in range(n_sites):
        qubits = [i * q + k for k in range(q)] + [((i + 1) % n_sites) * q + k
                                                  for k in range(q)]
        hpsi = apply_unitary_vec(psi, model.term, tuple(qubits), n_qubits)
        total += float(np.real(np.vdot(psi, hpsi)))
    return total / n_sites
