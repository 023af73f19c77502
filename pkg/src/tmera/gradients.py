"""Exact energy gradients for all parametrizations.

The energy is linear in each gate occurrence's conjugation, so for a fixed
occurrence the energy as a function of that occurrence's matrix X is the
bilinear form

    e(X) = Tr[(X x 1) rho_before (X x 1)^dag D_after]
         = sum_{a b c d} X_{a b} conj(X)_{d c} E[a, b, c, d],

with rho_before the register state just before the gate and D_after the
dual (Heisenberg-propagated interaction term) just after it.  A gate that
occurs several times (several maps of a layer, several slots within a map,
several top copies) gets the *sum* of its occurrence tensors: energy
differences of single-occurrence modifications -- which is what both the
angle shift rule and the tangent-space expansion measure -- are linear in E.

Gradient protocols built on top of the environment tensors:

* shift rule (angle forms): dE/dtheta = 1/2 [E(theta + pi/2) - E(theta - pi/2)]
  per occurrence, summed over occurrences.
* tangent expansion (any form): alpha_j = E(u R_j(-pi/2)) - E(u R_j(pi/2))
  over a Hermitian-unitary operator basis, giving the Riemannian gradient
  g = i sum_j alpha_j u sigma_j / n after projection onto the tangent space.
"""

from __future__ import annotations

import numpy as np

from . import network as net
from . import simulator as sim
from .errors import WrongParametrizationError
from .gates import haar_unitary  # noqa: F401  (re-exported for tests)
from .models import LocalModel
from .network import MeraState, gate_matrix, n_angles
from .qcore import apply_unitary_rho, basis_state, pauli_string, rotation_gate

_PAULI_BASIS = {
    1: [pauli_string(a) for a in "IXYZ"],
    2: [pauli_string(a + b) for a in "IXYZ" for b in "IXYZ"],
}


def _shift_kernels(n_qubits: int) -> np.ndarray:
    """Per basis element j, the tensor Delta_j[e,b,c,f] such that

        alpha_j = E(u R_j(-pi/2)) - E(u R_j(pi/2)) = sum K . Delta_j

    with K[e,b,c,f] = sum_{a,d} u_{ae} conj(u)_{df} Env[a,b,c,d]."""
    kernels = []
    for sigma in _PAULI_BASIS[n_qubits]:
        rm = rotation_gate(sigma, -np.pi / 2.0)
        rp = rotation_gate(sigma, +np.pi / 2.0)
        km = np.einsum("eb,fc->ebcf", rm, rm.conj())
        kp = np.einsum("eb,fc->ebcf", rp, rp.conj())
        kernels.append((km - kp).reshape(-1))
    return np.array(kernels)


_SHIFT_KERNELS = {1: _shift_kernels(1), 2: _shift_kernels(2)}


def _env_tensor(rho: np.ndarray, dual: np.ndarray, qubits, n: int) -> np.ndarray:
    """Occurrence tensor E[a,b,c,d] for a gate on the given qubits."""
    k = len(qubits)
    rest = [i for i in range(n) if i not in qubits]
    perm = list(qubits) + rest
    full = perm + [n + p for p in perm]
    dg, dr = 2**k, 2 ** (n - k)
    rho4 = rho.reshape((2,) * (2 * n)).transpose(full).reshape(dg, dr, dg, dr)
    dual4 = dual.reshape((2,) * (2 * n)).transpose(full).reshape(dg, dr, dg, dr)
    return np.einsum("bick,dkai->abcd", rho4, dual4)


def env_energy(env: np.ndarray, x: np.ndarray) -> float:
    """Energy with the owning occurrence set replaced by the matrix x."""
    return float(np.real(np.einsum("ab,dc,abcd->", x, x.conj(), env)))


def env_embedding_gradient(env: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Euclidean gradient d with dE(u + eps w) = (d, w) = Re Tr(d^dag w)."""
    return 2.0 * np.einsum("ab,abcd->dc", u, env)


class EnergyEngine:
    """Forward/dual channel caches and per-gate environment tensors."""

    def __init__(self, state: MeraState, model: LocalModel):
        self.state = state
        self.model = model
        self.ex = sim.MapExecutor(state)
        self.h = sim.embedded_term(model, state)
        self._forward: list[sim.InterfaceState] | None = None
        self._dual: list[dict[str, np.ndarray]] | None = None
        self._envs: dict[int, np.ndarray] | None = None

    # -- channel caches ----------------------------------------------------

    def forward_states(self) -> list[sim.InterfaceState]:
        """Interface states indexed by tau (0..T)."""
        if self._forward is None:
            states = [None] * (self.state.T + 1)
            iface = sim.initial_interface(self.state)
            states[self.state.T] = iface
            for tau in range(self.state.T, 0, -1):
                iface = sim.channel_step(self.ex, iface, tau)
                states[tau - 1] = iface
            self._forward = states
        return self._forward

    def dual_states(self) -> list[dict[str, np.ndarray]]:
        """Heisenberg duals D^(tau) with energy = sum_c Tr(D_c rho_c)."""
        if self._dual is None:
            duals = [None] * (self.state.T + 1)
            if self.state.kind == net.MOD_BINARY:
                duals[0] = {"e": 0.5 * self.h, "o": 0.5 * self.h}
                for tau in range(1, self.state.T + 1):
                    prev = duals[tau - 1]
                    de = 0.5 * (self.ex.apply_adjoint("C", tau, prev["e"])
                                + self.ex.apply_adjoint("L", tau, prev["o"])
                                + self.ex.apply_adjoint("R", tau, prev["o"]))
                    do = 0.5 * self.ex.apply_adjoint("O", tau, prev["e"])
                    duals[tau] = {"e": de, "o": do}
            else:
                labels = net.MAP_LABELS[self.state.kind]
                w = 1.0 / len(labels)
                duals[0] = {"": self.h}
                for tau in range(1, self.state.T + 1):
                    prev = duals[tau - 1][""]
                    duals[tau] = {"": sum(w * self.ex.apply_adjoint(lab, tau, prev)
                                          for lab in labels)}
            self._dual = duals
        return self._dual

    def energy(self) -> float:
        iface = self.forward_states()[0]
        duals = self.dual_states()[0]
        return float(sum(np.real(np.trace(duals[c] @ iface.components[c]))
                         for c in duals))

    # -- environment collection --------------------------------------------

    def _map_occurrences(self):
        """(tau, label, input component, dual component, weight) tuples."""
        occ = []
        for tau in range(1, self.state.T + 1):
            if self.state.kind == net.MOD_BINARY:
                occ += [(tau, "C", "e", "e", 0.5), (tau, "O", "o", "e", 0.5),
                        (tau, "L", "e", "o", 0.5), (tau, "R", "e", "o", 0.5)]
            else:
                labels = net.MAP_LABELS[self.state.kind]
                w = 1.0 / len(labels)
                occ += [(tau, lab, "", "", w) for lab in labels]
        return occ

    def _collect_map_envs(self, tau: int, label: str, rho: np.ndarray,
                          dual: np.ndarray, acc: dict[int, np.ndarray]) -> None:
        ops = self.ex.ops(label)
        layer = self.state.layers[tau - 1]
        # forward partials: register state just before each gate op
        before = []
        cur, n = rho, self.ex.block_qubits
        for op in ops:
            if op.op == "gate":
                before.append((cur, n))
            cur, n = self._step_forward(op, cur, n, layer)
        # dual partials: dual just after each gate op
        after = [None] * len(before)
        curd, nd = dual, self.ex.block_qubits
        gi = len(before)
        for op in reversed(ops):
            if op.op == "gate":
                gi -= 1
                after[gi] = (curd, nd)
            curd, nd = self._step_adjoint(op, curd, nd, layer)
        gi = 0
        for op in ops:
            if op.op != "gate":
                continue
            (rho_b, n_b), (dual_a, n_a) = before[gi], after[gi]
            assert n_b == n_a
            role, idx = op.tensor
            gate = layer[role].gates[idx]
            env = _env_tensor(rho_b, dual_a, op.qubits, n_b)
            if gate.gate_id in acc:
                acc[gate.gate_id] = acc[gate.gate_id] + env
            else:
                acc[gate.gate_id] = env
            gi += 1

    def _step_forward(self, op, rho, n, layer):
        q = self.state.q
        if op.op == "attach":
            zero = np.zeros((2**q, 2**q), dtype=complex)
            zero[0, 0] = 1.0
            return np.kron(rho, zero), n + q
        if op.op == "gate":
            role, idx = op.tensor
            mat = layer[role].gates[idx].matrix
            return apply_unitary_rho(rho, mat, op.qubits, n), n
        if op.op == "trace":
            keep = [i for i in range(n) if i not in op.qubits]
            from .qcore import partial_trace
            return partial_trace(rho, keep, n), n - q
        return sim._permute_rho(rho, op.perm, n), n

    def _step_adjoint(self, op, dual, n, layer):
        q = self.state.q
        if op.op == "permute":
            return sim._permute_rho(dual, tuple(np.argsort(op.perm)), n), n
        if op.op == "trace":
            from .qcore import embed_operator
            keep = [i for i in range(n + q) if i not in op.qubits]
            return embed_operator(dual, keep, n + q), n + q
        if op.op == "gate":
            role, idx = op.tensor
            mat = layer[role].gates[idx].matrix
            return apply_unitary_rho(dual, mat.conj().T, op.qubits, n), n
        return sim._project_zero(dual, op.qubits, n), n - q

    def _collect_top_envs(self, acc: dict[int, np.ndarray]) -> None:
        q, a = self.state.q, self.state.info.cone_sites
        block = a * q
        duals = self.dual_states()[self.state.T]
        dual = sum(duals.values())
        zero = np.outer(basis_state(block), basis_state(block).conj())
        ops = []
        for copy in range(a):
            for idx, g in enumerate(self.state.top.gates):
                qubits = tuple(copy * q + w for w in g.wires)
                ops.append((idx, qubits, g))
        before = []
        cur = zero
        for idx, qubits, g in ops:
            before.append(cur)
            cur = apply_unitary_rho(cur, g.matrix, qubits, block)
        after = [None] * len(ops)
        curd = dual
        for k in range(len(ops) - 1, -1, -1):
            after[k] = curd
            _, qubits, g = ops[k]
            curd = apply_unitary_rho(curd, g.matrix.conj().T, qubits, block)
        for k, (idx, qubits, g) in enumerate(ops):
            env = _env_tensor(before[k], after[k], qubits, block)
            if g.gate_id in acc:
                acc[g.gate_id] = acc[g.gate_id] + env
            else:
                acc[g.gate_id] = env

    def environments(self) -> dict[int, np.ndarray]:
        """Summed occurrence tensors keyed by gate id."""
        if self._envs is None:
            forward = self.forward_states()
            duals = self.dual_states()
            acc: dict[int, np.ndarray] = {}
            for tau, label, comp_in, comp_dual, weight in self._map_occurrences():
                rho = forward[tau].components[comp_in]
                dual = weight * duals[tau - 1][comp_dual]
                self._collect_map_envs(tau, label, rho, dual, acc)
            self._collect_top_envs(acc)
            self._envs = acc
        return self._envs


# ---------------------------------------------------------------------------
# public gradient operations
# ---------------------------------------------------------------------------


def _shifted_gate(gate: net.GateSpec, form: str, slot: int, delta: float) -> np.ndarray:
    ang = gate.angles.copy()
    ang[slot] += delta
    return gate_matrix(gate.kind, form, ang)


def shift_gradient(state: MeraState, model: LocalModel, param_index: int,
                   engine: EnergyEngine | None = None) -> float:
    """Angle derivative by the +-pi/2 shift rule, one term per occurrence."""
    if state.form == "free":
        raise WrongParametrizationError("shift rule needs an angle form")
    engine = engine or EnergyEngine(state, model)
    gate_id, slot = state.registry()[param_index]
    gate = state.gate_by_id()[gate_id]
    env = engine.environments()[gate_id]
    e_plus = env_energy(env, _shifted_gate(gate, state.form, slot, +np.pi / 2.0))
    e_minus = env_energy(env, _shifted_gate(gate, state.form, slot, -np.pi / 2.0))
    return 0.5 * (e_plus - e_minus)


def tangent_project(u: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Project an embedding-space gradient onto the tangent space at u."""
    return 0.5 * (d - u @ d.conj().T @ u)


def riemannian_gradient(state: MeraState, model: LocalModel, gate_id: int,
                        engine: EnergyEngine | None = None) -> np.ndarray:
    """Tangent-space gradient block from shifted-gate energy differences.

    Expands g = i sum_j alpha_j u sigma_j / n over the Hermitian-unitary
    Pauli-string basis, with each alpha_j the difference of energies where
    the gate is multiplied by R_{sigma_j}(-pi/2) vs R_{sigma_j}(+pi/2),
    one term per occurrence of the gate.
    """
    engine = engine or EnergyEngine(state, model)
    gate = state.gate_by_id()[gate_id]
    env = engine.environments()[gate_id]
    u = gate.matrix
    n_qubits = len(gate.wires)
    dim = 2**n_qubits
    # alpha_j for all basis elements at once: the shifted-gate energies are
    # bilinear in the rotation, so they contract against fixed kernels
    k_tensor = np.einsum("ae,df,abcd->ebcf", u, u.conj(), env).reshape(-1)
    alphas = np.real(_SHIFT_KERNELS[n_qubits] @ k_tensor)
    g = np.zeros((dim, dim), dtype=complex)
    for alpha, sigma in zip(alphas, _PAULI_BASIS[n_qubits]):
        g += 1j * alpha * (u @ sigma) / dim
    return g


def embedding_gradient(state: MeraState, model: LocalModel,
                       engine: EnergyEngine | None = None) -> dict[int, np.ndarray]:
    """Exact Euclidean gradients d per gate in the flat embedding space."""
    engine = engine or EnergyEngine(state, model)
    envs = engine.environments()
    by_id = state.gate_by_id()
    return {gid: env_embedding_gradient(env, by_id[gid].matrix)
            for gid, env in envs.items()}


def full_gradient(state: MeraState, model: LocalModel,
                  engine: EnergyEngine | None = None):
    """All gradient components in deterministic registry order.

    Angle forms return a flat vector over the parameter registry; the free
    form returns {gate_id: tangent block} over the variational gates.
    """
    engine = engine or EnergyEngine(state, model)
    if state.form == "free":
        return {g.gate_id: riemannian_gradient(state, model, g.gate_id, engine)
                for g in state.variational_gates()}
    reg = state.registry()
    return np.array([shift_gradient(state, model, j, engine) for j in range(len(reg))])


def tangent_inner(a: dict[int, np.ndarray], b: dict[int, np.ndarray]) -> float:
    """Euclidean metric Re Tr(a^dag b) summed over gate blocks."""
    return float(sum(np.real(np.trace(a[k].conj().T @ b[k])) for k in a))


def tangent_norm(a: dict[int, np.ndarray]) -> float:
    return float(np.sqrt(max(tangent_inner(a, a), 0.0)))


def skew_defect(u: np.ndarray, w: np.ndarray) -> float:
    """Max norm of u^dag w + w^dag u; zero on the tangent space at u."""
    m = u.conj().T @ w
    return float(np.max(np.abs(m + m.conj().T)))
