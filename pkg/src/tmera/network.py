"""MERA network topologies, Trotter circuit layout and causal-cone maps.

Geometry conventions (preparation direction, coarse interface tau down to
the physical interface 0; all site indices periodic):

* binary      -- isometry c -> fine sites (2c, 2c+1) with the coarse wire at
  the first output; disentanglers on every boundary bond (2a+1, 2a+2).
  Causal cones hold A=3 consecutive sites; the two transition maps produce
  the child blocks starting at 2a+1 (label L) and 2a+2 (label R).
* mod-binary  -- isometry c -> fine sites (2c+1, 2c+2); two isometry tensors
  per layer (w on even c, v on odd c) and disentanglers only on the bonds
  (4k+2, 4k+3) between a w and the following v.  Bonds at even positions
  ("even bonds") carry three transition maps L, C, R; bonds at odd positions
  carry the single isometry-only map O.  A=2.
* ternary     -- isometry c -> fine sites (3c, 3c+1, 3c+2) with the coarse
  wire first; disentanglers on every boundary bond (3c+2, 3c+3).  A=2 and
  three maps L, C, R producing child bonds 3k+1, 3k+2, 3k+3.

Every tensor is a circuit of parametrized gates.  The 2D kinds appear only
in the resource estimator and cannot be instantiated for simulation.
"""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass, field

import numpy as np

from . import gates as gatelib
from .errors import ArityError, ResourceError, TopologyError, UnsupportedNetworkError
from .qcore import ID2, apply_unitary_vec, basis_state, kron_all

FORMAT_VERSION = 1

BINARY = "binary"
MOD_BINARY = "mod-binary"
TERNARY = "ternary"
SQUARE_2X2 = "square-2x2"
SQUARE_3X3 = "square-3x3"


@dataclass(frozen=True)
class KindInfo:
    """Static network attributes (branching, cone width, qubit counts)."""

    name: str
    b: int
    cone_sites: int           # causal-cone cross section A in sites
    register_sites: int       # max site groups simultaneously in the register
    aux_qubits: int           # auxiliary qubits per layer for the dilation
    classical_exponent: int   # fMERA contraction cost O(2^{r q} T)
    fquantum_exponent: int    # full-tensor quantum cost O(2^{r q} T^2)
    simulable: bool
    min_top_sites: int = 0
    top_multiple: int = 1


KINDS: dict[str, KindInfo] = {
    BINARY: KindInfo(BINARY, 2, 3, 4, 1, 9, 8, True, min_top_sites=3),
    MOD_BINARY: KindInfo(MOD_BINARY, 2, 2, 3, 2, 7, 8, True, min_top_sites=2,
                         top_multiple=2),
    TERNARY: KindInfo(TERNARY, 3, 2, 4, 2, 8, 8, True, min_top_sites=2),
    SQUARE_2X2: KindInfo(SQUARE_2X2, 4, 9, 14, 2, 28, 16, False),
    SQUARE_3X3: KindInfo(SQUARE_3X3, 9, 4, 15, 4, 16, 20, False),
}

FORMS = ("free", "can", "cnot", "xx")

# tensor roles per simulable kind, in registry order
LAYER_ROLES = {
    BINARY: ("u", "w"),
    MOD_BINARY: ("u", "w", "v"),
    TERNARY: ("u", "w"),
}

# site groups spanned by each tensor role
ROLE_GROUPS = {
    BINARY: {"u": 2, "w": 2},
    MOD_BINARY: {"u": 2, "w": 2, "v": 2},
    TERNARY: {"u": 2, "w": 3},
}

DISENTANGLER_ROLES = ("u",)


@dataclass
class GateSpec:
    """One parametrized gate inside a tensor circuit.

    kind 'u4' is a generic two-qubit gate (15 angles in angle forms),
    'single' a one-qubit rotation (3 Euler angles) and 'xx' a single-angle
    XX Ising rotation.
    """

    gate_id: int
    kind: str
    wires: tuple[int, ...]
    matrix: np.ndarray
    angles: np.ndarray | None = None


@dataclass
class TensorCircuit:
    role: str
    n_groups: int
    q: int
    gates: list[GateSpec] = field(default_factory=list)

    @property
    def wires(self) -> int:
        return self.n_groups * self.q


def _brick_bonds(wires: int) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    seta = [(i, i + 1) for i in range(0, wires - 1, 2)]
    setb = [(i, i + 1) for i in range(1, wires - 1, 2)]
    return seta, setb


def brick_wire_pairs(wires: int, t: int) -> list[tuple[int, int]]:
    """Gate wire pairs of a t-step brick circuit (odd bonds, then even)."""
    seta, setb = _brick_bonds(wires)
    pairs: list[tuple[int, int]] = []
    for _ in range(t):
        pairs.extend(seta)
        pairs.extend(setb)
    return pairs


def xx_layout(wires: int, t: int) -> list[tuple[str, tuple[int, ...]]]:
    """XX-block layout: single-qubit layers alternating with XX bond layers."""
    seta, setb = _brick_bonds(wires)
    ops: list[tuple[str, tuple[int, ...]]] = []

    def singles():
        ops.extend(("single", (w,)) for w in range(wires))

    for _ in range(t):
        singles()
        ops.extend(("xx", pair) for pair in seta)
        if setb:
            singles()
            ops.extend(("xx", pair) for pair in setb)
    singles()
    return ops


def identity_gate(kind: str, form: str) -> tuple[np.ndarray, np.ndarray | None]:
    if kind == "single":
        mat, ang = ID2.copy(), np.zeros(3)
    elif kind == "xx":
        mat, ang = np.eye(4, dtype=complex), np.zeros(1)
    elif form == "cnot":
        ang = np.array(gatelib.cnot_identity_angles())
        mat = gatelib.cnot_gate(ang)
    else:
        mat, ang = np.eye(4, dtype=complex), np.zeros(gatelib.N_U4_ANGLES)
    if form == "free":
        ang = None
    return mat, ang


def gate_matrix(kind: str, form: str, angles: np.ndarray) -> np.ndarray:
    if kind == "single":
        return gatelib.single_qubit(tuple(angles))
    if kind == "xx":
        return gatelib.xx_gate(float(angles[0]))
    if form == "can" or form == "xx":
        return gatelib.can_gate(angles)
    if form == "cnot":
        return gatelib.cnot_gate(angles)
    raise ArityError(f"form '{form}' does not define angle gates")


def n_angles(kind: str) -> int:
    return {"single": 3, "xx": 1, "u4": gatelib.N_U4_ANGLES}[kind]


@dataclass
class MeraState:
    """A Trotterized MERA: per-layer tensor circuits plus a top circuit.

    ``layers[i]`` holds the tensors of layer ``i + 1`` (layer 1 acts on the
    physical sites).  ``frozen_roles`` excludes tensor roles from the
    parameter registry (used by the TTN warm start).
    """

    kind: str
    T: int
    q: int
    t: int
    form: str
    layers: list[dict[str, TensorCircuit]]
    top: TensorCircuit
    frozen_roles: frozenset = frozenset()

    @property
    def info(self) -> KindInfo:
        return KINDS[self.kind]

    def tensors(self):
        """(location, circuit) pairs in deterministic registry order."""
        for i, layer in enumerate(self.layers):
            for role in LAYER_ROLES[self.kind]:
                yield (f"layer{i + 1}:{role}", layer[role])
        yield ("top", self.top)

    def gate_list(self) -> list[GateSpec]:
        out = []
        for _, circ in self.tensors():
            out.extend(circ.gates)
        return out

    def gate_by_id(self) -> dict[int, GateSpec]:
        return {g.gate_id: g for g in self.gate_list()}

    def variational_gates(self) -> list[GateSpec]:
        out = []
        for loc, circ in self.tensors():
            if circ.role in self.frozen_roles:
                continue
            out.extend(circ.gates)
        return out

    def registry(self) -> list[tuple[int, int]]:
        """Flat parameter index -> (gate_id, angle slot); angle forms only."""
        if self.form == "free":
            raise ArityError("the free form has no angle registry")
        entries = []
        for g in self.variational_gates():
            for slot in range(n_angles(g.kind)):
                entries.append((g.gate_id, slot))
        return entries

    def angle_vector(self) -> np.ndarray:
        return np.concatenate([g.angles for g in self.variational_gates()]) \
            if self.variational_gates() else np.zeros(0)

    def copy(self) -> "MeraState":
        layers = [
            {role: TensorCircuit(c.role, c.n_groups, c.q,
                                 [GateSpec(g.gate_id, g.kind, g.wires,
                                           g.matrix.copy(),
                                           None if g.angles is None else g.angles.copy())
                                  for g in c.gates])
             for role, c in layer.items()}
            for layer in self.layers
        ]
        top = TensorCircuit(self.top.role, self.top.n_groups, self.top.q,
                            [GateSpec(g.gate_id, g.kind, g.wires, g.matrix.copy(),
                                      None if g.angles is None else g.angles.copy())
                             for g in self.top.gates])
        return MeraState(self.kind, self.T, self.q, self.t, self.form,
                         layers, top, self.frozen_roles)

    def with_angle_vector(self, vec: np.ndarray) -> "MeraState":
        new = self.copy()
        pos = 0
        for g in new.variational_gates():
            n = n_angles(g.kind)
            g.angles = np.asarray(vec[pos:pos + n], dtype=float).copy()
            g.matrix = gate_matrix(g.kind, new.form, g.angles)
            pos += n
        if pos != len(vec):
            raise ArityError(f"angle vector length {len(vec)} != registry size {pos}")
        return new

    def with_gate_matrices(self, mats: dict[int, np.ndarray]) -> "MeraState":
        if self.form != "free":
            raise ArityError("raw matrix updates are only defined for the free form")
        new = self.copy()
        for g in new.gate_list():
            if g.gate_id in mats:
                g.matrix = np.asarray(mats[g.gate_id], dtype=complex)
        return new

    def freeze_roles(self, roles) -> "MeraState":
        new = self.copy()
        new.frozen_roles = frozenset(roles)
        return new


def _build_circuit(role: str, n_groups: int, q: int, t: int, form: str,
                   next_id: list[int]) -> TensorCircuit:
    circ = TensorCircuit(role, n_groups, q)
    wires = n_groups * q
    if role == "top":
        if q == 1:
            layout = [("single", (0,))]
        elif q == 2 and form != "xx":
            layout = [("u4", (0, 1))]
        elif form == "xx":
            layout = xx_layout(wires, t)
        else:
            layout = [("u4", pair) for pair in brick_wire_pairs(wires, t)]
    elif form == "xx":
        layout = xx_layout(wires, t)
    else:
        layout = [("u4", pair) for pair in brick_wire_pairs(wires, t)]
    for kind, ws in layout:
        mat, ang = identity_gate(kind, form)
        circ.gates.append(GateSpec(next_id[0], kind, tuple(ws), mat, ang))
        next_id[0] += 1
    return circ


def _last_gate_on_wire(circ: TensorCircuit, wire: int) -> GateSpec:
    for g in reversed(circ.gates):
        if wire in g.wires:
            return g
    raise ValueError(f"no gate covers wire {wire}")


# site groups of layer-1 tensors whose designated qubits absorb the
# product-state factor; each physical wire receives it exactly once, on the
# last tensor touching it (binary/ternary: the disentanglers cover all/two
# of every three wires; mod-binary disentangled wires are re-covered by an
# identity disentangler, so both isometry outputs take the factor)
_PRODUCT_PLAN = {
    BINARY: {"u": (0, 1)},
    MOD_BINARY: {"w": (0, 1), "v": (0, 1)},
    TERNARY: {"w": (1,), "u": (0, 1)},
}


def _absorb_factor(circ: TensorCircuit, wire: int, factor: np.ndarray, form: str) -> None:
    """Left-multiply ``factor`` (2x2) on one output wire of the circuit."""
    g = _last_gate_on_wire(circ, wire)
    if len(g.wires) == 1:
        new = factor @ g.matrix
    else:
        pos = g.wires.index(wire)
        lift = kron_all(factor, ID2) if pos == 0 else kron_all(ID2, factor)
        new = lift @ g.matrix
    g.matrix = new
    if g.angles is not None:
        if g.kind == "single":
            a, b, c, _ = gatelib.euler_zyz(new)
            g.angles = np.array([a, b, c])
        elif form == "cnot":
            g.angles = gatelib.cnot_angles_for(new)
        else:
            g.angles = gatelib.can_angles_to_vector(gatelib.kak_decompose(new))
        g.matrix = gate_matrix(g.kind, form, g.angles)


def product_state_factor(spec) -> np.ndarray:
    """Single-qubit preparation |phi> = factor |0> from a product-state spec.

    Accepts a (alpha, beta, gamma) Euler triple for Rz Ry Rz, or the named
    presets "tilted" (Rz(pi/4) Ry(pi/4)) and "tilted-zyz"
    (Rz(pi/4) Ry(pi/4) Rz(pi/4)).
    """
    if isinstance(spec, str):
        if spec == "tilted":
            return gatelib.single_qubit((np.pi / 4.0, np.pi / 4.0, 0.0))
        if spec == "tilted-zyz":
            return gatelib.single_qubit((np.pi / 4.0, np.pi / 4.0, np.pi / 4.0))
        raise ValueError(f"unknown product-state preset '{spec}'")
    return gatelib.single_qubit(tuple(float(x) for x in spec))


def build_network(kind: str, T: int, q: int, t: int, form: str = "free",
                  init: str = "identity", seed: int | None = None,
                  product_spec=None) -> MeraState:
    """Construct a fully populated TMERA state.

    init is one of 'identity', 'random' (requires seed), 'product'
    (requires product_spec).  2D kinds are estimator-only and rejected.
    """
    info = KINDS.get(kind)
    if info is None:
        raise UnsupportedNetworkError(f"unknown network kind '{kind}'")
    if not info.simulable:
        raise UnsupportedNetworkError(f"kind '{kind}' is resource-estimation only")
    if T < 1 or q < 1 or t < 1:
        raise ValueError("need T >= 1, q >= 1, t >= 1")
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")

    next_id = [0]
    layers = []
    for _ in range(T):
        layer = {}
        for role in LAYER_ROLES[kind]:
            layer[role] = _build_circuit(role, ROLE_GROUPS[kind][role], q, t, form, next_id)
        layers.append(layer)
    top = _build_circuit("top", 1, q, t, form, next_id)
    state = MeraState(kind, T, q, t, form, layers, top)

    if init == "identity":
        return state
    if init == "random":
        if seed is None:
            raise ValueError("random init requires a seed")
        rng = np.random.default_rng(seed)
        for g in state.gate_list():
            if state.form == "free":
                dim = 2 ** len(g.wires)
                g.matrix = gatelib.haar_unitary(dim, rng)
            else:
                g.angles = rng.uniform(-np.pi, np.pi, n_angles(g.kind))
                g.matrix = gate_matrix(g.kind, state.form, g.angles)
        return state
    if init == "product":
        if product_spec is None:
            raise ValueError("product init requires product_spec")
        factor = product_state_factor(product_spec)
        for role, groups in _PRODUCT_PLAN[kind].items():
            circ = state.layers[0][role]
            for grp in groups:
                _absorb_factor(circ, grp * q, factor, form)
        return state
    raise ValueError(f"unknown init mode '{init}'")


# ---------------------------------------------------------------------------
# transition maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransitionMap:
    """Ordered causal-cone schedule for one layer transition.

    steps is a sequence of ('attach', slot), ('tensor', role, slots) and
    ('trace', slot) entries over named site-group slots; the input block
    occupies slots p0..p{A-1} and out_slots lists the child block order.
    in/out parity distinguish mod-binary bond classes.
    """

    kind: str
    label: str
    steps: tuple
    out_slots: tuple
    in_parity: str | None = None
    out_parity: str | None = None

    @property
    def fresh_slots(self) -> int:
        return sum(1 for s in self.steps if s[0] == "attach")


_BINARY_MAPS = {
    "L": TransitionMap(BINARY, "L", (
        ("attach", "f0"), ("tensor", "w", ("p2", "f0")), ("trace", "f0"),
        ("attach", "f1"), ("tensor", "w", ("p1", "f1")),
        ("tensor", "u", ("f1", "p2")), ("trace", "p2"),
        ("attach", "f2"), ("tensor", "w", ("p0", "f2")), ("trace", "p0"),
        ("tensor", "u", ("f2", "p1")),
    ), ("f2", "p1", "f1")),
    "R": TransitionMap(BINARY, "R", (
        ("attach", "f0"), ("tensor", "w", ("p0", "f0")), ("trace", "p0"),
        ("attach", "f1"), ("tensor", "w", ("p1", "f1")),
        ("tensor", "u", ("f0", "p1")), ("trace", "f0"),
        ("attach", "f2"), ("tensor", "w", ("p2", "f2")), ("trace", "f2"),
        ("tensor", "u", ("f1", "p2")),
    ), ("p1", "f1", "p2")),
}

_TERNARY_MAPS = {
    "L": TransitionMap(TERNARY, "L", (
        ("attach", "f0"), ("attach", "f1"), ("tensor", "w", ("p1", "f0", "f1")),
        ("trace", "f0"), ("trace", "f1"),
        ("attach", "f2"), ("attach", "f3"), ("tensor", "w", ("p0", "f2", "f3")),
        ("trace", "p0"),
        ("tensor", "u", ("f3", "p1")), ("trace", "p1"),
    ), ("f2", "f3")),
    "C": TransitionMap(TERNARY, "C", (
        ("attach", "f0"), ("attach", "f1"), ("tensor", "w", ("p1", "f0", "f1")),
        ("trace", "f0"), ("trace", "f1"),
        ("attach", "f2"), ("attach", "f3"), ("tensor", "w", ("p0", "f2", "f3")),
        ("trace", "p0"), ("trace", "f2"),
        ("tensor", "u", ("f3", "p1")),
    ), ("f3", "p1")),
    "R": TransitionMap(TERNARY, "R", (
        ("attach", "f0"), ("attach", "f1"), ("tensor", "w", ("p0", "f0", "f1")),
        ("trace", "p0"), ("trace", "f0"),
        ("attach", "f2"), ("attach", "f3"), ("tensor", "w", ("p1", "f2", "f3")),
        ("trace", "f3"),
        ("tensor", "u", ("f1", "p1")), ("trace", "f1"),
    ), ("p1", "f2")),
}

_MOD_BINARY_MAPS = {
    "L": TransitionMap(MOD_BINARY, "L", (
        ("attach", "f0"), ("tensor", "v", ("p1", "f0")), ("trace", "f0"),
        ("attach", "f1"), ("tensor", "w", ("p0", "f1")),
        ("tensor", "u", ("f1", "p1")), ("trace", "p1"),
    ), ("p0", "f1"), in_parity="e", out_parity="o"),
    "C": TransitionMap(MOD_BINARY, "C", (
        ("attach", "f0"), ("tensor", "w", ("p0", "f0")), ("trace", "p0"),
        ("attach", "f1"), ("tensor", "v", ("p1", "f1")), ("trace", "f1"),
        ("tensor", "u", ("f0", "p1")),
    ), ("f0", "p1"), in_parity="e", out_parity="e"),
    "R": TransitionMap(MOD_BINARY, "R", (
        ("attach", "f0"), ("tensor", "w", ("p0", "f0")), ("trace", "p0"),
        ("attach", "f1"), ("tensor", "v", ("p1", "f1")),
        ("tensor", "u", ("f0", "p1")), ("trace", "f0"),
    ), ("p1", "f1"), in_parity="e", out_parity="o"),
    "O": TransitionMap(MOD_BINARY, "O", (
        ("attach", "f0"), ("tensor", "v", ("p0", "f0")), ("trace", "p0"),
        ("attach", "f1"), ("tensor", "w", ("p1", "f1")), ("trace", "f1"),
    ), ("f0", "p1"), in_parity="o", out_parity="e"),
}

MAPS = {BINARY: _BINARY_MAPS, TERNARY: _TERNARY_MAPS, MOD_BINARY: _MOD_BINARY_MAPS}

MAP_LABELS = {BINARY: ("L", "R"), TERNARY: ("L", "C", "R"),
              MOD_BINARY: ("L", "C", "R", "O")}


def transition_maps(state: MeraState, tau: int) -> list[TransitionMap]:
    """The layer-tau transition maps (tensors are resolved by the executor)."""
    if not 1 <= tau <= state.T:
        raise ValueError(f"layer index {tau} outside 1..{state.T}")
    return [MAPS[state.kind][lab] for lab in MAP_LABELS[state.kind]]


def branch_sequence(kind: str, site: int, T: int) -> list[str]:
    """Transition labels from the base-b digits of the site index, LSB first."""
    if kind == MOD_BINARY:
        raise TopologyError("mod-binary uses the bond parity machine, not digits")
    if kind not in (BINARY, TERNARY):
        raise UnsupportedNetworkError(f"no branch sequence for kind '{kind}'")
    if site < 0:
        raise ValueError("site index must be non-negative")
    b = KINDS[kind].b
    digit_labels = {BINARY: ("L", "R"), TERNARY: ("L", "C", "R")}[kind]
    labels = []
    x = site
    for _ in range(T):
        labels.append(digit_labels[x % b])
        x //= b
    return labels


def branch_block_position(kind: str, labels: list[str], T: int, n_sites: int,
                          top_anchor: int = 0) -> int:
    """Physical block start whose causal cone uses the given label sequence.

    Unrolls the child-block recursion p -> b p + 1 + digit from the top
    anchor down to the physical level (digit order: labels[tau-1] is
    consumed by layer tau).
    """
    b = KINDS[kind].b
    digit_of = {lab: i for i, lab in enumerate({BINARY: ("L", "R"),
                                                TERNARY: ("L", "C", "R")}[kind])}
    p = top_anchor
    size = n_sites // b**T
    for tau in range(T, 0, -1):
        size *= b
        p = (b * p + 1 + digit_of[labels[tau - 1]]) % size
    return p


def mod_binary_bond_path(bond: int, T: int, n_sites: int) -> list[tuple[str, str]]:
    """(label, parity) per layer, bottom-up, for a physical bond index.

    Fine bond f descends via L/C/R from the even coarse bond when
    f mod 4 in {1, 2, 3} and via O from the odd coarse bond when
    f mod 4 == 0.
    """
    path = []
    f = bond
    size = n_sites
    for _ in range(T):
        r = f % 4
        parity = "e" if f % 2 == 0 else "o"
        if r == 1:
            lab, parent = "L", (f - 1) // 2
        elif r == 2:
            lab, parent = "C", (f - 2) // 2
        elif r == 3:
            lab, parent = "R", (f - 3) // 2
        else:
            lab, parent = "O", (f // 2 - 1) % (size // 2)
        path.append((lab, parity))
        size //= 2
        f = parent % size
    return path


# ---------------------------------------------------------------------------
# brute-force full-state oracle
# ---------------------------------------------------------------------------

ORACLE_QUBIT_CAP = 22


def oracle_ring_size(state: MeraState, unit: int | None = None) -> int:
    info = state.info
    if unit is None:
        unit = info.min_top_sites
    if unit < info.min_top_sites or unit % info.top_multiple:
        raise ResourceError(
            f"top ring of {unit} sites is too small or incommensurate for {state.kind}")
    return unit * info.b**state.T


def _first_output(kind: str, c: int) -> int:
    if kind == BINARY:
        return 2 * c
    if kind == MOD_BINARY:
        return 2 * c + 1
    return 3 * c


def _site_position(kind: str, site: int, tau: int, n_sites: int, b: int) -> int:
    """Physical position where an interface-tau site's wire ends up."""
    p = site
    size = n_sites // b**tau
    for _ in range(tau):
        size *= b
        p = _first_output(kind, p) % size
    return p


def _apply_circuit_vec(psi: np.ndarray, circ: TensorCircuit, group_positions: list[int],
                       q: int, n_qubits: int) -> np.ndarray:
    for g in circ.gates:
        qubits = tuple(group_positions[w // q] * q + (w % q) for w in g.wires)
        psi = apply_unitary_vec(psi, g.matrix, qubits, n_qubits)
    return psi


def full_state_oracle(state: MeraState, n_sites: int) -> np.ndarray:
    """The complete TMERA wavefunction on a periodic ring of n_sites sites.

    n_sites must equal (top ring size) * b**T with the top ring large enough
    that no causal cone wraps; the total qubit count is capped at
    ORACLE_QUBIT_CAP.
    """
    info = state.info
    b, T, q = info.b, state.T, state.q
    if n_sites % b**T:
        raise ResourceError(f"{n_sites} sites not commensurate with b^T = {b**T}")
    top_ring = n_sites // b**T
    if top_ring < info.min_top_sites or top_ring % info.top_multiple:
        raise ResourceError(
            f"top ring of {top_ring} sites would let causal cones wrap for {state.kind}")
    n_qubits = n_sites * q
    if n_qubits > ORACLE_QUBIT_CAP:
        raise ResourceError(f"{n_qubits} qubits exceeds the oracle cap {ORACLE_QUBIT_CAP}")

    psi = basis_state(n_qubits)
    for j in range(top_ring):
        pos = _site_position(state.kind, j, T, n_sites, b)
        psi = _apply_circuit_vec(psi, state.top, [pos], q, n_qubits)

    for tau in range(T, 0, -1):
        coarse = n_sites // b**tau
        fine = coarse * b

        def fine_pos(x: int) -> int:
            return _site_position(state.kind, x % fine, tau - 1, n_sites, b)

        layer = state.layers[tau - 1]
        for c in range(coarse):
            if state.kind == BINARY:
                groups = [fine_pos(2 * c), fine_pos(2 * c + 1)]
                circ = layer["w"]
            elif state.kind == MOD_BINARY:
                groups = [fine_pos(2 * c + 1), fine_pos(2 * c + 2)]
                circ = layer["w"] if c % 2 == 0 else layer["v"]
            else:
                groups = [fine_pos(3 * c), fine_pos(3 * c + 1), fine_pos(3 * c + 2)]
                circ = layer["w"]
            psi = _apply_circuit_vec(psi, circ, groups, q, n_qubits)
        if state.kind == BINARY:
            bonds = [(2 * a + 1, 2 * a + 2) for a in range(coarse)]
        elif state.kind == MOD_BINARY:
            bonds = [(4 * k + 2, 4 * k + 3) for k in range(coarse // 2)]
        else:
            bonds = [(3 * c + 2, 3 * c + 3) for c in range(coarse)]
        for left, right in bonds:
            psi = _apply_circuit_vec(psi, layer["u"], [fine_pos(left), fine_pos(right)],
                                     q, n_qubits)
    return psi


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _gate_payload(g: GateSpec, layer, role: str) -> dict:
    mat = [[float(np.real(x)), float(np.imag(x))] for x in g.matrix.ravel()]
    payload = {"id": g.gate_id, "layer": layer, "role": role,
               "kind": g.kind, "qubit_pair": list(g.wires), "matrix": mat}
    if g.angles is not None:
        payload["angles"] = [float(a) for a in g.angles]
    return payload


def state_to_dict(state: MeraState) -> dict:
    gates = []
    for i, layer in enumerate(state.layers):
        for role in LAYER_ROLES[state.kind]:
            for g in layer[role].gates:
                gates.append(_gate_payload(g, i + 1, role))
    top = {"gates": [_gate_payload(g, "top", "top") for g in state.top.gates]}
    return {
        "format_version": FORMAT_VERSION,
        "kind": state.kind,
        "T": state.T,
        "q": state.q,
        "t": state.t,
        "form": state.form,
        "frozen_roles": sorted(state.frozen_roles),
        "gates": gates,
        "top": top,
    }


def state_from_dict(data: dict) -> MeraState:
    if data.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {data.get('format_version')}")
    state = build_network(data["kind"], data["T"], data["q"], data["t"], data["form"])
    state.frozen_roles = frozenset(data.get("frozen_roles", ()))
    by_id = state.gate_by_id()
    entries = list(data["gates"]) + list(data["top"]["gates"])
    for entry in entries:
        g = by_id[entry["id"]]
        dim = 2 ** len(g.wires)
        flat = np.array([complex(re, im) for re, im in entry["matrix"]])
        g.matrix = flat.reshape(dim, dim)
        if "angles" in entry:
            g.angles = np.array(entry["angles"], dtype=float)
        else:
            g.angles = None
    return state


def save_state(state: MeraState, path) -> None:
    pathlib.Path(path).write_text(json.dumps(state_to_dict(state), sort_keys=True))


def load_state(path) -> MeraState:
    return state_from_dict(json.loads(pathlib.Path(path).read_text()))
