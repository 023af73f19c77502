"""Experiment drivers: single runs, warm starts, scans, histograms, costs.

All drivers consume a fully defaulted configuration dictionary (see
``tmera.cli`` for the schema), write deterministic artifacts tagged with the
configuration hash, and segregate wall-clock times into sidecar files so
that data outputs are byte-comparable between runs.
"""

from __future__ import annotations

import hashlib
import json
import pathlib
from dataclasses import dataclass, field

import numpy as np

from . import gates as gatelib
from . import network as net
from . import simulator as sim
from .errors import KakDegeneracyError, NoReferenceError
from .models import LocalModel, ReferenceEnergy, make_model, reference_energy
from .optimizer import LbfgsConfig, RunRecord, lbfgs_minimize


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _dump_json(path: pathlib.Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1))


def write_record(record: RunRecord, directory: pathlib.Path, stem: str = "record") -> None:
    rows = []
    for row in record.iterations:
        rows.append(json.dumps({k: row[k] for k in
                                ("iter", "energy", "grad_norm", "step", "wolfe_trials")},
                               sort_keys=True))
    (directory / f"{stem}.jsonl").write_text("\n".join(rows) + ("\n" if rows else ""))
    wall = [json.dumps(r, sort_keys=True) for r in record.wall_ms]
    (directory / f"{stem}_wall.jsonl").write_text("\n".join(wall) + ("\n" if wall else ""))


# ---------------------------------------------------------------------------
# construction and single optimization runs
# ---------------------------------------------------------------------------


def model_from_config(cfg: dict) -> LocalModel:
    mc = cfg["model"]
    return make_model(mc["name"], mc["parameter"], cfg["network"]["q"],
                      mc.get("penalty", 10.0))


def state_from_config(cfg: dict) -> net.MeraState:
    nc, ic = cfg["network"], cfg["init"]
    mode = ic["mode"]
    if mode == "from_file":
        state = net.load_state(ic["state_file"])
        if (state.kind, state.T, state.q, state.t, state.form) != \
                (nc["kind"], nc["T"], nc["q"], nc["t"], nc["form"]):
            raise ValueError("state file does not match the configured network")
        return state
    return net.build_network(nc["kind"], nc["T"], nc["q"], nc["t"], nc["form"],
                             init=mode, seed=ic.get("seed"),
                             product_spec=ic.get("product_spec"))


def optimizer_config(cfg: dict) -> LbfgsConfig:
    oc = cfg["optimizer"]
    return LbfgsConfig(memory=oc["memory"], c1=oc["c1"], c2=oc["c2"],
                       grad_tol=oc["grad_tol"], max_iter=oc["max_iter"],
                       ls_max_trials=oc["ls_max_trials"],
                       reproject_every=oc["reproject_every"])


def kick_state(state: net.MeraState, scale: float, seed: int) -> net.MeraState:
    """Seeded symmetry-breaking perturbation of every variational gate.

    The optimal product state is an exact stationary point of the energy on
    the whole gate variety, and identity or product initializations (and
    the tree phase, whose optimum keeps the disentanglers at the identity)
    can park the descent flow on it.  A small deterministic retraction along
    a random tangent direction breaks the invariance; scale 0 disables it.
    """
    if scale <= 0.0:
        return state
    rng = np.random.default_rng(seed)
    if state.form == "free":
        from .qcore import expm_skew, project_to_unitary
        mats = {}
        for g in state.variational_gates():
            d = g.matrix.shape[0]
            h = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
            eta = 0.5 * (h + h.conj().T)
            mats[g.gate_id] = project_to_unitary(
                expm_skew(1j * scale * eta) @ g.matrix)
        return state.with_gate_matrices(mats)
    vec = state.angle_vector()
    return state.with_angle_vector(vec + rng.uniform(-scale, scale, vec.shape))


def ttn_warmstart(cfg: dict, state: net.MeraState | None = None,
                  model: LocalModel | None = None):
    """Tree-tensor-network first phase: disentanglers pinned to the identity.

    Optimizes with all disentangler gates frozen (excluded from the
    parameter registry), then returns the state with them re-included at
    the identity, ready for the full optimization.
    """
    model = model or model_from_config(cfg)
    state = state or state_from_config(cfg)
    frozen = state.freeze_roles(net.DISENTANGLER_ROLES)
    opt_cfg = optimizer_config(cfg)
    warm_cfg = LbfgsConfig(memory=opt_cfg.memory, c1=opt_cfg.c1, c2=opt_cfg.c2,
                           grad_tol=max(opt_cfg.grad_tol, 1e-9),
                           max_iter=cfg["optimizer"].get("warmstart_max_iter",
                                                         opt_cfg.max_iter),
                           ls_max_trials=opt_cfg.ls_max_trials,
                           reproject_every=opt_cfg.reproject_every)
    optimized, record = lbfgs_minimize(frozen, model, warm_cfg,
                                       mode=cfg["optimizer"]["mode"])
    return optimized.freeze_roles(()), record


def optimize_run(cfg: dict, out_dir=None):
    """Build, optionally warm start, optimize, and write artifacts.

    Returns a summary dict; artifacts (state, run record, summary) land in
    ``out_dir`` (or cfg['output']['directory']) when given.
    """
    model = model_from_config(cfg)
    state = state_from_config(cfg)
    scale = cfg["init"].get("kick_scale", 0.0)
    seed = cfg["init"].get("kick_seed", 1)
    if cfg["init"]["mode"] in ("identity", "product"):
        state = kick_state(state, scale, seed)
    records = {}
    if cfg["init"].get("ttn_warmstart", False):
        state, warm_record = ttn_warmstart(cfg, state, model)
        records["warmstart"] = warm_record
        state = kick_state(state, scale, seed + 1)
    opt_cfg = optimizer_config(cfg)
    final, record = lbfgs_minimize(state, model, opt_cfg, mode=cfg["optimizer"]["mode"])
    records["main"] = record

    summary = {
        "config_hash": config_hash(cfg),
        "energy": record.final_energy,
        "grad_norm": record.final_grad_norm,
        "status": record.status,
        "iterations": len(record.iterations),
        "events": record.events,
    }
    try:
        ref = reference_energy(model)
        summary["reference"] = ref.value
        summary["reference_uncertainty"] = ref.uncertainty
        summary["rel_error"] = abs(record.final_energy - ref.value) / abs(ref.value)
    except NoReferenceError:
        pass
    if out_dir is None and cfg.get("output", {}).get("directory"):
        out_dir = cfg["output"]["directory"]
    if out_dir is not None:
        out = pathlib.Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        net.save_state(final, out / "state.json")
        write_record(record, out, "record")
        if "warmstart" in records:
            write_record(records["warmstart"], out, "warmstart_record")
        _dump_json(out / "summary.json", summary)
    return final, records, summary


# ---------------------------------------------------------------------------
# scanning protocol
# ---------------------------------------------------------------------------


@dataclass
class ScanPlan:
    parameter: str = "g"
    values: tuple = ()
    warm_start: bool = True

    @staticmethod
    def default_tfim() -> "ScanPlan":
        down = np.arange(1.25, 0.75 - 1e-9, -0.05)
        up = np.arange(0.80, 1.25 + 1e-9, 0.05)
        return ScanPlan("g", tuple(round(float(v), 10) for v in
                                   np.concatenate([down, up])))


def scan_run(plan: ScanPlan, cfg: dict, out_dir=None):
    """Sequential optimization over a model-parameter grid with warm starts.

    Each point starts from the previous converged state (the first from the
    configured init, including an optional TTN warm start).  Per-point
    failures are recorded and the scan continues.  Returns the result table.
    """
    if not plan.values:
        raise ValueError("scan plan has no parameter values")
    rows = []
    state = None
    out = None
    if out_dir is None and cfg.get("output", {}).get("directory"):
        out_dir = cfg["output"]["directory"]
    if out_dir is not None:
        out = pathlib.Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
    for idx, value in enumerate(plan.values):
        point_cfg = json.loads(json.dumps(cfg))
        point_cfg["model"]["parameter"] = value
        model = model_from_config(point_cfg)
        row = {"index": idx, "parameter": value}
        try:
            if state is None:
                final, records, summary = optimize_run(point_cfg)
                final_record = records["main"]
            else:
                opt_cfg = optimizer_config(point_cfg)
                final, final_record = lbfgs_minimize(state, model, opt_cfg,
                                                     mode=point_cfg["optimizer"]["mode"])
            state = final if plan.warm_start else None
            row.update(energy=final_record.final_energy,
                       grad_norm=final_record.final_grad_norm,
                       status=final_record.status,
                       iterations=len(final_record.iterations))
            try:
                ref = reference_energy(model)
                row["reference"] = ref.value
                row["error"] = final_record.final_energy - ref.value
                row["rel_error"] = abs(row["error"]) / abs(ref.value)
            except NoReferenceError:
                pass
            if out is not None:
                net.save_state(final, out / f"point_{idx:03d}.json")
        except Exception as err:  # per-point failures do not stop the scan
            row.update(status="failed", detail=str(err))
            state = None
        rows.append(row)
    if out is not None:
        _write_table(out / "scan_table.tsv", rows, config_hash(cfg))
    return rows


def _write_table(path: pathlib.Path, rows: list[dict], tag: str) -> None:
    cols: list[str] = []
    for row in rows:
        cols.extend(k for k in row if k not in cols)
    lines = [f"# config_hash={tag}", "\t".join(cols)]
    for row in rows:
        lines.append("\t".join(repr(row[k]) if isinstance(row.get(k), float)
                               else str(row.get(k, "")) for k in cols))
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# angle histograms
# ---------------------------------------------------------------------------

ANGLE_CLASSES = ("xx", "yy", "zz", "local_rz", "local_ry")


@dataclass
class AngleHistogram:
    bin_width: float
    edges: np.ndarray
    counts: dict[str, np.ndarray]
    angles: dict[str, np.ndarray]
    skipped_gates: int = 0

    def total(self, cls: str) -> int:
        return int(self.counts[cls].sum())


def wrap_angle(a):
    """Map angles to the interval (-pi, pi]."""
    return -((-np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi)


def angle_histogram(state: net.MeraState, bin_width: float = np.pi / 50.0) -> AngleHistogram:
    """Canonical-form rotation angles of every gate, binned per class.

    Two-qubit gates pass through the canonical decomposition (whatever the
    stored form), yielding three Ising angles and four local ZYZ triples;
    one-qubit gates contribute their Euler angles.  Gates whose
    decomposition degenerates are skipped and counted.
    """
    values = {cls: [] for cls in ANGLE_CLASSES}
    skipped = 0
    for g in state.gate_list():
        try:
            if len(g.wires) == 1:
                a, b, c, _ = gatelib.euler_zyz(g.matrix)
                values["local_rz"] += [a, c]
                values["local_ry"].append(b)
                continue
            can = gatelib.kak_decompose(g.matrix)
        except KakDegeneracyError:
            skipped += 1
            continue
        values["xx"].append(can.ising[0])
        values["yy"].append(can.ising[1])
        values["zz"].append(can.ising[2])
        for loc in can.locals_:
            a, b, c, _ = gatelib.euler_zyz(loc)
            values["local_rz"] += [a, c]
            values["local_ry"].append(b)
    n_bins = max(1, int(round(2.0 * np.pi / bin_width)))
    edges = np.linspace(-np.pi, np.pi, n_bins + 1)
    counts = {}
    angles = {}
    for cls in ANGLE_CLASSES:
        wrapped = wrap_angle(np.array(values[cls])) if values[cls] else np.zeros(0)
        angles[cls] = wrapped
        counts[cls], _ = np.histogram(wrapped, bins=edges)
    return AngleHistogram(bin_width=2.0 * np.pi / n_bins, edges=edges,
                          counts=counts, angles=angles, skipped_gates=skipped)


def histogram_rows(hist: AngleHistogram) -> list[dict]:
    centers = 0.5 * (hist.edges[:-1] + hist.edges[1:])
    rows = []
    for cls in ANGLE_CLASSES:
        for center, count in zip(centers, hist.counts[cls]):
            if count:
                rows.append({"class": cls, "bin_center": float(center),
                             "count": int(count)})
    return rows


# ---------------------------------------------------------------------------
# resource estimation (all five network kinds)
# ---------------------------------------------------------------------------


@dataclass
class ResourceReport:
    kind: str
    q: int
    t: int
    T: int
    n_sites: int | None
    branching: int
    cone_sites: int
    register_qubits: int
    aux_qubits_per_layer: int
    no_reset_qubits: int
    classical_cost: str
    classical_value: float
    quantum_cost: str
    quantum_value: float
    fquantum_cost: str
    fquantum_value: float
    heterogeneous_classical: str | None = None
    heterogeneous_quantum: str | None = None
    qae_cost: str | None = None
    qae_value: float | None = None
    sampling_cost: str | None = None
    sampling_value: float | None = None
    classical_exponent: int = 0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def estimate_resources(kind: str, q: int, t: int, T: int,
                       n_sites: int | None = None,
                       eps: float | None = None) -> ResourceReport:
    """Qubit counts and cost scalings for any network kind (2D included).

    Register and auxiliary counts follow the complexity table; the no-reset
    total is (b-1) A q T.  Cost expressions are reported symbolically plus
    evaluated at the given parameters.
    """
    info = net.KINDS.get(kind)
    if info is None:
        raise ValueError(f"unknown network kind '{kind}'")
    r = info.classical_exponent
    fq = info.fquantum_exponent
    report = ResourceReport(
        kind=kind, q=q, t=t, T=T, n_sites=n_sites,
        branching=info.b, cone_sites=info.cone_sites,
        register_qubits=info.register_sites * q,
        aux_qubits_per_layer=info.aux_qubits,
        no_reset_qubits=(info.b - 1) * info.cone_sites * q * T,
        classical_cost=f"O(2^({r} q) T)",
        classical_value=float(2.0 ** (r * q) * T),
        quantum_cost="O(q (t T)^2)",
        quantum_value=float(q * (t * T) ** 2),
        fquantum_cost=f"O(2^({fq} q) T^2)",
        fquantum_value=float(2.0 ** (fq * q) * T**2),
        classical_exponent=r,
    )
    if n_sites is not None:
        report.heterogeneous_classical = f"O(2^({r} q) N) = {2.0 ** (r * q) * n_sites:g}"
        report.heterogeneous_quantum = (
            f"O(q (t T)^2 N) = {q * (t * T) ** 2 * n_sites:g}")
    if eps is not None:
        report.qae_cost = "O(T^2 t^2 q / eps)"
        report.qae_value = float(T**2 * t**2 * q / eps)
        report.sampling_cost = "O(T^2 t^2 q / eps^2)"
        report.sampling_value = float(T**2 * t**2 * q / eps**2)
    return report


def resource_table(q: int = 1, t: int = 1, T: int = 1) -> list[ResourceReport]:
    return [estimate_resources(kind, q, t, T) for kind in net.KINDS]


# ---------------------------------------------------------------------------
# cost proxy and accuracy sweep
# ---------------------------------------------------------------------------


def _two_qubit_gate_count(circ: net.TensorCircuit) -> int:
    return sum(1 for g in circ.gates if len(g.wires) == 2)


def cone_preparation_gates(state: net.MeraState) -> int:
    """Two-qubit gate applications to prepare one causal-cone state,
    averaged over the transition maps of each layer."""
    total = 0.0
    for tau in range(1, state.T + 1):
        layer = state.layers[tau - 1]
        per_map = []
        for tmap in net.MAPS[state.kind].values():
            count = 0
            for step in tmap.steps:
                if step[0] == "tensor":
                    count += _two_qubit_gate_count(layer[step[1]])
            per_map.append(count)
        total += sum(per_map) / len(per_map)
    total += state.info.cone_sites * _two_qubit_gate_count(state.top)
    return int(round(total))


def gradient_cost_proxy(state: net.MeraState) -> int:
    """Two-qubit gate applications per full gradient measurement.

    Counts the shifted-circuit evaluations of the gradient protocol (two
    per angle and occurrence for angle forms; 32 per gate and occurrence
    in the parametrization-free form) times the cone-preparation cost.
    """
    occurrences: dict[int, int] = {}
    for tmap in net.MAPS[state.kind].values():
        for step in tmap.steps:
            if step[0] != "tensor":
                continue
            role = step[1]
            for tau in range(1, state.T + 1):
                for g in state.layers[tau - 1][role].gates:
                    occurrences[g.gate_id] = occurrences.get(g.gate_id, 0) + 1
    for g in state.top.gates:
        occurrences[g.gate_id] = state.info.cone_sites
    evals = 0
    for g in state.variational_gates():
        occ = occurrences.get(g.gate_id, 0)
        if state.form == "free":
            evals += 2 * (2 ** (2 * len(g.wires))) * occ
        else:
            evals += 2 * net.n_angles(g.kind) * occ
    return evals * cone_preparation_gates(state)


def cost_accuracy_sweep(cfg: dict, q_values, t_values, out_dir=None):
    """Optimize per (q, t) cell and fit achieved error against gradient cost.

    The classical full-tensor baseline is out of scope here; accuracy
    saturation at fixed q plays its role, and every output row carries the
    per-gradient two-qubit gate-count proxy.  Returns (rows, fit) where fit
    holds the log-log slope when at least four points admit one.
    """
    rows = []
    for q in q_values:
        for t in t_values:
            cell = json.loads(json.dumps(cfg))
            cell["network"]["q"] = int(q)
            cell["network"]["t"] = int(t)
            model = model_from_config(cell)
            final, records, summary = optimize_run(cell)
            proxy = gradient_cost_proxy(final)
            row = {"q": int(q), "t": int(t), "cost_proxy": proxy,
                   "energy": summary["energy"],
                   "status": summary["status"]}
            if "rel_error" in summary:
                row["rel_error"] = summary["rel_error"]
            rows.append(row)
    fit = {}
    pts = [(r["cost_proxy"], r["rel_error"]) for r in rows
           if r.get("rel_error", 0.0) > 0.0]
    if len(pts) >= 4:
        x = np.log([p[0] for p in pts])
        y = np.log([p[1] for p in pts])
        slope, intercept = np.polyfit(x, y, 1)
        resid = float(np.max(np.abs(np.polyval([slope, intercept], x) - y)))
        fit = {"alpha_slope": float(slope), "intercept": float(intercept),
               "max_residual": resid, "points": len(pts)}
    if out_dir is not None:
        out = pathlib.Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_table(out / "cost_accuracy.tsv", rows, config_hash(cfg))
        _dump_json(out / "cost_accuracy_fit.json", fit)
    return rows, fit
