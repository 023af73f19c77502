"""Energy minimization by L-BFGS, Euclidean (angle forms) or Riemannian.

The Riemannian mode works on the product of unitary groups, one factor per
Trotter gate, with the Euclidean metric Re Tr(a^dag b):

* retraction       r_{u,p}(tau) = exp(tau p u^dag) u, re-projected onto the
  unitary group by SVD,
* vector transport T_{u,p}(tau) w = exp(tau p u^dag) w (isometric),
* inverse-Hessian approximation from the last ``memory`` (rho, s, y)
  triples, applied through the standard two-loop recursion, with stored
  pairs transported to the new tangent space after every accepted step.

Curvature-violating pairs ((s, y) <= 0) are skipped and logged; a failed
Wolfe search resets the memory and retries with steepest descent before
aborting.  The Euclidean mode treats the angle vector as a flat space
(retraction = addition, transport = identity); angles are not wrapped.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import LineSearchError
from .gradients import EnergyEngine, full_gradient, tangent_inner, tangent_norm
from .models import LocalModel
from .network import MeraState
from .qcore import expm_skew, project_to_unitary


@dataclass
class LbfgsConfig:
    memory: int = 9
    c1: float = 0.1
    c2: float = 0.9
    grad_tol: float = 1e-12
    max_iter: int = 1000
    ls_max_trials: int = 25
    reproject_every: int = 1

    def validate(self) -> "LbfgsConfig":
        if not (0.0 < self.c1 < 0.5 < self.c2 < 1.0):
            raise ValueError("need 0 < c1 < 1/2 < c2 < 1")
        if self.memory < 1:
            raise ValueError("memory must be at least 1")
        if self.ls_max_trials < 3:
            raise ValueError("line search needs at least 3 trials")
        return self


@dataclass
class RunRecord:
    """Per-iteration log plus event trail; wall times kept separate so that
    the data rows stay byte-comparable between runs."""

    iterations: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    wall_ms: list[dict] = field(default_factory=list)
    status: str = "running"
    final_energy: float = float("nan")
    final_grad_norm: float = float("nan")

    def log(self, **row):
        wall = row.pop("wall_ms")
        self.iterations.append(row)
        self.wall_ms.append({"iter": row["iter"], "wall_ms": wall})


# -- manifold adapters -------------------------------------------------------


class _RiemannianSpace:
    """Product-of-unitaries geometry over the variational gates."""

    def __init__(self, state: MeraState, model: LocalModel, reproject_every: int = 1):
        self.template = state
        self.model = model
        self.gate_ids = [g.gate_id for g in state.variational_gates()]
        self.reproject_every = max(1, reproject_every)
        self._retraction_count = 0

    def point_of(self, state: MeraState) -> dict[int, np.ndarray]:
        by_id = state.gate_by_id()
        return {gid: by_id[gid].matrix.copy() for gid in self.gate_ids}

    def state_of(self, point: dict[int, np.ndarray]) -> MeraState:
        return self.template.with_gate_matrices(point)

    def value_and_gradient(self, point):
        state = self.state_of(point)
        engine = EnergyEngine(state, self.model)
        return engine.energy(), full_gradient(state, self.model, engine)

    def inner(self, a, b) -> float:
        return tangent_inner(a, b)

    def norm(self, a) -> float:
        return tangent_norm(a)

    def combine(self, coeffs_vecs) -> dict:
        out = None
        for coeff, vec in coeffs_vecs:
            if out is None:
                out = {k: coeff * v for k, v in vec.items()}
            else:
                for k, v in vec.items():
                    out[k] = out[k] + coeff * v
        return out

    def transporter(self, point, direction, tau: float):
        """exp(tau p u^dag) per gate: moves both the point and tangent vectors."""
        return {gid: expm_skew(tau * direction[gid] @ point[gid].conj().T)
                for gid in self.gate_ids}

    def retract_with(self, trans, point, reproject: bool = True) -> dict:
        self._retraction_count += 1
        do_project = reproject and (self._retraction_count % self.reproject_every == 0)
        out = {}
        for gid in self.gate_ids:
            mat = trans[gid] @ point[gid]
            out[gid] = project_to_unitary(mat) if do_project else mat
        return out

    def transport_with(self, trans, vec) -> dict:
        return {gid: trans[gid] @ vec[gid] for gid in self.gate_ids}

    def unitarity_defect(self, point) -> float:
        return max(float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))
                   for u in point.values())


class _EuclideanSpace:
    """Flat angle space; transports are trivial."""

    def __init__(self, state: MeraState, model: LocalModel, reproject_every: int = 1):
        self.template = state
        self.model = model

    def point_of(self, state: MeraState) -> np.ndarray:
        return state.angle_vector()

    def state_of(self, point: np.ndarray) -> MeraState:
        return self.template.with_angle_vector(point)

    def value_and_gradient(self, point):
        state = self.state_of(point)
        engine = EnergyEngine(state, self.model)
        return engine.energy(), full_gradient(state, self.model, engine)

    def inner(self, a, b) -> float:
        return float(np.dot(a, b))

    def norm(self, a) -> float:
        return float(np.linalg.norm(a))

    def combine(self, coeffs_vecs):
        out = None
        for coeff, vec in coeffs_vecs:
            out = coeff * vec if out is None else out + coeff * vec
        return out

    def transporter(self, point, direction, tau: float):
        return (point, direction, tau)

    def retract_with(self, trans, point, reproject: bool = True):
        base, direction, tau = trans
        return point + tau * direction

    def transport_with(self, trans, vec):
        return vec

    def unitarity_defect(self, point) -> float:
        return 0.0


def retraction(point: dict[int, np.ndarray], direction: dict[int, np.ndarray],
               tau: float, reproject: bool = True) -> dict[int, np.ndarray]:
    """r_{u,p}(tau) = exp(tau p u^dag) u applied per gate block."""
    out = {}
    for gid, u in point.items():
        mat = expm_skew(tau * direction[gid] @ u.conj().T) @ u
        out[gid] = project_to_unitary(mat) if reproject else mat
    return out


def vector_transport(point: dict[int, np.ndarray], direction: dict[int, np.ndarray],
                     tau: float, vec: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    """T_{u,p}(tau) w = exp(tau p u^dag) w applied per gate block."""
    return {gid: expm_skew(tau * direction[gid] @ u.conj().T) @ vec[gid]
            for gid, u in point.items()}


# -- Wolfe line search -------------------------------------------------------


@dataclass
class _Trial:
    tau: float
    energy: float
    slope: float
    point: object
    grad: object
    trans: object


def wolfe_line_search(evaluate, e0: float, slope0: float, config: LbfgsConfig,
                      tau_init: float = 1.0):
    """Bracketing + zoom search for a step satisfying the Wolfe conditions.

    ``evaluate(tau)`` returns a _Trial with the energy and the directional
    derivative along the retraction at tau.  Returns (trial, n_trials).
    """
    if slope0 >= 0:
        raise LineSearchError("line search requires a descent direction")
    c1, c2 = config.c1, config.c2
    budget = config.ls_max_trials
    trials = 0

    def zoom(tau_lo: float, e_lo: float, tau_hi: float) -> _Trial:
        # tau_lo satisfies sufficient decrease with the lowest energy seen;
        # the minimizer is bracketed between tau_lo and tau_hi
        nonlocal trials
        while trials < budget:
            tau = 0.5 * (tau_lo + tau_hi)
            t = evaluate(tau)
            trials += 1
            if t.energy > e0 + c1 * tau * slope0 or t.energy >= e_lo:
                tau_hi = tau
            else:
                if t.slope >= c2 * slope0:
                    return t
                if t.slope * (tau_hi - tau_lo) >= 0:
                    tau_hi = tau_lo
                tau_lo, e_lo = tau, t.energy
        raise LineSearchError(f"no Wolfe step within {budget} trials")

    prev_tau, prev_e = 0.0, e0
    first = True
    tau = tau_init
    while trials < budget:
        t = evaluate(tau)
        trials += 1
        if t.energy > e0 + c1 * tau * slope0 or (not first and t.energy >= prev_e):
            return zoom(prev_tau, prev_e, tau), trials
        if t.slope >= c2 * slope0:
            return t, trials
        if t.slope >= 0:
            return zoom(tau, t.energy, prev_tau), trials
        prev_tau, prev_e = tau, t.energy
        first = False
        tau *= 2.0
    raise LineSearchError(f"no Wolfe step within {budget} trials")


# -- main loop ---------------------------------------------------------------


def lbfgs_minimize(state: MeraState, model: LocalModel, config: LbfgsConfig,
                   mode: str | None = None, trace_hook=None):
    """Minimize the energy density; returns (optimized state, RunRecord).

    mode 'riemannian' requires the free form, 'euclidean' an angle form;
    by default the mode follows the state's form.  ``trace_hook`` receives
    a dict per iteration (used by the conformance tests).
    """
    config.validate()
    if mode is None:
        mode = "riemannian" if state.form == "free" else "euclidean"
    if mode == "riemannian" and state.form != "free":
        raise ValueError("riemannian mode needs the parametrization-free form")
    if mode == "euclidean" and state.form == "free":
        raise ValueError("euclidean mode needs an angle form")
    space_cls = _RiemannianSpace if mode == "riemannian" else _EuclideanSpace
    space = space_cls(state, model, config.reproject_every)

    record = RunRecord()
    point = space.point_of(state)
    energy, grad = space.value_and_gradient(point)
    gnorm = space.norm(grad)
    memory: list[list] = []  # [rho_i, s_i, y_i], oldest first
    gamma = 1.0
    k = 0

    while gnorm > config.grad_tol and k < config.max_iter:
        t_start = time.perf_counter()
        # two-loop recursion, lines 3-11: p = -H~ g
        p = space.combine([(-1.0, grad)])
        xis = [0.0] * len(memory)
        for i in range(len(memory) - 1, -1, -1):
            rho_i, s_i, y_i = memory[i]
            xis[i] = rho_i * space.inner(s_i, p)
            p = space.combine([(1.0, p), (-xis[i], y_i)])
        p = space.combine([(gamma, p)])
        for i in range(len(memory)):
            rho_i, s_i, y_i = memory[i]
            coef = xis[i] - rho_i * space.inner(y_i, p)
            p = space.combine([(1.0, p), (coef, s_i)])
        slope0 = space.inner(grad, p)
        if slope0 >= 0:
            record.events.append({"iter": k, "event": "ascent-direction-reset"})
            memory.clear()
            p = space.combine([(-1.0, grad)])
            slope0 = -gnorm * gnorm

        if trace_hook is not None:
            trace_hook({"iter": k, "grad": grad, "direction": p, "gamma": gamma,
                        "memory": [(m[0], m[1], m[2]) for m in memory],
                        "energy": energy})

        def evaluate(tau: float) -> _Trial:
            trans = space.transporter(point, p, tau)
            new_point = space.retract_with(trans, point)
            e_new, g_new = space.value_and_gradient(new_point)
            tp = space.transport_with(trans, p)
            return _Trial(tau, e_new, space.inner(g_new, tp), new_point, g_new, trans)

        try:
            trial, n_trials = wolfe_line_search(evaluate, energy, slope0, config)
        except LineSearchError as err:
            if memory:
                # reset the quasi-Newton model and retry with steepest descent
                record.events.append({"iter": k, "event": "line-search-reset"})
                memory.clear()
                gamma = 1.0
                continue
            record.events.append({"iter": k, "event": "line-search-abort",
                                  "detail": str(err)})
            record.status = "line_search_failure"
            break

        # accepted step: assemble s_k, y_k in the new tangent space
        s_new = space.transport_with(trial.trans, space.combine([(trial.tau, p)]))
        y_new = space.combine([(1.0, trial.grad),
                               (-1.0, space.transport_with(trial.trans, grad))])
        sy = space.inner(s_new, y_new)
        # transport retained pairs into the new tangent space (Fig. lines 19-21)
        for entry in memory:
            entry[1] = space.transport_with(trial.trans, entry[1])
            entry[2] = space.transport_with(trial.trans, entry[2])
        if sy > 0.0:
            memory.append([1.0 / sy, s_new, y_new])
            gamma = sy / space.inner(y_new, y_new)
            if len(memory) > config.memory:
                memory.pop(0)
        else:
            record.events.append({"iter": k, "event": "curvature-skip", "sy": sy})

        point, grad = trial.point, trial.grad
        prev_energy = energy
        energy = trial.energy
        gnorm = space.norm(grad)
        record.log(iter=k, energy=energy, grad_norm=gnorm, step=trial.tau,
                   wolfe_trials=n_trials, slope0=slope0,
                   accepted_decrease=prev_energy - energy,
                   unitarity_defect=space.unitarity_defect(point),
                   wall_ms=1000.0 * (time.perf_counter() - t_start))
        k += 1

    if record.status == "running":
        record.status = "converged" if gnorm <= config.grad_tol else "max_iter"
    record.final_energy = energy
    record.final_grad_norm = gnorm
    return space.state_of(point), record
