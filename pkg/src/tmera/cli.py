"""Command line entry point.

Subcommands: optimize, scan, estimate, angles, sample, validate.  Run
configurations are JSON documents validated against a fixed schema with all
defaults made explicit; ``--echo-config`` prints the fully defaulted
configuration (its own re-ingestion is a fixed point).  Exit codes: 0 on
success, 1 on configuration or usage errors, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import json
import pathlib
import sys

import numpy as np

from . import models, network, simulator, workflows
from .errors import ConfigError, TmeraError

_SCHEMA = {
    "model": {
        "name": (str, "tfim", ("tfim", "blbq")),
        "parameter": (float, 1.25, None),
        "penalty": (float, 10.0, None),
    },
    "network": {
        "kind": (str, "mod-binary", tuple(k for k, v in network.KINDS.items() if v.simulable)),
        "T": (int, 3, None),
        "q": (int, 1, None),
        "t": (int, 1, None),
        "form": (str, "free", network.FORMS),
    },
    "init": {
        "mode": (str, "identity", ("identity", "random", "product", "from_file")),
        "seed": ((int, type(None)), None, None),
        "state_file": ((str, type(None)), None, None),
        "product_spec": ((str, list, type(None)), None, None),
        "ttn_warmstart": (bool, False, None),
        "kick_scale": (float, 0.05, None),
        "kick_seed": (int, 1, None),
    },
    "optimizer": {
        "mode": ((str, type(None)), None, ("riemannian", "euclidean", None)),
        "memory": (int, 9, None),
        "c1": (float, 0.1, None),
        "c2": (float, 0.9, None),
        "grad_tol": (float, 1e-12, None),
        "max_iter": (int, 500, None),
        "ls_max_trials": (int, 25, None),
        "reproject_every": (int, 1, None),
        "warmstart_max_iter": ((int, type(None)), None, None),
    },
    "sampling": {
        "shots": (int, 10000, None),
        "seed": (int, 0, None),
    },
    "scan": {
        "values": ((list, type(None)), None, None),
        "warm_start": (bool, True, None),
    },
    "output": {
        "directory": ((str, type(None)), None, None),
        "tags": (list, [], None),
    },
}


def validate_config(raw: dict) -> dict:
    """Fill defaults and reject unknown keys or mistyped values."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    cfg = {}
    for section, fields in _SCHEMA.items():
        sub = raw.get(section, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"{section}: expected an object")
        for key in sub:
            if key not in fields:
                raise ConfigError(f"{section}.{key}: unknown key")
        out = {}
        for key, (types, default, choices) in fields.items():
            val = sub.get(key, default)
            if isinstance(val, int) and not isinstance(val, bool) and types is float:
                val = float(val)
            ok_types = types if isinstance(types, tuple) else (types,)
            if not isinstance(val, ok_types) or (isinstance(val, bool) and bool not in ok_types):
                raise ConfigError(f"{section}.{key}: expected {types}, got {val!r}")
            if choices is not None and val not in choices:
                raise ConfigError(f"{section}.{key}: must be one of {choices}")
            out[key] = val
        cfg[section] = out
    for key in raw:
        if key not in _SCHEMA:
            raise ConfigError(f"{key}: unknown section")
    if cfg["optimizer"]["mode"] is None:
        cfg["optimizer"]["mode"] = ("riemannian" if cfg["network"]["form"] == "free"
                                    else "euclidean")
    if cfg["optimizer"]["warmstart_max_iter"] is None:
        cfg["optimizer"]["warmstart_max_iter"] = cfg["optimizer"]["max_iter"]
    mode, form = cfg["optimizer"]["mode"], cfg["network"]["form"]
    if (mode == "riemannian") != (form == "free"):
        raise ConfigError(f"optimizer.mode '{mode}' incompatible with form '{form}'")
    if cfg["init"]["mode"] == "random" and cfg["init"]["seed"] is None:
        raise ConfigError("init.seed: required for random initialization")
    if cfg["init"]["mode"] == "product" and cfg["init"]["product_spec"] is None:
        raise ConfigError("init.product_spec: required for product initialization")
    if cfg["init"]["mode"] == "from_file" and cfg["init"]["state_file"] is None:
        raise ConfigError("init.state_file: required for from_file initialization")
    return cfg


def load_config(path: str) -> dict:
    try:
        raw = json.loads(pathlib.Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read configuration: {err}") from err
    return validate_config(raw)


# ---------------------------------------------------------------------------
# validation suites
# ---------------------------------------------------------------------------


def _suite_checks(full: bool):
    from . import gradients as grad

    def oracle_equivalence():
        worst = 0.0
        cases = [("binary", 2, 2), ("mod-binary", 3, 2), ("ternary", 2, 1)]
        seeds = range(3) if not full else range(6)
        for kind, T, t in cases:
            for seed in seeds:
                st = network.build_network(kind, T, 1, t, "free", "random", seed=seed)
                m = models.tfim_term(1.1, 1)
                e_ch = simulator.energy_density(st, m)
                e_or = simulator.oracle_site_energy(st, m, network.oracle_ring_size(st))
                worst = max(worst, abs(e_ch - e_or))
        return worst, 1e-10

    def branch_enumeration():
        worst = 0.0
        for kind, T in (("binary", 3), ("ternary", 2)):
            st = network.build_network(kind, T, 1, 1, "free", "random", seed=5)
            avg = simulator.enumerate_branch_average(st)
            ch = simulator.averaged_density(st, 0).components[""]
            worst = max(worst, float(np.max(np.abs(avg - ch))))
        return worst, 1e-10

    def flag_dilation():
        st = network.build_network("mod-binary", 3, 1, 1, "free", "random", seed=8)
        ex = simulator.MapExecutor(st)
        iface = simulator.initial_interface(st)
        flag = simulator.flag_join(iface, ex.block_qubits)
        worst = 0.0
        for tau in range(st.T, 0, -1):
            iface = simulator.channel_step(ex, iface, tau)
            flag = simulator.flag_channel_step(ex, flag, tau)
            re_, ro_, off = simulator.flag_split(flag, ex.block_qubits)
            worst = max(worst, off,
                        float(np.max(np.abs(re_ - iface.components["e"]))),
                        float(np.max(np.abs(ro_ - iface.components["o"]))))
        return worst, 1e-10

    def gradient_fd():
        m = models.tfim_term(0.95, 1)
        st = network.build_network("mod-binary", 2, 1, 1, "can", "random", seed=3)
        eng = grad.EnergyEngine(st, m)
        worst = 0.0
        for j in range(0, len(st.registry()), 7):
            a = grad.shift_gradient(st, m, j, eng)
            h = 1e-5
            vec = st.angle_vector()
            vp, vm = vec.copy(), vec.copy()
            vp[j] += h
            vm[j] -= h
            fd = (simulator.energy_density(st.with_angle_vector(vp), m)
                  - simulator.energy_density(st.with_angle_vector(vm), m)) / (2 * h)
            worst = max(worst, abs(a - fd) / max(1.0, abs(fd)))
        return worst, 1e-6

    def channel_trace():
        worst = 0.0
        for kind, T in (("binary", 2), ("mod-binary", 3), ("ternary", 2)):
            st = network.build_network(kind, T, 1, 2, "free", "random", seed=4)
            iface = simulator.averaged_density(st, 0)
            for mat in iface.components.values():
                worst = max(worst, abs(np.trace(mat).real - 1.0),
                            max(0.0, -float(np.linalg.eigvalsh(mat).min())))
        return worst, 1e-9

    checks = [("oracle-equivalence", oracle_equivalence),
              ("branch-enumeration", branch_enumeration),
              ("flag-dilation", flag_dilation),
              ("gradient-vs-finite-difference", gradient_fd),
              ("channel-trace-positivity", channel_trace)]
    return checks


def cmd_validate(args) -> int:
    failures = 0
    for name, check in _suite_checks(args.suite == "full"):
        value, tol = check()
        ok = value <= tol
        failures += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {value:.3e} (tol {tol:.0e})")
    return 0 if failures == 0 else 2


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_optimize(args) -> int:
    cfg = load_config(args.config)
    if args.echo_config:
        print(json.dumps(cfg, sort_keys=True, indent=1))
        return 0
    final, records, summary = workflows.optimize_run(cfg, args.out)
    print(json.dumps(summary, sort_keys=True, indent=1))
    return 0 if summary["status"] in ("converged", "max_iter") else 2


def cmd_scan(args) -> int:
    cfg = load_config(args.config)
    if args.echo_config:
        print(json.dumps(cfg, sort_keys=True, indent=1))
        return 0
    if cfg["scan"]["values"]:
        plan = workflows.ScanPlan("g", tuple(float(v) for v in cfg["scan"]["values"]),
                                  cfg["scan"]["warm_start"])
    else:
        plan = workflows.ScanPlan.default_tfim()
    rows = workflows.scan_run(plan, cfg, args.out)
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    return 0 if all(r.get("status") != "failed" for r in rows) else 2


def cmd_estimate(args) -> int:
    report = workflows.estimate_resources(args.kind, args.q, args.t, args.layers,
                                          n_sites=args.sites, eps=args.eps)
    print(json.dumps(report.as_dict(), sort_keys=True, indent=1))
    return 0


def cmd_angles(args) -> int:
    state = network.load_state(args.state_file)
    hist = workflows.angle_histogram(state, bin_width=args.bin_width)
    payload = {"bin_width": hist.bin_width, "skipped_gates": hist.skipped_gates,
               "rows": workflows.histogram_rows(hist)}
    if args.out:
        pathlib.Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=1))
    else:
        print(json.dumps(payload, sort_keys=True, indent=1))
    return 0


def cmd_sample(args) -> int:
    cfg = load_config(args.config)
    state = workflows.state_from_config(cfg)
    model = workflows.model_from_config(cfg)
    est = simulator.sample_energy(state, model, cfg["sampling"]["shots"],
                                  cfg["sampling"]["seed"])
    print(json.dumps({"mean": est.mean, "shots": est.shots,
                      "std_error": est.std_error, "config_hash":
                      workflows.config_hash(cfg)}, sort_keys=True, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tmera",
        description="Build, simulate and variationally optimize Trotterized MERA states.")
    parser.add_argument("--threads", type=int, default=1,
                        help="degree-of-parallelism hint for worker pools")
    sub = parser.add_subparsers(dest="command")

    p_opt = sub.add_parser("optimize", help="run one optimization from a config file")
    p_opt.add_argument("config")
    p_opt.add_argument("--out", default=None)
    p_opt.add_argument("--echo-config", action="store_true")
    p_opt.set_defaults(func=cmd_optimize)

    p_scan = sub.add_parser("scan", help="scan the model parameter with warm starts")
    p_scan.add_argument("config")
    p_scan.add_argument("--out", default=None)
    p_scan.add_argument("--echo-config", action="store_true")
    p_scan.set_defaults(func=cmd_scan)

    p_est = sub.add_parser("estimate", help="resource estimates for any network kind")
    p_est.add_argument("--kind", required=True, choices=list(network.KINDS))
    p_est.add_argument("--q", type=int, required=True)
    p_est.add_argument("--t", type=int, required=True)
    p_est.add_argument("--layers", type=int, required=True)
    p_est.add_argument("--sites", type=int, default=None)
    p_est.add_argument("--eps", type=float, default=None)
    p_est.set_defaults(func=cmd_estimate)

    p_ang = sub.add_parser("angles", help="canonical-angle histogram of a saved state")
    p_ang.add_argument("state_file")
    p_ang.add_argument("--bin-width", type=float, default=float(np.pi / 50.0))
    p_ang.add_argument("--out", default=None)
    p_ang.set_defaults(func=cmd_angles)

    p_sam = sub.add_parser("sample", help="shot-sampled energy estimate")
    p_sam.add_argument("config")
    p_sam.set_defaults(func=cmd_sample)

    p_val = sub.add_parser("validate", help="run the oracle-equivalence and invariant suite")
    p_val.add_argument("--suite", choices=("small", "full"), default="small")
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage()
        return 1
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 1
    except TmeraError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
