"""ptstab command line: synthesize gains, verify certificates, run experiments.

Exit codes: 0 success / all checks pass, 1 usage or config error,
2 synthesis or verification failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import ChainSpec
from .gainfile import (
    ConfigError,
    format_float,
    read_config,
    read_gains,
    validate_config,
    write_gains,
)
from .hong import (
    GainSynthesisError,
    HongSynthesisConfig,
    decay_residual,
    synthesize_hong_gains,
    verify_decay,
)
from .pnf import (
    SynthesisError,
    certify_perturbation,
    synthesize_linear_gain,
    verify_lmi,
    _lmi_matrix,
)
from .sim import (
    BProfile,
    DisturbanceSpec,
    SimOptions,
    Signal,
    VectorSignal,
    fixed_time_controller,
    integrate,
    isotonic_fit,
    iss_metrics,
    pnf_controller,
    prescribed_time_controller,
    robust_controller,
)
from .switching import design_switch_params
from .timescale import Density, build

_DENSITIES = {"constant", "power", "expflat"}


def _thread_count(n_jobs: int) -> int:
    raw = os.environ.get("PTSTAB_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        cap = 1
    if cap == 0:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_jobs))


def _run_batch(fn, jobs):
    workers = _thread_count(len(jobs))
    if workers == 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    if isinstance(v, float):
        return format_float(v)
    return str(v)


# --- synthesize -------------------------------------------------------------


def cmd_synthesize(args) -> int:
    if args.n < 1 or args.b_lower <= 0:
        print("error: need --n >= 1 and --b-lower > 0", file=sys.stderr)
        return 1
    try:
        if args.kind == "pnf":
            g = synthesize_linear_gain(args.n, args.b_lower)
            certify_perturbation(g)
            ok, endpoint, slope = verify_lmi(g)
            if not ok:
                print(f"synthesis produced a failing certificate: {endpoint} {slope}")
                return 2
            write_gains(args.out, g)
            print(f"pnf gains written to {args.out} (rho={g.rho:.6g}, C0={g.C0:.6g})")
        else:
            cfg = HongSynthesisConfig(seed=args.seed)
            g = synthesize_hong_gains(args.n, cfg)
            write_gains(args.out, g, b_lower=args.b_lower)
            ells = [float(v) for v in g.ell]
            print(f"hong gains written to {args.out} (ell={ells}, C={g.C:.6g})")
    except (SynthesisError, GainSynthesisError) as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return 2
    return 0


# --- verify -----------------------------------------------------------------


def _report(rows) -> int:
    width = max(len(r[0]) for r in rows)
    all_ok = True
    for name, value, ok in rows:
        mark = "pass" if ok else "FAIL"
        all_ok &= ok
        print(f"{name.ljust(width)}  {value:>14}  {mark}")
    return 0 if all_ok else 2


def cmd_verify(args) -> int:
    try:
        g, b_lower = read_gains(args.gains)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    rows = []
    if hasattr(g, "K"):
        ok, endpoint, slope = verify_lmi(g)
        rows.append(("lmi endpoint max-eig + rho", f"{endpoint:.3e}", endpoint <= 1e-9))
        rows.append(("lmi slope min-eig", f"{slope:.3e}", slope >= -1e-9))
        if g.C0 > 0:
            worst = -math.inf
            for a in (-g.C0, g.C0):
                Dr = np.diag([float(g.n - i) for i in range(g.n)])
                M = _lmi_matrix(g, g.b_lower) + a * (Dr @ g.S + g.S @ Dr) + g.rho0 * np.eye(g.n)
                worst = max(worst, float(np.max(np.linalg.eigvalsh(0.5 * (M + M.T)))))
            rows.append(("perturbed endpoints + rho0", f"{worst:.3e}", worst <= 1e-8))
    else:
        cert = g.certificate or {}
        base = int(cert.get("verify_samples_per_kappa", 1500))
        pts = int(cert.get("kappa_points", 11))
        scale = max(1, args.grid_scale)
        C_new, _ = verify_decay(g, pts, base * scale, seed=int(cert.get("seed", 0)) + 5000)
        rows.append(("decay constant C (rescan)", f"{C_new:.5g}", C_new > 0))
        resid = decay_residual(g, pts, base * scale, seed=int(cert.get("seed", 0)) + 6000)
        rows.append(("max dV + C V^(1+a)", f"{resid:.3e}", resid <= 0.0))
        c_raw = cert.get("c_raw")
        if c_raw:
            change = abs(C_new - c_raw) / c_raw
            rows.append(("C change vs certificate", f"{change:.3%}", True))
    return _report(rows)


# --- simulate / sweep -------------------------------------------------------


def _parse_signal(spec_str: str, seed: int, period: float) -> Signal:
    parts = spec_str.strip().split(":")
    kind = parts[0]
    if kind == "zero":
        return Signal("zero")
    vals = [float(v) for v in parts[1].split(",")] if len(parts) > 1 else []
    if kind == "constant":
        return Signal("constant", amp=vals[0])
    if kind == "sine":
        freq = vals[1] if len(vals) > 1 else 1.0
        phase = vals[2] if len(vals) > 2 else 0.0
        return Signal("sine", amp=vals[0], freq=freq, phase=phase)
    if kind == "noise":
        return Signal("noise", amp=vals[0], seed=seed, period=period)
    raise ConfigError(f"unknown signal spec {spec_str!r}")


def _parse_bprofile(spec_str: str, b_lower: float) -> BProfile:
    if not spec_str:
        return BProfile(b_lower)
    parts = spec_str.strip().split(":")
    vals = [float(v) for v in parts[1].split(",")] if len(parts) > 1 else []
    if parts[0] == "constant":
        return BProfile(vals[0])
    if parts[0] == "sine":
        freq = vals[2] if len(vals) > 2 else 1.0
        phase = vals[3] if len(vals) > 3 else 0.0
        return BProfile(vals[0], vals[1], freq=freq, phase=phase)
    raise ConfigError(f"unknown b profile {spec_str!r}")


def _direction(text: str, n: int, default: np.ndarray) -> np.ndarray:
    if not text:
        return default
    vec = np.array([float(v) for v in text.split(",")])
    if vec.shape != (n,):
        raise ConfigError(f"direction needs {n} components")
    return vec


class _Problem:
    """Everything a batch of runs needs, built once from a validated config."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        n = cfg["plant.n"]
        self.spec = ChainSpec(
            n=n,
            T=cfg["plant.t"],
            b_lower=cfg["plant.b_lower"],
            b_upper=cfg["plant.b_upper"],
            d_bound=cfg["plant.d_bound"],
        )
        kind = cfg["controller.kind"]
        self.kind = kind
        self.gains = None
        self.switch = None
        self.ts = None
        if kind == "pnf":
            if cfg["controller.density"] not in _DENSITIES:
                raise ConfigError("controller.density must be constant|power|expflat")
            self.ts = build(self.spec.T, Density(cfg["controller.density"], cfg["controller.density_param"]))
            if cfg["controller.gains"]:
                g, _ = read_gains(cfg["controller.gains"])
                if not hasattr(g, "K"):
                    raise ConfigError("pnf controller needs a pnf gain file")
            else:
                g = synthesize_linear_gain(n, self.spec.b_lower)
                certify_perturbation(g)
            self.gains = g
        else:
            if cfg["controller.gains"]:
                g, _ = read_gains(cfg["controller.gains"])
                if hasattr(g, "K"):
                    raise ConfigError(f"{kind} controller needs a hong gain file")
            else:
                g = synthesize_hong_gains(n, HongSynthesisConfig(seed=cfg["controller.synth_seed"]))
            self.gains = g
            b_up = self.spec.b_upper if math.isfinite(self.spec.b_upper) else self.spec.b_lower
            kappa0 = cfg["controller.kappa0"] or None
            self.switch = design_switch_params(
                g, m=cfg["controller.m"], kappa0=kappa0, b_upper=b_up, seed=cfg["controller.design_seed"]
            )

    def controller(self):
        cfg = self.cfg
        if self.kind == "pnf":
            return pnf_controller(self.gains, self.ts, cfg["controller.eta"], cfg["controller.t_stop_frac"])
        if self.kind == "fixed_time":
            return fixed_time_controller(self.gains, self.switch, b_lower=self.spec.b_lower)
        if self.kind == "matched_robust":
            return robust_controller(self.gains, self.switch, self.spec, cfg["controller.reg_eps"])
        return prescribed_time_controller(
            self.gains, self.switch, cfg["controller.t_target"], b_lower=self.spec.b_lower
        )

    def disturbances(self, run_seed: int) -> DisturbanceSpec:
        cfg = self.cfg
        n = self.spec.n
        period = cfg["disturbance.noise_period"] or self.spec.T / 1e4
        d = _parse_signal(cfg["disturbance.d"], 4 * run_seed + 1, period)
        d1_sig = _parse_signal(cfg["disturbance.d1"], 4 * run_seed + 2, period)
        d2_sig = _parse_signal(cfg["disturbance.d2"], 4 * run_seed + 3, period)
        e_n = np.zeros(n)
        e_n[-1] = 1.0
        d1 = None
        if d1_sig.kind != "zero":
            d1 = VectorSignal(_direction(cfg["disturbance.d1_direction"], n, np.ones(n)), d1_sig)
        d2 = None
        if d2_sig.kind != "zero":
            d2 = VectorSignal(_direction(cfg["disturbance.d2_direction"], n, e_n), d2_sig)
        b = _parse_bprofile(cfg["disturbance.b"], self.spec.b_lower)
        return DisturbanceSpec(d=d, d1=d1, d2=d2, b=b)

    def initial_state(self, run_seed: int) -> np.ndarray:
        cfg = self.cfg
        if cfg["runs.x0"]:
            x0 = np.array([float(v) for v in cfg["runs.x0"].split(",")])
            if x0.shape != (self.spec.n,):
                raise ConfigError(f"runs.x0 needs {self.spec.n} components")
            return x0
        rng = np.random.default_rng(run_seed)
        direction = rng.standard_normal(self.spec.n)
        direction /= np.linalg.norm(direction)
        radius = 10 ** rng.uniform(math.log10(cfg["runs.x0_min"]), math.log10(cfg["runs.x0_max"]))
        return radius * direction

    def options(self) -> SimOptions:
        cfg = self.cfg
        return SimOptions(
            rel_tol=cfg["sim.rel_tol"],
            abs_tol=cfg["sim.abs_tol"],
            t_stop_frac=cfg["controller.t_stop_frac"],
            settle_radius=cfg["sim.settle_radius"],
            max_steps=cfg["sim.max_steps"],
        )

    def run_one(self, k: int):
        cfg = self.cfg
        seed = cfg["runs.seed"] + k
        traj = integrate(
            self.spec,
            self.controller(),
            self.disturbances(seed),
            self.initial_state(seed),
            self.options(),
            horizon=cfg["sim.horizon"],
        )
        if self.switch is not None:
            metrics = iss_metrics(traj, self.gains, self.switch)
        else:
            metrics = {"limsup_Z": math.nan, "sup_norm": traj.sup_norm, "settle_time": traj.settle_time}
        return traj, seed, metrics


_STATUS_LABEL = {"horizon": "ReachedHorizon", "settled": "SettledAt", "step_failure": "StepFailure"}

_DIAG_COLS = ("V0", "Vkp", "Vkm", "kappa", "Z")


def _write_run_csv(path: str, traj, n: int):
    header = "t," + ",".join(f"x{i + 1}" for i in range(n)) + ",u,V0,Vkp,Vkm,kappa,Z"
    lines = [header]
    for i in range(len(traj.t)):
        cells = [format_float(traj.t[i])]
        cells += [format_float(v) for v in traj.x[i]]
        cells.append(format_float(traj.u[i]))
        for c in _DIAG_COLS:
            cells.append(format_float(traj.diag[c][i]) if c in traj.diag else "nan")
        lines.append(",".join(cells))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_simulate(args) -> int:
    try:
        kv = read_config(args.config)
        cfg = validate_config(kv)
        if args.runs is not None:
            cfg["runs.count"] = args.runs
        if args.seed is not None:
            cfg["runs.seed"] = args.seed
        problem = _Problem(cfg)
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out_dir = cfg["output.dir"]
    os.makedirs(out_dir, exist_ok=True)
    results = _run_batch(problem.run_one, range(cfg["runs.count"]))
    summary = ["run,seed,status,settle_time,sup_norm,limsup_Z"]
    for k, (traj, seed, metrics) in enumerate(results):
        _write_run_csv(os.path.join(out_dir, f"run_{k}.csv"), traj, problem.spec.n)
        summary.append(
            ",".join(
                [
                    str(k),
                    str(seed),
                    _STATUS_LABEL[traj.status],
                    _fmt(metrics["settle_time"]),
                    _fmt(metrics["sup_norm"]),
                    _fmt(metrics["limsup_Z"]),
                ]
            )
        )
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="\n") as fh:
        fh.write("\n".join(summary) + "\n")
    print(f"wrote {cfg['runs.count']} runs to {out_dir}")
    return 0


_SWEEP_PARAMS = ("d1_amp", "d2_amp", "eta", "T_target")


def _apply_sweep(kv: dict, param: str, value: float) -> dict:
    kv = dict(kv)
    if param == "eta":
        kv["controller.eta"] = repr(value)
    elif param == "T_target":
        kv["controller.t_target"] = repr(value)
    else:
        key = "disturbance.d1" if param == "d1_amp" else "disturbance.d2"
        template = kv.get(key, "zero").split(":")
        kind = template[0] if template[0] != "zero" else "constant"
        rest = template[1].split(",")[1:] if len(template) > 1 else []
        kv[key] = ":".join([kind, ",".join([repr(value)] + rest)]) if value != 0 or kind != "constant" else "zero"
        if value == 0:
            kv[key] = "zero"
    return kv


def cmd_sweep(args) -> int:
    if args.param not in _SWEEP_PARAMS:
        print(f"error: --param must be one of {_SWEEP_PARAMS}", file=sys.stderr)
        return 1
    try:
        values = [float(v) for v in args.values.split(",") if v.strip() != ""]
    except ValueError:
        print("error: --values must be a comma list of numbers", file=sys.stderr)
        return 1
    if not values:
        print("error: empty --values list", file=sys.stderr)
        return 1
    try:
        kv = read_config(args.config)
        base_cfg = validate_config(kv)
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out_dir = base_cfg["output.dir"]
    os.makedirs(out_dir, exist_ok=True)
    rows = ["param,value,run,seed,status,settle_time,sup_norm,limsup_Z"]
    value_stat = []
    for value in values:
        try:
            cfg = validate_config(_apply_sweep(kv, args.param, value))
            problem = _Problem(cfg)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
        results = _run_batch(problem.run_one, range(cfg["runs.count"]))
        worst = -math.inf
        for k, (traj, seed, metrics) in enumerate(results):
            rows.append(
                ",".join(
                    [
                        args.param,
                        format_float(value),
                        str(k),
                        str(seed),
                        _STATUS_LABEL[traj.status],
                        _fmt(metrics["settle_time"]),
                        _fmt(metrics["sup_norm"]),
                        _fmt(metrics["limsup_Z"]),
                    ]
                )
            )
            stat = metrics["limsup_Z"]
            if stat is None or math.isnan(stat):
                stat = metrics["settle_time"] if metrics["settle_time"] is not None else math.nan
            worst = max(worst, stat)
        value_stat.append(worst)
    fit = isotonic_fit(values, value_stat)
    footer = "# isotonic_envelope: " + " ".join(
        f"{format_float(v)}:{format_float(f)}" for v, f in zip(values, fit)
    )
    path = os.path.join(out_dir, "sweep.csv")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n" + footer + "\n")
    print(f"wrote sweep to {path}")
    return 0


# --- entry ------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ptstab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synthesize", help="synthesize and certify a gain set")
    s.add_argument("--kind", choices=("pnf", "hong"), required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--b-lower", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synthesize)

    v = sub.add_parser("verify", help="re-check a gain file's certificate")
    v.add_argument("--gains", required=True)
    v.add_argument("--grid-scale", type=int, default=1)
    v.set_defaults(fn=cmd_verify)

    r = sub.add_parser("simulate", help="run a batch of closed-loop trajectories")
    r.add_argument("--config", required=True)
    r.add_argument("--runs", type=int, default=None)
    r.add_argument("--seed", type=int, default=None)
    r.set_defaults(fn=cmd_simulate)

    w = sub.add_parser("sweep", help="parameter sweep with ISS metrics")
    w.add_argument("--config", required=True)
    w.add_argument("--param", required=True)
    w.add_argument("--values", required=True)
    w.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
