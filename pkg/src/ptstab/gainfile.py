"""Flat text formats: gain files and experiment configs.

Gain files are diffable key=value text; vectors use ';' between entries and
matrices join ';'-rows with ' , '.  Floats carry 17 significant digits so a
write/read round trip is exact.  Configs are flat 'section.key = value'
lines; unknown keys are rejected.
"""

from __future__ import annotations

import math

import numpy as np

from .hong import HongGainSet
from .pnf import LinearGain

__all__ = [
    "ConfigError",
    "format_float",
    "write_gains",
    "read_gains",
    "read_config",
    "CONFIG_SCHEMA",
    "validate_config",
]

FORMAT_TAG = "ptstab-gains-v1"


class ConfigError(ValueError):
    pass


def format_float(x: float) -> str:
    return f"{float(x):.17g}"


def _fmt_vector(v) -> str:
    return ";".join(format_float(x) for x in np.asarray(v, dtype=float))


def _fmt_matrix(M) -> str:
    M = np.asarray(M, dtype=float)
    return " , ".join(";".join(format_float(x) for x in row) for row in M)


def _parse_vector(s: str) -> np.ndarray:
    return np.array([float(x) for x in s.split(";")])


def _parse_matrix(s: str) -> np.ndarray:
    return np.array([[float(x) for x in row.split(";")] for row in s.split(",")])


def write_gains(path: str, g, b_lower: float | None = None):
    """Serialize a LinearGain or HongGainSet with its certificate."""
    lines = [f"format = {FORMAT_TAG}"]
    if isinstance(g, LinearGain):
        lines += [
            "kind = pnf",
            f"n = {g.n}",
            f"b_lower = {format_float(g.b_lower)}",
            f"K = {_fmt_vector(g.K)}",
            f"S = {_fmt_matrix(g.S)}",
            f"rho = {format_float(g.rho)}",
            f"C0 = {format_float(g.C0)}",
            f"rho0 = {format_float(g.rho0)}",
        ]
    elif isinstance(g, HongGainSet):
        lines += [
            "kind = hong",
            f"n = {g.n}",
            f"b_lower = {format_float(1.0 if b_lower is None else b_lower)}",
            f"ell = {_fmt_vector(g.ell)}",
            f"C = {format_float(g.C)}",
            f"kappa_bound = {format_float(g.kappa_bound)}",
            f"kappa_pos = {format_float(g.kappa_pos)}",
        ]
        cert = g.certificate or {}
        for key in (
            "kappa_points",
            "samples_per_level",
            "verify_samples_per_kappa",
            "seed",
            "safety",
            "repair_rounds",
            "c_raw",
            "worst_residual",
        ):
            if key in cert:
                val = cert[key]
                txt = format_float(val) if isinstance(val, float) else str(val)
                lines.append(f"certificate.{key} = {txt}")
        for lev in cert.get("levels", []):
            j = lev["level"]
            for name in ("K", "L", "M", "ell_recursion_bound"):
                lines.append(f"certificate.level{j}.{name} = {format_float(lev[name])}")
    else:
        raise TypeError(f"cannot serialize {type(g)}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_kv(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected 'key = value'")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out

def read_gains(path: str):
    """Parse a gain file back into its dataclass; returns (gains, b_lower)."""
    kv = _read_kv(path)
    if kv.get("format") != FORMAT_TAG:
        raise ConfigError(f"{path}: missing or unknown format tag")
    kind = kv.get("kind")
    try:
        if kind == "pnf":
            g = LinearGain(
                n=int(kv["n"]),
                K=_parse_vector(kv["K"]),
                S=_parse_matrix(kv["S"]),
                rho=float(kv["rho"]),
                b_lower=float(kv["b_lower"]),
                C0=float(kv["C0"]),
                rho0=float(kv["rho0"]),
            )
            if g.K.shape != (g.n,) or g.S.shape != (g.n, g.n):
                raise ConfigError(f"{path}: inconsistent dimensions")
            return g, g.b_lower
        if kind == "hong":
            cert = {}
            levels = {}
            for key, val in kv.items():
                if not key.startswith("certificate."):
                    continue
                sub = key[len("certificate.") :]
                if sub.startswith("level"):
                    lev_name, field = sub.split(".", 1)
                    j = int(lev_name[len("level") :])
                    levels.setdefault(j, {"level": j})[field] = float(val)
                elif sub in ("kappa_points", "samples_per_level", "verify_samples_per_kappa", "seed", "repair_rounds"):
                    cert[sub] = int(val)
                else:
                    cert[sub] = float(val)
            if levels:
                cert["levels"] = [levels[j] for j in sorted(levels)]
            g = HongGainSet(
                n=int(kv["n"]),
                ell=_parse_vector(kv["ell"]),
                C=float(kv["C"]),
                kappa_bound=float(kv["kappa_bound"]),
                kappa_pos=float(kv.get("kappa_pos", 0.0)),
                certificate=cert,
            )
            if g.ell.shape != (g.n,):
                raise ConfigError(f"{path}: inconsistent dimensions")
            return g, float(kv["b_lower"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: corrupt gain file ({exc})") from exc
    raise ConfigError(f"{path}: unknown gain kind {kind!r}")


# --- experiment configs -----------------------------------------------------

INF = math.inf

CONFIG_SCHEMA = {
    "plant.n": ("int", None),
    "plant.t": ("float", 1.0),
    "plant.b_lower": ("float", 1.0),
    "plant.b_upper": ("float", INF),
    "plant.d_bound": ("float", 0.0),
    "controller.kind": ("str", None),
    "controller.gains": ("str", ""),
    "controller.eta": ("float", 1.0),
    "controller.density": ("str", "constant"),
    "controller.density_param": ("float", 1.0),
    "controller.t_stop_frac": ("float", 1.0 - 1e-6),
    "controller.m": ("float", 0.5),
    "controller.kappa0": ("float", 0.0),
    "controller.t_target": ("float", 1.0),
    "controller.reg_eps": ("float", 1e-3),
    "controller.synth_seed": ("int", 0),
    "controller.design_seed": ("int", 17),
    "disturbance.d": ("str", "zero"),
    "disturbance.d1": ("str", "zero"),
    "disturbance.d1_direction": ("str", ""),
    "disturbance.d2": ("str", "zero"),
    "disturbance.d2_direction": ("str", ""),
    "disturbance.b": ("str", ""),
    "disturbance.noise_period": ("float", 0.0),
    "runs.count": ("int", 1),
    "runs.seed": ("int", 0),
    "runs.x0": ("str", ""),
    "runs.x0_min": ("float", 0.1),
    "runs.x0_max": ("float", 10.0),
    "sim.rel_tol": ("float", 1e-9),
    "sim.abs_tol": ("float", 1e-12),
    "sim.horizon": ("float", 100.0),
    "sim.settle_radius": ("float", 1e-9),
    "sim.max_steps": ("int", 2_000_000),
    "output.dir": ("str", None),
}

_CONTROLLER_KINDS = ("pnf", "fixed_time", "matched_robust", "prescribed_time")


def read_config(path: str) -> dict:
    return _read_kv(path)


def validate_config(kv: dict, require_output: bool = True) -> dict:
    """Coerce against the schema; unknown keys and bad values raise ConfigError."""
    unknown = [k for k in kv if k not in CONFIG_SCHEMA]
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(sorted(unknown)))
    cfg = {}
    errors = []
    for key, (typ, default) in CONFIG_SCHEMA.items():
        if key in kv:
            raw = kv[key]
            try:
                if typ == "int":
                    cfg[key] = int(raw)
                elif typ == "float":
                    cfg[key] = float(raw)
                else:
                    cfg[key] = raw
            except ValueError:
                errors.append(f"{key}: expected {typ}, got {raw!r}")
        else:
            if default is None and (key != "output.dir" or require_output):
                errors.append(f"{key}: required key missing")
            else:
                cfg[key] = default
    if errors:
        raise ConfigError("; ".join(errors))
    if cfg["controller.kind"] not in _CONTROLLER_KINDS:
        raise ConfigError(f"controller.kind must be one of {_CONTROLLER_KINDS}")
    if cfg["plant.n"] < 1 or cfg["plant.t"] <= 0:
        raise ConfigError("plant.n must be >= 1 and plant.t > 0")
    return cfg
