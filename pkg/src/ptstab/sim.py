"""Trajectory integration for the perturbed chain under the toolkit's feedbacks.

A Dormand-Prince 5(4) stepper with per-step error control drives everything:
it records every accepted step (with controller diagnostics), caps the step
near switching surfaces and near the blow-up horizon, lands exactly on
requested output times, and declares settling only on a persistent ball.
Runs are bit-reproducible for fixed inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ChainSpec, dilate, pnf_weights
from .hong import HongGainSet
from .pnf import LinearGain, pnf_feedback
from .switching import (
    SwitchParams,
    fixed_time_feedback,
    kappa_of_x,
    matched_robust_feedback,
    prescribed_time_feedback,
    v0_value,
    z_value,
)
from .timescale import TimeScale

__all__ = [
    "Signal",
    "zero_signal",
    "constant_signal",
    "sine_signal",
    "noise_signal",
    "VectorSignal",
    "BProfile",
    "DisturbanceSpec",
    "Controller",
    "pnf_controller",
    "fixed_time_controller",
    "robust_controller",
    "prescribed_time_controller",
    "custom_controller",
    "SimOptions",
    "Trajectory",
    "integrate",
    "integrate_warped",
    "iss_metrics",
    "isotonic_fit",
]

NOISE_TABLE = 131072


class Signal:
    """Scalar signal from the closed catalog; value(t), amplitude bound."""

    def __init__(self, kind, amp=0.0, freq=1.0, phase=0.0, seed=0, period=1e-4):
        self.kind = kind
        self.amp = float(amp)
        self.freq = float(freq)
        self.phase = float(phase)
        self.seed = int(seed)
        self.period = float(period)
        if kind == "noise":
            rng = np.random.default_rng(seed)
            self._table = rng.uniform(-self.amp, self.amp, NOISE_TABLE)

    def __call__(self, t: float) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "constant":
            return self.amp
        if self.kind == "sine":
            return self.amp * math.sin(2.0 * math.pi * self.freq * t + self.phase)
        return float(self._table[int(t / self.period) % NOISE_TABLE])

    @property
    def bound(self) -> float:
        return abs(self.amp)


def zero_signal() -> Signal:
    return Signal("zero")


def constant_signal(c: float) -> Signal:
    return Signal("constant", amp=c)


def sine_signal(amp: float, freq: float, phase: float = 0.0) -> Signal:
    return Signal("sine", amp=amp, freq=freq, phase=phase)


def noise_signal(amp: float, seed: int, period: float = 1e-4) -> Signal:
    """Piecewise-constant seeded noise, resampled every `period` seconds."""
    return Signal("noise", amp=amp, seed=seed, period=period)


class VectorSignal:
    """direction * scalar signal; the n-vector disturbance channels."""

    def __init__(self, direction, signal: Signal):
        self.direction = np.asarray(direction, dtype=float)
        self.signal = signal

    def __call__(self, t: float) -> np.ndarray:
        return self.direction * self.signal(t)

    @property
    def bound(self) -> float:
        return float(np.linalg.norm(self.direction)) * self.signal.bound


class BProfile:
    """Control-gain profile with declared bounds [lo, hi]."""

    def __init__(self, lo: float, hi: float | None = None, freq: float = 0.0, phase: float = 0.0):
        hi = lo if hi is None else hi
        if not 0 < lo <= hi:
            raise ValueError("need 0 < lo <= hi")
        self.lo, self.hi, self.freq, self.phase = lo, hi, freq, phase

    def __call__(self, t: float) -> float:
        if self.lo == self.hi or self.freq == 0.0:
            return self.lo
        mid = 0.5 * (self.lo + self.hi)
        half = 0.5 * (self.hi - self.lo)
        return mid + half * math.sin(2.0 * math.pi * self.freq * t + self.phase)


@dataclass
class DisturbanceSpec:
    d: Signal = field(default_factory=zero_signal)
    d1: VectorSignal | None = None
    d2: VectorSignal | None = None
    b: BProfile = field(default_factory=lambda: BProfile(1.0))


@dataclass
class Controller:
    name: str
    u: object  # callable (t, x_measured) -> float
    t_stop: float | None = None
    surfaces: object | None = None  # callable x -> tuple of surface values
    diag: object | None = None  # callable x -> dict of named floats


def pnf_controller(gain: LinearGain, ts: TimeScale, eta: float, t_stop_frac: float = 1.0 - 1e-6):
    return Controller(
        name="pnf",
        u=lambda t, x: pnf_feedback(gain, ts, eta, t, x),
        t_stop=ts.T * t_stop_frac,
    )


def _switch_diag(g: HongGainSet, sp: SwitchParams):
    from .hong import hong_value

    def diag(x):
        return {
            "V0": v0_value(sp.P, x),
            "Vkp": hong_value(g, sp.kappa0, x),
            "Vkm": hong_value(g, -sp.kappa0, x),
            "kappa": kappa_of_x(sp, x),
            "Z": z_value(g, sp, x),
        }

    return diag


def fixed_time_controller(g: HongGainSet, sp: SwitchParams, b_lower: float = 1.0):
    return Controller(
        name="fixed_time",
        u=lambda t, x: fixed_time_feedback(g, sp, x, b_lower=b_lower),
        surfaces=lambda x: (
            v0_value(sp.P, x) - (1.0 - sp.m),
            v0_value(sp.P, x) - (1.0 + sp.m),
        ),
        diag=_switch_diag(g, sp),
    )


def robust_controller(
    g: HongGainSet,
    sp: SwitchParams,
    spec: ChainSpec,
    reg_eps: float = 1e-3,
    hysteresis: bool = False,
):
    """Matched-robust feedback; optional hysteresis latching of the sign term.

    The hysteresis variant keeps internal state (the latched sign) and is not
    a pure function of (t, x); it only switches when |omega0| re-crosses eps.
    """
    from .hong import hong_value

    if not hysteresis:
        u_fn = lambda t, x: matched_robust_feedback(g, sp, spec, reg_eps, x)
    else:
        from .hong import hong_control

        latch = [1.0]

        def u_fn(t, x):
            vm = hong_value(g, -sp.kappa0, x)
            kap = sp.kappa0 if vm > 1.0 else -sp.kappa0
            w0, _ = hong_control(g, kap, x)
            if abs(w0) > reg_eps:
                latch[0] = math.copysign(1.0, w0)
            return (w0 + spec.d_bound * latch[0]) / spec.b_lower

    return Controller(
        name="matched_robust",
        u=u_fn,
        surfaces=lambda x: (hong_value(g, -sp.kappa0, x) - 1.0,),
        diag=_switch_diag(g, sp),
    )


def prescribed_time_controller(
    g: HongGainSet, sp: SwitchParams, T_target: float, b_lower: float = 1.0
):
    mu = max(1.0, sp.T_settle / T_target)
    w = pnf_weights(g.n)

    def surfaces(x):
        v = v0_value(sp.P, dilate(w, mu, x))
        return (v - (1.0 - sp.m), v - (1.0 + sp.m))

    return Controller(
        name="prescribed_time",
        u=lambda t, x: prescribed_time_feedback(g, sp, T_target, x, b_lower=b_lower),
        surfaces=surfaces,
        diag=_switch_diag(g, sp),
    )


def custom_controller(fn, name: str = "custom"):
    return Controller(name=name, u=fn)


@dataclass
class SimOptions:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    t_stop_frac: float = 1.0 - 1e-6
    settle_radius: float = 1e-9
    settle_count: int = 100
    max_steps: int = 2_000_000
    h0: float | None = None
    switch_cap: float = 0.01
    min_step: float = 1e-15
    t_eval: tuple = ()


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    diag: dict
    status: str  # "horizon" | "settled" | "step_failure"
    settle_time: float | None = None
    fail_time: float | None = None

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.x, axis=1)))

    def first_time_below(self, radius: float) -> float | None:
        norms = np.linalg.norm(self.x, axis=1)
        idx = np.nonzero(norms <= radius)[0]
        return float(self.t[idx[0]]) if len(idx) else None


# Dormand-Prince 5(4) tableau
_DP_C = (0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0)
_DP_A = (
    (0.2,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0),
)
_DP_E = (
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)


def _adaptive_run(f, t0, x0, t_end, opts: SimOptions, h_cap=None, on_step=None):
    """Generic DP54 loop.  Returns (ts, xs, status, settle_time, fail_time).

    on_step(t, x) may flag settling; h_cap(t, x) bounds the next step.
    """
    t = float(t0)
    x = np.asarray(x0, dtype=float).copy()
    ts = [t]
    xs = [x.copy()]
    evals = sorted(v for v in opts.t_eval if t0 < v <= t_end)
    eval_i = 0

    k1 = f(t, x)
    if not np.all(np.isfinite(k1)):
        return ts, xs, "step_failure", None, t
    span = t_end - t0
    if opts.h0 is not None:
        h = opts.h0
    else:
        scale = np.linalg.norm(x) + 1.0
        rate = np.linalg.norm(k1) + 1e-12
        h = min(span * 1e-3, 0.01 * scale / rate)
        h = max(h, opts.min_step * 10)

    settle_first = None
    streak = 0
    status = "horizon"
    fail_time = None
    ks = [None] * 7

    for _ in range(opts.max_steps):
        if t >= t_end - 1e-14 * max(1.0, abs(t_end)):
            break
        hmax = t_end - t
        if h_cap is not None:
            hmax = min(hmax, h_cap(t, x))
        while eval_i < len(evals) and evals[eval_i] <= t + 1e-14 * max(1.0, abs(t)):
            eval_i += 1
        if eval_i < len(evals):
            hmax = min(hmax, evals[eval_i] - t)
        h_try = min(h, hmax)
        if h_try < opts.min_step:
            status = "step_failure"
            fail_time = t
            break

        ks[0] = k1
        bad = False
        for stage in range(1, 7):
            xa = x.copy()
            a_row = _DP_A[stage - 1]
            for idx, a in enumerate(a_row):
                if a != 0.0:
                    xa += h_try * a * ks[idx]
            ts_stage = t + (_DP_C[stage - 1] * h_try if stage < 6 else h_try)
            ks[stage] = f(ts_stage, xa)
            if not np.all(np.isfinite(ks[stage])):
                bad = True
                break
        if bad:
            h = h_try * 0.2
            if h < opts.min_step:
                status = "step_failure"
                fail_time = t
                break
            continue

        x_new = x.copy()
        for idx, b in enumerate(_DP_A[5]):
            if b != 0.0:
                x_new += h_try * b * ks[idx]
        k7 = f(t + h_try, x_new)
        err = np.zeros_like(x)
        for idx, e in enumerate(_DP_E):
            if e != 0.0:
                err += h_try * e * (ks[idx] if idx < 6 else k7)
        tol = opts.abs_tol + opts.rel_tol * np.maximum(np.abs(x), np.abs(x_new))
        err_norm = math.sqrt(float(np.mean((err / tol) ** 2)))

        if err_norm <= 1.0 or h_try <= opts.min_step * 10:
            t += h_try
            x = x_new
            k1 = k7 if np.all(np.isfinite(k7)) else f(t, x)
            ts.append(t)
            xs.append(x.copy())
            if on_step is not None:
                on_step(t, x)
            nx = float(np.linalg.norm(x))
            if nx <= opts.settle_radius:
                if streak == 0:
                    settle_first = t
                streak += 1
                if streak >= opts.settle_count:
                    status = "settled"
                    break
            else:
                streak = 0
                settle_first = None
            if not np.all(np.isfinite(x)):
                status = "step_failure"
                fail_time = t
                break
        factor = 0.9 * err_norm ** -0.2 if err_norm > 0 else 5.0
        h = h_try * min(5.0, max(0.2, factor))
    else:
        status = "step_failure"
        fail_time = t

    settle_time = settle_first if status == "settled" else None
    return ts, xs, status, settle_time, fail_time


def integrate(
    spec: ChainSpec,
    ctrl: Controller,
    dist: DisturbanceSpec,
    x0,
    opts: SimOptions | None = None,
    horizon: float = 100.0,
) -> Trajectory:
    """Integrate dx = J x + (d + b*u) e_n + d2 with u = ctrl.u(t, x + d1).

    Stops at min(horizon, ctrl.t_stop), on persistent settling, or on step
    failure.  Diagnostics from ctrl.diag are recorded at every accepted step.
    """
    opts = opts or SimOptions()
    n = spec.n
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,):
        raise ValueError(f"x0 must have shape ({n},)")
    t_end = min(horizon, ctrl.t_stop) if ctrl.t_stop is not None else horizon

    d, d1, d2, b = dist.d, dist.d1, dist.d2, dist.b

    def f(t, x):
        xm = x + d1(t) if d1 is not None else x
        u = ctrl.u(t, xm)
        dx = np.empty(n)
        dx[:-1] = x[1:]
        dx[-1] = d(t) + b(t) * u
        if d2 is not None:
            dx += d2(t)
        return dx

    def h_cap(t, x):
        cap = math.inf
        if ctrl.t_stop is not None:
            cap = min(cap, max(0.05 * (ctrl.t_stop - t), 1e-12))
        if ctrl.surfaces is not None:
            vals = ctrl.surfaces(x + d1(t) if d1 is not None else x)
            if min(abs(v) for v in vals) < 0.05:
                cap = min(cap, opts.switch_cap)
        return cap

    ts, xs, status, settle_time, fail_time = _adaptive_run(
        f, 0.0, x0, t_end, opts, h_cap=h_cap
    )

    t_arr = np.array(ts)
    x_arr = np.array(xs)
    u_arr = np.array(
        [ctrl.u(t, x + (d1(t) if d1 is not None else 0.0)) for t, x in zip(ts, xs)]
    )
    diag = {}
    if ctrl.diag is not None:
        keys = ctrl.diag(x_arr[0]).keys()
        cols = {k: np.empty(len(ts)) for k in keys}
        for i, x in enumerate(xs):
            row = ctrl.diag(x)
            for k in keys:
                cols[k][i] = row[k]
        diag = cols
    return Trajectory(
        t=t_arr, x=x_arr, u=u_arr, diag=diag, status=status,
        settle_time=settle_time, fail_time=fail_time,
    )


def integrate_warped(
    spec: ChainSpec,
    gain: LinearGain,
    ts: TimeScale,
    eta: float,
    dist: DisturbanceSpec,
    x0,
    opts: SimOptions | None = None,
    s_max: float = 30.0,
    s_eval: tuple = (),
) -> Trajectory:
    """Integrate the warped dynamics y' = (a D_r + J) y + (b u + d) e_n.

    u = -K' D_eta y; time is the warped clock s, y(0) = D_{lambda(0)} x0.
    The returned Trajectory is mapped back to x(t) with t = t_of_s(s); the
    warped samples are kept in diag["s"] and diag["y<i>"].  Only matched
    disturbances are meaningful here (d1/d2 are rejected).
    """
    if dist.d1 is not None or dist.d2 is not None:
        raise ValueError("warped integration supports matched disturbances only")
    opts = opts or SimOptions(rel_tol=1e-10, abs_tol=1e-13)
    if s_eval:
        opts = SimOptions(**{**opts.__dict__, "t_eval": tuple(s_eval)})
    n = spec.n
    w = pnf_weights(n)
    lam0 = ts.lam(0.0)
    y0 = dilate(w, lam0, np.asarray(x0, dtype=float))
    Dr = np.array([float(n - i) for i in range(n)])
    eta_pow = eta ** np.array([float(n - i) for i in range(n)])
    K = gain.K
    d, b = dist.d, dist.b

    def f(s, y):
        t = ts.t_of_s(s)
        u = -float(np.dot(K, eta_pow * y))
        dy = np.empty(n)
        dy[:-1] = y[1:]
        dy[-1] = b(t) * u + d(t)
        dy += ts.a(t) * Dr * y
        return dy

    ss, ys, status, settle_s, fail_s = _adaptive_run(f, 0.0, y0, s_max, opts)

    s_arr = np.array(ss)
    y_arr = np.array(ys)
    t_arr = np.array([ts.t_of_s(s) for s in ss])
    lam_arr = np.array([ts.lam(t) for t in t_arr])
    x_arr = y_arr / lam_arr[:, None] ** np.array([float(n - i) for i in range(n)])
    u_arr = np.array([-float(np.dot(K, eta_pow * y)) for y in ys])
    diag = {"s": s_arr}
    for i in range(n):
        diag[f"y{i + 1}"] = y_arr[:, i]
    settle_time = float(ts.t_of_s(settle_s)) if settle_s is not None else None
    return Trajectory(
        t=t_arr, x=x_arr, u=u_arr, diag=diag, status=status,
        settle_time=settle_time, fail_time=fail_s,
    )


def iss_metrics(
    traj: Trajectory,
    g: HongGainSet,
    sp: SwitchParams,
    tail_frac: float = 0.25,
    alt_exponent: bool = False,
) -> dict:
    """{limsup_Z, sup_norm, settle_time} with Z evaluated on the tail window."""
    if not 0 < tail_frac <= 1:
        raise ValueError("tail_frac must lie in (0, 1]")
    n_tail = max(1, int(math.ceil(tail_frac * len(traj.t))))
    tail = traj.x[-n_tail:]
    limsup = max(z_value(g, sp, x, alt_exponent=alt_exponent) for x in tail)
    return {
        "limsup_Z": float(limsup),
        "sup_norm": traj.sup_norm,
        "settle_time": traj.settle_time,
    }


def isotonic_fit(xs, ys):
    """Nondecreasing least-squares fit by pool-adjacent-violators."""
    order = np.argsort(np.asarray(xs, dtype=float))
    y = list(np.asarray(ys, dtype=float)[order])
    level = []
    weight = []
    members = []
    for v in y:
        level.append(v)
        weight.append(1.0)
        members.append(1)
        while len(level) > 1 and level[-2] > level[-1]:
            wv = weight[-2] + weight[-1]
            lv = (level[-2] * weight[-2] + level[-1] * weight[-1]) / wv
            level[-2:] = [lv]
            weight[-2:] = [wv]
            members[-2:] = [members[-2] + members[-1]]
    fit_sorted = np.repeat(level, members)
    out = np.empty(len(y))
    out[order] = fit_sorted
    return out
