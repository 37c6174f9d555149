"""State-dependent homogeneity degree: fixed-time and prescribed-time control.

The degree kappa(x) saturates at +kappa0 outside {V0 <= 1+m}, at -kappa0
inside {V0 < 1-m} and interpolates affinely across the band, where V0 = x'Px
is the quadratic Lyapunov function of the kappa=0 cascade.  Outside the band
the closed loop is homogeneous of positive (resp. negative) degree, which
gives fixed-time convergence onto the band and finite-time convergence to
the origin, with the crossing controlled by a smallness condition on
kappa0.  A dilation of the state by mu >= T_settle/T_target converts the
fixed-time law into a prescribed-time one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .core import ChainSpec, dilate, pnf_weights
from .hong import (
    HongGainSet,
    _cascade_batch,
    alpha_of,
    certified_grid,
    hong_control,
    hong_lyapunov,
    hong_value,
)

__all__ = [
    "SwitchParams",
    "ExplicitConstants",
    "quadratic_form",
    "v0_value",
    "kappa_of_x",
    "fixed_time_feedback",
    "matched_robust_feedback",
    "settling_bound",
    "prescribed_time_feedback",
    "explicit_constants",
    "design_switch_params",
    "sample_v0_level",
    "sample_vkappa_level",
    "band_decay_margin",
    "vdot_with_control",
]


@dataclass
class SwitchParams:
    """Designed switching parameters plus the containment radii certificate."""

    m: float
    kappa0: float
    P: np.ndarray
    r_plus: float
    r_minus: float
    T_settle: float
    C: float
    E: float = 0.0
    b_upper: float = 1.0


@dataclass
class ExplicitConstants:
    X_n: float
    C1_n: float
    C2_n: float
    kappa0_of_m: float


def quadratic_form(g: HongGainSet) -> np.ndarray:
    """SPD matrix P with V0(x) = x'Px for the linear (kappa=0) cascade."""
    n = g.n
    rows = []
    prev = np.zeros(n)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        row = e - prev
        rows.append(row)
        prev = -g.ell[j] * row
    P = 0.5 * sum(np.outer(r, r) for r in rows)
    return 0.5 * (P + P.T)


def v0_value(P: np.ndarray, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x @ P @ x)


def kappa_of_x(sp: SwitchParams, x) -> float:
    """Continuous switching degree: saturated outside the band, affine inside."""
    v0 = v0_value(sp.P, x)
    if v0 > 1.0 + sp.m:
        return sp.kappa0
    if v0 < 1.0 - sp.m:
        return -sp.kappa0
    return sp.kappa0 * (1.0 + (v0 - (1.0 + sp.m)) / sp.m)


def fixed_time_feedback(g: HongGainSet, sp: SwitchParams, x, b_lower: float = 1.0) -> float:
    """u = omega^H_{kappa(x)}(x); for b_lower != 1 the last gain becomes ell_n/b_lower."""
    kap = kappa_of_x(sp, x)
    if b_lower == 1.0:
        u, _ = hong_control(g, kap, x)
    else:
        ell = np.array(g.ell, dtype=float)
        ell[-1] /= b_lower
        u, _ = hong_control(g, kap, x, ell=ell)
    return u


def matched_robust_feedback(
    g: HongGainSet, sp: SwitchParams, spec: ChainSpec, reg_eps: float, y
) -> float:
    """Two-mode sliding feedback (1/b_lower)(omega0 + D*sgn_eps(omega0)).

    omega0 switches between the +kappa0 and -kappa0 cascades on the surface
    V_{-kappa0} = 1; the set-valued sign is regularized as z/max(|z|, eps).
    """
    if not reg_eps > 0:
        raise ValueError("reg_eps must be positive")
    vm = hong_value(g, -sp.kappa0, y)
    kap = sp.kappa0 if vm > 1.0 else -sp.kappa0
    w0, _ = hong_control(g, kap, y)
    sgn = w0 / max(abs(w0), reg_eps)
    return (w0 + spec.d_bound * sgn) / spec.b_lower


def settling_bound(C: float, m: float, kappa0: float, r_plus: float, r_minus: float) -> float:
    """Settling-time bound of the switched loop from the three-phase estimate.

    (1/C) * [ r_plus^{-a+}/a+  - 2 ln(2m) + r_minus^{-a-}/(-a-) ] with
    a+ = alpha(kappa0) > 0 and a- = alpha(-kappa0) < 0.
    """
    ap = alpha_of(kappa0)
    am = alpha_of(-kappa0)
    return (r_plus ** (-ap) / ap - 2.0 * math.log(2.0 * m) + r_minus ** (-am) / (-am)) / C


def prescribed_time_feedback(
    g: HongGainSet, sp: SwitchParams, T_target: float, x, b_lower: float = 1.0
) -> float:
    """Fixed-time law evaluated on the chain-invariant dilation of the state.

    With mu = max(1, T_settle/T_target) and the (n, n-1, ..., 1) weights, the
    dilated state y = D_mu x runs the fixed-time loop in time s = mu*t, so x
    settles within T_settle/mu <= T_target.
    """
    if not T_target > 0:
        raise ValueError("T_target must be positive")
    mu = max(1.0, sp.T_settle / T_target)
    xm = dilate(pnf_weights(g.n), mu, x)
    return fixed_time_feedback(g, sp, xm, b_lower=b_lower)


def vdot_with_control(g: HongGainSet, kappa: float, x, u: float):
    """(dV_kappa/dt, V_kappa) along dx = Jx + u e_n for an arbitrary u."""
    V, grad = hong_lyapunov(g, kappa, x)
    x = np.asarray(x, dtype=float)
    dV = sum(grad[i] * x[i + 1] for i in range(g.n - 1)) + grad[g.n - 1] * u
    return float(dV), V


def z_value(g: HongGainSet, sp: SwitchParams, x, alt_exponent: bool = False) -> float:
    """Residual metric Z = min(V0, V_{+k0}^{1+a}, V_{-k0}^{1-a}), a = alpha(kappa0).

    alt_exponent uses 1+alpha(-kappa0) on the third term instead of 1-a.
    """
    v0 = v0_value(sp.P, x)
    vp = hong_value(g, sp.kappa0, x)
    vm = hong_value(g, -sp.kappa0, x)
    a = alpha_of(sp.kappa0)
    e_minus = 1.0 + alpha_of(-sp.kappa0) if alt_exponent else 1.0 - a
    return min(v0, vp ** (1.0 + a), vm**e_minus)


def sample_v0_level(P: np.ndarray, level: float, N: int, seed: int) -> np.ndarray:
    """N points on {x'Px = level}; exact by quadratic scaling."""
    n = P.shape[0]
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((N, n))
    q = np.einsum("ij,jk,ik->i", z, P, z)
    return z * np.sqrt(level / q)[:, None]


def sample_vkappa_level(g: HongGainSet, kappa: float, level: float, N: int, seed: int) -> np.ndarray:
    """N points on {V_kappa = level}; exact by the degree-(2+kappa) homogeneity."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((N, g.n))
    V = _cascade_batch(g.ell, kappa, z, grad=False)["V"]
    lam = (level / V) ** (1.0 / (2.0 + kappa))
    r = np.array([1.0 + i * kappa for i in range(g.n)])
    return z * lam[:, None] ** r[None, :]


def _band_samples(P: np.ndarray, m: float, N: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = P.shape[0]
    z = rng.standard_normal((N, n))
    q = np.einsum("ij,jk,ik->i", z, P, z)
    levels = rng.uniform(1.0 - m, 1.0 + m, size=N)
    return z * np.sqrt(levels / q)[:, None]


def band_decay_margin(
    g: HongGainSet,
    sp: SwitchParams,
    n_samples: int = 10000,
    seed: int = 21,
) -> tuple:
    """(max over band samples of 2|x'Pe_n| b_upper |omega_k(x) - omega_0|, C(1-m)/2).

    The first below the second forces dV0 <= -C V0 / 2 across the band.
    """
    X = _band_samples(sp.P, sp.m, n_samples, seed)
    en_col = sp.P[:, g.n - 1]
    worst = 0.0
    for x in X:
        kap = kappa_of_x(sp, x)
        u_k, _ = hong_control(g, kap, x)
        u_0, _ = hong_control(g, 0.0, x)
        lhs = 2.0 * abs(float(x @ en_col)) * sp.b_upper * abs(u_k - u_0)
        worst = max(worst, lhs)
    return worst, sp.C * (1.0 - sp.m) / 2.0


def explicit_constants(
    g: HongGainSet,
    m: float,
    kappa_points: int = 9,
    n_samples: int = 2000,
    seed: int = 33,
) -> ExplicitConstants:
    """Coordinate bound X_n, sweep constants C1/C2, and the kappa0(m) formula.

    X_n follows the level-by-level scalar inequality (positive root, 1.1
    inflation).  C1/C2 are direct maximizations of the control and Lyapunov
    deviations over band samples, inflated by 2.  kappa0_of_m evaluates

        (C(1-m) / (4 sqrt(1+m) sqrt(V0(e_n)) C1_n))^{2n/(n+1)}

    capped below 1/(2n) to keep the degree range open.
    """
    if not 0.0 < m < 1.0:
        raise ValueError("m must lie in (0, 1)")
    n = g.n
    grid = certified_grid(n, g.kappa_pos, kappa_points)

    X_n = 0.0
    for kap in grid:
        betas = [(2.0 + kap) / (1.0 + j * kap) - 1.0 for j in range(n)]
        b0 = betas[0]
        xj = ((1.0 + b0) * (1.0 + m)) ** (1.0 / (1.0 + b0))
        Xj = max(xj, g.ell[0] * xj ** (1.0 + kap)) * 1.1
        for j in range(1, n):
            b = betas[j]
            rj = 1.0 + j * kap
            gam = (1.0 + (j + 1) * kap) / (rj * b)
            rhs_c = (2.0 + b) * Xj ** (1.0 + b) + (1.0 + b) * (1.0 + m)
            rhs_l = (1.0 + b) * Xj**b

            def phi(t):
                return t ** (1.0 + b) - rhs_l * t - rhs_c

            hi = max(Xj, 1.0)
            while phi(hi) <= 0:
                hi *= 2.0
            root = brentq(phi, 0.0, hi, xtol=1e-12)
            xjb = 1.1 * root
            vjb = g.ell[j] * (xjb**b + Xj**b) ** gam
            Xj = max(Xj, xjb, vjb)
        X_n = max(X_n, Xj)

    C1 = 0.0
    C2 = 0.0
    sweep_n = min(n_samples, 800)  # scalar cascade sweep; extrema saturate early
    for kap in grid:
        if abs(kap) < 1e-12:
            continue
        pts = sample_vkappa_level(g, kap, 1.0, sweep_n, seed)
        # spread over the whole band by rescaling levels
        rng = np.random.default_rng(seed + 1)
        levels = rng.uniform(1.0 - m, 1.0 + m, size=sweep_n)
        r = np.array([1.0 + i * kap for i in range(n)])
        lam = levels ** (1.0 / (2.0 + kap))
        pts = pts * lam[:, None] ** r[None, :]
        rn = 1.0 + (n - 1) * kap
        denom = abs(kap) ** min(1.0, rn)
        for x in pts:
            uk, _ = hong_control(g, kap, x)
            u0, _ = hong_control(g, 0.0, x)
            C1 = max(C1, abs(uk - u0) / denom)
            C2 = max(C2, abs(hong_value(g, kap, x) - hong_value(g, 0.0, x)) / denom)
    C1 *= 2.0
    C2 *= 2.0

    P = quadratic_form(g)
    v0_en = float(P[n - 1, n - 1])
    kap0 = (g.C * (1.0 - m) / (4.0 * math.sqrt(1.0 + m) * math.sqrt(v0_en) * C1)) ** (
        2.0 * n / (n + 1.0)
    )
    kap0 = min(kap0, 0.999 / (2 * n))
    return ExplicitConstants(X_n=X_n, C1_n=C1, C2_n=C2, kappa0_of_m=kap0)


def design_switch_params(
    g: HongGainSet,
    m: float = 0.5,
    kappa0: float | None = None,
    b_upper: float = 1.0,
    n_samples: int = 4000,
    seed: int = 17,
) -> SwitchParams:
    """Pick (m, kappa0), certify the band decay, and bound the settling time.

    kappa0 defaults to the explicit formula, capped inside (0, 1/(2n)); it is
    halved (at most 40 times) until the sampled band-decay margin holds with
    the given b_upper.  r_plus/r_minus come from level-set extrema with 0.9
    and 1.1 safety factors.
    """
    P = quadratic_form(g)
    if kappa0 is None:
        kappa0 = explicit_constants(g, m, seed=seed).kappa0_of_m
    kappa0 = min(kappa0, 0.999 * g.kappa_pos, 0.999 / (2 * g.n))

    sp = SwitchParams(
        m=m, kappa0=kappa0, P=P, r_plus=0.0, r_minus=0.0, T_settle=0.0, C=g.C, b_upper=b_upper
    )
    for _ in range(40):
        worst, allowed = band_decay_margin(g, sp, n_samples=min(n_samples, 3000), seed=seed + 2)
        if worst <= allowed:
            break
        sp.kappa0 *= 0.5
    else:
        raise RuntimeError("band decay could not be certified; gains look inconsistent")

    plus_pts = sample_v0_level(P, 1.0 + m, n_samples, seed + 3)
    Vp = _cascade_batch(g.ell, sp.kappa0, plus_pts, grad=False)["V"]
    sp.r_plus = 0.9 * float(np.min(Vp))
    minus_pts = sample_v0_level(P, 1.0 - m, n_samples, seed + 4)
    Vm = _cascade_batch(g.ell, -sp.kappa0, minus_pts, grad=False)["V"]
    sp.r_minus = 1.1 * float(np.max(Vm))

    sphere_minus = sample_vkappa_level(g, -sp.kappa0, 1.0, n_samples, seed + 5)
    Vplus_on = _cascade_batch(g.ell, sp.kappa0, sphere_minus, grad=False)["V"]
    sp.E = 0.9 * float(np.min(Vplus_on))

    sp.T_settle = settling_bound(sp.C, m, sp.kappa0, sp.r_plus, sp.r_minus)
    return sp
