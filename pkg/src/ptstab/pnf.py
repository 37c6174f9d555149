"""Robust linear gain synthesis and the time-varying (PNF) feedback.

The gain K and Lyapunov matrix S certify

    (J_n - b e_n K^T)^T S + S (J_n - b e_n K^T)  <=  -rho I   for all b >= b_lower,

which is verified exactly at the endpoint b = b_lower together with positive
semidefiniteness of the b-slope matrix (the family is affine in b).  A second
certificate (C0, rho0) extends the inequality to an additive perturbation
a*D_r with D_r = diag(n-i+1), |a| <= C0, which is what the warped dynamics
y' = (a D_r + J_n) y + (b u + d) e_n requires.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import jordan_block
from .timescale import TimeScale

__all__ = [
    "LinearGain",
    "SynthesisError",
    "companion_lift",
    "lyapunov_solve",
    "synthesize_linear_gain",
    "verify_lmi",
    "certify_perturbation",
    "pnf_feedback",
    "envelope_constants",
    "convergence_envelope",
    "noise_envelope",
]

# eigenvalue slack on all semidefiniteness checks
EIG_TOL = 1e-9


class SynthesisError(RuntimeError):
    pass


@dataclass
class LinearGain:
    """Certified robust gain: feedback vector K, Lyapunov matrix S, margins."""

    n: int
    K: np.ndarray
    S: np.ndarray
    rho: float
    b_lower: float
    C0: float = 0.0
    rho0: float = 0.0


def companion_lift(K) -> np.ndarray:
    """Upper-triangular Toeplitz polynomial in J_n with M e_n = K.

    M commutes with J_n and is invertible iff the last entry of K is nonzero.
    """
    K = np.asarray(K, dtype=float)
    n = len(K)
    J = jordan_block(n)
    M = np.zeros((n, n))
    Jp = np.eye(n)
    for p in range(n):
        M += K[n - 1 - p] * Jp
        Jp = Jp @ J
    return M


def lyapunov_solve(H: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve H^T X + X H = -Q by Kronecker vectorization (row-major vec)."""
    m = H.shape[0]
    I = np.eye(m)
    A = np.kron(H.T, I) + np.kron(I, H.T)
    X = np.linalg.solve(A, -Q.reshape(-1)).reshape(m, m)
    return 0.5 * (X + X.T)


def _closed_loop(n: int, K: np.ndarray, b: float) -> np.ndarray:
    C = jordan_block(n)
    C[n - 1, :] -= b * K
    return C


def _lmi_matrix(g: LinearGain, b: float) -> np.ndarray:
    C = _closed_loop(g.n, g.K, b)
    return C.T @ g.S + g.S @ C


def _slope_matrix(g: LinearGain) -> np.ndarray:
    # d/db of -(C^T S + S C) = K e_n^T S + S e_n K^T
    n = g.n
    en = np.zeros(n)
    en[n - 1] = 1.0
    E = np.outer(g.K, en) @ g.S + g.S @ np.outer(en, g.K)
    return 0.5 * (E + E.T)


def synthesize_linear_gain(n: int, b_lower: float) -> LinearGain:
    """Constructive synthesis of (K, S, rho) valid for every b >= b_lower.

    Base case n=1: S = 1/2, K = 1/b_lower, rho = 1.  For n >= 2 the gain is
    assembled in three frames: pole placement at {-1, ..., -(n-1)} fixes the
    vector Omega, a Lyapunov solve gives the (n-1)-block of S, the scalar k1
    is doubled until the endpoint eigenvalue check clears -1/2, and the
    result is mapped back through A_Omega and the companion lift.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not b_lower > 0:
        raise ValueError("b_lower must be positive")
    if n == 1:
        g = LinearGain(
            n=1,
            K=np.array([1.0 / b_lower]),
            S=np.array([[0.5]]),
            rho=1.0,
            b_lower=b_lower,
        )
        return g

    m = n - 1
    # char(s) = s^m - Omega_1 s^(m-1) - ... - Omega_m, roots placed at -1..-m
    coeffs = np.poly(np.arange(-1.0, -m - 1.0, -1.0))
    Omega = -coeffs[1:]
    H = jordan_block(m)
    H[:, 0] += Omega
    Sm = lyapunov_solve(H, np.eye(m))

    Sy = np.zeros((n, n))
    Sy[0, 0] = 1.0
    Sy[1:, 1:] = Sm

    A_Om = np.eye(n)
    A_Om[1:, 0] = Omega
    A_Om_inv = np.eye(n)
    A_Om_inv[1:, 0] = -Omega

    k1 = 1.0
    rho_y = None
    while True:
        Khat = np.concatenate(([k1], -k1 * Omega))
        Chat = jordan_block(n) - b_lower * np.outer(Khat, np.eye(n)[0])
        Ahat = A_Om @ Chat @ A_Om_inv
        G = Ahat.T @ Sy + Sy @ Ahat
        top = float(np.max(np.linalg.eigvalsh(0.5 * (G + G.T))))
        if top <= -0.5:
            rho_y = -top
            break
        k1 *= 2.0
        if k1 > 2.0**40:
            raise SynthesisError(f"k1 doubling cap reached for n={n}, b_lower={b_lower}")

    # pull the certificate back: y-frame -> e1-form -> e_n K^T form
    S1 = A_Om.T @ Sy @ A_Om
    K = Khat[::-1].copy()
    P = companion_lift(Khat)
    S = P.T @ S1 @ P
    S = 0.5 * (S + S.T)
    # the LMI is invariant under (S, rho) -> (S/c, rho/c); normalizing to unit
    # spectral norm keeps the absolute 1e-9 tolerances meaningful at every n
    S /= float(np.max(np.linalg.eigvalsh(S)))

    g = LinearGain(n=n, K=K, S=S, rho=1.0, b_lower=b_lower)
    # tighten rho to the margin actually achieved at the endpoint
    g.rho = -float(np.max(np.linalg.eigvalsh(_lmi_matrix(g, b_lower))))
    if g.rho <= 0:
        raise SynthesisError("mapped-back certificate lost definiteness")
    return g


def verify_lmi(g: LinearGain):
    """Exact one-sided-in-b check: endpoint eigenvalues plus slope PSD.

    Returns (passed, endpoint_margin, slope_min_eig) where endpoint_margin is
    max-eig of the LMI matrix at b_lower plus rho (pass requires <= 1e-9) and
    slope_min_eig is the smallest eigenvalue of the b-slope matrix (pass
    requires >= -1e-9).  Affinity in b makes the two checks equivalent to
    validity on all of [b_lower, inf).
    """
    M = _lmi_matrix(g, g.b_lower) + g.rho * np.eye(g.n)
    endpoint = float(np.max(np.linalg.eigvalsh(0.5 * (M + M.T))))
    slope = float(np.min(np.linalg.eigvalsh(_slope_matrix(g))))
    passed = endpoint <= EIG_TOL and slope >= -EIG_TOL
    return passed, endpoint, slope


def _perturbed_ok(g: LinearGain, a: float, rho0: float) -> bool:
    Dr = np.diag([float(g.n - i) for i in range(g.n)])
    M = _lmi_matrix(g, g.b_lower) + a * (Dr @ g.S + g.S @ Dr) + rho0 * np.eye(g.n)
    return float(np.max(np.linalg.eigvalsh(0.5 * (M + M.T)))) <= EIG_TOL


def certify_perturbation(g: LinearGain, rel_tol: float = 1e-3):
    """Largest C0 with the LMI holding for |a| <= C0 at margin rho0 = rho/2.

    The perturbation a*(D_r S + S D_r) is affine in a, so checking the two
    endpoints suffices.  Found by doubling then bisection.  Updates g in
    place and returns (C0, rho0).
    """
    ok, _, _ = verify_lmi(g)
    if not ok:
        raise ValueError("gain fails verify_lmi; cannot certify perturbation")
    rho0 = g.rho / 2.0

    def ok_at(c):
        return _perturbed_ok(g, c, rho0) and _perturbed_ok(g, -c, rho0)

    lo = 0.0
    hi = 1e-3
    while ok_at(hi):
        lo = hi
        hi *= 2.0
        if hi > 1e12:
            break
    if lo == 0.0 and not ok_at(hi):
        # shrink below the initial guess
        while hi > 1e-15 and not ok_at(hi):
            hi /= 2.0
        lo, hi = (hi, hi * 2.0) if hi > 1e-15 else (0.0, 1e-15)
    while hi - lo > rel_tol * max(hi, 1e-12):
        mid = 0.5 * (lo + hi)
        if ok_at(mid):
            lo = mid
        else:
            hi = mid
    g.C0 = lo
    g.rho0 = rho0
    return lo, rho0


def pnf_feedback(g: LinearGain, ts: TimeScale, eta: float, t: float, x) -> float:
    """Time-varying linear control u = -K^T D^r_{eta*lambda(t)} x."""
    lam = ts.lam(t)
    x = np.asarray(x, dtype=float)
    scales = (eta * lam) ** np.array([float(g.n - i) for i in range(g.n)])
    return -float(np.dot(g.K, scales * x))


def envelope_constants(g: LinearGain) -> dict:
    """Constants of the Lyapunov integration behind the decay envelopes.

    mu_rate = rho0/(2*max_eig(S)) is the exponential rate in the scaled
    warped time xi = eta*s; c_dist = 2*max_eig(S)*||S e_n||/(min_eig(S)*rho0)
    is the disturbance-to-state gain; c_init = sqrt(cond(S)) the transient
    factor.
    """
    if g.rho0 <= 0:
        raise ValueError("run certify_perturbation first (rho0 not set)")
    eig = np.linalg.eigvalsh(g.S)
    sig_min, sig_max = float(eig[0]), float(eig[-1])
    Sen = g.S[:, g.n - 1]
    mu_rate = g.rho0 / (2.0 * sig_max)
    c_dist = float(np.linalg.norm(Sen)) / (sig_min * mu_rate)
    return {
        "sig_min": sig_min,
        "sig_max": sig_max,
        "c_init": math.sqrt(sig_max / sig_min),
        "mu_rate": mu_rate,
        "c_dist": c_dist,
    }


def _require_eta(g: LinearGain, ts: TimeScale, eta: float):
    if eta < 1.0:
        raise ValueError("envelope requires eta >= 1")
    if g.C0 > 0 and eta < ts.a_sup() / g.C0 - 1e-12:
        raise ValueError(
            f"eta={eta} below C_a/C0={ts.a_sup() / g.C0:.4g}; certificate does not apply"
        )


def convergence_envelope(
    g: LinearGain, ts: TimeScale, eta: float, x0_norm: float, d_sup: float, t: float
) -> np.ndarray:
    """Per-coordinate bound on |x_i(t)| under matched disturbance |d| <= d_sup.

    Derived from the certificate by integrating the Lyapunov inequality for
    z = D^r_{eta*lambda} x in the time xi = eta*s(t):

        |x_i(t)| <= [c_init * max(eta*lam0, (eta*lam0)^n) * exp(-mu_rate*eta*s(t)) * ||x0||
                     + c_dist * d_sup] / (eta*lambda(t))^{n-i+1}
    """
    _require_eta(g, ts, eta)
    c = envelope_constants(g)
    lam0 = ts.lam(0.0)
    lam = ts.lam(t)
    s = ts.s(t)
    e0 = eta * lam0
    amp = c["c_init"] * max(e0, e0**g.n) * math.exp(-c["mu_rate"] * eta * s) * x0_norm
    amp += c["c_dist"] * d_sup
    powers = np.array([float(g.n - i) for i in range(g.n)])
    return amp / (eta * lam) ** powers


def noise_envelope(
    g: LinearGain,
    ts: TimeScale,
    eta: float,
    x0_norm: float,
    d1_sup: float,
    t: float,
    b_sup: float | None = None,
) -> np.ndarray:
    """Per-coordinate bound under measurement noise |d1(t)| <= d1_sup.

    The noisy feedback -K^T D^r_{eta*lambda}(x + d1) injects the matched
    disturbance -b K^T D^r_{eta*lambda} d1, whose envelope grows like
    max(eta*lam, (eta*lam)^n); coordinates i >= 2 therefore blow up as
    t -> T whenever d1_sup > 0 while i = 1 stays bounded.  b_sup defaults to
    g.b_lower (constant-gain plant).
    """
    _require_eta(g, ts, eta)
    if b_sup is None:
        b_sup = g.b_lower
    c = envelope_constants(g)
    lam0 = ts.lam(0.0)
    lam = ts.lam(t)
    s = ts.s(t)
    e0 = eta * lam0
    el = eta * lam
    amp = c["c_init"] * max(e0, e0**g.n) * math.exp(-c["mu_rate"] * eta * s) * x0_norm
    amp += c["c_dist"] * b_sup * float(np.sum(np.abs(g.K))) * max(el, el**g.n) * d1_sup
    powers = np.array([float(g.n - i) for i in range(g.n)])
    return amp / el**powers
