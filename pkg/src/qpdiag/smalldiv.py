"""Diophantine certification and the homological-equation solver.

The frequency vector must keep n.omega away from integers,
dist(n.omega, Z) >= gamma / <n>^tau, or small divisors destroy the
iteration.  `diophantine_check` verifies this exhaustively on a finite
box and returns the effective constant; `solve_homological` divides the
smoothed off-diagonal part of a kernel by the potential divisor

    W(z, n) = (S_theta M~)(z, n) / (V(z) - V(z - n.omega)),  W(z, 0) = 0,

so that W V - V W = -S_theta M~.  The quotient is holomorphic on the
working strip (numerator holomorphic, divisor bounded below in modulus
off the potential poles, and at those poles the quotient tends to 0), so
its Fourier modes are recovered from real-axis samples by an FFT; the
sampling grid is offset by half a cell whenever a pole of either divisor
factor lands on a node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    GridError,
    NotMonotoneError,
    ResidualError,
    ResonanceError,
    ScheduleError,
    SolverBoundError,
)
from .kernel_algebra import FourierKernel, _trim, coeff_norm, smooth, zero_kernel
from .potentials import torus_dist


@dataclass(frozen=True)
class DiophantineCert:
    """Exhaustively verified small-divisor floor on a finite box.

    Guarantees dist(n.omega, Z) >= gamma_eff / <n>^tau for all
    0 < |n| <= n_check.
    """

    omega: tuple
    tau: float
    gamma_eff: float
    n_check: int


def _site_blocks(d, n_check, block=2048):
    """Yield integer site blocks covering |n| <= n_check, origin excluded."""
    if d == 1:
        n = np.arange(1, n_check + 1)
        yield np.stack([n], axis=-1)
        yield np.stack([-n], axis=-1)
        return
    rng = np.arange(-n_check, n_check + 1)
    rows = max(1, block // max(1, (2 * n_check + 1) ** (d - 1)))
    for start in range(0, len(rng), rows):
        first = rng[start : start + rows]
        grids = np.meshgrid(first, *([rng] * (d - 1)), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        keep = np.any(pts != 0, axis=1)
        if keep.any():
            yield pts[keep]


def diophantine_check(omega, tau, n_check, resonance_tol=1e-12):
    """Scan all 0 < |n| <= n_check and certify the Diophantine floor.

    Returns a DiophantineCert with gamma_eff = min <n>^tau dist(n.omega, Z);
    raises ResonanceError naming the offending n when the distance falls
    below ``resonance_tol`` (e.g. rational frequencies).
    """
    omega = tuple(float(w) for w in np.atleast_1d(np.asarray(omega, dtype=float)))
    d = len(omega)
    tau = float(tau)
    if tau <= d:
        raise ValueError(f"Diophantine exponent tau must exceed d={d}, got {tau}")
    n_check = int(n_check)
    if n_check < 1:
        raise ValueError("n_check must be at least 1")
    w = np.asarray(omega)
    gamma_eff = math.inf
    for block in _site_blocks(d, n_check):
        dots = block @ w
        dist = torus_dist(dots)
        if float(dist.min()) < resonance_tol:
            bad = block[int(np.argmin(dist))]
            raise ResonanceError(
                f"resonant site n={tuple(int(c) for c in bad)}: "
                f"dist(n.omega, Z) = {float(dist.min()):.3e} < {resonance_tol:g}",
                n=tuple(int(c) for c in bad),
            )
        weights = np.maximum(1, np.max(np.abs(block), axis=1)).astype(float) ** tau
        gamma_eff = min(gamma_eff, float(np.min(weights * dist)))
    return DiophantineCert(omega, tau, gamma_eff, n_check)


# -- homological solve ----------------------------------------------------


def _choose_offset(pole_x, n_z, node_tol=1e-6):
    """Grid offset avoiding pole abscissae; spec'd fallback is half a cell."""
    if pole_x.size == 0:
        return 0.0
    for off in (0.0, 0.5 / n_z):
        dist = torus_dist((pole_x - off) * n_z) / n_z
        if float(dist.min()) >= node_tol:
            return off
    raise GridError(
        f"divisor pole within {node_tol:g} of a sampling node even after "
        f"offsetting (n_z = {n_z})"
    )


def solve_homological(
    m,
    vbar,
    theta,
    cert,
    mode_floor=8,
    n_z_min=64,
    residual_tol=1e-9,
    bound_rtol=1e-9,
    floor_rtol=1e-6,
    node_tol=1e-6,
    fft_tol=1e-13,
    check_bound=True,
    full_output=False,
):
    """Solve W Vbar - Vbar W = -S_theta M~ sitewise by divided sampling.

    Parameters
    ----------
    m : FourierKernel
        Kernel whose smoothed off-diagonal part is to be eliminated; its
        own strip must be at least vbar.R.
    vbar : PerturbedPotential
        Divisor potential with positive mono_lb; the result lives on its
        strip.
    theta : float
        Smoothing radius; sites |n| > theta are untouched (W vanishes
        there and at n = 0).
    cert : DiophantineCert
        Must cover the radius: theta <= cert.n_check.

    Returns the kernel W (and an info dict with residual, divisor-floor
    margin, aliasing estimate and the norm-bound check when
    ``full_output``).
    """
    config = m.config
    theta = float(theta)
    if theta < 0.0:
        raise ValueError("theta must be nonnegative")
    if theta > cert.n_check:
        raise ScheduleError(
            f"theta = {theta} exceeds the certified box n_check = {cert.n_check}"
        )
    if not vbar.mono_lb > 0.0:
        raise NotMonotoneError("divisor potential has no positive monotonicity bound")
    if tuple(cert.omega) != tuple(config.omega):
        raise ScheduleError("Diophantine certificate frequency differs from the lattice")
    r_w = vbar.R
    if m.R < r_w * (1.0 - 1e-12):
        raise ScheduleError(f"kernel strip {m.R} narrower than divisor strip {r_w}")

    src = smooth(m.offdiagonal(), theta)
    if src.is_zero:
        w = zero_kernel(config, r_w, m.error_budget)
        if full_output:
            return w, {"residual": 0.0, "floor_margin": math.inf, "aliasing": 0.0,
                       "bound": 0.0, "measured": 0.0, "n_sites": 0}
        return w

    k_src = src.mode_radius
    k_out = k_src + max(int(mode_floor), 2 + (len(vbar.correction) - 1) // 2)
    n_z = 1
    while n_z < max(4 * (k_out + 1), n_z_min):
        n_z *= 2

    # sites to solve and their divisor shifts
    mask = np.any(src.data != 0, axis=-1)
    idx = np.argwhere(mask)
    sites = idx - src.site_radius                      # (n_sites, d)
    shifts = sites @ np.asarray(config.omega)          # n.omega per site
    shift_dist = torus_dist(shifts)

    # pole abscissae of both divisor factors, reduced mod 1
    pole_x = np.array([x0 for x0, y0 in vbar.base.poles() if abs(y0) < 1e-12])
    all_x = np.concatenate([pole_x, (pole_x[None, :] + shifts[:, None]).ravel()]) if pole_x.size else pole_x
    off = _choose_offset(np.mod(all_x, 1.0), n_z, node_tol)
    xs = off + np.arange(n_z) / n_z

    # numerator samples per site: trig polynomial evaluation
    kv = np.arange(-k_src, k_src + 1)
    phases = np.exp(2j * np.pi * np.outer(kv, xs))     # (2k+1, n_z)
    rows = src.data[mask]                              # (n_sites, 2k+1)
    num = rows @ phases                                # (n_sites, n_z)

    # divisor samples
    v0 = vbar.eval_unchecked(xs)
    va = vbar.eval_unchecked(xs[None, :] - shifts[:, None])
    div = v0[None, :] - va

    floor = vbar.mono_lb * shift_dist
    margin = float(np.min(np.abs(div) / floor[:, None]))
    if margin < 1.0 - floor_rtol:
        raise NotMonotoneError(
            f"divisor fell below mono_lb * dist(n.omega, Z) by factor {margin:.6f}"
        )

    quot = num / div
    modes = np.fft.fft(quot, axis=1) / n_z             # bin j ~ e^{-2 pi i j x}
    kw = np.arange(-k_out, k_out + 1)
    cols = np.mod(kw, n_z)
    w_rows = modes[:, cols] * np.exp(-2j * np.pi * kw * off)

    # modes below the FFT noise floor are rounding artefacts; keeping them
    # would let the strip weight e^{2 pi |k| R} amplify pure noise
    raw = np.abs(w_rows)
    noise = fft_tol * np.max(np.abs(quot), axis=1, keepdims=True)
    w_rows = np.where(raw < noise, 0.0, w_rows)

    # rebuild the kernel on the source site box, trimmed to kept modes
    data = np.zeros(src.data.shape[:-1] + (2 * k_out + 1,), dtype=np.complex128)
    data[mask] = w_rows
    lb = vbar.mono_lb
    budget = m.error_budget * float(np.max(1.0 / floor)) if len(floor) else m.error_budget
    w = _trim(config, r_w, data, budget, 0.0)
    # truncation estimate: largest raw magnitude just beyond the kept
    # window, weighted at the first discarded mode index
    k_kept = w.mode_radius if not w.is_zero else 0
    discarded = raw[:, : k_out - k_kept] if k_out > k_kept else raw[:, :0]
    if discarded.size:
        aliasing = float(discarded.max()) * math.exp(2.0 * math.pi * (k_kept + 1) * r_w)
    else:
        aliasing = 0.0
    w = FourierKernel(config, r_w, w.data, w.error_budget + aliasing)

    # sampled commutator residual: W(x,n) * div(x,n) must equal num(x,n)
    w_vals = w_rows @ np.exp(2j * np.pi * np.outer(kw, xs))
    scale = float(np.max(np.abs(num)))
    residual = float(np.max(np.abs(w_vals * div - num))) / scale if scale else 0.0
    if residual > residual_tol:
        raise ResidualError(
            f"commutator residual {residual:.3e} above tolerance {residual_tol:g}"
        )

    measured = coeff_norm(w, r_w, 0.0)
    bound = max(1.0, theta) ** cert.tau / (cert.gamma_eff * lb) * coeff_norm(m, m.R, 0.0)
    if check_bound and measured > bound * (1.0 + bound_rtol):
        raise SolverBoundError(
            f"homological norm {measured:.6g} exceeds the certified bound {bound:.6g}"
        )
    if full_output:
        return w, {
            "residual": residual,
            "floor_margin": margin,
            "aliasing": aliasing,
            "bound": bound,
            "measured": measured,
            "n_sites": len(sites),
            "n_z": n_z,
            "offset": off,
            "k_out": k_out,
        }
    return w
