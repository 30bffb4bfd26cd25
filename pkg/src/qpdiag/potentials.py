"""Monotone meromorphic potentials and their perturbations.

A base potential is one of three 1-periodic meromorphic closed forms:

* ``tangent``   tan(pi z), real poles at 1/2 + Z;
* ``cexp``      exp(2 pi i z), pole-free but not self-adjoint;
* ``rational``  P(u)/Q(u) with u = exp(2 pi i z) and coefficient lists.

A perturbed potential adds a holomorphic correction given by a finite
Fourier mode list h, V(z) = base(z) + sum_k h[k] exp(2 pi i k z), keeps a
strip half-width R, and carries a lower bound ``mono_lb`` for the
monotonicity constant

    inf_{z in strip, a real} |V(z) - V(z - a)| / dist(a, Z),

the quantity that floors every small divisor.  Strip shrinks never
re-project coefficients; they only change the norm weight.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DomainError,
    MonotonicityBudgetError,
    NotMonotoneError,
    PhaseExcludedError,
    PoleProximityError,
    ScheduleError,
)

#: default admissibility distance to a pole (torus metric in Re, abs in Im)
POLE_EPS = 1e-8


def torus_dist(a):
    """dist(a, Z) elementwise."""
    a = np.asarray(a, dtype=float)
    return np.abs(a - np.round(a))


# -- 1-variable Fourier mode lists --------------------------------------


def series_radius(h):
    return (len(h) - 1) // 2


def series_norm(h, R):
    """sum_k |h_k| exp(2 pi |k| R)."""
    h = np.asarray(h)
    if h.size == 0:
        return 0.0
    k = np.arange(-series_radius(h), series_radius(h) + 1)
    return float(np.sum(np.abs(h) * np.exp(2.0 * np.pi * np.abs(k) * R)))


def series_eval(h, z):
    """sum_k h_k exp(2 pi i k z) for scalar or array z."""
    h = np.asarray(h, dtype=complex)
    if h.size == 0 or not h.any():
        return np.zeros_like(np.asarray(z, dtype=complex)) if np.ndim(z) else 0.0
    k = np.arange(-series_radius(h), series_radius(h) + 1)
    z = np.asarray(z, dtype=complex)
    return np.tensordot(np.exp(2j * np.pi * z[..., None] * k), h, axes=([-1], [0]))


def series_add(h1, h2):
    k = max(series_radius(h1), series_radius(h2))
    out = np.zeros(2 * k + 1, dtype=complex)
    for h in (h1, h2):
        r = series_radius(h)
        out[k - r : k + r + 1] += np.asarray(h, dtype=complex)
    return out


def series_is_hermitian(h, tol=1e-12):
    """h_{-k} = conj(h_k), i.e. the series is real on the real axis."""
    h = np.asarray(h, dtype=complex)
    scale = float(np.abs(h).max(initial=0.0)) or 1.0
    return bool(np.allclose(h[::-1], np.conj(h), atol=tol * scale, rtol=0.0))


# -- base potentials -----------------------------------------------------


@dataclass(frozen=True)
class BasePotential:
    """Closed-form 1-periodic meromorphic base."""

    kind: str
    num: tuple = ()
    den: tuple = ()

    def __post_init__(self):
        if self.kind not in ("tangent", "cexp", "rational"):
            raise ValueError(f"unknown base potential kind {self.kind!r}")
        if self.kind == "rational":
            num = tuple(complex(c) for c in self.num)
            den = tuple(complex(c) for c in self.den)
            if not den or not any(den):
                raise ValueError("rational base needs a nonzero denominator")
            object.__setattr__(self, "num", num)
            object.__setattr__(self, "den", den)

    def eval_raw(self, z):
        """Closed-form value; no pole guarding.  Accepts arrays."""
        z = np.asarray(z, dtype=complex)
        if self.kind == "tangent":
            with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
                return np.tan(np.pi * z)
        if self.kind == "cexp":
            return np.exp(2j * np.pi * z)
        u = np.exp(2j * np.pi * z)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            return np.polyval(list(self.num), u) / np.polyval(list(self.den), u)

    def poles(self):
        """Pole representatives (x0, y0) with x0 in [0,1); translates by Z."""
        if self.kind == "tangent":
            return ((0.5, 0.0),)
        if self.kind == "cexp":
            return ()
        roots = np.roots(list(self.den)) if len(self.den) > 1 else np.array([])
        out = []
        for r in roots:
            if abs(r) < 1e-14:
                continue  # u = 0 corresponds to Im z = +infinity
            x0 = (cmath.phase(r) / (2.0 * math.pi)) % 1.0
            y0 = -math.log(abs(r)) / (2.0 * math.pi)
            out.append((x0, y0))
        return tuple(sorted(out))

    def real_poles(self):
        """Real pole representatives in [0, 1)."""
        return tuple(x for x, y in self.poles() if abs(y) < 1e-12)

    def pole_distance(self, z):
        """Distance of z to the nearest pole translate (inf if pole-free)."""
        ps = self.poles()
        if not ps:
            return math.inf
        z = complex(z)
        return min(
            math.hypot(float(torus_dist(z.real - x0)), z.imag - y0) for x0, y0 in ps
        )


def tangent_base():
    return BasePotential("tangent")


def cexp_base():
    return BasePotential("cexp")


def rational_base(num, den):
    return BasePotential("rational", tuple(num), tuple(den))


# -- perturbed potentials ------------------------------------------------


@dataclass(frozen=True)
class PerturbedPotential:
    """Base potential plus a holomorphic Fourier correction.

    ``mono_lb`` is the working lower bound for the monotonicity constant
    at strip R; it must stay positive whenever the potential is used as a
    divisor.  Updates via `update_constant` shrink the strip and decrease
    the bound according to the perturbation budget.
    """

    base: BasePotential
    correction: np.ndarray
    R: float
    mono_lb: float = 0.0

    def __post_init__(self):
        corr = np.asarray(self.correction, dtype=complex)
        if corr.ndim != 1 or corr.size % 2 == 0:
            raise ValueError("correction must be a centred odd-length mode list")
        corr = np.ascontiguousarray(corr)
        corr.setflags(write=False)
        object.__setattr__(self, "correction", corr)
        if self.R <= 0.0:
            raise ValueError(f"strip half-width must be positive, got {self.R}")

    # -- evaluation ----------------------------------------------------

    def eval_unchecked(self, z):
        """base(z) + correction(z); arrays allowed, poles not guarded."""
        return self.base.eval_raw(z) + series_eval(self.correction, z)

    def eval(self, z, pole_eps=POLE_EPS):
        """Value at a single point; rejects near-pole arguments.

        Raises PoleProximityError (with the offending distance) instead of
        returning huge values.
        """
        z = complex(z)
        if abs(z.imag) > self.R * (1.0 + 1e-12):
            raise DomainError(f"z = {z} outside the strip |Im z| <= {self.R}")
        dist = self.base.pole_distance(z)
        if dist < pole_eps:
            raise PoleProximityError(
                f"z = {z} is within {dist:.3e} of a pole (eps = {pole_eps:g})",
                distance=dist,
            )
        return complex(self.eval_unchecked(z))

    def correction_norm(self, R=None):
        return series_norm(self.correction, self.R if R is None else R)

    @property
    def selfadjoint(self):
        """True when V* = V, i.e. V is real-valued on the real axis."""
        if not series_is_hermitian(self.correction):
            return False
        if self.base.kind == "tangent":
            return True
        if self.base.kind == "cexp":
            return False
        xs = np.linspace(0.05, 0.95, 17)
        ok = []
        for x in xs:
            if self.base.pole_distance(x) < 1e-6:
                continue
            v = complex(self.base.eval_raw(x))
            ok.append(abs(v.imag) <= 1e-10 * max(1.0, abs(v)))
        return bool(ok) and all(ok)


def potential(base, R, correction=(0.0,), mono_lb=0.0):
    """Convenience constructor."""
    return PerturbedPotential(base, np.asarray(correction, dtype=complex), float(R), float(mono_lb))


# -- monotonicity constant ----------------------------------------------


def mono_constant(v, R=None, grid=64, pole_eps=POLE_EPS, full_output=False):
    """Grid estimate of the monotonicity constant of V on the strip D_R.

    Minimises |V(z) - V(z-a)| / dist(a, Z) over a grid with at least
    ``grid`` points per unit in Re z, Im z and a.  The result is an
    estimate (grid minimum), not a certificate, and is monotone
    nonincreasing in R on a fixed grid family.
    """
    R = v.R if R is None else float(R)
    if R > v.R * (1.0 + 1e-12):
        raise DomainError(f"requested strip R={R} beyond the stored R={v.R}")
    if grid < 64:
        raise ValueError("grid resolution must be at least 64 per unit")
    gx = int(grid)
    ny = max(3, int(math.ceil(2.0 * R * grid)) + 1)
    xs = np.arange(gx) / gx
    ys = np.linspace(-R, R, ny)
    zs = (xs[:, None] + 1j * ys[None, :]).ravel()
    # prune near-pole sample points once
    ps = v.base.poles()
    if ps:
        dist = np.full(zs.shape, np.inf)
        for x0, y0 in ps:
            dist = np.minimum(dist, np.hypot(torus_dist(zs.real - x0), zs.imag - y0))
        zs = zs[dist >= pole_eps]
    vz = v.eval_unchecked(zs)
    best = math.inf
    arg = None
    for j in range(1, gx):
        a = j / gx
        za = zs - a
        if ps:
            dist = np.full(za.shape, np.inf)
            for x0, y0 in ps:
                dist = np.minimum(dist, np.hypot(torus_dist(za.real - x0), za.imag - y0))
            sel = dist >= pole_eps
        else:
            sel = slice(None)
        diff = np.abs(vz[sel] - v.eval_unchecked(za[sel])) / float(torus_dist(a))
        diff = diff[np.isfinite(diff)]
        if diff.size:
            m = float(diff.min())
            if m < best:
                best = m
                arg = a
    if not math.isfinite(best) or best <= 0.0:
        raise NotMonotoneError(
            f"monotonicity estimate {best} not positive at grid resolution {grid}"
        )
    if full_output:
        return best, {"argmin_a": arg, "grid": grid, "R": R}
    return best


def update_constant(v, m0, Q):
    """Absorb a diagonal series m0 into V, shrinking the strip by Q.

    Requires the perturbation budget ||m0||_{R,0} < Q * mono_lb; the new
    bound is mono_lb - ||m0||_{R,0} / Q on the strip R - Q.
    """
    Q = float(Q)
    if Q <= 0.0:
        raise ValueError(f"strip shrink Q must be positive, got {Q}")
    if v.R - Q <= 0.0:
        raise ScheduleError(f"strip exhausted: R={v.R}, Q={Q}")
    m0 = np.asarray(m0, dtype=complex)
    nm0 = series_norm(m0, v.R)
    if not nm0 < Q * v.mono_lb:
        raise MonotonicityBudgetError(
            f"diagonal norm {nm0:g} >= Q*mono_lb = {Q * v.mono_lb:g}; "
            "shrink schedule too aggressive"
        )
    return PerturbedPotential(
        v.base,
        series_add(v.correction, m0),
        v.R - Q,
        v.mono_lb - nm0 / Q,
    )


# -- monotone inversion ---------------------------------------------------


def _default_branch(v):
    poles = v.base.real_poles()
    if not poles:
        raise DomainError("potential has no real poles; no monotone branch to invert on")
    x0 = poles[0]
    return (x0 - 1.0, x0)


def invert_on_branch(v, E, branch=None, tol=1e-12, pole_eps=1e-15):
    """The unique theta on the branch with V(theta) = E, by bisection.

    The branch is the interval between consecutive real poles (default:
    the translate of the first pole representative that contains 0 for
    the tangent base).  Requires a self-adjoint potential.
    """
    if not v.selfadjoint:
        raise DomainError("invert_on_branch needs a self-adjoint potential")
    E = float(E)
    lo, hi = branch if branch is not None else _default_branch(v)
    if not hi > lo:
        raise ValueError(f"empty branch ({lo}, {hi})")
    width = hi - lo

    def f(t):
        return float(np.real(v.eval_unchecked(t)))

    increasing = f(lo + 0.4 * width) < f(lo + 0.6 * width)
    lo_target, hi_target = (-math.inf, math.inf) if increasing else (math.inf, -math.inf)
    # move the bracket endpoints toward the poles until they straddle E
    margin = 0.25
    a = lo + margin * width
    b = hi - margin * width
    for _ in range(200):
        fa, fb = f(a), f(b)
        straddle = (fa <= E <= fb) if increasing else (fb <= E <= fa)
        if straddle:
            break
        margin *= 0.5
        a = lo + margin * width
        b = hi - margin * width
        if margin * width < pole_eps:
            raise DomainError(f"could not bracket E={E} on branch ({lo}, {hi})")
    else:
        raise DomainError(f"could not bracket E={E} on branch ({lo}, {hi})")
    for _ in range(200):
        mid = 0.5 * (a + b)
        if b - a < tol:
            return mid
        goes_right = (f(mid) < E) if increasing else (f(mid) > E)
        if goes_right:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


# -- phase admissibility ---------------------------------------------------


@dataclass(frozen=True)
class PhaseSet:
    """Admissible phases: inside the strip and off all pole translates.

    z is admissible iff |Im z| <= R_prime and z - n.omega stays at least
    ``eps`` away from every pole of the base potential for all sites in
    the working box |n| <= box.
    """

    R_prime: float
    potential: PerturbedPotential
    omega: tuple
    box: int
    eps: float = POLE_EPS

    def _sites(self):
        d = len(self.omega)
        rng = np.arange(-self.box, self.box + 1)
        grids = np.meshgrid(*([rng] * d), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def admissible(self, z):
        z = complex(z)
        if abs(z.imag) > self.R_prime * (1.0 + 1e-12):
            return False
        ps = self.potential.base.poles()
        if not ps:
            return True
        shifts = self._sites() @ np.asarray(self.omega)
        w = z - shifts
        for x0, y0 in ps:
            d = np.hypot(torus_dist(w.real - x0), w.imag - y0)
            if float(d.min()) < self.eps:
                return False
        return True

    def require(self, z):
        if not self.admissible(z):
            raise PhaseExcludedError(
                f"phase {z} is excluded (pole translate within {self.eps:g} "
                f"over the box |n| <= {self.box})"
            )
        return complex(z)
