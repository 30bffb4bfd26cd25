"""Iteration schedule and the Nash-Moser diagonalization driver.

One step of the scheme, starting from a potential V_l and a kernel M_l on
the strip R_l:

1. absorb the diagonal, V_{l+1} = V_l + M_l(., 0), shrinking the strip by
   Q_l and paying ||M_l(.,0)|| / Q_l out of the monotonicity bound;
2. solve the homological equation for W_{l+1} against V_{l+1} with
   smoothing radius theta_{l+1};
3. conjugate: e^{W}(V_l + M_l)e^{-W} = V_{l+1} + remainder, where the
   remainder series contains only bounded kernels (the unbounded
   potential is eliminated through the commutator identity);
4. inject the next dyadic section of the original kernel,
   M_{l+1} = U_{l+1} M^{(l+1)} U_{l+1}^{-1} + remainder.

The certified constants (Theta, eta_0, eps_0) solve a chain of coupled
inequalities whose right-hand sides contain e^{2 K(alpha_1)} with
K(s) = 2^{max(0,s-1)}; they are astronomically conservative, so they are
computed and verified in the log domain, while runnable end-to-end
iterations use the adaptive mode: user-chosen Theta and theta_0, measured
contraction, and the certified values recorded alongside for comparison.
Radii follow R_{l+1} = R_l - Q_l with Q_l = (4/|V|_R) theta_l^{(a0-a)/2};
in adaptive mode the Q_l are rescaled, if necessary, so that the total
strip loss never exceeds R/2.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    MonotonicityBudgetError,
    NonContractionError,
    ScheduleError,
    SeriesTruncationError,
)
from .kernel_algebra import (
    DROP_TOL,
    FourierKernel,
    coeff_norm,
    exp_kernel,
    product,
    sections,
    smooth,
    tame_constant,
    unit_kernel,
    zero_kernel,
)
from .potentials import PerturbedPotential, mono_constant, series_add, series_norm, update_constant

_LN2 = math.log(2.0)
_GRID_STEP = _LN2 / 8.0  # constants are picked from the grid {2^(j/8)}


def _grid_ceil(ln_req):
    """Smallest ln of a grid point 2^(j/8) at or above ln_req (j >= 1)."""
    j = max(1, math.ceil(ln_req / _GRID_STEP - 1e-12))
    return j * _GRID_STEP


@dataclass(frozen=True)
class Schedule:
    """All iteration constants, certified or adaptive.

    Large certified constants are carried in the log domain (``ln_theta_big``
    is ln Theta, etc.); the float fields overflow to inf harmlessly.
    """

    mode: str
    d: int
    alpha0: float
    alpha: float
    alpha1: float
    delta: float
    tau: float
    gamma: float
    R: float
    v_abs: float
    ln_theta_big: float
    ln_eta0: float
    ln_eps0: float
    ln_theta0: float
    q_scale: float = 1.0
    certified_logs: dict = field(default_factory=dict)
    contraction_target: float | None = 10.0
    offdiag_tol: float = 1e-12
    max_steps: int = 12
    kmax: int = 24
    exp_tol: float = 1e-15
    series_tol: float = 1e-14

    @property
    def Theta(self):
        try:
            return math.exp(self.ln_theta_big)
        except OverflowError:
            return math.inf

    @property
    def theta0(self):
        try:
            return math.exp(self.ln_theta0)
        except OverflowError:
            return math.inf

    @property
    def eta0(self):
        try:
            return math.exp(self.ln_eta0)
        except OverflowError:
            return math.inf

    @property
    def eps0(self):
        return math.exp(self.ln_eps0) if self.ln_eps0 < 700 else math.inf

    def ln_theta_l(self, l):
        return self.ln_theta0 + l * self.ln_theta_big

    def theta_l(self, l):
        try:
            return math.exp(self.ln_theta_l(l))
        except OverflowError:
            return math.inf

    def Q_l(self, l):
        beta = 0.5 * (self.alpha0 - self.alpha)  # negative
        ln_q = math.log(4.0 / self.v_abs) + beta * self.ln_theta_l(l)
        try:
            return self.q_scale * math.exp(ln_q)
        except OverflowError:
            return math.inf

    def R_l(self, l):
        r = self.R
        for j in range(l):
            r -= self.Q_l(j)
        return r

    def target_m(self, l, s):
        return 2.0 * self._pow_theta(l, s - self.alpha)

    def target_w(self, l, s):
        return self._pow_theta(l, s - self.alpha + self.tau + self.delta)

    def target_rem(self, l, s):
        return self._pow_theta(l + 1, s - self.alpha)

    def target_u(self, l, s):
        expo = max(0.0, s - self.alpha + self.tau + self.delta) + self.delta
        return self._pow_theta(l, expo)

    def _pow_theta(self, l, expo):
        try:
            return math.exp(expo * self.ln_theta_l(l))
        except OverflowError:
            return math.inf

    def s_grid(self):
        return (self.alpha0, self.alpha, self.alpha1)

    def inequalities(self):
        """Substitute the emitted constants back into their defining
        inequalities; log-domain lhs/rhs with slack = rhs - lhs (>= 0 ok)."""
        a0, a, a1, dl, tau = self.alpha0, self.alpha, self.alpha1, self.delta, self.tau
        k1 = tame_constant(a1)
        ln_t, ln_e = self.ln_theta_big, self.ln_eta0
        beta = 0.5 * (a - a0)
        ln_1m_tb = math.log1p(-math.exp(-beta * ln_t))
        ln_1m = math.log1p(-math.exp(-beta * ln_e)) if beta * ln_e < 700 else 0.0
        rows = [
            ("alpha", a0 + tau + 4 * dl, a),
            ("alpha1", 2 * a + dl, a1),
            ("sml1", -dl * ln_t, math.log(0.25) - 2.0 * k1),
            ("sml2", -a0 * ln_t, math.log(0.25)),
            ("tv_a", -beta * ln_e, math.log(self.R * self.v_abs / 8.0) + ln_1m_tb),
            ("tv_b", -beta * ln_e, ln_1m_tb),
            ("Tg_a", -dl * ln_e, math.log(self.gamma * self.v_abs / 4.0) - tau * ln_t),
            ("Tg_b", -dl * ln_e, -math.log(32.0 * k1) - 2.0 * k1 + (a0 - a) * ln_t),
            ("tT_a", -ln_e, -ln_t),
            ("tT_b", (a0 - a) * ln_e, (a0 - a - 3 * dl) * ln_t),
            ("e12", -dl * ln_e, -math.log(12.0 * k1 * k1)),
            ("e0", self.ln_eps0, 0.0),
        ]
        out = []
        for name, lhs, rhs in rows:
            if name in ("alpha", "alpha1"):
                ok = rhs > lhs
                slack = rhs - lhs
            else:
                ok = lhs <= rhs + 1e-12
                slack = rhs - lhs
            out.append({"name": name, "lhs": lhs, "rhs": rhs, "slack": slack, "ok": bool(ok)})
        return out

    def radii_ok(self, l_max=50):
        return all(self.R_l(l) >= 0.5 * self.R - 1e-12 for l in range(l_max + 1))


def _certified_logs(alpha0, alpha, alpha1, delta, tau, gamma, R, v_abs):
    """ln Theta, ln eta0, ln eps0 from the defining inequality chain."""
    k1 = tame_constant(alpha1)
    if not math.isfinite(k1) or 2.0 * k1 > 1e300:
        raise ScheduleError(f"K(alpha1) = {k1:g} overflows the schedule arithmetic")
    ln_theta_req = max((2.0 * k1 + math.log(4.0)) / delta, math.log(4.0) / alpha0)
    ln_theta = _grid_ceil(ln_theta_req)
    beta = 0.5 * (alpha - alpha0)
    ln_1m_tb = math.log1p(-math.exp(-beta * ln_theta))
    reqs = [
        -(math.log(R * v_abs / 8.0) + ln_1m_tb) / beta,
        -ln_1m_tb / beta,
        (math.log(4.0) + tau * ln_theta - math.log(gamma * v_abs)) / delta,
        (math.log(32.0 * k1) + 2.0 * k1 + 2.0 * beta * ln_theta) / delta,
        ln_theta,
        ln_theta * (alpha - alpha0 + 3.0 * delta) / (alpha - alpha0),
        math.log(12.0 * k1 * k1) / delta,
    ]
    ln_eta_req = max(reqs)
    if not math.isfinite(ln_eta_req):
        raise ScheduleError("eta0 requirement overflows; parameters out of range")
    ln_eta0 = _grid_ceil(ln_eta_req)
    ln_eps0 = (alpha0 - alpha) * ln_eta0
    return ln_theta, ln_eta0, ln_eps0


def make_schedule(
    alpha0,
    delta,
    tau,
    gamma,
    R,
    mono_lb,
    d=1,
    mode="adaptive",
    overrides=None,
    m_norm=None,
):
    """Build the iteration schedule.

    Certified mode picks alpha = alpha0 + tau + 5 delta,
    alpha1 = 2 alpha + 2 delta, then the smallest grid points 2^(j/8)
    satisfying the Theta and eta inequalities, and eps0 = eta0^(a0 - a).
    Adaptive mode takes Theta / theta0 / contraction target from
    ``overrides`` (theta0 defaults to the convergence coupling
    theta0^(-delta) = m_norm^(delta/(alpha - alpha0)), clamped to
    [4, 256]) and still records the certified logs for comparison.
    """
    overrides = dict(overrides or {})
    if min(alpha0, delta, tau, gamma, R, mono_lb) <= 0.0:
        raise ValueError("all schedule inputs must be positive")
    if tau <= d:
        raise ValueError(f"tau must exceed the dimension d={d}")
    if mode not in ("certified", "adaptive"):
        raise ValueError(f"unknown schedule mode {mode!r}")
    alpha = alpha0 + tau + 5.0 * delta
    alpha1 = 2.0 * alpha + 2.0 * delta
    ln_t_cert, ln_e_cert, ln_eps_cert = _certified_logs(
        alpha0, alpha, alpha1, delta, tau, gamma, R, mono_lb
    )
    certified = {"ln_Theta": ln_t_cert, "ln_eta0": ln_e_cert, "ln_eps0": ln_eps_cert}
    if mode == "certified":
        ln_theta_big, ln_eta0, ln_eps0 = ln_t_cert, ln_e_cert, ln_eps_cert
        ln_theta0 = ln_eta0
        q_scale = 1.0
    else:
        theta_big = float(overrides.pop("Theta", 4.0))
        if theta_big <= 1.0:
            raise ScheduleError(f"adaptive Theta must exceed 1, got {theta_big}")
        ln_theta_big = math.log(theta_big)
        theta0 = overrides.pop("theta0", None)
        if theta0 is None:
            if m_norm is not None and m_norm > 0.0:
                theta0 = min(256.0, max(4.0, m_norm ** (-1.0 / (alpha - alpha0))))
            else:
                theta0 = 8.0
        ln_theta0 = math.log(float(theta0))
        ln_eta0, ln_eps0 = ln_e_cert, ln_eps_cert
        beta = 0.5 * (alpha - alpha0)
        total_q = (4.0 / mono_lb) * math.exp(-beta * ln_theta0) / (1.0 - theta_big ** (-beta))
        q_scale = min(1.0, 0.5 * R / total_q)
    sched = Schedule(
        mode=mode,
        d=d,
        alpha0=alpha0,
        alpha=alpha,
        alpha1=alpha1,
        delta=delta,
        tau=tau,
        gamma=gamma,
        R=R,
        v_abs=mono_lb,
        ln_theta_big=ln_theta_big,
        ln_eta0=ln_eta0,
        ln_eps0=ln_eps0,
        ln_theta0=ln_theta0 if mode == "adaptive" else ln_e_cert,
        q_scale=q_scale if mode == "adaptive" else 1.0,
        certified_logs=certified,
    )
    allowed = {"contraction_target", "offdiag_tol", "max_steps", "kmax", "exp_tol", "series_tol"}
    bad = set(overrides) - allowed
    if bad:
        raise ScheduleError(f"unknown schedule overrides: {sorted(bad)}")
    if overrides:
        sched = replace(sched, **overrides)
    return sched


# -- conjugation ----------------------------------------------------------


def _series_tail(x, j):
    """Certified bound for sum_{m>j} x^m/m!."""
    if x == 0.0:
        return 0.0
    if x >= j + 2:
        return math.inf
    return math.exp((j + 1) * math.log(x) - math.lgamma(j + 2)) / (1.0 - x / (j + 2))


def conjugate(vbar, mtilde, w, theta, kmax=24, tol=1e-14, drop_tol=DROP_TOL, full_output=False):
    """Remainder of e^W (V + M) e^{-W} = Vbar + R'.

    Only bounded kernels appear: with A^k(P) the iterated commutator with
    W, the remainder is

        R' = sum_{k>=1} A^k(S_theta M~) / ((k-1)! (k+1))
           + sum_{k>=0} A^k((I - S_theta) M~) / k!

    (``vbar`` itself drops out through the commutator identity and is
    accepted only to witness which homological solve W came from).  The
    series is truncated at the first order whose certified geometric tail
    is below ``tol`` relative to the input size; SeriesTruncationError is
    raised if kmax is reached first.
    """
    del vbar  # eliminated analytically; see docstring
    s_part = smooth(mtilde, theta)
    h_part = mtilde - s_part
    if w.is_zero:
        if full_output:
            return h_part, {"orders": 0, "tail": 0.0}
        return h_part
    a = coeff_norm(w, w.R, 0.0)
    g = 2.0 * a  # K(0) = 1
    ns = coeff_norm(s_part, w.R, 0.0)
    nh = coeff_norm(h_part, w.R, 0.0)
    scale = ns + nh
    if scale == 0.0:
        out = zero_kernel(w.config, w.R, mtilde.error_budget)
        if full_output:
            return out, {"orders": 0, "tail": 0.0}
        return out
    acc = h_part
    b_term, c_term = s_part, h_part
    tail = math.inf
    orders = kmax
    for k in range(1, kmax + 1):
        b_term = product(w, b_term, drop_tol) - product(b_term, w, drop_tol)
        c_term = product(w, c_term, drop_tol) - product(c_term, w, drop_tol)
        coef_b = 1.0 / (math.factorial(k - 1) * (k + 1))
        coef_c = 1.0 / math.factorial(k)
        acc = acc + b_term * coef_b + c_term * coef_c
        tail = ns * g * _series_tail(g, k - 1) + nh * _series_tail(g, k)
        if tail < tol * scale:
            orders = k
            break
        if b_term.is_zero and c_term.is_zero:
            tail = 0.0
            orders = k
            break
    if tail > tol * scale:
        raise SeriesTruncationError(
            f"conjugation tail {tail:.3e} above {tol:g} * {scale:.3e} at order {kmax}"
        )
    out = FourierKernel(acc.config, acc.R, acc.data, acc.error_budget + tail)
    if full_output:
        return out, {"orders": orders, "tail": tail}
    return out


# -- iteration ------------------------------------------------------------


@dataclass(frozen=True)
class IterationState:
    v: PerturbedPotential
    m: FourierKernel
    u: FourierKernel
    u_inv: FourierKernel


@dataclass
class TraceRow:
    l: int
    theta: float
    theta_next: float
    r_strip: float
    r_next: float
    q: float
    mono_lb: float
    off_before: float
    off_after: float
    ratio: float
    drift: float
    budget_m: float
    budget_u: float
    m_norms: dict
    w_norms: dict
    rem_norms: dict
    u_norms: dict
    m_targets: dict
    w_targets: dict
    rem_targets: dict
    u_targets: dict

    def bounds_ok(self):
        """Measured <= paper target at every recorded weight."""
        pairs = [
            (self.m_norms, self.m_targets),
            (self.w_norms, self.w_targets),
            (self.rem_norms, self.rem_targets),
            (self.u_norms, self.u_targets),
        ]
        return all(
            measured[s] <= target[s] * (1.0 + 1e-9)
            for measured, target in pairs
            for s in measured
        )


@dataclass
class IterationTrace:
    rows: list = field(default_factory=list)

    def append(self, row):
        self.rows.append(row)

    def ratios(self):
        return [r.ratio for r in self.rows]

    def to_csv(self, path):
        if not self.rows:
            raise ValueError("empty trace")
        s_keys = sorted(self.rows[0].m_norms)
        cols = [
            "l", "theta", "theta_next", "r_strip", "r_next", "q", "mono_lb",
            "off_before", "off_after", "ratio", "drift", "budget_m", "budget_u",
        ]
        for group in ("m", "w", "rem", "u"):
            for s in s_keys:
                cols.append(f"{group}[s={s:g}]")
                cols.append(f"{group}_target[s={s:g}]")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for r in self.rows:
                row = [
                    r.l, f"{r.theta:.17g}", f"{r.theta_next:.17g}", f"{r.r_strip:.17g}",
                    f"{r.r_next:.17g}", f"{r.q:.17g}", f"{r.mono_lb:.17g}",
                    f"{r.off_before:.17g}", f"{r.off_after:.17g}", f"{r.ratio:.17g}",
                    f"{r.drift:.17g}", f"{r.budget_m:.17g}", f"{r.budget_u:.17g}",
                ]
                for norms, targets in (
                    (r.m_norms, r.m_targets), (r.w_norms, r.w_targets),
                    (r.rem_norms, r.rem_targets), (r.u_norms, r.u_targets),
                ):
                    for s in s_keys:
                        row.append(f"{norms[s]:.17g}")
                        row.append(f"{targets[s]:.17g}")
                writer.writerow(row)


@dataclass
class StepResult:
    state: IterationState
    w: FourierKernel
    remainder: FourierKernel
    row: TraceRow


def step(state, schedule, l, m_section, cert, drop_tol=DROP_TOL):
    """One Nash-Moser step; returns the new state, W, remainder and trace row."""
    from .smalldiv import solve_homological

    v, m, u, u_inv = state.v, state.m, state.u, state.u_inv
    r_l = schedule.R_l(l)
    r_next = schedule.R_l(l + 1)
    q_l = schedule.Q_l(l)
    theta_l = schedule.theta_l(l)
    theta_next = schedule.theta_l(l + 1)
    s_grid = schedule.s_grid()

    off_before = coeff_norm(m.offdiagonal(), r_l, schedule.alpha0)
    m_norms = {s: coeff_norm(m, r_l, s) for s in s_grid}

    v_next = update_constant(v, m.diagonal_series(), q_l)
    w = solve_homological(m, v_next, theta_next, cert, check_bound=False)
    remainder = conjugate(
        v_next, m.offdiagonal(), w, theta_next,
        kmax=schedule.kmax, tol=schedule.series_tol, drop_tol=drop_tol,
    )
    e_plus = exp_kernel(w, schedule.exp_tol, drop_tol=drop_tol)
    e_minus = exp_kernel(-1.0 * w, schedule.exp_tol, drop_tol=drop_tol)
    u_next = product(e_plus, u, drop_tol)
    u_inv_next = product(u_inv, e_minus, drop_tol)
    if m_section is None or m_section.is_zero:
        m_next = remainder
    else:
        m_next = product(product(u_next, m_section, drop_tol), u_inv_next, drop_tol) + remainder

    unit = unit_kernel(m.config, r_next)
    drift = coeff_norm(product(u_next, u_inv_next, drop_tol) - unit, r_next, 0.0)
    off_after = coeff_norm(m_next.offdiagonal(), r_next, schedule.alpha0)
    ratio = off_after / off_before if off_before > 0.0 else 0.0

    row = TraceRow(
        l=l,
        theta=theta_l,
        theta_next=theta_next,
        r_strip=r_l,
        r_next=r_next,
        q=q_l,
        mono_lb=v_next.mono_lb,
        off_before=off_before,
        off_after=off_after,
        ratio=ratio,
        drift=drift,
        budget_m=m_next.error_budget,
        budget_u=u_next.error_budget,
        m_norms=m_norms,
        w_norms={s: coeff_norm(w, r_next, s) for s in s_grid},
        rem_norms={s: coeff_norm(remainder, r_next, s) for s in s_grid},
        u_norms={s: coeff_norm(u_next - unit, r_next, s) for s in s_grid},
        m_targets={s: schedule.target_m(l, s) for s in s_grid},
        w_targets={s: schedule.target_w(l, s) for s in s_grid},
        rem_targets={s: schedule.target_rem(l, s) for s in s_grid},
        u_targets={s: schedule.target_u(l, s) for s in s_grid},
    )

    if (
        schedule.mode == "adaptive"
        and schedule.contraction_target
        and off_before > 0.0
        and off_after > schedule.offdiag_tol
        and ratio > 1.0 / schedule.contraction_target
    ):
        raise NonContractionError(
            f"step {l}: off-diagonal ratio {ratio:.3e} above "
            f"1/{schedule.contraction_target:g}",
            ratio=ratio,
        )

    state_next = IterationState(v_next, m_next, u_next, u_inv_next)
    return StepResult(state_next, w, remainder, row)


@dataclass
class DiagonalizationResult:
    u: FourierKernel
    u_inv: FourierKernel
    v_hat: PerturbedPotential
    trace: IterationTrace
    checks: dict
    converged: bool
    schedule: Schedule

    def summary(self):
        out = {
            "mode": self.schedule.mode,
            "converged": self.converged,
            "steps": len(self.trace.rows),
            "checks": self.checks,
            "schedule": {
                "alpha0": self.schedule.alpha0,
                "alpha": self.schedule.alpha,
                "alpha1": self.schedule.alpha1,
                "delta": self.schedule.delta,
                "tau": self.schedule.tau,
                "gamma": self.schedule.gamma,
                "R": self.schedule.R,
                "v_abs": self.schedule.v_abs,
                "ln_Theta": self.schedule.ln_theta_big,
                "ln_theta0": self.schedule.ln_theta0,
                "q_scale": self.schedule.q_scale,
                "certified_logs": self.schedule.certified_logs,
            },
        }
        return out

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, default=float)


def diagonalize(v, m, schedule, cert, stop=None, drop_tol=DROP_TOL):
    """Run the iteration until the off-diagonal norm is below tolerance.

    ``v`` needs a positive mono_lb (estimated via `mono_constant` when
    missing).  Returns U, U^{-1}, the diagonalized potential
    V_hat = V + sum_l M_l(., 0) and the per-step trace; the final checks
    (drift of U U^{-1}, the closeness bounds for U - 1 and V - V_hat, and
    the monotonicity floor) are recorded in ``checks``.
    """
    stop = dict(stop or {})
    offdiag_tol = stop.get("tol", schedule.offdiag_tol)
    max_steps = stop.get("max_steps", schedule.max_steps)

    if v.mono_lb <= 0.0:
        v = replace(v, mono_lb=mono_constant(v))
    s_high = schedule.alpha + 3.0 * schedule.delta
    m_high = coeff_norm(m, schedule.R, s_high)
    if schedule.mode == "certified":
        if m_high > 0.0 and math.log(m_high) >= schedule.ln_eps0:
            raise ScheduleError(
                f"certified mode requires ln N_(R,a+3d)(M) < ln eps0 = "
                f"{schedule.ln_eps0:.6g}; got ln = {math.log(m_high):.6g}"
            )

    support = m.site_support_radius()
    radii = [schedule.theta_l(0)]
    while radii[-1] < support:
        radii.append(schedule.theta_l(len(radii)))
    secs = sections(m, radii)

    state = IterationState(
        v, secs[0], unit_kernel(m.config, schedule.R), unit_kernel(m.config, schedule.R)
    )
    trace = IterationTrace()
    converged = False
    l = 0
    for l in range(max_steps):
        m_section = secs[l + 1] if l + 1 < len(secs) else None
        result = step(state, schedule, l, m_section, cert, drop_tol)
        trace.append(result.row)
        state = result.state
        all_injected = l + 1 >= len(secs) - 1
        if all_injected and result.row.off_after <= offdiag_tol:
            converged = True
            l += 1
            break
    else:
        l = max_steps

    # absorb the final diagonal so V_hat carries everything but the
    # below-tolerance off-diagonal remainder
    final_diag = state.m.diagonal_series()
    if np.any(final_diag):
        v_hat = update_constant(state.v, final_diag, schedule.Q_l(l))
    else:
        v_hat = state.v

    r_half = 0.5 * schedule.R
    unit = unit_kernel(m.config, r_half)
    s_u = max(0.0, schedule.alpha - schedule.tau - 4.0 * schedule.delta)
    theta_big = schedule.Theta
    c_const = 1.0 / (1.0 - theta_big ** (-3.0 * schedule.delta))
    k1_const = c_const * math.exp(tame_constant(schedule.alpha) * c_const)
    k2_const = 2.0 / (1.0 - theta_big ** (schedule.alpha0 - schedule.alpha))
    u_dev = coeff_norm(state.u - unit, r_half, s_u)
    u_inv_dev = coeff_norm(state.u_inv - unit, r_half, s_u)
    k1_rhs = k1_const * m_high ** (3.0 * schedule.delta / (schedule.alpha - schedule.alpha0))
    v_dev = series_norm(
        series_add(v_hat.correction, -np.asarray(v.correction)), r_half
    )
    drift = coeff_norm(product(state.u, state.u_inv, drop_tol) - unit, r_half, 0.0)
    checks = {
        "final_offdiag": coeff_norm(state.m.offdiagonal(), schedule.R_l(l), schedule.alpha0),
        "drift": drift,
        "u_dev": u_dev,
        "u_inv_dev": u_inv_dev,
        "k1_bound": k1_rhs,
        "k1_ok": bool(max(u_dev, u_inv_dev) <= k1_rhs),
        "v_dev": v_dev,
        "k2_bound": k2_const * m_high,
        "k2_ok": bool(v_dev <= k2_const * m_high),
        "mono_final": v_hat.mono_lb,
        "mono_floor": 0.5 * schedule.v_abs,
        "mono_ok": bool(v_hat.mono_lb >= 0.5 * schedule.v_abs),
        "m_norm_high": m_high,
    }
    return DiagonalizationResult(state.u, state.u_inv, v_hat, trace, checks, converged, schedule)
