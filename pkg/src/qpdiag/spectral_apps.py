"""Finite-volume representations, localization and IDS experiments.

A kernel M and potential V act on the box |n| <= L through the dense
matrix

    H[n, l] = M(z - n.omega, l - n) + V(z - n.omega) delta_{nl},

self-adjoint for self-adjoint inputs and real admissible phase.  This is
the brute-force side of every check: eigenpairs come from a dense
Hermitian solver, localized eigenfunctions are read off the inverse
conjugation kernel as phi_n(i) = U^{-1}(z - i.omega, n - i), time
evolution is exact in the diagonalized frame, and the integrated density
of states is the phase measure of a sublevel set, computed by monotone
inversion and cross-checked by finite-volume eigenvalue counting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, RegularityError
from .kernel_algebra import coeff_norm, tame_constant
from .potentials import PhaseSet, invert_on_branch, torus_dist

#: eigensolver residual gate, relative to the spectral scale
ORACLE_RESIDUAL_TOL = 1e-10


def box_sites(d, L):
    """All lattice sites |n| <= L (max-norm) in lexicographic order, (S, d)."""
    rng = np.arange(-L, L + 1)
    grids = np.meshgrid(*([rng] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def site_weights(sites, q):
    """<n>^q along a site enumeration."""
    return np.maximum(1, np.max(np.abs(sites), axis=1)).astype(float) ** q


def weighted_norm(psi, sites, q):
    """l^2_q norm of a vector tabulated on the site enumeration."""
    w = site_weights(sites, q)
    return float(np.sqrt(np.sum(np.abs(np.asarray(psi)) ** 2 * w**2)))


def kernel_matrix(m, z, L):
    """Dense matrix of T_M(z) on the box: rows i, columns l, entry
    M(z - i.omega, l - i)."""
    config = m.config
    d = config.d
    sites = box_sites(d, L)
    n_sites = len(sites)
    phases = complex(z) - sites @ np.asarray(config.omega)
    kv = m.modes()
    mode_phase = np.exp(2j * np.pi * np.outer(phases, kv))  # (S, 2K+1)
    # pad the kernel's site box to radius 2L and gather by site difference
    pad = np.zeros((4 * L + 1,) * d + (len(kv),), dtype=np.complex128)
    nr = m.site_radius
    lo = 2 * L - nr
    if lo < 0:
        core = tuple(slice(nr - 2 * L, nr + 2 * L + 1) for _ in range(d))
        pad[...] = m.data[core + (slice(None),)]
    else:
        sl = tuple(slice(lo, lo + 2 * nr + 1) for _ in range(d))
        pad[sl + (slice(None),)] = m.data
    diff = sites[None, :, :] - sites[:, None, :] + 2 * L  # (S, S, d), >= 0
    flat = np.zeros((n_sites, n_sites), dtype=np.int64)
    stride = 1
    for ax in range(d - 1, -1, -1):
        flat += diff[:, :, ax] * stride
        stride *= 4 * L + 1
    rows = pad.reshape(-1, len(kv))[flat]  # (S, S, 2K+1)
    return np.einsum("ik,ijk->ij", mode_phase, rows)


@dataclass
class LatticeOperator:
    """Dense finite-volume operator on the box |n| <= L."""

    L: int
    z: complex
    config: object
    matrix: np.ndarray
    sites: np.ndarray
    hermitian_defect: float

    @property
    def n_sites(self):
        return len(self.sites)


def represent(m, v, z, L, phase_set=None, pole_eps=None):
    """Assemble T_M(z) + T_V(z) on the box |n| <= L.

    The phase must be admissible: inside the strip and away from the pole
    translates over the box (a default PhaseSet is built from ``v`` when
    none is supplied).  ``v`` may be None for the hopping part alone.
    """
    config = m.config
    z = complex(z)
    if v is not None:
        if phase_set is None:
            kwargs = {} if pole_eps is None else {"eps": pole_eps}
            phase_set = PhaseSet(v.R, v, config.omega, box=L + m.site_radius, **kwargs)
        phase_set.require(z)
    h = kernel_matrix(m, z, L)
    sites = box_sites(config.d, L)
    if v is not None:
        phases = z - sites @ np.asarray(config.omega)
        h = h + np.diag(v.eval_unchecked(phases))
    defect = float(np.max(np.abs(h - h.conj().T))) if h.size else 0.0
    return LatticeOperator(L, z, config, h, sites, defect)


@dataclass
class EigenResult:
    values: np.ndarray
    vectors: np.ndarray
    residual: float
    operator: LatticeOperator

    def centers(self):
        """Localization centers: the site of each eigenvector's peak."""
        peaks = np.argmax(np.abs(self.vectors), axis=0)
        return self.operator.sites[peaks]


def oracle_eigen(op, residual_tol=ORACLE_RESIDUAL_TOL):
    """Full dense Hermitian eigensolve with a residual certificate."""
    h = op.matrix
    scale = float(np.max(np.abs(h))) if h.size else 0.0
    if op.hermitian_defect > 1e-9 * max(scale, 1.0):
        raise DomainError(
            f"operator is not Hermitian (defect {op.hermitian_defect:.3e}); "
            "the dense oracle requires self-adjoint input"
        )
    sym = 0.5 * (h + h.conj().T)
    values, vectors = np.linalg.eigh(sym)
    resid = float(np.max(np.abs(sym @ vectors - vectors * values[None, :])))
    norm_h = float(np.max(np.abs(values))) if len(values) else 0.0
    if resid > residual_tol * max(norm_h, 1.0):
        raise DomainError(f"eigensolver residual {resid:.3e} above tolerance")
    return EigenResult(values, vectors, resid, op)


# -- operator norm constants ---------------------------------------------


def _shell_count(t, d):
    return (2 * t + 1) ** d - (2 * t - 1) ** d


def weight_sum(s, d, shells=100000):
    """Y(s)^2 = sum_n <n>^{-2s} with a certified integral tail bound."""
    if 2.0 * s <= d:
        raise RegularityError(f"sum of <n>^(-2s) diverges for s = {s}, d = {d}")
    t = np.arange(1, shells + 1, dtype=float)
    total = 1.0 + float(np.sum(_shell_count(t, d) * t ** (-2.0 * s)))
    tail = 2.0 * d * 3.0 ** (d - 1) * shells ** (d - 2.0 * s) / (2.0 * s - d)
    return total + tail


@dataclass(frozen=True)
class OperatorNormConstants:
    """X(s, q) with Y-sums, bounding the l^2_q operator norm by the kernel norm."""

    s: float
    q: float
    d: int
    y_s: float
    y_sq: float
    x: float


def operator_norm_constants(s, q, d=1, shells=100000):
    if s <= q + d / 2.0:
        raise RegularityError(f"need s > q + d/2 (s = {s}, q = {q}, d = {d})")
    y2_s = weight_sum(s, d, shells)
    y2_sq = weight_sum(s - q, d, shells)
    x = math.sqrt(tame_constant(2.0 * q) * (y2_s + y2_sq))
    return OperatorNormConstants(s, q, d, math.sqrt(y2_s), math.sqrt(y2_sq), x)


# -- localized eigenfunctions ---------------------------------------------


@dataclass
class EigenfunctionFamily:
    """phi_n(i) = U^{-1}(z - i.omega, n - i), tabulated on the box.

    ``table[i_idx, n_idx]`` holds phi_n(i); columns are the localized
    eigenfunction candidates.
    """

    table: np.ndarray
    sites: np.ndarray
    z: complex

    def decay_margin(self, rate, amplitude=2.0):
        """max over (n, i) of |phi_n(i)| / (amplitude <n-i>^{-rate}).

        <= 1 certifies the uniform power-law decay bound.
        """
        diff = np.maximum(
            1, np.max(np.abs(self.sites[:, None, :] - self.sites[None, :, :]), axis=-1)
        ).astype(float)
        envelope = amplitude * diff ** (-rate)
        return float(np.max(np.abs(self.table) / envelope))

    def residuals(self, op, v_hat):
        """Eigen-equation residuals ||H phi_n - V(z - n.omega) phi_n|| / ||phi_n||."""
        lam = np.real(v_hat.eval_unchecked(self.z - self.sites @ np.asarray(op.config.omega)))
        h = op.matrix
        num = h @ self.table - self.table * lam[None, :]
        den = np.linalg.norm(self.table, axis=0)
        return np.linalg.norm(num, axis=0) / np.where(den > 0, den, 1.0)

    def gram_min_eigenvalue(self):
        g = self.table.conj().T @ self.table
        return float(np.linalg.eigvalsh(g)[0])


def eigenfunctions(u_inv, z, L):
    """Tabulate the localized eigenfunction family on the box |n| <= L."""
    table = kernel_matrix(u_inv, z, L)
    return EigenfunctionFamily(table, box_sites(u_inv.config.d, L), complex(z))


@dataclass
class MatchReport:
    """Interior eigenvalue matching against the diagonalized potential."""

    mismatches: np.ndarray
    max_mismatch: float
    centers_ok: bool
    n_matched: int


def match_eigenvalues(eig, v_hat, x, interior=None):
    """Match interior finite-volume eigenvalues to {V_hat(x - n.omega)}.

    Eigenpairs whose localization center falls in the half-box
    |n| <= interior (default L/2) are sorted and paired with the sorted
    diagonal values over the same half-box; boundary-affected modes are
    excluded by construction.
    """
    op = eig.operator
    interior = op.L // 2 if interior is None else int(interior)
    centers = eig.centers()
    keep = np.max(np.abs(centers), axis=1) <= interior
    lam = np.sort(eig.values[keep])
    inner = box_sites(op.config.d, interior)
    targets = np.sort(
        np.real(v_hat.eval_unchecked(complex(x) - inner @ np.asarray(op.config.omega)))
    )
    centers_ok = False
    if len(lam) == len(targets):
        kept_centers = sorted(map(tuple, centers[keep]))
        centers_ok = kept_centers == sorted(map(tuple, inner))
    n = min(len(lam), len(targets))
    mism = np.abs(lam[:n] - targets[:n])
    return MatchReport(mism, float(mism.max()) if n else math.inf, centers_ok, n)


# -- dynamical localization ------------------------------------------------


@dataclass
class EvolveReport:
    t_grid: np.ndarray
    norms: np.ndarray
    psi_norm: float
    sup_ratio: float
    ceiling: float
    ceiling_chain: float
    trend_slope: float

    @property
    def bounded(self):
        return self.sup_ratio <= self.ceiling


def log_time_grid(n_points=10000, t_max=1e3, t_min=1e-3):
    """Logarithmic time grid with t = 0 prepended."""
    return np.concatenate([[0.0], np.geomspace(t_min, t_max, n_points - 1)])


def evolve(u, u_inv, v_hat, x, psi, t_grid, q, L, s_reg, u_norm=None):
    """Exact evolution in the diagonalized frame and its l^2_q budget.

    Computes e^{-itH} psi = U^{-1} diag(e^{-it V(x - n.omega)}) U psi on
    the box for every t, reports sup_t ||psi_t||_q / ||psi||_q, the
    analytic ceiling X(s_reg, q)^4 * N(U)^4 from the diagonalization
    chain, and the least-squares slope of the running maximum against
    log t (a growth trend detector).  ``s_reg`` is the kernel weight
    available after the conjugation loss; dynamical localization needs
    s_reg > q + d/2.
    """
    d = u.config.d
    if s_reg <= q + d / 2.0:
        raise RegularityError(
            f"weight q = {q} too large for kernel regularity s_reg = {s_reg} "
            f"(need s_reg > q + d/2)"
        )
    t_grid = np.asarray(t_grid, dtype=float)
    sites = box_sites(d, L)
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (len(sites),):
        raise ValueError(f"psi must be tabulated on the box ({len(sites)} sites)")
    mat_u = kernel_matrix(u, x, L)
    mat_ui = kernel_matrix(u_inv, x, L)
    lam = np.real(v_hat.eval_unchecked(complex(x) - sites @ np.asarray(u.config.omega)))
    psi0 = mat_u @ psi
    phases = np.exp(-1j * np.outer(lam, t_grid))           # (S, T)
    evolved = mat_ui @ (phases * psi0[:, None])            # (S, T)
    w = site_weights(sites, q)
    norms = np.sqrt(np.sum(np.abs(evolved) ** 2 * w[:, None] ** 2, axis=0))
    psi_norm = weighted_norm(psi, sites, q)
    x_const = operator_norm_constants(s_reg, q, d).x
    if u_norm is None:
        u_norm = coeff_norm(u, u.R, s_reg)
    ceiling = x_const**4 * u_norm**4
    ceiling_chain = x_const**2 * u_norm**2
    pos = t_grid > 0
    runmax = np.maximum.accumulate(norms[pos] / psi_norm)
    slope = float(np.polyfit(np.log(t_grid[pos]), runmax, 1)[0])
    return EvolveReport(
        t_grid=t_grid,
        norms=norms,
        psi_norm=psi_norm,
        sup_ratio=float(norms.max() / psi_norm),
        ceiling=float(ceiling),
        ceiling_chain=float(ceiling_chain),
        trend_slope=slope,
    )


# -- integrated density of states ------------------------------------------


def ids(v_hat, E, branch=None):
    """kappa(E): phase measure of {theta : V_hat(theta) <= E} in one period.

    Computed by monotone inversion on the branch between consecutive real
    poles; nondecreasing in E with range (0, 1).
    """
    lo, hi = branch if branch is not None else _ids_branch(v_hat)
    theta = invert_on_branch(v_hat, E, branch=(lo, hi))
    mid = 0.5 * (lo + hi)
    w = hi - lo
    increasing = np.real(v_hat.eval_unchecked(mid - 0.2 * w)) < np.real(
        v_hat.eval_unchecked(mid + 0.2 * w)
    )
    kappa = (theta - lo) if increasing else (hi - theta)
    return float(min(1.0, max(0.0, kappa)))


def _ids_branch(v_hat):
    poles = v_hat.base.real_poles()
    if not poles:
        raise DomainError("IDS by monotone inversion needs a potential with real poles")
    x0 = poles[0]
    return (x0 - 1.0, x0)


def ids_finite(m, v, x, L, E, eig=None):
    """Finite-volume eigenvalue-counting IDS on the box |n| <= L."""
    if eig is None:
        eig = oracle_eigen(represent(m, v, x, L))
    return float(np.sum(eig.values <= E) / eig.operator.n_sites)


@dataclass
class IDSReport:
    energies: np.ndarray
    kappa: np.ndarray
    kappa_finite: dict
    lipschitz_ratios: np.ndarray
    lipschitz_bound: float

    @property
    def monotone(self):
        return bool(np.all(np.diff(self.kappa) >= -1e-15))

    @property
    def lipschitz_ok(self):
        return bool(np.all(self.lipschitz_ratios <= self.lipschitz_bound + 1e-6))


def lipschitz_pairs(rng, n_pairs, e_lo=-10.0, e_hi=10.0, local_gap=1e-3):
    """Energy pairs mixing local and global gaps, half each."""
    n_local = n_pairs // 2
    e1 = rng.uniform(e_lo, e_hi, size=n_pairs)
    gaps = np.empty(n_pairs)
    gaps[:n_local] = local_gap
    gaps[n_local:] = rng.uniform(local_gap, e_hi - e_lo, size=n_pairs - n_local)
    signs = rng.choice([-1.0, 1.0], size=n_pairs)
    e2 = np.clip(e1 + signs * gaps, e_lo - 5.0, e_hi + 5.0)
    return e1, e2


def ids_report(v_hat, v_abs, energies, m=None, v=None, x=None, box_list=(),
               n_pairs=1000, seed=0):
    """IDS curve, Lipschitz sampling and optional finite-volume columns.

    ``v_abs`` is the monotonicity constant of the unperturbed potential;
    the Lipschitz bound asserted is 2 / v_abs.
    """
    energies = np.asarray(energies, dtype=float)
    kappa = np.array([ids(v_hat, e) for e in energies])
    kappa_finite = {}
    for L in box_list:
        eig = oracle_eigen(represent(m, v, x, L))
        kappa_finite[L] = np.array([ids_finite(m, v, x, L, e, eig=eig) for e in energies])
    rng = np.random.default_rng(seed)
    e1, e2 = lipschitz_pairs(rng, n_pairs)
    k1 = np.array([ids(v_hat, e) for e in e1])
    k2 = np.array([ids(v_hat, e) for e in e2])
    ratios = np.abs(k1 - k2) / np.abs(e1 - e2)
    return IDSReport(energies, kappa, kappa_finite, ratios, 2.0 / v_abs)
