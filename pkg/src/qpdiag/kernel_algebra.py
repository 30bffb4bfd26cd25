"""Twisted kernel algebra on Z^d with strip-weighted coefficient norms.

A kernel stores complex coefficients ``c[n, k]`` on a centred box of
lattice sites ``|n| <= N`` (max-norm) and Fourier modes ``|k| <= K``,
representing the 1-periodic, strip-holomorphic function family

    M(z, n) = sum_k c[n, k] exp(2 pi i k z).

The algebra product is twisted by the frequency vector ``omega``:

    (M1 M2)(z, n) = sum_l M1(z, l) * M2(z - l.omega, n - l),

which on coefficients becomes a site/mode convolution carrying the
unimodular factor exp(-2 pi i k2 (l.omega)); this realises the shifted
argument exactly on Fourier modes.  The involution is

    M*(z, n) = conj(M(conj(z) - n.omega, -n)).

All norms are the coefficient norm

    N_{R,s}(M) = sum_n <n>^s sum_k |c[n, k]| exp(2 pi |k| R),

a computable upper bound for the strip sup-norm
sup_{|Im z|<R} sum_n |M(z, n)| <n>^s that satisfies the same tame and
submultiplicative estimates with K(s) = 2^{max(0, s-1)}.

Kernels are immutable values: arrays are stored read-only and every
operation returns a fresh kernel.  Products trim coefficients whose
contribution to N_{R,0} falls below a relative drop threshold; the
dropped mass is accumulated in ``error_budget`` so that truncation stays
accounted for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import (
    ConfigMismatchError,
    KernelFormatError,
    ScheduleError,
    SeriesDivergenceError,
    StripExceededError,
)

#: relative threshold below which product coefficients are dropped
DROP_TOL = 1e-16


def tame_constant(s):
    """K(s) = 2^max(0, s-1), the constant in the tame product estimate."""
    return 2.0 ** max(0.0, s - 1.0)


@dataclass(frozen=True)
class LatticeConfig:
    """Lattice dimension and frequency vector (components in [0, 1])."""

    d: int
    omega: tuple

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"lattice dimension must be >= 1, got {self.d}")
        omega = tuple(float(w) for w in np.atleast_1d(np.asarray(self.omega, dtype=float)))
        if len(omega) != self.d:
            raise ValueError(f"omega has {len(omega)} components, expected {self.d}")
        if any(not 0.0 <= w <= 1.0 for w in omega):
            raise ValueError(f"omega components must lie in [0, 1], got {omega}")
        object.__setattr__(self, "omega", omega)

    def dot_omega(self, n):
        """n . omega for a single site n."""
        return float(np.dot(np.asarray(n, dtype=float), self.omega))


@dataclass(frozen=True)
class WeightedNormValue:
    """Value of the coefficient norm N_{R,s}; convertible to float."""

    value: float
    R: float
    s: float

    def __float__(self):
        return float(self.value)

    def _other(self, other):
        return other.value if isinstance(other, WeightedNormValue) else float(other)

    def __le__(self, other):
        return self.value <= self._other(other)

    def __lt__(self, other):
        return self.value < self._other(other)

    def __ge__(self, other):
        return self.value >= self._other(other)

    def __gt__(self, other):
        return self.value > self._other(other)


def _site_abs_grid(n_radius, d):
    """Array of |n| (max-norm) over the centred box, shape (2N+1,)*d."""
    axes = np.abs(np.arange(-n_radius, n_radius + 1))
    grid = axes
    for _ in range(d - 1):
        grid = np.maximum(grid[..., None], axes)
    return grid


class FourierKernel:
    """Immutable coefficient table of a kernel on a centred site/mode box.

    Parameters
    ----------
    config : LatticeConfig
    R : float
        Strip half-width on which the kernel is considered stored; norms
        may be taken at any smaller strip.
    data : array_like
        Complex array of shape (2N+1,)*d + (2K+1,), site axes first.
    error_budget : float
        Accumulated N_{R,0} mass dropped by truncations feeding this
        kernel; purely diagnostic.
    """

    __slots__ = ("config", "R", "data", "error_budget")

    def __init__(self, config, R, data, error_budget=0.0):
        if R <= 0.0:
            raise ValueError(f"strip half-width must be positive, got {R}")
        data = np.ascontiguousarray(data, dtype=np.complex128)
        if data.ndim != config.d + 1:
            raise ValueError(
                f"data must have {config.d + 1} axes (sites then modes), got {data.ndim}"
            )
        if any(sz % 2 == 0 for sz in data.shape):
            raise ValueError(f"all box extents must be odd, got shape {data.shape}")
        if len(set(data.shape[:-1])) > 1:
            raise ValueError(f"site box must be a cube, got shape {data.shape}")
        data.setflags(write=False)
        self.config = config
        self.R = float(R)
        self.data = data
        self.error_budget = float(error_budget)

    # -- constructors ------------------------------------------------

    @classmethod
    def from_entries(cls, config, R, entries, error_budget=0.0, site_radius=None, mode_radius=None):
        """Build a kernel from a {(site_tuple, k): amplitude} mapping."""
        d = config.d
        n_rad = 0 if site_radius is None else int(site_radius)
        k_rad = 0 if mode_radius is None else int(mode_radius)
        norm_items = []
        for (n, k), val in entries.items():
            n = (n,) if np.isscalar(n) else tuple(int(c) for c in n)
            if len(n) != d:
                raise ValueError(f"site {n} has wrong dimension (d={d})")
            norm_items.append((n, int(k), complex(val)))
            n_rad = max(n_rad, max((abs(c) for c in n), default=0))
            k_rad = max(k_rad, abs(int(k)))
        data = np.zeros((2 * n_rad + 1,) * d + (2 * k_rad + 1,), dtype=np.complex128)
        for n, k, val in norm_items:
            idx = tuple(c + n_rad for c in n) + (k + k_rad,)
            data[idx] += val
        return cls(config, R, data, error_budget)

    # -- basic queries -----------------------------------------------

    @property
    def site_radius(self):
        return (self.data.shape[0] - 1) // 2

    @property
    def mode_radius(self):
        return (self.data.shape[-1] - 1) // 2

    @property
    def is_zero(self):
        return not np.any(self.data)

    def modes(self):
        """Mode index vector -K..K."""
        return np.arange(-self.mode_radius, self.mode_radius + 1)

    def entry(self, n, k):
        """Coefficient at (site n, mode k); zero outside the stored box."""
        n = (n,) if np.isscalar(n) else tuple(int(c) for c in n)
        if len(n) != self.config.d:
            raise ValueError(f"site {n} has wrong dimension")
        if abs(int(k)) > self.mode_radius or any(abs(c) > self.site_radius for c in n):
            return 0.0 + 0.0j
        idx = tuple(c + self.site_radius for c in n) + (int(k) + self.mode_radius,)
        return complex(self.data[idx])

    def coeffs(self):
        """Nonzero coefficients as a dict {(site_tuple, k): value}, lexicographic."""
        out = {}
        nz = np.argwhere(self.data != 0)
        for idx in nz:
            site = tuple(int(c) - self.site_radius for c in idx[:-1])
            out[(site, int(idx[-1]) - self.mode_radius)] = complex(self.data[tuple(idx)])
        return out

    def site_support_radius(self):
        """Largest |n| carrying a nonzero coefficient (0 for the zero kernel)."""
        if self.is_zero:
            return 0
        mask = np.any(self.data != 0, axis=-1)
        return int(_site_abs_grid(self.site_radius, self.config.d)[mask].max())

    def evaluate(self, z, n=None):
        """M(z, n) for one site, or the per-site array over the box if n is None."""
        phases = np.exp(2j * np.pi * self.modes() * complex(z))
        if n is not None:
            n = (n,) if np.isscalar(n) else tuple(int(c) for c in n)
            if any(abs(c) > self.site_radius for c in n):
                return 0.0 + 0.0j
            row = self.data[tuple(c + self.site_radius for c in n)]
            return complex(row @ phases)
        return np.tensordot(self.data, phases, axes=([-1], [0]))

    def diagonal_series(self):
        """Mode coefficients of M(. , 0) as an array -K..K."""
        center = (self.site_radius,) * self.config.d
        return np.array(self.data[center])

    def offdiagonal(self):
        """(I - S_0) M: the kernel with the site-0 column removed."""
        data = np.array(self.data)
        data[(self.site_radius,) * self.config.d] = 0.0
        return FourierKernel(self.config, self.R, data, self.error_budget)

    def pad_to(self, site_radius, mode_radius):
        """Embed into a larger centred box (no-op if already that large)."""
        if site_radius < self.site_radius or mode_radius < self.mode_radius:
            raise ValueError("pad_to cannot shrink the box")
        if site_radius == self.site_radius and mode_radius == self.mode_radius:
            return self
        d = self.config.d
        data = np.zeros((2 * site_radius + 1,) * d + (2 * mode_radius + 1,), dtype=np.complex128)
        ds = site_radius - self.site_radius
        dk = mode_radius - self.mode_radius
        sl = tuple(slice(ds, ds + self.data.shape[i]) for i in range(d))
        sl = sl + (slice(dk, dk + self.data.shape[-1]),)
        data[sl] = self.data
        return FourierKernel(self.config, self.R, data, self.error_budget)

    def with_strip(self, R):
        """Same coefficients declared on a different strip half-width."""
        return FourierKernel(self.config, R, self.data, self.error_budget)

    # -- linear arithmetic --------------------------------------------

    def _aligned(self, other):
        if self.config != other.config:
            raise ConfigMismatchError("kernels live on different lattices")
        ns = max(self.site_radius, other.site_radius)
        nk = max(self.mode_radius, other.mode_radius)
        return self.pad_to(ns, nk), other.pad_to(ns, nk)

    def __add__(self, other):
        a, b = self._aligned(other)
        return FourierKernel(
            self.config,
            min(self.R, other.R),
            a.data + b.data,
            self.error_budget + other.error_budget,
        )

    def __sub__(self, other):
        a, b = self._aligned(other)
        return FourierKernel(
            self.config,
            min(self.R, other.R),
            a.data - b.data,
            self.error_budget + other.error_budget,
        )

    def __neg__(self):
        return FourierKernel(self.config, self.R, -self.data, self.error_budget)

    def __mul__(self, c):
        c = complex(c)
        return FourierKernel(self.config, self.R, self.data * c, self.error_budget * abs(c))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return product(self, other)

    def __repr__(self):
        return (
            f"FourierKernel(d={self.config.d}, R={self.R:g}, N={self.site_radius}, "
            f"K={self.mode_radius}, nnz={int(np.count_nonzero(self.data))})"
        )


# -- distinguished kernels --------------------------------------------


def zero_kernel(config, R, error_budget=0.0):
    return FourierKernel(config, R, np.zeros((1,) * (config.d + 1)), error_budget)


def unit_kernel(config, R):
    """The algebra unit: coefficient 1 at site 0, mode 0."""
    data = np.zeros((1,) * (config.d + 1), dtype=np.complex128)
    data[(0,) * (config.d + 1)] = 1.0
    return FourierKernel(config, R, data)


def shift_kernel(config, R, e):
    """U_e: coefficient 1 at site e, mode 0."""
    e = (e,) if np.isscalar(e) else tuple(int(c) for c in e)
    return FourierKernel.from_entries(config, R, {(e, 0): 1.0})


def laplace_kernel(config, R):
    """Sum of U_e over the 2d unit vectors (|e|_1 = 1)."""
    entries = {}
    for axis in range(config.d):
        for sgn in (1, -1):
            e = [0] * config.d
            e[axis] = sgn
            entries[(tuple(e), 0)] = 1.0
    return FourierKernel.from_entries(config, R, entries)


# -- norms --------------------------------------------------------------


def coeff_norm(m, R=None, s=0.0):
    """N_{R,s}(M) as a plain float; see `norm` for the checked wrapper."""
    R = m.R if R is None else float(R)
    if R > m.R * (1.0 + 1e-12) + 1e-300:
        raise StripExceededError(
            f"norm requested at R={R} beyond the stored strip R={m.R}"
        )
    if s < 0.0:
        raise ValueError(f"weight exponent must be nonnegative, got {s}")
    if m.is_zero:
        return 0.0
    w_site = np.maximum(1, _site_abs_grid(m.site_radius, m.config.d)).astype(float) ** s
    with np.errstate(over="ignore"):
        w_mode = np.exp(2.0 * np.pi * np.abs(m.modes()) * R)
        return float(np.sum(np.abs(m.data) * w_site[..., None] * w_mode))


def norm(m, R=None, s=0.0):
    """Weighted coefficient norm N_{R,s}(M).

    A certified upper bound for the strip sup-norm; requires R <= m.R
    (the mode growth factor is not valid beyond the stored strip).
    """
    R = m.R if R is None else float(R)
    return WeightedNormValue(coeff_norm(m, R, s), R, float(s))


def boundary_grid_norm(m, R=None, s=0.0, n_grid=64):
    """Lower estimate of the paper sup-norm from a grid on Im z = +-R.

    Sanity companion to `norm`: the sup of a subharmonic function over the
    strip sits on the boundary, so the max over a boundary grid
    approximates the true norm from below and must never exceed N_{R,s}.
    """
    R = m.R if R is None else float(R)
    xs = np.arange(n_grid) / n_grid
    w_site = np.maximum(1, _site_abs_grid(m.site_radius, m.config.d)).astype(float) ** s
    best = 0.0
    for sign in (1.0, -1.0):
        zs = xs + 1j * sign * R
        phases = np.exp(2j * np.pi * np.outer(m.modes(), zs))
        vals = np.tensordot(m.data, phases, axes=([-1], [0]))
        sums = np.tensordot(np.abs(vals), w_site, axes=(tuple(range(m.config.d)), tuple(range(m.config.d))))
        # vals has site axes then z axis; weight and sum the site axes
        best = max(best, float(np.max(sums)))
    return best


# -- product, involution, smoothing ------------------------------------


def _dot_omega_grid(config, n_radius):
    """l . omega over the centred site box, shape (2N+1,)*d."""
    axes = np.arange(-n_radius, n_radius + 1, dtype=float)
    grid = np.zeros((2 * n_radius + 1,) * config.d)
    for i, w in enumerate(config.omega):
        shape = [1] * config.d
        shape[i] = 2 * n_radius + 1
        grid = grid + w * axes.reshape(shape)
    return grid


def _trim(config, R, data, budget, drop_tol):
    """Drop negligible coefficients and shrink the box; returns a kernel.

    An entry is dropped when its contribution |c| e^{2 pi |k| R} to
    N_{R,0} is below drop_tol times the total; the dropped mass is added
    to the error budget.
    """
    d = config.d
    k_rad = (data.shape[-1] - 1) // 2
    with np.errstate(over="ignore"):
        w_mode = np.exp(2.0 * np.pi * np.abs(np.arange(-k_rad, k_rad + 1)) * R)
        contrib = np.abs(data) * w_mode
    total = float(contrib.sum())
    if total == 0.0 or not np.isfinite(total):
        if total == 0.0:
            return zero_kernel(config, R, budget)
        return FourierKernel(config, R, data, budget)  # overflow: keep everything
    if drop_tol > 0.0:
        mask = contrib < drop_tol * total
        if mask.any():
            budget += float(contrib[mask].sum())
            data = np.where(mask, 0.0, data)
    if not np.any(data):
        return zero_kernel(config, R, budget)
    # shrink to the symmetric bounding box of the nonzero entries
    nz = np.nonzero(data)
    n_rad = (data.shape[0] - 1) // 2
    new_n = 0
    for ax in range(d):
        new_n = max(new_n, int(np.max(np.abs(nz[ax] - n_rad))))
    new_k = int(np.max(np.abs(nz[-1] - k_rad)))
    if new_n < n_rad or new_k < k_rad:
        sl = tuple(slice(n_rad - new_n, n_rad + new_n + 1) for _ in range(d))
        sl = sl + (slice(k_rad - new_k, k_rad + new_k + 1),)
        data = data[sl]
    return FourierKernel(config, R, data, budget)


def product(m1, m2, drop_tol=DROP_TOL):
    """Twisted algebra product of two kernels.

    Coefficientwise,

        (M1 M2)[n, k] = sum_l sum_{k1+k2=k}
            M1[l, k1] M2[n-l, k2] exp(-2 pi i k2 (l.omega)),

    computed exactly (up to float rounding) by a batched site convolution
    per mode pair.  The result strip is min(R1, R2); coefficients whose
    N_{R,0} contribution falls below ``drop_tol`` (relative) are trimmed
    into the error budget.
    """
    if m1.config != m2.config:
        raise ConfigMismatchError("product of kernels on different lattices")
    config = m1.config
    R = min(m1.R, m2.R)
    n1 = coeff_norm(m1, R, 0.0)
    n2 = coeff_norm(m2, R, 0.0)
    budget = m1.error_budget * n2 + m2.error_budget * n1 + m1.error_budget * m2.error_budget
    if m1.is_zero or m2.is_zero:
        return zero_kernel(config, R, budget)
    d = config.d
    k1, k2 = m1.mode_radius, m2.mode_radius
    # twist m1's site box by each mode k2 of m2
    lw = _dot_omega_grid(config, m1.site_radius)
    k2v = np.arange(-k2, k2 + 1, dtype=float).reshape((-1,) + (1,) * d)
    twist = np.exp(-2j * np.pi * k2v * lw)                      # (2K2+1, *S1)
    a = twist[..., None] * m1.data[None, ...]                   # (2K2+1, *S1, 2K1+1)
    b = np.moveaxis(m2.data, -1, 0)[..., None]                  # (2K2+1, *S2, 1)
    site_axes = tuple(range(1, 1 + d))
    conv = fftconvolve(a, b, axes=site_axes)                    # (2K2+1, *S_out, 2K1+1)
    n_out = m1.site_radius + m2.site_radius
    k_out = k1 + k2
    out = np.zeros((2 * n_out + 1,) * d + (2 * k_out + 1,), dtype=np.complex128)
    for i2 in range(2 * k2 + 1):
        out[..., i2 : i2 + 2 * k1 + 1] += conv[i2]
    return _trim(config, R, out, budget, drop_tol)


def involution(m):
    """Adjoint kernel M*(z, n) = conj(M(conj(z) - n.omega, -n)).

    On coefficients: M*[n, k] = conj(M[-n, -k]) exp(-2 pi i k (n.omega)).
    Applying it twice is the identity and it is norm-preserving.
    """
    if m.is_zero:
        return m
    d = m.config.d
    flipped = np.conj(m.data[(slice(None, None, -1),) * (d + 1)])
    nw = _dot_omega_grid(m.config, m.site_radius)
    phase = np.exp(-2j * np.pi * nw[..., None] * m.modes())
    return FourierKernel(m.config, m.R, flipped * phase, m.error_budget)


def smooth(m, theta):
    """S_theta M: zero out all sites with |n| > theta (modes untouched)."""
    if theta < 0.0:
        raise ValueError(f"smoothing radius must be nonnegative, got {theta}")
    if m.site_support_radius() <= theta:
        return m
    mask = _site_abs_grid(m.site_radius, m.config.d) <= theta
    data = np.where(mask[..., None], m.data, 0.0)
    return _trim(m.config, m.R, data, m.error_budget, 0.0)


def sections(m, thetas):
    """Dyadic shells of M w.r.t. an increasing radius sequence.

    Element 0 is S_{theta_0} M; element l >= 1 is
    (S_{theta_l} - S_{theta_{l-1}}) M.  The list sums to S_{theta_L} M.
    """
    thetas = [float(t) for t in thetas]
    if not thetas:
        raise ScheduleError("need at least one section radius")
    if thetas[0] < 0.0 or any(b <= a for a, b in zip(thetas, thetas[1:])):
        raise ScheduleError(f"section radii must be strictly increasing and >= 0: {thetas}")
    parts = [smooth(m, thetas[0])]
    prev = parts[0]
    for t in thetas[1:]:
        cur = smooth(m, t)
        parts.append(cur - prev)
        prev = cur
    return parts


# -- exponentials -------------------------------------------------------


def _exp_tail_bound(a, j):
    """Upper bound for sum_{m>j} a^m / m! via a geometric majorant."""
    if a == 0.0:
        return 0.0
    if a >= j + 2:
        return math.inf
    log_lead = (j + 1) * math.log(a) - math.lgamma(j + 2)
    return math.exp(log_lead) / (1.0 - a / (j + 2))


def exp_kernel(w, tol=1e-15, max_terms=80, drop_tol=DROP_TOL, full_output=False):
    """exp(W) = sum_{j<=J} W^j / j! with a certified series tail.

    J is the smallest order whose geometric tail bound (from the
    submultiplicative N_{R,0} power estimate) is below ``tol``; the bound
    is added to the result's error budget.  Raises SeriesDivergenceError
    when no J <= max_terms certifies, which signals that W is too large.
    """
    a = coeff_norm(w, None, 0.0)
    j_stop = None
    for j in range(max_terms + 1):
        if _exp_tail_bound(a, j) < tol:
            j_stop = j
            break
    if j_stop is None:
        raise SeriesDivergenceError(
            f"exponential tail not below {tol:g} within {max_terms} terms "
            f"(N_0(W) = {a:g})"
        )
    tail = _exp_tail_bound(a, j_stop)
    acc = unit_kernel(w.config, w.R)
    term = acc
    for j in range(1, j_stop + 1):
        term = product(term, w, drop_tol) * (1.0 / j)
        acc = acc + term
    out = FourierKernel(w.config, acc.R, acc.data, acc.error_budget + tail)
    if full_output:
        return out, {"order": j_stop, "tail_bound": tail, "norm0": a}
    return out


# -- comparison helper ---------------------------------------------------


def kernels_allclose(m1, m2, atol=1e-12, rtol=1e-12):
    """Coefficientwise comparison on the union box."""
    if m1.config != m2.config:
        return False
    a, b = m1._aligned(m2)
    scale = max(float(np.abs(a.data).max(initial=0.0)), float(np.abs(b.data).max(initial=0.0)))
    return bool(np.allclose(a.data, b.data, atol=atol + rtol * scale, rtol=0.0))


# -- serialization -------------------------------------------------------

_FMT = "%.17g"


def save_kernel(m, path):
    """Write a kernel in the columnar text format (bit-exact round trip)."""
    lines = ["qpdiag-kernel 1"]
    lines.append(f"d {m.config.d}")
    lines.append("omega " + " ".join(_FMT % w for w in m.config.omega))
    lines.append("R " + _FMT % m.R)
    lines.append(f"N {m.site_radius}")
    lines.append(f"K {m.mode_radius}")
    lines.append("budget " + _FMT % m.error_budget)
    entries = m.coeffs()
    lines.append(f"entries {len(entries)}")
    for (site, k), val in sorted(entries.items()):
        cols = [str(c) for c in site] + [str(k), _FMT % val.real, _FMT % val.imag]
        lines.append(" ".join(cols))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_kernel(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("qpdiag-kernel"):
        raise KernelFormatError(f"{path}: missing kernel header")
    head = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("entries"):
        key, _, rest = lines[i].partition(" ")
        head[key] = rest
        i += 1
    if i >= len(lines):
        raise KernelFormatError(f"{path}: missing entries count")
    try:
        d = int(head["d"])
        omega = tuple(float(t) for t in head["omega"].split())
        R = float(head["R"])
        n_rad = int(head["N"])
        k_rad = int(head["K"])
        budget = float(head.get("budget", "0"))
        count = int(lines[i].split()[1])
    except (KeyError, ValueError, IndexError) as exc:
        raise KernelFormatError(f"{path}: malformed header ({exc})") from exc
    config = LatticeConfig(d, omega)
    rows = lines[i + 1 :]
    if len(rows) != count:
        raise KernelFormatError(f"{path}: expected {count} entries, found {len(rows)}")
    entries = {}
    for row in rows:
        cols = row.split()
        if len(cols) != d + 3:
            raise KernelFormatError(f"{path}: bad entry row {row!r}")
        site = tuple(int(c) for c in cols[:d])
        k = int(cols[d])
        entries[(site, k)] = complex(float(cols[d + 1]), float(cols[d + 2]))
    return FourierKernel.from_entries(
        config, R, entries, error_budget=budget, site_radius=n_rad, mode_radius=k_rad
    )
