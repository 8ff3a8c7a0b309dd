"""Sparse Fourier series on the torus ``T^{mn}`` and the single-scale functions.

Frequencies and points in ``R^{mn}`` are flattened row-major from an
``m x n`` matrix, so ``ell[i*n + j] = ell_{ij}`` and ``x q`` is
``x.reshape(m, n) @ q``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import BSpline

from .approx_core import ApproxFunction, lattice_cube, sup_norm
from .divisors import ScaleSet, _is_divisor, divisor_set, l_radius, wigert_envelope
from .errors import DegenerateScaleError

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# bump functions


@dataclass(frozen=True)
class BumpFunction:
    """Tensor-product cardinal B-spline of order ``K + 1`` on ``[-c, c]^dim``.

    In each coordinate ``phi_1(x) = a B(a x)`` with ``a = (K+1)/(2c)`` and
    ``B`` the centred cardinal B-spline, so ``phi_1_hat(xi) = sinc(xi/a)^(K+1)``.
    """

    dim: int
    K: int
    c: float
    _basis: BSpline = field(repr=False, compare=False, default=None)

    @property
    def scale(self) -> float:
        return (self.K + 1) / (2.0 * self.c)

    @property
    def C_phi(self) -> float:
        """Constant in ``|phi_hat(xi)| <= C_phi (1 + |xi|)^(-K)`` (sup norm)."""
        return (1.0 + self.scale / math.pi) ** self.K

    def factor(self, x) -> np.ndarray:
        """One-dimensional factor ``phi_1`` evaluated elementwise."""
        x = np.asarray(x, dtype=np.float64)
        a = self.scale
        out = self._basis(a * x)
        return a * np.nan_to_num(out, nan=0.0)

    def factor_hat(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=np.float64)
        return np.sinc(xi / self.scale) ** (self.K + 1)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.dim)
        return np.prod(self.factor(x), axis=1)

    def transform(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=np.float64).reshape(-1, self.dim)
        return np.prod(self.factor_hat(xi), axis=1)

    def factor_hat_bound(self, xi) -> np.ndarray:
        """``min(1, a / (pi |xi|))^(K+1)``, a bound on ``|phi_1_hat|``."""
        xi = np.abs(np.asarray(xi, dtype=np.float64))
        with np.errstate(divide="ignore"):
            r = np.where(xi > 0, self.scale / (math.pi * xi), np.inf)
        return np.minimum(1.0, r) ** (self.K + 1)

    def factor_hat_tail(self, k0, stretch=1.0):
        """Bound on ``sum_{k in Z, |k| > k0} |phi_1_hat(stretch * k)|``."""
        b = self.scale / (math.pi * np.asarray(stretch, dtype=np.float64))
        return hat_tail_1d(b, self.K + 1, k0)

    def factor_hat_total(self, stretch: float = 1.0) -> float:
        return 1.0 + self.factor_hat_tail(0, stretch)

    def tail_window(self, tol: float) -> int:
        """Radius ``W`` with ``sum_{|j|>W} |phi_hat(xi - j)| <= tol`` for every
        ``xi`` (lattice sum of a shifted transform)."""
        W = 1
        while self.shifted_tail(W) > tol:
            W *= 2
        return W

    def shifted_tail(self, W: int) -> float:
        """Bound on ``sum_{|j - xi| > W} |phi_hat(xi - j)|`` uniform in xi."""
        # per coordinate the k-th nearest pair of integers sits at distance >= k - 1/2
        b = self.scale / math.pi
        p = self.K + 1
        inner = 1.0 + 2.0 * (sum_shift(b, p, 0) - sum_shift(b, p, W))
        tail = 2.0 * sum_shift(b, p, W)
        return (inner + tail) ** self.dim - inner ** self.dim


def sum_shift(b: float, p: int, k0: int) -> float:
    """``sum_{k > k0} min(1, b / (k - 1/2))^p``."""
    start = k0 + 1
    stop = max(start, int(math.ceil(b)) + 2) + 20000
    ks = np.arange(start, stop, dtype=np.float64) - 0.5
    head = np.sum(np.minimum(1.0, b / ks) ** p)
    tail = b ** p * (stop - 1.5) ** (1 - p) / (p - 1)
    return float(head + tail)


def hat_tail_1d(b, p: int, k0):
    """Closed-form bound on ``sum_{k in Z, |k| > k0} min(1, b/|k|)^p``.

    Terms with ``|k| <= b`` count 1 each; the rest are bounded by an integral.
    Vectorised over ``b`` and ``k0``.
    """
    b = np.asarray(b, dtype=np.float64)
    k0 = np.floor(np.asarray(k0, dtype=np.float64))
    flat = np.maximum(np.floor(b) - k0, 0.0)
    start = np.maximum(k0, np.floor(b))
    with np.errstate(divide="ignore"):
        rest = np.where(
            start >= 1,
            b ** p * np.maximum(start, 1.0) ** (1 - p) / (p - 1),
            b ** p * (1.0 + 1.0 / (p - 1)),
        )
    out = 2.0 * (flat + rest)
    return float(out) if out.ndim == 0 else out


def make_bspline_bump(dim: int, K: int, c: float = 0.9) -> BumpFunction:
    """Unit-mass bump with ``supp = [-c, c]^dim`` and decay order ``K + 1``."""
    if K < 2:
        raise ValueError("K must be at least 2 for sufficient decay")
    if not 0 < c < 1:
        raise ValueError("support radius c must lie in (0, 1)")
    knots = np.arange(K + 2, dtype=np.float64) - (K + 1) / 2.0
    basis = BSpline.basis_element(knots, extrapolate=False)
    return BumpFunction(dim=dim, K=K, c=c, _basis=basis)


def default_order(mn: int, s: float) -> int:
    """Smallest convenient order satisfying ``K > mn + s``."""
    return mn + math.ceil(s) + 2


# ---------------------------------------------------------------------------
# sparse spectra


@dataclass(frozen=True)
class SparseSpectrum:
    """Finite map ``ell -> coefficient`` exhaustive for ``|ell| <= cutoff``."""

    m: int
    n: int
    freqs: np.ndarray  # (N, mn) int64, lexicographically sorted, unique
    coef: np.ndarray  # (N,) complex128
    cutoff: int

    @property
    def dim(self) -> int:
        return self.m * self.n

    def __len__(self) -> int:
        return len(self.coef)

    def as_dict(self) -> dict:
        return {tuple(int(c) for c in f): complex(v) for f, v in zip(self.freqs, self.coef)}

    def get(self, ell) -> complex:
        ell = tuple(int(c) for c in np.asarray(ell).reshape(-1))
        if max(abs(c) for c in ell) > self.cutoff:
            raise KeyError(f"{ell} lies outside the exhaustive cutoff {self.cutoff}")
        return self._index().get(ell, 0j)

    def _index(self) -> dict:
        cache = self.__dict__.get("_idx")
        if cache is None:
            cache = self.as_dict()
            object.__setattr__(self, "_idx", cache)
        return cache

    def to_dense(self, radius: Optional[int] = None) -> np.ndarray:
        """Dense array of shape ``(2R+1,)*mn``; entry ``ell + R`` holds ``F_hat(ell)``."""
        R = self.cutoff if radius is None else radius
        out = np.zeros((2 * R + 1,) * self.dim, dtype=np.complex128)
        keep = sup_norm(self.freqs) <= R if len(self.freqs) else np.zeros(0, bool)
        idx = tuple((self.freqs[keep] + R).T)
        out[idx] = self.coef[keep]
        return out

    def conjugate_symmetry_error(self) -> float:
        d = self._index()
        worst = 0.0
        for f, v in d.items():
            g = d.get(tuple(-c for c in f), 0j)
            worst = max(worst, abs(v - np.conj(g)))
        return worst

    def restrict(self, radius: int) -> "SparseSpectrum":
        keep = sup_norm(self.freqs) <= radius
        return SparseSpectrum(self.m, self.n, self.freqs[keep], self.coef[keep], min(radius, self.cutoff))


def spectrum_from_pairs(m: int, n: int, freqs, coef, cutoff: int, drop: float = 0.0) -> SparseSpectrum:
    """Combine duplicate frequencies, drop ``|c| <= drop`` and sort."""
    freqs = np.asarray(freqs, dtype=np.int64).reshape(-1, m * n)
    coef = np.asarray(coef, dtype=np.complex128).reshape(-1)
    if len(freqs):
        uniq, inv = np.unique(freqs, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        summed = np.bincount(inv, weights=coef.real, minlength=len(uniq)) + 1j * np.bincount(
            inv, weights=coef.imag, minlength=len(uniq)
        )
        keep = np.abs(summed) > drop
        freqs, coef = uniq[keep], summed[keep]
    return SparseSpectrum(m, n, freqs, coef, int(cutoff))


def spectrum_from_dense(arr: np.ndarray, m: int, n: int, drop: float = 0.0) -> SparseSpectrum:
    R = (arr.shape[0] - 1) // 2
    idx = np.argwhere(np.abs(arr) > drop)
    return SparseSpectrum(m, n, idx.astype(np.int64) - R, arr[tuple(idx.T)].astype(np.complex128), R)


def spectrum_evaluate(S: SparseSpectrum, x, check_real: bool = True) -> np.ndarray:
    """Real part of the truncated series ``sum_ell S(ell) e^{2 pi i ell.x}``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, S.dim)
    out = np.zeros(len(x), dtype=np.complex128)
    for start in range(0, len(S.coef), 4096):
        f = S.freqs[start : start + 4096].astype(np.float64)
        out += np.exp(1j * TWO_PI * (x @ f.T)) @ S.coef[start : start + 4096]
    if check_real:
        scale = max(1.0, float(np.sum(np.abs(S.coef))))
        if np.max(np.abs(out.imag), initial=0.0) > 1e-9 * scale:
            raise ValueError("spectrum does not represent a real function")
    return out.real


# ---------------------------------------------------------------------------
# periodic bumps along a denominator


def _canonical_j(q) -> int:
    for j, c in enumerate(q):
        if c:
            return j
    raise ValueError("q must be nonzero")


def phi_q_theta_coeff(
    phi: BumpFunction, eps: float, q, theta, ell, m: int, n: int, j: Optional[int] = None
) -> complex:
    """Fourier coefficient of ``x -> Phi^eps(x q - theta)`` at ``ell``.

    ``e^{-2 pi i k.theta} phi_hat(eps k)`` with ``k = ell_j / q_j`` when
    ``q`` divides ``ell``, and 0 otherwise. Any ``j`` with ``q_j != 0``
    gives the same value; the smallest such ``j`` is the default.
    """
    q = [int(c) for c in np.asarray(q).reshape(-1)]
    if not any(q):
        raise ValueError("q must be nonzero")
    L = np.asarray(ell, dtype=np.int64).reshape(m, n)
    if not L.any():
        return complex(phi.transform(np.zeros(m))[0])
    if not _is_divisor(L, q):
        return 0j
    j = _canonical_j(q) if j is None else j
    if q[j] == 0:
        raise ValueError("column j must have q_j != 0")
    k = L[:, j] / q[j]
    phase = np.exp(-1j * TWO_PI * float(np.dot(k, theta)))
    return complex(phase * phi.transform(eps * k)[0])


def _periodic_factor(phi: BumpFunction, eps: float, y: np.ndarray) -> np.ndarray:
    """``Phi_1^eps(y) = sum_r eps^-1 phi_1((y - r)/eps)`` (support ``c eps < 1/2``)."""
    t = y - np.round(y)
    out = np.zeros_like(t)
    for r in (-1.0, 0.0, 1.0):
        out += phi.factor((t - r) / eps)
    return out / eps


def _row_table(phi: BumpFunction, eps: float, q, theta_i: float, n: int, N: int) -> np.ndarray:
    """Rectangle-rule coefficients of ``y -> Phi_1^eps(q.y - theta_i)`` on
    ``[0,1]^n`` with ``N`` nodes per axis, for every frequency mod N."""
    grid = np.arange(N, dtype=np.float64) / N
    axes = np.meshgrid(*([grid] * n), indexing="ij")
    y = sum(int(qj) * ax for qj, ax in zip(q, axes)) - theta_i
    return np.fft.fftn(_periodic_factor(phi, eps, y)) / N ** n


def phi_q_theta_oracle(
    phi: BumpFunction, eps: float, q, theta, ell, m: int, n: int, grid_size: int = 512
) -> complex:
    """Quadrature check of :func:`phi_q_theta_coeff` for one frequency."""
    table = phi_q_theta_oracle_table(phi, eps, q, theta, m, n, grid_size)
    L = np.asarray(ell, dtype=np.int64).reshape(m, n)
    return complex(np.prod([table[i][tuple(L[i] % grid_size)] for i in range(m)]))


def phi_q_theta_oracle_table(
    phi: BumpFunction, eps: float, q, theta, m: int, n: int, grid_size: int = 512
) -> list:
    """Per-row coefficient tables from sampling the shifted bumps.

    The bump is a tensor product, so the ``mn``-dimensional integral splits
    into ``m`` integrals over ``[0,1]^n``; each is a rectangle rule on a
    uniform grid (exact up to aliasing for a smooth periodic integrand).
    """
    if grid_size < 64:
        raise ValueError("grid_size must be at least 64")
    if phi.dim != m:
        raise ValueError("phi must live on R^m")
    q = [int(c) for c in np.asarray(q).reshape(-1)]
    return [_row_table(phi, eps, q, float(theta[i]), n, grid_size) for i in range(m)]


def oracle_from_tables(tables: list, ells: np.ndarray, m: int, n: int, N: int) -> np.ndarray:
    ells = np.asarray(ells, dtype=np.int64).reshape(-1, m, n) % N
    out = np.ones(len(ells), dtype=np.complex128)
    for i in range(m):
        out *= tables[i][tuple(ells[:, i, :].T)]
    return out


def phi_q_theta_many(phi: BumpFunction, eps: float, q, theta, ells: np.ndarray, m: int, n: int) -> np.ndarray:
    """Vectorised closed form over an ``(N, mn)`` array of frequencies."""
    q = np.asarray(q, dtype=np.int64).reshape(-1)
    j = _canonical_j(q)
    L = np.asarray(ells, dtype=np.int64).reshape(-1, m, n)
    col = L[:, :, j]
    k = col // q[j]
    divides = np.all(col % q[j] == 0, axis=1) & np.all(
        L == k[:, :, None] * q[None, None, :], axis=(1, 2)
    )
    out = np.zeros(len(L), dtype=np.complex128)
    kk = k[divides].astype(np.float64)
    out[divides] = np.exp(-1j * TWO_PI * (kk @ np.asarray(theta, dtype=np.float64))) * phi.transform(eps * kk)
    return out


# ---------------------------------------------------------------------------
# single-scale function F_M


def fm_spectrum(
    Qprime: ScaleSet,
    phi: BumpFunction,
    psi: ApproxFunction,
    theta,
    Lambda: int,
    m: int,
    method: str = "scatter",
) -> SparseSpectrum:
    """Coefficients of ``F_M`` for every ``|ell| <= Lambda``.

    ``method="scatter"`` walks ``ell = k q^T`` for each ``q`` in ``Q'(M)``;
    ``method="divisor"`` sums over ``Q'(M) & D(ell)`` frequency by frequency.
    Both give the same finite map.
    """
    if len(Qprime) == 0:
        raise DegenerateScaleError(f"Q'(M) is empty at M = {Qprime.M}")
    if Lambda < 1:
        raise ValueError("Lambda must be at least 1")
    Lambda = int(Lambda)
    n = Qprime.members.shape[1]
    theta = np.asarray(theta, dtype=np.float64)
    members = Qprime.members
    eps_all = psi.values(members)
    size = len(members)
    if method == "scatter":
        freqs, coef = [], []
        for q, eps in zip(members, eps_all):
            kmax = Lambda // int(sup_norm(q))
            ks = lattice_cube(m, kmax)
            freqs.append((ks[:, :, None] * q[None, None, :]).reshape(len(ks), m * n))
            kf = ks.astype(np.float64)
            coef.append(np.exp(-1j * TWO_PI * (kf @ theta)) * phi.transform(eps * kf) / size)
        S = spectrum_from_pairs(m, n, np.concatenate(freqs), np.concatenate(coef), Lambda)
    elif method == "divisor":
        lookup = {tuple(int(c) for c in q): float(e) for q, e in zip(members, eps_all)}
        freqs, coef = [], []
        for ell in lattice_cube(m * n, Lambda):
            if not ell.any():
                continue
            L = ell.reshape(m, n)
            total = 0j
            for q in divisor_set(ell, m, n):
                if q in lookup:
                    j = _canonical_j(q)
                    k = L[:, j] / q[j]
                    total += np.exp(-1j * TWO_PI * float(k @ theta)) * phi.transform(lookup[q] * k)[0]
            if total != 0:
                freqs.append(ell)
                coef.append(total / size)
        freqs.append(np.zeros(m * n, dtype=np.int64))
        coef.append(1.0)
        S = spectrum_from_pairs(m, n, np.array(freqs), np.array(coef), Lambda)
    else:
        raise ValueError(f"unknown method {method!r}")
    # F_hat(0) is an average of phi_hat(0) = 1 values
    zero = np.all(S.freqs == 0, axis=1)
    coef = S.coef.copy()
    coef[zero] = 1.0
    return SparseSpectrum(m, n, S.freqs, coef, Lambda)


def _factor_b(Qprime: ScaleSet, phi: BumpFunction, psi: ApproxFunction):
    eps = psi.values(Qprime.members)
    return phi.scale / (math.pi * eps), sup_norm(Qprime.members).astype(np.float64)


def fm_spectral_tail(Qprime: ScaleSet, phi: BumpFunction, psi: ApproxFunction, Lambda, m: int) -> float:
    """Bound on ``sum_{|ell| > Lambda} |F_hat(ell)|``."""
    b, norms = _factor_b(Qprime, phi, psi)
    p = phi.K + 1
    tail = hat_tail_1d(b, p, np.floor(Lambda / norms))
    full = 1.0 + hat_tail_1d(b, p, 0)
    return float(np.mean(full ** m - np.maximum(full - tail, 0.0) ** m))


def fm_abs_total(Qprime: ScaleSet, phi: BumpFunction, psi: ApproxFunction, m: int) -> float:
    """Bound on ``sum_ell |F_hat(ell)|``."""
    b, _ = _factor_b(Qprime, phi, psi)
    return float(np.mean((1.0 + hat_tail_1d(b, phi.K + 1, 0)) ** m))


def fm_spectral_sup(Qprime: ScaleSet, phi: BumpFunction, psi: ApproxFunction, R) -> float:
    """Bound on ``sup_{|ell| >= R} |F_hat(ell)|`` from the decay of ``phi_hat``."""
    b, norms = _factor_b(Qprime, phi, psi)
    R = np.asarray(R, dtype=np.float64)
    with np.errstate(divide="ignore"):
        r = np.minimum(1.0, (b * norms)[None, :] / np.atleast_1d(R)[:, None]) ** (phi.K + 1)
    out = r.mean(axis=1)
    return float(out[0]) if R.ndim == 0 else out


def fm_cutoff(Qprime: ScaleSet, phi: BumpFunction, psi: ApproxFunction, m: int, tol: float = 1e-9) -> int:
    """Smallest power-of-two cutoff whose spectral tail is below ``tol``."""
    Lambda = 8
    while fm_spectral_tail(Qprime, phi, psi, Lambda, m) > tol:
        Lambda *= 2
    return Lambda


def fm_direct(x, Qprime: ScaleSet, phi: BumpFunction, psi: ApproxFunction, theta, m: int) -> np.ndarray:
    """``F_M(x)`` evaluated as an average of periodic bumps."""
    n = Qprime.members.shape[1]
    x = np.asarray(x, dtype=np.float64).reshape(-1, m, n)
    theta = np.asarray(theta, dtype=np.float64)
    out = np.zeros(len(x))
    for q, eps in zip(Qprime.members, psi.values(Qprime.members)):
        y = x @ q.astype(np.float64) - theta  # (P, m)
        out += np.prod(_periodic_factor(phi, eps, y), axis=1)
    return out / len(Qprime)


# ---------------------------------------------------------------------------
# checks


@dataclass
class FMBoundsReport:
    M: float
    zero_is_one: bool
    max_abs: float
    bounded_by_one: bool
    zero_radius: float
    zero_annulus: bool
    fitted_constant: float
    fit_range: tuple
    conjugate_error: float

    @property
    def passed(self) -> bool:
        return self.zero_is_one and self.bounded_by_one and self.zero_annulus and math.isfinite(
            self.fitted_constant
        )


def verify_FM_bounds(S: SparseSpectrum, M: float, s: float, zeta: float = 0.75) -> FMBoundsReport:
    """Check ``F_hat(0) = 1``, ``|F_hat| <= 1``, the zero annulus and fit the
    constant ``C`` in ``|F_hat(ell)| <= C |ell|^-s w_zeta(|ell|) log2^(n+1) M``."""
    m, n = S.m, S.n
    norms = sup_norm(S.freqs) if len(S.freqs) else np.zeros(0, dtype=np.int64)
    f0 = S.get(np.zeros(S.dim, dtype=np.int64))
    absval = np.abs(S.coef)
    h = l_radius(M, m, n) if M >= 2 else 0.0
    inside = (norms > 0) & (norms <= h)
    annulus = not np.any(absval[inside] > 0)
    logs = math.log2(M) ** (n + 1)
    sel = norms >= 3
    if np.any(sel):
        env = np.array([r ** (-s) * wigert_envelope(zeta, r) for r in norms[sel]]) * logs
        C = float(np.max(absval[sel] / env))
    else:
        C = 0.0
    return FMBoundsReport(
        M=M,
        zero_is_one=f0 == 1.0,
        max_abs=float(absval.max(initial=0.0)),
        bounded_by_one=bool(np.all(absval <= 1.0 + 1e-12)),
        zero_radius=h,
        zero_annulus=annulus,
        fitted_constant=C,
        fit_range=(3, S.cutoff),
        conjugate_error=S.conjugate_symmetry_error(),
    )


def support_pointcheck(x, Qprime_list: Sequence[ScaleSet], psi: ApproxFunction, theta, m: int) -> list:
    """For each scale, whether some ``q`` in ``Q'(M)`` and ``r`` in ``Z^m``
    satisfy ``|x q - r - theta| <= psi(q)``."""
    theta = np.asarray(theta, dtype=np.float64)
    out = []
    for block in Qprime_list:
        n = block.members.shape[1]
        X = np.asarray(x, dtype=np.float64).reshape(m, n)
        y = block.members.astype(np.float64) @ X.T - theta  # (N, m)
        dist = np.max(np.abs(y - np.round(y)), axis=1)
        out.append(bool(np.any(dist <= psi.values(block.members) * (1 + 1e-12))))
    return out


def approximation_counts(x, block: ScaleSet, psi: ApproxFunction, theta, m: int) -> int:
    """Number of ``q`` in the block with a solution ``|x q - r - theta| <= psi(q)``."""
    n = block.members.shape[1]
    X = np.asarray(x, dtype=np.float64).reshape(m, n)
    y = block.members.astype(np.float64) @ X.T - np.asarray(theta, dtype=np.float64)
    dist = np.max(np.abs(y - np.round(y)), axis=1)
    return int(np.sum(dist <= psi.values(block.members) * (1 + 1e-12)))


def write_spectrum_csv(S: SparseSpectrum, path, header: Optional[str] = None) -> None:
    """Columns ``l_11 .. l_mn, re, im, abs``; rows sorted lexicographically."""
    order = np.lexsort(S.freqs.T[::-1]) if len(S.freqs) else np.zeros(0, dtype=np.int64)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow([f"l_{i + 1}{j + 1}" for i in range(S.m) for j in range(S.n)] + ["re", "im", "abs"])
        for idx in order:
            v = S.coef[idx]
            w.writerow([*map(int, S.freqs[idx]), repr(float(v.real)), repr(float(v.imag)), repr(float(abs(v)))])
