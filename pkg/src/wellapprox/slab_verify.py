"""Slab sets ``L^m_{delta,q,theta}``, the plane measures ``L_{q,theta_i}`` and
numerical checks of the inhomogeneous lattice lemma and the Borel-Cantelli sums."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .approx_core import DEFAULT_RADII, ApproxFunction, DenominatorSet, lattice_cube, series_terms, block_sums
from .torus_spectrum import BumpFunction, SparseSpectrum

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SlabFamily:
    delta: float
    q: tuple
    theta: tuple

    def __post_init__(self):
        if not 0 < self.delta < 0.5:
            raise ValueError("delta must lie in (0, 1/2) so the slabs stay disjoint")
        if not any(self.q):
            raise ValueError("q must be nonzero")
        object.__setattr__(self, "q", tuple(int(c) for c in self.q))
        object.__setattr__(self, "theta", tuple(float(c) for c in self.theta))

    @property
    def m(self) -> int:
        return len(self.theta)

    @property
    def n(self) -> int:
        return len(self.q)

    @property
    def delta_star(self) -> float:
        return self.delta / math.hypot(*self.q)


def in_slab_family(x, fam: SlabFamily) -> np.ndarray:
    """Row-wise membership of points of ``R^{mn}`` in ``L^m_{delta,q,theta}``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, fam.m, fam.n)
    y = x @ np.asarray(fam.q, dtype=np.float64) - np.asarray(fam.theta)
    return np.all(np.abs(y - np.round(y)) <= fam.delta, axis=1)


def _line_multiple(q, k) -> Optional[int]:
    """``t`` with ``k = t q``, or ``None``."""
    q = [int(c) for c in q]
    k = [int(c) for c in k]
    j = next(i for i, c in enumerate(q) if c)
    if k[j] % q[j]:
        return None
    t = k[j] // q[j]
    return t if all(kk == t * qq for kk, qq in zip(k, q)) else None


def plane_fourier(q, theta_i: float, k) -> complex:
    """``e^{-2 pi i t theta_i} |q|_2`` if ``k = t q``, else 0."""
    if not any(q):
        raise ValueError("q must be nonzero")
    t = _line_multiple(q, k)
    if t is None:
        return 0j
    return complex(np.exp(-1j * TWO_PI * t * theta_i) * math.hypot(*q))


def _unit_integral(c: np.ndarray, nodes: int) -> np.ndarray:
    """``int_0^1 e^{-2 pi i c x} dx`` by Gauss-Legendre quadrature."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    x = 0.5 * (x + 1.0)
    return 0.5 * np.exp(-1j * TWO_PI * np.multiply.outer(c, x)) @ w


def plane_fourier_oracle(q, theta_i: float, k, nodes: int = 128) -> tuple:
    """Surface quadrature for ``L_{q,theta_i}`` hat at ``k``.

    Parameterises each plane over the remaining coordinates and sums the
    ``|q_1|`` planes meeting one period. Returns ``(value, error_estimate)``,
    the estimate being the change when the node count is doubled.
    """
    q = [int(c) for c in q]
    k = [int(c) for c in k]
    j0 = next(i for i, c in enumerate(q) if c)
    order = [j0] + [i for i in range(len(q)) if i != j0]
    q = [q[i] for i in order]
    k = [k[i] for i in order]
    q1, k1 = q[0], k[0]

    def assemble(nn):
        c = np.array([kj - k1 * qj / q1 for kj, qj in zip(k[1:], q[1:])])
        inner = np.prod(_unit_integral(c, nn)) if len(c) else 1.0
        r = np.arange(abs(q1))
        planes = np.exp(-1j * TWO_PI * k1 * (r + theta_i) / q1).sum()
        return complex(planes * math.hypot(*q) / abs(q1) * inner)

    value = assemble(nodes)
    return value, abs(value - assemble(2 * nodes))


def plane_fourier_many(q, theta_i: float, ks) -> np.ndarray:
    """Closed form over an ``(N, n)`` array of frequencies."""
    q = np.asarray(q, dtype=np.int64)
    ks = np.asarray(ks, dtype=np.int64).reshape(-1, len(q))
    j = int(np.flatnonzero(q)[0])
    t = ks[:, j] // q[j]
    on = (ks[:, j] % q[j] == 0) & np.all(ks == t[:, None] * q[None, :], axis=1)
    out = np.zeros(len(ks), dtype=np.complex128)
    out[on] = np.exp(-1j * TWO_PI * t[on] * theta_i) * math.hypot(*q.tolist())
    return out


def plane_fourier_oracle_grid(q, theta_i: float, ks, nodes: int = 128) -> tuple:
    """:func:`plane_fourier_oracle` over many frequencies at once.

    The one-dimensional integrals depend on ``k`` only through
    ``c = k_j - k_1 q_j / q_1``, so each distinct value is integrated once.
    """
    q = np.asarray(q, dtype=np.int64)
    ks = np.asarray(ks, dtype=np.int64).reshape(-1, len(q))
    j0 = int(np.flatnonzero(q)[0])
    order = [j0] + [i for i in range(len(q)) if i != j0]
    q, ks = q[order], ks[:, order]
    q1 = int(q[0])
    # c * q1 is an integer, so key the table on it
    num = ks[:, 1:] * q1 - ks[:, :1] * q[None, 1:]
    keys, inv = np.unique(num, return_inverse=True)
    inv = inv.reshape(num.shape)
    r = np.arange(abs(q1))
    planes = np.exp(-1j * TWO_PI * np.multiply.outer(ks[:, 0], r + theta_i) / q1).sum(axis=1)
    scale = math.hypot(*q.tolist()) / abs(q1)

    def assemble(nn):
        table = _unit_integral(keys / q1, nn)
        inner = np.prod(table[inv], axis=1) if num.shape[1] else 1.0
        return planes * scale * inner

    value = assemble(nodes)
    return value, np.abs(value - assemble(2 * nodes))


# ---------------------------------------------------------------------------
# measures used by the lattice lemma harness


class LebesgueMeasure:
    """Lebesgue measure on ``[0,1]^{mn}``; ``mu_hat(ell) = 0`` for ``ell != 0``."""

    def __init__(self, dim: int):
        self.dim = dim

    def hat(self, ells) -> np.ndarray:
        ells = np.asarray(ells).reshape(-1, self.dim)
        return np.all(ells == 0, axis=1).astype(np.complex128)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return rng.random((count, self.dim))

    def density(self, x) -> np.ndarray:
        return np.ones(len(np.asarray(x).reshape(-1, self.dim)))


class SpectrumMeasure:
    """Measure known through a spectrum (exhaustive within its cutoff) and,
    optionally, a sampler and a density."""

    def __init__(self, spectrum: SparseSpectrum, sampler=None, density=None):
        self.spectrum = spectrum
        self.dim = spectrum.dim
        self._sampler = sampler
        self._density = density

    def hat(self, ells) -> np.ndarray:
        ells = np.asarray(ells, dtype=np.int64).reshape(-1, self.dim)
        if len(ells) and np.abs(ells).max() > self.spectrum.cutoff:
            raise ValueError("mu_hat is not available beyond the spectrum cutoff")
        return np.array([self.spectrum.get(e) for e in ells], dtype=np.complex128)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if self._sampler is None:
            raise ValueError("this measure has no sampler")
        return self._sampler(count, rng)

    def density(self, x) -> np.ndarray:
        if self._density is None:
            raise ValueError("this measure has no density")
        return self._density(x)


class StageMeasure:
    """Normalised ``mu_k`` from the measure builder."""

    def __init__(self, stage, n_candidates: int = 200_000):
        from .measure_builder import density_samples

        self.stage = stage
        self.dim = stage.f0.dim
        self._mass = stage.measure.mass()
        self._draw = density_samples
        self._n_candidates = n_candidates

    def hat(self, ells) -> np.ndarray:
        ells = np.asarray(ells, dtype=np.float64).reshape(-1, self.dim)
        return self.stage.measure.values(ells) / self._mass

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        seed = int(rng.integers(0, 2 ** 63 - 1))
        return self._draw(self.stage, count, self._n_candidates, seed)

    def density(self, x) -> np.ndarray:
        return self.stage.density(x) / self._mass


def _line_points(q, radius: float, m: int) -> np.ndarray:
    """Frequencies ``t q^T`` for ``t`` in ``Z^m`` with ``0 < |t| <= radius``."""
    ts = lattice_cube(m, int(math.floor(radius)))
    ts = ts[np.any(ts != 0, axis=1)]
    return (ts[:, :, None] * np.asarray(q, dtype=np.int64)[None, None, :]).reshape(len(ts), -1)


def correction_sum(mu, fam: SlabFamily, radius: float) -> float:
    """``sum_{0 < |t| <= radius} |mu_hat(t q^T)|``."""
    pts = _line_points(fam.q, radius, fam.m)
    return float(np.sum(np.abs(mu.hat(pts)))) if len(pts) else 0.0


@dataclass
class LatticeReport:
    delta: float
    q: tuple
    theta: tuple
    estimate: float
    ci_lo: float
    ci_hi: float
    sum_upper_cutoff: float
    sum_lower_cutoff: float
    ratio: float
    method: str
    in_band: Optional[bool]

    def contains(self, value: float) -> bool:
        return self.ci_lo <= value <= self.ci_hi


def _quadrature_mass(mu, fam: SlabFamily, nodes: int) -> float:
    d = fam.m * fam.n
    if d > 2:
        raise ValueError("quadrature is only offered for mn <= 2")
    grid = (np.arange(nodes) + 0.5) / nodes
    axes = np.meshgrid(*([grid] * d), indexing="ij")
    pts = np.stack([a.ravel() for a in axes], axis=1)
    w = mu.density(pts) * in_slab_family(pts, fam)
    return float(w.sum() / nodes ** d)


def lattice_lemma_check(
    mu,
    fam: SlabFamily,
    kappa: float = 2.0,
    N: int = 2,
    sample_budget: int = 1_000_000,
    seed: int = 0,
    method: str = "mc",
    band: Optional[tuple] = None,
    nodes: int = 4096,
) -> LatticeReport:
    """Estimate ``mu(L^m)`` and the two correction sums of the lattice lemma.

    ``N`` is the order of the ``kappa^-N`` remainder; it only enters through
    the reported cutoffs, since the remainder constant is not effective.
    """
    if kappa <= 0 or N <= 0:
        raise ValueError("kappa and N must be positive")
    if method == "mc":
        rng = np.random.default_rng(seed)
        hits = in_slab_family(mu.sample(sample_budget, rng), fam)
        p = float(hits.mean())
        sigma = math.sqrt(max(p * (1 - p), 1e-300) / sample_budget)
        lo, hi = p - 3 * sigma, p + 3 * sigma
    elif method == "quadrature":
        p = _quadrature_mass(mu, fam, nodes)
        # midpoint rule on an indicator: error at most the boundary cells
        slack = 2.0 * (2 * sum(abs(c) for c in fam.q) + 2) * fam.m / nodes
        lo, hi = p - slack, p + slack
    else:
        raise ValueError(f"unknown method {method!r}")
    ratio = p / fam.delta ** fam.m
    in_band = None if band is None else bool(band[0] <= ratio <= band[1])
    return LatticeReport(
        delta=fam.delta,
        q=fam.q,
        theta=fam.theta,
        estimate=p,
        ci_lo=lo,
        ci_hi=hi,
        sum_upper_cutoff=correction_sum(mu, fam, 2.0 / fam.delta),
        sum_lower_cutoff=correction_sum(mu, fam, kappa / fam.delta),
        ratio=ratio,
        method=method,
        in_band=in_band,
    )


def write_lattice_csv(reports: Sequence[LatticeReport], path, header: Optional[str] = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["delta", "q", "estimate", "ci_lo", "ci_hi", "sum_upper_cutoff", "sum_lower_cutoff", "ratio"])
        for r in reports:
            w.writerow(
                [
                    repr(r.delta),
                    " ".join(map(str, r.q)),
                    repr(r.estimate),
                    repr(r.ci_lo),
                    repr(r.ci_hi),
                    repr(r.sum_upper_cutoff),
                    repr(r.sum_lower_cutoff),
                    repr(r.ratio),
                ]
            )


# ---------------------------------------------------------------------------
# smoothed slab identity (m = n = 1)


def parseval_window_check(
    mu_density, mu_hat, phi: BumpFunction, q: int, theta: float, delta: float, t_max: int = 4000, nodes: int = 200_000
) -> tuple:
    """Both sides of the smoothed identity for ``m = n = 1``.

    Left: ``int (phi_{delta*} * L_{q,theta})(x) dmu(x)`` by quadrature, where
    ``phi_{delta*}(x) = phi(x/delta*)`` and ``L_{q,theta}`` is a sum of unit
    point masses at ``(r + theta)/q``. Right: ``delta (1 + S + T)`` with
    ``S + T = sum_{t != 0} conj(mu_hat(t q)) e^{-2 pi i t theta} phi_hat(delta* t q)``.
    """
    if phi.dim != 1:
        raise ValueError("the windowed identity is checked for m = n = 1")
    q = int(q)
    if q == 0:
        raise ValueError("q must be nonzero")
    dstar = delta / abs(q)
    x = (np.arange(nodes) + 0.5) / nodes
    span = int(math.ceil(abs(q) * (1 + phi.c * dstar))) + 1
    conv = np.zeros_like(x)
    for r in range(-span, span + abs(q) + 1):
        conv += phi((x - (r + theta) / q) / dstar)
    left = float(np.sum(conv * mu_density(x)) / nodes)
    t = np.arange(-t_max, t_max + 1)
    t = t[t != 0]
    terms = np.conj(mu_hat(t * q)) * np.exp(-1j * TWO_PI * t * theta) * phi.transform(dstar * t * q)
    right = delta * (1.0 + complex(np.sum(terms)))
    return left, right


# ---------------------------------------------------------------------------
# Borel-Cantelli sums


@dataclass
class BorelCantelliReport:
    radii: list
    partial_first: list  # sum psi(q)^m
    partial_second: list  # sum psi(q)^s |q|^-s
    ratios_first: list  # consecutive dyadic block ratios beyond the start block
    ratios_second: list
    cauchy_first: bool
    cauchy_second: bool


def borel_cantelli_sums(
    Q: DenominatorSet,
    psi: ApproxFunction,
    s: float,
    m: int,
    R_schedule: Sequence[int] = DEFAULT_RADII,
    start_exp: int = 6,
    threshold: float = 0.95,
) -> BorelCantelliReport:
    """Partial sums of ``sum psi^m`` and ``sum psi^s |q|^-s`` with dyadic block
    ratios ``B_{k+1}/B_k`` for the blocks beyond ``|q| = 2^start_exp``. A series
    is flagged Cauchy when every such ratio is below ``threshold``."""
    radii = sorted(int(r) for r in R_schedule)
    R = radii[-1]
    terms = series_terms(Q, psi, R)
    firsts, seconds = [], []
    b1 = block_sums(terms, s, "psi_pow_m", m, R)
    b2 = block_sums(terms, s, "psi_star", m, R)
    for r in radii:
        sel = terms.norms <= r
        sub = type(terms)(terms.norms[sel], terms.psi[sel], terms.weights[sel])
        firsts.append(float(np.sum(block_sums(sub, s, "psi_pow_m", m, max(r, 2)))))
        seconds.append(float(np.sum(block_sums(sub, s, "psi_star", m, max(r, 2)))))

    def ratios(blocks):
        tail = blocks[start_exp + 1 :]
        out = []
        for a, b in zip(tail[:-1], tail[1:]):
            out.append(float(b / a) if a > 0 else (0.0 if b == 0 else math.inf))
        return out

    r1, r2 = ratios(b1), ratios(b2)
    return BorelCantelliReport(
        radii=radii,
        partial_first=firsts,
        partial_second=seconds,
        ratios_first=r1,
        ratios_second=r2,
        cauchy_first=bool(all(x < threshold for x in r1)),
        cauchy_second=bool(all(x < threshold for x in r2)),
    )
