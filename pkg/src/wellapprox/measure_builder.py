"""Assembly of the measures ``mu_k = f0 F_{M_1} ... F_{M_k}`` and their decay.

Everything is carried on the lattice: the periodic factor ``P = F_{M_1} ... F_{M_k}``
is stored as a dense array of coefficients ``P_hat(ell)`` and

    mu_hat_k(xi) = sum_ell P_hat(ell) f0_hat(xi - ell).

Each stored quantity carries an explicit error budget, so grid checks compare
``|computed| + budget`` against the target.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.signal import fftconvolve

from .approx_core import ProblemInstance, lattice_cube, sup_norm
from .divisors import ScaleSet, scale_set_Q_prime, scriptM_member
from .errors import SearchCapExceeded, UnsupportedInstanceError
from .torus_spectrum import (
    BumpFunction,
    SparseSpectrum,
    approximation_counts,
    fm_abs_total,
    fm_direct,
    fm_spectral_sup,
    fm_spectral_tail,
    fm_spectrum,
    sum_shift,
)

ZETA = 0.75
DENSE_BUDGET = 20_000_000


def g_envelope(s: float, n: int, xi) -> np.ndarray:
    """``1`` for ``|xi| <= 3``, else ``|xi|^-s w_1(|xi|) log^(n+1)|xi|`` (natural log)."""
    if s <= 0:
        raise ValueError("s must be positive")
    xi = np.asarray(xi, dtype=np.float64)
    t = np.abs(xi) if xi.ndim <= 1 else sup_norm(xi).astype(np.float64)
    t = np.atleast_1d(t)
    out = np.ones_like(t)
    big = t > 3
    lt = np.log(t[big])
    out[big] = np.exp(-s * lt + lt / np.log(lt)) * lt ** (n + 1)
    return out


def g_scalar(s: float, n: int, t: float) -> float:
    return float(g_envelope(s, n, np.array([t]))[0])


# ---------------------------------------------------------------------------
# lattice spectra with budgets


@dataclass
class Factor:
    """Truncated spectrum of one ``F_M`` plus its decay bounds."""

    M: float
    Qprime: ScaleSet
    spectrum: SparseSpectrum
    phi: BumpFunction
    psi: object
    m: int

    @property
    def cutoff(self) -> int:
        return self.spectrum.cutoff

    def tail(self, R) -> float:
        return fm_spectral_tail(self.Qprime, self.phi, self.psi, R, self.m)

    def sup_beyond(self, R) -> np.ndarray:
        return fm_spectral_sup(self.Qprime, self.phi, self.psi, R)

    @property
    def abs_total(self) -> float:
        return fm_abs_total(self.Qprime, self.phi, self.psi, self.m)


def make_factor(M, Qprime, phi, psi, theta, m, tol: float = 1e-7) -> Factor:
    Lambda = 8
    while fm_spectral_tail(Qprime, phi, psi, Lambda, m) > tol:
        Lambda *= 2
        if (2 * Lambda + 1) ** (m * Qprime.members.shape[1]) > DENSE_BUDGET:
            raise UnsupportedInstanceError(f"spectrum of F_M at M = {M} exceeds the dense budget")
    return Factor(M, Qprime, fm_spectrum(Qprime, phi, psi, theta, Lambda, m), phi, psi, m)


@dataclass
class Product:
    """Dense coefficients of ``P = F_1 ... F_k`` on ``|ell| <= radius``.

    ``err`` bounds ``|stored - true|`` entrywise inside the radius.
    """

    dense: np.ndarray
    radius: int
    factors: list = field(default_factory=list)
    err: float = 0.0

    @classmethod
    def identity(cls, dim: int) -> "Product":
        return cls(np.ones((1,) * dim, dtype=np.complex128), 0, [], 0.0)

    @property
    def dim(self) -> int:
        return self.dense.ndim

    def abs_total(self) -> float:
        return float(np.prod([f.abs_total for f in self.factors])) if self.factors else 1.0

    def tail(self, R: float) -> float:
        """Bound on ``sum_{|ell| > R} |P_hat(ell)|``."""
        k = len(self.factors)
        if k == 0:
            return 0.0 if R >= 0 else 1.0
        totals = [f.abs_total for f in self.factors]
        out = 0.0
        for i, f in enumerate(self.factors):
            out += f.tail(R / k) * np.prod([t for j, t in enumerate(totals) if j != i])
        return float(out)

    def _analytic_sup(self, R: np.ndarray) -> np.ndarray:
        totals = [f.abs_total for f in self.factors]
        k = len(self.factors)
        out = np.zeros_like(R)
        for i, f in enumerate(self.factors):
            out += f.sup_beyond(R / k) * np.prod([t for j, t in enumerate(totals) if j != i])
        return out

    def _suffix_max(self) -> np.ndarray:
        cache = self.__dict__.get("_suffix")
        if cache is None:
            norms = sup_norm(lattice_cube(self.dim, self.radius))
            radial = np.zeros(self.radius + 1)
            np.maximum.at(radial, norms, np.abs(self.dense).ravel())
            cache = np.maximum.accumulate(radial[::-1])[::-1]
            self.__dict__["_suffix"] = cache
        return cache

    def sup_beyond(self, R) -> np.ndarray:
        """Bound on ``sup_{|ell| >= R} |P_hat(ell)|`` (``R > 0``).

        Stored coefficients cover ``|ell| <= radius``; past it the decay of each
        factor takes over.
        """
        R = np.atleast_1d(np.asarray(R, dtype=np.float64))
        if not self.factors:
            return np.zeros_like(R)
        outside = self._analytic_sup(np.maximum(R, self.radius + 1.0))
        inside = R <= self.radius
        if np.any(inside):
            idx = np.ceil(R[inside]).astype(np.int64)
            stored = self._suffix_max()[idx] + self.err
            outside[inside] = np.maximum(outside[inside], stored)
        return outside

    def times(self, F: Factor) -> "Product":
        Fd = F.spectrum.to_dense()
        size = (2 * (self.radius + F.cutoff) + 1) ** self.dim
        if size > DENSE_BUDGET:
            raise UnsupportedInstanceError("product spectrum exceeds the dense budget")
        dense = fftconvolve(self.dense, Fd) if self.radius else self.dense.flat[0] * Fd
        fft_err = 1e-13 * float(np.abs(self.dense).sum() * np.abs(Fd).sum())
        # truncating a factor perturbs each product coefficient by at most its tail
        err = self.err + F.tail(F.cutoff) + fft_err
        return Product(dense, self.radius + F.cutoff, self.factors + [F], err)


@dataclass
class LatticeMeasure:
    """``mu_hat(xi) = sum_ell P_hat(ell) f0_hat(xi - ell)`` with a window ``W``."""

    f0: BumpFunction
    P: Product
    window: int

    @property
    def dim(self) -> int:
        return self.f0.dim

    def _S0(self) -> float:
        b = self.f0.scale / math.pi
        return (1.0 + 2.0 * sum_shift(b, self.f0.K + 1, 0)) ** self.dim

    def error(self) -> float:
        """Uniform bound on ``|computed - true|`` for evaluations with ``|xi| <= radius - W``."""
        P = self.P
        return (
            P.err * self._S0()
            + P.tail(P.radius)
            + (1.0 + P.err) * self.f0.shifted_tail(self.window)
        )

    def _f0_samples(self) -> np.ndarray:
        W = self.window
        pts = lattice_cube(self.dim, W)
        return self.f0.transform(pts).reshape((2 * W + 1,) * self.dim)

    def lattice_values(self, R: int) -> np.ndarray:
        """Dense ``mu_hat(ell)`` for ``|ell| <= R``."""
        W, P = self.window, self.P
        need = R + W
        if P.radius >= need:
            cut = P.radius - need
            arr = P.dense[(slice(cut, cut + 2 * need + 1),) * self.dim]
        else:
            arr = np.pad(P.dense, need - P.radius)
        full = fftconvolve(arr, self._f0_samples())
        c = need + W - R
        return full[(slice(c, c + 2 * R + 1),) * self.dim]

    def values(self, xi) -> np.ndarray:
        """``mu_hat`` at arbitrary points (rows of ``xi``)."""
        xi = np.asarray(xi, dtype=np.float64).reshape(-1, self.dim)
        W, P = self.window, self.P
        out = np.zeros(len(xi), dtype=np.complex128)
        for idx, x in enumerate(xi):
            centre = np.round(x).astype(np.int64)
            lo = np.maximum(centre - W, -P.radius)
            hi = np.minimum(centre + W, P.radius)
            if np.any(lo > hi):
                continue
            sl = tuple(slice(int(a) + P.radius, int(b) + P.radius + 1) for a, b in zip(lo, hi))
            block = P.dense[sl]
            axes = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo, hi)], indexing="ij")
            ells = np.stack([a.ravel() for a in axes], axis=1)
            out[idx] = np.sum(block.ravel() * self.f0.transform(x - ells))
        return out

    def decay_bound(self, t) -> np.ndarray:
        """Bound on ``|mu_hat(xi)|`` for ``|xi| = t``, from the decay of both factors."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        half = t / 2.0
        far = self.P.abs_total() * self.f0.factor_hat_bound(half)
        near = self.P.sup_beyond(half) * self._S0() if self.P.factors else np.zeros_like(t)
        return far + near

    def mass(self) -> float:
        return float(self.values(np.zeros((1, self.dim)))[0].real)


# ---------------------------------------------------------------------------
# shift sums and scale selection


def chi_fm_transform(chi_hat, FM: SparseSpectrum, xi, C_chi: float = 0.0, K: int = 0, tail_mass: float = 0.0):
    """``sum_ell F_hat(ell) chi_hat(xi - ell)`` over the stored spectrum.

    Returns ``(value, budget)``; the budget bounds the contribution of the
    frequencies beyond the cutoff by ``tail_mass * C_chi (1 + dist)^-K``.
    """
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    diffs = xi[None, :] - FM.freqs.astype(np.float64)
    value = complex(np.sum(FM.coef * np.asarray(chi_hat(diffs)).reshape(-1)))
    dist = max(0.0, FM.cutoff - float(np.max(np.abs(xi))))
    budget = tail_mass * C_chi * (1.0 + dist) ** (-K) if tail_mass else 0.0
    return value, budget


@dataclass
class WitnessGrid:
    radius: int
    offgrid: np.ndarray  # (P, dim) non-lattice points

    @property
    def size(self) -> int:
        d = self.offgrid.shape[1]
        return (2 * self.radius + 1) ** d + len(self.offgrid)


def witness_grid(dim: int, radius: int = 1024, per_shell: int = 10, seed: int = 0) -> WitnessGrid:
    """All lattice points with ``|xi| <= radius`` plus ``per_shell`` off-lattice
    points in every dyadic shell ``[2^j, 2^{j+1})`` below the radius."""
    rng = np.random.default_rng(seed)
    pts = [rng.uniform(-1, 1, size=(per_shell, dim))]
    j = 0
    while 2 ** j < radius:
        lo, hi = 2.0 ** j, min(2.0 ** (j + 1), radius)
        r = rng.uniform(lo, hi, size=per_shell)
        direction = rng.uniform(-1, 1, size=(per_shell, dim))
        axis = rng.integers(0, dim, size=per_shell)
        direction[np.arange(per_shell), axis] = rng.choice([-1.0, 1.0], size=per_shell)
        pts.append(direction * r[:, None])
        j += 1
    off = np.concatenate(pts)
    # keep strictly off the lattice
    frac = off - np.round(off)
    off[np.all(np.abs(frac) < 1e-6, axis=1)] += 0.5
    return WitnessGrid(radius, off)


@dataclass
class DriftCheck:
    max_ratio: float  # max over the grid of (|drift| + budget) / g
    grid_ok: bool
    tail_ok: bool
    tail_from: float
    budget: float

    def margin(self, delta: float) -> float:
        return delta - self.max_ratio


def check_drift(new: LatticeMeasure, old: LatticeMeasure, delta: float, s: float, n: int, grid: WitnessGrid) -> DriftCheck:
    """Certify ``|mu_hat_new - mu_hat_old| <= delta g`` on the grid and beyond."""
    d = new.dim
    R = grid.radius
    budget = new.error() + old.error()
    lat = np.abs(new.lattice_values(R) - old.lattice_values(R)) + budget
    g_lat = g_envelope(s, n, lattice_cube(d, R)).reshape(lat.shape)
    ratio = float(np.max(lat / g_lat))
    off = np.abs(new.values(grid.offgrid) - old.values(grid.offgrid)) + budget
    ratio = max(ratio, float(np.max(off / g_envelope(s, n, grid.offgrid))))
    tail_ok = _tail_certificate(new, old, delta, s, n, R)
    return DriftCheck(ratio, ratio <= delta, tail_ok, float(R), budget)


def _tail_certificate(new: LatticeMeasure, old: LatticeMeasure, delta: float, s: float, n: int, R: float) -> bool:
    """``bound_new + bound_old <= delta g`` for every ``|xi| > R``.

    Checked on a geometric grid of ratio 1.01 up to 1e40: both bounds are
    non-increasing in ``|xi|`` and ``log g`` has log-derivative of modulus at most
    ``s + n + 2`` there, so comparing each left endpoint with the smaller endpoint
    value of ``g`` over the cell, shrunk by ``1.01^(s+n+2)``, covers the cell. Past
    1e40 the bounds fall like ``|xi|^-K`` with ``K > s`` while ``g`` falls no faster
    than ``|xi|^-s``.
    """
    t = R * 1.01 ** np.arange(0, int(math.log(1e40 / R) / math.log(1.01)) + 2)
    bound = new.decay_bound(t) + old.decay_bound(t)
    g = g_envelope(s, n, t)
    gmin = np.minimum(g[:-1], g[1:]) / 1.01 ** (s + n + 2)
    return bool(np.all(bound[:-1] <= delta * gmin))


@dataclass
class ScaleChoice:
    M: float
    margin: float
    check: DriftCheck
    tried: list


def select_M_star(
    delta: float,
    M0: float,
    chi: LatticeMeasure,
    instance: ProblemInstance,
    s: float,
    phi: BumpFunction,
    grid: WitnessGrid,
    k_cap: int = 14,
    factor_tol: float = 1e-7,
) -> tuple:
    """Smallest ``M = 2^k`` in the admissible scales with ``M >= M0`` whose
    factor keeps ``chi F_M`` within ``delta g`` of ``chi``.

    Returns ``(ScaleChoice, Factor, LatticeMeasure)``.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    m, n = instance.m, instance.n
    Q, psi = instance.Q, instance.psi
    tried = []
    k = max(1, math.ceil(math.log2(max(M0, 1.0)) - 1e-12))
    while k <= k_cap:
        if not scriptM_member(k, Q, psi, s):
            tried.append({"k": k, "admissible": False})
            k += 1
            continue
        M = 2.0 ** k
        Qp = scale_set_Q_prime(Q, psi, s, M, m, n)
        if len(Qp) == 0:
            tried.append({"k": k, "admissible": True, "empty": True})
            k += 1
            continue
        try:
            F = make_factor(M, Qp, phi, psi, instance.theta, m, factor_tol)
            new = LatticeMeasure(chi.f0, chi.P.times(F), chi.window)
        except UnsupportedInstanceError as exc:
            raise SearchCapExceeded(
                f"spectral budget exhausted at M = 2^{k}", diagnostics={"tried": tried, "reason": str(exc)}
            ) from exc
        check = check_drift(new, chi, delta, s, n, grid)
        tried.append({"k": k, "admissible": True, "max_ratio": check.max_ratio, "tail_ok": check.tail_ok})
        if check.grid_ok and check.tail_ok:
            return ScaleChoice(M, check.margin(delta), check, tried), F, new
        k += 1
    raise SearchCapExceeded(f"no admissible scale up to 2^{k_cap} meets delta = {delta}", diagnostics={"tried": tried})


# ---------------------------------------------------------------------------
# the construction


@dataclass
class MeasureStage:
    k: int
    scales: list
    deltas: list
    margins: list
    drifts: list  # DriftCheck per stage
    measures: list  # LatticeMeasure for mu_0 .. mu_k
    factors: list
    instance: ProblemInstance
    s: float
    f0: BumpFunction
    phi: BumpFunction
    grid: WitnessGrid
    complete: bool = True
    failure: Optional[str] = None

    @property
    def measure(self) -> LatticeMeasure:
        return self.measures[-1]

    def density(self, x) -> np.ndarray:
        """``f0(x) prod_j F_{M_j}(x)`` for rows ``x`` in ``R^{mn}``."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.f0.dim)
        out = self.f0(x)
        for F in self.factors:
            out = out * fm_direct(x, F.Qprime, self.phi, self.instance.psi, self.instance.theta, self.instance.m)
        return out

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "complete": self.complete,
            "failure": self.failure,
            "s": self.s,
            "scales": [float(M) for M in self.scales],
            "deltas": [float(d) for d in self.deltas],
            "margins": [float(x) for x in self.margins],
            "drift_ratio": [float(d.max_ratio) for d in self.drifts],
            "error_budget": [float(d.budget) for d in self.drifts],
            "qprime_sizes": [len(F.Qprime) for F in self.factors],
            "factor_cutoffs": [int(F.cutoff) for F in self.factors],
            "total_mass": [float(mu.mass()) for mu in self.measures],
            "K": self.phi.K,
            "support_radius": self.phi.c,
            "witness_radius": self.grid.radius,
        }


def delta_schedule(k_max: int) -> list:
    return [2.0 ** (-k - 1) for k in range(1, k_max + 1)]


def build_measure(
    k_max: int,
    instance: ProblemInstance,
    s: float,
    phi: BumpFunction,
    f0: BumpFunction,
    deltas: Optional[list] = None,
    grid: Optional[WitnessGrid] = None,
    k_cap: int = 14,
    window: int = 256,
    M0: float = 1.0,
) -> MeasureStage:
    """Choose ``M_1 < M_2 < ...`` with ``M_k >= 2 M_{k-1}`` and assemble ``mu_k``."""
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    deltas = delta_schedule(k_max) if deltas is None else list(deltas)
    mn = instance.mn
    grid = witness_grid(mn) if grid is None else grid
    mu = LatticeMeasure(f0, Product.identity(mn), window)
    stage = MeasureStage(0, [], [], [], [], [mu], [], instance, s, f0, phi, grid)
    lower = M0
    for k in range(1, k_max + 1):
        try:
            choice, F, mu = select_M_star(deltas[k - 1], lower, mu, instance, s, phi, grid, k_cap)
        except SearchCapExceeded as exc:
            stage.complete = False
            stage.failure = str(exc)
            exc.diagnostics["partial_stage"] = stage.to_dict()
            raise
        stage.k = k
        stage.scales.append(choice.M)
        stage.deltas.append(deltas[k - 1])
        stage.margins.append(choice.margin)
        stage.drifts.append(choice.check)
        stage.measures.append(mu)
        stage.factors.append(F)
        lower = 2 * choice.M
    return stage


# ---------------------------------------------------------------------------
# reports


@dataclass
class DecayRow:
    shell_lo: float
    shell_hi: float
    max_abs_mu_hat: float
    envelope: float
    ratio: float


def decay_report(stage: MeasureStage, s: float, shells=range(0, 9), per_shell: int = 10, seed: int = 0) -> list:
    """Max of ``|mu_hat_k|`` per dyadic shell against ``C g`` at the shell centre,
    with ``C`` fitted on the first shell."""
    mu = stage.measure
    d, n = mu.dim, stage.instance.n
    shells = list(shells)
    R = 2 ** (shells[-1] + 1)
    lat = np.abs(mu.lattice_values(R))
    pts = lattice_cube(d, R)
    norms = sup_norm(pts).reshape(lat.shape)
    rng = np.random.default_rng(seed)
    maxima = []
    for j in shells:
        lo, hi = 2.0 ** j, 2.0 ** (j + 1)
        sel = (norms >= lo) & (norms < hi)
        best = float(lat[sel].max(initial=0.0))
        direction = rng.uniform(-1, 1, size=(per_shell, d))
        direction[:, 0] = 1.0
        off = direction * rng.uniform(lo, hi, size=(per_shell, 1))
        best = max(best, float(np.abs(mu.values(off)).max()))
        maxima.append(best)
    centres = [1.5 * 2.0 ** j for j in shells]
    C = maxima[0] / g_scalar(s, n, centres[0])
    rows = []
    for j, best, c in zip(shells, maxima, centres):
        env = C * g_scalar(s, n, c)
        rows.append(DecayRow(2.0 ** j, 2.0 ** (j + 1), best, env, best / env if env > 0 else math.inf))
    return rows


@dataclass
class Census:
    fraction: float
    samples: int
    per_scale_counts: list  # mean number of q with a solution, per scale
    min_counts: list


def density_samples(stage: MeasureStage, sample_count: int, n_candidates: int, seed: int) -> np.ndarray:
    """Sampling-importance-resampling from uniform candidates on ``supp f0``."""
    rng = np.random.default_rng(seed)
    c = stage.f0.c
    cand = rng.uniform(-c, c, size=(n_candidates, stage.f0.dim))
    w = stage.density(cand)
    w = np.where(w > 0, w, 0.0)
    if w.sum() <= 0:
        raise ValueError("no candidate hit the support of the density")
    idx = rng.choice(n_candidates, size=sample_count, replace=True, p=w / w.sum())
    return cand[idx]


def membership_census(stage: MeasureStage, sample_count: int = 1000, n_candidates: int = 200_000, seed: int = 0, x=None) -> Census:
    """Fraction of density-weighted samples with a solution at every built scale."""
    inst = stage.instance
    X = density_samples(stage, sample_count, n_candidates, seed) if x is None else np.asarray(x, dtype=np.float64)
    counts = np.array(
        [[approximation_counts(p, F.Qprime, inst.psi, inst.theta, inst.m) for F in stage.factors] for p in X]
    ).reshape(len(X), len(stage.factors))
    ok = np.all(counts >= 1, axis=1)
    return Census(
        fraction=float(ok.mean()) if len(X) else 0.0,
        samples=len(X),
        per_scale_counts=[float(c) for c in counts.mean(axis=0)],
        min_counts=[int(c) for c in counts.min(axis=0)],
    )


def write_decay_csv(rows: list, path, header: Optional[str] = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["shell_lo", "shell_hi", "max_abs_mu_hat", "envelope", "ratio"])
        for r in rows:
            w.writerow([repr(r.shell_lo), repr(r.shell_hi), repr(r.max_abs_mu_hat), repr(r.envelope), repr(r.ratio)])


def write_stage_json(stage: MeasureStage, path, header: Optional[dict] = None, extra: Optional[dict] = None) -> None:
    doc = dict(header or {})
    doc["stage"] = stage.to_dict()
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
