"""Approximation functions, denominator sets and the series exponents.

Everything here works with the sup norm ``|q| = max_j |q_j|``. An
:class:`ApproxFunction` is always stored clamped (``0 <= psi <= 1/2`` and
``psi(0) = 1/2``); :func:`clamp_psi` is the only way to build one from a raw
rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, UnsupportedInstanceError

UNKNOWN_DIVERGENT = "unknown_divergent"

#: Upper bound on points materialised by a brute-force enumeration.
POINT_BUDGET = 10_000_000

DEFAULT_RADII = tuple(2 ** k for k in range(4, 15))


def sup_norm(q) -> np.ndarray:
    q = np.asarray(q)
    return np.max(np.abs(q), axis=-1)


def lattice_cube(n: int, R: int) -> np.ndarray:
    """All points of ``Z^n`` with sup norm ``<= R`` in lexicographic order."""
    if R < 0:
        return np.zeros((0, n), dtype=np.int64)
    side = np.arange(-R, R + 1, dtype=np.int64)
    grids = np.meshgrid(*([side] * n), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def shell_counts(n: int, radii) -> np.ndarray:
    """Number of lattice points of ``Z^n`` with sup norm exactly ``r``."""
    r = np.asarray(radii, dtype=np.float64)
    out = (2 * r + 1) ** n - np.maximum(2 * r - 1, 0) ** n
    return np.where(r == 0, 1.0, out)


# ---------------------------------------------------------------------------
# approximation functions


@dataclass(frozen=True)
class ApproxFunction:
    """Clamped approximation function ``Z^n -> [0, 1/2]``.

    ``rule`` maps an ``(N, n)`` integer array to raw values. The optional
    hooks let series and scale sets avoid brute-force enumeration:

    * ``radial``: raw value as a function of ``|q|`` alone.
    * ``support``: ``R -> (N, n)`` array containing every ``q`` with
      ``0 < |q| <= R`` and a nonzero value.
    * ``star_radius``: ``v -> R`` such that ``psi_*(q) >= v`` forces
      ``|q| <= R``.
    """

    n: int
    kind: str
    rule: Callable[[np.ndarray], np.ndarray]
    radial: Optional[Callable[[np.ndarray], np.ndarray]] = None
    support: Optional[Callable[[int], np.ndarray]] = None
    star_radius: Optional[Callable[[float], float]] = None
    monotone: bool = False
    clamped: bool = False
    params: dict = field(default_factory=dict)

    def values(self, q) -> np.ndarray:
        q = np.atleast_2d(np.asarray(q, dtype=np.int64))
        if q.shape[-1] != self.n:
            raise ValueError(f"expected vectors of length {self.n}, got {q.shape[-1]}")
        raw = np.asarray(self.rule(q), dtype=np.float64)
        if not self.clamped:
            return raw
        out = np.minimum(raw, 0.5)
        out[np.all(q == 0, axis=1)] = 0.5
        return out

    def radial_values(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        raw = np.asarray(self.radial(r), dtype=np.float64)
        out = np.minimum(raw, 0.5) if self.clamped else raw
        return np.where(r == 0, 0.5, out)

    def __call__(self, q) -> float:
        return float(self.values(np.asarray(q).reshape(1, -1))[0])

    def radius_for_star(self, v: float) -> float:
        """Radius outside which ``psi_*(q) < v``.

        Any clamped rule has ``psi_* <= 1/(2|q|)``, so ``1/(2v)`` always works;
        family hooks tighten it.
        """
        bound = 1.0 / (2.0 * v)
        if self.star_radius is not None:
            bound = min(bound, self.star_radius(v))
        return bound


def clamp_psi(raw: ApproxFunction) -> ApproxFunction:
    """Normalise ``raw`` to ``min(raw, 1/2)`` with ``psi(0) = 1/2``."""
    if raw.clamped:
        return raw
    return ApproxFunction(
        n=raw.n,
        kind=raw.kind,
        rule=raw.rule,
        radial=raw.radial,
        support=raw.support,
        star_radius=raw.star_radius,
        monotone=raw.monotone,
        clamped=True,
        params=dict(raw.params),
    )


def _safe_pow_norm(q: np.ndarray, tau: float) -> np.ndarray:
    r = sup_norm(q).astype(np.float64)
    with np.errstate(divide="ignore"):
        out = np.where(r > 0, r ** (-tau), np.inf)
    return out


def power_law(n: int, tau: float) -> ApproxFunction:
    """``psi(q) = |q|^(-tau)``, clamped."""
    if tau <= 0:
        raise ConfigError("tau must be positive")

    def radial(r):
        with np.errstate(divide="ignore"):
            return np.where(r > 0, np.asarray(r, dtype=np.float64) ** (-tau), np.inf)

    raw = ApproxFunction(
        n=n,
        kind="power",
        rule=lambda q: _safe_pow_norm(q, tau),
        radial=radial,
        star_radius=lambda v: v ** (-1.0 / (1.0 + tau)),
        monotone=True,
        params={"tau": float(tau)},
    )
    return clamp_psi(raw)


def symmetric_table(n: int, values: Sequence[float]) -> ApproxFunction:
    """``psi(q) = values[|q| - 1]`` for ``|q| <= len(values)``, zero beyond."""
    table = np.asarray(values, dtype=np.float64)
    if table.ndim != 1 or np.any(table < 0):
        raise ConfigError("radial table must be a list of nonnegative numbers")
    size = len(table)

    def radial(r):
        r = np.asarray(r, dtype=np.int64)
        out = np.zeros(r.shape, dtype=np.float64)
        ok = (r >= 1) & (r <= size)
        out[ok] = table[r[ok] - 1]
        return out

    raw = ApproxFunction(
        n=n,
        kind="symmetric",
        rule=lambda q: radial(sup_norm(q)),
        radial=radial,
        star_radius=lambda v: float(size),
        monotone=bool(np.all(np.diff(np.minimum(table, 0.5)) <= 0)),
        params={"values": table.tolist()},
    )
    return clamp_psi(raw)


def explicit_table(n: int, entries: dict) -> ApproxFunction:
    """Finite table ``{q: value}``; every other ``q`` maps to 0."""
    table = {tuple(int(c) for c in k): float(v) for k, v in entries.items()}
    for k, v in table.items():
        if len(k) != n or v < 0:
            raise ConfigError(f"bad table entry {k}: {v}")
    keys = sorted(k for k, v in table.items() if v > 0 and any(k))
    pts = np.array(keys, dtype=np.int64).reshape(-1, n)

    def rule(q):
        return np.array([table.get(tuple(row), 0.0) for row in q.tolist()], dtype=np.float64)

    def support(R):
        return pts[sup_norm(pts) <= R] if len(pts) else pts

    top = float(sup_norm(pts).max()) if len(pts) else 0.0
    raw = ApproxFunction(
        n=n,
        kind="table",
        rule=rule,
        support=support,
        star_radius=lambda v: top,
        params={"entries": [[*k, table[k]] for k in sorted(table)]},
    )
    return clamp_psi(raw)


def axis_powers_of_two(n: int) -> ApproxFunction:
    """``psi = 1/2`` on ``(2^k, 0, ..., 0)`` for ``k >= 1`` and 0 elsewhere."""

    def rule(q):
        q = np.asarray(q, dtype=np.int64)
        first = q[:, 0]
        rest_zero = np.all(q[:, 1:] == 0, axis=1) if n > 1 else np.ones(len(q), bool)
        pow2 = (first >= 2) & ((first & (first - 1)) == 0)
        return np.where(pow2 & rest_zero, 0.5, 0.0)

    def support(R):
        if R >= 2 ** 63:
            raise UnsupportedInstanceError("radius exceeds the int64 lattice range")
        ks = range(1, int(math.floor(math.log2(R))) + 1) if R >= 2 else range(0)
        pts = np.zeros((len(ks), n), dtype=np.int64)
        pts[:, 0] = [2 ** k for k in ks]
        return pts

    raw = ApproxFunction(n=n, kind="axis_powers_of_two", rule=rule, support=support)
    return clamp_psi(raw)


def from_callable(n: int, fn: Callable[[tuple], float], kind: str = "callable") -> ApproxFunction:
    """Wrap a scalar black-box rule. Only brute-force enumeration applies."""

    def rule(q):
        return np.array([float(fn(tuple(row))) for row in q.tolist()], dtype=np.float64)

    return clamp_psi(ApproxFunction(n=n, kind=kind, rule=rule))


def psi_star(psi: ApproxFunction, q) -> float:
    """``psi(q) / |q|`` for nonzero ``q``."""
    q = np.asarray(q, dtype=np.int64).reshape(-1)
    r = int(sup_norm(q))
    if r == 0:
        raise ValueError("psi_star is undefined at q = 0")
    return psi(q) / r


# ---------------------------------------------------------------------------
# denominator sets


@dataclass(frozen=True)
class DenominatorSet:
    """A subset ``Q`` of ``Z^n`` with an exact enumerator by sup-norm radius."""

    n: int
    kind: str = "all_nonzero"
    members: Optional[frozenset] = None
    predicate: Optional[Callable[[tuple], bool]] = None

    @property
    def is_full(self) -> bool:
        return self.kind == "all_nonzero"

    def contains(self, q) -> bool:
        q = tuple(int(c) for c in np.asarray(q).reshape(-1))
        if len(q) != self.n:
            return False
        if self.kind == "all_nonzero":
            return any(q)
        if self.kind == "table":
            return q in self.members
        return bool(self.predicate(q))

    def contains_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, self.n)
        if self.kind == "all_nonzero":
            return np.any(pts != 0, axis=1)
        return np.array([self.contains(p) for p in pts], dtype=bool)

    def enumerate_up_to(self, R: int) -> np.ndarray:
        """Every ``q`` in ``Q`` with ``0 < |q| <= R``, lexicographically sorted."""
        R = int(math.floor(R))
        if R < 1:
            return np.zeros((0, self.n), dtype=np.int64)
        if self.kind == "table":
            pts = sorted(m for m in self.members if 0 < max(abs(c) for c in m) <= R)
            return np.array(pts, dtype=np.int64).reshape(-1, self.n)
        if (2 * R + 1) ** self.n > POINT_BUDGET:
            raise UnsupportedInstanceError(
                f"enumerating |q| <= {R} in Z^{self.n} exceeds the point budget"
            )
        cube = lattice_cube(self.n, R)
        keep = np.any(cube != 0, axis=1)
        if self.kind != "all_nonzero":
            keep &= self.contains_many(cube)
        return cube[keep]


def all_nonzero(n: int) -> DenominatorSet:
    return DenominatorSet(n=n)


def table_set(n: int, members) -> DenominatorSet:
    return DenominatorSet(
        n=n, kind="table", members=frozenset(tuple(int(c) for c in m) for m in members)
    )


def predicate_set(n: int, predicate: Callable[[tuple], bool]) -> DenominatorSet:
    return DenominatorSet(n=n, kind="predicate", predicate=predicate)


@dataclass(frozen=True)
class ProblemInstance:
    m: int
    n: int
    Q: DenominatorSet
    psi: ApproxFunction
    theta: tuple

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ConfigError("m and n must be positive")
        if self.psi.n != self.n or self.Q.n != self.n:
            raise ConfigError("psi and Q must live on Z^n")
        if len(self.theta) != self.m:
            raise ConfigError("theta must have length m")

    @property
    def mn(self) -> int:
        return self.m * self.n


# ---------------------------------------------------------------------------
# series


@dataclass(frozen=True)
class _Terms:
    """Support of a series: sup norms, psi values and multiplicities."""

    norms: np.ndarray
    psi: np.ndarray
    weights: np.ndarray


def series_terms(Q: DenominatorSet, psi: ApproxFunction, R: int) -> _Terms:
    R = int(math.floor(R))
    if R < 1:
        empty = np.zeros(0)
        return _Terms(empty.astype(np.int64), empty, empty)
    if psi.radial is not None and Q.is_full:
        r = np.arange(1, R + 1, dtype=np.int64)
        return _Terms(r, psi.radial_values(r), shell_counts(Q.n, r))
    if psi.support is not None:
        pts = psi.support(R)
        pts = pts[Q.contains_many(pts)] if len(pts) else pts
    else:
        pts = Q.enumerate_up_to(R)
    norms = sup_norm(pts).astype(np.int64) if len(pts) else np.zeros(0, dtype=np.int64)
    vals = psi.values(pts) if len(pts) else np.zeros(0)
    return _Terms(norms, vals, np.ones(len(norms)))


def _term_values(t: _Terms, s: float, mode: str, m: Optional[int]) -> np.ndarray:
    r = t.norms.astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        if mode == "psi_star":
            base = np.where(t.psi > 0, t.psi / r, 0.0)
            out = np.where(base > 0, base ** s, 0.0)
        elif mode == "psi_pow_m":
            out = np.where(t.psi > 0, t.psi ** m, 0.0)
        elif mode == "rynne":
            base = np.where(t.psi > 0, t.psi / r, 0.0)
            out = np.where(base > 0, r ** m * base ** s, 0.0)
        else:
            raise ValueError(f"unknown series mode {mode!r}")
    return out * t.weights


def partial_series(
    Q: DenominatorSet,
    psi: ApproxFunction,
    s: float,
    R: int,
    mode: str = "psi_star",
    m: Optional[int] = None,
) -> float:
    """Exact finite sum over ``0 < |q| <= R`` of one of the three series.

    ``psi_star``: ``psi_*(q)^s``; ``psi_pow_m``: ``psi(q)^m`` (``s`` unused);
    ``rynne``: ``|q|^m psi_*(q)^s``.
    """
    if mode in ("psi_pow_m", "rynne") and m is None:
        raise ValueError(f"mode {mode!r} needs m")
    t = series_terms(Q, psi, R)
    return float(np.sum(_term_values(t, s, mode, m)))


def block_sums(t: _Terms, s: float, mode: str, m: Optional[int], R: int) -> np.ndarray:
    """Dyadic block sums ``B_k`` for ``k = 0 .. ceil(log2 R)``."""
    nblocks = int(math.ceil(math.log2(R))) + 1 if R > 1 else 1
    if t.norms.size == 0:
        return np.zeros(nblocks)
    idx = np.ceil(np.log2(t.norms.astype(np.float64)) - 1e-9).astype(np.int64)
    return np.bincount(idx, weights=_term_values(t, s, mode, m), minlength=nblocks)


def block_ratio(blocks: np.ndarray, n_fit: int = 4) -> float:
    """Geometric ratio fitted to the last ``n_fit`` nonzero blocks.

    Returns 0 when the tail blocks vanish (finite support).
    """
    tail = np.asarray(blocks[-n_fit:], dtype=np.float64)
    ks = np.arange(len(tail))
    keep = tail > 0
    if keep.sum() < 2:
        return 0.0
    slope = np.polyfit(ks[keep], np.log(tail[keep]), 1)[0]
    return float(math.exp(slope))


def classify_series(blocks, threshold: float = 1.0, n_fit: int = 4) -> tuple[bool, float]:
    ratio = block_ratio(blocks, n_fit)
    return ratio < threshold, ratio


@dataclass(frozen=True)
class ExponentEstimate:
    lower: float
    upper: float
    radius_used: int
    converged_sum_at_upper: float
    diverging_partial_at_lower: float
    analytic: Optional[float] = None
    ratio_at_upper: float = float("nan")
    ratio_at_lower: float = float("nan")

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError("bracket must be finite")
        if self.lower > self.upper:
            raise ValueError("lower > upper")

    @property
    def value(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper


def default_radii(Q: DenominatorSet, psi: ApproxFunction) -> tuple:
    if Q.n == 1 or (psi.radial is not None and Q.is_full) or psi.support is not None:
        return DEFAULT_RADII
    radii = tuple(R for R in DEFAULT_RADII if (2 * R + 1) ** Q.n <= POINT_BUDGET)
    if len(radii) < 2:
        raise UnsupportedInstanceError("point budget leaves no usable radius")
    return radii


def analytic_exponent(Q: DenominatorSet, psi: ApproxFunction, kind: str, m: Optional[int] = None):
    """Closed-form critical exponent for power laws on ``Z^n \\ {0}``."""
    if psi.kind != "power" or not Q.is_full:
        return None
    tau = psi.params["tau"]
    if kind == "s":
        return Q.n / (1.0 + tau)
    return (m + Q.n) / (1.0 + tau)


def estimate_exponent(
    Q: DenominatorSet,
    psi: ApproxFunction,
    kind: str = "s",
    m: Optional[int] = None,
    tol: float = 1e-3,
    R_schedule: Optional[Sequence[int]] = None,
    threshold: float = 1.0,
    n_fit: int = 4,
) -> ExponentEstimate:
    """Bracket the critical exponent of ``sum psi_*^s`` (``kind="s"``) or of
    Rynne's ``sum |q|^m psi_*^eta`` (``kind="eta"``) by bisection.

    At each candidate the series is called convergent when the geometric
    ratio fitted to its last ``n_fit`` dyadic blocks is below ``threshold``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if kind not in ("s", "eta"):
        raise ValueError("kind must be 's' or 'eta'")
    if kind == "eta" and m is None:
        raise ValueError("eta exponent needs m")
    radii = tuple(int(r) for r in (R_schedule or default_radii(Q, psi)))
    if not radii or any(b <= a for a, b in zip(radii, radii[1:])) or radii[0] < 1:
        raise ValueError("R_schedule must be positive and strictly increasing")
    R = radii[-1]
    mode = "psi_star" if kind == "s" else "rynne"
    terms = series_terms(Q, psi, R)

    def verdict(x):
        return classify_series(block_sums(terms, x, mode, m, R), threshold, n_fit)

    lo, hi = 0.0, float(Q.n + 1 if kind == "s" else m + Q.n + 1)
    ok, ratio_hi = verdict(hi)
    if not ok:
        raise UnsupportedInstanceError("series does not converge even at the trivial bound")
    ratio_lo = float("nan")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ok, ratio = verdict(mid)
        if ok:
            hi, ratio_hi = mid, ratio
        else:
            lo, ratio_lo = mid, ratio
    return ExponentEstimate(
        lower=lo,
        upper=hi,
        radius_used=R,
        converged_sum_at_upper=float(np.sum(_term_values(terms, hi, mode, m))),
        diverging_partial_at_lower=float(np.sum(_term_values(terms, lo, mode, m))),
        analytic=analytic_exponent(Q, psi, kind, m),
        ratio_at_upper=ratio_hi,
        ratio_at_lower=ratio_lo,
    )


def convergence_hypothesis(instance: ProblemInstance, R: Optional[int] = None, n_fit: int = 4) -> str:
    """Numerical verdict on ``sum_{q in Q} psi(q)^m``: convergent or divergent."""
    R = R or default_radii(instance.Q, instance.psi)[-1]
    terms = series_terms(instance.Q, instance.psi, R)
    ok, _ = classify_series(block_sums(terms, 0.0, "psi_pow_m", instance.m, R), 1.0, n_fit)
    return "convergent" if ok else "divergent"


def full_measure_known(instance: ProblemInstance) -> bool:
    """Symmetric psi on ``Z^n \\ {0}`` with ``mn > 2`` or monotone psi.

    For such instances a divergent ``sum psi^m`` gives a full-measure set,
    whose Fourier dimension is ``mn``.
    """
    sym = instance.psi.radial is not None and instance.Q.is_full
    return sym and (instance.mn > 2 or instance.psi.monotone)


def fourier_dimension(instance: ProblemInstance, s_est: ExponentEstimate, R: Optional[int] = None):
    """``min(2 s, mn)`` when ``sum psi^m`` converges.

    In the divergent case the value is ``mn`` for instances covered by
    :func:`full_measure_known`, otherwise :data:`UNKNOWN_DIVERGENT`.
    """
    if convergence_hypothesis(instance, R) == "convergent":
        return min(2.0 * s_est.value, float(instance.mn))
    if full_measure_known(instance):
        return float(instance.mn)
    return UNKNOWN_DIVERGENT


def hausdorff_dimension(instance: ProblemInstance, eta_est: ExponentEstimate) -> float:
    return min(instance.m * (instance.n - 1) + eta_est.value, float(instance.mn))


# ---------------------------------------------------------------------------
# JSON instances

INSTANCE_SCHEMA = {
    "type": "object",
    "required": ["m", "n", "theta", "psi", "Q"],
    "properties": {
        "m": {"type": "integer", "minimum": 1},
        "n": {"type": "integer", "minimum": 1},
        "theta": {"type": "array", "items": {"type": "number"}},
        "psi": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"type": "string"},
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "radial": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "entries": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
            },
        },
        "Q": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["all_nonzero", "predicate_table"]},
                "members": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
            },
        },
    },
}


def psi_from_dict(n: int, spec: dict) -> ApproxFunction:
    kind = spec["kind"]
    if kind == "power":
        if "tau" not in spec:
            raise ConfigError("power psi needs tau")
        return power_law(n, spec["tau"])
    if kind == "table":
        if "radial" in spec:
            return symmetric_table(n, spec["radial"])
        if "entries" in spec:
            return explicit_table(n, {tuple(e[:-1]): e[-1] for e in spec["entries"]})
        raise ConfigError("table psi needs 'radial' or 'entries'")
    if kind == "axis_powers_of_two":
        return axis_powers_of_two(n)
    raise UnsupportedInstanceError(f"unsupported psi family {kind!r}")


def instance_from_dict(data: dict) -> ProblemInstance:
    import jsonschema

    try:
        jsonschema.validate(data, INSTANCE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid instance: {exc.message}") from exc
    m, n = data["m"], data["n"]
    if len(data["theta"]) != m:
        raise ConfigError("theta must have length m")
    qspec = data["Q"]
    if qspec["kind"] == "all_nonzero":
        Q = all_nonzero(n)
    else:
        members = qspec.get("members")
        if members is None or any(len(row) != n for row in members):
            raise ConfigError("predicate_table needs members of length n")
        Q = table_set(n, members)
    return ProblemInstance(m=m, n=n, Q=Q, psi=psi_from_dict(n, data["psi"]), theta=tuple(data["theta"]))
