"""Matrix divisor sets and the dyadic scale blocks Q(M), L(M), Q'(M)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .approx_core import ApproxFunction, DenominatorSet, lattice_cube, sup_norm
from .errors import InfiniteSetError, UnsupportedInstanceError

# relative slack on the Q(M) window edges; shared by both edges so that
# Q(M) and Q(2M) stay disjoint
_EDGE = 1e-12


@lru_cache(maxsize=65536)
def _positive_divisors(k: int) -> tuple:
    small, large = [], []
    d = 1
    while d * d <= k:
        if k % d == 0:
            small.append(d)
            if d * d != k:
                large.append(k // d)
        d += 1
    return tuple(small + large[::-1])


def positive_divisors(k: int) -> list:
    return list(_positive_divisors(abs(int(k))))


def integer_divisor_count(ell: int) -> int:
    """tau(ell): number of positive divisors, by trial division."""
    if int(ell) != ell or ell <= 0:
        raise ValueError("divisor count needs a positive integer")
    return len(positive_divisors(ell))


def wigert_envelope(s: float, t: float) -> float:
    """``exp(s log t / log log t)``, defined for ``t > e``."""
    if t <= math.e:
        raise ValueError("wigert envelope needs t > e")
    lt = math.log(t)
    return math.exp(s * lt / math.log(lt))


def _as_matrix(ell, m: int, n: int) -> np.ndarray:
    ell = np.asarray(ell, dtype=np.int64).reshape(-1)
    if ell.size != m * n:
        raise ValueError(f"ell must have length m*n = {m * n}")
    return ell.reshape(m, n)


def divisor_set(ell, m: int, n: int) -> list:
    """``D(ell) = {q in Z^n : ell = k q^T for some k in Z^m}`` for ``ell != 0``.

    Uses the injection ``q -> q_{j0}`` into the signed divisors of the
    largest entry ``ell_{i0 j0}``; each candidate is completed row-wise and
    then verified.
    """
    L = _as_matrix(ell, m, n)
    if not L.any():
        raise InfiniteSetError("D(0) is all of Z^n")
    rows = L.tolist()
    i0, j0 = np.unravel_index(np.argmax(np.abs(L)), L.shape)
    pivot = rows[i0][j0]
    row = rows[i0]
    out = []
    for d in _positive_divisors(abs(pivot)):
        for qj0 in (d, -d):
            q = []
            for c in row:
                num = qj0 * c
                if num % pivot:
                    break
                q.append(num // pivot)
            else:
                if _rows_divisible(rows, q, j0):
                    out.append(tuple(q))
    return sorted(out)


def _rows_divisible(rows: list, q: list, j: int) -> bool:
    """Whether every row is an integer multiple of ``q`` (``q_j != 0``)."""
    for r in rows:
        if r[j] % q[j]:
            return False
        k = r[j] // q[j]
        if any(a != k * b for a, b in zip(r, q)):
            return False
    return True


def _is_divisor(L: np.ndarray, q) -> bool:
    """Whether ``L = k q^T`` for an integer ``k``."""
    q = list(q)
    nz = [j for j, c in enumerate(q) if c]
    if not nz:
        return not L.any()
    j = nz[0]
    for i in range(L.shape[0]):
        if L[i, j] % q[j]:
            return False
        k = L[i, j] // q[j]
        if any(L[i, jj] != k * q[jj] for jj in range(L.shape[1])):
            return False
    return True


def divisor_set_bruteforce(ell, m: int, n: int) -> list:
    """Reference: test every ``q`` with ``|q| <= |ell|``."""
    L = _as_matrix(ell, m, n)
    R = int(np.abs(L).max())
    return sorted(tuple(int(c) for c in q) for q in lattice_cube(n, R) if _is_divisor(L, q))


@dataclass(frozen=True)
class ScaleSet:
    M: float
    members: np.ndarray  # (N, n) integer array, sorted lexicographically
    kind: str

    def __len__(self) -> int:
        return len(self.members)

    def as_set(self) -> set:
        return {tuple(int(c) for c in q) for q in self.members}


def _candidates(Q: DenominatorSet, psi: ApproxFunction, R: int) -> np.ndarray:
    if psi.support is not None:
        pts = psi.support(R)
        return pts[Q.contains_many(pts)] if len(pts) else pts
    if psi.star_radius is None and (2 * R + 1) ** Q.n > 10_000_000:
        raise UnsupportedInstanceError(
            f"no usable radius bound for psi family {psi.kind!r} (needs |q| <= {R})"
        )
    return Q.enumerate_up_to(R)


def psi_star_many(psi: ApproxFunction, pts: np.ndarray) -> np.ndarray:
    return psi.values(pts) / sup_norm(pts)


def scale_set_Q(Q: DenominatorSet, psi: ApproxFunction, s: float, M: float) -> ScaleSet:
    """``Q(M) = {q in Q : M/2 < psi_*(q)^(-s) <= M}``."""
    if s <= 0:
        raise ValueError("s must be positive")
    if M < 1:
        raise ValueError("M must be at least 1")
    R = int(math.floor(psi.radius_for_star(M ** (-1.0 / s) * (1 - 1e-9)) + 1e-9))
    pts = _candidates(Q, psi, R)
    if len(pts):
        star = psi_star_many(psi, pts)
        with np.errstate(divide="ignore"):
            inv = np.where(star > 0, star ** (-s), np.inf)
        keep = (inv > 0.5 * M * (1 + _EDGE)) & (inv <= M * (1 + _EDGE))
        pts = pts[keep]
    return ScaleSet(M=M, members=pts.reshape(-1, Q.n), kind="Q_of_M")


def l_radius(M: float, m: int, n: int) -> float:
    """``(M / (2 log2(M)^(n+1)))^(1/(2mn))``, the pruning radius."""
    if M < 2:
        raise ValueError("L(M) needs M >= 2")
    return (M / (2.0 * math.log2(M) ** (n + 1))) ** (1.0 / (2 * m * n))


def scale_set_L(M: float, m: int, n: int) -> ScaleSet:
    h = math.floor(l_radius(M, m, n) + 1e-12)
    pts = lattice_cube(m * n, h)
    pts = pts[np.any(pts != 0, axis=1)]
    return ScaleSet(M=M, members=pts, kind="L_of_M")


def scale_set_Q_prime(
    Q: DenominatorSet, psi: ApproxFunction, s: float, M: float, m: int, n: int
) -> ScaleSet:
    """``Q'(M) = Q(M)`` minus every divisor of a nonzero ``ell`` in ``L(M)``."""
    base = scale_set_Q(Q, psi, s, M)
    removed = set()
    for ell in scale_set_L(M, m, n).members:
        removed.update(divisor_set(ell, m, n))
    keep = [tuple(int(c) for c in q) not in removed for q in base.members]
    members = base.members[np.asarray(keep, dtype=bool)] if len(base) else base.members
    return ScaleSet(M=M, members=members, kind="Q_prime_of_M")


def block_mass(Q: DenominatorSet, psi: ApproxFunction, s: float, M: float) -> float:
    block = scale_set_Q(Q, psi, s, M)
    if not len(block):
        return 0.0
    return float(np.sum(psi_star_many(psi, block.members) ** s))


def scriptM_member(k: int, Q: DenominatorSet, psi: ApproxFunction, s: float) -> bool:
    """Whether ``2^k`` is an admissible scale: block mass ``>= k^-(n+1)``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return block_mass(Q, psi, s, 2.0 ** k) >= k ** (-(Q.n + 1))


def next_scale_in_scriptM(
    k_min: int, Q: DenominatorSet, psi: ApproxFunction, s: float, k_cap: int
) -> Optional[float]:
    """Smallest admissible ``2^k`` with ``k_min <= k <= k_cap``, else ``None``."""
    if k_min < 1:
        raise ValueError("k_min must be at least 1")
    for k in range(k_min, k_cap + 1):
        if scriptM_member(k, Q, psi, s):
            return 2.0 ** k
    return None


def find_M0(
    Q: DenominatorSet, psi: ApproxFunction, s: float, m: int, n: int, k_range: range
) -> Optional[float]:
    """First admissible ``2^k`` from which ``|Q'(M)| >= M / (4 log2^(n+1) M)``
    holds for every admissible scale through the end of ``k_range``."""
    ok_from = None
    for k in k_range:
        if not scriptM_member(k, Q, psi, s):
            continue
        M = 2.0 ** k
        size = len(scale_set_Q_prime(Q, psi, s, M, m, n))
        if size >= M / (4 * math.log2(M) ** (n + 1)):
            ok_from = M if ok_from is None else ok_from
        else:
            ok_from = None
    return ok_from
