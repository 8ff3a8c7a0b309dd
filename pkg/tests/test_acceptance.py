"""Acceptance gate: one check per criterion, each printing a PASS/FAIL line."""

import itertools
import math

import numpy as np
import pytest

from wellapprox.approx_core import (
    ProblemInstance,
    all_nonzero,
    axis_powers_of_two,
    convergence_hypothesis,
    estimate_exponent,
    fourier_dimension,
    hausdorff_dimension,
    power_law,
)
from wellapprox.divisors import (
    divisor_set,
    divisor_set_bruteforce,
    integer_divisor_count,
    scale_set_Q_prime,
    scriptM_member,
)
from wellapprox.measure_builder import build_measure, decay_report, membership_census, witness_grid
from wellapprox.slab_verify import (
    LebesgueMeasure,
    SlabFamily,
    borel_cantelli_sums,
    lattice_lemma_check,
    plane_fourier_many,
    plane_fourier_oracle_grid,
)
from wellapprox.torus_spectrum import (
    default_order,
    fm_spectrum,
    make_bspline_bump,
    oracle_from_tables,
    phi_q_theta_many,
    phi_q_theta_oracle_table,
    verify_FM_bounds,
)

SHAPES = [(1, 1), (2, 1), (1, 2), (2, 2)]


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


def cube(dim, R):
    """All integer points with sup norm at most ``R``, lexicographic."""
    axis = np.arange(-R, R + 1, dtype=np.int64)
    return np.array(list(itertools.product(axis, repeat=dim)), dtype=np.int64).reshape(-1, dim)


def nonzero_cube(dim, R):
    pts = cube(dim, R)
    return pts[np.any(pts != 0, axis=1)]


# 1. dimension formulas


@pytest.mark.parametrize("m, n, tau", [(1, 1, 0.5), (1, 1, 1.0), (1, 1, 2.0), (2, 1, 2.0), (1, 2, 1.0)])
def test_dimension_formulas(m, n, tau, report):
    inst = ProblemInstance(m=m, n=n, Q=all_nonzero(n), psi=power_law(n, tau), theta=(0.0,) * m)
    s_est = estimate_exponent(inst.Q, inst.psi, "s", tol=1e-3)
    eta_est = estimate_exponent(inst.Q, inst.psi, "eta", m=m, tol=1e-3)
    dim_f = fourier_dimension(inst, s_est)
    dim_h = hausdorff_dimension(inst, eta_est)
    want_f = min(2 * n / (1 + tau), m * n)
    want_h = min(m * (n - 1) + (m + n) / (1 + tau), m * n)
    ok = (
        not isinstance(dim_f, str)
        and abs(dim_f - want_f) <= 0.02
        and abs(dim_h - want_h) <= 0.02
    )
    report(1, ok, f"(m,n,tau)=({m},{n},{tau}) dim_F={dim_f} want {want_f:.4f}; dim_H={dim_h:.4f} want {want_h:.4f}")
    assert ok


# 2. axis example


def test_axis_example(report):
    inst = ProblemInstance(m=1, n=2, Q=all_nonzero(2), psi=axis_powers_of_two(2), theta=(0.0,))
    s_est = estimate_exponent(inst.Q, inst.psi, "s", tol=1e-3)
    verdict = convergence_hypothesis(inst)
    ok = s_est.upper <= 0.01 and verdict == "divergent"
    report(2, ok, f"s in [{s_est.lower:.4g}, {s_est.upper:.4g}], sum psi^m {verdict}")
    assert ok


# 3. shifted bump coefficients


@pytest.mark.parametrize("m, n", SHAPES)
def test_phi_q_theta_closed_form(m, n, report):
    grid = 512
    theta = (0.37, 0.61)[:m]
    psi = power_law(n, 1.0)
    phi = make_bspline_bump(m, default_order(m * n, 0.45))
    ells = cube(m * n, 8)
    worst = 0.0
    for q in nonzero_cube(n, 4):
        eps = float(psi.values(q[None])[0])
        exact = phi_q_theta_many(phi, eps, q, theta, ells, m, n)
        tables = phi_q_theta_oracle_table(phi, eps, q, theta, m, n, grid)
        oracle = oracle_from_tables(tables, ells, m, n, grid)
        worst = max(worst, float(np.max(np.abs(exact - oracle))))
    ok = worst <= 1e-6
    report(3, ok, f"(m,n)=({m},{n}) max |closed form - oracle| = {worst:.2e} over |l|<=8, |q|<=4")
    assert ok


# 4. single-scale function


def test_single_scale_bounds(report):
    s = 0.45
    Q, psi = all_nonzero(1), power_law(1, 1.0)
    phi = make_bspline_bump(1, default_order(1, s))
    scales, k = [], 7
    while len(scales) < 3:
        if scriptM_member(k, Q, psi, s):
            scales.append(2.0 ** k)
        k += 1
    lines, consts, ok = [], [], True
    for M in scales:
        Qp = scale_set_Q_prime(Q, psi, s, M, 1, 1)
        Lambda = 4 * int(np.abs(Qp.members).max())
        S = fm_spectrum(Qp, phi, psi, (0.0,), Lambda, 1)
        r = verify_FM_bounds(S, M, s)
        near = np.abs(S.freqs).max(axis=1) <= 100
        b = bool(np.all(np.abs(S.coef[near]) <= 1.0 + 1e-12))
        good = r.zero_is_one and b and r.zero_annulus and math.isfinite(r.fitted_constant)
        ok &= good
        consts.append(r.fitted_constant)
        lines.append(f"M={M:g}: a={r.zero_is_one} b={b} c={r.zero_annulus} C={r.fitted_constant:.4g}")
    spread = max(consts) / min(consts) if min(consts) > 0 else math.inf
    ok = ok and spread < 10
    report(4, ok, "; ".join(lines) + f"; C spread {spread:.3g}x")
    assert ok


# 5. plane measures


@pytest.mark.parametrize("n", [2, 3])
def test_plane_fourier_oracle(n, report):
    ks = cube(n, 10)
    worst, worst_err = 0.0, 0.0
    for q in nonzero_cube(n, 4):
        for theta in (0.0, 0.3):
            exact = plane_fourier_many(q, theta, ks)
            oracle, err = plane_fourier_oracle_grid(q, theta, ks)
            worst = max(worst, float(np.max(np.abs(exact - oracle))))
            worst_err = max(worst_err, float(np.max(err)))
    ok = worst <= 1e-6
    report(5, ok, f"n={n} max |closed form - oracle| = {worst:.2e} (oracle error bound {worst_err:.1e})")
    assert ok


# 6. lattice lemma with Lebesgue measure


def test_lebesgue_sandwich(report):
    rows, seed, ok = [], 0, True
    for m in (1, 2):
        for delta in (0.05, 0.1, 0.2):
            for q in ((1,), (3,), (2, 1)):
                for th in (0.0, 0.3):
                    fam = SlabFamily(delta, q, (th,) * m)
                    rep = lattice_lemma_check(LebesgueMeasure(m * len(q)), fam, sample_budget=1_000_000, seed=seed)
                    seed += 1
                    target = (2 * delta) ** m
                    good = rep.contains(target) and rep.sum_upper_cutoff == 0 and rep.sum_lower_cutoff == 0
                    ok &= good
                    if not good:
                        rows.append(f"m={m} delta={delta} q={q} theta={th}: {rep.estimate:.5f} vs {target:.5f}")
    report(6, ok, "36 families within 3 sigma, correction sums zero" if ok else "; ".join(rows))
    assert ok


# 7. divisor suite


def forward_divisors(m, n, R):
    """Every pair ``(l, q)`` with ``l = k q^T``, ``k != 0`` and ``|l| <= R``,
    sorted by ``l`` then ``q``, as integer codes."""
    base = 2 * R + 1
    ls, qs = [], []
    for q in nonzero_cube(n, R):
        r = int(np.abs(q).max())
        ks = nonzero_cube(m, R // r)
        ls.append((ks[:, :, None] * q[None, None, :]).reshape(len(ks), m * n))
        qs.append(np.broadcast_to(q, (len(ks), n)))
    return encode(np.concatenate(ls), R, base), encode(np.concatenate(qs), R, base)


def encode(a, R, base):
    """Lexicographic-order-preserving integer code of each row."""
    out = np.zeros(len(a), dtype=np.int64)
    for j in range(a.shape[1]):
        out = out * base + (a[:, j] + R)
    return out


def decode(codes, dim, R, base):
    out = np.empty((len(codes), dim), dtype=np.int64)
    c = codes.copy()
    for j in range(dim - 1, -1, -1):
        out[:, j] = c % base - R
        c //= base
    return out


@pytest.mark.parametrize("m, n", SHAPES)
def test_divisor_suite(m, n, report):
    R = 200
    base = 2 * R + 1
    tau = np.array([0] + [integer_divisor_count(k) for k in range(1, R + 1)])
    lc, qc = forward_divisors(m, n, R)
    order = np.lexsort((qc, lc))
    lc, qc = lc[order], qc[order]
    support, counts = np.unique(lc, return_counts=True)

    # the whole support of D, exhaustively
    got = []
    for ell in decode(support, m * n, R, base).tolist():
        got.extend(divisor_set(ell, m, n))
    exact = np.array_equal(encode(np.array(got, dtype=np.int64).reshape(-1, n), R, base), qc)
    norms = np.abs(decode(support, m * n, R, base)).max(axis=1)
    envelope = bool(np.all(counts <= 2 * tau[norms]))

    # off the support D is empty: exhaustive for mn <= 2, seeded sample for mn = 4
    if m * n <= 2:
        off = np.setdiff1d(encode(nonzero_cube(m * n, R), R, base), support)
        label = "all"
    else:
        draws = np.random.default_rng(7).integers(-R, R + 1, size=(300_000, m * n))
        draws = draws[np.any(draws != 0, axis=1)]
        off = np.setdiff1d(encode(draws, R, base), support)
        label = "sampled"
    empty = all(not divisor_set(ell, m, n) for ell in decode(off, m * n, R, base).tolist())

    rng = np.random.default_rng(11)
    picks = decode(rng.choice(support, size=300, replace=False), m * n, R, base)
    picks = picks[np.abs(picks).max(axis=1) <= 40]
    brute = all(divisor_set(e, m, n) == divisor_set_bruteforce(e, m, n) for e in picks)

    ok = exact and envelope and empty and brute
    report(
        7,
        ok,
        f"(m,n)=({m},{n}) {len(support)} l with D nonempty match oracle={exact}; "
        f"{label} {len(off)} others empty={empty}; |D|<=2tau={envelope}; brute force spot check={brute}",
    )
    assert ok


# 8. two-stage construction


def test_two_stage_construction(report):
    s = 0.45
    inst = ProblemInstance(m=1, n=1, Q=all_nonzero(1), psi=power_law(1, 1.0), theta=(0.0,))
    K = default_order(1, s)
    phi, f0 = make_bspline_bump(1, K), make_bspline_bump(1, K)
    stage = build_measure(2, inst, s, phi, f0, grid=witness_grid(1, seed=0))
    drift_ok = stage.complete and all(
        d.max_ratio <= 2.0 ** (-k - 1) and d.tail_ok for k, d in enumerate(stage.drifts, start=1)
    )
    rows = decay_report(stage, s, shells=range(0, 9))
    decay_ok = all(r.ratio <= 1.0 + 1e-12 for r in rows)
    census = membership_census(stage, sample_count=1000, n_candidates=200_000, seed=0)
    ok = drift_ok and decay_ok and census.fraction == 1.0
    drifts = ", ".join(f"{d.max_ratio:.3g}" for d in stage.drifts)
    report(
        8,
        ok,
        f"scales {stage.scales}; drift/g {drifts}; max shell ratio {max(r.ratio for r in rows):.3g}; "
        f"census fraction {census.fraction}",
    )
    assert ok


# 9. Borel-Cantelli sums


def test_borel_cantelli(report):
    Q, psi = all_nonzero(1), power_law(1, 1.0)
    above = borel_cantelli_sums(Q, psi, 0.6, 1)
    below = borel_cantelli_sums(Q, psi, 0.4, 1)
    first = max(above.ratios_first) < 0.95
    second = max(above.ratios_second) < 0.95
    ok = first and second and not below.cauchy_second
    report(
        9,
        ok,
        f"s=0.6 first series max ratio {max(above.ratios_first):.3f}, second {max(above.ratios_second):.3f}; "
        f"s=0.4 second series Cauchy={below.cauchy_second}",
    )
    assert ok
