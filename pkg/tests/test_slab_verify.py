import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wellapprox.approx_core import ProblemInstance, all_nonzero, power_law, table_set
from wellapprox.measure_builder import build_measure, witness_grid
from wellapprox.slab_verify import (
    LebesgueMeasure,
    SlabFamily,
    SpectrumMeasure,
    StageMeasure,
    borel_cantelli_sums,
    correction_sum,
    in_slab_family,
    lattice_lemma_check,
    parseval_window_check,
    plane_fourier,
    plane_fourier_many,
    plane_fourier_oracle,
    plane_fourier_oracle_grid,
    write_lattice_csv,
)
from wellapprox.torus_spectrum import default_order, make_bspline_bump, spectrum_from_pairs


# slab families


def test_slab_family_guards():
    with pytest.raises(ValueError):
        SlabFamily(0.5, (1,), (0.0,))
    with pytest.raises(ValueError):
        SlabFamily(0.1, (0, 0), (0.0,))
    assert SlabFamily(0.1, (3, 4), (0.0,)).delta_star == pytest.approx(0.02)


def test_in_slab_examples():
    fam = SlabFamily(0.1, (1,), (0.0,))
    assert in_slab_family([0.0], fam)[0]
    assert not in_slab_family([0.5], fam)[0]
    fam2 = SlabFamily(0.05, (2, 1), (0.3, 0.3))
    x = np.array([[0.15, 0.0, 0.3, 0.7]])
    assert in_slab_family(x, fam2)[0]


@pytest.mark.parametrize("q, theta", [((1,), 0.0), ((3,), 0.3), ((2, 1), 0.3), ((1, -2, 3), 0.0)])
def test_slab_density_is_two_delta(q, theta):
    fam = SlabFamily(0.1, q, (theta,))
    x = np.random.default_rng(2).random((1_000_000, len(q)))
    p = in_slab_family(x, fam).mean()
    assert abs(p - 0.2) <= 3 * math.sqrt(0.2 * 0.8 / len(x))


# plane measures


def test_plane_fourier_examples():
    assert plane_fourier((2, 1), 0.25, (0, 0)) == pytest.approx(math.sqrt(5))
    assert plane_fourier((2, 1), 0.25, (4, 2)) == pytest.approx(-math.sqrt(5), abs=1e-14)
    assert plane_fourier((2, 1), 0.25, (1, 1)) == 0


def test_plane_fourier_example_against_oracle():
    value, err = plane_fourier_oracle((2, 1), 0.25, (4, 2))
    assert abs(value + math.sqrt(5)) <= 1e-10 and err <= 1e-10


@settings(max_examples=60, deadline=None)
@given(
    q=st.lists(st.integers(-4, 4), min_size=2, max_size=3).filter(any),
    k=st.lists(st.integers(-10, 10), min_size=3, max_size=3),
    theta=st.sampled_from([0.0, 0.3, 0.71]),
)
def test_plane_fourier_matches_oracle(q, k, theta):
    k = k[: len(q)]
    value, err = plane_fourier_oracle(q, theta, k)
    assert abs(value - plane_fourier(q, theta, k)) <= 1e-9
    assert err <= 1e-9


@settings(max_examples=40, deadline=None)
@given(q=st.lists(st.integers(-4, 4), min_size=2, max_size=3).filter(any), t=st.integers(-5, 5), theta=st.floats(0, 1))
def test_plane_fourier_modulus_and_phase(q, t, theta):
    k = [t * c for c in q]
    v = plane_fourier(q, theta, k)
    assert abs(v) == pytest.approx(math.hypot(*q))
    assert v == pytest.approx(math.hypot(*q) * complex(math.cos(2 * math.pi * t * theta), -math.sin(2 * math.pi * t * theta)))


def test_vectorised_plane_forms_agree():
    q = (2, -1, 3)
    ks = np.random.default_rng(0).integers(-10, 11, size=(300, 3))
    ks[:20] = np.outer(np.arange(-10, 10), q)[:20] // 2 * 2
    ks[20:40] = np.outer(np.arange(-3, 17), q)[:20]
    exact = plane_fourier_many(q, 0.3, ks)
    oracle, err = plane_fourier_oracle_grid(q, 0.3, ks)
    assert np.max(np.abs(exact - oracle)) <= 1e-9
    assert np.max(err) <= 1e-9
    assert all(exact[i] == plane_fourier(q, 0.3, ks[i]) for i in range(0, 300, 7))


# lattice lemma


@pytest.mark.parametrize("q, theta", [((1,), (0.0,)), ((3,), (0.3,)), ((2, 1), (0.3,))])
def test_lebesgue_lattice_check_mc(q, theta):
    fam = SlabFamily(0.1, q, theta)
    mu = LebesgueMeasure(len(q))
    rep = lattice_lemma_check(mu, fam, sample_budget=400_000, seed=3)
    assert rep.contains(2 * fam.delta)
    assert rep.sum_upper_cutoff == 0 and rep.sum_lower_cutoff == 0


def test_lebesgue_lattice_check_quadrature_two_rows():
    fam = SlabFamily(0.05, (2,), (0.3, 0.3))
    rep = lattice_lemma_check(LebesgueMeasure(2), fam, method="quadrature", nodes=2048, band=(3.96, 4.04))
    assert rep.ratio == pytest.approx(4.0, rel=0.01)
    assert rep.in_band


def test_lattice_check_errors():
    fam = SlabFamily(0.1, (1,), (0.0,))
    with pytest.raises(ValueError):
        lattice_lemma_check(LebesgueMeasure(1), fam, kappa=0)
    with pytest.raises(ValueError):
        lattice_lemma_check(LebesgueMeasure(1), fam, method="nope")
    S = spectrum_from_pairs(1, 1, [[0]], [1.0], 3)
    with pytest.raises(ValueError):
        correction_sum(SpectrumMeasure(S), fam, 10)


def test_correction_sum_spectrum_measure():
    S = spectrum_from_pairs(1, 1, [[0], [2], [-2], [3], [-3]], [1.0, 0.1, 0.1, 0.2, 0.2], 20)
    fam = SlabFamily(0.2, (2,), (0.0,))
    # multiples of 2 up to 10: only +-2 carry mass
    assert correction_sum(SpectrumMeasure(S), fam, 2 / fam.delta / 2) == pytest.approx(0.2)


def test_stage_measure_sandwich():
    inst = ProblemInstance(m=1, n=1, Q=all_nonzero(1), psi=power_law(1, 1.0), theta=(0.0,))
    phi = make_bspline_bump(1, default_order(1, 0.45))
    stage = build_measure(1, inst, 0.45, phi, phi, grid=witness_grid(1, seed=0))
    mu = StageMeasure(stage, n_candidates=100_000)
    fam = SlabFamily(0.1, (3,), (0.3,))
    rep = lattice_lemma_check(mu, fam, sample_budget=20_000, seed=1)
    assert math.isfinite(rep.sum_upper_cutoff) and math.isfinite(rep.sum_lower_cutoff)
    assert 0.2 < rep.ratio < 20


def test_write_lattice_csv(tmp_path):
    fam = SlabFamily(0.1, (2, 1), (0.0,))
    rep = lattice_lemma_check(LebesgueMeasure(2), fam, sample_budget=1000)
    write_lattice_csv([rep], tmp_path / "l.csv", header="x")
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[1] == "delta,q,estimate,ci_lo,ci_hi,sum_upper_cutoff,sum_lower_cutoff,ratio"
    assert lines[2].startswith("0.1,2 1,")


# smoothed identity


def test_parseval_window_lebesgue_and_trig():
    phi = make_bspline_bump(1, 4)
    left, right = parseval_window_check(lambda x: np.ones_like(x), lambda k: (k == 0).astype(complex), phi, 3, 0.3, 0.1)
    assert abs(left - right) <= 1e-4
    dens = lambda x: 1 + 0.8 * np.cos(2 * np.pi * 3 * x)
    hat = lambda k: np.where(k == 0, 1.0, np.where(np.abs(k) == 3, 0.4, 0.0)).astype(complex)
    left, right = parseval_window_check(dens, hat, phi, 3, 0.3, 0.1)
    assert abs(left - right) <= 1e-4
    assert abs(right.real - 0.1) > 1e-3


# Borel-Cantelli


def test_borel_cantelli_second_series():
    Q, psi = all_nonzero(1), power_law(1, 1.0)
    conv = borel_cantelli_sums(Q, psi, 0.6, 1)
    assert conv.cauchy_second and max(conv.ratios_second) < 0.95
    div = borel_cantelli_sums(Q, psi, 0.4, 1)
    assert not div.cauchy_second


def test_borel_cantelli_convergent_first_series():
    Q, psi = all_nonzero(1), power_law(1, 2.0)
    rep = borel_cantelli_sums(Q, psi, 0.6, 1)
    assert rep.cauchy_first and rep.cauchy_second
    assert rep.partial_first == sorted(rep.partial_first)


def test_borel_cantelli_empty_Q():
    rep = borel_cantelli_sums(table_set(1, []), power_law(1, 1.0), 0.6, 1, R_schedule=[16, 64])
    assert rep.partial_first == [0.0, 0.0] and rep.partial_second == [0.0, 0.0]
