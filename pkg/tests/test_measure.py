import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpplab.measure import (
    FormulaTable,
    MeasureError,
    ReproductionMeasure,
    annealed_rate,
    bernoulli_rate,
    box_size,
    c_delta,
    c_delta_lower,
    d_delta_eps,
    dirichlet_drift_eigenvalue,
    discretize_density,
    moment_r,
    speed_integral,
    split,
    wave_speed,
)

M = ReproductionMeasure.from_atoms


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


class TestMeasureType:
    def test_atoms_sorted_on_construction(self):
        R = M(0.1, [(0.7, 0.5), (0.3, 0.2)])
        assert R.locations.tolist() == [0.3, 0.7]
        assert R.total_mass() == pytest.approx(0.8)

    @pytest.mark.parametrize(
        "r0, atoms",
        [(-1.0, []), (0.0, [(0.0, 1.0)]), (0.0, [(1.5, 1.0)]), (0.0, [(0.5, 0.0)]),
         (0.0, [(0.5, 1.0), (0.5, 2.0)]), (math.inf, []), (0.0, [(0.5, math.nan)])],
    )
    def test_invalid(self, r0, atoms):
        with pytest.raises(MeasureError):
            ReproductionMeasure(r0, tuple(atoms))

    def test_unsorted_direct_construction_rejected(self):
        with pytest.raises(MeasureError):
            ReproductionMeasure(0.0, ((0.7, 1.0), (0.3, 1.0)))

    def test_from_atoms_merges_duplicates(self):
        assert M(0.0, [(0.5, 1.0), (0.5, 2.0)]).atoms == ((0.5, 3.0),)

    def test_literal_round_trip_is_bit_exact(self):
        R = M(0.1 + 0.2, [(1 / 3, math.pi), (0.9, 1e-17)])
        back = ReproductionMeasure.loads(R.dumps())
        assert back == R

    def test_literal_parse(self):
        R = ReproductionMeasure.from_literal({"r0": 0.5, "atoms": [[0.5, 0.5]]})
        assert R.r0 == 0.5 and R.atoms == ((0.5, 0.5),)

    def test_jump_rate(self):
        assert M(1.0, [(0.5, 1.0), (1.0, 1.0)]).jump_rate() == pytest.approx(3.0)


class TestSplit:
    def test_basic(self):
        sm = split(M(0.2, [(0.3, 0.2), (0.7, 0.5)]), 0.5)
        assert sm.minus == M(0.2, [(0.3, 0.2)])
        assert sm.plus == ((0.7, 0.5),)

    def test_only_zero_atom(self):
        sm = split(M(1.0), 0.5)
        assert sm.minus == M(1.0) and sm.plus == ()

    def test_atom_at_delta_goes_minus(self):
        sm = split(M(0.0, [(0.5, 1.0)]), 0.5)
        assert sm.minus.atoms == ((0.5, 1.0),) and sm.plus == ()

    @pytest.mark.parametrize("delta", [0.0, -0.1, 1.01, math.nan])
    def test_bad_delta(self, delta):
        with pytest.raises(MeasureError):
            split(M(1.0), delta)


class TestClosedForms:
    def test_wave_speed(self):
        assert wave_speed(M(2.0)) == pytest.approx(2.0, rel=1e-12)
        assert rel(wave_speed(M(0.0, [(1.0, 1.0)])), math.sqrt(2 * math.log(2))) < 1e-12
        R = M(0.5, [(0.5, 0.5)])
        assert rel(speed_integral(R), 0.5 + math.log(1.5)) < 1e-12
        assert wave_speed(R) == pytest.approx(1.3457081, abs=1e-7)

    def test_wave_speed_zero_mass(self):
        with pytest.raises(MeasureError):
            wave_speed(M())

    def test_c_delta(self):
        R = M(0.0, [(0.5, 1.0)])
        assert rel(c_delta(R, 0.25), math.log(1.5) / 0.5) < 1e-12
        assert c_delta(M(0.7), 0.3) == 0.7
        assert rel(c_delta(R, 0.75), 1.0) < 1e-12

    def test_c_delta_lower(self):
        R = M(0.0, [(0.5, 1.0)])
        assert rel(c_delta_lower(R, 0.25), 0.8109302162163288) < 1e-12
        assert c_delta_lower(M(1.0), 0.5) == 1.0
        val = c_delta_lower(M(0.5, [(0.3, 0.4), (0.7, 0.6)]), 0.5)
        assert rel(val, 0.5 + 0.6 * math.log(1.7) / 0.7) < 1e-12
        assert val == pytest.approx(0.954824215196146, abs=1e-12)

    def test_d_delta_eps(self):
        R = M(0.0, [(0.5, 1.0)])
        assert rel(d_delta_eps(R, 0.25), 0.8109302162163288) < 1e-12
        assert d_delta_eps(M(0.3, [(0.5, 1.0), (1.0, 2.0)]), 1.0) == 0.0
        assert rel(d_delta_eps(R, 0.25, 0.1), math.log(1.6) / 0.5) < 1e-12
        with pytest.raises(MeasureError):
            d_delta_eps(R, 0.25, -0.1)

    def test_annealed_rate(self):
        assert annealed_rate(M(1.0)) == 1.0
        assert annealed_rate(M(0.0, [(0.5, 1.0)])) == 1.0
        assert rel(annealed_rate(M(0.2, [(0.3, 0.2), (0.7, 0.5)])), 0.9) < 1e-12

    def test_moment_r(self):
        R = M(0.0, [(0.5, 1.0)])
        assert moment_r(R, 0.0, 1.0) == 0.5
        assert moment_r(R, 0.0, 0.0) == 1.0
        assert rel(moment_r(M(0.3, [(0.5, 0.7)]), 0.0, 1.0), 0.65) < 1e-12
        # r0 only counts at delta = 0
        assert moment_r(M(0.3, [(0.5, 0.7)]), 0.25, 1.0) == pytest.approx(0.35)

    def test_bernoulli_rate(self):
        assert bernoulli_rate(0.3, 0.3) == 0.0
        expected = 0.1 * math.log(0.2) + 0.9 * math.log(1.8)
        assert rel(bernoulli_rate(0.1, 0.5), expected) < 1e-12
        assert bernoulli_rate(0.1, 0.5) == pytest.approx(0.36806421, abs=1e-8)
        assert bernoulli_rate(0.1, 0.6) > bernoulli_rate(0.1, 0.5)
        for bad in [(0.0, 0.5), (0.5, 1.0), (1.2, 0.5)]:
            with pytest.raises(MeasureError):
                bernoulli_rate(*bad)

    def test_dirichlet_eigenvalue(self):
        assert rel(dirichlet_drift_eigenvalue(0.0, 1.0), -math.pi**2 / 8) < 1e-12
        assert rel(dirichlet_drift_eigenvalue(1.0, 2.0), -0.5 - math.pi**2 / 32) < 1e-12
        assert abs(dirichlet_drift_eigenvalue(1.0, 1e6) + 0.5) < 1e-6
        with pytest.raises(MeasureError):
            dirichlet_drift_eigenvalue(1.0, 0.0)

    def test_dirichlet_eigenvalue_matches_finite_differences(self):
        import numpy as np
        from scipy.linalg import eigh_tridiagonal

        lam, box, n = 1.0, 2.0, 4000
        h = 2 * box / n
        # ground-state transform turns 1/2 u'' + lam u' into 1/2 v'' - lam^2/2 v
        d = np.full(n - 1, -1.0 / h**2)
        e = np.full(n - 2, 0.5 / h**2)
        top = eigh_tridiagonal(d, e, select="i", select_range=(n - 2, n - 2))[0][0]
        assert top - lam**2 / 2 == pytest.approx(dirichlet_drift_eigenvalue(lam, box), abs=1e-5)

    def test_box_size(self):
        assert rel(box_size(0.0, 1.0, 0.5), math.pi / 2) < 1e-12
        R_box = box_size(1.0, 0.81093, 0.01)
        assert R_box == pytest.approx(2.0247534, abs=1e-6)
        assert dirichlet_drift_eigenvalue(1.0, R_box) == pytest.approx(-0.81093 + 0.01, abs=1e-12)
        with pytest.raises(MeasureError):
            box_size(2.0, 1.0, 0.01)

    def test_box_size_blows_up_near_threshold(self):
        c = 0.8
        sizes = [box_size(math.sqrt(2 * (c - 1e-3)) - d, c, 1e-4) for d in (1e-1, 1e-2, 1e-3)]
        assert sizes[0] < sizes[1] < sizes[2]
        assert sizes[2] > 10

    def test_box_size_monotone_in_lambda(self):
        sizes = [box_size(l, 1.0, 0.05) for l in (0.0, 0.5, 1.0, 1.3)]
        assert all(a < b for a, b in zip(sizes, sizes[1:]))

    def test_formula_table(self):
        rows = FormulaTable(M(0.0, [(0.5, 1.0)]), 0.25, eps=0.1, lam=1.0, box=2.0).compute()
        assert rows["c_delta"] == rows["c_delta_lower"]
        assert rows["d_delta_eps"] == pytest.approx(0.9400073, abs=1e-7)
        assert FormulaTable(M(2.0), 0.5).compute()["wave_speed"] == 2.0


def test_discretize_density_preserves_mass_and_first_moment():
    R = discretize_density(lambda y: 2.0 * y, 20)
    assert R.total_mass() == pytest.approx(1.0, rel=1e-10)
    assert moment_r(R, 0.0, 1.0) == pytest.approx(2.0 / 3.0, rel=1e-10)


atoms_st = st.lists(
    st.tuples(st.floats(1e-3, 1.0), st.floats(1e-3, 10.0)), min_size=0, max_size=6,
    unique_by=lambda a: a[0],
)


@settings(max_examples=300, deadline=None)
@given(r0=st.floats(0.0, 5.0), atoms=atoms_st, delta=st.floats(1e-3, 1.0))
def test_rate_ordering_chain(r0, atoms, delta):
    R = M(r0, atoms)
    tol = 1e-12 * max(1.0, R.total_mass())
    lo, mid, hi, top = c_delta_lower(R, delta), speed_integral(R), c_delta(R, delta), annealed_rate(R)
    assert lo <= mid + tol and mid <= hi + tol and hi <= top + tol
    if not atoms:
        assert lo == mid == hi == top


@settings(max_examples=300, deadline=None)
@given(r0=st.floats(0.0, 5.0), atoms=atoms_st, delta=st.floats(1e-3, 1.0))
def test_split_round_trip(r0, atoms, delta):
    R = M(r0, atoms)
    sm = split(R, delta)
    assert sm.recombine() == R
    assert all(y <= delta for y, _ in sm.minus.atoms)
    assert all(y > delta for y, _ in sm.plus)


@settings(max_examples=200, deadline=None)
@given(r0=st.floats(0.0, 5.0), atoms=atoms_st.filter(bool))
def test_rates_exact_below_smallest_atom(r0, atoms):
    R = M(r0, atoms)
    delta = R.locations.min() / 2
    assert c_delta(R, delta) == pytest.approx(speed_integral(R), rel=1e-12)
    assert c_delta_lower(R, delta) == pytest.approx(speed_integral(R), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(eps=st.floats(1e-3, 1 - 1e-3), p=st.floats(1e-3, 1 - 1e-3))
def test_bernoulli_rate_nonnegative(eps, p):
    v = bernoulli_rate(eps, p)
    assert v >= 0
    if eps != p:
        assert v > 0 or abs(eps - p) < 1e-7


@settings(max_examples=200, deadline=None)
@given(lam=st.floats(-5, 5), box=st.floats(1e-3, 1e6))
def test_eigenvalue_negative(lam, box):
    assert dirichlet_drift_eigenvalue(lam, box) < 0
