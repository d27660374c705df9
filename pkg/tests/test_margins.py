import numpy as np
import pytest

from gsc.core import CostSpec, Dataset, LinearModel, TargetLabel, sign_pred
from gsc.margins import (
    INFINITE_DISTANCE,
    flipping_cost,
    in_flip_set,
    is_strategically_separable,
    strategic_distance_generic,
    strategic_distance_gp,
    strategic_margin_nl,
)
from gsc.oracles import grid_points, grid_strategic_distance
from gsc.response import Kind, ResponseSetting, respond_dataset, respond_gp_exact

NL = ResponseSetting(Kind.NL)


def test_flipping_cost_examples():
    assert flipping_cost([3.0, 4.0], [1.0, 1.0]) == pytest.approx(1.4)
    assert flipping_cost([3.0, 4.0], [4.0, -3.0]) == 0.0
    assert flipping_cost([1.0, 0.0], [-2.0, 0.0]) == 2.0


def test_flipping_cost_against_grid():
    w, x = np.array([3.0, 4.0]), np.array([1.0, 1.0])
    P = grid_points(x, 2.0, 0.01)
    other = P[np.sign(P @ w) != np.sign(x @ w)]
    assert abs(flipping_cost(w, x) - np.min(np.linalg.norm(other - x, axis=1))) <= 0.01


def test_flipping_cost_zero_weight():
    with pytest.raises(ValueError):
        flipping_cost([0.0, 0.0], [1.0, 1.0])


def test_in_flip_set_boundary():
    assert in_flip_set([1.0, 0.0], [1.4, 0.0])
    assert in_flip_set([1.0, 0.0], [2.0, 0.0])
    assert not in_flip_set([1.0, 0.0], [2.0001, 0.0])


def _post(w, z):
    return lambda P: sign_pred(respond_gp_exact(w, P, z) @ w)


@pytest.mark.parametrize("x0,expected", [(1.0, 3.0), (-1.0, 1.0), (-2.0, 0.0)])
def test_strategic_distance_gp_examples(x0, expected):
    w = np.array([1.0, 0.0])
    assert strategic_distance_gp(w, [x0, 0.0], 1) == pytest.approx(expected)
    if expected > 0:
        brute = grid_strategic_distance(np.array([x0, 0.0]), _post(w, 1))
        assert abs(brute - expected) <= 0.02


def test_strategic_distance_gp_random_vs_grid(rng):
    for _ in range(25):
        w = rng.normal(size=2)
        x = rng.uniform(-3, 3, size=2)
        z = int(rng.choice([-1, 1]))
        brute = grid_strategic_distance(x, _post(w, z))
        assert abs(strategic_distance_gp(w, x, z) - brute) <= 0.02


def test_generic_distance_matches_closed_form(rng):
    step = 0.01
    for kind in (Kind.NL, Kind.SC, Kind.ADV):
        setting = ResponseSetting(kind)
        for _ in range(10):
            w = rng.normal(size=2)
            x = rng.uniform(-2, 2, size=2)
            z, y = int(rng.choice([-1, 1])), int(rng.choice([-1, 1]))
            target = {Kind.SC: 1, Kind.ADV: -y}.get(kind, z)
            got = strategic_distance_generic(setting, LinearModel(w), x, z, y=y, step=step)
            assert abs(got - strategic_distance_gp(w, x, target)) <= 2 * step


def test_generic_distance_identity_response(rng):
    none = ResponseSetting(Kind.NONE)
    for _ in range(10):
        w = rng.normal(size=2)
        x = rng.uniform(-2, 2, size=2)
        got = strategic_distance_generic(none, LinearModel(w), x, None)
        assert abs(got - flipping_cost(w, x)) <= 0.02


def test_generic_distance_infinite_when_nothing_differs():
    # everybody within reach moves to the positive side, so nearby predictions never differ
    got = strategic_distance_generic(ResponseSetting(Kind.SC), LinearModel([1.0, 0.0]), [0.0, 0.0], None, bounds=1.5)
    assert got == INFINITE_DISTANCE


def test_strategic_margin_examples():
    w = [1.0, 0.0]
    ds = Dataset([[0.5, 0.0]], [1], [1])
    assert strategic_margin_nl(w, ds) == pytest.approx(2.5)
    assert strategic_margin_nl(w, Dataset([[0.5, 0.0]], [1], [-1])) == pytest.approx(-1.5)
    assert strategic_margin_nl([7.0, 0.0], ds) == pytest.approx(2.5)


def test_strategic_margin_errors():
    with pytest.raises(ValueError):
        strategic_margin_nl([0.0, 0.0], Dataset([[0.5, 0.0]], [1], [1]))
    with pytest.raises(ValueError):
        strategic_margin_nl([1.0, 0.0], Dataset([[0.5, 0.0]], [1]))


def test_separable_when_clean_labels_in_band(rng):
    X = rng.uniform(-1, 1, size=(40, 2))
    w = np.array([1.0, 0.3])
    y = np.where(rng.random(40) < 0.5, 1.0, -1.0)
    assert np.all(flipping_cost(w, X) <= 2)
    assert is_strategically_separable(NL, Dataset(X, y, y), LinearModel(w))


def test_adv_all_flip_never_separable(rng):
    X = np.array([[0.3, 0.0], [-0.3, 0.0], [0.0, 0.3], [0.0, -0.3]])
    ds = Dataset(X, [1, -1, 1, -1])
    adv = ResponseSetting(Kind.ADV)
    for _ in range(200):
        assert not is_strategically_separable(adv, ds, LinearModel(rng.normal(size=2)))


def test_zero_budget_reduces_to_standard_separability(rng):
    frozen = ResponseSetting(Kind.NL, CostSpec(weight=np.inf))
    for _ in range(50):
        X = rng.normal(size=(10, 2))
        w = rng.normal(size=2)
        y = np.where(rng.random(10) < 0.5, 1.0, -1.0)
        ds = Dataset(X, y, -y)
        standard = bool(np.all(sign_pred(X @ w) == y))
        assert is_strategically_separable(frozen, ds, LinearModel(w)) == standard


def test_equivalence_small(rng):
    for _ in range(2000):
        d = int(rng.integers(1, 6))
        w, x = rng.normal(size=d), rng.normal(size=d) * 2
        y, z = rng.choice([-1, 1], size=2)
        lhs_raw = y * (w @ respond_gp_exact(w, x, z))
        rhs_raw = y * (w @ x + 2 * z * np.linalg.norm(w))
        if min(abs(lhs_raw), abs(rhs_raw), abs(flipping_cost(w, x) - 2)) < 1e-6:
            continue
        assert (lhs_raw > 0) == (rhs_raw > 0)


def test_zero_distance_means_landing_on_boundary(rng):
    w = np.array([0.6, 0.8])
    for z in (-1, 1):
        x = -2.0 * z * w + np.array([-0.8, 0.6]) * rng.normal()
        assert strategic_distance_gp(w, x, z) == pytest.approx(0.0, abs=1e-12)


def test_zero_margin_when_misaligned_point_in_band(rng):
    for _ in range(20):
        X = rng.normal(size=(15, 2)) * 3
        w = rng.normal(size=2)
        z = np.where(rng.random(15) < 0.5, 1.0, -1.0)
        ds = Dataset(X, z, z)
        mis = (sign_pred(X @ w) != z) & (flipping_cost(w, X) <= 2)
        if not mis.any():
            continue
        moved = respond_dataset(NL, LinearModel(w), ds)
        assert np.min(np.abs(moved @ w)) <= np.linalg.norm(w) * 1e-6
