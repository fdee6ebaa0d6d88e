import numpy as np
import pytest

from app.config import Mode, Placement
from app.models.network import Activation
from app.services.verification import (
    SUITES, central_difference, composite_gradient_error, prim_mst_lengths, relative_error, stitch_pair_deviation,
    sweep_death_times, verifier,
)


def assert_all_pass(results):
    failed = [(r.name, r.worst) for r in results if not r.passed]
    assert not failed


def test_oracles_on_a_line():
    points = np.array([[0.0], [1.0], [3.0], [3.5]])
    np.testing.assert_allclose(sweep_death_times(points), [0.5, 1.0, 2.0])
    np.testing.assert_allclose(prim_mst_lengths(points), [0.5, 1.0, 2.0])


def test_oracles_agree_on_random_sets():
    rng = np.random.default_rng(11)
    for _ in range(10):
        points = rng.normal(size=(12, 3))
        np.testing.assert_allclose(sweep_death_times(points), prim_mst_lengths(points), atol=1e-12)


def test_central_difference_of_a_quadratic():
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    grad = central_difference(lambda v: float(np.sum(v ** 2)), x)
    np.testing.assert_allclose(grad, 2 * x, atol=1e-8)
    # the evaluation point is restored
    np.testing.assert_array_equal(x, [[1.0, -2.0], [0.5, 3.0]])


def test_relative_error_floor():
    assert relative_error(np.array([2.0]), np.array([1.0])) == 1.0
    assert relative_error(np.array([1e-9]), np.array([0.0])) == pytest.approx(1e-3)


def test_result_direction():
    below = verifier._result("below", [0.1, 0.3], 0.5)
    above = verifier._result("above", [2.0, 0.7], 1.0, above=True)
    assert below.passed and below.worst == 0.3 and below.cases == 2
    assert not above.passed and above.worst == 0.7


def test_oracle_suite_passes():
    assert_all_pass(verifier.oracle(cases=30))


def test_invariance_suite_passes():
    assert_all_pass(verifier.invariance(cases=12))


@pytest.mark.parametrize("mode", list(Mode))
def test_composite_gradient_for_every_mode(mode):
    assert composite_gradient_error(mode, Placement.COMBINED, seed=7) <= 1e-5


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("activation", [Activation.RELU, Activation.GELU, Activation.SIGMOID])
def test_intertwined_pair_separates_robust_from_absolute(activation, seed):
    assert stitch_pair_deviation(activation, Mode.RELATIVE_ROBUST, seed) <= 1e-6
    assert stitch_pair_deviation(activation, Mode.ABSOLUTE, seed, control=True) > 1e-2


def test_run_selects_suites(monkeypatch):
    calls = []
    for name in SUITES:
        monkeypatch.setattr(verifier, name, lambda name=name: calls.append(name) or [])
    assert list(verifier.run("oracle")) == ["oracle"]
    assert list(verifier.run("all")) == list(SUITES)
    assert calls == ["oracle", *SUITES]


@pytest.mark.slow
def test_gradient_suite_passes():
    assert_all_pass(verifier.gradients(cases=20))


def test_intertwiner_suite_passes():
    assert_all_pass(verifier.intertwiner(cases=3))
