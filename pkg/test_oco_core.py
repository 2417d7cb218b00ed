#!/usr/bin/env python3
"""
Tests for the adaptive virtual-queue OCO engine and its metrics.
"""

import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(__file__))

from convex_solver import AffineRows, Box, solve_prox_step
from oco_core import (
    AdaptiveQueueLearner, ExpertState, QuadraticCost, RevealedRound, RoundRecord, aggregate,
    compute_metrics, condition_round, expert_step, init_bank, loglog_slope, make_schedule, queue_update,
    separable_hinge_prox, weight_update,
)

TOL = 1e-9


def test_schedule_closed_forms():
    s = make_schedule(288, 0.1, 0.2)
    assert s.expert_count == 6
    assert s.meta_rate == pytest.approx(0.058926, abs=1e-6)
    assert s.alpha(1, 1) == 1.0
    assert s.theta(2, 5) == 10.0
    assert s.beta(4) == pytest.approx(4 ** 0.7, abs=TOL)


def test_schedule_monotonicity():
    s = make_schedule(100)
    alphas = [s.alpha(3, t) for t in range(1, 50)]
    thetas = [s.theta(3, t) for t in range(1, 50)]
    assert all(b < a for a, b in zip(alphas, alphas[1:]))
    assert all(b > a for a, b in zip(thetas, thetas[1:]))


@pytest.mark.parametrize("T, chi, delta", [(0, 0.1, 0.2), (10, 0.2, 0.1), (10, 0.0, 0.2), (10, 0.1, 0.5)])
def test_schedule_rejects_bad_parameters(T, chi, delta):
    with pytest.raises(ValueError):
        make_schedule(T, chi, delta)


def test_init_bank():
    bank = init_bank(make_schedule(288), np.array([0.5, 1.0]), 4)
    assert len(bank.experts) == 6
    assert bank.experts[0].weight == pytest.approx(7 / 12, abs=TOL)
    assert abs(bank.weights.sum() - 1.0) <= 1e-12
    for e in bank.experts:
        assert np.array_equal(e.queue, np.zeros(4))
        assert np.array_equal(e.x, [0.5, 1.0])


@pytest.mark.parametrize("Q, beta, v, theta, expected", [
    (0.0, 1.0, 0.0, 2.0, 2.0),
    (3.0, 2.0, 0.5, 1.0, 4.0),
    (0.2, 2.0, 0.3, 0.5, 0.8),
])
def test_queue_update(Q, beta, v, theta, expected):
    assert queue_update(Q, beta, v, theta) == pytest.approx(expected, abs=TOL)


def test_queue_update_rejects_negative_violation():
    with pytest.raises(ValueError):
        queue_update(np.zeros(2), 1.0, np.array([0.1, -0.1]), 0.0)


def _expert(x, queue):
    return ExpertState(index=1, x=np.atleast_1d(np.asarray(x, dtype=float)),
                       queue=np.atleast_1d(np.asarray(queue, dtype=float)), weight=1.0)


def test_expert_step_zero_queue_closed_form():
    box = Box([-10.0], [10.0])
    rows = AffineRows([[1.0]], [0.0])
    x = expert_step(_expert(0.0, 0.0), np.array([2.0]), rows, 1.0, 1.0, box)
    assert x[0] == pytest.approx(-1.0, abs=TOL)


def test_expert_step_hinge():
    """minimize [x]_+ + (x - 1)^2 on [-10, 10]"""
    box = Box([-10.0], [10.0])
    rows = AffineRows([[1.0]], [0.0])
    x = expert_step(_expert(1.0, 1.0), np.array([0.0]), rows, 1.0, 1.0, box)
    assert x[0] == pytest.approx(0.5, abs=1e-4)
    x_sep = expert_step(_expert(1.0, 1.0), np.array([0.0]), rows, 1.0, 1.0, box, separable_hinge_prox)
    assert x_sep[0] == pytest.approx(0.5, abs=TOL)


def test_expert_step_no_gradient_no_queue_stays_put():
    box = Box([-1.0, -1.0], [1.0, 1.0])
    rows = AffineRows(np.eye(2), np.zeros(2))
    x = expert_step(_expert([0.3, -0.2], [0.0, 0.0]), np.zeros(2), rows, 0.7, 3.0, box)
    assert np.allclose(x, [0.3, -0.2], atol=TOL)


@pytest.mark.parametrize("seed", range(5))
def test_separable_prox_matches_epigraph_solver(seed):
    rng = np.random.default_rng(seed)
    n = 4
    box = Box(-np.ones(n), np.ones(n))
    rows = AffineRows(np.diag(rng.uniform(0.5, 2.0, n)), rng.uniform(-0.5, 0.5, n))
    grad = rng.normal(size=n)
    queue = rng.uniform(0.0, 3.0, n)
    x_prev = rng.uniform(-1.0, 1.0, n)
    closed = separable_hinge_prox(grad, queue, 0.8, 1.5, rows, box, x_prev)
    solved = solve_prox_step(grad, queue, 0.8, 1.5, rows, box, x_prev)
    assert np.allclose(closed, solved, atol=1e-4)


def test_separable_prox_rejects_coupled_rows():
    rows = AffineRows([[1.0, 1.0], [0.0, 1.0]], [0.0, 0.0])
    with pytest.raises(ValueError):
        separable_hinge_prox(np.zeros(2), np.ones(2), 1.0, 1.0, rows, Box([-1, -1], [1, 1]), np.zeros(2))


def test_aggregate():
    bank = init_bank(make_schedule(3), np.array([0.0]), 0)
    assert len(bank.experts) == 2
    bank.experts[0].weight, bank.experts[1].weight = 0.5, 0.5
    bank.experts[1].x = np.array([2.0])
    assert aggregate(bank)[0] == pytest.approx(1.0, abs=TOL)
    bank.experts[0].weight, bank.experts[1].weight = 1.0, 0.0
    assert aggregate(bank)[0] == 0.0


def test_weight_update():
    bank = init_bank(make_schedule(3), np.array([0.0]), 0)
    bank.experts[0].weight, bank.experts[1].weight = 0.5, 0.5
    bank.experts[1].x = np.array([1.0])
    bank.x = np.array([0.0])
    weight_update(bank, np.array([1.0]), 1.0)
    e = math.exp(-1.0)
    assert bank.weights == pytest.approx([1 / (1 + e), e / (1 + e)], abs=1e-4)
    assert abs(bank.weights.sum() - 1.0) <= 1e-12


def test_weight_update_neutral_cases():
    bank = init_bank(make_schedule(50), np.array([0.3, 0.3]), 0)
    before = bank.weights
    weight_update(bank, np.array([5.0, -1.0]), 1.0)
    assert np.allclose(bank.weights, before, atol=1e-12)
    bank.experts[2].x = np.array([1.0, 1.0])
    weight_update(bank, np.array([5.0, -1.0]), 0.0)
    assert np.allclose(bank.weights, before, atol=1e-12)


def test_weight_update_survives_huge_losses():
    bank = init_bank(make_schedule(50), np.array([0.0]), 0)
    bank.experts[0].x = np.array([1e6])
    weight_update(bank, np.array([1e6]), 1.0)
    assert np.all(np.isfinite(bank.weights))
    assert abs(bank.weights.sum() - 1.0) <= 1e-12


def test_metrics_violations():
    history = [RoundRecord(t=i + 1, action=np.zeros(1), cost=0.0, g_values=np.array([g]))
               for i, g in enumerate([0.5, -1.0, 0.2])]
    m = compute_metrics(history)
    assert m.vio_hard == pytest.approx(0.7, abs=TOL)
    assert m.vio_soft == 0.0
    assert m.dynamic_regret is None


def test_metrics_regret_and_path_length():
    history = []
    for t, x_star in [(1, 1.0), (2, 2.0)]:
        history.append(RoundRecord(t=t, action=np.zeros(1), cost=(0.0 - t) ** 2, g_values=np.array([-1.0]),
                                   x_star=np.array([x_star]), cost_star=0.0))
    m = compute_metrics(history)
    assert m.dynamic_regret == pytest.approx(5.0, abs=TOL)
    assert m.path_length == pytest.approx(1.0, abs=TOL)
    assert m.vio_hard == 0.0 and m.vio_soft == 0.0


def test_metrics_partial_benchmark_and_ordering():
    history = [
        RoundRecord(t=1, action=np.zeros(1), cost=3.0, g_values=np.array([1.0]), x_star=np.zeros(1), cost_star=1.0),
        RoundRecord(t=2, action=np.zeros(1), cost=3.0, g_values=np.array([1.0])),
    ]
    m = compute_metrics(history)
    assert m.dynamic_regret == pytest.approx(2.0)
    assert m.benchmark_coverage == 0.5
    assert m.vio_hard >= m.vio_soft
    with pytest.raises(ValueError):
        compute_metrics(list(reversed(history)))


def test_metrics_without_benchmark_have_no_path_length():
    history = [RoundRecord(t=t, action=np.zeros(1), cost=1.0, g_values=np.zeros(0)) for t in (1, 2, 3)]
    m = compute_metrics(history)
    assert m.path_length is None
    assert m.dynamic_regret is None
    assert m.benchmark_coverage == 0.0
    assert compute_metrics([]).path_length is None
    single = [RoundRecord(t=1, action=np.zeros(1), cost=1.0, g_values=np.zeros(0), x_star=np.ones(1), cost_star=0.5)]
    assert compute_metrics(single).path_length == 0.0


def test_learner_respects_queue_floor_and_simplex():
    T = 40
    schedule = make_schedule(T)
    box = Box(np.zeros(2), np.ones(2))
    learner = AdaptiveQueueLearner(schedule, np.full(2, 0.5), dim_g=2, trace_weights=True)
    rng = np.random.default_rng(3)
    for t in range(1, T + 1):
        x = learner.decide(t, box)
        assert box.contains(x, tol=1e-12)
        if t > 1:
            for e in learner.bank.experts:
                assert np.all(e.queue >= schedule.theta(e.index, t - 1))
        c = rng.uniform(0.0, 1.0, 2)
        revealed = RevealedRound(
            cost=QuadraticCost(P=2 * np.eye(2), q=-2 * c, offset=float(c @ c)),
            constraints=AffineRows(np.eye(2), -np.full(2, 0.6)),
            box=box,
        )
        learner.observe(t, revealed)
        assert abs(learner.bank.weights.sum() - 1.0) <= 1e-12
    assert len(learner.weight_trace) == T


def test_condition_round_bounds_the_fastest_step():
    box = Box(-np.ones(2), np.ones(2))
    P = np.diag([200.0, 2.0])
    revealed = RevealedRound(cost=QuadraticCost(P=P, q=np.zeros(2), offset=4.0),
                             constraints=AffineRows(np.eye(2), np.zeros(2)), box=box)
    scaled = condition_round(revealed, expert_count=4)
    # spread = max(200, (0 + 100 d) / d) = 200, times 2^(4-2)
    assert np.allclose(scaled.cost.P, P / 800.0, atol=TOL)
    assert scaled.cost.offset == pytest.approx(4.0 / 800.0)
    assert scaled.constraints is revealed.constraints and scaled.box is box

    alpha = make_schedule(100).alpha(4, 1)
    step = lambda x: x - 0.5 * alpha * scaled.cost.gradient(x)
    rng = np.random.default_rng(8)
    for _ in range(20):
        x, y = rng.uniform(-1.0, 1.0, 2), rng.uniform(-1.0, 1.0, 2)
        assert np.linalg.norm(step(x) - step(y)) <= np.linalg.norm(x - y) + 1e-12


def test_condition_round_linear_cost_uses_gradient_bound():
    box = Box(np.zeros(2), np.array([3.0, 4.0]))
    revealed = RevealedRound(cost=QuadraticCost(P=np.zeros((2, 2)), q=np.array([30.0, 40.0])),
                             constraints=AffineRows(np.zeros((0, 2)), np.zeros(0)), box=box)
    scaled = condition_round(revealed, expert_count=2)
    # ||q|| / diam = 50 / 5
    assert np.allclose(scaled.cost.q, [3.0, 4.0], atol=TOL)
    flat = RevealedRound(cost=QuadraticCost(P=np.zeros((2, 2)), q=np.zeros(2)),
                         constraints=revealed.constraints, box=Box(np.ones(2), np.ones(2)))
    assert np.array_equal(condition_round(flat, 3).cost.q, np.zeros(2))


def test_learner_shift_moves_expert_centres():
    box = Box([-5.0], [5.0])
    idle = RevealedRound(cost=QuadraticCost(P=np.zeros((1, 1)), q=np.zeros(1)),
                         constraints=AffineRows(np.zeros((0, 1)), np.zeros(0)), box=box)
    learner = AdaptiveQueueLearner(make_schedule(10), np.zeros(1), dim_g=0)
    assert learner.decide(1, box, shift=np.array([2.0]))[0] == pytest.approx(2.0, abs=TOL)
    learner.observe(1, idle)
    assert learner.decide(2, box, shift=np.array([-1.0]))[0] == pytest.approx(1.0, abs=TOL)
    learner.observe(2, idle)
    assert learner.decide(3, box, shift=np.array([10.0]))[0] == pytest.approx(5.0, abs=TOL)
    learner.observe(3, idle)
    with pytest.raises(ValueError):
        learner.decide(4, box, shift=np.zeros(2))


def test_conditioned_learner_records_true_cost():
    box = Box(np.zeros(1), np.ones(1))
    revealed = RevealedRound(cost=QuadraticCost(P=np.array([[2e6]]), q=np.array([-2e6]), offset=1e6),
                             constraints=AffineRows(np.zeros((0, 1)), np.zeros(0)), box=box)
    plain = AdaptiveQueueLearner(make_schedule(20), np.zeros(1), dim_g=0)
    scaled = AdaptiveQueueLearner(make_schedule(20), np.zeros(1), dim_g=0, condition=True)
    for learner in (plain, scaled):
        learner.decide(1, box)
        assert learner.observe(1, revealed).cost == pytest.approx(1e6)
    # the raw gradient hits the bound on every expert; the conditioned steps stay inside
    assert plain.decide(2, box)[0] == pytest.approx(1.0, abs=TOL)
    x = scaled.decide(2, box)[0]
    assert 0.0 < x < 1.0


def test_learner_rejects_out_of_order_rounds():
    learner = AdaptiveQueueLearner(make_schedule(5), np.zeros(1), dim_g=0)
    with pytest.raises(ValueError):
        learner.decide(2, Box([0.0], [1.0]))


def test_loglog_slope():
    T = np.array([10.0, 100.0, 1000.0])
    assert loglog_slope(T, 3 * T ** 0.5) == pytest.approx(0.5, abs=1e-9)
    with pytest.raises(ValueError):
        loglog_slope([10.0], [1.0])


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
