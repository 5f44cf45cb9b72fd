import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cmtssl.curriculum import (
    CurriculumSchedule,
    baseline_epochs,
    build_schedule,
    epoch_count,
    format_plan,
    match_budget,
    mini_batches,
    steps_per_epoch,
)
from cmtssl.errors import ConfigurationError


def test_base_schedule_epochs():
    assert CurriculumSchedule(300, 3, 32, 1.5).epochs == [32, 48, 72]


def test_sizes_cumulative():
    assert CurriculumSchedule(10, 3).sizes == [3, 6, 10]
    assert CurriculumSchedule(6364, 3).sizes == [2121, 4242, 6364]


def test_half_rounds_up():
    # 5 * 1.5 = 7.5 -> 8 ; 1 * 2.5 = 2.5 -> 3
    assert epoch_count(5, 1.5, 2) == 8
    assert epoch_count(1, 2.5, 2) == 3


def test_epochs_never_below_one():
    assert CurriculumSchedule(10, 4, 1, 0.1).epochs == [1, 1, 1, 1]


def test_match_budget_pavia_scale():
    sched = CurriculumSchedule(6364, 3, 32, 1.5)
    assert match_budget(sched, 16) == 45680
    assert oracles.simulate_curriculum_steps(6364, 3, 32, 1.5, 16) == 45680


def test_baseline_epochs_within_one_epoch():
    sched = CurriculumSchedule(6364, 3, 32, 1.5)
    e = baseline_epochs(sched, 16)
    per = steps_per_epoch(6364, 16)
    assert abs(e * per - match_budget(sched, 16)) <= per / 2


def test_batches_are_prefixes():
    batches = build_schedule(9, 3, 2, 2.0)
    assert [b.cube_ids for b in batches] == [tuple(range(3)), tuple(range(6)), tuple(range(9))]
    assert [b.epochs for b in batches] == [2, 4, 8]


@pytest.mark.parametrize("kwargs", [dict(N=5, S=0), dict(N=5, S=6), dict(N=5, K=0), dict(N=5, F=0.0)])
def test_invalid_schedules(kwargs):
    with pytest.raises(ConfigurationError):
        CurriculumSchedule(**kwargs)


def test_batch_size_validated():
    with pytest.raises(ConfigurationError):
        match_budget(CurriculumSchedule(10), 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(5, 20000), st.sampled_from([3, 4, 5]), st.sampled_from([4, 8, 16, 32, 64]),
       st.sampled_from([1.0, 1.25, 1.5, 1.75, 2.0]))
def test_schedule_properties(n, s, k, f):
    sched = CurriculumSchedule(n, s, k, f)
    sizes = sched.sizes
    assert sizes == [n * j // s for j in range(1, s + 1)]
    assert all(a <= b for a, b in zip(sizes, sizes[1:]))
    assert sizes[-1] == n
    assert sched.epochs == [max(1, int(np.floor(k * f ** (j - 1) + 0.5))) for j in range(1, s + 1)]
    assert match_budget(sched, 16) == oracles.simulate_curriculum_steps(n, s, k, f, 16)


def test_mini_batches_cover_indices_once():
    rng = np.random.default_rng(0)
    chunks = list(mini_batches(np.arange(37), 16, rng))
    assert [len(c) for c in chunks] == [16, 16, 5]
    assert sorted(np.concatenate(chunks).tolist()) == list(range(37))


def test_format_plan_mentions_totals():
    text = format_plan(CurriculumSchedule(6364), 16)
    assert "epochs: [32, 48, 72]" in text and "45680" in text
