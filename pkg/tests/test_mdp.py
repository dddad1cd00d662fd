"""Decision-problem layer: reward shape, state assembly, dataset plumbing."""

import numpy as np
import pytest

from esarl.mdp import (
    ActionSet,
    StateVec,
    TransitionDataset,
    build_states,
    episodes_to_transitions,
    reward,
)


def test_reward_optima_are_exact():
    assert reward(11.5, 11.5) == 1.0
    assert reward(13.0, 12.0) == 1.0   # high start, ideal 1 g/dl fall
    assert reward(9.0, 10.0) == 1.0    # low start, ideal 1 g/dl rise


def test_reward_half_width_value():
    # One band half-width from the optimum the bell reads exactly 0.05.
    assert abs(reward(11.5, 11.0) - 0.05) < 1e-12
    assert abs(reward(11.5, 12.0) - 0.05) < 1e-12
    assert abs(reward(9.0, 10.5) - 0.05) < 1e-12
    assert abs(reward(13.0, 11.5) - 0.05) < 1e-12


def test_reward_band_edges_use_trend_branches():
    # At exactly 10.5 / 12.5 the start counts as out of band, so the ideal
    # next observation is a 1 g/dl move, not the band centre.
    assert reward(10.5, 11.5) == 1.0
    assert reward(12.5, 11.5) == 1.0
    assert reward(10.5 + 1e-9, 11.5 + 1e-9) > 0.999
    assert abs(reward(10.5, 11.0) - 0.05) < 1e-12


def test_reward_decreases_away_from_optimum():
    rng = np.random.default_rng(5)
    for _ in range(50):
        start = 6.0 + 10.0 * rng.random()
        best = reward(start, 11.5 if 10.5 < start < 12.5 else
                      start + (1.0 if start <= 10.5 else -1.0))
        worse = reward(start, 16.0)
        assert 0.0 <= worse < best <= 1.0


def test_reward_rejects_nonpositive_hb():
    with pytest.raises(ValueError):
        reward(0.0, 11.0)
    with pytest.raises(ValueError):
        reward(11.0, -2.0)


def test_action_set_lookup():
    actions = ActionSet()
    assert len(actions) == 5
    assert actions.doses == (0.0, 0.25, 0.5, 0.75, 1.0)
    assert actions.index_of(0.75) == 3
    assert actions.index_of(0.75 + 1e-13) == 3
    with pytest.raises(ValueError):
        actions.index_of(0.3)
    with pytest.raises(ValueError):
        ActionSet(doses=(0.5, 0.25))
    with pytest.raises(ValueError):
        ActionSet(doses=(0.5,))


def test_state_vector_layout():
    s = StateVec(hb=10.5, d_hb=-0.5, da0=0.25, da1=0.5, da2=0.0, group=3)
    np.testing.assert_array_equal(s.as_array(),
                                  [10.5, -0.5, 0.25, 0.5, 0.0, 3.0])


def test_build_states_fenceposts():
    hb = [10.0, 10.8, 11.5, 11.9]
    doses = [0.5, 0.75, 0.5, 0.25]
    states = build_states(hb, doses, group=2)
    assert len(states) == 4
    first = states[0]
    assert (first.d_hb, first.da0, first.da1, first.da2) == (0.0, 0.5, 0.0, 0.0)
    second = states[1]
    assert second.d_hb == pytest.approx(0.8)
    assert (second.da0, second.da1, second.da2) == (0.75, 0.5, 0.0)
    third = states[2]
    assert (third.da0, third.da1, third.da2) == (0.5, 0.75, 0.5)
    assert all(s.group == 2 for s in states)


def test_build_states_validates_input():
    with pytest.raises(ValueError):
        build_states([10.0, 11.0], [0.5], group=0)
    with pytest.raises(ValueError):
        build_states([10.0, -1.0], [0.5, 0.5], group=0)


def make_trace(hb, doses, group=0):
    states = build_states(hb, doses, group)
    taken = doses[1:]
    rewards = [reward(hb[k], hb[k + 1]) for k in range(len(hb) - 1)]
    return states, taken, rewards


def test_episode_assembly_marks_last_pair_terminal():
    actions = ActionSet()
    trace = make_trace([10.0, 10.9, 11.6, 11.4], [0.5, 0.75, 0.5, 0.25])
    data = episodes_to_transitions([trace], actions)
    assert len(data) == 3
    assert [t.terminal for t in data.transitions] == [False, False, True]
    # The action is the dose recorded as most recent in the next state.
    for t in data.transitions:
        assert actions.doses[t.a] == t.s_next.da0
    assert data.metadata["n_source_transitions"] == 3
    assert data.metadata["n_dropped_hb_filter"] == 0


def test_high_hb_transitions_are_dropped_and_counted():
    actions = ActionSet()
    trace = make_trace([12.0, 21.0, 19.0, 18.0], [0.5, 1.0, 0.0, 0.0])
    data = episodes_to_transitions([trace], actions)
    # Both pairs touching the 21.0 observation disappear.
    assert len(data) == 1
    assert data.metadata["n_dropped_hb_filter"] == 2
    assert data.transitions[0].s.hb == 19.0
    assert data.transitions[0].terminal


def test_episode_assembly_validation():
    actions = ActionSet()
    states = build_states([10.0, 11.0], [0.5, 0.75], group=0)
    with pytest.raises(ValueError):
        episodes_to_transitions([(states, [0.75], [1.5])], actions)
    with pytest.raises(ValueError):
        episodes_to_transitions([(states, [0.5], [0.9])], actions)  # da0 mismatch
    with pytest.raises(ValueError):
        episodes_to_transitions([(states, [], [])], actions)
    bad = [states[0], StateVec(hb=11.0, d_hb=0.4, da0=0.75, da1=0.5,
                               da2=0.0, group=0)]
    with pytest.raises(ValueError):
        episodes_to_transitions([(bad, [0.75], [0.9])], actions)


def test_dataset_round_trips_through_csv(tmp_path):
    actions = ActionSet()
    rng = np.random.default_rng(13)
    traces = []
    for _ in range(3):
        hb = list(9.0 + 4.0 * rng.random(5))
        doses = list(rng.choice(actions.doses, size=5))
        traces.append(make_trace(hb, doses, group=int(rng.integers(0, 4))))
    data = episodes_to_transitions(traces, actions, metadata={"run": 1})
    path = tmp_path / "transitions.csv"
    data.to_csv(path)
    back = TransitionDataset.from_csv(path, actions)
    assert len(back) == len(data)
    for t_in, t_out in zip(data.transitions, back.transitions):
        assert t_out == t_in


def test_to_arrays_layout():
    actions = ActionSet()
    trace = make_trace([10.0, 10.9, 11.6], [0.5, 0.75, 0.25])
    data = episodes_to_transitions([trace], actions)
    x, a, r, xn, term = data.to_arrays()
    assert x.shape == (2, 6) and xn.shape == (2, 6)
    np.testing.assert_array_equal(a, [3, 1])
    assert term.dtype == bool
    np.testing.assert_array_equal(term, [False, True])
    np.testing.assert_allclose(x[1], xn[0])
