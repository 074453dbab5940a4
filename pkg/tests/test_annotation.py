"""Swiss-session state machine, event-log replay, and aggregation oracles.

Aggregation is checked against the statistics module and direct formula
evaluation; session invariants are exercised both on worked examples and
under a seeded fuzz loop.
"""

import json
import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shaperealism.annotation import (
    NUM_ROUNDS,
    AggregateScore,
    AnnotationError,
    AnnotationSession,
    DuplicateChoiceError,
    IncompleteSessionError,
    PairingSequenceError,
    RealismRecord,
    ReplayError,
    SessionCompleteError,
    UnknownPairError,
    WinnerNotInPairError,
    aggregate,
    append_event,
    choice_event,
    create_session,
    created_event,
    next_pairings,
    read_events,
    record_choice,
    replay_events,
    replay_log,
    session_scores,
)


def ids(n, prefix="m"):
    return [f"{prefix}{i:02d}" for i in range(n)]


def play(session, rng, events=None):
    """Resolve the whole session with rng-picked winners; returns issued rounds."""
    rounds = []
    while not session.is_complete():
        rp = session.next_pairings()
        rounds.append(rp)
        for pair in rp.pairs:
            winner = pair[int(rng.integers(0, 2))]
            session.record_choice(pair, winner)
            if events is not None:
                events.append(choice_event(session, pair, winner))
    return rounds


# session creation -----------------------------------------------------------


def test_create_rejects_single_mesh():
    with pytest.raises(AnnotationError):
        create_session("obj", ["only"], seed=0)


def test_create_rejects_oversized_session():
    with pytest.raises(AnnotationError):
        create_session("obj", ids(65), seed=0)


def test_create_rejects_duplicate_ids():
    with pytest.raises(AnnotationError):
        create_session("obj", ["a", "b", "a"], seed=0)


def test_same_seed_gives_identical_first_round():
    a = create_session("obj", ids(8), seed=42, session_id="a")
    b = create_session("obj", ids(8), seed=42, session_id="b")
    assert a.next_pairings().pairs == b.next_pairings().pairs


def test_different_seed_changes_first_round():
    a = create_session("obj", ids(8), seed=0, session_id="a")
    b = create_session("obj", ids(8), seed=1, session_id="b")
    assert a.next_pairings().pairs != b.next_pairings().pairs


# round scoring rule ---------------------------------------------------------


def test_winner_gains_point_both_gain_round():
    s = create_session("obj", ["A", "B"], seed=0)
    (pair,) = s.next_pairings().pairs
    s.record_choice(pair, "A")
    assert s.wins == {"A": 1, "B": 0}
    assert s.rounds_played == {"A": 1, "B": 1}


def test_two_meshes_exhaust_after_one_round():
    # a single distinct pair exists, so rounds 2-6 starve and auto-skip
    s = create_session("obj", ["A", "B"], seed=0)
    (pair,) = s.next_pairings().pairs
    s.record_choice(pair, "B")
    assert s.is_complete()
    with pytest.raises(SessionCompleteError):
        s.next_pairings()
    by_id = {r.mesh_id: r for r in s.session_scores()}
    assert by_id["B"].score == 1.0 and by_id["A"].score == 0.0
    assert by_id["A"].rounds_played == 1


def test_three_meshes_play_every_distinct_pair():
    s = create_session("obj", ids(3), seed=5)
    rng = np.random.default_rng(0)
    rounds = play(s, rng)
    # C(3,2) = 3 playable rounds, each one pair plus a bye
    assert len(rounds) == 3
    assert all(len(r.pairs) == 1 and r.bye is not None for r in rounds)
    played = {frozenset(r.pairs[0]) for r in rounds}
    assert len(played) == 3
    for rec in s.session_scores():
        assert rec.rounds_played == 2
        assert rec.score == rec.wins / 2


def test_sixteen_meshes_run_the_full_schedule():
    for seed in (0, 1, 2):
        s = create_session("obj", ids(16), seed=seed)
        rng = np.random.default_rng(seed + 100)
        total = 0
        for _ in range(NUM_ROUNDS):
            rp = s.next_pairings()
            assert len(rp.pairs) == 8
            assert rp.bye is None and rp.extra_byes == ()
            for pair in rp.pairs:
                s.record_choice(pair, pair[int(rng.integers(0, 2))])
                total += 1
        assert total == 48
        assert s.is_complete()
        records = s.session_scores()
        assert all(r.rounds_played == NUM_ROUNDS for r in records)
        assert sum(r.wins for r in records) == total
        for r in records:
            # normalized scores land on the sixths grid
            assert abs(r.score * NUM_ROUNDS - round(r.score * NUM_ROUNDS)) < 1e-12


def test_nine_meshes_get_one_bye_per_round_fairly():
    s = create_session("obj", ids(9), seed=3)
    rng = np.random.default_rng(7)
    rounds = play(s, rng)
    assert len(rounds) == NUM_ROUNDS
    assert all(len(r.pairs) == 4 and r.bye is not None for r in rounds)
    # six byes across nine meshes: nobody sits out twice
    assert max(s.byes.values()) <= 1
    for rec in s.session_scores():
        assert rec.rounds_played == NUM_ROUNDS - s.byes[rec.mesh_id]


def test_round_two_pairs_by_win_rate():
    s = create_session("obj", ids(4), seed=2)
    first = s.next_pairings()
    winners, losers = [], []
    for a, b in first.pairs:
        s.record_choice((a, b), a)
        winners.append(a)
        losers.append(b)
    second = s.next_pairings()
    got = {frozenset(p) for p in second.pairs}
    assert got == {frozenset(winners), frozenset(losers)}


def test_no_rematch_within_session():
    for seed in range(5):
        s = create_session("obj", ids(10), seed=seed)
        rng = np.random.default_rng(seed)
        rounds = play(s, rng)
        seen = [frozenset(p) for r in rounds for p in r.pairs]
        assert len(seen) == len(set(seen))


# state machine errors -------------------------------------------------------


def test_next_pairings_with_unresolved_pairs():
    s = create_session("obj", ids(4), seed=0)
    s.next_pairings()
    with pytest.raises(PairingSequenceError):
        s.next_pairings()


def test_scores_before_completion():
    s = create_session("obj", ids(4), seed=0)
    s.next_pairings()
    with pytest.raises(IncompleteSessionError):
        s.session_scores()


def test_unknown_pair_rejected():
    s = create_session("obj", ids(6), seed=0)
    s.next_pairings()
    with pytest.raises(UnknownPairError):
        s.record_choice(("m00", "nope"), "m00")


def test_degenerate_pair_rejected():
    s = create_session("obj", ids(6), seed=0)
    s.next_pairings()
    with pytest.raises(UnknownPairError):
        s.record_choice(("m00", "m00"), "m00")


def test_winner_outside_pair_rejected():
    s = create_session("obj", ids(4), seed=0)
    (pair, *_rest) = s.next_pairings().pairs
    with pytest.raises(WinnerNotInPairError):
        s.record_choice(pair, "stranger")
    # the failed call must not consume the pair
    s.record_choice(pair, pair[0])


def test_duplicate_choice_reports_original_winner():
    s = create_session("obj", ids(4), seed=0)
    (pair, *_rest) = s.next_pairings().pairs
    s.record_choice(pair, pair[1])
    with pytest.raises(DuplicateChoiceError) as exc:
        s.record_choice(pair, pair[0])
    assert exc.value.winner == pair[1]
    assert frozenset(exc.value.pair) == frozenset(pair)


def test_outstanding_shrinks_as_choices_land():
    s = create_session("obj", ids(6), seed=1)
    rp = s.next_pairings()
    assert len(s.outstanding().pairs) == 3
    s.record_choice(rp.pairs[0], rp.pairs[0][0])
    left = s.outstanding().pairs
    assert len(left) == 2 and rp.pairs[0] not in left


def test_free_function_wrappers_match_methods():
    s = create_session("obj", ids(4), seed=0)
    rp = next_pairings(s)
    for pair in rp.pairs:
        record_choice(s, pair, pair[0])
    rng = np.random.default_rng(0)
    play(s, rng)
    assert session_scores(s) == s.session_scores()


def test_record_validation():
    rec = RealismRecord("m", "s", wins=3, rounds_played=5, score=0.6)
    assert rec.score == 0.6
    with pytest.raises(ValueError):
        RealismRecord("m", "s", wins=9, rounds_played=5, score=1.8)


# fuzz -----------------------------------------------------------------------


def test_fuzzed_sessions_hold_invariants():
    rng = np.random.default_rng(1234)
    for trial in range(200):
        m = int(rng.integers(2, 17))
        mesh_ids = ids(m, prefix=f"t{trial}-")
        s = create_session(f"obj{trial}", mesh_ids, seed=int(rng.integers(0, 2**31)))
        issued = 0
        seen = []
        while not s.is_complete():
            rp = s.next_pairings()
            issued += 1
            names = [n for p in rp.pairs for n in p]
            assert len(names) == len(set(names))
            sitting = ([rp.bye] if rp.bye is not None else []) + list(rp.extra_byes)
            # every mesh is either paired or sitting out, never both
            assert sorted(names + sitting) == sorted(mesh_ids)
            for pair in rp.pairs:
                seen.append(frozenset(pair))
                s.record_choice(pair, pair[int(rng.integers(0, 2))])
        assert issued <= NUM_ROUNDS
        assert len(seen) == len(set(seen))
        assert sum(s.wins.values()) == len(seen)
        for rec in s.session_scores():
            assert 0.0 <= rec.score <= 1.0
            assert rec.score == rec.wins / rec.rounds_played
            assert rec.rounds_played + s.byes[rec.mesh_id] == issued


# aggregation ----------------------------------------------------------------


def test_aggregate_zero_spread():
    records = [RealismRecord("m", f"s{i}", 3, 6, 0.5) for i in range(3)]
    (agg,) = aggregate(records)
    assert agg.mean == 0.5 and agg.ci95 == 0.0 and agg.n == 3


def test_aggregate_single_record_has_no_interval():
    (agg,) = aggregate([RealismRecord("m", "s", 4, 6, 4 / 6)])
    assert agg.mean == pytest.approx(4 / 6)
    assert agg.std is None and agg.ci95 is None


def test_ci95_formula_quarter_sigma():
    # 100 scores split evenly around 0.5 with sample std exactly 0.25:
    # ci95 = 1.96 * 0.25 / sqrt(100) = 0.049
    d = 0.25 * math.sqrt(99 / 100)
    scores = [0.5 - d] * 50 + [0.5 + d] * 50
    records = [RealismRecord("m", f"s{i}", 3, 6, sc) for i, sc in enumerate(scores)]
    (agg,) = aggregate(records)
    assert agg.std == pytest.approx(0.25, abs=1e-12)
    assert agg.ci95 == pytest.approx(0.049, abs=1e-12)


def test_aggregate_matches_statistics_module():
    rng = np.random.default_rng(8)
    records = []
    expected = {}
    for k in range(6):
        n = int(rng.integers(2, 9))
        scores = [round(float(x), 6) for x in rng.uniform(0, 1, n)]
        mesh = f"mesh{k}"
        expected[mesh] = scores
        records += [RealismRecord(mesh, f"s{i}", 0, 6, sc) for i, sc in enumerate(scores)]
    for agg in aggregate(records):
        scores = expected[agg.mesh_id]
        assert agg.mean == pytest.approx(statistics.fmean(scores), abs=1e-12)
        assert agg.std == pytest.approx(statistics.stdev(scores), abs=1e-12)
        assert agg.ci95 == pytest.approx(
            1.96 * statistics.stdev(scores) / math.sqrt(len(scores)), abs=1e-12
        )


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=2, max_size=40))
def test_aggregate_mean_is_brute_force_mean(scores):
    records = [RealismRecord("m", f"s{i}", 0, 6, sc) for i, sc in enumerate(scores)]
    (agg,) = aggregate(records)
    assert agg.mean == pytest.approx(sum(scores) / len(scores), abs=1e-9)


# event log and replay -------------------------------------------------------


def test_event_log_round_trip(tmp_path):
    path = tmp_path / "log.jsonl"
    events = [{"type": "session_created", "session": "x"}, {"type": "choice", "n": 1}]
    for ev in events:
        append_event(path, ev)
    assert read_events(path) == events


def test_torn_final_line_is_dropped(tmp_path):
    path = tmp_path / "log.jsonl"
    append_event(path, {"type": "session_created", "session": "x"})
    with open(path, "a", encoding="utf-8") as f:
        f.write('{"type": "choice", "ses')  # interrupted append, no newline
    events = read_events(path)
    assert events == [{"type": "session_created", "session": "x"}]


def test_corrupt_complete_line_raises(tmp_path):
    path = tmp_path / "log.jsonl"
    path.write_text('{"type": "session_created"}\nnot json at all\n')
    with pytest.raises(ReplayError):
        read_events(path)


def test_replay_rejects_bad_logs():
    s = create_session("obj", ids(4), seed=0, session_id="sess")
    head = created_event(s)
    with pytest.raises(ReplayError):
        replay_events([])
    with pytest.raises(ReplayError):
        replay_events([{"type": "choice"}])
    with pytest.raises(ReplayError):
        replay_events([head, {"type": "mystery", "session": "sess"}])
    with pytest.raises(ReplayError):
        replay_events([head, {"type": "choice", "session": "other", "round": 1,
                              "pair": ["m00", "m01"], "winner": "m00"}])


def test_replay_checks_round_numbers():
    s = create_session("obj", ids(4), seed=0, session_id="sess")
    events = [created_event(s)]
    rng = np.random.default_rng(2)
    play(s, rng, events)
    tampered = [dict(ev) for ev in events]
    tampered[1]["round"] = tampered[1]["round"] + 1
    with pytest.raises(ReplayError):
        replay_events(tampered)


def test_replay_prefix_identity():
    """Every log prefix reconstructs the live session's state at that point."""
    rng = np.random.default_rng(5)
    s = create_session("obj", ids(9), seed=3, session_id="sess-1")
    events = [created_event(s)]
    snapshots = []
    while not s.is_complete():
        rp = s.next_pairings()
        for pair in rp.pairs:
            winner = pair[int(rng.integers(0, 2))]
            s.record_choice(pair, winner)
            events.append(choice_event(s, pair, winner))
            snapshots.append((dict(s.wins), dict(s.rounds_played), set(s.history)))
    assert len(snapshots) > 20
    for i, (wins, played, history) in enumerate(snapshots):
        re = replay_events(events[: i + 2])
        assert re.wins == wins
        assert re.rounds_played == played
        assert set(re.history) == history
    full = replay_events(events)
    assert full.is_complete()
    assert full.session_scores() == s.session_scores()
    assert full.byes == s.byes


def test_replay_log_from_disk(tmp_path):
    path = tmp_path / "sess.jsonl"
    s = create_session("obj", ids(7), seed=11, session_id="disk-sess")
    append_event(path, created_event(s))
    rng = np.random.default_rng(9)
    while not s.is_complete():
        rp = s.next_pairings()
        for pair in rp.pairs:
            winner = pair[int(rng.integers(0, 2))]
            s.record_choice(pair, winner)
            append_event(path, choice_event(s, pair, winner))
    rebuilt = replay_log(path)
    assert rebuilt.session_scores() == s.session_scores()
    assert rebuilt.wins == s.wins and rebuilt.byes == s.byes
