"""Swiss-system pairwise comparison sessions and score aggregation.

An evaluator compares meshes of one object over six rounds. Round 1 pairs
randomly (seeded); later rounds sort by win rate and pair adjacent entries,
swapping forward past rematches. Wins normalize to [0, 1] by rounds actually
played, so byes never bias a score. Sessions replay deterministically from
an append-only event log.

Small mesh counts cannot always fill six rematch-free rounds (there are only
C(m,2) distinct pairs), so a round with no legal pairing left is skipped:
everyone sits out and the round counter still advances. Scores stay unbiased
because normalization divides by rounds played, not rounds issued.
"""

from __future__ import annotations

import json
import math
import os
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

import numpy as np

NUM_ROUNDS = 6
MIN_MESHES = 2
MAX_MESHES = 64
Z95 = 1.96


class AnnotationError(ValueError):
    """Base for session state machine violations."""


class PairingSequenceError(AnnotationError):
    """next_pairings called while the current round has unresolved pairs."""


class SessionCompleteError(AnnotationError):
    """No rounds left to issue."""


class IncompleteSessionError(AnnotationError):
    """Scores requested before all six rounds resolved."""


class UnknownPairError(AnnotationError):
    """Choice for a pair that was never issued this round."""


class DuplicateChoiceError(AnnotationError):
    """Choice for a pair that already has a recorded winner."""

    def __init__(self, pair: tuple[str, str], winner: str):
        super().__init__(f"pair {pair} already recorded with winner {winner!r}")
        self.pair = pair
        self.winner = winner


class WinnerNotInPairError(AnnotationError):
    """Winner id names neither side of the pair."""


class ReplayError(AnnotationError):
    """Event log contradicts the deterministic session reconstruction."""


@dataclass(frozen=True)
class RoundPairing:
    """One issued round: ordered pairs plus who sits out."""

    round: int
    pairs: tuple[tuple[str, str], ...]
    bye: str | None = None
    extra_byes: tuple[str, ...] = ()  # rematch starvation, beyond the odd-count bye


@dataclass(frozen=True)
class RealismRecord:
    mesh_id: str
    subject_id: str
    wins: int
    rounds_played: int
    score: float  # wins / rounds_played

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class AggregateScore:
    mesh_id: str
    mean: float
    n: int
    std: float | None   # sample standard deviation, None when n == 1
    ci95: float | None  # 1.96 * std / sqrt(n), None when n == 1


class AnnotationSession:
    """Single-evaluator Swiss session over one object's meshes."""

    def __init__(self, session_id: str, object_id: str, mesh_ids: list[str], seed: int,
                 subject_id: str | None = None):
        if len(mesh_ids) < MIN_MESHES:
            raise AnnotationError(f"need at least {MIN_MESHES} meshes, got {len(mesh_ids)}")
        if len(mesh_ids) > MAX_MESHES:
            raise AnnotationError(f"at most {MAX_MESHES} meshes per session, got {len(mesh_ids)}")
        if len(set(mesh_ids)) != len(mesh_ids):
            raise AnnotationError("duplicate mesh ids")
        self.session_id = session_id
        self.object_id = object_id
        self.mesh_ids = list(mesh_ids)
        self.seed = int(seed)
        self.subject_id = subject_id if subject_id is not None else session_id
        self.round_index = 0                 # rounds issued so far
        self.wins = {m: 0 for m in mesh_ids}
        self.rounds_played = {m: 0 for m in mesh_ids}
        self.byes = {m: 0 for m in mesh_ids}
        self.history: set[frozenset] = set()
        self.outcomes: dict[frozenset, str] = {}
        self._pending: dict[frozenset, tuple[str, str]] = {}
        self._issued: RoundPairing | None = None

    # ranking ---------------------------------------------------------------

    def _win_rate(self, mesh: str) -> float:
        played = self.rounds_played[mesh]
        return self.wins[mesh] / played if played else 0.0

    def _ranking(self, round_no: int) -> list[str]:
        base = sorted(self.mesh_ids)
        rng = np.random.default_rng([self.seed, round_no])
        jitter = {m: int(j) for m, j in zip(base, rng.permutation(len(base)))}
        if round_no == 1:
            return sorted(base, key=lambda m: jitter[m])
        return sorted(base, key=lambda m: (-self._win_rate(m), jitter[m]))

    def _match(self, order: list[str]) -> list[tuple[str, str]] | None:
        """First rematch-free perfect matching in ranked order, if any.

        Leaders take the nearest legal partner; dead ends back up and try
        the next one, so a matching is found whenever one exists.
        """
        if not order:
            return []
        a = order[0]
        for j in range(1, len(order)):
            if frozenset((a, order[j])) in self.history:
                continue
            rest = self._match(order[1:j] + order[j + 1:])
            if rest is not None:
                return [(a, order[j])] + rest
        return None

    def _bye_candidates(self, ranking: list[str]) -> list[str]:
        """Lowest-ranked first within the fewest-byes group, then more-byed."""
        by_count: dict[int, list[str]] = {}
        for m in ranking:
            by_count.setdefault(self.byes[m], []).append(m)
        out = []
        for count in sorted(by_count):
            out.extend(reversed(by_count[count]))
        return out

    def _compute_round(self, round_no: int) -> RoundPairing:
        ranking = self._ranking(round_no)
        bye = None
        if len(ranking) % 2 == 1:
            # prefer the fairness pick, but move on if it strands the rest
            for candidate in self._bye_candidates(ranking):
                rest = [m for m in ranking if m != candidate]
                pairs = self._match(rest)
                if pairs is not None:
                    return RoundPairing(round=round_no, pairs=tuple(pairs), bye=candidate)
            bye = self._bye_candidates(ranking)[0]
            ranking = [m for m in ranking if m != bye]
        else:
            pairs = self._match(ranking)
            if pairs is not None:
                return RoundPairing(round=round_no, pairs=tuple(pairs), bye=None)
        # no rematch-free perfect matching exists; pair what we can
        pairs = []
        remaining = list(ranking)
        starved = []
        while remaining:
            a = remaining.pop(0)
            partner = next((b for b in remaining if frozenset((a, b)) not in self.history), None)
            if partner is None:
                starved.append(a)
            else:
                remaining.remove(partner)
                pairs.append((a, partner))
        return RoundPairing(round=round_no, pairs=tuple(pairs), bye=bye, extra_byes=tuple(starved))

    # state machine ---------------------------------------------------------

    @property
    def pending_pairs(self) -> list[tuple[str, str]]:
        return list(self._pending.values())

    def outstanding(self) -> RoundPairing | None:
        """Unresolved pairs of the current round, in issue order."""
        if self._issued is None or not self._pending:
            return None
        left = tuple(p for p in self._issued.pairs if frozenset(p) in self._pending)
        return RoundPairing(round=self._issued.round, pairs=left,
                            bye=self._issued.bye, extra_byes=self._issued.extra_byes)

    def _skip_starved_rounds(self) -> None:
        while self.round_index < NUM_ROUNDS and not self._pending:
            probe = self._compute_round(self.round_index + 1)
            if probe.pairs:
                break
            self.round_index += 1

    def is_complete(self) -> bool:
        self._skip_starved_rounds()
        return self.round_index >= NUM_ROUNDS and not self._pending

    def next_pairings(self) -> RoundPairing:
        """Issue the next round. Raises once the session is complete."""
        if self._pending:
            raise PairingSequenceError(
                f"round {self.round_index} has {len(self._pending)} unresolved pairs"
            )
        self._skip_starved_rounds()
        if self.round_index >= NUM_ROUNDS:
            raise SessionCompleteError(f"session {self.session_id} already ran {NUM_ROUNDS} rounds")
        issued = self._compute_round(self.round_index + 1)
        self.round_index += 1
        self._issued = issued
        self._pending = {frozenset(p): p for p in issued.pairs}
        if issued.bye is not None:
            self.byes[issued.bye] += 1
        for m in issued.extra_byes:
            self.byes[m] += 1
        return issued

    def record_choice(self, pair: tuple[str, str], winner: str) -> "AnnotationSession":
        """Record a forced-choice outcome for an outstanding pair."""
        key = frozenset(pair)
        if len(key) != 2:
            raise UnknownPairError(f"pair {pair} must name two distinct meshes")
        if key not in self._pending:
            if key in self.history:
                a, b = sorted(key)
                raise DuplicateChoiceError((a, b), self.outcomes[key])
            raise UnknownPairError(f"pair {tuple(pair)} is not outstanding in round {self.round_index}")
        if winner not in key:
            raise WinnerNotInPairError(f"winner {winner!r} is not in pair {tuple(pair)}")
        self.wins[winner] += 1
        for m in key:
            self.rounds_played[m] += 1
        self.history.add(key)
        self.outcomes[key] = winner
        del self._pending[key]
        return self

    def session_scores(self) -> list[RealismRecord]:
        """Normalized per-mesh records; only for completed sessions."""
        if not self.is_complete():
            raise IncompleteSessionError(
                f"session {self.session_id} at round {self.round_index} with "
                f"{len(self._pending)} unresolved pairs"
            )
        records = []
        for m in self.mesh_ids:
            played = self.rounds_played[m]
            if played == 0:
                raise IncompleteSessionError(f"mesh {m!r} never played; cannot normalize")
            records.append(RealismRecord(
                mesh_id=m, subject_id=self.subject_id,
                wins=self.wins[m], rounds_played=played,
                score=self.wins[m] / played,
            ))
        return records


def create_session(object_id: str, mesh_ids: list[str], seed: int,
                   session_id: str | None = None,
                   subject_id: str | None = None) -> AnnotationSession:
    sid = session_id if session_id is not None else uuid.uuid4().hex
    return AnnotationSession(sid, object_id, mesh_ids, seed, subject_id=subject_id)


def next_pairings(session: AnnotationSession) -> RoundPairing:
    return session.next_pairings()


def record_choice(session: AnnotationSession, pair: tuple[str, str], winner: str) -> AnnotationSession:
    return session.record_choice(pair, winner)


def session_scores(session: AnnotationSession) -> list[RealismRecord]:
    return session.session_scores()


# aggregation ---------------------------------------------------------------


def aggregate(records: list[RealismRecord]) -> list[AggregateScore]:
    """Mean, sample std, and 95% CI per mesh across subjects."""
    by_mesh: dict[str, list[float]] = {}
    for r in records:
        by_mesh.setdefault(r.mesh_id, []).append(r.score)
    out = []
    for mesh_id in sorted(by_mesh):
        scores = np.asarray(by_mesh[mesh_id], dtype=np.float64)
        n = scores.size
        if n == 1:
            out.append(AggregateScore(mesh_id=mesh_id, mean=float(scores[0]), n=1,
                                      std=None, ci95=None))
            continue
        std = float(np.std(scores, ddof=1))
        out.append(AggregateScore(
            mesh_id=mesh_id, mean=float(np.mean(scores)), n=n,
            std=std, ci95=Z95 * std / math.sqrt(n),
        ))
    return out


# event log -----------------------------------------------------------------


def append_event(path: str | Path, record: dict) -> None:
    """Durably append one JSON line; the write is fsynced before returning."""
    line = json.dumps(record, sort_keys=True) + "\n"
    with open(path, "a", encoding="utf-8") as f:
        f.write(line)
        f.flush()
        os.fsync(f.fileno())


def read_events(path: str | Path) -> list[dict]:
    """All complete events in the log; a torn final line is dropped."""
    events = []
    raw = Path(path).read_bytes().decode("utf-8", errors="replace")
    lines = raw.split("\n")
    # text after the last newline is an interrupted append, never an event
    for line in lines[:-1]:
        if not line.strip():
            continue
        try:
            events.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ReplayError(f"{path}: corrupt event line: {exc}") from exc
    return events


def created_event(session: AnnotationSession, idempotency_key: str | None = None) -> dict:
    return {
        "type": "session_created",
        "session": session.session_id,
        "object_id": session.object_id,
        "mesh_ids": list(session.mesh_ids),
        "seed": session.seed,
        "subject_id": session.subject_id,
        "idempotency_key": idempotency_key,
        "timestamp": time.time(),
    }


def choice_event(session: AnnotationSession, pair: tuple[str, str], winner: str) -> dict:
    return {
        "type": "choice",
        "session": session.session_id,
        "round": session.round_index,
        "pair": list(pair),
        "winner": winner,
        "timestamp": time.time(),
    }


def replay_events(events: list[dict]) -> AnnotationSession:
    """Rebuild a session from its event log.

    Pairings are a pure function of seed and recorded history, so replaying
    the choices in order reconstructs the exact state at any log prefix.
    """
    if not events:
        raise ReplayError("empty event log")
    head = events[0]
    if head.get("type") != "session_created":
        raise ReplayError(f"log must start with session_created, got {head.get('type')!r}")
    session = AnnotationSession(
        head["session"], head["object_id"], list(head["mesh_ids"]), head["seed"],
        subject_id=head.get("subject_id"),
    )
    for ev in events[1:]:
        if ev.get("type") != "choice":
            raise ReplayError(f"unexpected event type {ev.get('type')!r} after creation")
        if ev.get("session") != session.session_id:
            raise ReplayError(f"event for session {ev.get('session')!r} in log of {session.session_id!r}")
        if not session.pending_pairs:
            session.next_pairings()
        if ev.get("round") != session.round_index:
            raise ReplayError(
                f"event round {ev.get('round')} does not match replayed round {session.round_index}"
            )
        pair = ev["pair"]
        session.record_choice((pair[0], pair[1]), ev["winner"])
    return session


def replay_log(path: str | Path) -> AnnotationSession:
    return replay_events(read_events(path))
