"""Independent expectation oracle for synthetic-backend coherency runs.

Simulates the two-round protocol directly from a synthetic knowledge base's
answer distributions, sharing no scoring code with the engine. Behaviors
with deterministic outcomes are enumerated exactly; stochastic behaviors are
estimated by Monte Carlo over full corpus passes, which also yields a
predictive interval for the macro score a single engine run should land in.

Within one simulated pass, draws are memoized per unique query because a
seeded synthetic backend is a pure function of the request: two instances
issuing the same query get the same answer in a real run too.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction

from .engine import EvalOptions
from .backends.synthetic import SyntheticKB
from .types import CoherevalError, Direction

_DETERMINISTIC = ("perfect", "echo", "fixed_answer")


class OracleError(CoherevalError):
    pass


@dataclass(frozen=True)
class OracleEstimate:
    round1: float
    round2: float
    avg: float
    round1_interval: tuple[float, float]
    round2_interval: tuple[float, float]
    avg_interval: tuple[float, float]
    exact: bool
    samples: int


def _contains_match(a: str | None, b: str) -> int:
    # Clean-room equivalent of the scoring comparison: trim, drop one
    # trailing period, lowercase, mutual containment, empty never matches.
    if a is None:
        return 0

    def norm(t: str) -> str:
        t = t.strip()
        if t.endswith("."):
            t = t[:-1].strip()
        return t.lower()

    x, y = norm(a), norm(b)
    if not x or not y:
        return 0
    return 1 if (x in y or y in x) else 0


class _KBView:
    """The oracle's own lookups, rebuilt from the raw fact list."""

    def __init__(self, kb: SyntheticKB) -> None:
        self.behavior = kb.behavior
        fwd: dict[tuple[str, str], set[str]] = {}
        bwd: dict[tuple[str, str], set[str]] = {}
        groups: dict[str, list[tuple[str, str]]] = {}
        for t in kb.facts:
            fwd.setdefault((t.relation_id, t.subject.strip().lower()), set()).add(t.object)
            bwd.setdefault((t.relation_id, t.object.strip().lower()), set()).add(t.subject)
            groups.setdefault(t.relation_id, []).append((t.subject, t.object))
        self.forward = {k: tuple(sorted(v)) for k, v in fwd.items()}
        self.backward = {k: tuple(sorted(v)) for k, v in bwd.items()}
        self.groups = {k: tuple(v) for k, v in groups.items()}
        self.subject_pools = dict(kb.subject_pools)
        self.object_pools = dict(kb.object_pools)

    def correct_set(self, relation_id: str, pivot: str, direction: Direction) -> tuple[str, ...]:
        table = self.backward if direction is Direction.PREDICT_SUBJECT else self.forward
        return table.get((relation_id, pivot.strip().lower()), ())

    def pool(self, relation_id: str, direction: Direction) -> tuple[str, ...]:
        pools = self.subject_pools if direction is Direction.PREDICT_SUBJECT else self.object_pools
        return pools.get(relation_id, ())


def _answer(
    view: _KBView,
    relation_id: str,
    direction: Direction,
    query: str,
    banned: frozenset[str],
    rng: random.Random | None,
    memo: dict,
) -> str | None:
    key = (relation_id, direction, query.strip().lower(), banned)
    if key in memo:
        return memo[key]
    kind = view.behavior.kind
    answer: str | None
    if kind == "fixed_answer":
        answer = view.behavior.fixed_answer
        if answer is not None and answer.strip().lower() in banned:
            answer = None
    elif kind == "echo" and direction is Direction.PREDICT_SUBJECT:
        answer = query if query.strip().lower() not in banned else None
    elif kind == "perfect" or (
        direction is Direction.PREDICT_OBJECT and kind in ("reversal_cursed", "echo")
    ):
        answer = next(
            (c for c in view.correct_set(relation_id, query, direction) if c.strip().lower() not in banned),
            None,
        )
    else:  # uniform draw from the non-banned pool
        live = [e for e in view.pool(relation_id, direction) if e.strip().lower() not in banned]
        if not live:
            answer = None
        else:
            if rng is None:
                raise OracleError(f"behavior {kind} needs a random source")
            answer = rng.choice(live)
    memo[key] = answer
    return answer


def _ban_set(
    view: _KBView,
    relation_id: str,
    pivot: str,
    gold_pivot: str,
    direction: Direction,
    keep: str,
    options: EvalOptions,
) -> frozenset[str]:
    if not options.exclusion_enabled:
        return frozenset()
    key_entity = pivot if options.exclusion_keying == "pivot" else gold_pivot
    keep_norm = keep.strip().lower()
    return frozenset(
        e.strip().lower()
        for e in view.correct_set(relation_id, key_entity, direction)
        if e.strip().lower() != keep_norm
    )


def _simulate_pass(
    view: _KBView, options: EvalOptions, rng: random.Random | None
) -> tuple[Fraction, Fraction]:
    memo: dict = {}
    rel_r1: list[Fraction] = []
    rel_r2: list[Fraction] = []
    for relation_id in sorted(view.groups):
        pairs = view.groups[relation_id]
        r1_hits = 0
        r2_hits = 0
        for subject, obj in pairs:
            pivot_o = _answer(view, relation_id, Direction.PREDICT_OBJECT, subject, frozenset(), rng, memo)
            if pivot_o is not None:
                banned = _ban_set(view, relation_id, pivot_o, obj, Direction.PREDICT_SUBJECT, subject, options)
                back = _answer(view, relation_id, Direction.PREDICT_SUBJECT, pivot_o, banned, rng, memo)
                r1_hits += _contains_match(back, subject)
            pivot_s = _answer(view, relation_id, Direction.PREDICT_SUBJECT, obj, frozenset(), rng, memo)
            if pivot_s is not None:
                banned = _ban_set(view, relation_id, pivot_s, subject, Direction.PREDICT_OBJECT, obj, options)
                back = _answer(view, relation_id, Direction.PREDICT_OBJECT, pivot_s, banned, rng, memo)
                r2_hits += _contains_match(back, obj)
        rel_r1.append(Fraction(r1_hits, len(pairs)))
        rel_r2.append(Fraction(r2_hits, len(pairs)))
    macro_r1 = sum(rel_r1, start=Fraction(0)) / len(rel_r1)
    macro_r2 = sum(rel_r2, start=Fraction(0)) / len(rel_r2)
    return macro_r1, macro_r2


def _interval(values: list[float]) -> tuple[float, float]:
    ordered = sorted(values)
    n = len(ordered)
    lo = ordered[max(0, math.floor(0.025 * (n - 1)))]
    hi = ordered[min(n - 1, math.ceil(0.975 * (n - 1)))]
    mean = sum(ordered) / n
    sd = (sum((v - mean) ** 2 for v in ordered) / n) ** 0.5
    pad = 1.96 * sd / (n**0.5)
    return (max(0.0, lo - pad), min(1.0, hi + pad))


def brute_force_expected_coherency(
    kb: SyntheticKB,
    options: EvalOptions = EvalOptions(),
    *,
    min_samples: int = 10000,
    rng: random.Random | None = None,
) -> OracleEstimate:
    """Expected macro coherency for a synthetic behavior, with interval.

    Deterministic behaviors are enumerated exactly and get a zero-width
    interval. Stochastic behaviors run enough full-corpus simulations that
    at least ``min_samples`` instance outcomes are drawn; the reported
    interval is the 2.5..97.5 percentile band of the simulated macro scores,
    padded by the estimator's own standard error.
    """
    view = _KBView(kb)
    if not view.groups:
        raise OracleError("knowledge base has no facts to simulate")
    n_instances = sum(len(g) for g in view.groups.values())
    if kb.behavior.kind in _DETERMINISTIC:
        r1, r2 = _simulate_pass(view, options, rng=None)
        avg = (r1 + r2) / 2
        return OracleEstimate(
            round1=float(r1),
            round2=float(r2),
            avg=float(avg),
            round1_interval=(float(r1), float(r1)),
            round2_interval=(float(r2), float(r2)),
            avg_interval=(float(avg), float(avg)),
            exact=True,
            samples=n_instances,
        )
    rng = rng or random.Random(0)
    passes = max(200, -(-min_samples // n_instances))
    r1_values: list[float] = []
    r2_values: list[float] = []
    avg_values: list[float] = []
    for _ in range(passes):
        r1, r2 = _simulate_pass(view, options, rng)
        r1_values.append(float(r1))
        r2_values.append(float(r2))
        avg_values.append(float((r1 + r2) / 2))
    return OracleEstimate(
        round1=sum(r1_values) / passes,
        round2=sum(r2_values) / passes,
        avg=sum(avg_values) / passes,
        round1_interval=_interval(r1_values),
        round2_interval=_interval(r2_values),
        avg_interval=_interval(avg_values),
        exact=False,
        samples=passes * n_instances,
    )
