"""Two-sided engine: strictification, extended Gale-Shapley with quotas,
blocking-pair verification and an exhaustive stable-set oracle.

All comparisons use the strict part of the stored pre-order, so the
verifier works on markets with ties; the matcher itself demands strict
lists and tells the caller to strictify otherwise.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from .market import (
    AT_MOST_ONCE,
    PER_PAIR_CAP,
    AgentId,
    AgentPrefs,
    MarketError,
    Matching,
    MultiSidedMarket,
    PreferenceList,
    TiesError,
    TwoSidedMarket,
)

BY_INDEX = "by_index"
SEEDED = "seeded"


@dataclass(frozen=True)
class StrictificationRule:
    """How ties are broken: by agent index, or by a seeded shuffle."""

    mode: str = BY_INDEX
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in (BY_INDEX, SEEDED):
            raise MarketError(f"unknown strictification mode {self.mode!r}")
        if self.mode == SEEDED and self.seed is None:
            raise MarketError("seeded strictification needs a seed")


@dataclass()
class OpCounter:
    """Counted work: proposals made, list extractions, list insertions."""

    proposals: int = 0
    extractions: int = 0
    pushes: int = 0

    def total(self) -> int:
        return self.proposals + self.extractions + self.pushes

    def merge(self, other: "OpCounter") -> None:
        self.proposals += other.proposals
        self.extractions += other.extractions
        self.pushes += other.pushes


def strictify_list(pref: PreferenceList, rule: StrictificationRule) -> PreferenceList:
    """Break all ties in one list, preserving every strict comparison."""
    if pref.is_strict:
        return pref
    order: list[AgentId] = []
    if rule.mode == BY_INDEX:
        for group in pref.ranked:
            order.extend(sorted(group))
    else:
        seq = np.random.SeedSequence(
            rule.seed, spawn_key=(pref.owner.side, pref.owner.index)
        )
        rng = np.random.Generator(np.random.PCG64(seq))
        for group in pref.ranked:
            members = sorted(group)
            order.extend(members[i] for i in rng.permutation(len(members)))
    return PreferenceList(pref.owner, [(a,) for a in order])


def strictify(
    prefs: Iterable[PreferenceList] | Mapping[AgentId, PreferenceList],
    rule: StrictificationRule = StrictificationRule(),
) -> dict[AgentId, PreferenceList]:
    """Strictify a collection of lists; returns a map keyed by owner."""
    items = prefs.values() if isinstance(prefs, Mapping) else prefs
    return {p.owner: strictify_list(p, rule) for p in items}


def strictify_market(market, rule: StrictificationRule = StrictificationRule()):
    """Strictify every list of a market (either kind), returning a new one."""
    if isinstance(market, TwoSidedMarket):
        return replace(market, prefs=strictify(market.prefs, rule))
    prefs = {
        agent: AgentPrefs(
            strictify_list(pair.left, rule) if pair.left is not None else None,
            strictify_list(pair.right, rule) if pair.right is not None else None,
        )
        for agent, pair in market.prefs.items()
    }
    return replace(market, prefs=prefs)


@dataclass(frozen=True)
class BlockingPair:
    """A pair both of whose members want each other over a current match,
    or an individually irrational match with the offending agent named."""

    man: AgentId
    woman: AgentId
    kind: str = "blocking"  # blocking | irrational
    agent: AgentId | None = None


def _require_strict(market: TwoSidedMarket) -> None:
    for agent in sorted(market.agents):
        if not market.pref(agent).is_strict:
            raise TiesError(
                f"preferences of {market.name(agent)} contain ties; "
                "run strictify first"
            )


def gs_match(
    market: TwoSidedMarket,
    proposer: int = 0,
    queue: str = "fifo",
    counter: OpCounter | None = None,
) -> Matching:
    """Extended Gale-Shapley with quotas; ``proposer`` is the side index.

    Proposers offer down their lists one spot at a time (FIFO over the
    free ones); an acceptor takes an offer iff she prefers the proposer to
    her weakest current partner-or-self.  Under the at-most-once policy a
    pair is offered at most once, under per-pair-cap until rejected or
    matched cap times.  The result does not depend on the queue
    discipline; ``queue="lifo"`` exists to let tests verify that.
    """
    if proposer not in (0, 1):
        raise MarketError(f"proposer must be 0 or 1, got {proposer}")
    _require_strict(market)
    if queue not in ("fifo", "lifo"):
        raise MarketError(f"unknown queue discipline {queue!r}")

    proposers = sorted(market.men if proposer == 0 else market.women)
    order = {p: market.pref(p).strict_order() for p in proposers}
    accept_rank = {
        a: market.pref(a) for a in (market.women if proposer == 0 else market.men)
    }

    matched_of: dict[AgentId, list[AgentId]] = {p: [] for p in market.agents}
    pair_count: dict[tuple[AgentId, AgentId], int] = {}
    rejections: dict[tuple[AgentId, AgentId], int] = {}
    pointer = {p: 0 for p in proposers}
    at_most_once = market.pair_policy == AT_MOST_ONCE

    def next_offer(p: AgentId) -> AgentId | None:
        lst = order[p]
        if at_most_once:
            i = pointer[p]
            if i >= len(lst):
                return None
            pointer[p] = i + 1
            return lst[i]
        for w in lst:
            cap = market.pair_cap(p, w) if proposer == 0 else market.pair_cap(w, p)
            if rejections.get((p, w), 0) + pair_count.get(_c(p, w), 0) < cap:
                return w
        return None

    def _c(x: AgentId, y: AgentId) -> tuple[AgentId, AgentId]:
        return (x, y) if x.side == 0 else (y, x)

    free = deque(proposers)
    while free:
        p = free.popleft() if queue == "fifo" else free.pop()
        if len(matched_of[p]) >= market.quota(p):
            continue
        w = next_offer(p)
        if w is None:
            continue  # remaining spots stay self-matched
        if counter is not None:
            counter.proposals += 1
        wpref = accept_rank[w]
        holds = matched_of[w]
        if len(holds) < market.quota(w):
            accepts = wpref.accepts(p)
            dropped = None
        else:
            weakest = max(holds, key=wpref.rank_key)
            accepts = wpref.prefers(p, weakest)
            dropped = weakest if accepts else None
        if accepts:
            if dropped is not None:
                holds.remove(dropped)
                matched_of[dropped].remove(w)
                key = _c(dropped, w)
                pair_count[key] -= 1
                rejections[(dropped, w)] = rejections.get((dropped, w), 0) + 1
                free.append(dropped)
            holds.append(p)
            matched_of[p].append(w)
            key = _c(p, w)
            pair_count[key] = pair_count.get(key, 0) + 1
        else:
            rejections[(p, w)] = rejections.get((p, w), 0) + 1
        if len(matched_of[p]) < market.quota(p):
            free.append(p)

    pairs = []
    for key, c in pair_count.items():
        pairs.extend([key] * c)
    return Matching(2, pairs)


def _weakest_rank(pref: PreferenceList, partners, quota: int) -> float:
    """Rank of the weakest partner-or-self: self fills unused spots."""
    if len(partners) < quota:
        return pref.rank_key(pref.owner)
    return max(pref.rank_key(p) for p in partners)


def find_blocking_pairs(
    market: TwoSidedMarket,
    matching: Matching,
    prefs_mode: str = "original-preorder",
) -> list[BlockingPair]:
    """Every blocking pair plus individually irrational matches.

    Empty result means the matching is stable under the chosen preference
    view.  ``prefs_mode="strict"`` additionally asserts that the market's
    lists carry no ties.
    """
    if prefs_mode not in ("strict", "original-preorder"):
        raise MarketError(f"unknown prefs_mode {prefs_mode!r}")
    if prefs_mode == "strict":
        _require_strict(market)

    out: list[BlockingPair] = []
    partners: dict[AgentId, list[AgentId]] = {a: [] for a in market.agents}
    pair_count: dict[tuple[AgentId, AgentId], int] = {}
    for m, w in matching:
        partners[m].append(w)
        partners[w].append(m)
        pair_count[(m, w)] = pair_count.get((m, w), 0) + 1
        if not market.pref(m).accepts(w):
            out.append(BlockingPair(m, w, kind="irrational", agent=m))
        if not market.pref(w).accepts(m):
            out.append(BlockingPair(m, w, kind="irrational", agent=w))

    weakest = {
        a: _weakest_rank(market.pref(a), partners[a], market.quota(a))
        for a in market.agents
    }
    for m in sorted(market.men):
        mpref = market.pref(m)
        for w in sorted(mpref.acceptable):
            if not market.pref(w).accepts(m):
                continue
            if pair_count.get((m, w), 0) >= market.pair_cap(m, w):
                continue
            if mpref.rank_key(w) < weakest[m] and market.pref(w).rank_key(m) < weakest[w]:
                out.append(BlockingPair(m, w))
    return out


def is_stable(market: TwoSidedMarket, matching: Matching) -> bool:
    return not find_blocking_pairs(market, matching)


def sorted_partner_ranks(
    market: TwoSidedMarket, matching: Matching, agent: AgentId
) -> tuple[float, ...]:
    """The agent's partner ranks, best first, padded with self to quota.

    Elementwise <= between two such vectors says every k-th best partner
    is weakly better in the first matching.
    """
    pref = market.pref(agent)
    ranks = sorted(pref.rank_key(p) for p in matching.partners(agent, 1 - agent.side))
    ranks += [pref.rank_key(agent)] * (market.quota(agent) - len(ranks))
    return tuple(ranks)


def enumerate_all_stable(market: TwoSidedMarket, bound: int = 36) -> set[Matching]:
    """All stable matchings by exhaustive enumeration (desk-scale oracle).

    Guarded by ``|M| * |W| <= bound`` since the search is exponential.
    """
    cells = len(market.men) * len(market.women)
    if cells > bound:
        raise MarketError(
            f"market has {cells} cells, above the enumeration bound {bound}"
        )
    if market.pair_policy != AT_MOST_ONCE:
        raise MarketError("the enumeration oracle supports the at-most-once policy only")

    men = sorted(market.men)
    mutual: dict[AgentId, list[AgentId]] = {
        m: sorted(
            w for w in market.pref(m).acceptable if market.pref(w).accepts(m)
        )
        for m in men
    }
    edges = [(m, w) for m in men for w in mutual[m]]

    results: set[Matching] = set()
    capacity = {w: market.quota(w) for w in market.women}
    chosen: list[tuple[AgentId, AgentId]] = []

    def stable(assignment: set[tuple[AgentId, AgentId]]) -> bool:
        partners: dict[AgentId, list[AgentId]] = {}
        for m, w in assignment:
            partners.setdefault(m, []).append(w)
            partners.setdefault(w, []).append(m)
        weakest = {}
        for m, w in edges:
            for a in (m, w):
                if a not in weakest:
                    weakest[a] = _weakest_rank(
                        market.pref(a), partners.get(a, ()), market.quota(a)
                    )
        for m, w in edges:
            if (m, w) in assignment:
                continue
            if (
                market.pref(m).rank_key(w) < weakest[m]
                and market.pref(w).rank_key(m) < weakest[w]
            ):
                return False
        return True

    def recurse(i: int) -> None:
        if i == len(men):
            assignment = set(chosen)
            if stable(assignment):
                results.add(Matching(2, chosen))
            return
        m = men[i]
        available = [w for w in mutual[m] if capacity[w] > 0]
        for size in range(0, min(market.quota(m), len(available)) + 1):
            for combo in itertools.combinations(available, size):
                for w in combo:
                    capacity[w] -= 1
                    chosen.append((m, w))
                recurse(i + 1)
                for w in combo:
                    capacity[w] += 1
                    chosen.pop()

    recurse(0)
    return results
