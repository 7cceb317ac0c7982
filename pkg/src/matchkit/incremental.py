"""Incremental re-matching with waiting lists.

A session keeps a full one-to-one market, the currently active agents, a
matching over them and one max-priority waiting list per agent in the full
market.  Proposals rejected along the way land on the reject-side's list,
so when an agent later joins or leaves, only the affected chain of
proposals is replayed instead of the whole market.
"""

from __future__ import annotations

import heapq
from typing import Iterable

from .market import (
    AT_MOST_ONCE,
    AgentId,
    MarketError,
    Matching,
    RegimeError,
    TwoSidedMarket,
    Violation,
    restrict,
)
from .two_sided import OpCounter, find_blocking_pairs, _require_strict


class StateError(MarketError):
    """A waiting-list state does not satisfy the session invariants."""


class WaitingListState:
    """Mutable matching session over a fixed full market.

    Operations on one state are strictly sequential; distinct states are
    independent.  ``counter`` accumulates proposals, extractions and list
    insertions across the session's life.
    """

    def __init__(
        self,
        market: TwoSidedMarket,
        active: tuple[Iterable[AgentId], Iterable[AgentId]] = ((), ()),
        proposer: int = 0,
    ):
        _require_strict(market)
        if any(market.quota(a) != 1 for a in market.agents):
            raise RegimeError("waiting-list sessions support quota 1 only")
        if market.pair_policy != AT_MOST_ONCE:
            raise RegimeError("waiting-list sessions support the at-most-once policy only")
        self.market = market
        self.active: tuple[set[AgentId], set[AgentId]] = (set(active[0]), set(active[1]))
        for k, side in enumerate((market.men, market.women)):
            unknown = self.active[k] - side
            if unknown:
                raise MarketError(f"active agents {sorted(unknown)} not in the full market")
        # None = free (needs to propose), own id = self-matched/single
        self.match: dict[AgentId, AgentId] = {}
        self.lists: dict[AgentId, list[tuple[int, AgentId]]] = {
            a: [] for a in market.agents
        }
        self.in_list: set[tuple[AgentId, AgentId]] = set()
        self.counter = OpCounter()

        proposer_side = (market.men, market.women)[proposer]
        for p in sorted(proposer_side):
            for w in market.pref(p).strict_order():
                self._push(p, w)
        for a in self.active[proposer]:
            self.match[a] = None
        for a in self.active[1 - proposer]:
            self.match[a] = a

    @classmethod
    def fresh(
        cls,
        market: TwoSidedMarket,
        active: tuple[Iterable[AgentId], Iterable[AgentId]] | None = None,
        proposer: int = 0,
    ) -> "WaitingListState":
        """Proposer-side lists hold every acceptable partner, acceptor-side
        lists are empty, active acceptors are single and active proposers
        free; run the algorithm to settle it."""
        if active is None:
            active = (market.men, market.women)
        return cls(market, active, proposer)

    # -- internals ---------------------------------------------------

    def _push(self, owner: AgentId, entrant: AgentId) -> None:
        if (owner, entrant) in self.in_list:
            return
        pref = self.market.pref(owner)
        if not pref.accepts(entrant):
            return
        heapq.heappush(self.lists[owner], (int(pref.rank_key(entrant)), entrant))
        self.in_list.add((owner, entrant))
        self.counter.pushes += 1

    def _extract(self, owner: AgentId) -> AgentId | None:
        self.counter.extractions += 1
        heap = self.lists[owner]
        if not heap:
            return None
        _, entrant = heapq.heappop(heap)
        self.in_list.discard((owner, entrant))
        return entrant

    def _free(self, side: int) -> list[AgentId]:
        return sorted(a for a in self.active[side] if self.match.get(a) is None)

    def _assert_settled(self, op: str) -> None:
        free = self._free(0) + self._free(1)
        if free:
            raise StateError(f"{op} needs a settled state; free agents: {free}")

    # -- operations ---------------------------------------------------

    def run(self, proposer: int, validate: bool = False) -> "WaitingListState":
        """Match every free agent on the proposer side (the MFP pass).

        With ``validate=True`` the full session invariants are checked
        first and the run refuses invariant-violating input.
        """
        if proposer not in (0, 1):
            raise MarketError(f"proposer must be 0 or 1, got {proposer}")
        if validate:
            violations = validate_waiting_lists(self, proposer)
            if violations:
                raise StateError(f"invalid input state: {violations[0]}")
        if self._free(1 - proposer):
            raise StateError(
                f"free agents on the accepting side {1 - proposer}; "
                "they can only be matched by a run in the other direction"
            )

        from collections import deque

        queue = deque(self._free(proposer))
        acceptors = self.active[1 - proposer]
        while queue:
            p = queue.popleft()
            if self.match.get(p) is not None:
                continue
            target = self._extract(p)
            if target is None:
                self.match[p] = p
                continue
            self.counter.proposals += 1
            tpref = self.market.pref(target)
            current = self.match.get(target)
            accepts = target in acceptors and (
                tpref.accepts(p) if current == target else tpref.prefers(p, current)
            )
            if accepts:
                self.match[target] = p
                self.match[p] = target
                if current != target and current is not None:
                    self.match[current] = None
                    self._push(target, current)
                    queue.append(current)
            else:
                self._push(target, p)
                queue.append(p)
        return self

    def add(self, agent: AgentId) -> "WaitingListState":
        """Activate an agent and re-match with that agent's side proposing."""
        if agent not in self.market.agents:
            raise MarketError(f"{agent} is not part of the full market")
        side = agent.side
        if agent in self.active[side]:
            raise StateError(f"{self.market.name(agent)} is already active")
        self._assert_settled("add")
        self.active[side].add(agent)
        self.match[agent] = None
        return self.run(proposer=side)

    def remove(self, agent: AgentId) -> "WaitingListState":
        """Deactivate an agent; a freed partner is re-matched with the
        removed agent's opposite side proposing."""
        side = agent.side
        if agent not in self.active[side]:
            raise StateError(f"{self.market.name(agent)} is not active")
        self._assert_settled("remove")
        partner = self.match.pop(agent)
        self.active[side].remove(agent)
        if partner is not None and partner != agent:
            self._push(agent, partner)
            self.match[partner] = None
        return self.run(proposer=1 - side)

    # -- views ----------------------------------------------------------

    def matching(self) -> Matching:
        pairs = []
        for m in self.active[0]:
            w = self.match.get(m)
            if w is not None and w != m:
                pairs.append((m, w))
        return Matching(2, pairs)

    def active_market(self) -> TwoSidedMarket:
        sub, _ = restrict(self.market, (self.active[0], self.active[1]))
        return sub

    def to_debug_dict(self) -> dict:
        """Matching plus waiting lists in the JSON matching format."""
        name = self.market.name
        lists = {}
        for owner, heap in sorted(self.lists.items()):
            if heap:
                lists[name(owner)] = [name(e) for _, e in sorted(heap)]
        return {
            "matching": [[name(m), name(w)] for m, w in self.matching()],
            "single": sorted(
                name(a)
                for side in self.active
                for a in side
                if self.match.get(a) == a
            ),
            "waiting_lists": lists,
        }


def mfp_run(state: WaitingListState, proposer: int, validate: bool = False) -> WaitingListState:
    return state.run(proposer, validate=validate)


def add_agent(state: WaitingListState, agent: AgentId) -> WaitingListState:
    return state.add(agent)


def remove_agent(state: WaitingListState, agent: AgentId) -> WaitingListState:
    return state.remove(agent)


def validate_waiting_lists(
    state: WaitingListState, proposer: int | None = None
) -> list[Violation]:
    """Check the three session invariants; empty means compatible.

    Free agents are tolerated on the proposer side only (they are matched
    by the next run); the matching restricted to matched agents must be
    stable; waiting lists must not miss a regretful matched agent for any
    mutually acceptable pair; and every mutually acceptable pair must be
    matched or covered by one of the two lists.
    """
    out: list[Violation] = []
    market = state.market
    free = [state._free(0), state._free(1)]
    if free[0] and free[1]:
        out.append(Violation("free-both-sides", tuple(free[0] + free[1]),
                             "free agents on both sides"))
    elif proposer is not None and free[1 - proposer]:
        out.append(Violation("acceptor-free", tuple(free[1 - proposer]),
                             f"free agents on the accepting side {1 - proposer}"))

    matched = [
        {a for a in state.active[k] if state.match.get(a) is not None}
        for k in (0, 1)
    ]
    sub, _ = restrict(market, (matched[0], matched[1]))
    pairs = [
        (m, w)
        for m in matched[0]
        if (w := state.match[m]) != m and w is not None
    ]
    for bp in find_blocking_pairs(sub, Matching(2, pairs)):
        out.append(Violation("restricted-stability", (bp.man, bp.woman),
                             f"restricted matching {bp.kind} pair "
                             f"({market.name(bp.man)}, {market.name(bp.woman)})"))

    active_matched = matched[0] | matched[1]
    for p in sorted(market.agents):
        ppref = market.pref(p)
        for q in sorted(ppref.acceptable):
            if q not in active_matched:
                continue
            qpref = market.pref(q)
            if not qpref.accepts(p):
                continue
            current = state.match[q]
            regrets = qpref.accepts(p) if current == q else qpref.prefers(p, current)
            if regrets and (p, q) not in state.in_list:
                out.append(Violation("list-completeness", (p, q),
                                     f"{market.name(q)} prefers {market.name(p)} to its "
                                     f"match but is missing from {market.name(p)}'s list"))

    for m in sorted(market.men):
        mpref = market.pref(m)
        for w in sorted(mpref.acceptable):
            if not market.pref(w).accepts(m):
                continue
            if state.match.get(m) == w:
                continue
            if (m, w) in state.in_list or (w, m) in state.in_list:
                continue
            out.append(Violation("pair-coverage", (m, w),
                                 f"mutually acceptable ({market.name(m)}, {market.name(w)}) "
                                 "neither matched nor on a waiting list"))
    return out
