"""Core data model: agents, preference lists, markets and matchings.

Sides are indexed from 0.  In a two-sided market side 0 is the "men" and
side 1 the "women"; in a PhD market side 0 holds advisors, side 1 students
and side 2 co-advisors.  Markets and matchings are immutable; every
operation that "changes" one builds a new value.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Sequence

AT_MOST_ONCE = "at_most_once"
PER_PAIR_CAP = "per_pair_cap"

PAIR_POLICIES = (AT_MOST_ONCE, PER_PAIR_CAP)


class MarketError(ValueError):
    """Malformed market, matching or operation argument."""


class TiesError(MarketError):
    """An engine that needs strict preferences was given tied ones."""


class RegimeError(MarketError):
    """The chosen algorithm does not handle this market's features."""


class AgentId(NamedTuple):
    """Identifies one agent as (side, index within side)."""

    side: int
    index: int


@dataclass(frozen=True)
class Violation:
    """One broken invariant, naming the rule and the agents involved."""

    rule: str
    agents: tuple[AgentId, ...]
    message: str

    def __str__(self) -> str:
        return f"[{self.rule}] {self.message}"


class PreferenceList:
    """An agent's ranking of one adjacent side as ordered tie-groups.

    Anyone not listed is unacceptable; the owner itself never appears.
    A strict list has singleton tie-groups only.
    """

    __slots__ = ("owner", "ranked", "_rank", "acceptable")

    def __init__(self, owner: AgentId, ranked: Iterable[Iterable[AgentId]]):
        groups = tuple(frozenset(g) for g in ranked)
        rank: dict[AgentId, int] = {}
        for i, group in enumerate(groups):
            if not group:
                raise MarketError(f"empty tie-group in preference list of {owner}")
            for agent in group:
                if agent == owner:
                    raise MarketError(f"{owner} lists itself in its own preferences")
                if agent in rank:
                    raise MarketError(f"{agent} appears twice in preferences of {owner}")
                rank[agent] = i
        self.owner = owner
        self.ranked = groups
        self._rank = rank
        self.acceptable = frozenset(rank)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PreferenceList)
            and self.owner == other.owner
            and self.ranked == other.ranked
        )

    def __hash__(self) -> int:
        return hash((self.owner, self.ranked))

    def __repr__(self) -> str:
        return f"PreferenceList({self.owner}, {[sorted(g) for g in self.ranked]})"

    @property
    def is_strict(self) -> bool:
        return all(len(g) == 1 for g in self.ranked)

    def rank_key(self, agent: AgentId) -> float:
        """Position of ``agent`` in the owner's pre-order, lower = better.

        The owner ranks right below every listed agent and above every
        unlisted one.
        """
        if agent == self.owner:
            return len(self.ranked)
        r = self._rank.get(agent)
        return r if r is not None else len(self.ranked) + 1

    def prefers(self, a: AgentId, b: AgentId) -> bool:
        """Strict preference of the owner: a > b."""
        return self.rank_key(a) < self.rank_key(b)

    def accepts(self, agent: AgentId) -> bool:
        return agent in self.acceptable

    def strict_order(self) -> tuple[AgentId, ...]:
        """Flatten to a strict order; raises TiesError on tie-groups."""
        if not self.is_strict:
            raise TiesError(
                f"preferences of {self.owner} contain ties; strictify them first"
            )
        return tuple(next(iter(g)) for g in self.ranked)


class AgentPrefs(NamedTuple):
    """One agent's directional lists: toward side-1 (left) and side+1 (right)."""

    left: PreferenceList | None
    right: PreferenceList | None


def _default_names(sides: Sequence[frozenset[AgentId]]) -> dict[AgentId, str]:
    if len(sides) == 2:
        prefixes = ["m", "w"]
    elif len(sides) == 3:
        prefixes = ["a", "s", "c"]
    else:
        prefixes = [f"p{k}_" for k in range(len(sides))]
    return {
        agent: f"{prefixes[agent.side]}{agent.index}"
        for side in sides
        for agent in side
    }


@dataclass(frozen=True)
class TwoSidedMarket:
    """A two-sided market: men (side 0), women (side 1), directional lists.

    ``prefs[p]`` ranks the opposite side.  ``quotas`` defaults to one per
    agent; ``pair_caps`` only matters under the per-pair-cap policy and
    limits how often the same pair may match (default 1).
    """

    men: frozenset[AgentId]
    women: frozenset[AgentId]
    prefs: Mapping[AgentId, PreferenceList]
    quotas: Mapping[AgentId, int] = field(default_factory=dict)
    pair_policy: str = AT_MOST_ONCE
    pair_caps: Mapping[tuple[AgentId, AgentId], int] = field(default_factory=dict)
    names: Mapping[AgentId, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.pair_policy not in PAIR_POLICIES:
            raise MarketError(f"unknown pair policy {self.pair_policy!r}")
        if not self.names:
            object.__setattr__(self, "names", _default_names([self.men, self.women]))

    @property
    def n_sides(self) -> int:
        return 2

    @property
    def sides(self) -> tuple[frozenset[AgentId], ...]:
        return (self.men, self.women)

    @cached_property
    def agents(self) -> frozenset[AgentId]:
        return self.men | self.women

    def quota(self, agent: AgentId) -> int:
        return self.quotas.get(agent, 1)

    def pair_cap(self, man: AgentId, woman: AgentId) -> int:
        if self.pair_policy == AT_MOST_ONCE:
            return 1
        return self.pair_caps.get((man, woman), 1)

    def pref(self, agent: AgentId) -> PreferenceList:
        p = self.prefs.get(agent)
        return p if p is not None else PreferenceList(agent, ())

    def is_strict(self) -> bool:
        return all(self.pref(a).is_strict for a in self.agents)

    def mutually_acceptable(self, man: AgentId, woman: AgentId) -> bool:
        return self.pref(man).accepts(woman) and self.pref(woman).accepts(man)

    def name(self, agent: AgentId) -> str:
        return self.names.get(agent, f"({agent.side},{agent.index})")


@dataclass(frozen=True)
class MultiSidedMarket:
    """An n-sided market (n >= 2) of adjacent two-sided markets.

    Each agent on side k ranks side k-1 (``left``) and side k+1
    (``right``) separately and is indifferent to everyone else.  ``compat``
    lists the advisor/co-advisor pairs allowed to share a matched triple
    (n = 3 only); absence means every pair is compatible.
    """

    sides: tuple[frozenset[AgentId], ...]
    prefs: Mapping[AgentId, AgentPrefs]
    quotas: Mapping[AgentId, int] = field(default_factory=dict)
    compat: frozenset[tuple[AgentId, AgentId]] | None = None
    pair_policy: str = AT_MOST_ONCE
    names: Mapping[AgentId, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.sides) < 2:
            raise MarketError("a market needs at least two sides")
        if self.pair_policy not in PAIR_POLICIES:
            raise MarketError(f"unknown pair policy {self.pair_policy!r}")
        if self.compat is not None and len(self.sides) != 3:
            raise MarketError("compat sets are only meaningful for three sides")
        if not self.names:
            object.__setattr__(self, "names", _default_names(self.sides))

    @property
    def n_sides(self) -> int:
        return len(self.sides)

    @cached_property
    def agents(self) -> frozenset[AgentId]:
        out: set[AgentId] = set()
        for side in self.sides:
            out |= side
        return frozenset(out)

    def quota(self, agent: AgentId) -> int:
        return self.quotas.get(agent, 1)

    def pref(self, agent: AgentId, direction: str) -> PreferenceList:
        pair = self.prefs.get(agent)
        p = getattr(pair, direction) if pair is not None else None
        return p if p is not None else PreferenceList(agent, ())

    def pref_toward(self, agent: AgentId, target_side: int) -> PreferenceList:
        if target_side == agent.side - 1:
            return self.pref(agent, "left")
        if target_side == agent.side + 1:
            return self.pref(agent, "right")
        raise MarketError(f"side {agent.side} has no preferences over side {target_side}")

    def is_strict(self) -> bool:
        for agent in self.agents:
            pair = self.prefs.get(agent)
            if pair is None:
                continue
            for p in pair:
                if p is not None and not p.is_strict:
                    return False
        return True

    def compatible(self, advisor: AgentId, coadvisor: AgentId) -> bool:
        return self.compat is None or (advisor, coadvisor) in self.compat

    def name(self, agent: AgentId) -> str:
        return self.names.get(agent, f"({agent.side},{agent.index})")

    def submarket(
        self,
        k: int,
        left: Iterable[AgentId] | None = None,
        right: Iterable[AgentId] | None = None,
        quotas: Mapping[AgentId, int] | None = None,
    ) -> TwoSidedMarket:
        """The two-sided market between sides k and k+1, optionally
        restricted to the given participants and with overridden quotas."""
        men = frozenset(left) if left is not None else self.sides[k]
        women = frozenset(right) if right is not None else self.sides[k + 1]
        if not men <= self.sides[k] or not women <= self.sides[k + 1]:
            raise MarketError("submarket participants must belong to their sides")
        prefs: dict[AgentId, PreferenceList] = {}
        for m in men:
            prefs[m] = _prune(self.pref(m, "right"), women)
        for w in women:
            prefs[w] = _prune(self.pref(w, "left"), men)
        q = quotas if quotas is not None else self.quotas
        quota_map = {a: q.get(a, self.quota(a)) for a in men | women}
        return TwoSidedMarket(
            men=men,
            women=women,
            prefs=prefs,
            quotas=quota_map,
            pair_policy=self.pair_policy,
            names=self.names,
        )

    def two_sided(self) -> TwoSidedMarket:
        """View an n = 2 market as a TwoSidedMarket."""
        if self.n_sides != 2:
            raise MarketError("only two-sided markets can be viewed as TwoSidedMarket")
        return self.submarket(0)


Market = TwoSidedMarket | MultiSidedMarket


def _prune(pref: PreferenceList, keep: frozenset[AgentId]) -> PreferenceList:
    groups = []
    for g in pref.ranked:
        kept = g & keep
        if kept:
            groups.append(kept)
    return PreferenceList(pref.owner, groups)


class Matching:
    """A set of complete n-tuples of agents, one slot per side.

    Self-matches are represented by absence: an agent missing from every
    tuple is single.  Tuples are kept canonically sorted so equal matchings
    compare and hash equal.  Duplicate tuples are representable (a pair
    matched more than once under the per-pair-cap policy) but rejected by
    validation everywhere else.
    """

    __slots__ = ("n_sides", "tuples", "__dict__")

    def __init__(self, n_sides: int, tuples: Iterable[Sequence[AgentId]] = ()):
        canon = []
        for t in tuples:
            t = tuple(t)
            if len(t) != n_sides:
                raise MarketError(f"tuple {t} does not span {n_sides} sides")
            for k, agent in enumerate(t):
                if agent.side != k:
                    raise MarketError(f"tuple {t} has {agent} in slot {k}")
            canon.append(t)
        self.n_sides = n_sides
        self.tuples = tuple(sorted(canon))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Matching)
            and self.n_sides == other.n_sides
            and self.tuples == other.tuples
        )

    def __hash__(self) -> int:
        return hash((self.n_sides, self.tuples))

    def __len__(self) -> int:
        return len(self.tuples)

    def __iter__(self):
        return iter(self.tuples)

    def __contains__(self, t) -> bool:
        return tuple(t) in set(self.tuples)

    def __repr__(self) -> str:
        return f"Matching({self.n_sides}, {list(self.tuples)})"

    @cached_property
    def _index(self) -> dict[AgentId, tuple[tuple[AgentId, ...], ...]]:
        idx: dict[AgentId, list] = {}
        for t in self.tuples:
            for agent in t:
                idx.setdefault(agent, []).append(t)
        return {a: tuple(ts) for a, ts in idx.items()}

    def tuples_of(self, agent: AgentId) -> tuple[tuple[AgentId, ...], ...]:
        return self._index.get(agent, ())

    def match_of(self, agent: AgentId) -> tuple[tuple[AgentId, ...], ...]:
        """Partner tuples of ``agent`` (tuples with the agent's own slot
        dropped); empty means single."""
        out = []
        for t in self.tuples_of(agent):
            out.append(tuple(a for k, a in enumerate(t) if k != agent.side))
        return tuple(out)

    def partners(self, agent: AgentId, side: int) -> tuple[AgentId, ...]:
        """The agent's partners on one side, one entry per matched tuple."""
        return tuple(t[side] for t in self.tuples_of(agent))

    def count(self, agent: AgentId) -> int:
        return len(self.tuples_of(agent))

    def is_matched(self, agent: AgentId) -> bool:
        return agent in self._index


def count_matches(matching: Matching, agent: AgentId, market: Market | None = None) -> int:
    """Times the agent appears in the matching, self-matches excluded."""
    if market is not None and agent not in market.agents:
        raise MarketError(f"{agent} is not part of the market")
    return matching.count(agent)


def matched_set(matching: Matching) -> frozenset[AgentId]:
    """All agents with at least one non-self match."""
    return frozenset(a for t in matching for a in t)


def validate_market(market: Market) -> list[Violation]:
    """Check the structural invariants; an empty list means all hold."""
    out: list[Violation] = []
    sides = market.sides if isinstance(market, MultiSidedMarket) else (market.men, market.women)
    seen: set[AgentId] = set()
    for k, side in enumerate(sides):
        for agent in side:
            if agent.side != k:
                out.append(Violation("side-index", (agent,),
                                     f"{market.name(agent)} stored on side {k} but labeled side {agent.side}"))
            if agent.index < 0:
                out.append(Violation("agent-index", (agent,),
                                     f"{market.name(agent)} has a negative index"))
            if agent in seen:
                out.append(Violation("agent-unique", (agent,),
                                     f"{market.name(agent)} appears on more than one side"))
            seen.add(agent)

    def check_pref(owner: AgentId, pref: PreferenceList, target_side: int):
        target = sides[target_side] if 0 <= target_side < len(sides) else frozenset()
        for agent in pref.acceptable:
            if agent.side != target_side:
                out.append(Violation("pref-side", (owner, agent),
                                     f"{market.name(owner)} ranks {market.name(agent)} from a non-adjacent side"))
            elif agent not in target:
                out.append(Violation("pref-unknown", (owner, agent),
                                     f"{market.name(owner)} ranks {market.name(agent)} who is absent from the market"))

    if isinstance(market, MultiSidedMarket):
        for owner in market.prefs:
            if owner not in market.agents:
                out.append(Violation("pref-owner", (owner,),
                                     f"preferences given for unknown agent {market.name(owner)}"))
                continue
            pair = market.prefs[owner]
            if pair.left is not None:
                check_pref(owner, pair.left, owner.side - 1)
            if pair.right is not None:
                check_pref(owner, pair.right, owner.side + 1)
        if market.compat is not None:
            for a, c in market.compat:
                if a not in sides[0] or c not in sides[2]:
                    out.append(Violation("compat-unknown", (a, c),
                                         "compat pair references agents outside sides 0 and 2"))
    else:
        for owner in market.prefs:
            if owner not in market.agents:
                out.append(Violation("pref-owner", (owner,),
                                     f"preferences given for unknown agent {market.name(owner)}"))
                continue
            check_pref(owner, market.prefs[owner], 1 - owner.side)

    for agent, q in market.quotas.items():
        if agent not in market.agents:
            out.append(Violation("quota-unknown", (agent,),
                                 f"quota given for unknown agent {market.name(agent)}"))
        if q < 1:
            out.append(Violation("quota-positive", (agent,),
                                 f"{market.name(agent)} has quota {q} < 1"))
    return out


def validate_matching(market: Market, matching: Matching) -> list[Violation]:
    """Check a matching's structural invariants against its market."""
    out: list[Violation] = []
    n = market.n_sides
    if matching.n_sides != n:
        return [Violation("arity", (), f"matching spans {matching.n_sides} sides, market has {n}")]
    sides = market.sides
    for t in matching:
        for agent in t:
            if agent not in sides[agent.side]:
                out.append(Violation("tuple-unknown", (agent,),
                                     f"matched agent {market.name(agent)} is absent from the market"))
    for agent in matched_set(matching):
        c = matching.count(agent)
        if c > market.quota(agent):
            out.append(Violation("quota", (agent,),
                                 f"{market.name(agent)} matched {c} times, quota {market.quota(agent)}"))

    pair_counts: dict[tuple[AgentId, AgentId], int] = {}
    for t in matching:
        for k in range(n - 1):
            pair = (t[k], t[k + 1])
            pair_counts[pair] = pair_counts.get(pair, 0) + 1
    allow_dup_tuples = n == 2 and market.pair_policy == PER_PAIR_CAP
    seen_tuples: set = set()
    for t in matching:
        if t in seen_tuples and not allow_dup_tuples:
            out.append(Violation("tuple-repeat", t, f"tuple {tuple(market.name(a) for a in t)} repeats"))
        seen_tuples.add(t)
    for (x, y), c in pair_counts.items():
        if market.pair_policy == AT_MOST_ONCE:
            if c > 1:
                out.append(Violation("pair-repeat", (x, y),
                                     f"pair ({market.name(x)}, {market.name(y)}) matched {c} times"))
        elif n == 2:
            cap = market.pair_cap(x, y)
            if c > cap:
                out.append(Violation("pair-cap", (x, y),
                                     f"pair ({market.name(x)}, {market.name(y)}) matched {c} times, cap {cap}"))

    if isinstance(market, MultiSidedMarket) and market.compat is not None:
        for t in matching:
            if not market.compatible(t[0], t[2]):
                out.append(Violation("compat", (t[0], t[2]),
                                     f"matched triple pairs incompatible {market.name(t[0])} and {market.name(t[2])}"))
    return out


def restrict(
    market: Market,
    subsets: Sequence[Iterable[AgentId] | None],
    matching: Matching | None = None,
) -> tuple[Market, Matching | None]:
    """Restrict a market (and optionally a matching) to subsets per side.

    Preference lists are pruned to the kept agents; matches touching a
    removed agent become self-matches (the whole tuple is dropped).
    """
    sides = market.sides
    if len(subsets) != len(sides):
        raise MarketError(f"expected {len(sides)} subsets, got {len(subsets)}")
    kept: list[frozenset[AgentId]] = []
    for k, sub in enumerate(subsets):
        if sub is None:
            kept.append(sides[k])
            continue
        sub = frozenset(sub)
        unknown = sub - sides[k]
        if unknown:
            raise MarketError(f"subset for side {k} contains unknown agents {sorted(unknown)}")
        kept.append(sub)
    keep_all = frozenset().union(*kept) if kept else frozenset()

    if isinstance(market, MultiSidedMarket):
        prefs = {}
        for agent in keep_all:
            pair = market.prefs.get(agent)
            if pair is None:
                continue
            left = _prune(pair.left, keep_all) if pair.left is not None else None
            right = _prune(pair.right, keep_all) if pair.right is not None else None
            prefs[agent] = AgentPrefs(left, right)
        compat = market.compat
        if compat is not None:
            compat = frozenset((a, c) for a, c in compat if a in keep_all and c in keep_all)
        restricted: Market = replace(
            market,
            sides=tuple(kept),
            prefs=prefs,
            quotas={a: q for a, q in market.quotas.items() if a in keep_all},
            compat=compat,
            names={a: n for a, n in market.names.items() if a in keep_all},
        )
    else:
        prefs = {
            agent: _prune(market.prefs[agent], keep_all)
            for agent in keep_all
            if agent in market.prefs
        }
        restricted = replace(
            market,
            men=kept[0],
            women=kept[1],
            prefs=prefs,
            quotas={a: q for a, q in market.quotas.items() if a in keep_all},
            pair_caps={p: c for p, c in market.pair_caps.items()
                       if p[0] in keep_all and p[1] in keep_all},
            names={a: n for a, n in market.names.items() if a in keep_all},
        )

    if matching is None:
        return restricted, None
    survived = [t for t in matching if all(a in keep_all for a in t)]
    return restricted, Matching(matching.n_sides, survived)
