"""JSON interchange for markets and matchings.

Market files carry ``sides`` (arrays of unique agent names), ``prefs``
(per agent, per direction, an array of tie-groups; a bare name is accepted
as a singleton group), ``quotas`` (name -> int, default 1), ``compat``
(pairs of [advisor, coadvisor] names that ARE compatible; omit for "all
compatible"), ``pair_policy`` and, for two-sided markets under the
per-pair-cap policy, ``pair_caps`` ([man, woman, cap] triples).  Unknown
fields are rejected.  A matching file is an array of n-tuples of names.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

from .market import (
    AT_MOST_ONCE,
    AgentId,
    AgentPrefs,
    MarketError,
    Matching,
    MultiSidedMarket,
    PreferenceList,
    TwoSidedMarket,
)

_MARKET_FIELDS = {"sides", "prefs", "quotas", "compat", "pair_policy", "pair_caps"}


def market_from_dict(data: Mapping[str, Any]) -> TwoSidedMarket | MultiSidedMarket:
    unknown = set(data) - _MARKET_FIELDS
    if unknown:
        raise MarketError(f"unknown market fields: {sorted(unknown)}")
    if "sides" not in data:
        raise MarketError("market file lacks 'sides'")
    raw_sides = data["sides"]
    if not isinstance(raw_sides, list) or len(raw_sides) < 2:
        raise MarketError("'sides' must list at least two arrays of names")

    by_name: dict[str, AgentId] = {}
    sides: list[frozenset[AgentId]] = []
    names: dict[AgentId, str] = {}
    for k, side_names in enumerate(raw_sides):
        agents = []
        for i, name in enumerate(side_names):
            if not isinstance(name, str):
                raise MarketError(f"agent names must be strings, got {name!r}")
            if name in by_name:
                raise MarketError(f"duplicate agent name {name!r}")
            agent = AgentId(k, i)
            by_name[name] = agent
            names[agent] = name
            agents.append(agent)
        sides.append(frozenset(agents))

    def resolve(name: str) -> AgentId:
        try:
            return by_name[name]
        except KeyError:
            raise MarketError(f"unknown agent name {name!r}") from None

    def parse_groups(owner: AgentId, raw) -> PreferenceList:
        groups = []
        for entry in raw:
            if isinstance(entry, str):
                groups.append((resolve(entry),))
            else:
                groups.append(tuple(resolve(n) for n in entry))
        return PreferenceList(owner, groups)

    n = len(sides)
    raw_prefs = data.get("prefs", {})
    prefs: dict[AgentId, AgentPrefs] = {}
    for name, directions in raw_prefs.items():
        owner = resolve(name)
        if not isinstance(directions, Mapping):
            raise MarketError(f"prefs of {name!r} must map directions to tie-group arrays")
        bad = set(directions) - {"left", "right"}
        if bad:
            raise MarketError(f"prefs of {name!r} use unknown directions {sorted(bad)}")
        left = right = None
        if "left" in directions:
            if owner.side == 0:
                raise MarketError(f"{name!r} is on the first side and has no left market")
            left = parse_groups(owner, directions["left"])
        if "right" in directions:
            if owner.side == n - 1:
                raise MarketError(f"{name!r} is on the last side and has no right market")
            right = parse_groups(owner, directions["right"])
        prefs[owner] = AgentPrefs(left, right)

    quotas = {resolve(name): int(q) for name, q in data.get("quotas", {}).items()}
    pair_policy = data.get("pair_policy", AT_MOST_ONCE)

    if n == 2:
        if "compat" in data and data["compat"] is not None:
            raise MarketError("compat sets are only meaningful for three sides")
        caps = {}
        for m_name, w_name, cap in data.get("pair_caps", []):
            caps[(resolve(m_name), resolve(w_name))] = int(cap)
        two_prefs = {}
        for agent, pair in prefs.items():
            p = pair.right if agent.side == 0 else pair.left
            if p is not None:
                two_prefs[agent] = p
        return TwoSidedMarket(
            men=sides[0],
            women=sides[1],
            prefs=two_prefs,
            quotas=quotas,
            pair_policy=pair_policy,
            pair_caps=caps,
            names=names,
        )

    if "pair_caps" in data:
        raise MarketError("pair_caps are only supported for two-sided markets")
    compat = None
    if data.get("compat") is not None:
        compat = frozenset((resolve(a), resolve(c)) for a, c in data["compat"])
    return MultiSidedMarket(
        sides=tuple(sides),
        prefs=prefs,
        quotas=quotas,
        compat=compat,
        pair_policy=pair_policy,
        names=names,
    )


def market_to_dict(market: TwoSidedMarket | MultiSidedMarket) -> dict[str, Any]:
    sides = market.sides
    side_names = [
        [market.name(a) for a in sorted(side)]
        for side in sides
    ]

    def groups_out(pref: PreferenceList) -> list[list[str]]:
        return [sorted(market.name(a) for a in g) for g in pref.ranked]

    prefs: dict[str, dict[str, list[list[str]]]] = {}
    if isinstance(market, MultiSidedMarket):
        for agent in sorted(market.prefs):
            pair = market.prefs[agent]
            entry = {}
            if pair.left is not None:
                entry["left"] = groups_out(pair.left)
            if pair.right is not None:
                entry["right"] = groups_out(pair.right)
            if entry:
                prefs[market.name(agent)] = entry
    else:
        for agent in sorted(market.prefs):
            direction = "right" if agent.side == 0 else "left"
            prefs[market.name(agent)] = {direction: groups_out(market.prefs[agent])}

    out: dict[str, Any] = {
        "sides": side_names,
        "prefs": prefs,
        "quotas": {market.name(a): q for a, q in sorted(market.quotas.items()) if q != 1},
        "pair_policy": market.pair_policy,
    }
    if isinstance(market, MultiSidedMarket):
        if market.compat is not None:
            out["compat"] = sorted(
                [market.name(a), market.name(c)] for a, c in market.compat
            )
    elif market.pair_caps:
        out["pair_caps"] = sorted(
            [market.name(m), market.name(w), cap]
            for (m, w), cap in market.pair_caps.items()
        )
    return out


def matching_from_list(
    data: list[list[str]], market: TwoSidedMarket | MultiSidedMarket
) -> Matching:
    reverse = {name: agent for agent, name in market.names.items()}
    tuples = []
    for entry in data:
        agents = []
        for name in entry:
            if name not in reverse:
                raise MarketError(f"unknown agent name {name!r} in matching")
            agents.append(reverse[name])
        tuples.append(tuple(agents))
    return Matching(market.n_sides, tuples)


def matching_to_list(
    matching: Matching, market: TwoSidedMarket | MultiSidedMarket
) -> list[list[str]]:
    return [[market.name(a) for a in t] for t in matching]


def load_market(path: str | Path) -> TwoSidedMarket | MultiSidedMarket:
    with open(path, encoding="utf-8") as f:
        return market_from_dict(json.load(f))


def dump_market(market: TwoSidedMarket | MultiSidedMarket, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(market_to_dict(market), f, indent=2, sort_keys=True)
        f.write("\n")


def load_matching(path: str | Path, market: TwoSidedMarket | MultiSidedMarket) -> Matching:
    with open(path, encoding="utf-8") as f:
        return matching_from_list(json.load(f), market)


def dump_matching(
    matching: Matching, market: TwoSidedMarket | MultiSidedMarket, path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(matching_to_list(matching, market), f, indent=2)
        f.write("\n")
