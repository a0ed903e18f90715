"""Stake-weighted choice of the active training problem and grammar.

Any holder with a positive balance may propose or support. Once open
proposals of one kind are backed by at least ``theta`` of the total supply
and the incumbent has been active for ``min_active_ticks``, one proposal is
drawn with probability proportional to its supporters' current balances.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction

KINDS = ("problem", "grammar")


class GovernanceError(Exception):
    pass


class Rejected(GovernanceError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class UnknownProposal(GovernanceError):
    pass


class ClosedProposal(GovernanceError):
    pass


@dataclass
class Proposal:
    proposal_id: str
    kind: str
    ref: str  # dataset name / path prefix, or grammar file
    proposer: str
    supporters: set[str] = field(default_factory=set)
    created_at: int = 0
    metric: str = "accuracy"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        self.supporters.add(self.proposer)


@dataclass
class SwitchEvent:
    tick: int
    kind: str
    proposal_id: str


@dataclass
class GovernanceState:
    active: dict[str, str]
    activated_at: dict[str, int] = field(default_factory=dict)
    open_proposals: dict[str, Proposal] = field(default_factory=dict)
    accepted: dict[str, Proposal] = field(default_factory=dict)
    theta: float = 0.10
    min_active_ticks: int = 50
    history: list[SwitchEvent] = field(default_factory=list)

    def __post_init__(self):
        if not 0 < self.theta <= 1:
            raise ValueError("theta must be in (0, 1]")
        for kind in self.active:
            self.activated_at.setdefault(kind, 0)

    @classmethod
    def genesis(cls, problem: Proposal, grammar: Proposal, **kw) -> GovernanceState:
        state = cls(active={"problem": problem.proposal_id, "grammar": grammar.proposal_id}, **kw)
        state.accepted[problem.proposal_id] = problem
        state.accepted[grammar.proposal_id] = grammar
        return state

    @property
    def active_problem(self) -> str:
        return self.active["problem"]

    @property
    def active_grammar(self) -> str:
        return self.active["grammar"]

    def open_of(self, kind: str) -> list[Proposal]:
        return [p for _, p in sorted(self.open_proposals.items()) if p.kind == kind]


def submit_proposal(state: GovernanceState, proposal: Proposal, ledger) -> None:
    if ledger.balance(proposal.proposer) <= 0:
        raise Rejected("zero_balance")
    if proposal.proposal_id in state.open_proposals or proposal.proposal_id in state.accepted:
        raise Rejected("duplicate_id")
    state.open_proposals[proposal.proposal_id] = proposal


def support(state: GovernanceState, proposal_id: str, account: str, ledger) -> None:
    if proposal_id in state.accepted:
        raise ClosedProposal(proposal_id)
    if proposal_id not in state.open_proposals:
        raise UnknownProposal(proposal_id)
    if ledger.balance(account) <= 0:
        raise Rejected("zero_balance")
    state.open_proposals[proposal_id].supporters.add(account)


def weight(proposal: Proposal, ledger) -> int:
    """Summed balances of the supporters, read now (not at support time)."""
    return sum(ledger.balance(a) for a in proposal.supporters)


def selection_probabilities(proposals: list[Proposal], ledger) -> dict[str, Fraction]:
    weights = {p.proposal_id: weight(p, ledger) for p in proposals}
    total = sum(weights.values())
    if total == 0:
        return {pid: Fraction(0) for pid in weights}
    return {pid: Fraction(w, total) for pid, w in weights.items()}


def weighted_draw(proposals: list[Proposal], ledger, rng: random.Random) -> str:
    weights = [(p.proposal_id, weight(p, ledger)) for p in sorted(proposals, key=lambda p: p.proposal_id)]
    total = sum(w for _, w in weights)
    if total <= 0:
        raise ValueError("no proposal carries weight")
    ticket = rng.randrange(total)
    for pid, w in weights:
        if ticket < w:
            return pid
        ticket -= w
    raise AssertionError("unreachable")


def maybe_switch(state: GovernanceState, ledger, now: int, rng_seed: int, kind: str = "problem") -> str | None:
    """Return the newly activated proposal id, or ``None`` if nothing changes."""
    if now - state.activated_at.get(kind, 0) < state.min_active_ticks:
        return None
    candidates = state.open_of(kind)
    backing = sum(weight(p, ledger) for p in candidates)
    if backing == 0 or backing < state.theta * ledger.total_supply:
        return None
    chosen = weighted_draw(candidates, ledger, random.Random(rng_seed))
    state.accepted[chosen] = state.open_proposals.pop(chosen)
    state.active[kind] = chosen
    state.activated_at[kind] = now
    state.history.append(SwitchEvent(now, kind, chosen))
    return chosen
