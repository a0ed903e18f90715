"""Proof-of-useful-work: build, score, validate and pick candidate blocks."""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from .chain import Block, Chain, Mempool, block_hash, select_transactions
from .datasets import Problem
from .grammar import (
    DerivationLimitExceeded,
    DerivationLimits,
    Grammar,
    InfeasibleArchitecture,
    MalformedSentence,
    ResourceLimits,
    check_feasibility,
    derive,
    parse_architecture,
)
from .hashing import hash_to_int
from .model import (
    MalformedBlob,
    NumericalDivergence,
    TrainConfig,
    deserialize,
    evaluate,
    instantiate,
    model_digest,
    read_header,
    serialize,
    train,
)

NONCE_MODES = ("free_nonce", "tx_combination")


class NoCandidate(Exception):
    """A mining attempt that must not be broadcast."""

    def __init__(self, reason: str, score: float | None = None, detail: str = ""):
        super().__init__(f"{reason}{': ' + detail if detail else ''}")
        self.reason = reason
        self.score = score


@dataclass
class ThresholdSchedule:
    policy: str = "decay_only"  # "decay_only" | "bump_then_decay"
    T0: float = 0.9
    decay_per_tick: float = 0.005
    bump: float = 0.0
    floor: float = 0.5
    base: float | None = None

    def __post_init__(self):
        if self.policy not in ("decay_only", "bump_then_decay"):
            raise ValueError(f"unknown threshold policy {self.policy!r}")
        if not 0.0 <= self.floor <= self.T0 <= 1.0:
            raise ValueError("need 0 <= floor <= T0 <= 1")
        if self.decay_per_tick <= 0 or self.bump < 0:
            raise ValueError("decay must be positive and bump non-negative")
        if self.base is None:
            self.base = self.T0

    def record_block(self) -> None:
        if self.policy == "bump_then_decay":
            self.base = min(1.0, self.base + self.bump)


def current_threshold(s: ThresholdSchedule, now: int, last_block_at: int) -> float:
    if now < last_block_at:
        raise ValueError("now precedes the last block")
    start = s.T0 if s.policy == "decay_only" else s.base
    return max(s.floor, start - s.decay_per_tick * (now - last_block_at))


@dataclass
class MinerConfig:
    tx_policy: str = "fee_desc"
    train_config: TrainConfig = field(default_factory=TrainConfig)
    max_arch_retries: int = 256
    nonce_mode: str = "free_nonce"
    limits: ResourceLimits = field(default_factory=lambda: ResourceLimits(max_parameters=20_000, max_sentence_tokens=256))
    derivation_limits: DerivationLimits = field(default_factory=DerivationLimits)

    def __post_init__(self):
        if self.max_arch_retries < 1:
            raise ValueError("max_arch_retries must be >= 1")
        if self.nonce_mode not in NONCE_MODES:
            raise ValueError(f"unknown nonce mode {self.nonce_mode!r}")


@dataclass
class CandidateBlock:
    block: Block
    blob: bytes
    derivation_sentence: str
    submitted_at: int
    claimed_hash: bytes
    threshold: float = 0.0  # bar in force when it was submitted
    arch_retries: int = 0

    @property
    def miner(self) -> str:
        return self.block.miner


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    verdict: str  # "accept" | "reject"
    reason: str | None
    recomputed_hash: bytes | None
    recomputed_sentence: str | None
    recomputed_score: float | None
    checks: list[Check]

    @property
    def accepted(self) -> bool:
        return self.verdict == "accept"

    def first_failure(self) -> str | None:
        return next((c.name for c in self.checks if not c.passed), None)


# ---------------------------------------------------------------- mining


def _applicable(chain: Chain, txs) -> list:
    """Greedy prefix filter: drop transactions the ledger could not settle."""
    kept = []
    for tx in txs:
        if tx.tx_id not in chain.included and chain.ledger.can_apply(kept + [tx]):
            kept.append(tx)
    return kept


def derive_spec(grammar: Grammar, digest: bytes, width: int, num_classes: int,
                limits: ResourceLimits, derivation_limits: DerivationLimits):
    """Hash -> sentence -> architecture, raising when unusable for this miner."""
    sentence, _ = derive(grammar, hash_to_int(digest), derivation_limits)
    spec = parse_architecture(sentence, grammar, limits.max_sentence_tokens)
    check_feasibility(spec, width, limits, num_classes).raise_if_infeasible()
    return sentence, spec


def mine_attempt(
    miner: str,
    chain: Chain,
    mempool: Mempool,
    grammar: Grammar,
    problem: Problem,
    schedule: ThresholdSchedule,
    cfg: MinerConfig,
    now: int,
    seed: int,
    last_block_at: int | None = None,
) -> CandidateBlock:
    """One full attempt: choose transactions and nonce, derive, train, score.

    Raises :class:`NoCandidate` when nothing should be broadcast.
    """
    rng = random.Random(seed)
    ds = problem.dataset
    n_max = chain.params.max_transactions
    prev = chain.tip_hash
    base = _applicable(chain, select_transactions(mempool, cfg.tx_policy, n_max, seed=rng.getrandbits(64)))
    pool = sorted(mempool, key=lambda tx: tx.tx_id)

    found = None
    tried: set[bytes] = set()
    for attempt in range(cfg.max_arch_retries):
        if cfg.nonce_mode == "free_nonce":
            txs, nonce = base, rng.getrandbits(64)
        else:
            nonce = 0
            if attempt == 0:
                txs = base
            elif not pool:
                raise NoCandidate("empty_mempool_when_required")
            else:
                k = rng.randint(1, min(n_max, len(pool)))
                txs = _applicable(chain, rng.sample(pool, k))
        digest = block_hash(prev, txs, nonce)
        if digest in tried:
            continue
        tried.add(digest)
        try:
            sentence, spec = derive_spec(grammar, digest, ds.input_width, ds.num_classes,
                                         cfg.limits, cfg.derivation_limits)
        except (DerivationLimitExceeded, InfeasibleArchitecture, MalformedSentence):
            continue
        found = (list(txs), nonce, digest, sentence, spec, attempt)
        break
    if found is None:
        raise NoCandidate("infeasible_exhausted", detail=f"{cfg.max_arch_retries} architectures rejected")
    txs, nonce, digest, sentence, spec, retries = found

    net = instantiate(spec, ds.input_width, ds.num_classes, rng.getrandbits(64), sentence, cfg.limits)
    tc = replace(cfg.train_config, seed=rng.getrandbits(64))
    try:
        train(net, ds.train_X, ds.train_y, tc)
    except NumericalDivergence as exc:
        raise NoCandidate("divergence", detail=str(exc)) from exc
    score = evaluate(net, ds.valid_X, ds.valid_y, ds.metric)
    if last_block_at is None:
        last_block_at = chain.tip.timestamp
    bar = current_threshold(schedule, now, last_block_at)
    if score < bar:
        raise NoCandidate("below_threshold", score=score, detail=f"{score:.4f} < {bar:.4f}")
    blob = serialize(net)
    block = Block(
        height=chain.height + 1,
        prev_hash=prev,
        transactions=tuple(txs),
        nonce=nonce,
        miner=miner,
        model_digest=model_digest(blob),
        reported_score=score,
        problem_id=problem.problem_id,
        timestamp=now,
    )
    return CandidateBlock(block, blob, sentence, now, digest, bar, retries)


# ---------------------------------------------------------------- validation


def validate_candidate(
    c: CandidateBlock,
    chain: Chain,
    grammar: Grammar,
    problem: Problem,
    threshold_at_submission: float,
    mempool: Mempool | None = None,
    derivation_limits: DerivationLimits = DerivationLimits(),
) -> ValidationReport:
    """Re-check every claim in a candidate without any training."""
    checks: list[Check] = []
    b = c.block
    ds = problem.dataset

    ok = b.prev_hash == chain.tip_hash and b.height == chain.height + 1
    checks.append(Check("prev_hash", ok, "" if ok else "does not build on the current tip"))

    ids = [tx.tx_id for tx in b.transactions]
    problems = []
    if len(ids) > chain.params.max_transactions:
        problems.append("more than N transactions")
    if len(set(ids)) != len(ids):
        problems.append("repeated transaction")
    if any(i in chain.included for i in ids) or (mempool is not None and any(i not in mempool for i in ids)):
        problems.append("transaction not pending")
    if not chain.ledger.can_apply(b.transactions):
        problems.append("sender overspends")
    checks.append(Check("transactions", not problems, "; ".join(problems)))

    digest = block_hash(b.prev_hash, b.transactions, b.nonce)
    ok = digest == c.claimed_hash
    checks.append(Check("block_hash", ok, "" if ok else "claimed hash differs from preimage digest"))

    sentence = None
    try:
        sentence, _ = derive(grammar, hash_to_int(digest), derivation_limits)
        header_sentence = read_header(c.blob)[2]
        ok = sentence == c.derivation_sentence == header_sentence
        checks.append(Check("derivation", ok, "" if ok else "sentence does not follow from the block hash"))
    except (DerivationLimitExceeded, MalformedBlob) as exc:
        checks.append(Check("derivation", False, str(exc)))

    net = None
    try:
        net = deserialize(c.blob, grammar)
        problems = []
        if (net.input_width, net.num_classes) != (ds.input_width, ds.num_classes):
            problems.append("model does not fit the active problem")
        if sentence is None or net.spec != parse_architecture(sentence, grammar):
            problems.append("tensor layout does not match the derived architecture")
        checks.append(Check("architecture", not problems, "; ".join(problems)))
    except (MalformedBlob, MalformedSentence) as exc:
        checks.append(Check("architecture", False, str(exc)))

    ok = model_digest(c.blob) == b.model_digest
    checks.append(Check("model_digest", ok, "" if ok else "blob digest differs from block field"))

    score = None
    if net is None or net.input_width != ds.input_width:
        checks.append(Check("score", False, "no usable model"))
    else:
        score = evaluate(net, ds.valid_X, ds.valid_y, ds.metric)
        problems = []
        if b.problem_id != problem.problem_id:
            problems.append(f"block targets {b.problem_id!r}, active is {problem.problem_id!r}")
        if score < threshold_at_submission:
            problems.append(f"{score} below threshold {threshold_at_submission}")
        if score != b.reported_score:
            problems.append(f"reported {b.reported_score} but recomputed {score}")
        checks.append(Check("score", not problems, "; ".join(problems)))

    failed = next((ch.name for ch in checks if not ch.passed), None)
    return ValidationReport(
        "accept" if failed is None else "reject", failed, digest, sentence, score, checks
    )


# ---------------------------------------------------------------- rounds


def _rank(entry: tuple[CandidateBlock, ValidationReport]):
    c, report = entry
    return (-report.recomputed_score, c.submitted_at, c.claimed_hash)


def resolve_round(entries: list[tuple[CandidateBlock, ValidationReport]]) -> CandidateBlock:
    """Best recomputed score; ties go to the earlier submission, then the smaller hash."""
    valid = [e for e in entries if e[1].accepted]
    if not valid:
        raise ValueError("no valid candidate to resolve")
    return min(valid, key=_rank)[0]


class Round:
    """Collects at most one candidate per miner for the block at one height.

    The confirmation window opens at the first valid submission and the
    round resolves ``window`` ticks later.
    """

    def __init__(self, opened_at: int, window: int):
        self.opened_at = opened_at
        self.window = window
        self.entries: list[tuple[CandidateBlock, ValidationReport]] = []
        self.rejected: list[tuple[CandidateBlock, str]] = []
        self.miners: set[str] = set()
        self.first_valid_at: int | None = None

    @property
    def closes_at(self) -> int | None:
        return None if self.first_valid_at is None else self.first_valid_at + self.window

    def submit(self, c: CandidateBlock, report: ValidationReport) -> bool:
        if c.miner in self.miners:
            self.rejected.append((c, "second submission from miner"))
            return False
        if self.closes_at is not None and c.submitted_at > self.closes_at:
            self.rejected.append((c, "after window close"))
            return False
        self.miners.add(c.miner)
        self.entries.append((c, report))
        if report.accepted and self.first_valid_at is None:
            self.first_valid_at = c.submitted_at
        return True

    def ready(self, now: int) -> bool:
        return self.closes_at is not None and now >= self.closes_at

    def resolve(self) -> CandidateBlock:
        return resolve_round(self.entries)

    def losers(self, winner: CandidateBlock) -> list[CandidateBlock]:
        return [c for c, _ in self.entries if c is not winner]
