"""Deterministic discrete-event simulation of the whole network.

Every tick runs, in order: workload injection, scheduled proposals,
governance checks, miner progress (in miner id order), round resolution,
keeper churn, the storage epoch (tampering, audits, rent, healing), and
finally one metrics row. All randomness comes from per-node streams
derived from the scenario seed, so a run is a pure function of the
scenario file and seed.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import random
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .chain import Chain, ChainError, ChainParams, Mempool, Transaction, append_block, dump_chain
from .datasets import BUNDLED, Problem, load_dataset
from .governance import GovernanceState, GovernanceError, Proposal, maybe_switch, submit_proposal, support
from .grammar import Grammar, GrammarError, ResourceLimits, load_grammar, validate_grammar
from .hashing import stream_seed
from .mining import (
    CandidateBlock,
    MinerConfig,
    NoCandidate,
    Round,
    ThresholdSchedule,
    current_threshold,
    mine_attempt,
    validate_candidate,
)
from .model import TrainConfig
from .storage import (
    ConfigError,
    Keeper,
    ObjectLost,
    StorageDirectory,
    assign_replicas,
    audit_sample,
    on_keeper_departure,
    pay_rent,
    store_dataset,
    tamper_replica,
    write_stores,
)

METRIC_FIELDS = (
    "tick",
    "chain_height",
    "threshold",
    "candidates_submitted",
    "winner_score",
    "mempool_depth",
    "under_replicated",
    "audits_run",
    "audits_failed",
    "active_problem",
    "total_supply",
    "objects_lost",
    "events",
)


# ---------------------------------------------------------------- scenario


@dataclass
class NetworkParams:
    max_transactions: int = 16
    block_reward: int = 50
    window: int = 5
    replication: int = 3
    replication_data: int = 5
    theta: float = 0.10
    min_active_ticks: int = 50
    steps_per_tick: int = 100
    epoch_ticks: int = 10
    audit_rate: float = 0.10
    penalty: int = 5
    rent: int = 1
    churn_interval: int = 0
    max_parameters: int = 20_000
    selection_policy: str = "proportional"


@dataclass
class WorkloadConfig:
    rate: float = 0.5
    fee_min: int = 0
    fee_max: int = 10
    amount_max: int = 20
    senders: tuple[str, ...] = ()


@dataclass
class MinerSpec:
    miner_id: str
    behavior: str  # "honest" | "lazy"
    config: MinerConfig


@dataclass
class KeeperSpec:
    keeper_id: str
    capacity: int
    behavior: str = "reliable"  # "reliable" | "tamper" | "churn"
    rate: float = 0.0
    interval: int = 0


@dataclass
class ScheduledProposal:
    at: int
    proposal: Proposal
    supporters: tuple[str, ...]


@dataclass
class Scenario:
    seed: int
    ticks: int
    network: NetworkParams
    schedule: ThresholdSchedule
    miners: list[MinerSpec]
    keepers: list[KeeperSpec]
    workload: WorkloadConfig
    problems: dict[str, Problem]
    problem_files: dict[str, tuple[Path, Path]]
    grammars: dict[str, Grammar]
    grammar_files: dict[str, Path]
    balances: dict[str, int]
    initial_problem: str
    initial_grammar: str
    proposals: list[ScheduledProposal] = field(default_factory=list)
    source: str = ""


def _resolve(value: str, base: Path, kind: str) -> Path:
    if value.startswith("bundled:"):
        name = value.removeprefix("bundled:")
        return Path(str(resources.files("coinai").joinpath(kind, name)))
    path = Path(value)
    return path if path.is_absolute() else base / path


def _get(section, key: str, conv, default=None, where: str = ""):
    raw = section.get(key)
    if raw is None:
        if default is None:
            raise ConfigError(f"{where}.{key}: required")
        return default
    try:
        return conv(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}.{key}: {exc}") from None


def _names(raw: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in raw.split(",") if s.strip())


def _positive(name: str, value, minimum=1):
    if value < minimum:
        raise ConfigError(f"{name}: must be >= {minimum}")
    return value


def parse_scenario(text: str, base: Path = Path(".")) -> Scenario:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"syntax: {exc}") from None

    if not cp.has_section("scenario") or "seed" not in cp["scenario"]:
        raise ConfigError("scenario.seed: required")
    sc = cp["scenario"]
    seed = _get(sc, "seed", int, where="scenario")
    if not 0 <= seed < 2**64:
        raise ConfigError("scenario.seed: must be a 64-bit unsigned integer")
    ticks = _positive("scenario.ticks", _get(sc, "ticks", int, where="scenario"), 0)

    net = NetworkParams()
    if cp.has_section("network"):
        s = cp["network"]
        for key in s:
            if not hasattr(net, key):
                raise ConfigError(f"network.{key}: unknown key")
            current = getattr(net, key)
            setattr(net, key, _get(s, key, type(current), where="network"))
    _positive("network.replication", net.replication)
    if net.replication_data < net.replication:
        raise ConfigError(f"network.replication_data: must be >= replication ({net.replication})")
    if not 0 < net.theta <= 1:
        raise ConfigError("network.theta: must be in (0, 1]")
    for key in ("max_transactions", "window", "steps_per_tick", "epoch_ticks", "max_parameters"):
        _positive(f"network.{key}", getattr(net, key))
    if net.selection_policy != "proportional":
        raise ConfigError("network.selection_policy: only 'proportional' is implemented")

    t = cp["threshold"] if cp.has_section("threshold") else {}
    try:
        schedule = ThresholdSchedule(
            policy=_get(t, "policy", str, "decay_only", "threshold"),
            T0=_get(t, "T0", float, 0.9, "threshold"),
            decay_per_tick=_get(t, "decay", float, 0.005, "threshold"),
            bump=_get(t, "bump", float, 0.0, "threshold"),
            floor=_get(t, "floor", float, 0.5, "threshold"),
        )
    except ValueError as exc:
        raise ConfigError(f"threshold: {exc}") from None

    balances = {k: _get(cp["balances"], k, int, where="balances") for k in cp["balances"]} if cp.has_section("balances") else {}
    if any(v < 0 for v in balances.values()):
        raise ConfigError("balances: must be non-negative")

    problems, problem_files = {}, {}
    grammars, grammar_files = {}, {}
    miners, keepers, proposals = [], [], []
    for name in cp.sections():
        s = cp[name]
        if name.startswith("problem."):
            pid = name.removeprefix("problem.")
            if "dataset" in s:
                ref = s["dataset"].strip()
                short = ref.removeprefix("bundled:")
                if ref.startswith("bundled:") and short not in BUNDLED:
                    raise ConfigError(f"{name}.dataset: no bundled dataset {short!r}")
                train = _resolve(f"bundled:{short}.train.csv" if ref.startswith("bundled:") else ref + ".train.csv", base, "datasets")
                valid = _resolve(f"bundled:{short}.valid.csv" if ref.startswith("bundled:") else ref + ".valid.csv", base, "datasets")
            else:
                train = _resolve(_get(s, "train", str, where=name), base, "datasets")
                valid = _resolve(_get(s, "valid", str, where=name), base, "datasets")
            for p in (train, valid):
                if not p.is_file():
                    raise ConfigError(f"{name}: missing file {p}")
            metric = _get(s, "metric", str, "accuracy", name)
            if metric != "accuracy":
                raise ConfigError(f"{name}.metric: only 'accuracy' is supported")
            try:
                ds = load_dataset(train, valid, name=pid, metric=metric)
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from None
            problems[pid] = Problem(pid, ds)
            problem_files[pid] = (train, valid)
        elif name.startswith("grammar."):
            gid = name.removeprefix("grammar.")
            path = _resolve(_get(s, "file", str, where=name), base, "grammars")
            if not path.is_file():
                raise ConfigError(f"{name}.file: missing file {path}")
            try:
                g = load_grammar(path)
            except (GrammarError, SyntaxError) as exc:
                raise ConfigError(f"{name}.file: {exc}") from None
            if validate_grammar(g):
                raise ConfigError(f"{name}.file: grammar has defects {validate_grammar(g)}")
            grammars[gid], grammar_files[gid] = g, path
        elif name.startswith("miner."):
            mid = name.removeprefix("miner.")
            behavior = _get(s, "behavior", str, "honest", name)
            if behavior not in ("honest", "lazy"):
                raise ConfigError(f"{name}.behavior: expected honest or lazy")
            try:
                epochs = _get(s, "epochs", int, 30, name)
                max_ticks = s.get("max_ticks")
                tc = TrainConfig(
                    epochs=max(1, epochs // 4) if behavior == "lazy" else epochs,
                    batch_size=_get(s, "batch_size", int, 32, name),
                    learning_rate=_get(s, "learning_rate", float, 0.05, name),
                    optimizer=_get(s, "optimizer", str, "sgd_momentum", name),
                    momentum=_get(s, "momentum", float, 0.9, name),
                    time_budget=int(max_ticks) * net.steps_per_tick if max_ticks else None,
                )
                cfg = MinerConfig(
                    tx_policy=_get(s, "tx_policy", str, "fee_desc", name),
                    train_config=tc,
                    max_arch_retries=_get(s, "max_arch_retries", int, 256, name),
                    nonce_mode=_get(s, "nonce_mode", str, "free_nonce", name),
                    limits=ResourceLimits(max_parameters=net.max_parameters, max_sentence_tokens=256),
                )
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from None
            if cfg.tx_policy not in ("fee_desc", "random", "oldest_first"):
                raise ConfigError(f"{name}.tx_policy: unknown policy")
            miners.append(MinerSpec(mid, behavior, cfg))
        elif name.startswith("keeper."):
            kid = name.removeprefix("keeper.")
            behavior = _get(s, "behavior", str, "reliable", name)
            if behavior not in ("reliable", "tamper", "churn"):
                raise ConfigError(f"{name}.behavior: expected reliable, tamper or churn")
            spec = KeeperSpec(
                kid,
                _positive(f"{name}.capacity", _get(s, "capacity", int, where=name)),
                behavior,
                _get(s, "rate", float, 0.0, name),
                _get(s, "interval", int, 0, name),
            )
            if behavior == "churn" and spec.interval < 1:
                raise ConfigError(f"{name}.interval: churn keepers need interval >= 1")
            keepers.append(spec)

    gv = cp["governance"] if cp.has_section("governance") else {}
    if not problems:
        raise ConfigError("problem: at least one [problem.*] section is required")
    if not grammars:
        grammars["coinai-v1"] = load_grammar(_resolve("bundled:coinai-v1.bnf", base, "grammars"))
        grammar_files["coinai-v1"] = _resolve("bundled:coinai-v1.bnf", base, "grammars")
    initial_problem = _get(gv, "problem", str, next(iter(problems)), "governance")
    initial_grammar = _get(gv, "grammar", str, next(iter(grammars)), "governance")
    if initial_problem not in problems:
        raise ConfigError(f"governance.problem: unknown problem {initial_problem!r}")
    if initial_grammar not in grammars:
        raise ConfigError(f"governance.grammar: unknown grammar {initial_grammar!r}")

    for name in cp.sections():
        if not name.startswith("proposal."):
            continue
        s = cp[name]
        kind = _get(s, "kind", str, where=name)
        ref = _get(s, "ref", str, where=name)
        if kind not in ("problem", "grammar"):
            raise ConfigError(f"{name}.kind: expected problem or grammar")
        if ref not in (problems if kind == "problem" else grammars):
            raise ConfigError(f"{name}.ref: unknown {kind} {ref!r}")
        prop = Proposal(ref, kind, ref, _get(s, "proposer", str, where=name), created_at=_get(s, "at", int, where=name))
        proposals.append(ScheduledProposal(prop.created_at, prop, _names(s.get("supporters", ""))))
    proposals.sort(key=lambda p: (p.at, p.proposal.proposal_id))

    wl = cp["workload"] if cp.has_section("workload") else {}
    workload = WorkloadConfig(
        rate=_get(wl, "rate", float, 0.5, "workload"),
        fee_min=_get(wl, "fee_min", int, 0, "workload"),
        fee_max=_get(wl, "fee_max", int, 10, "workload"),
        amount_max=_get(wl, "amount_max", int, 20, "workload"),
        senders=_names(wl.get("senders", "")) or tuple(sorted(balances)),
    )
    if workload.fee_min > workload.fee_max or workload.fee_min < 0:
        raise ConfigError("workload.fee_min: must be within [0, fee_max]")

    return Scenario(
        seed=seed,
        ticks=ticks,
        network=net,
        schedule=schedule,
        miners=sorted(miners, key=lambda m: m.miner_id),
        keepers=sorted(keepers, key=lambda k: k.keeper_id),
        workload=workload,
        problems=problems,
        problem_files=problem_files,
        grammars=grammars,
        grammar_files=grammar_files,
        balances=balances,
        initial_problem=initial_problem,
        initial_grammar=initial_grammar,
        proposals=proposals,
        source=text,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such scenario file")
    return parse_scenario(path.read_text(encoding="utf-8"), path.parent)


def bundled_scenario_path(name: str = "baseline.cfg") -> Path:
    return Path(str(resources.files("coinai").joinpath("scenarios", name)))


# ---------------------------------------------------------------- run


@dataclass
class MinerState:
    spec: MinerSpec
    busy: bool = False
    started_at: int = 0
    done_at: int = 0
    tip: bytes = b""
    problem: str = ""
    attempts: int = 0
    submitted: bool = False
    outcomes: dict[str, int] = field(default_factory=dict)


@dataclass
class AcceptedBlock:
    candidate: CandidateBlock
    threshold: float
    problem_id: str
    grammar_id: str
    appended_at: int


@dataclass
class SimResult:
    scenario: Scenario
    rows: list[dict]
    chain: Chain
    directory: StorageDirectory
    governance: GovernanceState
    accepted: list[AcceptedBlock]
    lost_objects: int
    miner_outcomes: dict[str, dict[str, int]]

    def metrics_csv(self) -> str:
        return metrics_to_csv(self.rows)


class Simulation:
    def __init__(self, scenario: Scenario):
        self.sc = sc = scenario
        net = sc.network
        self.chain = Chain(sc.balances, ChainParams(net.max_transactions, net.block_reward))
        self.mempool = Mempool()
        self.directory = StorageDirectory(Keeper(k.keeper_id, k.capacity) for k in sc.keepers)
        self.schedule = replace(sc.schedule, base=None)
        self.last_block_at = 0
        self.round = Round(0, net.window)
        self.miners = {m.miner_id: MinerState(m) for m in sc.miners}
        self.workload_rng = random.Random(stream_seed(sc.seed, "workload"))
        self.audit_rng = random.Random(stream_seed(sc.seed, "audit"))
        self.churn_rng = random.Random(stream_seed(sc.seed, "churn"))
        self.keeper_rngs = {k.keeper_id: random.Random(stream_seed(sc.seed, f"keeper:{k.keeper_id}")) for k in sc.keepers}
        self.tx_seq = 0
        self.rows: list[dict] = []
        self.accepted: list[AcceptedBlock] = []
        self.lost_objects = 0
        self.gov = GovernanceState.genesis(
            Proposal(sc.initial_problem, "problem", sc.initial_problem, "genesis"),
            Proposal(sc.initial_grammar, "grammar", sc.initial_grammar, "genesis"),
            theta=net.theta,
            min_active_ticks=net.min_active_ticks,
        )
        for pid, files in sorted(sc.problem_files.items()):
            blobs = {p.name: p.read_bytes() for p in files}
            store_dataset(self.directory, blobs, net.replication, net.replication_data, tuple(self.miners))

    @property
    def problem(self) -> Problem:
        return self.sc.problems[self.gov.active_problem]

    @property
    def grammar(self) -> Grammar:
        return self.sc.grammars[self.gov.active_grammar]

    def threshold(self, now: int) -> float:
        return current_threshold(self.schedule, now, self.last_block_at)

    # -- per-tick phases

    def _inject_workload(self, t: int) -> None:
        w = self.sc.workload
        if not w.senders:
            return
        rng = self.workload_rng
        count = int(w.rate) + (1 if rng.random() < w.rate - int(w.rate) else 0)
        pending_out: dict[str, int] = {}
        for tx in self.mempool:
            pending_out[tx.sender] = pending_out.get(tx.sender, 0) + tx.amount + tx.fee
        accounts = sorted(set(w.senders) | set(self.sc.balances))
        for _ in range(count):
            sender = rng.choice(w.senders)
            receiver = rng.choice([a for a in accounts if a != sender] or [sender])
            amount = rng.randint(1, max(1, w.amount_max))
            fee = rng.randint(w.fee_min, w.fee_max)
            spendable = self.chain.ledger.balance(sender) - pending_out.get(sender, 0)
            if spendable < amount + fee:
                continue
            self.tx_seq += 1
            tx = Transaction(sender, receiver, amount, fee, t, self.tx_seq)
            self.mempool.add(tx)
            pending_out[sender] = pending_out.get(sender, 0) + amount + fee

    def _governance(self, t: int, events: list[str]) -> None:
        for sp in self.sc.proposals:
            if sp.at != t:
                continue
            prop = Proposal(sp.proposal.proposal_id, sp.proposal.kind, sp.proposal.ref, sp.proposal.proposer, created_at=t)
            try:
                submit_proposal(self.gov, prop, self.chain.ledger)
                events.append(f"propose:{prop.proposal_id}")
                for account in sp.supporters:
                    try:
                        support(self.gov, prop.proposal_id, account, self.chain.ledger)
                    except GovernanceError:
                        events.append(f"support_rejected:{account}")
            except GovernanceError as exc:
                events.append(f"proposal_rejected:{prop.proposal_id}:{exc}")
        for kind in ("problem", "grammar"):
            switched = maybe_switch(self.gov, self.chain.ledger, t, stream_seed(self.sc.seed, f"gov:{kind}:{t}"), kind)
            if switched:
                events.append(f"switch:{kind}:{switched}")
                self._abort_round(t)

    def _abort_round(self, t: int) -> None:
        self.round = Round(t, self.sc.network.window)
        for st in self.miners.values():
            st.busy = False
            st.submitted = False

    def _miners(self, t: int) -> int:
        submitted = 0
        problem, grammar = self.problem, self.grammar
        steps_per_tick = self.sc.network.steps_per_tick
        for mid in sorted(self.miners):
            st = self.miners[mid]
            if st.submitted:
                continue
            if not st.busy:
                tc = st.spec.config.train_config
                steps = tc.total_steps(problem.dataset.train_X.shape[0])
                st.busy, st.started_at = True, t
                st.done_at = t + max(1, -(-steps // steps_per_tick))
                st.tip, st.problem = self.chain.tip_hash, self.gov.active_problem
                st.attempts += 1
                continue
            if t < st.done_at:
                continue
            st.busy = False
            if st.tip != self.chain.tip_hash or st.problem != self.gov.active_problem:
                st.outcomes["stale"] = st.outcomes.get("stale", 0) + 1
                continue
            seed = stream_seed(self.sc.seed, f"miner:{mid}:{st.attempts}")
            try:
                cand = mine_attempt(mid, self.chain, self.mempool, grammar, problem, self.schedule,
                                    st.spec.config, t, seed, self.last_block_at)
            except NoCandidate as exc:
                st.outcomes[exc.reason] = st.outcomes.get(exc.reason, 0) + 1
                continue
            report = validate_candidate(cand, self.chain, grammar, problem, cand.threshold, self.mempool)
            if self.round.submit(cand, report):
                st.submitted = True
                submitted += 1
                st.outcomes["submitted"] = st.outcomes.get("submitted", 0) + 1
        return submitted

    def _resolve(self, t: int, events: list[str]) -> float | None:
        if not self.round.ready(t):
            return None
        winner = self.round.resolve()
        blk = winner.block
        try:
            if not self.chain.ledger.can_apply(blk.transactions):
                # a penalty landed after submission; the block can no longer settle
                raise ChainError("sender overspends at resolution")
            assign_replicas(self.directory, blk.model_digest, winner.blob, "model", self.sc.network.replication)
            append_block(self.chain, blk, self.mempool, self.directory)
        except ChainError as exc:
            events.append(f"append_failed:{winner.miner}:{exc}")
            self._abort_round(t)
            return None
        self.accepted.append(AcceptedBlock(winner, winner.threshold, self.gov.active_problem, self.gov.active_grammar, t))
        self.schedule.record_block()
        self.last_block_at = t
        self._abort_round(t)
        return blk.reported_score

    def _depart(self, keeper_id: str, events: list[str]) -> None:
        plan = on_keeper_departure(self.directory, keeper_id)
        lost = sum(isinstance(p, ObjectLost) for p in plan)
        self.lost_objects += lost
        capacity = self.directory.keepers[keeper_id].capacity
        self.directory.add_keeper(Keeper(keeper_id, capacity))  # rejoins empty
        events.append(f"churn:{keeper_id}" + (f":lost={lost}" if lost else ""))

    def _storage(self, t: int, events: list[str]) -> tuple[int, int]:
        net = self.sc.network
        if net.churn_interval and t % net.churn_interval == 0:
            alive = sorted(k.keeper_id for k in self.directory.alive_keepers())
            if alive:
                self._depart(self.churn_rng.choice(alive), events)
        for spec in self.sc.keepers:
            if spec.behavior == "churn" and t % spec.interval == 0:
                self._depart(spec.keeper_id, events)
        run = failed = 0
        if t % net.epoch_ticks == 0:
            for spec in self.sc.keepers:
                store = self.directory.stores.get(spec.keeper_id, {})
                rng = self.keeper_rngs[spec.keeper_id]
                if spec.behavior == "tamper" and store and rng.random() < spec.rate:
                    oid = rng.choice(sorted(store))
                    tamper_replica(self.directory, spec.keeper_id, oid, rng.randrange(len(store[oid])), rng.randrange(1, 256))
            results = audit_sample(self.directory, net.audit_rate, self.audit_rng, self.chain, net.penalty)
            run = len(results)
            failed = sum(not r.passed for r in results)
            self.lost_objects += sum(isinstance(p, ObjectLost) for r in results for p in r.healing)
            pay_rent(self.directory, self.chain, net.rent)
            self.lost_objects += sum(isinstance(p, ObjectLost) for p in self.directory.heal())
        return run, failed

    def step(self, t: int) -> dict:
        events: list[str] = []
        self._inject_workload(t)
        self._governance(t, events)
        submitted = self._miners(t)
        winner_score = self._resolve(t, events)
        audits_run, audits_failed = self._storage(t, events)
        row = {
            "tick": t,
            "chain_height": self.chain.height,
            "threshold": repr(self.threshold(t)),
            "candidates_submitted": submitted,
            "winner_score": "" if winner_score is None else repr(winner_score),
            "mempool_depth": len(self.mempool),
            "under_replicated": len(self.directory.under_replicated()),
            "audits_run": audits_run,
            "audits_failed": audits_failed,
            "active_problem": self.gov.active_problem,
            "total_supply": self.chain.ledger.total_supply,
            "objects_lost": self.lost_objects,
            "events": ";".join(events),
        }
        self.rows.append(row)
        return row

    def run(self) -> SimResult:
        for t in range(1, self.sc.ticks + 1):
            self.step(t)
        return SimResult(
            self.sc, self.rows, self.chain, self.directory, self.gov, self.accepted, self.lost_objects,
            {mid: dict(sorted(st.outcomes.items())) for mid, st in sorted(self.miners.items())},
        )


def run(scenario: Scenario, seed: int | None = None) -> SimResult:
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    return Simulation(scenario).run()


# ---------------------------------------------------------------- output


def metrics_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRIC_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def read_metrics(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


def reward_distribution(chain: Chain) -> dict[str, int]:
    """Newly issued tokens per account: block rewards plus rent, minus penalties."""
    out: dict[str, int] = {}
    for b in chain.blocks[1:]:
        out[b.miner] = out.get(b.miner, 0) + chain.params.block_reward
    for e in chain.events:
        out[e.account] = out.get(e.account, 0) + e.delta
    return dict(sorted(out.items()))


def report(rows: list[dict], chain: Chain | None = None) -> tuple[str, dict]:
    """Summarize a metrics log (and, when given, the final chain)."""
    if not rows:
        raise ValueError("metrics log is empty")
    heights = [int(r["chain_height"]) for r in rows]
    thresholds = [float(r["threshold"]) for r in rows]
    block_ticks = [int(r["tick"]) for prev, r in zip([{"chain_height": 0}] + rows, rows)
                   if int(r["chain_height"]) > int(prev["chain_height"])]
    gaps = [b - a for a, b in zip([0] + block_ticks, block_ticks)]
    stats = {
        "ticks": len(rows),
        "blocks_mined": heights[-1],
        "mean_round_duration": (sum(gaps) / len(gaps)) if gaps else None,
        "threshold_min": min(thresholds),
        "threshold_max": max(thresholds),
        "threshold_mean": sum(thresholds) / len(thresholds),
        "threshold_final": thresholds[-1],
        "candidates_submitted": sum(int(r["candidates_submitted"]) for r in rows),
        "audits_run": sum(int(r["audits_run"]) for r in rows),
        "audit_failures": sum(int(r["audits_failed"]) for r in rows),
        "objects_lost": int(rows[-1]["objects_lost"]),
        "final_supply": int(rows[-1]["total_supply"]),
        "problem_switches": sum("switch:problem" in r["events"] for r in rows),
    }
    if chain is not None:
        stats["rewards"] = reward_distribution(chain)
    lines = [
        f"ticks: {stats['ticks']}",
        f"blocks mined: {stats['blocks_mined']}",
        "mean round duration: "
        + ("n/a" if stats["mean_round_duration"] is None else f"{stats['mean_round_duration']:.2f} ticks"),
        f"threshold: min {stats['threshold_min']:.4f}, max {stats['threshold_max']:.4f}, "
        f"mean {stats['threshold_mean']:.4f}, final {stats['threshold_final']:.4f}",
        f"candidates submitted: {stats['candidates_submitted']}",
        f"audits: {stats['audits_run']} run, {stats['audit_failures']} failed",
        f"objects lost: {stats['objects_lost']}",
        f"problem switches: {stats['problem_switches']}",
        f"final supply: {stats['final_supply']}",
    ]
    if chain is not None:
        lines.append("rewards by account:")
        lines += [f"  {a}: {v}" for a, v in stats["rewards"].items()]
    return "\n".join(lines) + "\n", stats


def write_outputs(result: SimResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(result.metrics_csv())
    (out / "chain.bin").write_bytes(dump_chain(result.chain))
    write_stores(result.directory, out / "keepers")
    text, stats = report(result.rows, result.chain)
    (out / "summary.txt").write_text(text)
    stats["miner_outcomes"] = result.miner_outcomes
    stats["tip_hash"] = result.chain.tip_hash.hex()
    (out / "summary.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    return out
