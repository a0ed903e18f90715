"""Blocks, ledger, mempool and the append-only chain.

The block hash covers ``prev_hash || tx count || tx ids || nonce`` only:
it is computed before training and seeds the architecture derivation, so
it cannot include the model. The remaining block fields (miner, model
digest, score, problem, timestamp) are protected by a per-block seal that
chains over full block records.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .hashing import HASH_SIZE, ZERO_HASH, check_hash, sha3_512


class ChainError(Exception):
    pass


class StalePrevHash(ChainError):
    pass


class DuplicateTransaction(ChainError):
    pass


class InsufficientBalance(ChainError):
    pass


class UnknownModelDigest(ChainError):
    pass


class ChainFormatError(ChainError):
    pass


# ---------------------------------------------------------------- encoding helpers


def _str(value: str) -> bytes:
    raw = value.encode("utf-8")
    return struct.pack(">I", len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise ChainFormatError("truncated record")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack(">d", self.take(8))[0]

    def text(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ChainFormatError("bad utf-8 string") from exc

    def done(self) -> bool:
        return self.pos == len(self.data)


# ---------------------------------------------------------------- types


@dataclass(frozen=True)
class Transaction:
    sender: str
    receiver: str
    amount: int
    fee: int
    submitted_at: int = 0
    seq: int = 0  # distinguishes otherwise identical transfers

    def __post_init__(self):
        if self.amount < 0 or self.fee < 0:
            raise ValueError("amount and fee must be non-negative")

    def body(self) -> bytes:
        return (
            _str(self.sender)
            + _str(self.receiver)
            + struct.pack(">QQQQ", self.amount, self.fee, self.submitted_at, self.seq)
        )

    @property
    def tx_id(self) -> bytes:
        return sha3_512(self.body())

    @classmethod
    def read(cls, r: _Reader) -> Transaction:
        sender, receiver = r.text(), r.text()
        amount, fee, at, seq = (r.u64() for _ in range(4))
        return cls(sender, receiver, amount, fee, at, seq)


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    transactions: tuple[Transaction, ...]
    nonce: int
    miner: str
    model_digest: bytes
    reported_score: float
    problem_id: str
    timestamp: int

    @property
    def hash(self) -> bytes:
        return block_hash(self.prev_hash, self.transactions, self.nonce)

    def record(self) -> bytes:
        """Full block encoding: header fields plus transaction bodies."""
        parts = [
            struct.pack(">Q", self.height),
            self.prev_hash,
            struct.pack(">Q", self.nonce),
            struct.pack(">I", len(self.transactions)),
        ]
        for tx in self.transactions:
            parts.append(tx.tx_id)
            parts.append(tx.body())
        parts += [
            _str(self.miner),
            self.model_digest,
            struct.pack(">d", self.reported_score),
            _str(self.problem_id),
            struct.pack(">Q", self.timestamp),
        ]
        return b"".join(parts)

    @classmethod
    def from_record(cls, data: bytes) -> tuple[Block, list[bytes]]:
        """Decode a record; also returns the stored tx ids for checking."""
        r = _Reader(data)
        height = r.u64()
        prev = r.take(HASH_SIZE)
        nonce = r.u64()
        txs, ids = [], []
        for _ in range(r.u32()):
            ids.append(r.take(HASH_SIZE))
            txs.append(Transaction.read(r))
        miner = r.text()
        digest = r.take(HASH_SIZE)
        score = r.f64()
        problem = r.text()
        ts = r.u64()
        if not r.done():
            raise ChainFormatError("trailing bytes in block record")
        return cls(height, prev, tuple(txs), nonce, miner, digest, score, problem, ts), ids


def genesis_block() -> Block:
    return Block(0, ZERO_HASH, (), 0, "", ZERO_HASH, 0.0, "", 0)


def canonical_preimage(prev_hash: bytes, transactions: Sequence[Transaction], nonce: int) -> bytes:
    check_hash(prev_hash)
    if not 0 <= nonce < 2**64:
        raise ValueError("nonce must fit in 64 bits")
    return (
        prev_hash
        + struct.pack(">I", len(transactions))
        + b"".join(tx.tx_id for tx in transactions)
        + struct.pack(">Q", nonce)
    )


def block_hash(prev_hash: bytes, transactions: Sequence[Transaction], nonce: int) -> bytes:
    return sha3_512(canonical_preimage(prev_hash, transactions, nonce))


# ---------------------------------------------------------------- ledger


@dataclass
class Ledger:
    balances: dict[str, int] = field(default_factory=dict)
    genesis_supply: int = 0
    minted: int = 0
    burned: int = 0

    @classmethod
    def from_genesis(cls, balances: dict[str, int]) -> Ledger:
        if any(v < 0 for v in balances.values()):
            raise ValueError("genesis balances must be non-negative")
        return cls(dict(balances), sum(balances.values()))

    def balance(self, account: str) -> int:
        return self.balances.get(account, 0)

    @property
    def total_supply(self) -> int:
        return sum(self.balances.values())

    def mint(self, account: str, amount: int) -> None:
        self.balances[account] = self.balance(account) + amount
        self.minted += amount

    def burn(self, account: str, amount: int) -> int:
        """Remove up to ``amount``; never drives a balance negative."""
        taken = min(amount, self.balance(account))
        self.balances[account] = self.balance(account) - taken
        self.burned += taken
        return taken

    def can_apply(self, transactions: Iterable[Transaction]) -> bool:
        trial = dict(self.balances)
        for tx in transactions:
            if trial.get(tx.sender, 0) < tx.amount + tx.fee:
                return False
            trial[tx.sender] -= tx.amount + tx.fee
            trial[tx.receiver] = trial.get(tx.receiver, 0) + tx.amount
        return True

    def apply_block(self, block: Block, block_reward: int) -> None:
        if not self.can_apply(block.transactions):
            raise InsufficientBalance(f"block {block.height} overspends a sender")
        fees = 0
        for tx in block.transactions:
            self.balances[tx.sender] -= tx.amount + tx.fee
            self.balances[tx.receiver] = self.balance(tx.receiver) + tx.amount
            fees += tx.fee
        self.balances[block.miner] = self.balance(block.miner) + fees
        self.mint(block.miner, block_reward)

    def copy(self) -> Ledger:
        return replace(self, balances=dict(self.balances))


# ---------------------------------------------------------------- mempool


class Mempool:
    def __init__(self, transactions: Iterable[Transaction] = ()):
        self.pending: dict[bytes, Transaction] = {}
        for tx in transactions:
            self.add(tx)

    def add(self, tx: Transaction) -> bool:
        if tx.tx_id in self.pending:
            return False
        self.pending[tx.tx_id] = tx
        return True

    def remove(self, tx_ids: Iterable[bytes]) -> None:
        for tx_id in tx_ids:
            self.pending.pop(tx_id, None)

    def __contains__(self, tx_id: bytes) -> bool:
        return tx_id in self.pending

    def __len__(self) -> int:
        return len(self.pending)

    def __iter__(self):
        return iter(self.pending.values())


def select_transactions(mempool: Mempool, policy: str, n: int, seed: int | None = None) -> list[Transaction]:
    """Pick up to ``n`` pending transactions.

    ``fee_desc`` breaks fee ties by ascending tx id; ``oldest_first`` orders
    by submission tick then tx id; ``random`` samples with ``seed``.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    txs = sorted(mempool, key=lambda tx: tx.tx_id)
    if policy == "fee_desc":
        txs.sort(key=lambda tx: -tx.fee)
    elif policy == "oldest_first":
        txs.sort(key=lambda tx: tx.submitted_at)
    elif policy == "random":
        return random.Random(seed).sample(txs, min(n, len(txs)))
    else:
        raise ValueError(f"unknown selection policy {policy!r}")
    return txs[:n]


# ---------------------------------------------------------------- chain


@dataclass(frozen=True)
class LedgerEvent:
    """Out-of-block issuance (keeper rent) or burn (penalty), after a height."""

    after_height: int
    account: str
    delta: int
    kind: str


@dataclass
class ChainParams:
    max_transactions: int = 16
    block_reward: int = 50


class Chain:
    def __init__(self, genesis_balances: dict[str, int] | None = None, params: ChainParams | None = None):
        self.params = params or ChainParams()
        self.genesis_balances = dict(genesis_balances or {})
        self.blocks: list[Block] = [genesis_block()]
        self.seals: list[bytes] = [sha3_512(ZERO_HASH + self.blocks[0].record())]
        self.ledger = Ledger.from_genesis(self.genesis_balances)
        self.events: list[LedgerEvent] = []
        self.included: set[bytes] = set()

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.tip.height

    @property
    def tip_hash(self) -> bytes:
        return self.tip.hash

    def mint(self, account: str, amount: int, kind: str = "rent") -> None:
        self.ledger.mint(account, amount)
        self.events.append(LedgerEvent(self.height, account, amount, kind))

    def burn(self, account: str, amount: int, kind: str = "penalty") -> int:
        taken = self.ledger.burn(account, amount)
        if taken:
            self.events.append(LedgerEvent(self.height, account, -taken, kind))
        return taken

    def prefix(self, length: int) -> Chain:
        """The first ``length`` blocks (genesis included) with their events."""
        out = Chain(self.genesis_balances, self.params)
        out.blocks = list(self.blocks[:length])
        out.seals = list(self.seals[:length])
        out.events = [e for e in self.events if e.after_height <= length - 1]
        out.ledger, _ = _replay(out)
        out.included = {tx.tx_id for b in out.blocks for tx in b.transactions}
        return out


def append_block(chain: Chain, block: Block, mempool: Mempool | None = None, directory=None) -> None:
    """Validate ``block`` against the tip and extend the chain in place.

    ``directory`` (a storage directory) must already hold the model digest
    when given; the mempool is pruned of the included transactions.
    """
    if block.height != chain.height + 1:
        raise ChainError(f"height {block.height} does not extend tip {chain.height}")
    if block.prev_hash != chain.tip_hash:
        raise StalePrevHash(f"block {block.height} does not build on the current tip")
    if len(block.transactions) > chain.params.max_transactions:
        raise ChainError(f"{len(block.transactions)} transactions exceed N={chain.params.max_transactions}")
    ids = [tx.tx_id for tx in block.transactions]
    if len(set(ids)) != len(ids) or any(i in chain.included for i in ids):
        raise DuplicateTransaction("transaction repeated or already on chain")
    if mempool is not None and any(i not in mempool for i in ids):
        raise DuplicateTransaction("transaction is not pending")
    if directory is not None and not directory.has_object(block.model_digest):
        raise UnknownModelDigest(block.model_digest.hex()[:16])
    chain.ledger.apply_block(block, chain.params.block_reward)
    chain.blocks.append(block)
    chain.seals.append(sha3_512(chain.seals[-1] + block.record()))
    chain.included.update(ids)
    if mempool is not None:
        mempool.remove(ids)


def _replay(chain: Chain) -> tuple[Ledger, str | None]:
    ledger = Ledger.from_genesis(chain.genesis_balances)
    by_height: dict[int, list[LedgerEvent]] = {}
    for e in chain.events:
        by_height.setdefault(e.after_height, []).append(e)

    def settle(height: int) -> str | None:
        for e in by_height.get(height, ()):
            if e.delta >= 0:
                ledger.mint(e.account, e.delta)
            elif ledger.burn(e.account, -e.delta) != -e.delta:
                return f"penalty on {e.account} exceeds balance"
        return None

    defect = settle(0)
    for block in chain.blocks[1:]:
        if defect:
            break
        try:
            ledger.apply_block(block, chain.params.block_reward)
        except InsufficientBalance as exc:
            return ledger, f"height {block.height}: {exc}"
        defect = settle(block.height)
    return ledger, defect


def _nonzero(balances: dict[str, int]) -> dict[str, int]:
    return {a: v for a, v in balances.items() if v}


def validate_chain(chain: Chain) -> str | None:
    """Return ``None`` if every link, seal and balance verifies, else the first defect."""
    blocks = chain.blocks
    if not blocks or blocks[0] != genesis_block():
        return "height 0: genesis block altered"
    if len(chain.seals) != len(blocks):
        return "seal count does not match block count"
    seen: set[bytes] = set()
    for k, block in enumerate(blocks):
        if block.height != k:
            return f"height {k}: stored height {block.height}"
        if k > 0:
            if block.prev_hash != blocks[k - 1].hash:
                return f"height {k}: prev_hash does not match block {k - 1}"
            if block.timestamp < blocks[k - 1].timestamp:
                return f"height {k}: timestamp goes backwards"
            if len(block.transactions) > chain.params.max_transactions:
                return f"height {k}: too many transactions"
        for tx in block.transactions:
            if tx.tx_id in seen:
                return f"height {k}: duplicate transaction"
            seen.add(tx.tx_id)
    # Links first so a tampered block is reported where the chain breaks;
    # seals then catch fields outside the hash preimage and the tip itself.
    seal = ZERO_HASH
    for k, block in enumerate(blocks):
        seal = sha3_512(seal + block.record())
        if seal != chain.seals[k]:
            return f"height {k}: seal mismatch"
    ledger, defect = _replay(chain)
    if defect:
        return defect
    if _nonzero(ledger.balances) != _nonzero(chain.ledger.balances):
        return "ledger does not match replay from genesis"
    return None


# ---------------------------------------------------------------- persistence

_MAGIC = b"CAIC"
_VERSION = 1


def dump_chain(chain: Chain) -> bytes:
    """Serialize: header, genesis balances, length-prefixed block records, events."""
    out = [_MAGIC, struct.pack(">HII", _VERSION, chain.params.max_transactions, chain.params.block_reward)]
    out.append(struct.pack(">I", len(chain.genesis_balances)))
    for account, amount in sorted(chain.genesis_balances.items()):
        out += [_str(account), struct.pack(">Q", amount)]
    out.append(struct.pack(">I", len(chain.blocks)))
    for block, seal in zip(chain.blocks, chain.seals):
        rec = block.record() + seal
        out += [struct.pack(">I", len(rec)), rec]
    out.append(struct.pack(">I", len(chain.events)))
    for e in chain.events:
        out += [struct.pack(">Qq", e.after_height, e.delta), _str(e.account), _str(e.kind)]
    return b"".join(out)


def load_chain(data: bytes) -> Chain:
    r = _Reader(data)
    if r.take(4) != _MAGIC:
        raise ChainFormatError("bad magic")
    version, n_max, reward = struct.unpack(">HII", r.take(10))
    if version != _VERSION:
        raise ChainFormatError(f"unsupported version {version}")
    balances = {}
    for _ in range(r.u32()):
        account = r.text()
        balances[account] = r.u64()
    chain = Chain(balances, ChainParams(n_max, reward))
    blocks, seals = [], []
    for _ in range(r.u32()):
        rec = r.take(r.u32())
        if len(rec) < HASH_SIZE:
            raise ChainFormatError("record shorter than its seal")
        block, ids = Block.from_record(rec[:-HASH_SIZE])
        if ids != [tx.tx_id for tx in block.transactions]:
            raise ChainFormatError(f"height {block.height}: stored tx id does not match body")
        blocks.append(block)
        seals.append(rec[-HASH_SIZE:])
    events = []
    for _ in range(r.u32()):
        after, delta = struct.unpack(">Qq", r.take(16))
        events.append(LedgerEvent(after, r.text(), delta, r.text()))
    if not r.done():
        raise ChainFormatError("trailing bytes")
    chain.blocks, chain.seals, chain.events = blocks, seals, events
    chain.ledger, _ = _replay(chain)
    chain.included = {tx.tx_id for b in blocks for tx in b.transactions}
    return chain
