import dataclasses
import random

import pytest
from hypothesis import given, settings, strategies as st

from coinai.chain import (
    Block,
    Chain,
    ChainError,
    ChainFormatError,
    ChainParams,
    DuplicateTransaction,
    InsufficientBalance,
    Mempool,
    StalePrevHash,
    Transaction,
    UnknownModelDigest,
    append_block,
    block_hash,
    canonical_preimage,
    dump_chain,
    load_chain,
    select_transactions,
    validate_chain,
)
from coinai.hashing import ZERO_HASH, sha3_512
from coinai.storage import Keeper, StorageDirectory, assign_replicas

from conftest import build_chain


def _block(chain, txs=(), nonce=1, miner="m", ts=None, **kw):
    return Block(chain.height + 1, chain.tip_hash, tuple(txs), nonce, miner, sha3_512(b"model"), 0.9, "p",
                 chain.tip.timestamp if ts is None else ts, **kw)


def test_preimage_layout_empty():
    pre = canonical_preimage(ZERO_HASH, [], 0)
    assert pre == bytes(64) + bytes(4) + bytes(8)
    assert len(pre) == 76


def test_preimage_layout_one_tx():
    tx = Transaction("a", "b", 1, 0)
    pre = canonical_preimage(ZERO_HASH, [tx], 1)
    assert pre == bytes(64) + b"\x00\x00\x00\x01" + tx.tx_id + b"\x00" * 7 + b"\x01"
    assert len(pre) == 140


def test_preimage_rejects_bad_inputs():
    with pytest.raises(ValueError):
        canonical_preimage(b"short", [], 0)
    with pytest.raises(ValueError):
        canonical_preimage(ZERO_HASH, [], 2**64)


def test_block_hash_deterministic_and_order_sensitive():
    a, b = Transaction("a", "b", 1, 0), Transaction("b", "a", 2, 0)
    assert block_hash(ZERO_HASH, [a, b], 3) == block_hash(ZERO_HASH, [a, b], 3)
    assert block_hash(ZERO_HASH, [a, b], 3) != block_hash(ZERO_HASH, [b, a], 3)
    assert block_hash(ZERO_HASH, [a, b], 3) != block_hash(ZERO_HASH, [a, b], 4)


def test_reward_plus_fees():
    chain = Chain({"alice": 100}, ChainParams(16, 50))
    txs = [Transaction("alice", "bob", 10, 3), Transaction("alice", "bob", 10, 5, seq=1)]
    append_block(chain, _block(chain, txs, miner="m"))
    assert chain.ledger.balance("m") == 58
    assert chain.ledger.balance("alice") == 100 - 28
    assert chain.ledger.balance("bob") == 20
    assert chain.ledger.total_supply == 150


def test_stale_prev_hash():
    chain = build_chain(2)
    blk = dataclasses.replace(_block(chain), prev_hash=chain.blocks[1].hash)
    with pytest.raises(StalePrevHash):
        append_block(chain, blk)


def test_overspend_rejected():
    chain = Chain({"alice": 5})
    with pytest.raises(InsufficientBalance):
        append_block(chain, _block(chain, [Transaction("alice", "bob", 5, 1)]))
    assert chain.height == 0


def test_duplicates_rejected():
    chain = Chain({"alice": 100})
    tx = Transaction("alice", "bob", 1, 0)
    with pytest.raises(DuplicateTransaction):
        append_block(chain, _block(chain, [tx, tx]))
    append_block(chain, _block(chain, [tx]))
    with pytest.raises(DuplicateTransaction):
        append_block(chain, _block(chain, [tx]))


def test_too_many_transactions():
    chain = Chain({"alice": 100}, ChainParams(max_transactions=2))
    txs = [Transaction("alice", "bob", 1, 0, seq=i) for i in range(3)]
    with pytest.raises(ChainError):
        append_block(chain, _block(chain, txs))


def test_mempool_pruned_and_required():
    chain = Chain({"alice": 100})
    pool = Mempool([Transaction("alice", "bob", 1, 0, seq=i) for i in range(3)])
    txs = list(pool)[:2]
    append_block(chain, _block(chain, txs), pool)
    assert len(pool) == 1
    with pytest.raises(DuplicateTransaction):
        append_block(chain, _block(chain, [Transaction("alice", "bob", 9, 0)]), pool)


def test_model_must_be_stored():
    chain = Chain()
    directory = StorageDirectory([Keeper("k", 1000)])
    with pytest.raises(UnknownModelDigest):
        append_block(chain, _block(chain), directory=directory)
    assign_replicas(directory, sha3_512(b"model"), b"model", "model", 1)
    append_block(chain, _block(chain), directory=directory)


def test_valid_chain_and_prefixes():
    chain = build_chain(10)
    assert validate_chain(chain) is None
    for n in range(1, 11):
        assert validate_chain(chain.prefix(n)) is None


def test_tampered_transaction_breaks_next_link():
    chain = build_chain(10)
    b3 = chain.blocks[3]
    bad_tx = dataclasses.replace(b3.transactions[0], amount=b3.transactions[0].amount + 1)
    chain.blocks[3] = dataclasses.replace(b3, transactions=(bad_tx,) + b3.transactions[1:])
    assert validate_chain(chain).startswith("height 4")


def test_tampered_non_preimage_field_caught_by_seal():
    chain = build_chain(5)
    chain.blocks[2] = dataclasses.replace(chain.blocks[2], reported_score=0.99)
    assert validate_chain(chain) == "height 2: seal mismatch"
    chain = build_chain(5)
    chain.blocks[5] = dataclasses.replace(chain.blocks[5], nonce=123456)
    assert validate_chain(chain) == "height 5: seal mismatch"


def test_ledger_divergence_detected():
    chain = build_chain(3)
    chain.ledger.balances["alice"] += 1
    assert "ledger" in validate_chain(chain)


def test_events_replayed():
    chain = build_chain(3)
    chain.mint("k1", 7)
    assert chain.burn("alice", 10**9) > 0
    assert validate_chain(chain) is None
    loaded = load_chain(dump_chain(chain))
    assert loaded.ledger.balances == chain.ledger.balances
    assert validate_chain(loaded) is None


def test_dump_load_round_trip():
    chain = build_chain(6)
    data = dump_chain(chain)
    again = load_chain(data)
    assert again.blocks == chain.blocks and again.seals == chain.seals
    assert dump_chain(again) == data
    with pytest.raises(ChainFormatError):
        load_chain(data[:-3])
    with pytest.raises(ChainFormatError):
        load_chain(b"XXXX" + data[4:])


def _mempool(fees):
    return Mempool(Transaction("a", "b", 1, f, seq=i) for i, f in enumerate(fees))


def test_fee_desc():
    picked = select_transactions(_mempool([1, 9, 5]), "fee_desc", 2)
    assert [t.fee for t in picked] == [9, 5]
    assert select_transactions(Mempool(), "fee_desc", 4) == []


def test_fee_ties_by_tx_id():
    picked = select_transactions(_mempool([3, 3, 3, 3]), "fee_desc", 4)
    assert [t.tx_id for t in picked] == sorted(t.tx_id for t in picked)


def test_oldest_first_and_random():
    pool = Mempool(Transaction("a", "b", 1, 0, submitted_at=t, seq=t) for t in (5, 1, 3))
    assert [t.submitted_at for t in select_transactions(pool, "oldest_first", 2)] == [1, 3]
    assert select_transactions(pool, "random", 2, seed=4) == select_transactions(pool, "random", 2, seed=4)
    with pytest.raises(ValueError):
        select_transactions(pool, "bribes", 2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 20), max_size=30), st.integers(0, 16))
def test_selection_bounded_and_fee_optimal(fees, n):
    pool = _mempool(fees)
    picked = select_transactions(pool, "fee_desc", n)
    assert len(picked) == min(n, len(fees))
    assert sum(t.fee for t in picked) == sum(sorted(fees, reverse=True)[:n])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_supply_conservation(seed):
    rng = random.Random(seed)
    chain = Chain({"a": 500, "b": 500}, ChainParams(8, 50))
    for h in range(5):
        txs = [Transaction(rng.choice("ab"), rng.choice("abc"), rng.randint(0, 30), rng.randint(0, 5),
                           seq=h * 10 + i) for i in range(rng.randint(0, 6))]
        blk = _block(chain, txs, nonce=h, miner=rng.choice(["m1", "m2"]))
        if chain.ledger.can_apply(txs):
            append_block(chain, blk)
    assert chain.ledger.total_supply == 1000 + 50 * chain.height
    assert all(v >= 0 for v in chain.ledger.balances.values())
    assert validate_chain(chain) is None
