import random

import pytest
from hypothesis import given, settings, strategies as st

from coinai.chain import Ledger
from coinai.hashing import sha3_512
from coinai.storage import (
    AUDIT_PASS,
    MISSING_REPLICA,
    TAMPER_DETECTED,
    ConfigError,
    Keeper,
    NewReplica,
    ObjectLost,
    StorageDirectory,
    assign_replicas,
    audit,
    audit_sample,
    audit_stores,
    on_keeper_departure,
    pay_rent,
    store_dataset,
    tamper_replica,
    write_stores,
)


def blob(i: int, size: int = 10) -> tuple[bytes, bytes]:
    data = (f"object {i} ".encode() * size)[:size]
    return sha3_512(data), data


def directory(n=6, capacity=10_000):
    return StorageDirectory(Keeper(f"k{i}", capacity) for i in range(n))


def test_greedy_by_free_space():
    d = StorageDirectory(Keeper(f"k{i}", cap) for i, cap in enumerate([100, 80, 60, 40, 20]))
    oid, data = blob(0)
    assert assign_replicas(d, oid, data, "model", 3).holders == {"k0", "k1", "k2"}


def test_single_keeper():
    d = directory(1)
    oid, data = blob(0)
    a = assign_replicas(d, oid, data, "model", 1)
    assert a.holders == {"k0"} and not a.under_replicated


def test_under_replicated_when_short():
    d = StorageDirectory([Keeper("a", 100), Keeper("b", 100), Keeper("c", 5)])
    oid, data = blob(0)
    a = assign_replicas(d, oid, data, "model", 3)
    assert len(a.holders) == 2 and a.under_replicated
    assert d.under_replicated() == [oid]


def test_object_id_must_match():
    with pytest.raises(Exception):
        assign_replicas(directory(), b"\x00" * 64, b"data", "model", 1)


def test_departure_heals_in_one_pass():
    d = directory(6)
    for i in range(8):
        assign_replicas(d, *blob(i), "model", 3)
    held = [oid for oid, o in d.objects.items() if "k0" in o.assignment.holders]
    plan = on_keeper_departure(d, "k0")
    assert len([p for p in plan if isinstance(p, NewReplica)]) == len(held)
    assert all(len(o.assignment.holders) == 3 and "k0" not in o.assignment.holders for o in d.objects.values())


def test_all_holders_gone_is_loss():
    d = directory(5)
    oid, data = blob(0)
    holders = sorted(assign_replicas(d, oid, data, "model", 3).holders)
    for k in holders[:-1]:
        d.keepers[k].alive = False
        d.objects[oid].assignment.holders.discard(k)
    assert any(isinstance(p, ObjectLost) for p in on_keeper_departure(d, holders[-1]))


def test_idle_keeper_departure():
    d = directory(6)
    assign_replicas(d, *blob(0), "model", 3)
    idle = next(k for k in d.keepers if k not in d.objects[blob(0)[0]].assignment.holders)
    assert on_keeper_departure(d, idle) == []


def test_audit_outcomes():
    d = directory(4)
    oid, data = blob(0)
    ledger = Ledger.from_genesis({f"k{i}": 20 for i in range(4)})
    holders = sorted(assign_replicas(d, oid, data, "model", 3).holders)
    assert audit(d, holders[0], oid, ledger).outcome == AUDIT_PASS
    tamper_replica(d, holders[1], oid, 4)
    res = audit(d, holders[1], oid, ledger, penalty=5)
    assert res.outcome == TAMPER_DETECTED and res.penalty == 5
    assert ledger.balance(holders[1]) == 15
    assert len(d.objects[oid].assignment.holders) == 3  # healed
    del d.stores[holders[2]][oid]
    assert audit(d, holders[2], oid, ledger).outcome == MISSING_REPLICA


def test_penalty_floored():
    d = directory(3)
    oid, data = blob(0)
    ledger = Ledger.from_genesis({"k0": 2})
    assign_replicas(d, oid, data, "model", 3)
    tamper_replica(d, "k0", oid, 0)
    assert audit(d, "k0", oid, ledger, penalty=5).penalty == 2
    assert ledger.balance("k0") == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 200))
def test_every_single_byte_flip_detected(seed, size):
    rng = random.Random(seed)
    d = directory(4)
    oid, data = blob(seed, size)
    holder = sorted(assign_replicas(d, oid, data, "model", 2).holders)[0]
    tamper_replica(d, holder, oid, rng.randrange(size), rng.randrange(1, 256))
    assert audit(d, holder, oid).outcome == TAMPER_DETECTED


def test_dataset_replication():
    d = directory(6)
    files = {"x.train.csv": b"a,label\n1,0\n", "x.valid.csv": b"a,label\n2,1\n"}
    out = store_dataset(d, files, 3, 5, miners=("m1",))
    assert all(len(a.holders) == 5 for a in out.values())
    assert len(d.miner_caches["m1"]) == 2
    with pytest.raises(ConfigError):
        store_dataset(d, files, 3, 2)


def test_rent_per_replica():
    d = directory(4)
    ledger = Ledger.from_genesis({})
    assign_replicas(d, *blob(0), "model", 3)
    assign_replicas(d, *blob(1), "model", 2)
    payouts = pay_rent(d, ledger, 2)
    assert sum(payouts.values()) == 2 * 5 == ledger.minted


def test_sampled_audits_seeded():
    def run(seed):
        d = directory(5)
        for i in range(10):
            assign_replicas(d, *blob(i), "model", 3)
        return [(r.keeper_id, r.object_id) for r in audit_sample(d, 0.1, random.Random(seed))]

    assert run(1) == run(1)
    assert len(run(1)) == 3


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=12), st.integers(0, 2**16))
def test_churn_keeps_replication(departures, seed):
    # six keepers, R = 3, departing keepers rejoin empty straight away
    d = directory(6, capacity=10**6)
    for i in range(10):
        assign_replicas(d, *blob(i + seed), "model", 3)
    for k in departures:
        plan = on_keeper_departure(d, f"k{k}")
        assert not any(isinstance(p, ObjectLost) for p in plan)
        d.add_keeper(Keeper(f"k{k}", 10**6))
        for o in d.objects.values():
            assert len(o.assignment.holders) == 3
    used = {k: 0 for k in d.keepers}
    for oid, o in d.objects.items():
        for h in o.assignment.holders:
            used[h] += o.size
            assert sha3_512(d.stores[h][oid]) == oid
    assert used == {k: kp.used for k, kp in d.keepers.items()}


def test_persisted_stores(tmp_path):
    d = directory(3)
    oid, data = blob(0)
    assign_replicas(d, oid, data, "model", 2)
    write_stores(d, tmp_path)
    assert all(ok for _, _, ok in audit_stores(tmp_path))
    victim = next(p for p in tmp_path.rglob("*") if p.is_file())
    victim.write_bytes(b"X" + victim.read_bytes()[1:])
    assert [ok for _, _, ok in audit_stores(tmp_path)].count(False) == 1
