"""Proof-of-storage: keepers hold R digest-addressed replicas of each object."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

from .hashing import sha3_512


class StorageError(Exception):
    pass


class InsufficientKeepers(StorageError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class Keeper:
    keeper_id: str
    capacity: int
    used: int = 0
    alive: bool = True

    @property
    def free(self) -> int:
        return self.capacity - self.used


@dataclass
class ReplicaAssignment:
    object_id: bytes
    holders: set[str]
    required: int

    @property
    def under_replicated(self) -> bool:
        return len(self.holders) < self.required


@dataclass
class StoredObject:
    size: int
    kind: str  # "model" | "dataset"
    assignment: ReplicaAssignment


# Healing plan entries.
@dataclass(frozen=True)
class NewReplica:
    object_id: bytes
    source: str
    target: str


@dataclass(frozen=True)
class ObjectLost:
    object_id: bytes


@dataclass(frozen=True)
class Unplaced:
    object_id: bytes
    missing: int


AUDIT_PASS = "pass"
TAMPER_DETECTED = "tamper_detected"
MISSING_REPLICA = "missing_replica"


@dataclass
class AuditResult:
    keeper_id: str
    object_id: bytes
    outcome: str
    penalty: int = 0
    healing: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.outcome == AUDIT_PASS


class StorageDirectory:
    def __init__(self, keepers=()):
        self.keepers: dict[str, Keeper] = {}
        self.objects: dict[bytes, StoredObject] = {}
        self.stores: dict[str, dict[bytes, bytes]] = {}
        self.miner_caches: dict[str, dict[bytes, bytes]] = {}
        self.lost: set[bytes] = set()
        for k in keepers:
            self.add_keeper(k)

    def add_keeper(self, keeper: Keeper) -> None:
        if keeper.keeper_id in self.keepers and self.keepers[keeper.keeper_id].alive:
            raise StorageError(f"keeper {keeper.keeper_id} already active")
        self.keepers[keeper.keeper_id] = keeper
        self.stores[keeper.keeper_id] = {}

    def has_object(self, object_id: bytes) -> bool:
        return object_id in self.objects

    def alive_keepers(self) -> list[Keeper]:
        return [k for k in self.keepers.values() if k.alive]

    def under_replicated(self) -> list[bytes]:
        return [oid for oid, o in self.objects.items() if o.assignment.under_replicated and oid not in self.lost]

    def holdings(self) -> list[tuple[str, bytes]]:
        """Every (keeper, object) pair the directory believes is held."""
        return sorted((h, oid) for oid, o in self.objects.items() for h in o.assignment.holders)

    def _place(self, object_id: bytes, blob: bytes, count: int, exclude: set[str]) -> list[str]:
        size = len(blob)
        feasible = [k for k in self.alive_keepers() if k.keeper_id not in exclude and k.free >= size]
        feasible.sort(key=lambda k: (-k.free, k.keeper_id))
        chosen = feasible[:count]
        for k in chosen:
            k.used += size
            self.stores[k.keeper_id][object_id] = bytes(blob)
        return [k.keeper_id for k in chosen]

    def _drop(self, keeper_id: str, object_id: bytes) -> None:
        obj = self.objects[object_id]
        if keeper_id in obj.assignment.holders:
            obj.assignment.holders.discard(keeper_id)
            self.keepers[keeper_id].used -= obj.size
        self.stores.get(keeper_id, {}).pop(object_id, None)

    def _source_blob(self, object_id: bytes) -> tuple[str, bytes] | None:
        """A surviving replica that still matches its digest."""
        for holder in sorted(self.objects[object_id].assignment.holders):
            blob = self.stores.get(holder, {}).get(object_id)
            if blob is not None and sha3_512(blob) == object_id:
                return holder, blob
        return None

    def heal_object(self, object_id: bytes) -> list:
        obj = self.objects[object_id]
        missing = obj.assignment.required - len(obj.assignment.holders)
        if missing <= 0 or object_id in self.lost:
            return []
        source = self._source_blob(object_id)
        if source is None:
            self.lost.add(object_id)
            return [ObjectLost(object_id)]
        src, blob = source
        plan = []
        for target in self._place(object_id, blob, missing, obj.assignment.holders):
            obj.assignment.holders.add(target)
            plan.append(NewReplica(object_id, src, target))
        if obj.assignment.under_replicated:
            plan.append(Unplaced(object_id, obj.assignment.required - len(obj.assignment.holders)))
        return plan

    def heal(self) -> list:
        """Top up every under-replicated object; returns the healing plan."""
        plan = []
        for oid in sorted(self.objects):
            plan.extend(self.heal_object(oid))
        return plan


def assign_replicas(directory: StorageDirectory, object_id: bytes, blob: bytes, kind: str, R: int) -> ReplicaAssignment:
    """Place ``R`` copies on the keepers with the most free space.

    With fewer than ``R`` feasible keepers the object is stored on as many
    as possible and the assignment reports ``under_replicated``.
    """
    if sha3_512(blob) != object_id:
        raise StorageError("object id must be the SHA3-512 of the blob")
    if object_id in directory.objects:
        return directory.objects[object_id].assignment
    holders = directory._place(object_id, blob, R, set())
    assignment = ReplicaAssignment(object_id, set(holders), R)
    directory.objects[object_id] = StoredObject(len(blob), kind, assignment)
    return assignment


def on_keeper_departure(directory: StorageDirectory, keeper_id: str) -> list:
    """Mark the keeper gone and re-replicate everything it held."""
    keeper = directory.keepers.get(keeper_id)
    if keeper is None:
        raise StorageError(f"unknown keeper {keeper_id}")
    keeper.alive = False
    held = sorted(oid for oid, o in directory.objects.items() if keeper_id in o.assignment.holders)
    for oid in held:
        directory.objects[oid].assignment.holders.discard(keeper_id)
    directory.stores[keeper_id] = {}
    keeper.used = 0
    plan = []
    for oid in held:
        plan.extend(directory.heal_object(oid))
    return plan


def audit(directory: StorageDirectory, keeper_id: str, object_id: bytes, ledger=None, penalty: int = 5) -> AuditResult:
    """Compare a keeper's copy with the on-chain digest.

    On failure the replica is invalidated, ``penalty`` is burned from the
    keeper's balance through ``ledger`` (anything with a ``burn`` method) and
    the object is healed.
    """
    blob = directory.stores.get(keeper_id, {}).get(object_id)
    if blob is not None and sha3_512(blob) == object_id:
        return AuditResult(keeper_id, object_id, AUDIT_PASS)
    outcome = MISSING_REPLICA if blob is None else TAMPER_DETECTED
    if object_id in directory.objects:
        directory._drop(keeper_id, object_id)
    charged = ledger.burn(keeper_id, penalty) if ledger is not None and penalty else 0
    healing = directory.heal_object(object_id) if object_id in directory.objects else []
    return AuditResult(keeper_id, object_id, outcome, charged, healing)


def audit_sample(directory: StorageDirectory, rate: float, rng: random.Random, ledger=None, penalty: int = 5):
    """Audit a seeded random fraction of held (keeper, object) pairs."""
    pairs = directory.holdings()
    if not pairs or rate <= 0:
        return []
    k = min(len(pairs), max(1, round(rate * len(pairs))))
    return [audit(directory, kid, oid, ledger, penalty) for kid, oid in rng.sample(pairs, k)]


def tamper_replica(directory: StorageDirectory, keeper_id: str, object_id: bytes, position: int, xor: int = 0xFF) -> None:
    """Flip bits of one stored byte in place (a misbehaving keeper)."""
    blob = bytearray(directory.stores[keeper_id][object_id])
    blob[position % len(blob)] ^= xor or 0xFF
    directory.stores[keeper_id][object_id] = bytes(blob)


def store_dataset(directory: StorageDirectory, files: dict[str, bytes], R: int, R_data: int,
                  miners: tuple[str, ...] = ()) -> dict[str, ReplicaAssignment]:
    """Replicate dataset files at ``R_data`` and give miners unaudited caches."""
    if R_data < R:
        raise ConfigError(f"R_data ({R_data}) must be >= R ({R})")
    out = {}
    for name, blob in sorted(files.items()):
        oid = sha3_512(blob)
        out[name] = assign_replicas(directory, oid, blob, "dataset", R_data)
        for m in miners:
            directory.miner_caches.setdefault(m, {})[oid] = blob
    return out


def pay_rent(directory: StorageDirectory, ledger, rent: int) -> dict[str, int]:
    """Mint ``rent`` per held replica to each alive keeper; returns the payouts."""
    payouts: dict[str, int] = {}
    for keeper_id, _ in directory.holdings():
        if directory.keepers[keeper_id].alive:
            payouts[keeper_id] = payouts.get(keeper_id, 0) + rent
    for keeper_id, amount in sorted(payouts.items()):
        if amount:
            ledger.mint(keeper_id, amount)
    return payouts


def write_stores(directory: StorageDirectory, root: Path) -> None:
    """One directory per keeper, one file per object named by hex digest."""
    root = Path(root)
    for keeper_id, store in sorted(directory.stores.items()):
        if not directory.keepers[keeper_id].alive:
            continue
        kdir = root / keeper_id
        kdir.mkdir(parents=True, exist_ok=True)
        for oid, blob in store.items():
            (kdir / oid.hex()).write_bytes(blob)


def audit_stores(root: Path) -> list[tuple[str, str, bool]]:
    """Check every persisted replica against its file name digest."""
    results = []
    for kdir in sorted(p for p in Path(root).iterdir() if p.is_dir()):
        for f in sorted(kdir.iterdir()):
            results.append((kdir.name, f.name, sha3_512(f.read_bytes()).hex() == f.name))
    return results
