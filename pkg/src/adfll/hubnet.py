"""Hub nodes: the shared ERB database and its exchange operations.

A hub stores canonical ERB bytes keyed by content id, tracks per-agent
delivery cursors, and reconciles with peer hubs by digest comparison.
Every transfer of a single ERB is independently subject to communication
dropout; a dropped record stays eligible for later exchanges, so knowledge
is delayed, never silently lost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .hashing import fnv1a64
from .replay import ErbMeta, ExperienceReplayBuffer, erb_id, erb_id_hex
from .rng import Pcg32
from .wire import deserialize_erb, serialize_erb


class IntegrityError(ValueError):
    """Stored or offered payload bytes do not hash to the claimed id."""


@dataclass(frozen=True)
class TransferOutcome:
    attempted: tuple[int, ...]
    delivered: tuple[int, ...]
    dropped: tuple[int, ...]

    def __post_init__(self):
        if set(self.delivered) | set(self.dropped) != set(self.attempted):
            raise ValueError("delivered/dropped do not partition attempted")
        if set(self.delivered) & set(self.dropped):
            raise ValueError("delivered and dropped overlap")


_EMPTY_OUTCOME = TransferOutcome((), (), ())


@dataclass
class HubDatabase:
    hub_id: str
    records: dict[int, tuple[ErbMeta, bytes]] = field(default_factory=dict)
    delivery_cursors: dict[str, set[int]] = field(default_factory=dict)

    def __contains__(self, record_id: int) -> bool:
        return record_id in self.records

    def __len__(self) -> int:
        return len(self.records)

    def insert_bytes(self, record_id: int, meta: ErbMeta, payload: bytes) -> None:
        if fnv1a64(payload) != record_id:
            raise IntegrityError(
                f"payload hash does not match claimed id {erb_id_hex(record_id)}"
            )
        self.records.setdefault(record_id, (meta, payload))

    def get_erb(self, record_id: int) -> ExperienceReplayBuffer:
        meta, payload = self.records[record_id]
        return deserialize_erb(payload)

    def upload(
        self, erb: ExperienceReplayBuffer, dropout_p: float, rng: Pcg32
    ) -> TransferOutcome:
        """Agent-to-hub transfer of one ERB; insertion is idempotent by id."""
        if not 0.0 <= dropout_p <= 1.0:
            raise ValueError("dropout_p must be in [0, 1]")
        payload = serialize_erb(erb)
        record_id = fnv1a64(payload)
        claimed = erb_id(erb)
        if claimed != record_id:
            raise IntegrityError("ERB id does not match its serialization")
        if dropout_p > 0.0 and rng.chance(dropout_p):
            return TransferOutcome((record_id,), (), (record_id,))
        self.insert_bytes(record_id, erb.meta, payload)
        return TransferOutcome((record_id,), (record_id,), ())

    def download_new(
        self,
        agent_id: str,
        exclude_self: bool,
        dropout_p: float,
        rng: Pcg32,
    ) -> tuple[list[ExperienceReplayBuffer], TransferOutcome]:
        """Hub-to-agent transfer of records the agent has not yet received.

        Survivors are recorded in the agent's delivery cursor; dropped
        candidates stay eligible for the next call.
        """
        cursor = self.delivery_cursors.setdefault(agent_id, set())
        candidates = [
            rid
            for rid in sorted(self.records)
            if rid not in cursor
            and not (exclude_self and self.records[rid][0].agent_id == agent_id)
        ]
        delivered, dropped, erbs = [], [], []
        for rid in candidates:
            if dropout_p > 0.0 and rng.chance(dropout_p):
                dropped.append(rid)
                continue
            cursor.add(rid)
            delivered.append(rid)
            erbs.append(self.get_erb(rid))
        return erbs, TransferOutcome(tuple(candidates), tuple(delivered), tuple(dropped))

    def digest(self) -> tuple[int, ...]:
        """Exact record key set in sorted canonical order."""
        return tuple(sorted(self.records))

    def manifest_rows(self) -> list[tuple[str, str, str, int]]:
        return [
            (erb_id_hex(rid), meta.agent_id, meta.task_id, meta.round)
            for rid, (meta, _) in sorted(self.records.items())
        ]

    def write_manifest(self, path) -> None:
        lines = ["erb_id,agent_id,task_id,round"]
        lines += [f"{h},{a},{t},{r}" for h, a, t, r in self.manifest_rows()]
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")


def db_digest(hub: HubDatabase) -> tuple[int, ...]:
    return hub.digest()


def _pull_missing(
    dst: HubDatabase, src: HubDatabase, dropout_p: float, rng: Pcg32
) -> TransferOutcome:
    wanted = [rid for rid in src.digest() if rid not in dst.records]
    delivered, dropped = [], []
    for rid in wanted:
        if dropout_p > 0.0 and rng.chance(dropout_p):
            dropped.append(rid)
            continue
        meta, payload = src.records[rid]
        dst.insert_bytes(rid, meta, payload)
        delivered.append(rid)
    return TransferOutcome(tuple(wanted), tuple(delivered), tuple(dropped))


def hub_sync(
    a: HubDatabase, b: HubDatabase, dropout_p: float, rng: Pcg32
) -> tuple[TransferOutcome, TransferOutcome]:
    """One anti-entropy exchange: each side pulls the records it lacks.

    Returns (records pulled into a, records pulled into b). Each record
    transfer survives dropout independently; with dropout 0 both key sets
    equal the union of the originals afterward.
    """
    if a is b or a.hub_id == b.hub_id:
        raise ValueError("hub_sync requires two distinct hubs")
    into_a = _pull_missing(a, b, dropout_p, rng)
    into_b = _pull_missing(b, a, dropout_p, rng)
    return into_a, into_b


def sync_session(
    a: HubDatabase,
    b: HubDatabase,
    dropout_p: float,
    rng: Pcg32,
    max_rounds: int = 64,
) -> tuple[int, list[tuple[TransferOutcome, TransferOutcome]]]:
    """One sync session: repeat exchanges until the pair converges.

    Returns the number of exchanges used plus their outcomes. Bounded so a
    dropout of 1.0 cannot loop forever.
    """
    outcomes = []
    for i in range(max_rounds):
        if a.digest() == b.digest():
            return i, outcomes
        outcomes.append(hub_sync(a, b, dropout_p, rng))
    return max_rounds, outcomes
