"""Experience replay buffers and the mixed-batch sampler.

A buffer holds [state, action, reward, next_state, terminal] tuples under a
capacity bound with uniform reservoir retention, carries provenance metadata
(producing agent, task, round), and is content-addressed by the FNV-1a hash
of its canonical serialization. Published buffers are frozen and shared; the
mixed sampler draws training batches across the current, personal-past, and
incoming buffer groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .rng import Pcg32

DEFAULT_CAPACITY = 4096
DEFAULT_MIX = (0.5, 0.25, 0.25)  # (current, personal, incoming)


class EmptySourceError(ValueError):
    """Every sampling source is empty."""


class FrozenBufferError(RuntimeError):
    """A published buffer was offered a new transition."""


@dataclass(frozen=True, slots=True)
class Transition:
    state: bytes
    action: int
    reward: float
    next_state: bytes
    terminal: bool

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise ValueError(f"non-finite reward {self.reward}")
        if len(self.state) != len(self.next_state):
            raise ValueError("state/next_state length mismatch")
        if not 0 <= self.action <= 5:
            raise ValueError(f"action code {self.action} out of range")


@dataclass(frozen=True, slots=True)
class ErbMeta:
    agent_id: str
    task_id: str
    round: int
    created_seq: int = 0


@dataclass
class ExperienceReplayBuffer:
    meta: ErbMeta
    capacity: int = DEFAULT_CAPACITY
    entries: list[Transition] = field(default_factory=list)
    seen_count: int = 0
    _frozen: bool = field(default=False, repr=False, compare=False)
    _id_cache: int | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")

    def __len__(self) -> int:
        return len(self.entries)

    def offer(self, t: Transition, rng: Pcg32) -> bool:
        """Reservoir insert: below capacity always accept, else replace a
        uniform slot with probability capacity / seen_count."""
        if self._frozen:
            raise FrozenBufferError(f"buffer {self.meta} is published")
        self.seen_count += 1
        if len(self.entries) < self.capacity:
            self.entries.append(t)
            return True
        j = rng.below(self.seen_count)
        if j < self.capacity:
            self.entries[j] = t
            return True
        return False

    def freeze(self) -> "ExperienceReplayBuffer":
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def content_id(self) -> int:
        return erb_id(self)


def erb_id(erb: ExperienceReplayBuffer) -> int:
    """Content id: FNV-1a 64 over the canonical wire bytes.

    Cached once the buffer is frozen (published buffers never change)."""
    if erb._frozen and erb._id_cache is not None:
        return erb._id_cache
    from .wire import serialize_erb
    from .hashing import fnv1a64

    value = fnv1a64(serialize_erb(erb))
    if erb._frozen:
        erb._id_cache = value
    return value


def erb_id_hex(erb_id_value: int) -> str:
    return f"{erb_id_value:016x}"


def _nonempty(buffers: list[ExperienceReplayBuffer]) -> list[ExperienceReplayBuffer]:
    return [b for b in buffers if b.entries]


def sample_mixed(
    current: ExperienceReplayBuffer | None,
    personal: list[ExperienceReplayBuffer],
    incoming: list[ExperienceReplayBuffer],
    batch_size: int,
    mix: tuple[float, float, float] = DEFAULT_MIX,
    rng: Pcg32 | None = None,
) -> list[Transition]:
    """Draw a batch: pick a source category by the mix weights (renormalized
    over nonempty categories), a buffer uniformly within it, a transition
    uniformly within the buffer."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if rng is None:
        raise ValueError("rng is required")
    groups = [
        (_nonempty([current] if current is not None else []), mix[0]),
        (_nonempty(personal), mix[1]),
        (_nonempty(incoming), mix[2]),
    ]
    live = [(bufs, w) for bufs, w in groups if bufs and w > 0.0]
    if not live:
        # Retry with weights ignored: any nonempty category qualifies.
        live = [(bufs, 1.0) for bufs, w in groups if bufs]
    if not live:
        raise EmptySourceError("all replay sources are empty")
    total = sum(w for _, w in live)
    batch: list[Transition] = []
    for _ in range(batch_size):
        r = rng.uniform() * total
        acc = 0.0
        chosen = live[-1][0]
        for bufs, w in live:
            acc += w
            if r < acc:
                chosen = bufs
                break
        buf = chosen[rng.below(len(chosen))]
        batch.append(buf.entries[rng.below(len(buf.entries))])
    return batch
