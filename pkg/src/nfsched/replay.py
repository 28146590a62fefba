"""Prioritized experience replay with actor-side staging buffers.

A binary sum tree keeps per-slot sampling mass so that drawing proportional
to priority and updating a priority are both O(log n).  The central buffer is
a fixed-capacity ring guarded by a lock; actors collect transitions in small
local buffers and flush them in one lock acquisition.  A tiny parameter
server hands consistent network snapshots to actors.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .validation import ensure_fraction, ensure_positive


@dataclass
class Transition:
    """One control step as seen by the learner."""

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    priority: float = 1.0
    terminal: bool = False


@dataclass
class Minibatch:
    """Stacked sample from the central buffer.

    indices/stamps identify the sampled slots so their priorities can be
    rewritten after the learner computes fresh TD errors; a stamp mismatch
    means the slot was overwritten in the meantime and is skipped.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    weights: np.ndarray
    indices: np.ndarray
    stamps: np.ndarray
    terminals: np.ndarray


class SumTree:
    """Array-backed binary tree whose internal nodes store subtree sums.

    Leaves are padded to a power of two.  Updates recompute the sums on the
    path to the root from their children, so the root stays consistent with
    the leaves instead of accumulating increment drift.
    """

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        base = 1
        while base < self.capacity:
            base *= 2
        self._base = base
        self._nodes = np.zeros(2 * base)

    @property
    def total(self) -> float:
        return float(self._nodes[1])

    def get(self, index: int) -> float:
        if not 0 <= index < self.capacity:
            raise IndexError(f"leaf index {index} out of range")
        return float(self._nodes[self._base + index])

    def leaf_values(self) -> np.ndarray:
        return self._nodes[self._base:self._base + self.capacity].copy()

    def set(self, index: int, value: float) -> None:
        if not 0 <= index < self.capacity:
            raise IndexError(f"leaf index {index} out of range")
        if not (value >= 0.0 and np.isfinite(value)):
            raise ValueError(f"priority must be finite and >= 0, got {value}")
        node = self._base + index
        self._nodes[node] = value
        node //= 2
        while node >= 1:
            self._nodes[node] = self._nodes[2 * node] + self._nodes[2 * node + 1]
            node //= 2

    def find_prefix(self, mass: float) -> int:
        """Leaf index i such that mass falls inside leaf i's cumulative span."""
        node = 1
        while node < self._base:
            left = self._nodes[2 * node]
            if mass < left:
                node = 2 * node
            else:
                mass -= left
                node = 2 * node + 1
        index = min(node - self._base, self.capacity - 1)
        # numeric edge: never land on an empty leaf when mass hugged a boundary
        while index > 0 and self._nodes[self._base + index] == 0.0:
            index -= 1
        return index


def importance_weights(probs: np.ndarray, size: int, beta: float) -> np.ndarray:
    """Raw importance corrections (size * P)^-beta, before max-normalization."""
    return np.power(size * np.asarray(probs, dtype=np.float64), -beta)


class PrioritizedBuffer:
    """Fixed-capacity ring buffer sampled proportionally to priority^alpha."""

    def __init__(self, capacity: int, alpha: float = 0.6, beta: float = 0.4,
                 eps_priority: float = 1e-3, seed: int = 0):
        ensure_positive("capacity", capacity)
        ensure_fraction("alpha", alpha)
        ensure_fraction("beta", beta)
        ensure_positive("eps_priority", eps_priority)
        self.capacity = int(capacity)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.eps_priority = float(eps_priority)
        self._tree = SumTree(self.capacity)
        self._data: list[Transition | None] = [None] * self.capacity
        self._stamps = np.full(self.capacity, -1, dtype=np.int64)
        self._write = 0
        self._size = 0
        self._inserts = 0
        self._max_priority = 1.0
        self._evictions = 0
        self._flushes = 0
        self._lock = threading.RLock()
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        with self._lock:
            return self._size

    # -- writes --------------------------------------------------------------

    def _store_locked(self, transition: Transition) -> None:
        slot = self._write
        if self._size == self.capacity:
            self._evictions += 1
        transition.priority = self._max_priority
        self._data[slot] = transition
        self._stamps[slot] = self._inserts
        self._tree.set(slot, transition.priority ** self.alpha)
        self._inserts += 1
        self._write = (self._write + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def store(self, transition: Transition) -> None:
        """Insert at the running maximum priority (1.0 while empty)."""
        with self._lock:
            self._store_locked(transition)

    def extend(self, transitions) -> None:
        """Insert a batch under a single lock acquisition."""
        with self._lock:
            for t in transitions:
                self._store_locked(t)
            self._flushes += 1

    # -- sampling and priority maintenance ------------------------------------

    def sample(self, n: int) -> Minibatch:
        """Stratified draw of n transitions with max-normalized importance
        weights."""
        ensure_positive("n", n)
        with self._lock:
            if self._size == 0:
                raise ValueError("cannot sample from an empty buffer")
            total = self._tree.total
            segment = total / n
            indices = np.empty(n, dtype=np.int64)
            for i in range(n):
                mass = self._rng.uniform(i * segment, (i + 1) * segment)
                indices[i] = self._tree.find_prefix(mass)
            leaf = np.array([self._tree.get(i) for i in indices])
            probs = leaf / total
            weights = importance_weights(probs, self._size, self.beta)
            weights = weights / weights.max()
            items = [self._data[i] for i in indices]
            stamps = self._stamps[indices].copy()
        return Minibatch(
            states=np.stack([t.state for t in items]),
            actions=np.stack([t.action for t in items]),
            rewards=np.array([t.reward for t in items]),
            next_states=np.stack([t.next_state for t in items]),
            weights=weights,
            indices=indices,
            stamps=stamps,
            terminals=np.array([t.terminal for t in items]),
        )

    def update_priorities(self, indices, td_errors, stamps=None) -> None:
        """Set priority |td| + eps for each sampled slot; slots overwritten
        since the sample (stamp mismatch) are silently skipped."""
        indices = np.asarray(indices, dtype=np.int64)
        td = np.abs(np.asarray(td_errors, dtype=np.float64))
        if indices.shape != td.shape:
            raise ValueError("indices and td_errors must have matching shapes")
        if not np.all(np.isfinite(td)):
            raise ValueError("td_errors must be finite")
        with self._lock:
            for k, slot in enumerate(indices):
                if stamps is not None and self._stamps[slot] != stamps[k]:
                    continue
                if self._data[slot] is None:
                    continue
                p = td[k] + self.eps_priority
                self._data[slot].priority = p
                self._tree.set(int(slot), p ** self.alpha)
                self._max_priority = max(self._max_priority, p)

    def evict_old(self, keep_fraction: float) -> int:
        """Drop the oldest transitions, keeping the newest fraction.  Returns
        the number evicted."""
        if not (0.0 < keep_fraction <= 1.0):
            raise ValueError("keep_fraction must lie in (0, 1]")
        with self._lock:
            keep = int(np.floor(self._size * keep_fraction + 0.5))
            drop = self._size - keep
            if drop <= 0:
                return 0
            if self._size == self.capacity:
                oldest_first = [(self._write + i) % self.capacity
                                for i in range(self._size)]
            else:
                oldest_first = list(range(self._size))
            survivors = [self._data[i] for i in oldest_first[drop:]]
            survivor_stamps = [self._stamps[i] for i in oldest_first[drop:]]
            self._tree = SumTree(self.capacity)
            self._data = [None] * self.capacity
            self._stamps = np.full(self.capacity, -1, dtype=np.int64)
            for i, (t, s) in enumerate(zip(survivors, survivor_stamps)):
                self._data[i] = t
                self._stamps[i] = s
                self._tree.set(i, t.priority ** self.alpha)
            self._size = keep
            self._write = keep % self.capacity
            self._evictions += drop
            return drop

    # -- introspection ---------------------------------------------------------

    def stats(self) -> dict:
        with self._lock:
            return {
                "size": self._size,
                "root_priority": self._tree.total,
                "evictions": self._evictions,
                "flushes": self._flushes,
            }

    def leaf_priorities(self) -> np.ndarray:
        with self._lock:
            return self._tree.leaf_values()


class LocalBuffer:
    """Per-actor staging area flushed to the central buffer in batches."""

    def __init__(self, flush_threshold: int = 100):
        ensure_positive("flush_threshold", flush_threshold)
        self.flush_threshold = int(flush_threshold)
        self._items: list[Transition] = []

    def __len__(self) -> int:
        return len(self._items)

    @property
    def full(self) -> bool:
        return len(self._items) >= self.flush_threshold

    def append(self, transition: Transition) -> None:
        self._items.append(transition)

    def drain(self) -> list[Transition]:
        items, self._items = self._items, []
        return items


def flush(local: LocalBuffer, central: PrioritizedBuffer) -> int:
    """Move everything from a local buffer into the central one."""
    items = local.drain()
    if items:
        central.extend(items)
    return len(items)


class ParamServer:
    """Versioned, torn-read-free snapshot exchange between learner and actors.

    publish() replaces the snapshot atomically; fetch() returns the current
    (version, snapshot) pair without blocking, or None before the first
    publish.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._snapshot: tuple[int, object] | None = None

    def publish(self, params) -> int:
        with self._lock:
            version = 1 if self._snapshot is None else self._snapshot[0] + 1
            self._snapshot = (version, params)
            return version

    def fetch(self) -> tuple[int, object] | None:
        return self._snapshot

    @property
    def version(self) -> int:
        snap = self._snapshot
        return 0 if snap is None else snap[0]
