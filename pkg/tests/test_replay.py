import threading

import numpy as np
import pytest
from scipy import stats as scipy_stats

from nfsched.replay import (
    LocalBuffer,
    ParamServer,
    PrioritizedBuffer,
    SumTree,
    Transition,
    flush,
    importance_weights,
)


def tr(tag, dim=2):
    state = np.full(dim, float(tag))
    return Transition(state, np.array([float(tag)]), float(tag), state + 1.0)


# ---------------------------------------------------------------------------
# sum tree


def test_sum_tree_prefix_lookup():
    tree = SumTree(4)
    for i, p in enumerate([1.0, 2.0, 3.0, 4.0]):
        tree.set(i, p)
    assert tree.total == pytest.approx(10.0)
    assert tree.find_prefix(0.5) == 0
    assert tree.find_prefix(1.5) == 1
    assert tree.find_prefix(3.5) == 2
    assert tree.find_prefix(9.9) == 3


def test_sum_tree_overwrite_updates_root():
    tree = SumTree(5)
    tree.set(2, 3.0)
    tree.set(2, 1.0)
    tree.set(4, 2.0)
    assert tree.total == pytest.approx(3.0)
    assert tree.get(2) == 1.0


def test_sum_tree_rejects_bad_values():
    tree = SumTree(4)
    with pytest.raises(ValueError):
        tree.set(0, -1.0)
    with pytest.raises(ValueError):
        tree.set(0, np.nan)
    with pytest.raises(IndexError):
        tree.set(4, 1.0)
    with pytest.raises(ValueError):
        SumTree(0)


def test_sum_tree_root_consistent_under_fuzzing():
    rng = np.random.default_rng(12)
    tree = SumTree(257)  # deliberately not a power of two
    reference = np.zeros(257)
    for _ in range(100_000):
        idx = int(rng.integers(0, 257))
        val = float(rng.uniform(0.0, 10.0))
        tree.set(idx, val)
        reference[idx] = val
    assert tree.total == pytest.approx(reference.sum(), rel=1e-9)
    assert np.allclose(tree.leaf_values(), reference)


# ---------------------------------------------------------------------------
# prioritized buffer


def test_store_uses_running_max_priority():
    buf = PrioritizedBuffer(capacity=8, alpha=1.0, seed=0)
    for i in range(3):
        buf.store(tr(i))
    assert np.allclose(buf.leaf_priorities()[:3], 1.0)
    buf.update_priorities([1], [2.5 - buf.eps_priority])
    buf.store(tr(3))
    assert buf.leaf_priorities()[3] == pytest.approx(2.5)


def test_ring_eviction_drops_oldest():
    buf = PrioritizedBuffer(capacity=3, alpha=1.0, seed=0)
    for i in range(4):
        buf.store(tr(i))
    assert len(buf) == 3
    stored = sorted(t.reward for t in buf._data)
    assert stored == [1.0, 2.0, 3.0]
    assert buf.stats()["evictions"] == 1


def test_sample_empty_buffer_raises():
    buf = PrioritizedBuffer(capacity=4)
    with pytest.raises(ValueError):
        buf.sample(2)


def test_importance_weight_raw_value():
    # size 4, P = 0.4, beta = 1 -> (4 * 0.4)^-1 = 0.625
    w = importance_weights(np.array([0.4]), 4, 1.0)
    assert w[0] == pytest.approx(0.625)


def test_sample_weights_max_normalized_and_shapes():
    buf = PrioritizedBuffer(capacity=8, alpha=1.0, beta=1.0, seed=1)
    for i in range(4):
        buf.store(tr(i))
    buf.update_priorities([0, 1, 2, 3], [1.0, 1.0, 1.0, 2.0 - buf.eps_priority])
    batch = buf.sample(64)
    assert batch.states.shape == (64, 2)
    assert batch.actions.shape == (64, 1)
    assert batch.weights.max() == pytest.approx(1.0)
    assert np.all(batch.weights > 0)
    # the rarest item (highest priority) carries the smallest weight
    heavy = batch.indices == 3
    assert heavy.any() and (~heavy).any()
    assert batch.weights[heavy].max() < batch.weights[~heavy].min()


def test_sampling_frequencies_track_priorities():
    buf = PrioritizedBuffer(capacity=4, alpha=1.0, beta=0.4, seed=7)
    for i in range(4):
        buf.store(tr(i))
    buf.update_priorities(
        [0, 1, 2, 3], np.array([1.0, 2.0, 3.0, 4.0]) - buf.eps_priority
    )
    counts = np.zeros(4)
    draws = 0
    for _ in range(25_000):
        batch = buf.sample(4)
        for idx in batch.indices:
            counts[idx] += 1
            draws += 1
    freq = counts / draws
    assert np.all(np.abs(freq - np.array([0.1, 0.2, 0.3, 0.4])) < 0.02)


def test_alpha_zero_sampling_is_uniform():
    buf = PrioritizedBuffer(capacity=4, alpha=0.0, beta=0.4, seed=9)
    for i in range(4):
        buf.store(tr(i))
    buf.update_priorities(
        [0, 1, 2, 3], np.array([1.0, 2.0, 3.0, 4.0]) - buf.eps_priority
    )
    counts = np.zeros(4)
    for _ in range(25_000):
        batch = buf.sample(4)
        for idx in batch.indices:
            counts[idx] += 1
    result = scipy_stats.chisquare(counts)
    assert result.pvalue > 0.01


def test_zero_td_error_keeps_positive_priority():
    buf = PrioritizedBuffer(capacity=4, alpha=0.6, seed=0)
    buf.store(tr(0))
    buf.update_priorities([0], [0.0])
    assert buf.leaf_priorities()[0] == pytest.approx(buf.eps_priority ** 0.6)
    assert buf._data[0].priority == pytest.approx(buf.eps_priority)


def test_stale_stamp_updates_are_skipped():
    buf = PrioritizedBuffer(capacity=2, alpha=1.0, seed=3)
    buf.store(tr(0))
    buf.store(tr(1))
    batch = buf.sample(2)
    buf.store(tr(2))  # overwrites slot 0
    buf.store(tr(3))  # overwrites slot 1
    before = buf.leaf_priorities().copy()
    buf.update_priorities(batch.indices, [50.0, 50.0], batch.stamps)
    assert np.array_equal(buf.leaf_priorities(), before)


def test_evict_old_keeps_newest():
    buf = PrioritizedBuffer(capacity=8, alpha=1.0, seed=0)
    for i in range(6):
        buf.store(tr(i))
    dropped = buf.evict_old(0.5)
    assert dropped == 3
    assert len(buf) == 3
    kept = sorted(t.reward for t in buf._data if t is not None)
    assert kept == [3.0, 4.0, 5.0]
    # wrapped ring: oldest live items go first
    buf2 = PrioritizedBuffer(capacity=4, alpha=1.0, seed=0)
    for i in range(6):
        buf2.store(tr(i))  # live: 2,3,4,5
    buf2.evict_old(0.5)
    kept2 = sorted(t.reward for t in buf2._data if t is not None)
    assert kept2 == [4.0, 5.0]
    buf2.store(tr(9))
    assert len(buf2) == 3


def test_flush_moves_everything_in_one_call():
    central = PrioritizedBuffer(capacity=16, seed=0)
    local = LocalBuffer(flush_threshold=3)
    for i in range(3):
        local.append(tr(i))
    assert local.full
    moved = flush(local, central)
    assert moved == 3
    assert len(local) == 0
    assert len(central) == 3
    assert central.stats()["flushes"] == 1


def test_concurrent_stores_preserve_every_transition():
    central = PrioritizedBuffer(capacity=4096, seed=0)
    n_threads, per_thread = 4, 500

    def worker(base):
        local = LocalBuffer(flush_threshold=50)
        for i in range(per_thread):
            local.append(tr(base + i))
            if local.full:
                flush(local, central)
        flush(local, central)

    threads = [
        threading.Thread(target=worker, args=(k * per_thread,))
        for k in range(n_threads)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(central) == n_threads * per_thread
    tags = sorted(t.reward for t in central._data if t is not None)
    assert tags == [float(i) for i in range(n_threads * per_thread)]


# ---------------------------------------------------------------------------
# parameter server


def test_param_server_versions_and_uninitialized_signal():
    server = ParamServer()
    assert server.fetch() is None
    assert server.version == 0
    assert server.publish({"w": 1}) == 1
    assert server.publish({"w": 2}) == 2
    version, snap = server.fetch()
    assert version == 2 and snap == {"w": 2}


def test_param_server_snapshots_never_torn():
    server = ParamServer()
    server.publish({"a": 1, "b": 1})
    stop = threading.Event()
    torn = []

    def reader():
        while not stop.is_set():
            got = server.fetch()
            if got is None:
                continue
            version, snap = got
            if snap["a"] != snap["b"] or snap["a"] != version:
                torn.append((version, snap))

    readers = [threading.Thread(target=reader) for _ in range(3)]
    for t in readers:
        t.start()
    for v in range(2, 2001):
        server.publish({"a": v, "b": v})
    stop.set()
    for t in readers:
        t.join()
    assert torn == []
