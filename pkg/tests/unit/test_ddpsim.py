"""Unit tests for the simulated data-parallel probe and initialization."""

import pytest

from gora_desk.adapter import adapter_bytes
from gora_desk.allocate import AllocConfig, plan_ranks
from gora_desk.ddpsim import (
    ReduceMode,
    WorkerTopology,
    check_single_copy,
    ddp_allocate_and_init,
    ddp_probe,
    reduce_round,
    shard_stream,
)
from gora_desk.errors import EmptyStreamError, HostBufferError
from gora_desk.gorainit import InitConfig, gora_initialize
from gora_desk.probe import (
    HostBuffer,
    ImportanceSource,
    ProbeConfig,
    probe_weights,
    run_probe,
)

ALLOC = AllocConfig(r_ref=4, r_min=2, r_max=16)
INIT = InitConfig(gamma=0.05, seed=9)


class TestShardStream:
    """Test round-robin sharding."""

    def test_round_robin(self):
        """Test worker w gets batches w, w + W, ..."""
        shards = shard_stream(list(range(8)), 4)
        assert shards == [[0, 4], [1, 5], [2, 6], [3, 7]]

    def test_drops_partial_round(self):
        """Test an incomplete final round is dropped."""
        shards = shard_stream(list(range(7)), 2)
        assert shards == [[0, 2, 4], [1, 3, 5]]


class TestDdpProbe:
    """Test the distributed probe against a single worker."""

    @pytest.mark.parametrize("world", [1, 2, 4])
    def test_bit_identical_to_single_worker(self, hetero_task, world):
        """Test W workers over 8 batches reproduce the single-worker gradients."""
        batches = hetero_task.train_batches[:8]
        single = run_probe(hetero_task.network, batches, ProbeConfig(max_steps=8))
        outcome = ddp_probe(
            hetero_task.network,
            batches,
            WorkerTopology(world_size=world),
            ProbeConfig(max_steps=8 // world),
        )
        for layer in single.layers:
            assert outcome.result.grads[layer].tobytes() == single.grads[layer].tobytes()
        assert outcome.result.batches_consumed == 8
        assert outcome.result.peak_host_bytes == single.peak_host_bytes
        assert len(outcome.released) == (world - 1) * (8 // world) * 3

    def test_threaded_matches_sequential(self, hetero_task):
        """Test thread-pool workers reduce in the same order."""
        batches = hetero_task.train_batches[:8]
        cfg = ProbeConfig(max_steps=2)
        serial = ddp_probe(hetero_task.network, batches, WorkerTopology(world_size=4), cfg)
        threaded = ddp_probe(
            hetero_task.network, batches, WorkerTopology(world_size=4, threaded=True), cfg
        )
        for layer in serial.result.layers:
            assert threaded.result.grads[layer].tobytes() == serial.result.grads[layer].tobytes()

    def test_root_only(self, hetero_task):
        """Test root-only mode sees just worker 0's shard."""
        batches = hetero_task.train_batches[:8]
        outcome = ddp_probe(
            hetero_task.network,
            batches,
            WorkerTopology(world_size=2, reduce_mode=ReduceMode.ROOT_ONLY),
            ProbeConfig(max_steps=4),
        )
        root = run_probe(hetero_task.network, batches[0::2], ProbeConfig(max_steps=4))
        for layer in root.layers:
            assert outcome.result.grads[layer].tobytes() == root.grads[layer].tobytes()
        assert outcome.released == []

    def test_short_stream(self, hetero_task):
        """Test empty shards and too few rounds."""
        with pytest.raises(EmptyStreamError):
            ddp_probe(
                hetero_task.network,
                hetero_task.train_batches[:3],
                WorkerTopology(world_size=4),
                ProbeConfig(max_steps=1),
            )
        with pytest.raises(EmptyStreamError):
            ddp_probe(
                hetero_task.network,
                hetero_task.train_batches[:4],
                WorkerTopology(world_size=2),
                ProbeConfig(max_steps=4),
            )

    def test_last_batch_single_worker_matches_run_probe(self, hetero_task):
        """Test W=1 with last-batch importance reproduces run_probe's trace and stop."""
        cfg = ProbeConfig(
            max_steps=32,
            adaptive=True,
            importance_source=ImportanceSource.LAST_BATCH,
        )
        batches = hetero_task.train_batches[:32]
        single = run_probe(hetero_task.network, batches, cfg)
        outcome = ddp_probe(hetero_task.network, batches, WorkerTopology(world_size=1), cfg)
        assert outcome.result.importance_trace == single.importance_trace
        assert outcome.result.steps_used == single.steps_used
        for layer in single.layers:
            assert outcome.result.grads[layer].tobytes() == single.grads[layer].tobytes()

    def test_last_batch_uses_round_gradients(self, hetero_task):
        """Test last-batch importance follows the round mean, not the running mean."""
        batches = hetero_task.train_batches[:8]
        topology = WorkerTopology(world_size=2)
        running = ddp_probe(hetero_task.network, batches, topology, ProbeConfig(max_steps=4))
        last = ddp_probe(
            hetero_task.network,
            batches,
            topology,
            ProbeConfig(max_steps=4, importance_source=ImportanceSource.LAST_BATCH),
        )
        assert last.result.importance_trace[0] == running.result.importance_trace[0]
        assert last.result.importance_trace[1] != running.result.importance_trace[1]


class TestReduceRound:
    """Test the per-round gradient reduction."""

    def test_single_worker_passthrough(self, hetero_task):
        """Test one worker's gradients come back bit-identical."""
        net = hetero_task.network
        grads = [layer.weight * 0.1 for layer in net.layers]
        reduced = reduce_round([grads], net.target_layers())
        for layer in net.target_layers():
            assert reduced[layer].tobytes() == grads[layer].tobytes()
            assert reduced[layer] is not grads[layer]

    def test_mean_over_workers(self, hetero_task):
        """Test the reduction is the ordered sum divided by the worker count."""
        net = hetero_task.network
        first = [layer.weight for layer in net.layers]
        second = [layer.weight * 3.0 for layer in net.layers]
        reduced = reduce_round([first, second], net.target_layers())
        for layer in net.target_layers():
            expected = (first[layer] + second[layer]) / 2
            assert reduced[layer].tobytes() == expected.tobytes()


class TestCheckSingleCopy:
    """Test the host buffer single-copy check."""

    @staticmethod
    def _filled(net, skip=None):
        buffer = HostBuffer()
        for layer in net.target_layers():
            if layer != skip:
                buffer.allocate(layer, net.layers[layer].weight.shape)
        return buffer

    def test_exact_buffer_passes(self, hetero_task):
        """Test one slot per target layer passes."""
        net = hetero_task.network
        check_single_copy(self._filled(net), net, net.target_layers())

    def test_transient_extra_slot_fails(self, hetero_task):
        """Test a released extra slot still fails through the peak."""
        net = hetero_task.network
        buffer = self._filled(net)
        buffer.allocate(99, (4, 4))
        buffer.release(99)
        assert buffer.allocated_bytes == sum(
            net.layers[layer].weight.nbytes for layer in net.target_layers()
        )
        with pytest.raises(HostBufferError, match="peak"):
            check_single_copy(buffer, net, net.target_layers())

    def test_missing_slot_fails(self, hetero_task):
        """Test a target layer without a slot fails."""
        net = hetero_task.network
        targets = net.target_layers()
        buffer = self._filled(net, skip=targets[-1])
        with pytest.raises(HostBufferError):
            check_single_copy(buffer, net, targets)

    def test_wrong_slot_shape_fails(self, hetero_task):
        """Test a slot smaller than the layer's weight fails on bytes."""
        net = hetero_task.network
        targets = net.target_layers()
        buffer = self._filled(net, skip=targets[0])
        buffer.allocate(targets[0], (2, 2))
        with pytest.raises(HostBufferError, match="single copy"):
            check_single_copy(buffer, net, targets)


class TestDdpAllocateAndInit:
    """Test rank broadcast and adapter broadcast."""

    @pytest.mark.parametrize("world", [1, 2, 4])
    def test_matches_single_worker(self, hetero_task, world):
        """Test every worker holds the single-worker plan and adapters."""
        probe = run_probe(
            hetero_task.network, hetero_task.train_batches[:8], ProbeConfig(max_steps=8)
        )
        plan = plan_ranks(probe_weights(hetero_task.network, probe), probe.grads, ALLOC)
        adapters, _ = gora_initialize(plan, probe.grads, INIT)

        outcome = ddp_allocate_and_init(
            hetero_task.network, probe, WorkerTopology(world_size=world), ALLOC, INIT
        )
        assert all(p.ranks == plan.ranks for p in outcome.worker_plans)
        expected = adapter_bytes(adapters)
        assert all(adapter_bytes(a) == expected for a in outcome.worker_adapters)
        assert len(set(outcome.checksums)) == 1

    def test_event_order(self, hetero_task):
        """Test importances are broadcast before adapters."""
        probe = run_probe(
            hetero_task.network, hetero_task.train_batches[:4], ProbeConfig(max_steps=4)
        )
        outcome = ddp_allocate_and_init(
            hetero_task.network, probe, WorkerTopology(world_size=4), ALLOC, INIT
        )
        assert [event.kind for event in outcome.events] == ["importance", "adapters"]
        assert [event.order for event in outcome.events] == [0, 1]
        assert outcome.events[1].targets == [1, 2, 3]
        assert outcome.events[1].checksum == outcome.checksums[0]
