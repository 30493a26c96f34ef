import json
import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from elasticpipe.config import Configs, load_config
from elasticpipe.cost_model import ClusterConfig, CostParams, ModelConfig

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def frozen():
    return json.loads((ROOT / "tests" / "oracles" / "frozen.json").read_text())


@pytest.fixture(scope="session")
def desk() -> Configs:
    return load_config(CONFIGS / "desk.json")


@pytest.fixture(scope="session")
def desk_dp8() -> Configs:
    return load_config(CONFIGS / "desk_dp8.json")


def make_configs(dp=2, ds=1, layers=4, capacity=1e12, m_token=1.0, ms=1.0,
                 hidden=8, elem=2, params=None) -> Configs:
    """Small hand-checkable configuration."""
    cl = ClusterConfig(num_gpus=dp * ds, pp_degree=dp, sp_degree=ds, mem_capacity=capacity,
                       all2all_bandwidth={ds: 1e12} if ds > 1 else {},
                       all2all_latency={ds: 0.0} if ds > 1 else {})
    md = ModelConfig(layers=layers, hidden_dim=hidden, elem_size=elem, m_token=m_token,
                     m_model_states=(ms,) * dp)
    pr = params or CostParams(1e-9, 1e-6, 1e-3, 2e-9, 2e-6, 2e-3)
    return Configs(cl, md, pr)


def random_chains(rng, max_long=2, max_batched=5, lo=256, hi=4096):
    """Random chains: split/hybrid chunks of a few long sequences plus batched chunks."""
    from elasticpipe.cost_model import Chunk, ChunkKind

    chains, cid, seq = [], 0, 0
    for _ in range(int(rng.integers(0, max_long + 1))):
        parts = int(rng.integers(2, 5))
        ctx, chain = 0, []
        for j in range(parts):
            s = int(rng.integers(lo, hi))
            if j < parts - 1:
                chain.append(Chunk(cid, ChunkKind.SPLIT, ctx, (s,), False, seq_id=seq, owners=(seq,)))
            else:
                extra = [int(rng.integers(lo // 4, lo)) for _ in range(int(rng.integers(0, 3)))]
                owners = (seq,) + tuple(range(seq + 1, seq + 1 + len(extra)))
                chain.append(Chunk(cid, ChunkKind.HYBRID, ctx, (s, *extra), True, seq_id=seq,
                                   owners=owners))
                seq += len(extra)
            cid += 1
            ctx += s
        chains.append(tuple(chain))
        seq += 1
    for _ in range(int(rng.integers(1, max_batched + 1))):
        parts = [int(rng.integers(lo // 4, hi)) for _ in range(int(rng.integers(1, 4)))]
        owners = tuple(range(seq, seq + len(parts)))
        seq += len(parts)
        chains.append((Chunk(cid, ChunkKind.BATCHED, 0, tuple(parts), True, owners=owners),))
        cid += 1
    return chains


def random_unit(rng, **kwargs):
    from elasticpipe.schedule import order_chunks

    return order_chunks(random_chains(rng, **kwargs))


def balanced_unit(rng, configs, spread=0.03):
    """Unit whose chunks all take about the same backward time.

    Long sequences are cut on a balanced mesh; batched chunks are sized to the
    mesh time budget scaled by a factor in ``[1 - spread, 1]``.
    """
    from elasticpipe.cost_model import Chunk, ChunkKind
    from elasticpipe.schedule import order_chunks
    from elasticpipe.sequence_processor import _SliceTimer, split_longest

    cl, md, pr = configs.cluster, configs.model, configs.params
    length = int(rng.integers(8000, 40000))
    n = int(rng.integers(1, 5))
    mesh = split_longest(length, n, pr, cl, md)
    timer = _SliceTimer(pr, cl, md)
    chains, cid, seq = [], 0, 0
    for _ in range(int(rng.integers(0, 3)) if n > 1 else 0):
        ctx, chain = 0, []
        for s in mesh.slice_lengths:
            chain.append(Chunk(cid, ChunkKind.SPLIT, ctx, (s,), False, seq_id=seq, owners=(seq,)))
            cid += 1
            ctx += s
        chain.append(Chunk(cid, ChunkKind.HYBRID, ctx, (length - ctx,), True, seq_id=seq,
                           owners=(seq,)))
        cid += 1
        seq += 1
        chains.append(tuple(chain))
    for _ in range(int(rng.integers(2, 9))):
        budget = mesh.time_threshold * (1 - spread * float(rng.random()))
        s = timer.longest_slice(0, length, budget)
        chains.append((Chunk(cid, ChunkKind.BATCHED, 0, (s,), True, owners=(seq,)),))
        cid += 1
        seq += 1
    return order_chunks(chains)


def make_chain(seq, sizes, first_id):
    """Chunks of one sequence cut into ``sizes``; a single piece is a batched chunk."""
    from elasticpipe.cost_model import Chunk, ChunkKind

    if len(sizes) == 1:
        return (Chunk(first_id, ChunkKind.BATCHED, 0, (sizes[0],), True, owners=(seq,)),)
    out, ctx = [], 0
    for j, s in enumerate(sizes):
        last = j == len(sizes) - 1
        kind = ChunkKind.HYBRID if last else ChunkKind.SPLIT
        out.append(Chunk(first_id + j, kind, ctx, (s,), last, seq_id=seq, owners=(seq,)))
        ctx += s
    return tuple(out)


def injected_grouping(m, table, configs, delta):
    """Run group_sequences over ``m`` classes (chunk counts 1..m) whose unit
    costs come from ``table[(k, i)]`` (None marks an inadmissible unit)."""
    from elasticpipe.checkpoint import CheckpointVector
    from elasticpipe.planner import (ChunkClassIndex, UnitPlan, _UnitOutcome, _signature,
                                     group_sequences)
    from elasticpipe.schedule import f2b_map, order_chunks

    classes, cid = {}, 0
    for c in range(1, m + 1):
        classes[c] = [make_chain(c - 1, [100] * c, cid)]
        cid += c
    index = ChunkClassIndex(classes)
    dp = configs.cluster.pp_degree
    cache = {}
    for (k, i), cost in table.items():
        chains = index.chains(k, i)
        sig = _signature(chains, "milp/stage/None")
        if cost is None:
            cache[sig] = _UnitOutcome(None, 1.0)
            continue
        unit = order_chunks(chains)
        vec = CheckpointVector.zeros(unit, configs.cluster, configs.model)
        cache[sig] = _UnitOutcome(UnitPlan(unit, f2b_map(unit, dp), vec, cost), 0.0)
    return group_sequences(index, configs, delta=delta, cache=cache)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
