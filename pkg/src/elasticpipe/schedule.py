"""Heterogeneous 1F1B pipelines: chunk ordering, windows, and timing simulation.

Every stage runs a static op list.  Stage ``p`` (1-based) issues
``min(d_p - p + n_prefill - 1, n)`` warmup forwards, then alternates one
forward with one backward, then drains the remaining backwards.  The order
in which backwards are issued is shared by all stages and fixed by the last
stage: at each backward slot it takes the earliest forwarded chunk whose
backward dependency (the next slice of the same sequence) is already done.

Because the op lists are static, chunk windows (chunks resident on a stage
at each backward start) are structural and need no timing.  Timing is a
longest-path relaxation over the op lists, done in :mod:`.kernels`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import kernels
from .cost_model import (Chunk, ChunkKind, ClusterConfig, CostParams, ModelConfig, Phase, m_activation,
                         t_total)


class ScheduleError(ValueError):
    """A unit whose chunk order admits no valid 1F1B execution."""


class SimPhase(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    RECOMPUTE = "recompute"


class WindowPhase(str, enum.Enum):
    WARMUP = "warmup"
    STEADY = "steady"
    COOLDOWN = "cooldown"


def _chain_key(chunk: Chunk) -> Tuple[str, int]:
    # split and hybrid chunks chain through their long sequence; batched chunks stand alone
    if chunk.kind != ChunkKind.BATCHED and chunk.seq_id is not None:
        return ("seq", int(chunk.seq_id))
    return ("chunk", chunk.id)


@dataclass(frozen=True)
class PipelineUnit:
    """One 1F1B pipeline: chunks in forward order plus the longest chain length."""

    chunks: Tuple[Chunk, ...]
    n_prefill: int
    sequences: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "chunks", tuple(self.chunks))
        if not self.chunks:
            raise ScheduleError("a pipeline unit needs at least one chunk")
        chains = self.chains()
        longest = max(len(c) for c in chains)
        if self.n_prefill != longest:
            raise ScheduleError(f"n_prefill={self.n_prefill} but the longest chain has {longest}")
        for chain in chains:
            ctx = [self.chunks[i].context for i in chain]
            if ctx != sorted(ctx) or len(set(ctx)) != len(ctx):
                raise ScheduleError("chunks of a sequence must appear in slice order")
            if any(self.chunks[i].tail for i in chain[:-1]) or not self.chunks[chain[-1]].tail:
                raise ScheduleError("only the last chunk of a sequence may be its tail")

    @property
    def n(self) -> int:
        return len(self.chunks)

    def chains(self) -> List[List[int]]:
        """Forward positions grouped by sequence, in order of first appearance."""
        groups: Dict[Tuple[str, int], List[int]] = {}
        for i, k in enumerate(self.chunks):
            groups.setdefault(_chain_key(k), []).append(i)
        return list(groups.values())

    def links(self) -> Tuple[np.ndarray, np.ndarray]:
        """Forward positions of each chunk's previous and next slice (-1 if none)."""
        pred = np.full(self.n, -1, dtype=np.int64)
        succ = np.full(self.n, -1, dtype=np.int64)
        for chain in self.chains():
            for a, b in zip(chain, chain[1:]):
                succ[a] = b
                pred[b] = a
        return pred, succ


@dataclass(frozen=True)
class SimEvent:
    stage: int
    chunk: int
    phase: SimPhase
    start: float
    end: float


@dataclass(frozen=True)
class Window:
    stage: int
    time: float
    chunks: Tuple[int, ...]
    phase: WindowPhase
    memory: float


@dataclass
class SimTrace:
    events: List[SimEvent]
    makespan: float
    bubble_ratio: float
    peak_memory: List[float]
    memory_series: List[List[Tuple[float, float]]]
    windows: List[Window] = field(default_factory=list)
    capacity: float = math.inf

    @property
    def violations(self) -> List[int]:
        """Stages (1-based) whose peak memory exceeds device capacity."""
        return [p + 1 for p, m in enumerate(self.peak_memory) if m > self.capacity]


def order_chunks(group: Iterable[Sequence[Chunk]]) -> PipelineUnit:
    """Build a unit from chains (a long sequence's chunks, or one batched chunk).

    Longer chains go first; ties by more tokens, then by first chunk id.
    """
    chains = [tuple(c) for c in group if len(c)]
    if not chains:
        raise ScheduleError("empty group")
    chains.sort(key=lambda c: (-len(c), -sum(k.tokens for k in c), c[0].id))
    chunks = tuple(k for c in chains for k in c)
    seqs = sorted({o for k in chunks for o in (k.owners or ((k.seq_id,) if k.seq_id is not None else ()))})
    return PipelineUnit(chunks=chunks, n_prefill=max(len(c) for c in chains), sequences=tuple(seqs))


def warmup_count(unit: PipelineUnit, stage: int, pp_degree: int) -> int:
    return min(pp_degree - stage + unit.n_prefill - 1, unit.n)


def backward_order(unit: PipelineUnit, pp_degree: int) -> List[int]:
    """Forward positions in the order their backwards are issued."""
    _, succ = unit.links()
    n = unit.n
    forwarded = warmup_count(unit, pp_degree, pp_degree)
    done = np.zeros(n, dtype=bool)
    order: List[int] = []

    def pick():
        for k in range(forwarded):
            if not done[k] and (succ[k] < 0 or done[succ[k]]):
                done[k] = True
                order.append(k)
                return
        raise ScheduleError("no backward is ready at a 1F1B backward slot; chunk order invalid")

    while forwarded < n:
        forwarded += 1
        pick()
    while len(order) < n:
        pick()
    return order


def f2b_map(unit: PipelineUnit, pp_degree: int) -> List[int]:
    """``f2b[k]`` is the backward position of the chunk at forward position ``k``."""
    f2b = [0] * unit.n
    for pos, k in enumerate(backward_order(unit, pp_degree)):
        f2b[k] = pos
    return f2b


def stage_ops(unit: PipelineUnit, pp_degree: int) -> List[List[Tuple[int, bool, WindowPhase]]]:
    """Per-stage op lists of ``(forward position, is_backward, phase)``."""
    order = backward_order(unit, pp_degree)
    n = unit.n
    out = []
    for p in range(1, pp_degree + 1):
        w = warmup_count(unit, p, pp_degree)
        ops = [(k, False, WindowPhase.WARMUP) for k in range(w)]
        b = 0
        for f in range(w, n):
            ops.append((f, False, WindowPhase.STEADY))
            ops.append((order[b], True, WindowPhase.STEADY))
            b += 1
        ops.extend((order[j], True, WindowPhase.COOLDOWN) for j in range(b, n))
        out.append(ops)
    return out


def _structural_windows(unit: PipelineUnit, pp_degree: int):
    """Yield ``(stage, op index, resident forward positions, phase)`` at every backward start."""
    for p, ops in enumerate(stage_ops(unit, pp_degree), start=1):
        resident: List[int] = []
        for j, (k, bwd, phase) in enumerate(ops):
            if not bwd:
                resident.append(k)
            else:
                yield p, j, tuple(sorted(resident)), phase
                resident.remove(k)


def enumerate_windows(unit: PipelineUnit, cluster: ClusterConfig) -> List[List[FrozenSet[int]]]:
    """Distinct chunk-id windows per stage, in order of first occurrence."""
    per_stage: List[List[FrozenSet[int]]] = [[] for _ in range(cluster.pp_degree)]
    seen = [set() for _ in range(cluster.pp_degree)]
    for p, _, resident, _ in _structural_windows(unit, cluster.pp_degree):
        ids = frozenset(unit.chunks[k].id for k in resident)
        if ids not in seen[p - 1]:
            seen[p - 1].add(ids)
            per_stage[p - 1].append(ids)
    return per_stage


def steady_window_size(unit: PipelineUnit, stage: int, pp_degree: int) -> int:
    return pp_degree - stage + unit.n_prefill


CkptMap = Mapping[Tuple[int, int], int]


def simulate(unit: PipelineUnit, ckpt: Optional[CkptMap], params: CostParams,
             cluster: ClusterConfig, model: ModelConfig, hop_latency: float = 0.0) -> SimTrace:
    """Time the unit's 1F1B execution and trace per-stage memory.

    ``ckpt`` maps ``(stage, chunk id)`` to checkpointed layers on that stage;
    missing entries mean none.  Per stage, a chunk's forward takes
    ``t_total(Forward)``, its backward ``t_total(Backward)``, and each
    checkpointed layer adds one layer's forward time of recomputation right
    before the backward.
    """
    dp, n = cluster.pp_degree, unit.n
    lps = model.layers_per_stage(cluster)
    ckpt = ckpt or {}
    layers = np.zeros((dp, n), dtype=np.int64)
    for p in range(dp):
        for k, c in enumerate(unit.chunks):
            v = int(ckpt.get((p + 1, c.id), 0))
            if not 0 <= v <= lps:
                raise ValueError(f"ckpt({p + 1}, {c.id})={v} outside [0, {lps}]")
            layers[p, k] = v
    t_f = np.array([t_total(c, Phase.FORWARD, params, cluster, model) for c in unit.chunks])
    t_b = np.array([t_total(c, Phase.BACKWARD, params, cluster, model) for c in unit.chunks])
    rec = layers * (t_f / lps)[None, :]
    fwd_dur = np.ascontiguousarray(np.broadcast_to(t_f, (dp, n)))
    bwd_dur = rec + t_b[None, :]

    ops = stage_ops(unit, dp)
    op_chunk = np.array([[k for k, _, _ in s] for s in ops], dtype=np.int64)
    op_bwd = np.array([[b for _, b, _ in s] for s in ops], dtype=np.bool_)
    pred, succ = unit.links()
    status, f_start, f_end, b_start, b_end = kernels.schedule_times(
        op_chunk, op_bwd, fwd_dur, bwd_dur, pred, succ, float(hop_latency))
    if status != kernels.OK:
        raise ScheduleError("simulation deadlocked; chunk order violates slice dependencies")

    events: List[SimEvent] = []
    acts = [[m_activation(c, int(layers[p, k]), cluster, model) for k, c in enumerate(unit.chunks)]
            for p in range(dp)]
    series: List[List[Tuple[float, float]]] = []
    peaks: List[float] = []
    windows: List[Window] = []
    for p in range(dp):
        base = model.m_model_states[p]
        resident: List[int] = []
        points: List[Tuple[float, float]] = [(0.0, base)]
        for k, bwd, phase in ops[p]:
            cid = unit.chunks[k].id
            if not bwd:
                events.append(SimEvent(p + 1, cid, SimPhase.FORWARD, float(f_start[p, k]),
                                       float(f_end[p, k])))
                resident.append(k)
                points.append((float(f_start[p, k]), base + math.fsum(acts[p][j] for j in resident)))
                continue
            t0 = float(b_start[p, k])
            mem = base + math.fsum(acts[p][j] for j in resident)
            windows.append(Window(p + 1, t0, tuple(sorted(unit.chunks[j].id for j in resident)),
                                  phase, mem))
            split = t0 + float(rec[p, k])
            if rec[p, k] > 0:
                events.append(SimEvent(p + 1, cid, SimPhase.RECOMPUTE, t0, split))
            events.append(SimEvent(p + 1, cid, SimPhase.BACKWARD, split, float(b_end[p, k])))
            resident.remove(k)
            points.append((float(b_end[p, k]), base + math.fsum(acts[p][j] for j in resident)))
        series.append(points)
        peaks.append(max(m for _, m in points))

    makespan = float(max(b_end.max(), f_end.max()))
    busy = float(fwd_dur.sum() + bwd_dur.sum())
    bubble = 0.0 if makespan <= 0 else max(0.0, 1.0 - busy / (dp * makespan))
    events.sort(key=lambda e: (e.stage, e.start, e.end))
    return SimTrace(events=events, makespan=makespan, bubble_ratio=bubble, peak_memory=peaks,
                    memory_series=series, windows=windows, capacity=cluster.mem_capacity)


def warmup_cooldown_overhead(chunks: Union[Iterable[Chunk], Iterable[PipelineUnit]],
                             params: CostParams, cluster: ClusterConfig,
                             model: ModelConfig) -> float:
    """``(d_p - 1)`` times the mean forward-plus-backward chunk time."""
    items = list(chunks)
    flat: List[Chunk] = []
    for it in items:
        flat.extend(it.chunks if isinstance(it, PipelineUnit) else (it,))
    if not flat:
        raise ValueError("need at least one chunk")
    per = [t_total(c, Phase.FORWARD, params, cluster, model)
           + t_total(c, Phase.BACKWARD, params, cluster, model) for c in flat]
    return (cluster.pp_degree - 1) * math.fsum(per) / len(per)
