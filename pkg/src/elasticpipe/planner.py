"""Plan assembly: sequence grouping co-optimized with checkpointing.

Sequences are classed by how many chunks they occupy.  A plan partitions the
sorted non-empty classes into contiguous ranges; each range becomes one 1F1B
unit with its own ladder checkpointing.  The cost of a plan is

    est_cost = len(units) * delta + sum(T_ckpt)

where ``delta`` is the warmup/cooldown overhead of one pipeline, and the
partition minimizing it is found by dynamic programming.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

from .checkpoint import (CheckpointInfeasible, CheckpointVector, expand_all, expand_ckpt, f_hat,
                         solve_ckpt_report)
from .config import Configs
from .cost_model import Chunk, ChunkKind, Phase, m_activation, t_total
from .schedule import (PipelineUnit, SimTrace, enumerate_windows, f2b_map, order_chunks,
                       simulate, warmup_cooldown_overhead)
from .sequence_processor import ChunkingError, ChunkingResult, fixed_size_chunking, process

MAX_AUTO_SLICES = 16
EXTRA_CANDIDATES = 2
MODES = ("main", "no_wbc", "no_ckpt", "full_ckpt")
# Branch-and-bound nodes per unit during planning; None proves every unit optimal.
NODE_LIMIT = 100


class PlanningError(RuntimeError):
    """No admissible plan; ``deficit`` is the smallest memory overshoot seen (bytes)."""

    def __init__(self, message: str, deficit: float = math.nan):
        super().__init__(message)
        self.deficit = deficit


Chain = Tuple[Chunk, ...]


@dataclass
class ChunkClassIndex:
    """Chains (a long sequence's chunks, or one batched chunk) keyed by chunk count."""

    classes: Dict[int, List[Chain]]

    @classmethod
    def from_chunking(cls, chunking: ChunkingResult) -> "ChunkClassIndex":
        chains: Dict[Tuple[str, int], List[Chunk]] = {}
        for k in chunking.chunks:
            key = ("chunk", k.id) if k.kind == ChunkKind.BATCHED else ("seq", int(k.seq_id))
            chains.setdefault(key, []).append(k)
        classes: Dict[int, List[Chain]] = {}
        for chain in chains.values():
            chain.sort(key=lambda c: c.context)
            classes.setdefault(len(chain), []).append(tuple(chain))
        for members in classes.values():
            members.sort(key=lambda c: c[0].id)
        return cls(dict(sorted(classes.items())))

    @property
    def counts(self) -> List[int]:
        return list(self.classes)

    def chains(self, lo: int, hi: int) -> List[Chain]:
        """Chains of the non-empty classes ``counts[lo:hi]``."""
        out: List[Chain] = []
        for count in self.counts[lo:hi]:
            out.extend(self.classes[count])
        return out


def partition_classes(cost: Callable[[int, int], float], m: int,
                      delta: float) -> Tuple[float, List[Tuple[int, int]]]:
    """Optimal split of ``m`` ordered classes into contiguous ranges.

    ``cost(k, i)`` is the checkpointing cost of one unit holding classes
    ``k..i-1`` (``math.inf`` if inadmissible).  Returns the total cost,
    ``sum(delta + cost)`` over ranges, and the ranges as ``(k, i)`` pairs.
    """
    best = [0.0] + [math.inf] * m
    back = [0] * (m + 1)
    for i in range(1, m + 1):
        for k in range(i):
            c = best[k] + delta + cost(k, i)
            if c < best[i]:
                best[i], back[i] = c, k
    if math.isinf(best[m]):
        return math.inf, []
    ranges: List[Tuple[int, int]] = []
    i = m
    while i > 0:
        ranges.append((back[i], i))
        i = back[i]
    return best[m], ranges[::-1]


@dataclass
class UnitPlan:
    unit: PipelineUnit
    f2b: List[int]
    ckpt: CheckpointVector
    t_ckpt: float
    classes: Tuple[int, ...] = ()
    # the ladder vector is a proven MILP optimum (fixed policies count as proven)
    optimal: bool = True

    def ckpt_map(self, pp_degree: int) -> Dict[Tuple[int, int], int]:
        return expand_all(self.unit, self.ckpt, self.f2b, pp_degree)


@dataclass
class _UnitOutcome:
    plan: Optional[UnitPlan]
    deficit: float


def _signature(chains: Sequence[Chain], policy: str) -> Tuple:
    return (policy,) + tuple((k.kind.value, k.context, k.slices, k.tail, k.seq_id)
                             for chain in chains for k in chain)


def evaluate_unit(chains: Sequence[Chain], configs: Configs, policy: str = "milp",
                  strict: bool = False, node_limit: Optional[int] = None) -> _UnitOutcome:
    """Order chains into a unit and price its checkpointing under ``policy``.

    ``milp`` solves the ladder problem, ``zero`` forbids checkpointing and
    ``full`` checkpoints every layer everywhere.
    """
    cl, md, pr = configs.cluster, configs.model, configs.params
    unit = order_chunks(chains)
    windows = enumerate_windows(unit, cl)
    f2b = f2b_map(unit, cl.pp_degree)
    if policy == "milp":
        try:
            r = solve_ckpt_report(unit, windows, f2b, cl, md, pr, strict=strict,
                                  node_limit=node_limit)
        except CheckpointInfeasible as exc:
            return _UnitOutcome(None, exc.deficit)
        return _UnitOutcome(UnitPlan(unit, f2b, r.vector, r.t_ckpt, optimal=r.optimal), 0.0)
    vec = (CheckpointVector.zeros if policy == "zero" else CheckpointVector.full)(unit, cl, md)
    over = _fixed_overshoot(unit, windows, f2b, vec, configs, strict)
    if over > 0:
        return _UnitOutcome(None, over)
    return _UnitOutcome(UnitPlan(unit, f2b, vec, f_hat(unit, pr, cl, md) * vec.total), 0.0)


def _fixed_overshoot(unit, windows, f2b, vec, configs: Configs, strict: bool) -> float:
    cl, md = configs.cluster, configs.model
    pos = {c.id: k for k, c in enumerate(unit.chunks)}
    worst = -math.inf
    for p, stage_windows in enumerate(windows, start=1):
        ms = max(md.m_model_states) if strict else md.m_model_states[p - 1]
        for w in stage_windows:
            acts = [m_activation(unit.chunks[pos[cid]],
                                 expand_ckpt(vec, p, pos[cid], f2b, cl.pp_degree), cl, md)
                    for cid in w]
            worst = max(worst, ms + math.fsum(acts) - cl.mem_capacity)
    return worst


@dataclass
class Grouping:
    units: List[UnitPlan]
    cost: float
    delta: float
    deficit: float = 0.0


def group_sequences(index: ChunkClassIndex, configs: Configs, delta: Optional[float] = None,
                    policy: str = "milp", strict: bool = False, jobs: int = 1,
                    cache: Optional[Dict[Tuple, _UnitOutcome]] = None,
                    node_limit: Optional[int] = None) -> Grouping:
    """DP over contiguous class ranges; every range is priced by :func:`evaluate_unit`.

    All ``m (m + 1) / 2`` candidate units are evaluated first (on up to
    ``jobs`` threads), then the table is filled by a single coordinator.
    """
    counts = index.counts
    m = len(counts)
    if m == 0:
        raise PlanningError("no sequences to schedule")
    if delta is None:
        all_chunks = [k for c in index.chains(0, m) for k in c]
        delta = warmup_cooldown_overhead(all_chunks, configs.params, configs.cluster,
                                         configs.model)
    cache = {} if cache is None else cache
    pairs = [(k, i) for i in range(1, m + 1) for k in range(i)]
    tag = f"{policy}/{'strict' if strict else 'stage'}/{node_limit}"
    sigs = {(k, i): _signature(index.chains(k, i), tag) for k, i in pairs}
    todo = [(k, i) for k, i in pairs if sigs[(k, i)] not in cache]
    todo = list({sigs[p]: p for p in todo}.values())

    def run(pair):
        return evaluate_unit(index.chains(*pair), configs, policy, strict, node_limit)

    if jobs > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, todo))
    else:
        results = [run(p) for p in todo]
    for p, r in zip(todo, results):
        cache[sigs[p]] = r

    def cost(k, i):
        out = cache[sigs[(k, i)]]
        return math.inf if out.plan is None else out.plan.t_ckpt

    total, ranges = partition_classes(cost, m, delta)
    if not ranges:
        deficit = min(cache[sigs[p]].deficit for p in pairs if cache[sigs[p]].plan is None)
        raise PlanningError(f"every grouping exceeds device memory (smallest deficit "
                            f"{deficit:.4g} bytes)", deficit)
    units = []
    for k, i in ranges:
        up = cache[sigs[(k, i)]].plan
        units.append(UnitPlan(up.unit, up.f2b, up.ckpt, up.t_ckpt, tuple(counts[k:i]),
                              up.optimal))
    return Grouping(units, total, delta)


@dataclass
class SchedulePlan:
    units: List[UnitPlan]
    chunking: ChunkingResult
    est_cost: float
    delta: float
    n_slices: int
    mode: str = "main"
    metadata: Dict[str, object] = field(default_factory=dict)
    # wall-clock planning time; informational, never serialized
    solve_seconds: float = 0.0

    @property
    def total_t_ckpt(self) -> float:
        return math.fsum(u.t_ckpt for u in self.units)

    def recomputed_cost(self) -> float:
        """``est_cost`` rebuilt from the units, summed in the DP's order."""
        total = 0.0
        for u in self.units:
            total = total + self.delta + u.t_ckpt
        return total


def _chunking(lengths: Sequence[int], n_slices: int, configs: Configs, mode: str,
              token_size: Optional[int] = None) -> ChunkingResult:
    cl, md, pr = configs.cluster, configs.model, configs.params
    if mode == "no_wbc":
        if token_size is None:
            token_size = process(lengths, n_slices, pr, cl, md).mesh.token_threshold
        return fixed_size_chunking(lengths, token_size, pr, cl, md)
    return process(lengths, n_slices, pr, cl, md)


def stage_work(chunks: Sequence[Chunk], configs: Configs) -> float:
    """Forward plus backward time of every chunk on one stage."""
    cl, md, pr = configs.cluster, configs.model, configs.params
    return math.fsum(t_total(k, Phase.FORWARD, pr, cl, md) + t_total(k, Phase.BACKWARD, pr, cl, md)
                     for k in chunks)


_POLICY = {"main": "milp", "no_wbc": "milp", "no_ckpt": "zero", "full_ckpt": "full"}


def _plan_at(lengths, n_slices, configs, mode, strict, jobs, cache, node_limit) -> SchedulePlan:
    chunking = _chunking(lengths, n_slices, configs, mode)
    index = ChunkClassIndex.from_chunking(chunking)
    g = group_sequences(index, configs, policy=_POLICY[mode], strict=strict, jobs=jobs,
                        cache=cache, node_limit=node_limit)
    return SchedulePlan(units=g.units, chunking=chunking, est_cost=g.cost, delta=g.delta,
                        n_slices=n_slices, mode=mode)


def plan(lengths: Sequence[int], configs: Configs, n_slices: Optional[int] = None,
         mode: str = "main", strict: bool = False, jobs: int = 1,
         seed: Optional[int] = None, node_limit: Optional[int] = NODE_LIMIT) -> SchedulePlan:
    """Best plan over the candidate slice counts.

    With ``n_slices=None`` the sweep starts at 1 and stops two candidates after
    the first slice count that admits any plan (capped at 16).  Within one
    slice count the grouping minimizes ``est_cost``; across slice counts plans
    are ranked by ``est_cost`` plus the per-stage compute of all chunks, since
    finer slicing pays more fixed per-chunk cost that ``est_cost`` omits.  ``node_limit``
    caps branch-and-bound per unit; units stopped early keep their best
    incumbent and are counted in ``metadata["unproven_units"]``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
    if not lengths:
        raise PlanningError("empty workload")
    started = time.perf_counter()
    cache: Dict[Tuple, _UnitOutcome] = {}
    candidates = [n_slices] if n_slices is not None else list(range(1, MAX_AUTO_SLICES + 1))
    tried: List[Dict[str, object]] = []
    best: Optional[SchedulePlan] = None
    best_score = math.inf
    first_ok: Optional[int] = None
    deficit = math.inf
    for n in candidates:
        if first_ok is not None and n > first_ok + EXTRA_CANDIDATES:
            break
        if n > max(lengths):
            break
        try:
            p = _plan_at(lengths, n, configs, mode, strict, jobs, cache, node_limit)
        except ChunkingError as exc:
            tried.append({"n_slices": n, "status": "chunking", "reason": str(exc)})
            continue
        except PlanningError as exc:
            deficit = min(deficit, exc.deficit)
            tried.append({"n_slices": n, "status": "infeasible", "deficit": exc.deficit})
            continue
        score = p.est_cost + stage_work(p.chunking.chunks, configs)
        tried.append({"n_slices": n, "status": "ok", "est_cost": p.est_cost,
                      "score": score, "units": len(p.units)})
        if first_ok is None:
            first_ok = n
        if best is None or score < best_score:
            best, best_score = p, score
    if best is None:
        raise PlanningError(f"no feasible slice count for mode {mode} "
                            f"(smallest memory deficit {deficit:.4g} bytes)", deficit)
    best.metadata = {
        "configs": configs.to_dict(),
        "seed": seed,
        "strict": strict,
        "auto_slices": n_slices is None,
        "candidates": tried,
        "node_limit": node_limit,
        "unproven_units": sum(not u.optimal for u in best.units),
    }
    best.solve_seconds = time.perf_counter() - started
    return best


def plan_ablation(lengths: Sequence[int], mode: str, configs: Configs,
                  n_slices: Optional[int] = None, strict: bool = False, jobs: int = 1,
                  seed: Optional[int] = None,
                  node_limit: Optional[int] = NODE_LIMIT) -> SchedulePlan:
    """Baselines: ``no_wbc`` fixed-size chunking, ``no_ckpt`` and ``full_ckpt`` fixed ladders."""
    if mode == "main":
        raise ValueError("plan_ablation takes an ablation mode")
    return plan(lengths, configs, n_slices=n_slices, mode=mode, strict=strict, jobs=jobs,
                seed=seed, node_limit=node_limit)


@dataclass
class PlanSimulation:
    traces: List[SimTrace]
    total_time: float
    bubble_ratio: float
    violations: List[Tuple[int, int]]


def simulate_plan(p: SchedulePlan, configs: Configs, hop_latency: float = 0.0) -> PlanSimulation:
    """Run every unit back to back; units accumulate gradients sequentially."""
    cl = configs.cluster
    traces = [simulate(u.unit, u.ckpt_map(cl.pp_degree), configs.params, cl, configs.model,
                       hop_latency) for u in p.units]
    total = math.fsum(t.makespan for t in traces)
    busy = math.fsum((1.0 - t.bubble_ratio) * cl.pp_degree * t.makespan for t in traces)
    bubble = 0.0 if total <= 0 else max(0.0, 1.0 - busy / (cl.pp_degree * total))
    violations = [(ui, s) for ui, t in enumerate(traces) for s in t.violations]
    return PlanSimulation(traces, total, bubble, violations)
