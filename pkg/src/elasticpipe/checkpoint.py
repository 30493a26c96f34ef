"""Stage-aware, chunk-level checkpointing for one pipeline unit.

Checkpointing decisions are tied along pipeline anti-diagonals: the chunk at
forward position ``k`` on stage ``p`` (1-based) uses ladder variable

    index(p, k) = f2b[k] + d_p - p        (0-based f2b)

so the unit has ``n + d_p - 1`` integer variables, each in ``[0, L/d_p]``.
Recomputation on one diagonal delays every stage by the same amount, which
is why the total checkpointing cost is ``F_hat * sum(values)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from .cost_model import (ClusterConfig, CostParams, ModelConfig, Phase, linearize, m_activation,
                         t_total)
from .milp import Infeasible, MilpInstance, solve
from .schedule import PipelineUnit


class CheckpointInfeasible(Infeasible):
    """Even the most memory-frugal checkpointing leaves some window over capacity."""

    def __init__(self, message: str, deficit: float):
        super().__init__(message)
        self.deficit = deficit


@dataclass(frozen=True)
class CheckpointVector:
    values: Tuple[int, ...]
    upper: int

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        if any(not 0 <= v <= self.upper for v in self.values):
            raise ValueError(f"ladder values must lie in [0, {self.upper}]")

    @property
    def total(self) -> int:
        return sum(self.values)

    @classmethod
    def zeros(cls, unit: PipelineUnit, cluster: ClusterConfig, model: ModelConfig):
        return cls((0,) * (unit.n + cluster.pp_degree - 1), model.layers_per_stage(cluster))

    @classmethod
    def full(cls, unit: PipelineUnit, cluster: ClusterConfig, model: ModelConfig):
        lps = model.layers_per_stage(cluster)
        return cls((lps,) * (unit.n + cluster.pp_degree - 1), lps)


def ladder_index(stage: int, k: int, f2b: Sequence[int], pp_degree: int) -> int:
    if not 1 <= stage <= pp_degree:
        raise IndexError(f"stage {stage} outside [1, {pp_degree}]")
    if not 0 <= k < len(f2b):
        raise IndexError(f"forward position {k} outside [0, {len(f2b)})")
    return f2b[k] + pp_degree - stage


def expand_ckpt(ckpt: CheckpointVector, stage: int, k: int, f2b: Sequence[int],
                pp_degree: int) -> int:
    """Checkpointed layers of the chunk at forward position ``k`` on ``stage``."""
    return ckpt.values[ladder_index(stage, k, f2b, pp_degree)]


def expand_all(unit: PipelineUnit, ckpt: CheckpointVector, f2b: Sequence[int],
               pp_degree: int) -> Dict[Tuple[int, int], int]:
    """``(stage, chunk id) -> layers`` for every pair, as the simulator expects."""
    return {(p, c.id): expand_ckpt(ckpt, p, k, f2b, pp_degree)
            for p in range(1, pp_degree + 1) for k, c in enumerate(unit.chunks)}


def _maximal(windows: Sequence[FrozenSet[int]]) -> List[FrozenSet[int]]:
    kept: List[FrozenSet[int]] = []
    for w in sorted(windows, key=len, reverse=True):
        if not any(w <= other for other in kept):
            kept.append(w)
    # restore first-occurrence order
    rank = {w: i for i, w in enumerate(windows)}
    return sorted(kept, key=rank.__getitem__)


def _capacity(stage: int, cluster: ClusterConfig, model: ModelConfig, strict: bool) -> float:
    ms = max(model.m_model_states) if strict else model.m_model_states[stage - 1]
    return cluster.mem_capacity - ms


def build_milp(unit: PipelineUnit, windows: Sequence[Sequence[FrozenSet[int]]],
               f2b: Sequence[int], cluster: ClusterConfig, model: ModelConfig,
               strict: bool = False, prune_dominated: bool = True) -> MilpInstance:
    """Memory constraints over the ladder variables, objective ``min sum(values)``.

    Each window on stage ``p`` yields ``sum(-F[k] * x[index(p, k)]) <= G - M_ms(p)
    - sum(I[k])``.  ``strict`` uses the largest model-state share on every
    stage.  With ``prune_dominated`` a window contained in another window of
    the same stage is skipped: every per-chunk term is a non-negative
    activation size, so the larger window's constraint implies it.
    """
    dp = cluster.pp_degree
    lps = model.layers_per_stage(cluster)
    pos = {c.id: k for k, c in enumerate(unit.chunks)}
    lin = {c.id: linearize(c, cluster, model) for c in unit.chunks}
    num_vars = unit.n + dp - 1
    constraints = []
    for p, stage_windows in enumerate(windows, start=1):
        distinct = list(dict.fromkeys(frozenset(w) for w in stage_windows))
        if prune_dominated:
            distinct = _maximal(distinct)
        cap = _capacity(p, cluster, model, strict)
        for w in distinct:
            coef: Dict[int, float] = {}
            intercept = []
            for cid in sorted(w, key=pos.__getitem__):
                i_k, f_k = lin[cid]
                intercept.append(i_k)
                if f_k != 0.0:
                    j = ladder_index(p, pos[cid], f2b, dp)
                    coef[j] = coef.get(j, 0.0) - f_k
            constraints.append((coef, cap - math.fsum(intercept)))
    return MilpInstance(num_vars, (lps,) * num_vars, tuple(constraints))


def f_hat(unit: PipelineUnit, params: CostParams, cluster: ClusterConfig,
          model: ModelConfig) -> float:
    """Per-layer forward time of an average chunk of the unit (unless configured)."""
    if params.f_hat is not None:
        return params.f_hat
    lps = model.layers_per_stage(cluster)
    per = [t_total(c, Phase.FORWARD, params, cluster, model) / lps for c in unit.chunks]
    return math.fsum(per) / len(per)


def memory_deficit(unit: PipelineUnit, windows: Sequence[Sequence[FrozenSet[int]]],
                   cluster: ClusterConfig, model: ModelConfig, strict: bool = False) -> float:
    """Largest overshoot of any window when every chunk uses its cheapest layer count."""
    lps = model.layers_per_stage(cluster)
    by_id = {c.id: c for c in unit.chunks}
    floor = {cid: min(m_activation(c, 0, cluster, model), m_activation(c, lps, cluster, model))
             for cid, c in by_id.items()}
    worst = -math.inf
    for p, stage_windows in enumerate(windows, start=1):
        cap = _capacity(p, cluster, model, strict)
        for w in stage_windows:
            worst = max(worst, math.fsum(floor[cid] for cid in w) - cap)
    return worst


@dataclass(frozen=True)
class CkptReport:
    vector: CheckpointVector
    t_ckpt: float
    # False when a node limit cut the search short; ``lower_bound`` bounds sum(values)
    optimal: bool = True
    lower_bound: Optional[float] = None


def solve_ckpt_report(unit: PipelineUnit, windows: Sequence[Sequence[FrozenSet[int]]],
                      f2b: Sequence[int], cluster: ClusterConfig, model: ModelConfig,
                      params: CostParams, strict: bool = False,
                      node_limit: Optional[int] = None) -> CkptReport:
    """:func:`solve_ckpt` plus the solver's optimality status."""
    lps = model.layers_per_stage(cluster)
    deficit = memory_deficit(unit, windows, cluster, model, strict)
    if deficit > 0:
        raise CheckpointInfeasible(f"unit exceeds memory by {deficit:.4g} bytes even with "
                                   f"maximal checkpointing", deficit)
    inst = build_milp(unit, windows, f2b, cluster, model, strict=strict)
    try:
        sol = solve(inst, node_limit=node_limit)
    except Infeasible:
        raise CheckpointInfeasible("no ladder assignment satisfies every window",
                                   max(deficit, 0.0)) from None
    vec = CheckpointVector(sol.values, lps)
    return CkptReport(vec, f_hat(unit, params, cluster, model) * vec.total, sol.optimal,
                      sol.bound)


def solve_ckpt(unit: PipelineUnit, windows: Sequence[Sequence[FrozenSet[int]]],
               f2b: Sequence[int], cluster: ClusterConfig, model: ModelConfig,
               params: CostParams, strict: bool = False,
               node_limit: Optional[int] = None) -> Tuple[CheckpointVector, float]:
    """Minimum total checkpointing that keeps every window within device memory.

    Returns the ladder vector and ``T_ckpt = F_hat * sum(values)``; raises
    :class:`CheckpointInfeasible` (carrying the memory deficit) otherwise.
    The result is proven optimal unless ``node_limit`` stops the search.
    """
    r = solve_ckpt_report(unit, windows, f2b, cluster, model, params, strict, node_limit)
    return r.vector, r.t_ckpt
