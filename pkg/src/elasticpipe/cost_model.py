"""Analytical time and memory model for heterogeneous pipeline chunks.

Every function here is pure.  Times are seconds, memory is bytes, lengths are
tokens.  A chunk is described uniformly by a context length ``C``, a tuple of
slice lengths ``S`` and a tail flag ``I``; the first slice is the one that
attends to the context.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np


class ConfigError(ValueError):
    """Invalid or incomplete cluster / model / coefficient configuration."""


class FitError(ValueError):
    """Profiling samples cannot determine the cost coefficients."""


class ChunkKind(str, enum.Enum):
    BATCHED = "batched"
    SPLIT = "split"
    HYBRID = "hybrid"


class Phase(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True)
class ClusterConfig:
    num_gpus: int
    pp_degree: int
    sp_degree: int
    mem_capacity: float
    all2all_bandwidth: Dict[int, float] = field(default_factory=dict)
    all2all_latency: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.pp_degree < 1 or self.sp_degree < 1:
            raise ConfigError("pp_degree and sp_degree must be >= 1")
        if self.num_gpus != self.pp_degree * self.sp_degree:
            raise ConfigError(
                f"num_gpus ({self.num_gpus}) != pp_degree * sp_degree "
                f"({self.pp_degree} * {self.sp_degree})"
            )
        if self.mem_capacity <= 0:
            raise ConfigError("mem_capacity must be positive")
        for degree, bw in self.all2all_bandwidth.items():
            if bw <= 0:
                raise ConfigError(f"all2all bandwidth for degree {degree} must be positive")


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    hidden_dim: int
    elem_size: int
    m_token: float
    m_model_states: Tuple[float, ...]

    def __post_init__(self):
        if min(self.layers, self.hidden_dim, self.elem_size) <= 0 or self.m_token <= 0:
            raise ConfigError("model dimensions must be positive")
        object.__setattr__(self, "m_model_states", tuple(float(m) for m in self.m_model_states))
        if any(m <= 0 for m in self.m_model_states):
            raise ConfigError("model-state memory must be positive")

    def check_against(self, cluster: ClusterConfig) -> None:
        if self.layers % cluster.pp_degree:
            raise ConfigError(
                f"layers ({self.layers}) not divisible by pp_degree ({cluster.pp_degree})"
            )
        if len(self.m_model_states) != cluster.pp_degree:
            raise ConfigError(
                f"m_model_states has {len(self.m_model_states)} entries, "
                f"expected one per stage ({cluster.pp_degree})"
            )

    def layers_per_stage(self, cluster: ClusterConfig) -> int:
        return self.layers // cluster.pp_degree


@dataclass(frozen=True)
class CostParams:
    alpha1_f: float
    alpha2_f: float
    beta1_f: float
    alpha1_b: float
    alpha2_b: float
    beta1_b: float
    # Per-layer forward time override; derived from the chunks when None.
    f_hat: Optional[float] = None

    def __post_init__(self):
        coeffs = (self.alpha1_f, self.alpha2_f, self.beta1_f,
                  self.alpha1_b, self.alpha2_b, self.beta1_b)
        if any(c < 0 for c in coeffs):
            raise ConfigError("cost coefficients must be non-negative")
        if self.f_hat is not None and self.f_hat < 0:
            raise ConfigError("f_hat must be non-negative")

    def coefficients(self, phase: Phase) -> Tuple[float, float, float]:
        if phase == Phase.FORWARD:
            return self.alpha1_f, self.alpha2_f, self.beta1_f
        return self.alpha1_b, self.alpha2_b, self.beta1_b


@dataclass(frozen=True)
class Chunk:
    """One heterogeneous micro-batch.

    ``owners[i]`` is the sequence that contributed ``slices[i]``.  For split and
    hybrid chunks ``slices[0]`` belongs to ``seq_id`` and attends to
    ``context`` tokens of that sequence.
    """

    id: int
    kind: ChunkKind
    context: int
    slices: Tuple[int, ...]
    tail: bool
    seq_id: Optional[int] = None
    owners: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "slices", tuple(int(s) for s in self.slices))
        object.__setattr__(self, "owners", tuple(int(o) for o in self.owners))
        if not self.slices or any(s <= 0 for s in self.slices):
            raise ValueError(f"chunk {self.id}: slice lengths must be positive")
        if self.context < 0:
            raise ValueError(f"chunk {self.id}: negative context")
        if self.owners and len(self.owners) != len(self.slices):
            raise ValueError(f"chunk {self.id}: owners must align with slices")
        if self.kind == ChunkKind.BATCHED and (self.context != 0 or not self.tail):
            raise ValueError(f"chunk {self.id}: batched chunks have no context and are tails")
        if self.kind == ChunkKind.SPLIT and len(self.slices) != 1:
            raise ValueError(f"chunk {self.id}: split chunks hold exactly one slice")
        if self.kind == ChunkKind.HYBRID and (self.context <= 0 or not self.tail):
            raise ValueError(f"chunk {self.id}: hybrid chunks carry a context and a tail")

    @property
    def tokens(self) -> int:
        return sum(self.slices)


def _sp_entry(table: Dict[int, float], degree: int, what: str) -> float:
    try:
        return table[degree]
    except KeyError:
        raise ConfigError(f"no all2all {what} entry for sp degree {degree}") from None


def t_comp(chunk: Chunk, phase: Phase, params: CostParams, cluster: ClusterConfig,
           model: ModelConfig = None) -> float:
    a1, a2, b1 = params.coefficients(phase)
    c = chunk.context
    s0 = chunk.slices[0]
    work = a1 * ((c + s0) ** 2 - c ** 2) + a2 * s0
    for s in chunk.slices[1:]:
        work += a1 * s * s + a2 * s
    return work / cluster.num_gpus + b1 / cluster.pp_degree


def t_all2all(chunk: Chunk, cluster: ClusterConfig, model: ModelConfig) -> float:
    ds = cluster.sp_degree
    if ds == 1:
        return 0.0
    bw = _sp_entry(cluster.all2all_bandwidth, ds, "bandwidth")
    lat = _sp_entry(cluster.all2all_latency, ds, "latency")
    volume = model.elem_size * model.hidden_dim * chunk.tokens
    return (volume / (ds * bw) + lat) * 4 * model.layers / cluster.pp_degree


def t_total(chunk: Chunk, phase: Phase, params: CostParams, cluster: ClusterConfig,
            model: ModelConfig) -> float:
    """Per-stage execution time of ``chunk`` in ``phase``."""
    return t_comp(chunk, phase, params, cluster, model) + t_all2all(chunk, cluster, model)


def layer_forward_time(chunk: Chunk, params: CostParams, cluster: ClusterConfig,
                       model: ModelConfig) -> float:
    """Forward time of one layer of one stage; the unit cost of recomputation."""
    return t_total(chunk, Phase.FORWARD, params, cluster, model) / model.layers_per_stage(cluster)


def _check_ckpt(l_ckpt: int, cluster: ClusterConfig, model: ModelConfig) -> None:
    if not 0 <= l_ckpt <= model.layers_per_stage(cluster):
        raise ValueError(
            f"l_ckpt={l_ckpt} outside [0, {model.layers_per_stage(cluster)}]"
        )


def m_activation(chunk: Chunk, l_ckpt: int, cluster: ClusterConfig, model: ModelConfig) -> float:
    """Activation bytes one chunk keeps resident on a stage with ``l_ckpt`` checkpointed layers."""
    _check_ckpt(l_ckpt, cluster, model)
    n, L, dp, ds = cluster.num_gpus, model.layers, cluster.pp_degree, cluster.sp_degree
    e, D = model.elem_size, model.hidden_dim
    tokens = chunk.tokens
    tail = 1 if chunk.tail else 0
    act = model.m_token / n * tokens
    kept = (L - l_ckpt * dp) / L * act
    dkv = (1 - tail) * 2 * e * L * D / n * tokens
    ckpt = (3 - 2 * tail) * e * D * l_ckpt / ds * tokens
    return kept + dkv + ckpt


def t_recompute(chunk: Chunk, l_ckpt: int, params: CostParams, cluster: ClusterConfig,
                model: ModelConfig) -> float:
    _check_ckpt(l_ckpt, cluster, model)
    if l_ckpt == 0:
        return 0.0
    fwd = t_total(chunk, Phase.FORWARD, params, cluster, model)
    return l_ckpt / (model.layers * cluster.sp_degree) * fwd


def m_stage_total(stage: int, window: Iterable[Chunk], ckpt: Dict[int, int],
                  cluster: ClusterConfig, model: ModelConfig) -> float:
    """Model states plus the activations of every chunk in ``window`` (stage is 1-based)."""
    if not 1 <= stage <= cluster.pp_degree:
        raise ValueError(f"stage {stage} outside [1, {cluster.pp_degree}]")
    acts = [m_activation(k, ckpt.get(k.id, 0), cluster, model) for k in window]
    return model.m_model_states[stage - 1] + math.fsum(acts)


def linearize(chunk: Chunk, cluster: ClusterConfig, model: ModelConfig) -> Tuple[float, float]:
    """Intercept and per-layer saving so that ``m_activation(l) == I - F * l``."""
    n, L, ds = cluster.num_gpus, model.layers, cluster.sp_degree
    e, D = model.elem_size, model.hidden_dim
    tokens = chunk.tokens
    tail = 1 if chunk.tail else 0
    intercept = model.m_token / n * tokens + (1 - tail) * 2 * e * L * D / n * tokens
    w = 3 - 2 * tail
    slope = (model.m_token / (L * ds) - e * D * w / ds) * tokens
    return intercept, slope


def token_capacity(cluster: ClusterConfig, model: ModelConfig) -> int:
    """Tokens whose un-checkpointed activations fit beside the largest model-state share."""
    free = cluster.mem_capacity - max(model.m_model_states)
    if free <= 0:
        return 0
    return int(free * cluster.num_gpus // model.m_token)


@dataclass
class FitResult:
    params: CostParams
    residual_norm: Dict[Phase, float]


def _design_row(chunk: Chunk, cluster: ClusterConfig) -> List[float]:
    c, s0 = chunk.context, chunk.slices[0]
    quad = (c + s0) ** 2 - c ** 2 + sum(s * s for s in chunk.slices[1:])
    return [quad / cluster.num_gpus, chunk.tokens / cluster.num_gpus, 1.0 / cluster.pp_degree]


def fit_params(samples: Sequence[Tuple[Chunk, Phase, float]], cluster: ClusterConfig,
               model: ModelConfig) -> FitResult:
    """Least-squares fit of the quadratic compute model per phase.

    The known all-to-all term is subtracted first.  Rows are weighted by the
    inverse measurement so relative (multiplicative) noise is treated evenly
    across short and long chunks.
    """
    coeffs: Dict[Phase, np.ndarray] = {}
    residuals: Dict[Phase, float] = {}
    for phase in (Phase.FORWARD, Phase.BACKWARD):
        rows = [(k, t) for k, p, t in samples if p == phase]
        distinct = {(k.context, k.slices) for k, _ in rows}
        if len(rows) < 4 or len(distinct) < 4:
            raise FitError(f"need >= 4 distinct {phase.value} samples, got {len(distinct)}")
        A = np.array([_design_row(k, cluster) for k, _ in rows])
        y = np.array([t - t_all2all(k, cluster, model) for k, t in rows])
        w = 1.0 / np.maximum(np.abs(np.array([t for _, t in rows])), 1e-30)
        Aw, yw = A * w[:, None], y * w
        scale = np.abs(Aw).max(axis=0)
        scale[scale == 0] = 1.0
        sol, _, rank, _ = np.linalg.lstsq(Aw / scale, yw, rcond=None)
        if rank < 3:
            raise FitError(f"{phase.value} samples are rank deficient (rank {rank})")
        coeffs[phase] = np.maximum(sol / scale, 0.0)
        residuals[phase] = float(np.linalg.norm(A @ coeffs[phase] - y))
    f, b = coeffs[Phase.FORWARD], coeffs[Phase.BACKWARD]
    params = CostParams(alpha1_f=float(f[0]), alpha2_f=float(f[1]), beta1_f=float(f[2]),
                        alpha1_b=float(b[0]), alpha2_b=float(b[1]), beta1_b=float(b[2]))
    return FitResult(params=params, residual_norm=residuals)
