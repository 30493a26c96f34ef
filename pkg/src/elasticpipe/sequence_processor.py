"""Workload-balanced chunking: split long sequences on a mesh, pack short ones.

The longest sequence is cut into ``N`` slices of (nearly) equal backward time.
The first ``N - 1`` slice sizes form the *mesh*; every other long sequence is
cut greedily against it and its remainder becomes a tail slice.  Tail slices
seed buckets, and short sequences are packed best-fit-decreasing under a time
threshold and a token threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cost_model import (Chunk, ChunkKind, ClusterConfig, CostParams, ModelConfig, Phase,
                         t_total, token_capacity)


class ChunkingError(ValueError):
    """The requested chunking cannot satisfy its token or slice constraints."""


@dataclass(frozen=True)
class Mesh:
    slice_lengths: Tuple[int, ...]
    time_threshold: float
    token_threshold: int

    def __post_init__(self):
        s = self.slice_lengths
        if any(a < b for a, b in zip(s, s[1:])):
            raise ValueError("mesh slice lengths must be non-increasing")
        if self.time_threshold <= 0 or self.token_threshold <= 0:
            raise ValueError("mesh thresholds must be positive")


@dataclass(frozen=True)
class TailSlice:
    seq_id: int
    tokens: int
    context: int


@dataclass
class Bucket:
    members: List[Tuple[int, int]] = field(default_factory=list)  # (seq id, tokens)
    time: float = 0.0
    tokens: int = 0
    tail: Optional[TailSlice] = None

    @property
    def has_tail(self) -> bool:
        return self.tail is not None


@dataclass
class ChunkingResult:
    chunks: List[Chunk]
    per_sequence: Dict[int, List[int]]
    time_rsd: float
    length_rsd: float
    mesh: Mesh
    time_threshold: float
    slices: int

    def chunk_by_id(self) -> Dict[int, Chunk]:
        return {k.id: k for k in self.chunks}


def rsd(values: Sequence[float]) -> float:
    """Population standard deviation over mean."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("rsd of an empty sequence")
    mean = arr.mean()
    if mean <= 0:
        raise ValueError("rsd needs a positive mean")
    return float(arr.std() / mean)


class _SliceTimer:
    """Backward time of a slice of ``s`` tokens after ``C`` context tokens, and
    the marginal time a packed extra slice adds to a chunk."""

    def __init__(self, params: CostParams, cluster: ClusterConfig, model: ModelConfig):
        self.a1, self.a2, self.b1 = params.coefficients(Phase.BACKWARD)
        self.n = cluster.num_gpus
        self.base = self.b1 / cluster.pp_degree
        self.per_token = 0.0
        ds = cluster.sp_degree
        if ds > 1:
            hops = 4 * model.layers / cluster.pp_degree
            bw = cluster.all2all_bandwidth[ds]
            self.per_token = model.elem_size * model.hidden_dim / (ds * bw) * hops
            self.base += cluster.all2all_latency[ds] * hops

    def slice_time(self, context: int, s: int) -> float:
        quad = (context + s) ** 2 - context ** 2
        return (self.a1 * quad + self.a2 * s) / self.n + self.per_token * s + self.base

    def marginal(self, s: int) -> float:
        return (self.a1 * s * s + self.a2 * s) / self.n + self.per_token * s

    def longest_slice(self, context: int, remaining: int, budget: float) -> int:
        """Largest s in [1, remaining] with slice_time(context, s) <= budget, or 0."""
        if self.slice_time(context, 1) > budget:
            return 0
        lo, hi = 1, remaining
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.slice_time(context, mid) <= budget:
                lo = mid
            else:
                hi = mid - 1
        return lo


def _greedy_cut(timer: _SliceTimer, length: int, budget: float, limit: int) -> Optional[List[int]]:
    slices: List[int] = []
    ctx = 0
    while ctx < length:
        if len(slices) == limit:
            return None
        s = timer.longest_slice(ctx, length - ctx, budget)
        if s == 0:
            return None
        slices.append(s)
        ctx += s
    return slices


def split_longest(max_len: int, n_slices: int, params: CostParams, cluster: ClusterConfig,
                  model: ModelConfig) -> Mesh:
    """Cut ``max_len`` into ``n_slices`` contiguous slices minimizing the largest
    backward slice time (bisection on the time budget plus greedy placement)."""
    if n_slices < 1:
        raise ChunkingError("slice number must be >= 1")
    if n_slices > max_len:
        raise ChunkingError(f"cannot split {max_len} tokens into {n_slices} slices")
    timer = _SliceTimer(params, cluster, model)
    lo, hi = 0.0, timer.slice_time(0, max_len)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _greedy_cut(timer, max_len, mid, n_slices) is None:
            lo = mid
        else:
            hi = mid
    slices = _greedy_cut(timer, max_len, hi, n_slices)
    assert slices is not None
    # Integer rounding can leave fewer slices than requested; halving the
    # largest slice never raises the maximum slice time.
    while len(slices) < n_slices:
        i = max(range(len(slices)), key=lambda j: (slices[j], -j))
        half = slices[i] // 2
        slices[i:i + 1] = [slices[i] - half, half]
    ctx, times = 0, []
    for s in slices:
        times.append(timer.slice_time(ctx, s))
        ctx += s
    return Mesh(slice_lengths=tuple(slices[:-1]), time_threshold=max(times),
                token_threshold=max(slices))


def _is_short(length: int, mesh: Mesh) -> bool:
    return not mesh.slice_lengths or length <= mesh.slice_lengths[0]


def split_seqs(lengths: Sequence[int], mesh: Mesh, first_id: int = 0):
    """Cut every long sequence greedily against the mesh.

    Returns ``(split_chunks, tail_slices, short_seqs)``.  A sequence is short
    when it does not exceed the first mesh slice, i.e. when no cut applies.
    """
    split_chunks: List[Chunk] = []
    tails: List[TailSlice] = []
    shorts: List[Tuple[int, int]] = []
    next_id = first_id
    for seq, length in enumerate(lengths):
        if _is_short(length, mesh):
            shorts.append((seq, int(length)))
            continue
        ctx, remaining = 0, int(length)
        for cell in mesh.slice_lengths:
            if remaining <= cell:
                break
            split_chunks.append(Chunk(id=next_id, kind=ChunkKind.SPLIT, context=ctx,
                                      slices=(cell,), tail=False, seq_id=seq, owners=(seq,)))
            next_id += 1
            ctx += cell
            remaining -= cell
        tails.append(TailSlice(seq_id=seq, tokens=remaining, context=ctx))
    return split_chunks, tails, shorts


def pack(tail_slices: Sequence[TailSlice], short_seqs: Sequence[Tuple[int, int]], mesh: Mesh,
         params: CostParams, cluster: ClusterConfig, model: ModelConfig,
         balance_length: bool = True, token_limit: Optional[int] = None,
         max_growth: float = 0.5) -> Tuple[List[Bucket], float]:
    """Best-fit-decreasing packing of short sequences into tail-seeded buckets.

    With ``balance_length`` (the default) buckets are tried in ascending
    time-per-token order and the time threshold is raised, at most by
    ``max_growth`` relative, before a new bucket is opened.  Without it the
    packer balances time only: tightest-by-time bucket first, no threshold
    perturbation, and ``token_limit`` (default: the mesh token threshold) as the
    token cap.  Returns the buckets and the final time threshold.
    """
    timer = _SliceTimer(params, cluster, model)
    t_cap = mesh.time_threshold
    t_ceiling = mesh.time_threshold * (1.0 + max_growth)
    m_cap = mesh.token_threshold if token_limit is None else int(token_limit)

    buckets: List[Bucket] = []
    for tail in tail_slices:
        buckets.append(Bucket(members=[(tail.seq_id, tail.tokens)], tokens=tail.tokens,
                              time=timer.slice_time(tail.context, tail.tokens), tail=tail))

    order = sorted(short_seqs, key=lambda q: (-timer.slice_time(0, q[1]), q[0]))
    for seq, tokens in order:
        if tokens > m_cap:
            raise ChunkingError(f"sequence {seq} ({tokens} tokens) exceeds token threshold {m_cap}")
        if not buckets or min(b.tokens for b in buckets) + tokens > m_cap:
            buckets.append(Bucket(members=[(seq, tokens)], tokens=tokens,
                                  time=timer.slice_time(0, tokens)))
            continue
        extra = timer.marginal(tokens)
        if balance_length:
            ranked = sorted(range(len(buckets)), key=lambda i: (buckets[i].time / buckets[i].tokens, i))
        else:
            ranked = sorted(range(len(buckets)), key=lambda i: (-buckets[i].time, i))
        target = _first_fit(buckets, ranked, tokens, extra, t_cap, m_cap)
        if target is None and balance_length:
            room = [b.time + extra for b in buckets if b.tokens + tokens <= m_cap]
            need = min(room)
            if need <= t_ceiling:
                t_cap = max(t_cap, need)
                target = _first_fit(buckets, ranked, tokens, extra, t_cap, m_cap)
        if target is None:
            buckets.append(Bucket(members=[(seq, tokens)], tokens=tokens,
                                  time=timer.slice_time(0, tokens)))
            continue
        b = buckets[target]
        b.members.append((seq, tokens))
        b.tokens += tokens
        b.time += extra
    return buckets, t_cap


def _first_fit(buckets, ranked, tokens, extra, t_cap, m_cap) -> Optional[int]:
    for i in ranked:
        b = buckets[i]
        if b.time + extra <= t_cap and b.tokens + tokens <= m_cap:
            return i
    return None


def buckets_to_chunks(buckets: Sequence[Bucket], first_id: int) -> List[Chunk]:
    chunks = []
    for offset, b in enumerate(buckets):
        owners = tuple(seq for seq, _ in b.members)
        slices = tuple(tok for _, tok in b.members)
        if b.tail is None:
            chunks.append(Chunk(id=first_id + offset, kind=ChunkKind.BATCHED, context=0,
                                slices=slices, tail=True, owners=owners))
        else:
            chunks.append(Chunk(id=first_id + offset, kind=ChunkKind.HYBRID, context=b.tail.context,
                                slices=slices, tail=True, seq_id=b.tail.seq_id, owners=owners))
    return chunks


def _finish(chunks: List[Chunk], num_seqs: int, mesh: Mesh, t_cap: float, n_slices: int,
            params: CostParams, cluster: ClusterConfig, model: ModelConfig) -> ChunkingResult:
    per_sequence: Dict[int, List[int]] = {seq: [] for seq in range(num_seqs)}
    for k in chunks:
        for seq in dict.fromkeys(k.owners):
            per_sequence[seq].append(k.id)
    times = [t_total(k, Phase.BACKWARD, params, cluster, model) for k in chunks]
    return ChunkingResult(chunks=chunks, per_sequence=per_sequence, time_rsd=rsd(times),
                          length_rsd=rsd([k.tokens for k in chunks]), mesh=mesh,
                          time_threshold=t_cap, slices=n_slices)


def process(lengths: Sequence[int], n_slices: int, params: CostParams, cluster: ClusterConfig,
            model: ModelConfig, capacity: Optional[int] = None,
            balance_length: bool = True, max_growth: float = 0.5) -> ChunkingResult:
    """Full chunking pipeline for one batch of sequence lengths."""
    if len(lengths) == 0:
        raise ChunkingError("empty batch")
    if min(lengths) < 1:
        raise ChunkingError("sequence lengths must be positive")
    if capacity is None:
        capacity = token_capacity(cluster, model)
    mesh = split_longest(int(max(lengths)), n_slices, params, cluster, model)
    if mesh.token_threshold > capacity:
        raise ChunkingError(
            f"token threshold {mesh.token_threshold} exceeds capacity {capacity} at N={n_slices}"
        )
    split_chunks, tails, shorts = split_seqs(lengths, mesh)
    buckets, t_cap = pack(tails, shorts, mesh, params, cluster, model,
                          balance_length=balance_length,
                          token_limit=None if balance_length else capacity,
                          max_growth=max_growth)
    chunks = split_chunks + buckets_to_chunks(buckets, len(split_chunks))
    return _finish(chunks, len(lengths), mesh, t_cap, n_slices, params, cluster, model)


def fixed_size_chunking(lengths: Sequence[int], chunk_tokens: int, params: CostParams,
                        cluster: ClusterConfig, model: ModelConfig) -> ChunkingResult:
    """Workload-oblivious baseline: cut long sequences into ``chunk_tokens``
    slices and pack short sequences first-fit-decreasing by token count."""
    chunk_tokens = int(chunk_tokens)
    if chunk_tokens < 1:
        raise ChunkingError("chunk size must be positive")
    n_max = max(1, math.ceil(max(lengths) / chunk_tokens))
    mesh = Mesh(slice_lengths=(chunk_tokens,) * (n_max - 1), time_threshold=math.inf,
                token_threshold=chunk_tokens)
    split_chunks, tails, shorts = split_seqs(lengths, mesh)
    buckets = [Bucket(members=[(t.seq_id, t.tokens)], tokens=t.tokens, tail=t) for t in tails]
    bins: List[Bucket] = []
    for seq, tokens in sorted(shorts, key=lambda q: (-q[1], q[0])):
        for b in bins:
            if b.tokens + tokens <= chunk_tokens:
                b.members.append((seq, tokens))
                b.tokens += tokens
                break
        else:
            bins.append(Bucket(members=[(seq, tokens)], tokens=tokens))
    chunks = split_chunks + buckets_to_chunks(buckets + bins, len(split_chunks))
    return _finish(chunks, len(lengths), mesh, math.inf, n_max, params, cluster, model)
