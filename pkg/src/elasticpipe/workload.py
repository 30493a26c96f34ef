"""Sequence-length workloads: file ingestion, skewed synthetic presets, statistics.

Length files hold one positive integer per line (blank lines and ``#``
comments are ignored).  Histogram documents are JSON::

    {"count": 1000, "seed": 0,
     "bins": [{"lo": 1, "hi": 8192, "p": 0.915},
              {"lo": 8192, "hi": 65536, "p": 0.079},
              {"lo": 65536, "hi": 196608, "p": 0.006}]}

and expand deterministically: each bin receives its largest-remainder share
of ``count`` samples, drawn log-uniformly inside ``(lo, hi]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .cost_model import ConfigError

DEFAULT_CONTEXT_CAP = 196608

# Length intervals (lo, hi] used for presets and for the statistics report.
EDGES = (64, 1024, 2048, 4096, 8192, 16384, 32768, 65536, 131072, 196608)

# Approximations read off a published GitHub length histogram and calibrated
# by scripts/calibrate_presets.py to: 91.5% of sequences <= 8K, 0.6% > 64K,
# and 21.6% of tokens in that > 64K tail.
GITHUB_PROBS = (0.60907, 0.16826, 0.09178, 0.04589, 0.04740, 0.02054, 0.01106, 0.00390, 0.00210)
# Rough shape of a web-crawl corpus: shorter and less heavy-tailed.
COMMONCRAWL_PROBS = (0.52000, 0.23000, 0.13000, 0.07000, 0.03500, 0.00900, 0.00400, 0.00150, 0.00050)

PRESETS = ("github_like", "commoncrawl_like", "uniform", "custom")


class WorkloadError(ValueError):
    """Malformed, empty, or otherwise unusable workload input."""


@dataclass
class Workload:
    lengths: List[int]
    source: str
    context_cap: int = DEFAULT_CONTEXT_CAP

    def __post_init__(self):
        if not self.lengths:
            raise WorkloadError(f"{self.source}: empty workload")
        if min(self.lengths) < 1:
            raise WorkloadError(f"{self.source}: lengths must be >= 1")
        self.lengths = [min(int(x), self.context_cap) for x in self.lengths]


def _log_uniform(rng: np.random.Generator, lo: float, hi: float, size: int) -> np.ndarray:
    vals = np.exp(rng.uniform(math.log(lo), math.log(hi), size=size))
    return np.clip(np.rint(vals), math.floor(lo) + 1, math.floor(hi)).astype(np.int64)


def _apportion(probs: Sequence[float], count: int) -> List[int]:
    p = np.asarray(probs, dtype=float)
    if np.any(p < 0) or p.sum() <= 0:
        raise WorkloadError("bin probabilities must be non-negative with positive total")
    exact = p / p.sum() * count
    base = np.floor(exact).astype(int)
    left = count - int(base.sum())
    order = sorted(range(len(p)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:left]:
        base[i] += 1
    return base.tolist()


def expand_histogram(bins: Sequence[Dict[str, float]], count: int, seed: int = 0) -> List[int]:
    counts = _apportion([b["p"] for b in bins], count)
    rng = np.random.default_rng(seed)
    out: List[int] = []
    for b, c in zip(bins, counts):
        lo, hi = float(b["lo"]), float(b["hi"])
        if not 0 <= lo < hi:
            raise WorkloadError(f"bad histogram bin {b}")
        out.extend(_log_uniform(rng, max(lo, 1.0), hi, c).tolist())
    rng.shuffle(out)
    return [int(x) for x in out]


def load(path: Union[str, Path], context_cap: int = DEFAULT_CONTEXT_CAP) -> Workload:
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
            lengths = expand_histogram(doc["bins"], int(doc["count"]), int(doc.get("seed", 0)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise WorkloadError(f"{path}: bad histogram document: {exc}") from None
        return Workload(lengths, source=str(path), context_cap=context_cap)
    lengths = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            value = int(line)
        except ValueError:
            raise WorkloadError(f"{path}:{lineno}: not an integer length: {raw!r}") from None
        if value < 1:
            raise WorkloadError(f"{path}:{lineno}: length must be >= 1, got {value}")
        lengths.append(value)
    if not lengths:
        raise WorkloadError(f"{path}: empty workload")
    return Workload(lengths, source=str(path), context_cap=context_cap)


def save(workload: Workload, path: Union[str, Path]) -> None:
    Path(path).write_text("".join(f"{x}\n" for x in workload.lengths))


def generate(preset: str, count: int, seed: int = 0, context_cap: int = DEFAULT_CONTEXT_CAP,
             low: int = 4096, high: int = 4096,
             bins: Optional[Sequence[Dict[str, float]]] = None) -> Workload:
    """Sample ``count`` lengths from a preset distribution.

    ``uniform`` draws integers uniformly from ``[low, high]``; ``custom`` needs
    histogram ``bins`` in the same form as histogram documents.
    """
    if count < 1:
        raise WorkloadError("count must be >= 1")
    rng = np.random.default_rng(seed)
    if preset in ("github_like", "commoncrawl_like"):
        probs = np.array(GITHUB_PROBS if preset == "github_like" else COMMONCRAWL_PROBS)
        probs = probs / probs.sum()
        which = rng.choice(len(probs), size=count, p=probs)
        lo = np.log(np.array(EDGES[:-1], dtype=float))[which]
        hi = np.log(np.array(EDGES[1:], dtype=float))[which]
        vals = np.rint(np.exp(rng.uniform(lo, hi)))
        lengths = np.clip(vals, 1, None).astype(np.int64).tolist()
    elif preset == "uniform":
        if not 1 <= low <= high:
            raise ConfigError("uniform preset needs 1 <= low <= high")
        lengths = rng.integers(low, high + 1, size=count).tolist()
    elif preset == "custom":
        if not bins:
            raise ConfigError("custom preset needs histogram bins")
        lengths = expand_histogram(bins, count, seed)
    else:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    source = f"{preset}:count={count}:seed={seed}"
    return Workload([int(x) for x in lengths], source=source, context_cap=context_cap)


def _interval_label(lo: float, hi: float) -> str:
    def fmt(x):
        if math.isinf(x):
            return "inf"
        return f"{x / 1024:g}K" if x >= 1024 else f"{int(x)}"

    return f"({fmt(lo)}, {fmt(hi)}]"


def stats(workload: Workload) -> List[Dict[str, object]]:
    """Per-interval sample, token and quadratic-FLOP shares (non-empty intervals only)."""
    x = np.asarray(workload.lengths, dtype=np.int64)
    edges = (0,) + EDGES[1:] + (math.inf,)
    tokens = float(x.sum())
    flops = float((x.astype(float) ** 2).sum())
    rows = []
    for lo, hi in zip(edges, edges[1:]):
        sel = x[(x > lo) & (x <= hi)]
        if sel.size == 0:
            continue
        rows.append({
            "interval": _interval_label(lo, hi),
            "lo": lo, "hi": None if math.isinf(hi) else hi,
            "count": int(sel.size),
            "sample_frac": sel.size / x.size,
            "token_frac": float(sel.sum()) / tokens,
            "flop_frac": float((sel.astype(float) ** 2).sum()) / flops,
        })
    return rows


def format_stats(rows: List[Dict[str, object]]) -> str:
    lines = [f"{'interval':<16}{'count':>8}{'samples':>10}{'tokens':>10}{'flops':>10}"]
    for r in rows:
        lines.append(f"{r['interval']:<16}{r['count']:>8}{r['sample_frac']:>10.2%}"
                     f"{r['token_frac']:>10.2%}{r['flop_frac']:>10.2%}")
    return "\n".join(lines)
