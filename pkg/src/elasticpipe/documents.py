"""Versioned JSON documents for plans and simulation traces.

Documents are written with sorted keys and Python's shortest round-trip float
repr, so write -> read -> write is byte-identical.  Wall-clock quantities
(solve time) and timestamps are left out to keep reruns identical.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from .checkpoint import CheckpointVector
from .config import Configs
from .cost_model import Chunk, ChunkKind
from .planner import PlanSimulation, SchedulePlan, UnitPlan
from .schedule import PipelineUnit, SimEvent, SimPhase, SimTrace, Window, WindowPhase
from .sequence_processor import ChunkingResult, Mesh

PLAN_KIND = "elasticpipe.plan"
TRACE_KIND = "elasticpipe.trace"
VERSION = 1


class DocumentError(ValueError):
    """A document has the wrong kind, an unsupported version, or missing fields."""


def _clean(value: Any) -> Any:
    """JSON-safe copy: tuples become lists, non-finite floats become None."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def _num(value: Any) -> float:
    """Inverse of :func:`_clean` for quantities where None stands for infinity."""
    return math.inf if value is None else float(value)


def dumps(doc: Dict[str, Any]) -> str:
    return json.dumps(_clean(doc), sort_keys=True, indent=1, allow_nan=False) + "\n"


def _check(doc: Any, kind: str) -> Dict[str, Any]:
    if not isinstance(doc, dict) or doc.get("kind") != kind:
        raise DocumentError(f"expected a {kind} document")
    if doc.get("version") != VERSION:
        raise DocumentError(f"unsupported {kind} version {doc.get('version')!r} "
                            f"(this build reads version {VERSION})")
    return doc


def _chunk_to_dict(c: Chunk) -> Dict[str, Any]:
    return {"id": c.id, "kind": c.kind.value, "context": c.context, "slices": list(c.slices),
            "tail": c.tail, "seq": c.seq_id, "owners": list(c.owners)}


def _chunk_from_dict(d: Dict[str, Any]) -> Chunk:
    return Chunk(id=int(d["id"]), kind=ChunkKind(d["kind"]), context=int(d["context"]),
                 slices=tuple(d["slices"]), tail=bool(d["tail"]),
                 seq_id=None if d["seq"] is None else int(d["seq"]), owners=tuple(d["owners"]))


def plan_to_dict(p: SchedulePlan, configs: Configs) -> Dict[str, Any]:
    ch = p.chunking
    dp = configs.cluster.pp_degree
    units = []
    for u in p.units:
        expanded = sorted(u.ckpt_map(dp).items())
        units.append({
            "chunks": [c.id for c in u.unit.chunks],
            "n_prefill": u.unit.n_prefill,
            "sequences": list(u.unit.sequences),
            "classes": list(u.classes),
            "f2b": list(u.f2b),
            "ckpt": list(u.ckpt.values),
            "ckpt_upper": u.ckpt.upper,
            "t_ckpt": u.t_ckpt,
            "optimal": u.optimal,
            "expanded_ckpt": [[stage, cid, layers] for (stage, cid), layers in expanded],
        })
    return {
        "kind": PLAN_KIND,
        "version": VERSION,
        "mode": p.mode,
        "n_slices": p.n_slices,
        "configs": configs.to_dict(),
        "chunking": {
            "slices": ch.slices,
            "time_threshold": ch.time_threshold,
            "time_rsd": ch.time_rsd,
            "length_rsd": ch.length_rsd,
            "mesh": {"slice_lengths": list(ch.mesh.slice_lengths),
                     "time_threshold": ch.mesh.time_threshold,
                     "token_threshold": ch.mesh.token_threshold},
            "per_sequence": {str(k): v for k, v in sorted(ch.per_sequence.items())},
        },
        "chunks": [_chunk_to_dict(c) for c in ch.chunks],
        "units": units,
        "est_cost": p.est_cost,
        "delta": p.delta,
        "metrics": {
            "units": len(p.units),
            "total_t_ckpt": p.total_t_ckpt,
            "total_ckpt_layers": sum(u.ckpt.total for u in p.units),
            "time_rsd": ch.time_rsd,
            "length_rsd": ch.length_rsd,
        },
        "metadata": {k: v for k, v in p.metadata.items() if k != "configs"},
    }


def plan_from_dict(doc: Dict[str, Any]) -> tuple:
    """``(SchedulePlan, Configs)`` from a plan document."""
    doc = _check(doc, PLAN_KIND)
    try:
        configs = Configs.from_dict(doc["configs"])
        chunks = [_chunk_from_dict(d) for d in doc["chunks"]]
        by_id = {c.id: c for c in chunks}
        c = doc["chunking"]
        mesh = Mesh(tuple(c["mesh"]["slice_lengths"]), _num(c["mesh"]["time_threshold"]),
                    int(c["mesh"]["token_threshold"]))
        chunking = ChunkingResult(
            chunks=chunks,
            per_sequence={int(k): list(v) for k, v in c["per_sequence"].items()},
            time_rsd=float(c["time_rsd"]), length_rsd=float(c["length_rsd"]), mesh=mesh,
            time_threshold=_num(c["time_threshold"]), slices=int(c["slices"]))
        units = []
        for u in doc["units"]:
            unit = PipelineUnit(tuple(by_id[i] for i in u["chunks"]), int(u["n_prefill"]),
                                tuple(u["sequences"]))
            vec = CheckpointVector(tuple(u["ckpt"]), int(u["ckpt_upper"]))
            units.append(UnitPlan(unit, list(u["f2b"]), vec, float(u["t_ckpt"]),
                                  tuple(u["classes"]), bool(u["optimal"])))
        metadata = dict(doc["metadata"])
        metadata["configs"] = doc["configs"]
        p = SchedulePlan(units=units, chunking=chunking, est_cost=float(doc["est_cost"]),
                         delta=float(doc["delta"]), n_slices=int(doc["n_slices"]),
                         mode=str(doc["mode"]), metadata=metadata)
    except (KeyError, TypeError, ValueError) as exc:
        raise DocumentError(f"malformed plan document: {exc!r}") from None
    return p, configs


def _trace_to_dict(t: SimTrace) -> Dict[str, Any]:
    return {
        "makespan": t.makespan,
        "bubble_ratio": t.bubble_ratio,
        "peak_memory": list(t.peak_memory),
        "capacity": t.capacity,
        "violations": list(t.violations),
        "events": [[e.stage, e.chunk, e.phase.value, e.start, e.end] for e in t.events],
        "memory_series": [[[tm, m] for tm, m in s] for s in t.memory_series],
        "windows": [[w.stage, w.time, list(w.chunks), w.phase.value, w.memory]
                    for w in t.windows],
    }


def _trace_from_dict(d: Dict[str, Any]) -> SimTrace:
    return SimTrace(
        events=[SimEvent(int(s), int(c), SimPhase(ph), float(a), float(b))
                for s, c, ph, a, b in d["events"]],
        makespan=float(d["makespan"]),
        bubble_ratio=float(d["bubble_ratio"]),
        peak_memory=[float(x) for x in d["peak_memory"]],
        memory_series=[[(float(tm), float(m)) for tm, m in s] for s in d["memory_series"]],
        windows=[Window(int(s), float(tm), tuple(ch), WindowPhase(ph), float(m))
                 for s, tm, ch, ph, m in d["windows"]],
        capacity=_num(d["capacity"]),
    )


def summarize(sim: PlanSimulation) -> Dict[str, Any]:
    stages = max((len(t.peak_memory) for t in sim.traces), default=0)
    peaks = [max(t.peak_memory[s] for t in sim.traces) for s in range(stages)]
    return {"total_time": sim.total_time, "bubble_ratio": sim.bubble_ratio,
            "stage_peak_memory": peaks, "violations": [list(v) for v in sim.violations]}


def trace_to_dict(sim: PlanSimulation, mode: str = "main") -> Dict[str, Any]:
    return {"kind": TRACE_KIND, "version": VERSION, "mode": mode,
            "summary": summarize(sim), "units": [_trace_to_dict(t) for t in sim.traces]}


def trace_from_dict(doc: Dict[str, Any]) -> PlanSimulation:
    doc = _check(doc, TRACE_KIND)
    try:
        traces = [_trace_from_dict(u) for u in doc["units"]]
        s = doc["summary"]
        return PlanSimulation(traces, float(s["total_time"]), float(s["bubble_ratio"]),
                              [tuple(v) for v in s["violations"]])
    except (KeyError, TypeError, ValueError) as exc:
        raise DocumentError(f"malformed trace document: {exc!r}") from None


def read(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DocumentError(f"{path}: not valid JSON ({exc})") from None


def write(doc: Dict[str, Any], path: Optional[Union[str, Path]]) -> str:
    """Serialize ``doc``; also write it to ``path`` unless that is None."""
    text = dumps(doc)
    if path is not None:
        Path(path).write_text(text)
    return text
