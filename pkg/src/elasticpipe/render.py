"""Static SVG Gantt charts of simulated plans, written directly as text."""

from __future__ import annotations

from typing import List, Sequence, Tuple
from xml.sax.saxutils import escape

from .schedule import SimEvent, SimPhase, SimTrace

COLORS = {SimPhase.FORWARD: "#4e79a7", SimPhase.BACKWARD: "#f28e2b",
          SimPhase.RECOMPUTE: "#e15759"}
IDLE = "#eeeeee"
LANE_H = 22
SPARK_H = 18
LEFT = 70
RIGHT = 20
TOP = 30
WIDTH = 1000


class RenderError(ValueError):
    pass


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def _ticks(span: float, count: int = 6) -> List[float]:
    if span <= 0:
        return [0.0]
    raw = span / count
    mag = 10 ** len(str(int(1 / raw))) if raw < 1 else 1
    step = max(round(raw * mag), 1) / mag
    out, t = [], 0.0
    while t <= span * (1 + 1e-9):
        out.append(t)
        t += step
    return out


def flatten(traces: Sequence[SimTrace]) -> Tuple[List[SimEvent], List[List[Tuple[float, float]]],
                                                 float, int]:
    """Lay units end to end: events and per-stage memory series on one time axis."""
    events: List[SimEvent] = []
    stages = max((len(t.peak_memory) for t in traces), default=0)
    series: List[List[Tuple[float, float]]] = [[] for _ in range(stages)]
    offset = 0.0
    for t in traces:
        for e in t.events:
            events.append(SimEvent(e.stage, e.chunk, e.phase, e.start + offset, e.end + offset))
        for p, s in enumerate(t.memory_series):
            series[p].extend((tm + offset, m) for tm, m in s)
        offset += t.makespan
    return events, series, offset, stages


def render_svg(traces: Sequence[SimTrace], title: str = "") -> str:
    """One lane per stage with forward/backward/recompute bars over an idle
    background, a labelled time axis, and a memory sparkline under each lane."""
    events, series, span, stages = flatten(traces)
    if not events or span <= 0:
        raise RenderError("trace has no events to draw")
    plot_w = WIDTH - LEFT - RIGHT
    row_h = LANE_H + SPARK_H + 6
    height = TOP + stages * row_h + 40

    def x(t: float) -> float:
        return LEFT + plot_w * t / span

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<text x="{LEFT}" y="18" font-size="13">{escape(title)}</text>']
    peak = max((m for s in series for _, m in s), default=1.0) or 1.0
    for p in range(stages):
        y0 = TOP + p * row_h
        out.append(f'<text x="6" y="{y0 + 15}">stage {p + 1}</text>')
        out.append(f'<rect class="idle" x="{LEFT}" y="{y0}" width="{plot_w}" height="{LANE_H}" '
                   f'fill="{IDLE}"/>')
        for e in events:
            if e.stage != p + 1 or e.end <= e.start:
                continue
            out.append(f'<rect class="{e.phase.value}" x="{x(e.start):.3f}" y="{y0}" '
                       f'width="{x(e.end) - x(e.start):.3f}" height="{LANE_H}" '
                       f'fill="{COLORS[e.phase]}" stroke="#ffffff" stroke-width="0.5">'
                       f'<title>chunk {e.chunk} {e.phase.value}</title></rect>')
        pts = series[p]
        if pts:
            ys = y0 + LANE_H + 2 + SPARK_H
            path = []
            last = None
            for tm, m in sorted(pts):
                yy = ys - SPARK_H * m / peak
                if last is not None:
                    path.append(f"{x(tm):.3f},{last:.3f}")
                path.append(f"{x(tm):.3f},{yy:.3f}")
                last = yy
            out.append(f'<polyline class="memory" points="{" ".join(path)}" fill="none" '
                       f'stroke="#59a14f" stroke-width="1"/>')
    axis_y = TOP + stages * row_h + 4
    out.append(f'<line x1="{LEFT}" y1="{axis_y}" x2="{LEFT + plot_w}" y2="{axis_y}" '
               f'stroke="#333333"/>')
    for t in _ticks(span):
        out.append(f'<line x1="{x(t):.3f}" y1="{axis_y}" x2="{x(t):.3f}" y2="{axis_y + 4}" '
                   f'stroke="#333333"/>')
        out.append(f'<text x="{x(t):.3f}" y="{axis_y + 16}" text-anchor="middle">{_fmt(t)}</text>')
    out.append(f'<text x="{LEFT + plot_w}" y="{axis_y + 30}" text-anchor="end">time (s)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
