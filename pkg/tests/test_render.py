import re

import pytest

from elasticpipe.render import RenderError, flatten, render_svg
from elasticpipe.schedule import SimTrace, order_chunks, simulate

from conftest import make_chain, make_configs
from elasticpipe.cost_model import CostParams


def toy_trace():
    cfg = make_configs(dp=2, params=CostParams(0, 0, 2, 0, 0, 2))
    unit = order_chunks([make_chain(0, [10, 10], 0)])
    return simulate(unit, None, cfg.params, cfg.cluster, cfg.model)


def bars(svg):
    return re.findall(r'<rect class="(forward|backward|recompute)" x="([\d.]+)" y="([\d.]+)" '
                      r'width="([\d.]+)"', svg)


def test_toy_trace_lanes_and_bars():
    svg = render_svg([toy_trace()], "toy")
    assert svg.count('class="idle"') == 2
    assert len(bars(svg)) == 8
    assert svg.count('class="memory"') == 2
    assert "time (s)" in svg and svg.startswith("<svg")


def test_bars_do_not_overlap_within_a_lane():
    tr = toy_trace()
    svg = render_svg([tr, tr])
    lanes = {}
    for _, x, y, w in bars(svg):
        lanes.setdefault(y, []).append((float(x), float(x) + float(w)))
    assert len(lanes) == 2
    for spans in lanes.values():
        spans.sort()
        assert all(a[1] <= b[0] + 1e-6 for a, b in zip(spans, spans[1:]))


def test_units_are_laid_end_to_end():
    tr = toy_trace()
    events, series, span, stages = flatten([tr, tr])
    assert span == pytest.approx(2 * tr.makespan)
    assert stages == 2 and len(events) == 16
    assert min(e.start for e in events[8:]) >= tr.makespan - 1e-12


def test_empty_trace_is_an_error():
    with pytest.raises(RenderError):
        render_svg([])
    empty = SimTrace(events=[], makespan=0.0, bubble_ratio=0.0, peak_memory=[], memory_series=[])
    with pytest.raises(RenderError):
        render_svg([empty])


def test_title_is_escaped():
    assert "a &lt;b&gt;" in render_svg([toy_trace()], "a <b>")
