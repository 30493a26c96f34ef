import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from elasticpipe.cost_model import ConfigError
from elasticpipe.workload import (EDGES, PRESETS, Workload, WorkloadError, expand_histogram,
                                  format_stats, generate, load, save, stats)


def test_load_length_file(tmp_path):
    f = tmp_path / "w.txt"
    f.write_text("4096\n8192\n")
    assert load(f).lengths == [4096, 8192]
    f.write_text("# header\n\n100  # trailing\n")
    assert load(f).lengths == [100]


def test_load_rejects_bad_input(tmp_path):
    f = tmp_path / "w.txt"
    f.write_text("")
    with pytest.raises(WorkloadError):
        load(f)
    f.write_text("12\nabc\n")
    with pytest.raises(WorkloadError, match=":2:"):
        load(f)
    f.write_text("0\n")
    with pytest.raises(WorkloadError):
        load(f)
    f.write_text('{"count": 3}')
    with pytest.raises(WorkloadError):
        load(f)


def test_histogram_expansion(tmp_path):
    doc = {"count": 1000, "seed": 3,
           "bins": [{"lo": 1, "hi": 8192, "p": 0.915},
                    {"lo": 8192, "hi": 65536, "p": 0.079},
                    {"lo": 65536, "hi": 196608, "p": 0.006}]}
    f = tmp_path / "h.json"
    f.write_text(json.dumps(doc))
    lengths = load(f).lengths
    assert len(lengths) == 1000
    assert sum(x <= 8192 for x in lengths) == 915
    assert sum(x > 65536 for x in lengths) == 6
    assert lengths == expand_histogram(doc["bins"], 1000, 3)


def test_github_preset_shape():
    lengths = np.array(generate("github_like", 10000, 0).lengths)
    assert abs((lengths <= 8192).mean() - 0.915) <= 0.015
    tail_tokens = lengths[lengths >= 65536].sum() / lengths.sum()
    assert abs(tail_tokens - 0.216) <= 0.05


def test_uniform_and_custom_presets():
    assert set(generate("uniform", 50, 1).lengths) == {4096}
    w = generate("uniform", 200, 1, low=10, high=20)
    assert min(w.lengths) >= 10 and max(w.lengths) <= 20
    bins = [{"lo": 0, "hi": 100, "p": 1.0}]
    assert max(generate("custom", 20, 0, bins=bins).lengths) <= 100
    with pytest.raises(ConfigError):
        generate("custom", 5)
    with pytest.raises(ConfigError):
        generate("zipf", 5)
    with pytest.raises(WorkloadError):
        generate("uniform", 0)


def test_save_load_round_trip(tmp_path):
    w = generate("commoncrawl_like", 64, 2)
    save(w, tmp_path / "w.txt")
    assert load(tmp_path / "w.txt").lengths == w.lengths


def test_stats_examples():
    one = stats(Workload([4096], "x"))
    assert len(one) == 1 and one[0]["sample_frac"] == 1.0 and one[0]["token_frac"] == 1.0
    two = stats(Workload([1024] * 5 + [8192] * 5, "x"))
    assert [r["token_frac"] for r in two] == pytest.approx([1 / 9, 8 / 9])
    assert "interval" in format_stats(two)


def test_long_bucket_dominates_flops():
    rows = stats(generate("github_like", 4000, 1))
    long_rows = [r for r in rows if r["lo"] >= 65536]
    assert sum(r["flop_frac"] for r in long_rows) > sum(r["token_frac"] for r in long_rows)


@given(st.sampled_from(["github_like", "commoncrawl_like", "uniform"]), st.integers(1, 300),
       st.integers(0, 2 ** 31), st.integers(1000, 200000))
def test_generation_properties(preset, count, seed, cap):
    w = generate(preset, count, seed, context_cap=cap, low=1, high=300000)
    assert w.lengths == generate(preset, count, seed, context_cap=cap, low=1, high=300000).lengths
    assert len(w.lengths) == count
    assert max(w.lengths) <= cap and min(w.lengths) >= 1
    rows = stats(w)
    for key in ("sample_frac", "token_frac", "flop_frac"):
        assert sum(r[key] for r in rows) == pytest.approx(1.0, abs=1e-9)
    assert sum(r["count"] for r in rows) == count
