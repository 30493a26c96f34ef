import json
import os
import subprocess
import sys
import textwrap

import numpy as np

from elasticpipe import _jit, kernels

FINGERPRINT = textwrap.dedent("""
    import json, random, sys
    import numpy as np
    sys.path.insert(0, {tests!r})
    from conftest import make_configs, random_unit
    from elasticpipe import _jit
    from elasticpipe.milp import MilpInstance, brute_force, solve, lp_relax, Infeasible
    from elasticpipe.schedule import simulate
    out = {{"jit": _jit.JIT_ENABLED, "sim": [], "milp": []}}
    rng = np.random.default_rng(0)
    cfg = make_configs(dp=4, layers=8)
    for _ in range(10):
        unit = random_unit(rng)
        ck = {{(p, k.id): int(rng.integers(0, 3)) for p in range(1, 5) for k in unit.chunks}}
        tr = simulate(unit, ck, cfg.params, cfg.cluster, cfg.model)
        out["sim"].append([tr.makespan, [(e.start, e.end) for e in tr.events]])
    r = random.Random(1)
    for _ in range(40):
        n = r.randint(1, 6)
        cons = tuple(({{j: r.uniform(-5, 5) for j in range(n)}}, r.uniform(-8, 6))
                     for _ in range(r.randint(0, 4)))
        inst = MilpInstance(n, tuple(r.randint(0, 4) for _ in range(n)), cons)
        try:
            out["milp"].append([list(solve(inst).values), list(brute_force(inst).values),
                                lp_relax(inst)])
        except Infeasible:
            out["milp"].append(None)
    print(json.dumps(out))
""")


def fingerprint(flag):
    here = os.path.dirname(os.path.abspath(__file__))
    env = dict(os.environ, ELASTICPIPE_JIT=flag)
    res = subprocess.run([sys.executable, "-c", FINGERPRINT.format(tests=here)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def test_numpy_fallback_matches_jit():
    plain, jitted = fingerprint("0"), fingerprint("1")
    assert plain.pop("jit") is False
    assert jitted.pop("jit") is _jit.HAVE_NUMBA
    assert plain["milp"] == jitted["milp"]
    for a, b in zip(plain["sim"], jitted["sim"]):
        assert np.allclose(a[0], b[0], rtol=1e-12)
        assert np.allclose(np.array(a[1]), np.array(b[1]), rtol=1e-12, atol=1e-15)


def test_flag_parsing(monkeypatch):
    for value in ("0", "false", "OFF", "no"):
        monkeypatch.setenv("ELASTICPIPE_JIT", value)
        assert not _jit.jit_enabled()
    monkeypatch.setenv("ELASTICPIPE_JIT", "1")
    assert _jit.jit_enabled() == _jit.HAVE_NUMBA


def test_py_func_available_for_every_kernel():
    for name in ("schedule_times", "_brute_force_loop", "dual_simplex"):
        assert callable(getattr(kernels, name).py_func)


def test_brute_force_kernels_agree():
    rng = np.random.default_rng(5)
    for _ in range(30):
        n, m = int(rng.integers(1, 5)), int(rng.integers(0, 4))
        A = rng.uniform(-3, 3, size=(m, n))
        b = rng.uniform(-4, 4, size=m)
        ub = rng.integers(0, 4, size=n).astype(np.int64)
        c = rng.uniform(-2, 2, size=n)
        tol = np.full(m, 1e-7)
        loop = kernels._brute_force_loop.py_func(A, b, ub, c, tol)
        vec = kernels._brute_force_numpy(A, b, ub, c, tol)
        assert loop[0] == vec[0]
        if loop[0]:
            assert np.isclose(loop[2], vec[2])
