"""Evaluate the oracle on the documented scenarios and write frozen.json.

Run once from the repository root: ``python3 tests/oracles/freeze.py``.
"""

import json
from pathlib import Path

from oracle import activation, all2all, balanced_first_slice, comp, recompute, rsd

REALISTIC = dict(e=2, d=4096, layers=32, dp=4, ds=2, bandwidth=1.5e11, latency=2e-5)


def main():
    t_fwd = (comp(1.75e-9, 9.3e-5, 5e-3, 8, 4, 8192, [4096])
             + all2all(slices=[4096], **REALISTIC))
    frozen = {
        "t_comp_example": float(comp(2.1e-9, 3e-6, 5e-3, 8, 4, 8192, [4096])),
        "t_all2all_realistic": float(all2all(slices=[8192, 4096], **REALISTIC)),
        "m_activation_full_ckpt_nontail": float(activation(
            8, False, [16384], layers=32, dp=4, ds=2, n_gpus=8, e=2, d=4096, m_token=4.46e6)),
        "t_recompute_full_stage": float(recompute(8, 32, 2, t_fwd)),
        "t_forward_for_recompute": float(t_fwd),
        "balanced_first_slice_16384": balanced_first_slice(16384),
        "rsd_2_4_4_4_5_5_7_9": rsd([2, 4, 4, 4, 5, 5, 7, 9]),
    }
    out = Path(__file__).with_name("frozen.json")
    out.write_text(json.dumps(frozen, indent=1, sort_keys=True) + "\n")
    print(out.read_text())


if __name__ == "__main__":
    main()
