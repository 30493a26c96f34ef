"""Calibrate the bucket probabilities of the github_like preset.

Targets (dataset summary statistics for GitHub code):
  * 91.5% of sequences have at most 8K tokens,
  * 0.6% have more than 64K tokens,
  * those 0.6% carry 21.6% of all tokens.

Bucket shapes inside the three groups are fixed by eye from the published
length histogram; one free parameter (the weight of the sub-1K bucket inside
the short group) is solved so the long-token share hits its target.  Lengths
are log-uniform within each bucket, whose mean is (b - a) / ln(b / a).

Run:  python scripts/calibrate_presets.py
"""

import math

EDGES = [64, 1024, 2048, 4096, 8192, 16384, 32768, 65536, 131072, 196608]
SHORT, MID, LONG = 0.915, 0.079, 0.006
MID_SHAPE = [0.60, 0.26, 0.14]
LONG_SHAPE = [0.65, 0.35]
SHORT_REST = [0.55, 0.30, 0.15]  # 1-2K, 2-4K, 4-8K relative weights


def bucket_mean(a, b):
    return (b - a) / math.log(b / a)


def probabilities(theta):
    short = [theta] + [(1 - theta) * w for w in SHORT_REST]
    return ([SHORT * p for p in short] + [MID * p for p in MID_SHAPE]
            + [LONG * p for p in LONG_SHAPE])


def long_token_share(probs):
    means = [bucket_mean(a, b) for a, b in zip(EDGES, EDGES[1:])]
    tokens = [p * m for p, m in zip(probs, means)]
    return sum(tokens[-2:]) / sum(tokens)


def main():
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        # more sub-1K mass -> fewer short tokens -> larger long share
        if long_token_share(probabilities(mid)) < 0.216:
            lo = mid
        else:
            hi = mid
    probs = probabilities(lo)
    print("theta =", round(lo, 4))
    print("GITHUB_PROBS = (" + ", ".join(f"{p:.5f}" for p in probs) + ")")
    print("P(<=8K) =", round(sum(probs[:4]), 4), " P(>64K) =", round(sum(probs[-2:]), 4),
          " long token share =", round(long_token_share(probs), 4))


if __name__ == "__main__":
    main()
