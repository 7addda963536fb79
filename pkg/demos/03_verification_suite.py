"""Tour of the probabilistic verification metrics.

Builds three synthetic ensemble populations with known calibration defects
and shows how bias, RMSE, CRPS, the rank histogram with its missing rate
error, the spread-error relationship, and the Brier score expose them.

Run: python demos/03_verification_suite.py
"""

import numpy as np

from analogkit.verification import (
    VerificationSet,
    bias,
    brier,
    crps,
    rank_histogram,
    rmse,
    spread_error,
)

rng = np.random.default_rng(7)
n, m = 5000, 11
centers = 3.0 * rng.standard_normal(n)
truth = centers + rng.standard_normal(n)


def vset(members):
    return VerificationSet(members=members, observations=truth,
                           lead_s=np.zeros(n, dtype=np.int64))


populations = {
    # members drawn from the same distribution as the observation
    "calibrated": vset(centers[:, None] + rng.standard_normal((n, m))),
    # spread too small: observations escape the envelope too often
    "under-dispersive": vset(centers[:, None] + 0.4 * rng.standard_normal((n, m))),
    # spread too large and shifted: biased, over-dispersive
    "biased + wide": vset(centers[:, None] + 0.8 + 2.0 * rng.standard_normal((n, m))),
}

threshold = float(np.quantile(truth, 0.75))
print(f"event threshold (75th percentile of the observations): {threshold:+.3f}\n")
header = f"{'population':>18s} {'bias':>7s} {'rmse':>6s} {'crps':>6s} {'mre':>7s} {'brier':>6s}"
print(header)
for name, vs in populations.items():
    _, mre = rank_histogram(vs, seed=0)
    print(f"{name:>18s} {bias(vs):+7.3f} {rmse(vs):6.3f} {crps(vs):6.3f} "
          f"{mre:+7.3f} {brier(vs, threshold):6.3f}")

print("\nrank histogram shapes (counts over ranks 1 .. M+1):")
for name, vs in populations.items():
    counts, _ = rank_histogram(vs, seed=0)
    # crude sparkline: scale counts to 0-9
    scaled = np.round(9 * counts / counts.max()).astype(int)
    print(f"{name:>18s}  {' '.join(str(d) for d in scaled)}")
print("flat = calibrated, U-shape = under-dispersive, dome = over-dispersive")

print("\nspread-error relationship of the calibrated population (4 bins):")
for b in spread_error(populations["calibrated"], 4, seed=0):
    print(f"  mean spread {b.mean_spread:5.3f} -> rmse {b.rmse:5.3f} "
          f"[{b.rmse_lo:5.3f}, {b.rmse_hi:5.3f}] over {b.count} pairs")
print("a calibrated ensemble's spread predicts its own error magnitude")
