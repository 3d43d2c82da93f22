"""
Are the estimator's fluctuations Gaussian?
==========================================

Repeat the estimate many times with fresh walks and look at the rescaled
deviations t (A_hat - mean).  A text histogram stands in for a plot.
"""

import numpy as np

from rwre import ConductanceLaw, fluctuation_sample
from rwre.study import histogram, index_base, repeated_estimates

law = ConductanceLaw.two_point(1, 4, 0.5)
xi = np.array([1.0, 0.0])
t, m = 10, 4000

for n in (100, 400):
    a_hats, _ = repeated_estimates(law, 2, 3, xi, t, n, m, index_base("fluctuations", t) + n * m)
    s = fluctuation_sample(a_hats, t)
    print(f"n={n}: sd={np.sqrt(s.variance):.3f} skewness={s.skewness:.3f} excess kurtosis={s.excess_kurtosis:.3f}")

    counts, edges = histogram(s.deviations, bins=21, sds=4)
    for c, lo in zip(counts, edges):
        print(f"  {lo:+7.3f} {'#' * int(60 * c / counts.max())}")

# the skewness falls roughly like 1/sqrt(n): the estimator is a ratio of
# sums of heavy-ish terms, and n=100 walks is not yet in the Gaussian regime
