"""Correlated missingness, and how a shift between train and test looks.

Masks come from a Gaussian copula with AR(1) correlation: neighbouring
columns (after a random permutation) tend to go missing together.  The
training and test scenarios use different permutations and rates, so the
test set sees both more missing values and different co-missing patterns.
"""

import numpy as np

from mirrams.missingness import Ar1Copula, BernoulliMasker, ShiftScenario, compose_masks, sample_shift_masks

p, n = 8, 100_000
for alpha in (0.1, 0.3):
    miss = ~sample_shift_masks(Ar1Copula(p, 0.7, alpha, seed=1), n)
    c = np.corrcoef(miss.T)
    lag = [np.mean([c[i, i + k] for i in range(p - k)]) for k in range(1, 5)]
    print(f"alpha={alpha}: column rates {np.round(miss.mean(axis=0), 3)}")
    print(f"           indicator correlation at lag 1..4: {np.round(lag, 3)}")

scen = ShiftScenario(p, rho=0.7, alpha_tr=0.1, alpha_ts=0.3, seed=4)
print("\ntrain permutation", scen.perm_tr)
print("test permutation ", scen.perm_ts)
tr, va, te = scen.masks(5000, 1000, 1000)
print(f"missing rate: train {1 - tr.mean():.3f}, validation {1 - va.mean():.3f}, test {1 - te.mean():.3f}")

# Extra Bernoulli masking on top of the training mask widens the patterns seen in training.
extra = BernoulliMasker(0.3, seed=0).sample(*tr.shape)
both = compose_masks(tr, extra)
print(f"training mask with r=0.3 extra masking: missing rate {1 - both.mean():.3f}")
patterns = lambda m: len({row.tobytes() for row in m})
print(f"distinct patterns in 5000 rows: {patterns(tr)} before, {patterns(both)} after")
