"""Regenerate the frozen random-walk Metropolis reference used by tests/test_mcmc.py.

Samples the ability-marginalized posterior of a 3-item, 3-category GPCM
(N=2000) and prints posterior means of a and the steps with batch-means MC
errors. Takes a few minutes.
"""
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
import oracle
from gpcm_recovery.model import ItemBank, ItemParams
from gpcm_recovery.simulation import generate_responses
bank = ItemBank([ItemParams(1.2, (-0.5, 0.6)), ItemParams(0.8, (0.3, -0.2)), ItemParams(1.5, (-1.0, 0.4))])
rng = np.random.default_rng(22)
d = generate_responses(bank, rng.standard_normal(2000), rng)
pat, cnt = np.unique(d.responses, axis=0, return_counts=True)
pat = [tuple(int(v) for v in p) for p in pat]
f = lambda x: oracle.marginal_log_posterior(x, pat, cnt, (2, 2, 2))
x0 = [0.2, 0, -0.4, -.5, .6, .3, -.2, -1, .4, 0, 0.]
sc = np.array([.04] * 3 + [.048] * 6 + [.4, .32])
t = time.time()
out = oracle.random_walk_metropolis(f, x0, sc, 600_000, 20_000, 10, 7)
print(time.time() - t)
a = np.exp(out[:, :3]).mean(0); st = out[:, 3:9].mean(0)
print('A =', repr(a.tolist())); print('STEPS =', repr(st.tolist()))
print('sd', out.std(0).round(4).tolist())
# batch means MC error
b = out.reshape(40, -1, out.shape[1]).mean(1)
print('mcse', (b.std(0) / np.sqrt(40)).round(4).tolist())
