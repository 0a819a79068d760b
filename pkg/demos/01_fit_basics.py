"""Simulate a cohort, fit the chain, and inspect what it recovered.

Run:  python3 demos/01_fit_basics.py
"""

import numpy as np

import stem_fuse as sf
from stem_fuse import bench, synth

SEED = 13
N = 400

rng = np.random.default_rng(SEED)
true_params = synth.sample_true_params(
    k_symptoms=6, m_factors=2, sensitivity=0.8, specificity=0.8, rng=rng
)
dataset, truth = synth.generate(true_params, N, 6, 2, rng)

# Priors: a manufacturer-style claim on the test accuracy, flat elsewhere.
cell = next(iter(synth.grid_spec([0.8], [0.8], [N], [0.5], replicates=1,
                                 k_symptoms=6, m_factors=2)))
hyper = bench.default_cell_hyper(cell)

config = sf.EngineConfig(max_iters=300, seed=SEED)
chain, summary = sf.run_stem(dataset, hyper, config)

print(f"chain: {chain.n_iters} iterations ({chain.stop_reason}), "
      f"burn-in {chain.burn_in}")

est = summary.params_mean
print("\nparameter recovery (posterior mean vs generating value):")
for name, got, want in [
    ("sensitivity", est.sensitivity, true_params.sensitivity),
    ("false positive rate", est.false_positive_rate, true_params.false_positive_rate),
    ("P(symptomatic | healthy)", est.symptomatic_if_healthy, true_params.symptomatic_if_healthy),
    ("P(symptomatic | infected)", est.symptomatic_if_infected, true_params.symptomatic_if_infected),
]:
    print(f"  {name:<26} {got:6.3f}  (truth {want:.3f})")

predicted = (summary.subject_means > 0.5).astype(int)
test = dataset.arrays.test.astype(int)
print(f"\ndiagnosis accuracy: {bench.accuracy(predicted, truth):.1f}% "
      f"(raw test: {bench.accuracy(test, truth):.1f}%)")

width = summary.subject_intervals[:, 1] - summary.subject_intervals[:, 0]
print(f"95% credible interval width: median {np.median(width):.3f}, "
      f"max {width.max():.3f}")
