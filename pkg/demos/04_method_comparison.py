"""Benchmark the chain against its three baselines on one grid cell.

Twenty replicates at sensitivity = specificity = 0.8, n = 300: the chain
should beat the fixed-parameter EM variants and the logistic classifier
trained on the raw test labels.

Run:  python3 demos/04_method_comparison.py   (about a minute)
"""

from stem_fuse import bench, synth

cells = synth.grid_spec(
    sens_list=[0.8], spec_list=[0.8], n_list=[300], sigma_list=[0.5],
    replicates=20, master_seed=0,
)
rows = bench.run_grid(cells, methods=bench.KNOWN_METHODS)

print(f"{'method':<14} {'accuracy':>12} {'gain over T':>12}")
for row in rows:
    print(f"{row.method:<14} {row.mean_accuracy:7.2f}±{row.std_accuracy:<4.2f} "
          f"{row.mean_gain:+9.2f}")
stem = next(r for r in rows if r.method == "stem")
print(f"\nstem: mean {stem.mean_iterations:.0f} iterations per fit, "
      f"{stem.mean_iter_seconds * 1000:.2f} ms per iteration")
