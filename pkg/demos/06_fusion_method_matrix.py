"""The full method matrix at reduced scale.

Runs the whole pipeline (data, HAT, MHAT, external LM, adaptation,
fusion grid search, the six-method decode matrix) with smaller corpora
and budgets than the acceptance runs, in a couple of minutes.  The
directional story survives the downscaling: adaptation helps the target
domain, and fusing an external LM on top of the adapted model helps more.
"""

import sys

from mhat.evalcli import ExperimentConfig, run_experiment

cfg = ExperimentConfig(
    n_train=1400,
    n_dev=100,
    n_test=100,
    n_adapt_text=3000,
    epochs=7,
    lm_epochs=15,
    ilma_steps=450,
    lam_ext_grid=(0.0, 0.3, 0.6),
    lam_ilm_grid=(0.0, 0.2),
)

result = run_experiment(cfg, out_dir=None, log=lambda m: print("  " + m, file=sys.stderr))

print("\nWER matrix (%):")
for line in result.matrix_lines():
    print("  " + line.expandtabs(20))
print("\nbest fusion weights from the target dev grid:")
for method, (le, li) in result.best_lambdas.items():
    print(f"  {method}: lam_ext={le}, lam_ilm={li}")
rep = result.ilma_report
print(
    f"\nadaptation: target PPL {rep.target_ppl_before:.2f} -> {rep.target_ppl_after:.2f}, "
    f"source PPL {rep.source_ppl_before:.2f} -> {rep.source_ppl_after:.2f}"
)
