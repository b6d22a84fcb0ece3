# ---
# jupyter:
#   jupytext:
#     formats: py:light
#     text_representation:
#       extension: .py
#       format_name: light
#       format_version: '1.5'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# # Short loss ablation
#
# Every loss trained for the same short budget on ring8. The numbers are
# single-seed and noisy; they show the harness, not a ranking.

from rmcosgan.harness import ExperimentConfig, TrainingDiverged, train
from rmcosgan.losses import LossKind

base = ExperimentConfig(steps=1500, eval_interval=500)
for kind in LossKind:
    try:
        final = train(base.replace(loss=kind.value)).report.final
        print(f"{kind.value:9s} FID {final.fid:.4f}  modes {final.modes}  hq {final.hq_frac:.3f}")
    except TrainingDiverged as exc:
        print(f"{kind.value:9s} diverged at step {exc.step}")

# Margin sweep for the margin-cosine loss at the same budget.

for m in (0.0, 0.15, 0.8):
    final = train(base.replace(m=m)).report.final
    print(f"m={m:<5} FID {final.fid:.4f}  modes {final.modes}")
