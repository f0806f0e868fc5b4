"""Subgroup learning-lag curves.

Train a sex classifier on everyone, but track the flipped subgroup
separately: it lags far behind the rest of the population for the whole
run, which is how a consistently-hard subgroup reveals itself.
"""

import numpy as np

from embaudit import pipeline
from embaudit.synth import SynthEmbeddingSpec, generate_embeddings

spec = SynthEmbeddingSpec(
    n_subjects=400, dim=24, separation=8.0, flipped_fraction=0.05, seed=4
)
ds, truth = generate_embeddings(spec)
flipped = {sid for sid, t in truth.items() if t.flipped}
report = pipeline.run_lag(ds, flipped, epochs=30, lr=0.5, seed=4)

print("epoch  overall  subgroup  rest      (train accuracy)")
for e in report.entries:
    if e.epoch % 3 == 0 or e.epoch == 1:
        bar = "#" * int(e.subgroup_train_acc * 20)
        print(f"{e.epoch:5d}  {e.overall_train_acc:.3f}    {e.subgroup_train_acc:.3f}  "
              f"  {e.rest_train_acc:.3f}   |{bar:<20s}|")

last = report.entries[-1]
gap = last.overall_train_acc - last.subgroup_train_acc
print(f"\nfinal gap between overall and subgroup accuracy: {gap:.3f}")
