"""Lay out planted-cluster embeddings with t-SNE and plot them by sex.

The flipped subgroup lands inside the opposite sex blob, exactly the
pattern the audit is built to expose.
"""

import numpy as np

from embaudit.synth import SynthEmbeddingSpec, generate_embeddings
from embaudit.tsne import TsneParams, tsne_layout

spec = SynthEmbeddingSpec(
    n_subjects=200, dim=24, separation=8.0, flipped_fraction=0.04, seed=2
)
ds, truth = generate_embeddings(spec)

params = TsneParams(perplexity=30.0, iterations=600, seed=2)
result = tsne_layout(ds, params)
print(f"layout of {len(result.points)} points, final KL {result.kl_trace[-1]:.4f}")

Y = result.coords()
sexes = np.array([ds.metadata[p.subject_id].sex for p in result.points])
flipped = np.array([truth[p.subject_id].flipped for p in result.points])

# flipped males should sit near the female centroid and vice versa
male_c = Y[(sexes == "male") & ~flipped].mean(axis=0)
female_c = Y[(sexes == "female") & ~flipped].mean(axis=0)
for sex, own, other in (("male", male_c, female_c), ("female", female_c, male_c)):
    pts = Y[(sexes == sex) & flipped]
    if len(pts):
        d_own = np.linalg.norm(pts - own, axis=1).mean()
        d_other = np.linalg.norm(pts - other, axis=1).mean()
        print(f"flipped {sex}s: mean dist to own blob {d_own:.1f}, "
              f"to opposite blob {d_other:.1f}")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 6))
    for sex, color in (("male", "tab:blue"), ("female", "tab:orange")):
        sel = sexes == sex
        ax.scatter(Y[sel, 0], Y[sel, 1], s=8, c=color, label=sex, alpha=0.6)
    ax.scatter(Y[flipped, 0], Y[flipped, 1], s=40, facecolors="none",
               edgecolors="red", label="flipped subgroup")
    ax.legend()
    ax.set_title("t-SNE of planted embeddings, colored by sex")
    fig.savefig("tsne_by_sex.png", dpi=120)
    print("wrote tsne_by_sex.png")
except ImportError:
    print("matplotlib not available, skipping the plot")
