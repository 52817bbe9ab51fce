"""
Synthetic wafer maps and autoencoder oversampling
=================================================

Two synthetic domains share four defect classes.  The source is large and
balanced at 16x16; the target is small, noisier, shifted and imbalanced at
12x12.  Minority target classes are grown by decoding noisy latent codes.
"""

import numpy as np

from daforge.augment import AugmentPlan, balance_dataset, build_autoencoder, train_autoencoder
from daforge.data import SynthSpec, generate_synth

spec = SynthSpec(source_counts=(100,) * 4, target_counts=(100, 10, 10, 10), seed=0)
source, target = generate_synth(spec)
print("classes:", source.class_names)
print("source", source.shape, source.class_counts(), "target", target.shape, target.class_counts())

# cell codes: 0 off-wafer, 1 pass, 2 fail
glyph = np.array([" ", ".", "#"])
for c in range(target.n_classes):
    i = np.flatnonzero(target.labels == c)[0]
    print(f"\n{target.class_names[c]}")
    print("\n".join("".join(glyph[row]) for row in target.maps[i]))

# the encoder width is picked so the latent code stays smaller than the input
ae = build_autoencoder(target.input_shape, seed=0)
print("\nlatent", ae.latent_shape, "=", np.prod(ae.latent_shape), "values for",
      np.prod(target.input_shape), "inputs")
ae, history = train_autoencoder(ae, target, epochs=60, seed=0)
print("reconstruction MSE per element:", np.round(history[[0, 10, 30, 60]], 4))

balanced = balance_dataset(target, AugmentPlan.to_total(target, "max", noise_std=0.6, seed=0), ae)
print("after balancing:", balanced.class_counts())

# a synthetic minority sample next to the original class example
k = len(target) + 5
print(f"\nsynthetic {balanced.class_names[balanced.labels[k]]}")
print("\n".join("".join(glyph[row]) for row in balanced.maps[k]))
