"""
Adversarial domain adaptation on synthetic data
===============================================

Private generators map each domain into a common vector, a shared generator
turns it into the domain-independent representation, a discriminator tries
to tell the domains apart and a classifier predicts the class.  The desk
hyperparameters train in about a minute.
"""

import numpy as np

from daforge import adversarial as da
from daforge.data import generate_synth, stratified_split, subsample_target
from daforge.experiment import DESK_HYPER, DESK_SYNTH
from daforge.metrics import MetricsReport

source, target = generate_synth(DESK_SYNTH)
s_train, s_test = stratified_split(source, 0.6, seed=1)
t_train, t_test = stratified_split(target, 0.6, seed=2)
t_small = subsample_target(t_train, 100, seed=3)
print("target training counts:", t_small.class_counts())

model = da.build_da_networks(s_train.input_shape, t_small.input_shape, 4, seed=0)
for name, net in model.networks.items():
    print(f"{name:4s} {net.input_shape} -> {net.output_shape}, {net.n_params()} params")

result = da.train(model, s_train, t_small, DESK_HYPER, seed=0)

# per-sample losses, averaged over blocks of 250 iterations
per_sample = result.curves / DESK_HYPER.batch_size
blocks = per_sample.reshape(-1, 250, 3).mean(axis=1)
print("\niters     L_c     L_d     L_g   L_d+L_g")
for i, (lc, ld, lg) in enumerate(blocks):
    print(f"{250 * (i + 1):5d} {lc:7.3f} {ld:7.3f} {lg:7.3f} {ld + lg:8.3f}")

probs = da.predict(model, t_test.x, "target")
rep = MetricsReport.from_predictions(t_test.labels, probs.argmax(axis=1), 4)
print(f"\ntarget test balanced accuracy {rep.balanced_accuracy:.3f}, precision {rep.precision:.3f}")
print("per-class recall", np.round(rep.recalls, 3))
k = min(len(s_test), len(t_test))
print("held-out discriminator accuracy",
      round(da.domain_accuracy(model, s_test.x[:k], t_test.x[:k]), 3))
