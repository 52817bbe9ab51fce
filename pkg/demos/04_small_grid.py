"""
A miniature method x augmentation grid
======================================

The same loop the ``daforge grid`` command runs: split both domains, balance
the target training pool once, then for each cell subsample the target,
train and score on the target test split.  Two repeats and short training
keep this to a few minutes; the acceptance suite runs the full version.
"""

from dataclasses import replace

from daforge.experiment import accuracy_table, desk_config, results_csv, run_grid

cfg = desk_config(repeats=2, sizes=(50, 100), epochs=30)
cfg = replace(cfg, hyper=replace(cfg.hyper, iterations=600))
results = run_grid(cfg)
print(accuracy_table(results))
print()
print(results_csv(results))
