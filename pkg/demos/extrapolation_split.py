"""
Extrapolation splits never look into the future
===============================================

In the extrapolation setting, tasks are ordered by time and every neighbor
the encoder sees predates the support fact.
"""

import numpy as np

from most_tkg import HyperConfig, build_dataset
from most_tkg.dataset import split_time_spans
from most_tkg.synthetic import synthetic_dump
from most_tkg.trainer import make_model, new_state

quads, T = synthetic_dump(seed=0)
ds = build_dataset(quads, "extrapolation", lower=20, upper=100, seed=0, num_timestamps=T)

# train, valid and test cover consecutive, non-overlapping stretches of time
for name, (lo, hi) in split_time_spans(ds).items():
    print(f"{name:<6} [{lo:>4}, {hi:>4}]  {len(ds.split(name))} tasks")
print("boundaries:", ds.boundaries)

# the support is the earliest fact of a task; every query comes later
task = ds.test[0]
print("support time", task.support.t, "first query time", min(q.t for q in task.queries))

# nearest-in-time neighbors of the support subject, restricted to the past
config = HyperConfig(d=8, k=8)
model = make_model(ds, new_state(ds, config).params, config)
sample = model.sample(task.support.s, task.support.t)
print("neighbor times", sample.times.tolist())
assert np.all(sample.times < task.support.t)
