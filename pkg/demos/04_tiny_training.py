"""
A small self-supervised training run
====================================

Trains a narrow model on a handful of 32x48 scenes for a few dozen steps,
then evaluates on the held-out split. Takes well under a minute.
"""

from daccn import config
from daccn.metrics import format_table
from daccn.model import parameter_count
from daccn.synthdata import dataset, split
from daccn.train import train

run = config.from_dict({
    "model": {"branch_channels": [4, 4, 6, 6], "input_h": 32, "input_w": 48},
    "data": {"scene": {"image_h": 32, "image_w": 48}, "count": 8},
    "iterations": 40,
    "optimizer": {"lr": 1e-3},
})
print("parameters:", parameter_count(run.model))

tr, va = split(list(dataset(run.data.scene, run.data.count, run.data.seed)))
result = train(run, tr, va)
first, last = result.window_means(window=10)
print("loss, first vs last 10 steps: %.4f -> %.4f" % (first, last))
print("learned direction scales (s_x, s_y):")
for b, (sx, sy) in enumerate(result.model.learned_scales()):
    print("  branch %d: %.4f %.4f" % (b, sx, sy))
print(format_table([result.report], ["held-out"]))
