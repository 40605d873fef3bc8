"""Run the stage loop on the first layer and watch the moments close.

Each stage lowers the threshold b a little and runs three small games:
D4 matches single-neuron statistics (scales and biases), D5 matches
pairwise co-activation through the row directions, and D1 reinforces the
output dictionary from truncated first moments. Three stages take a few
minutes on one core.
"""
import dataclasses

from fsrgan import desk_config
from fsrgan.cli import build_target
from fsrgan.evaluation import gram_gaps, moment_gaps, w_col_errors
from fsrgan.learner import init_learner
from fsrgan.pipeline import train_layer, warm_start_all

cfg = desk_config()
cfg = cfg.replace(schedule=dataclasses.replace(cfg.schedule, T_stages=3))
net = build_target(cfg, seed=0)
ws = warm_start_all(net, cfg, seed=0)
learner = init_learner(net.shape, [ws[l][0] for l in range(net.shape.L)], cfg.constants.C_alpha)


def show(rec, L):
    mg = moment_gaps(net, L, 0, 20_000, 0, cfg.smoothing)
    g = gram_gaps(net, L)
    print(f"stage {rec.context.stage} (b = {rec.context.b:.3f}): column error {max(w_col_errors(net, L, 0)):.3f}, "
          f"moment gaps {[f'{mg[k].max():.2e}' for k in (1, 2, 3)]}, "
          f"within-patch Gram gap {g['within']:.3f}")


learner, _ = train_layer(0, net, learner, cfg, seed=0, callback=show)
