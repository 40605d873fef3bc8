"""Spectral warm start of the output dictionaries.

For a random probe x the matrix E[<x, X> P(X) P(X)^T] has a large top
eigenvalue when x leans on one dictionary column. Accepted eigenvectors
are sharpened by a truncated average and then projected out, one column at
a time, until each patch has m columns.
"""
import time

from fsrgan import desk_config
from fsrgan.cli import build_target
from fsrgan.evaluation import w_col_errors
from fsrgan.learner import init_learner
from fsrgan.pipeline import warm_start_all

cfg = desk_config()
net = build_target(cfg, seed=0)

t = time.perf_counter()
ws = warm_start_all(net, cfg, seed=0)
print(f"warm start took {time.perf_counter() - t:.1f}s")
learner = init_learner(net.shape, [ws[l][0] for l in range(net.shape.L)], cfg.constants.C_alpha)
for l in range(net.shape.L):
    errs = w_col_errors(net, learner, l)
    print(f"layer {l + 1}: {ws[l][1].iterations} probe iterations, matched column error per patch",
          [round(e, 3) for e in errs])
