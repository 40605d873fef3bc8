"""Build the desk-scale hidden target and look at what it generates.

The target is a two-layer sparse-coding generator: a Gaussian latent feeds
four first-layer patches of 32 ReLU channels each, and every one of the
eight second-layer patches upsamples one first-layer patch. Each layer
also emits an image, ``X_l = W_l S_l`` per patch, at its own resolution.
"""
import numpy as np

from fsrgan import desk_config, make_stream
from fsrgan.cli import build_target
from fsrgan.target import AssumptionConfig, sample_real, verify_assumptions

cfg = desk_config()
net = build_target(cfg, seed=0)
sh = net.shape
print(f"{sh.L} layers, patches {sh.d_l}, channels {sh.m_l}, latent {sh.m0} (learner sees {sh.m0_prime})")

real = sample_real(net, 20_000, make_stream(0, "demo"))
for l in range(sh.L):
    active = (real.S[l] > 0).mean()
    per_patch = (real.S[l] > 0).sum(-1).mean()
    print(f"layer {l + 1}: P[channel on] = {active:.4f}, mean active per patch = {per_patch:.2f}, "
          f"image energy per patch = {np.mean(np.sum(real.X[l] ** 2, -1)):.3f}")

# the dictionaries are orthonormal, so decoding a patch with W^T recovers the code exactly
err = np.abs(np.einsum("npd,pdm->npm", real.X[1], net.W[1]) - real.S[1]).max()
print(f"decode error with the true dictionary: {err:.2e}")

rep = verify_assumptions(net, 100_000, make_stream(0, "verify"), AssumptionConfig())
print("sparse-coding assumptions:", "all hold" if rep.ok else rep.flags)
print("smallest singular value of the pair-probability matrix per layer:",
      [round(min(v), 4) for v in rep.mu_min_singular])
