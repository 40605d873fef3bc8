"""The whole pipeline through the command line, then the headline numbers.

Equivalent shell session::

    python -m fsrgan train --out runs/demo
    python -m fsrgan eval --out runs/demo

About 25 minutes on one core.
"""
import json
import sys
from pathlib import Path

from fsrgan.cli import main

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/demo")
for cmd in ("train", "eval"):
    code = main([cmd, "--out", str(out)])
    if code:
        sys.exit(code)

m = json.loads((out / "metrics.json").read_text())
print("matched column error per layer:", [round(max(v), 4) for v in m["w_col_err"]])
print("first-layer Gram gaps:", m["pair_moment_gap"])
print("layer-2 code tail probability (worst channel):", max(max(r) for r in m["hidden_tail"][1]))
e = m["e2e_eps"]
print(f"end-to-end distance {e['mean']:.3f} vs untrained {e['baseline_mean']:.3f}")
