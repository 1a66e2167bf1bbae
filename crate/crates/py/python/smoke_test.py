"""Smoke test for the `anchor` extension module.

Build and run from the workspace root:

    cargo build -p anchor-py --release --features extension-module
    python3 crates/py/python/smoke_test.py

With maturin installed, `maturin develop -m crates/py/Cargo.toml` works too.
"""

import math
import os
import shutil
import sys
import tempfile


def locate():
    try:
        import anchor  # noqa: F401
        return
    except ImportError:
        pass
    root = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", ".."))
    for profile in ("release", "debug"):
        lib = os.path.join(root, "target", profile, "libanchor.so")
        if os.path.exists(lib):
            tmp = tempfile.mkdtemp()
            shutil.copy(lib, os.path.join(tmp, "anchor.so"))
            sys.path.insert(0, tmp)
            return
    sys.exit("anchor extension not built; see the module docstring")


locate()
import anchor  # noqa: E402

assert abs(anchor.threshold_at(1.0, 2.0, 0.0) - math.exp(-1)) < 1e-12
assert abs(anchor.threshold_at(1.0, 2.0, 0.5) - math.exp(-2)) < 1e-12
assert anchor.threshold_at(0.0, 2.0, 0.3) == 0.0

est = anchor.Estimator(0.5)
assert est.update(1.0) == 0.5
assert est.update(1.0) == 0.75
assert anchor.ema_update(1.0, 0.7, 0.2) == 0.2

assert abs(anchor.pearson([1, 2, 3], [5, 7, 9]) - 1.0) < 1e-12
tags = anchor.replay([float("nan"), 2.0, 0.0, 0.0], [1.0] * 4, k=2)
assert tags == ["surrogate", "surrogate", "solver", "solver"], tags

ic = anchor.sample_ic("burgers1d", seed=7, stream=0)
assert ic["shape"] == [101] and len(ic["values"]) == 101
assert ic["u0_max"] > 0

cfg = anchor.default_config("allen-cahn2d")
assert cfg["anchor"]["k_steps"] == 10

out = anchor.compare("allen-cahn2d", 0, '{"anchor": {"horizon": 0.2}}')
n = len(out["anchor"]["engines"])
assert n == 21, n
assert out["reference"]["rel_l2"] is None
assert out["summary"]["replay_matches"]
print("anchor smoke test ok:", out["summary"]["interventions"], "interventions,",
      "final errors", out["summary"]["anchor_final_error"], out["summary"]["surrogate_final_error"])
