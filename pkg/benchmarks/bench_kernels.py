"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20] [--grid 32]

Each kernel runs on the shapes it sees in the default model (batch 8,
32x32 grid). The compiled results are also checked against the fallback.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from csdasa import _fallback

try:
    from csdasa import _ext
except ImportError:  # pragma: no cover - depends on the build
    _ext = None


def cases(grid: int, rng: np.random.Generator):
    n, hid = 8, 16
    x = rng.normal(size=(n, hid, grid, grid))
    cols = rng.normal(size=(n, hid * 9, grid * grid))
    pre = rng.normal(size=(n, 4 * hid, grid, grid))
    c_prev = rng.normal(size=(n, hid, grid, grid))
    peep = rng.normal(size=(3, hid, grid, grid))
    feats = rng.normal(size=(16, 8 * grid * grid))
    gates, c, _ = _fallback.lstm_gates_forward(pre, c_prev, peep)
    dh, dc = rng.normal(size=c.shape), rng.normal(size=c.shape)
    return {
        "im2col": ("im2col", (x, 3)),
        "col2im": ("col2im", (cols, hid, grid, grid, 3)),
        "lstm_gates_forward": ("lstm_gates_forward", (pre, c_prev, peep)),
        "lstm_gates_backward": ("lstm_gates_backward", (gates, c_prev, c, peep, dh, dc)),
        "pairwise_sqdist": ("pairwise_sqdist", (feats, feats)),
    }


def _max_diff(a, b) -> float:
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def run_kernels(repeat: int, grid: int) -> list[tuple[str, float, float, float]]:
    rows = []
    for name, (fn, args) in cases(grid, np.random.default_rng(0)).items():
        py = getattr(_fallback, fn)
        t_py = min(timeit.repeat(lambda: py(*args), number=1, repeat=repeat))
        if _ext is None:
            rows.append((name, t_py, float("nan"), float("nan")))
            continue
        cy = getattr(_ext, fn)
        t_cy = min(timeit.repeat(lambda: cy(*args), number=1, repeat=repeat))
        rows.append((name, t_py, t_cy, _max_diff(py(*args), cy(*args))))
    return rows


def run_training_step(backend: str) -> float:
    """Wall time of one forward+backward of the default model, in a fresh interpreter."""
    code = (
        "import time, numpy as np\n"
        "from csdasa import tensor as T\n"
        "from csdasa.model import CSDASA, ModelConfig, forward_pair, pair_loss\n"
        "from csdasa.losses import KernelConfig\n"
        "m = CSDASA.init(ModelConfig(), 0)\n"
        "rng = np.random.default_rng(0)\n"
        "xs, xt = rng.normal(size=(2, 8, 7, 3, 32, 32))\n"
        "t = time.perf_counter()\n"
        "loss = pair_loss(m, forward_pair(m, xs, xt), np.arange(8) % 4, 1.0, KernelConfig())[0]\n"
        "T.grad(loss, list(m.params.values()))\n"
        "print(time.perf_counter() - t)\n"
    )
    env = dict(os.environ, CSDASA_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--grid", type=int, default=32)
    ap.add_argument("--skip-step", action="store_true", help="skip the full training-step comparison")
    args = ap.parse_args(argv)

    print(f"{'kernel':<22}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}{'max |diff|':>12}")
    for name, t_py, t_cy, diff in run_kernels(args.repeat, args.grid):
        print(f"{name:<22}{1e3 * t_py:>10.3f}{1e3 * t_cy:>11.3f}{t_py / t_cy:>8.2f}x{diff:>12.1e}")
    if not args.skip_step:
        py, cy = run_training_step("python"), run_training_step("cython")
        print(f"\nforward+backward, default model, batch 8 pair: numpy {py:.2f} s, cython {cy:.2f} s "
              f"({py / cy:.2f}x)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
