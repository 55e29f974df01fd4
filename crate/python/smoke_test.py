"""Smoke test for the banditlab Python extension.

Uses an installed ``banditlab`` module if present (``maturin develop`` in
``crates/python``); otherwise builds the extension with cargo and loads it
from a temporary directory.
"""

import json
import math
import shutil
import subprocess
import sys
import sysconfig
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def load():
    try:
        import banditlab

        return banditlab
    except ImportError:
        pass
    subprocess.run(
        ["cargo", "build", "--release", "-p", "banditlab-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    built = ROOT / "target" / "release" / "libbanditlab_py.so"
    if not built.exists():
        built = ROOT / "target" / "release" / "libbanditlab_py.dylib"
    dest = Path(tempfile.mkdtemp()) / ("banditlab" + sysconfig.get_config_var("EXT_SUFFIX"))
    shutil.copy(built, dest)
    sys.path.insert(0, str(dest.parent))
    import banditlab

    return banditlab


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    bl = load()

    p = bl.proj_orth_complement([[1.0, 0.0, 0.0], [1.0, 0.1, 0.0]], [1.0, 1.0, 1.0])
    assert all(close(x, y) for x, y in zip(p, [0.0, 0.0, 1.0])), p
    assert len(bl.orth_basis([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])) == 1
    assert close(bl.min_eigenvalue([[2.0, 1.0], [1.0, 2.0]]), 1.0)
    expected = math.sqrt(2 * math.log(2)) + 1
    assert close(bl.beta_radius(0, 1.0, 1.0, 0.5, 2, 1.0), expected, 1e-12)
    subset, score = bl.best_subset([[1.0, 0.0], [0.0, 1.0], [1.0, 0.01]], 2)
    assert subset == [1, 2] and close(score, 1.0, 1e-12), (subset, score)

    est = bl.Estimator(2, 1.0)
    for _ in range(50):
        est.update([1.0, 0.0], 0.5)
        est.update([0.0, 1.0], -0.25)
    assert est.count == 100
    assert close(est.mle()[0], 25.0 / 51.0)

    inst = bl.Instance.synthetic(4, 3, 2, 1.0, 0.1, 3)
    back = bl.Instance.from_json(inst.to_json())
    assert back.theta0 == inst.theta0 and back.protected == inst.protected
    tp = inst.theta_perp()
    assert all(abs(sum(a * b for a, b in zip(tp, v))) < 1e-9 for v in inst.protected)
    pair = bl.Instance.lower_bound(4096, 1)
    assert pair.dim == 2
    ex1 = bl.Instance.example1()
    assert close(ex1.reward([math.cos(math.pi / 4), math.sin(math.pi / 4)]), 0.5)
    assert close(ex1.reward([0.0, 1.0]), math.sqrt(0.5))

    try:
        bl.Instance.lower_bound(10, 1)
    except ValueError:
        pass
    else:
        raise AssertionError("short horizon accepted")

    cfg = {"instance": {"kind": "example1"}, "policy": "plinucb", "horizon": 50, "runs": 2}
    runs = bl.run_experiment(json.dumps(cfg))
    assert [r[0] for r in runs] == [0, 1]
    assert all(err is None for _, _, err in runs)
    curves = [c for _, c, _ in runs]
    rows = bl.aggregate(curves)
    assert len(rows) == len(curves[0]) and rows[0][0] == 1
    print(f"smoke test passed: final mean regret {rows[-1][1]:.3f} over {len(runs)} runs")


if __name__ == "__main__":
    main()
