"""Build the extension module, import it, and exercise the main entry points.

    python3 python/smoke_test.py [--no-build]
"""

import argparse
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def build_and_stage(dest: Path, build: bool) -> None:
    if build:
        subprocess.run(
            ["cargo", "build", "-p", "auv-sysid-py", "--features", "extension-module"],
            cwd=ROOT,
            check=True,
        )
    lib = ROOT / "target" / "debug" / "libauv_sysid_py.so"
    shutil.copy(lib, dest / "auv_sysid.so")
    sys.path.insert(0, str(dest))


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--no-build", action="store_true", help="reuse an existing build")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        build_and_stage(tmp, not args.no_build)
        import auv_sysid as a

        p = a.TruthParams()
        assert len(p.mu()) == 8

        x0 = [0.0] * 12
        x0[5] = 1.5
        y = a.simulate(p, x0, [[0.5, 0.0, 0.0]] * 100)
        assert len(y) == 101

        ds = a.build_dataset(p, seed=7, schedule=[50, 100])
        assert ds.lengths() == [50, 100]
        ds.save(tmp / "data")
        ds = a.Dataset.load(tmp / "data")

        m = a.Model.init("graybox", p, ds, seed=1)
        u, y = ds.batch(1)
        before = a.normalized_mse(m.rollout(y[0], u[:-1], ds.delta)[0], y, ds)
        losses = m.train(ds, graybox_epochs=300)
        after = a.normalized_mse(m.rollout(y[0], u[:-1], ds.delta)[0], y, ds)
        assert after < before, (before, after)
        print(f"graybox: {len(losses)} steps, batch MSE {before:.4g} -> {after:.4g}")

        h = a.Model.init("hybrid:0.5", p, ds, hidden=[16, 16])
        h.train(ds, epochs=3)
        z, diverged = h.rollout(y[0], u[:-1], ds.delta)
        print(f"{h!r}: rollout of {len(z)} samples, diverged at {diverged}")

        c = a.constraint_violation([2.0, 0, 0, 0, 0, 1.2, 0, 0])
        assert abs(a.constraint_penalty(c) - ((2.0 - 1.5707963267948966) ** 2 + 0.2**2) ** 0.5) < 1e-12
        print("smoke test passed")


if __name__ == "__main__":
    main()
