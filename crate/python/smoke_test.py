"""Builds the extension module, imports it and checks a few known values.

Usage: python3 python/smoke_test.py
"""

import json
import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

import jsonschema

ROOT = pathlib.Path(__file__).resolve().parent.parent
SCHEMA = ROOT / "crates" / "core" / "schema" / "summary.schema.json"


def build(dest: pathlib.Path) -> None:
    subprocess.run(
        ["cargo", "build", "-q", "-p", "fokker-flux-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "debug" / "libfokker_flux_py.so"
    shutil.copy(lib, dest / "fokker_flux.so")
    sys.path.insert(0, str(dest))


def main() -> None:
    tmp = pathlib.Path(tempfile.mkdtemp())
    build(tmp)
    import fokker_flux as ff

    grid = ff.Grid(200)
    assert grid.n == 200 and abs(grid.dx - 1 / 199) < 1e-15
    assert len(grid.nodes) == 200

    model_a = ff.Model("A", 1.0, 0.9)
    closed = ff.stationary(model_a, grid, "closed-form")
    numeric = ff.stationary(model_a, grid)
    assert abs(closed.mass - 1.0703) < 1e-3, closed.mass
    assert max(abs(a - b) for a, b in zip(closed.values, numeric.values)) < 1e-6
    assert numeric.residual < 1e-10

    model_b = ff.Model("B", 1.0, 0.9)
    rho_b = ff.stationary(model_b, grid, "closed-form").values
    assert all(abs(r - math.exp(x) / 0.9) < 1e-12 for r, x in zip(rho_b, grid.nodes))

    sym = ff.symmetric_k(1.0)
    assert abs(sym.k - 0.8603) < 1e-4 and sym.equation == "symmetric"
    fr = ff.friedrichs_k(0.5, 0.5)
    assert fr.root_residual < 1e-10
    lam, vec = ff.discrete_min_rayleigh(ff.Grid(400), 0.5, 0.5)
    assert abs(lam - fr.lam) < 1e-4 * fr.lam and len(vec) == 400

    assert ff.phi(1.0, 1.0) > 0
    try:
        ff.Model("A", 1.0, 0.0)
    except ValueError as e:
        assert "beta" in str(e)
    else:
        raise AssertionError("beta = 0 accepted")

    assert "entropy-A" in ff.preset_names()
    cfg = ff.preset("entropy-A", coarse=True)
    assert cfg["n"] == 100

    small = {
        "model": "A",
        "alpha": 1.0,
        "beta": 1.0,
        "initial": {"kind": "affine", "slope": -0.1, "intercept": 1.2},
        "n": 40,
        "t_end": 3.0,
        "observe_every": 50,
    }
    summary = ff.simulate(small)
    series = summary.pop("series")
    assert len(series["t"]) == len(series["entropy"]) > 10
    assert abs(summary["fitted_rate"] - 2.3439) < 0.05, summary["fitted_rate"]

    schema = json.loads(SCHEMA.read_text())
    out = tmp / "run"
    written, files = ff.run(json.dumps(small), str(out))
    on_disk = json.loads((out / "summary.json").read_text())
    jsonschema.validate(on_disk, schema)
    jsonschema.validate(written, schema)
    assert len(files) == 6

    shutil.rmtree(tmp)
    print("python smoke test ok")


if __name__ == "__main__":
    main()
