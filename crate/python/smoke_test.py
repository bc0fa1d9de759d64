"""Smoke test for the kvtomo_py extension module.

Build first with `cargo build -p kvtomo-py` (or `--release`). The script
copies the shared library next to a temporary module path and imports it;
set KVTOMO_PY_LIB to use a specific file.
"""

import importlib
import json
import math
import os
import shutil
import sys
import sysconfig
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def locate():
    env = os.environ.get("KVTOMO_PY_LIB")
    if env:
        return Path(env)
    for profile in ("release", "debug"):
        p = ROOT / "target" / profile / "libkvtomo_py.so"
        if p.exists():
            return p
    sys.exit("libkvtomo_py.so not found; run `cargo build -p kvtomo-py`")


def load():
    lib = locate()
    tmp = Path(tempfile.mkdtemp(prefix="kvtomo_py_"))
    shutil.copy(lib, tmp / ("kvtomo_py" + sysconfig.get_config_var("EXT_SUFFIX")))
    sys.path.insert(0, str(tmp))
    return importlib.import_module("kvtomo_py")


def main():
    kv = load()
    print("kvtomo_py", kv.__version__, "from", locate())

    assert "iat-aao" in kv.formulations() and len(kv.formulations()) == 9

    mesh = kv.Mesh.disk(2)
    assert mesh.num_elements == 80
    assert abs(sum(mesh.areas()) - math.pi) < 0.2
    assert mesh.checksum() == kv.Mesh.disk(2).checksum()
    assert mesh.checksum() != kv.Mesh.disk(4).checksum()

    assert kv.project_box([0.0, 3.0, 9.0], 1.0, 6.0) == [1.0, 3.0, 6.0]
    assert abs(kv.noise_budget(4.0, 0.1) - 0.5 * 0.01 * 4.0 / 0.81) < 1e-15

    try:
        kv.Config("iat-sideways")
    except ValueError as e:
        assert "iat-sideways" in str(e)
    else:
        raise AssertionError("unknown formulation accepted")

    cfg = kv.Config("iat-reduced", excitations=1, delta=0.01, seed=7).with_mesh(2)
    cfg.max_iters = 30
    assert cfg.max_iters == 30
    again = kv.Config.from_json(cfg.to_json())
    assert again.to_json() == cfg.to_json()
    assert json.loads(cfg.to_json())["formulation"] == "iat-reduced"

    text = kv.generate(cfg)
    assert text.startswith("kind iat-power\n")
    assert text == kv.generate(cfg)

    problem = kv.Problem(cfg)
    truth = problem.sigma_true()
    assert len(truth) == problem.num_cells == 80
    flat = [3.5] * problem.num_cells
    assert problem.cost(truth) < problem.cost(flat)
    g = problem.gradient(flat)
    assert len(g) == problem.num_cells and any(v != 0.0 for v in g)

    res = kv.run(cfg)
    print(res)
    assert 0 < res.iterations <= 30
    assert res.l2_error < math.sqrt(sum((3.5 - t) ** 2 * a for t, a in zip(truth, mesh.areas())))
    assert len(res.cost_history) == res.iterations + 1
    assert res.stop_reason in ("discrepancy", "max-iters", "stagnation")

    csv = kv.run_csv([cfg, kv.Config("iat-reduced", 2, 0.0, 7).with_mesh(2)], jobs=1)
    assert len(csv.strip().splitlines()) == 3

    gwf = kv.Problem(kv.Config("gwf-aao-ls").with_mesh(2))
    study = json.loads(gwf.tcc_study(pairs=20, sup_restarts=3))
    assert study["tcc"]["pass"] and study["chain"]["pass"]

    print("smoke test passed")


if __name__ == "__main__":
    main()
