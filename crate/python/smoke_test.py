"""Smoke test for the frontlab Python bindings.

Finds the compiled extension (target/{release,debug}/libfrontlab_py.so, or $FRONTLAB_PY_LIB),
imports it under its module name and exercises the main entry points.
"""
import importlib.util
import json
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def find_library():
    env = os.environ.get("FRONTLAB_PY_LIB")
    if env:
        return Path(env)
    for profile in ("release", "debug"):
        for name in ("libfrontlab_py.so", "libfrontlab_py.dylib", "frontlab_py.dll"):
            p = ROOT / "target" / profile / name
            if p.exists():
                return p
    sys.exit("extension not built: run `cargo build -p frontlab-py` first")


def load():
    lib = find_library()
    tmp = Path(tempfile.mkdtemp())
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    target = tmp / ("frontlab_py" + suffix)
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("frontlab_py", target)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    fl = load()

    r = fl.Reaction.logistic()
    assert abs(r(0.5) - 0.25) < 1e-15
    assert abs(r.kpp_speed() - 2.0) < 1e-12

    c, z, phi = fl.Reaction.bistable(0.25).shoot(1e-9)
    assert abs(c - math.sqrt(2) * 0.25) < 1e-6, c
    assert phi[0] > 0.999 and phi[-1] < 1e-3

    assert 1.92 < fl.discrete_kpp_speed(1.0, 0.5, 0.05) < 1.93

    t = [10 * 100 ** (i / 199) for i in range(200)]
    x = [2 * s - 1.5 * math.log(s) - 0.3 for s in t]
    fit = fl.fit_lag(t, x, "fix_speed", 2.0, (10.0, 1000.0))
    assert abs(fit["k"] - 1.5) < 1e-9, fit

    assert fl.hausdorff([(0, 0)], [(3, 4)]) == 5.0

    ids = [p["id"] for p in fl.list_presets()]
    assert all(f"E{k}" in ids for k in range(1, 11)), ids

    cfg = json.loads(fl.preset_config("E3"))[0]
    cfg["solver"]["max_time"] = 60.0
    cfg["observables"]["checks"] = [c for c in cfg["observables"]["checks"] if c["check"] != "speed"]
    with tempfile.TemporaryDirectory() as d:
        out = fl.run_config(json.dumps(cfg), d + "/e3")
        assert out["passed"], out["verdicts"]
        assert fl.verify(d + "/e3")["issues"] == []
        assert fl.emit_plot_data(d + "/e3", "profile").endswith("plot_profile.csv")
        try:
            fl.emit_plot_data(d + "/e3", "bogus")
        except ValueError as e:
            assert "bogus" in str(e)
        else:
            raise AssertionError("unknown kind accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
