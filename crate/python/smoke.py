"""Smoke test for the vscstab_py extension module.

Build first:
    cargo build --release -p vscstab-py --features extension-module
then run:
    python3 python/smoke.py
"""

import importlib.machinery
import importlib.util
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    try:
        import vscstab_py

        return vscstab_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        for name in ("libvscstab_py.so", "libvscstab_py.dylib", "vscstab_py.dll"):
            path = ROOT / "target" / profile / name
            if path.exists():
                loader = importlib.machinery.ExtensionFileLoader("vscstab_py", str(path))
                spec = importlib.util.spec_from_loader("vscstab_py", loader)
                module = importlib.util.module_from_spec(spec)
                loader.exec_module(module)
                return module
    sys.exit("vscstab_py not found; build it with --features extension-module")


def main():
    vs = load()
    base = vs.Scenario(scr=3.0, cc_bw=200.0, pll_bw=13.0)
    print(base)

    for bw in (5.0, 13.0, 50.0):
        model = base.with_param("pll_bw", bw).model()
        verdicts = [model.verdict(m).stable for m in ("ap", "gnc", "gasin")]
        assert len(set(verdicts)) == 1, (bw, verdicts)
        print(f"pll_bw {bw:5.1f} Hz: {verdicts[0]:9s} iop {model.iop()}")

    crit = vs.critical(base, "pll_bw", 2.0, 80.0)
    print(f"critical pll_bw {crit:.4f} Hz")
    assert 8.0 <= crit <= 20.0

    trace = vs.simulate(base.with_param("pll_bw", 2.0 * crit), t_end=1.0)
    kind, sigma = trace.classify()
    spectrum = trace.spectrum()
    print(f"2x critical: {kind}, sigma {sigma:.2f}/s, {spectrum}")
    assert kind == "growing"
    print("ok")


if __name__ == "__main__":
    main()
