"""Smoke test for the nvregsim Python module.

Uses an installed `nvregsim` if importable; otherwise loads the shared
library from target/{release,debug} (build with
`cargo build -p nvregsim-py --release`).
"""

import importlib.util
import math
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent


def load():
    try:
        import nvregsim

        return nvregsim
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libnvregsim.so"
        if lib.exists():
            tmp = Path(tempfile.mkdtemp()) / "nvregsim.so"
            shutil.copy(lib, tmp)
            spec = importlib.util.spec_from_file_location("nvregsim", tmp)
            mod = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(mod)
            return mod
    sys.exit("nvregsim not built: run `cargo build -p nvregsim-py --release`")


def main():
    nv = load()

    s = nv.solve_field_from_odmr(2571.0, 3160.2, d=2865.42)
    assert abs(s["omega_e"] - 295.18) < 0.01 and abs(s["theta"] - 3.58) < 0.05, s
    a, b = nv.forward_transitions(s["omega_e"], s["theta"], d=2865.42)
    assert abs(a - 2571.0) < 1e-6 and abs(b - 3160.2) < 1e-6

    tau2 = nv.ideal_tau2(0.11289, 8)
    assert abs(8 * tau2 - 1e3 / (4 * 0.11289)) < 1e-9
    assert nv.sqrt_zz_oracle_infidelity(800.0, tau2, 8, 0.11289, 1.0, -0.5) < 1e-8

    tau2_r = nv.reduced_tau2(0.11289, 800.0, 8, rabi=23.7, step_density=2.0)
    assert 0.8 * tau2 < tau2_r < 1.2 * tau2
    u = np.array([[complex(re, im) for re, im in row] for row in nv.sqrt_zz_unitary(800.0, tau2_r, 8, 0.11289, rabi=23.7, step_density=2.0)])
    assert np.abs(u.conj().T @ u - np.eye(4)).max() < 1e-9

    assert round(nv.coherence_limit(6.4, 454.0, 476.0), 4) == 0.0137
    assert abs(nv.extract_epg2q(0.149, 0.085, 1.8) - 0.040) <= 0.001
    assert abs(nv.epc_from_p(0.9, 2) - 0.075) < 1e-12

    xs = list(range(0, 24, 2))
    r = nv.fit_decay(xs, [0.05 + 0.8 * 0.93**x for x in xs])
    assert abs(r["p"] - 0.93) < 1e-6

    w, lam = (0.09, 0.42, 0.49), (1.5, 9.0, 24.0)
    counts = [round(1e6 * sum(wk * math.exp(n * math.log(lk) - lk - math.lgamma(n + 1)) for wk, lk in zip(w, lam))) for n in range(70)]
    f = nv.fit_poisson_mixture(counts)
    assert max(abs(x - y) for x, y in zip(f["weights"], w)) < 0.02, f

    spam = nv.spam_estimate(105.33, 74.08)
    assert abs(100 * spam["f_init_0"] - 77) <= 3 and abs(100 * spam["relative_loss"] - 17) <= 4, spam

    try:
        nv.solve_field_from_odmr(2000.0, 2100.0)
    except ValueError:
        pass
    else:
        raise AssertionError("unphysical lines should raise")

    print(f"nvregsim {nv.__version__}: python smoke test ok")


if __name__ == "__main__":
    main()
