"""End-to-end smoke test of the Python bindings.

Build first, e.g. `maturin develop -m crates/py/Cargo.toml --release`.
"""

import json
import math

import nlmodal_py as nm

MODEL = json.dumps({"builder": "2dof_cubic"})
DAMPING = json.dumps([{"type": "modal", "eta": 0.02}])


def main():
    w = nm.linear_frequencies(MODEL)
    assert len(w) == 2 and w[0] < w[1], w

    branch = nm.nma(MODEL, 0, 1e-8, 1.0)
    assert abs(branch["omega0"][0] / w[0] - 1.0) < 1e-6
    assert all(b >= a for a, b in zip(branch["omega0"], branch["omega0"][1:]))
    assert branch["branch_csv"].startswith("point,")
    db = branch["database_csv"]

    force = [(0, 0.02, 0.0)]
    rom = nm.frf(MODEL, db, force, 0.8 * w[0], 1.3 * w[0], DAMPING)
    ref = nm.hbm(MODEL, force, 0.8 * w[0], 1.3 * w[0], DAMPING, json.dumps({"nh": 3, "nt": 64}))
    a_rom = max(rom["amplitude"])
    a_ref = max(ref["amplitude"])
    assert math.isfinite(a_rom) and abs(a_rom - a_ref) / a_ref < 0.05, (a_rom, a_ref)

    assert nm.lco(MODEL, db, DAMPING) == []

    try:
        nm.linear_frequencies("{}")
    except ValueError:
        pass
    else:
        raise AssertionError("bad model accepted")

    print(f"nlmodal_py {nm.__version__}: ok (peak rom {a_rom:.4e}, hbm {a_ref:.4e})")


if __name__ == "__main__":
    main()
