"""Smoke test for the Python bindings.

Build and install first:
    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
"""

import json
import math
import tempfile

import numpy as np
import scipy.linalg

import ttkinetic_py as tk

CONFIG = """
eta = {eta}
dt = {dt}
t_end = {t_end}
r1 = 2
r2 = 2
nv = 16
v_min = -8
v_max = 8
nx = {nx}
l_x = 1
case = {case}
output_dir = {out}
snapshot_stride = 1
"""


def config(case, out, eta=1.0, dt=0.05, t_end=0.2, nx=4):
    return CONFIG.format(case=case, out=out, eta=eta, dt=dt, t_end=t_end, nx=nx)


def check_collision_matrix():
    v = -8 + (np.arange(16) + 0.5)
    m = np.exp(-v**2 / 2)
    sub, diag, sup = tk.collision_tridiag(m.tolist(), 1.0, 1.0)
    j = np.diag(diag) + np.diag(sub, -1) + np.diag(sup, 1)
    assert np.max(np.abs(j.sum(axis=1))) == 0.0
    assert np.max(np.abs(m @ j)) < 1e-13 * np.max(np.abs(j))


def check_sylvester():
    rng = np.random.default_rng(0)
    n, r = 40, 5
    sub, sup = rng.uniform(-1, 0, n - 1), rng.uniform(-1, 0, n - 1)
    diag = 3.0 + rng.uniform(0, 1, n)
    t = np.diag(diag) + np.diag(sub, -1) + np.diag(sup, 1)
    h = rng.standard_normal((r, r))
    rhs = rng.standard_normal((n, r))
    x = np.array(tk.solve_sylvester(sub.tolist(), diag.tolist(), sup.tolist(), h.tolist(), rhs.tolist()))
    ref = scipy.linalg.solve_sylvester(t.T, h, rhs)
    assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref), np.linalg.norm(x - ref)


def check_simulation(out):
    sim = tk.Simulation(config("InhomogeneousFP", out))
    d0 = sim.diagnostics()
    sim.step(sim.n_steps)
    d1 = sim.diagnostics()
    assert math.isclose(sim.t, 0.2)
    assert abs(d1["total_mass"] - d0["total_mass"]) <= 1e-10 * d0["total_mass"]
    n, u1, temp = sim.macro_profiles()
    assert len(n) == 4 and all(x > 0 for x in n) and all(x > 0 for x in temp)
    f = np.array(sim.dense_at(0)).reshape(16, 16, 16)
    assert np.allclose(f.sum(axis=(1, 2)), sim.phase_density(0))
    cfg = json.loads(sim.config_json())
    assert cfg["rank"] == [2, 2]


def check_exact_error(out):
    sim = tk.Simulation(config("HomogeneousFP", out, nx=1, t_end=0.5))
    sim.step(sim.n_steps)
    err = sim.relative_error()
    assert err is not None and err < 0.05, err


def check_errors(out):
    try:
        tk.Simulation(config("NoSuchCase", out))
    except ValueError:
        pass
    else:
        raise AssertionError("bad case accepted")
    try:
        tk.damping_fit([0.0, 1.0, 2.0], [1.0, 2.0, 1.0])
    except tk.SolverError:
        pass
    else:
        raise AssertionError("fit with one peak accepted")


def check_damping_fit():
    t = np.linspace(0, 30, 6001)
    e = np.exp(2 * -0.153 * t) * np.cos(1.4156 * t) ** 2
    gamma, slope, peaks = tk.damping_fit(t.tolist(), e.tolist())
    assert abs(gamma + 0.153) < 1e-3 and len(peaks) > 4


def check_run_case(out):
    summary = json.loads(tk.run_case(config("HomogeneousFP", out, nx=1)))
    assert summary["steps"] == 4
    assert any(p.endswith("diagnostics.csv") for p in summary["outputs"])


def main():
    with tempfile.TemporaryDirectory() as out:
        check_collision_matrix()
        check_sylvester()
        check_simulation(out)
        check_exact_error(out)
        check_errors(out)
        check_damping_fit()
        check_run_case(out)
    print("smoke test passed")


if __name__ == "__main__":
    main()
