"""Acceptance suite: one test per headline claim of the simulator.

Each test prints a single PASS/FAIL line (visible with pytest -s, or in
the captured-output section on failure).  Heavy experiment data comes
from the disk cache managed by acceptance_lib; the first run populates
it and takes on the order of an hour, later runs are instant.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

import acceptance_lib as lib
from acceptance_lib import _dbar

from gwpdyn.baselines import exact_step, make_exact_state, reg_cn_step
from gwpdyn.model import DOUBLE_WELL, coherent_in_ho, cross_matrices
from gwpdyn.observables import WavepacketState
from gwpdyn.trajectories import (advance_frame, cn_newton_step,
                                 frame_with_velocities, hamilton_function)
from gwpdyn.varprop import build_ubar, var_step
from gwpdyn.workspace import build_working_space


def _report(num, desc, checks):
    """checks: list of (ok, message); prints one line, asserts all."""
    failures = [msg for ok, msg in checks if not ok]
    status = "PASS" if not failures else "FAIL"
    print(f"[{status}] criterion {num}: {desc}")
    assert not failures, f"criterion {num}: " + "; ".join(failures)


def test_criterion_1_naive_divergence():
    data = lib.criterion1_data()
    checks = []
    for n_g in (9, 15):
        r = data[n_g]
        depart = np.max(np.abs(r["position"] - r["exact_position"]))
        t_max = r["times"][-1]
        checks.append((depart >= 0.05 and t_max <= 6.0 + 1e-9,
                       f"N_g={n_g} departure {depart:.3g} not visible"))
    checks.append((data[9]["n_small_max"] >= 2,
                   "fewer than 2 overlap eigenvalues below 1e-7 at N_g=9"))
    _report(1, "naive inversion degrades at N_g=9 and 15", checks)


@pytest.fixture(scope="module")
def sweep_rows():
    return lib.criterion2_sweep()


def _best(rows, method, n_gauss, col="dbar_autocorr", eps_filter=None):
    vals = [r[col] for r in rows
            if r["method"] == method and r["n_gauss"] == n_gauss
            and not r["diverged"]
            and (eps_filter is None or r["eps_s"] in eps_filter)]
    return min(vals) if vals else float("inf")


def test_criterion_2_convergence_and_stability(sweep_rows):
    rows = sweep_rows
    var_rows = [r for r in rows if r["method"] == "var"]
    checks = [(all(not r["diverged"] for r in var_rows),
               "a variational cell diverged")]
    for method in ("reg1", "reg2"):
        div = [r for r in rows if r["method"] == method and r["diverged"]
               and r["eps_s"] < 1e-8]
        checks.append((len(div) > 0,
                       f"{method} never diverged below eps_S=1e-8"))
    var300 = _best(rows, "var", 300)
    reg300 = min(_best(rows, "reg1", 300), _best(rows, "reg2", 300))
    checks.append((var300 < reg300,
                   f"var {var300:.3g} not below best reg {reg300:.3g} "
                   f"at N_g=300"))
    var3 = _best(rows, "var", 3)
    checks.append((var3 / var300 >= 10.0,
                   f"autocorrelation error only improved "
                   f"{var3 / var300:.2f}x from N_g=3 to 300"))
    _report(2, "variational method stays stable and converges", checks)


def test_criterion_3_unitarity():
    data = lib.criterion3_data()
    exact = data["exact"]

    def overlap_error(series):
        ov = (np.abs(series["data"]["overlap12"])
              / (series["data"]["norm"] * series["data"]["norm2"]))
        ov_ex = (np.abs(exact["data"]["overlap12"])
                 / (exact["data"]["norm"] * exact["data"]["norm2"]))
        return np.abs(ov - ov_ex)

    def norm_errors(series):
        return np.maximum(
            np.abs(series["data"]["norm"] - exact["data"]["norm"]),
            np.abs(series["data"]["norm2"] - exact["data"]["norm2"]))

    checks = []
    tight = data[("var", 1e-14)]
    checks.append((not tight["diverged"], "var eps=1e-14 diverged"))
    checks.append((norm_errors(tight).max() <= 1e-3,
                   f"var eps=1e-14 norm error "
                   f"{norm_errors(tight).max():.3g} > 1e-3"))
    checks.append((overlap_error(tight).max() <= 1e-3,
                   f"var eps=1e-14 overlap error "
                   f"{overlap_error(tight).max():.3g} > 1e-3"))
    loose = data[("var", 1e-7)]
    checks.append((overlap_error(loose).max() <= 1e-10,
                   f"var eps=1e-7 scalar-product error "
                   f"{overlap_error(loose).max():.3g} > 1e-10"))
    for key in (("reg1", 1e-10), ("reg2", 1e-10)):
        series = data[key]
        worst = max(norm_errors(series).max(), overlap_error(series).max()) \
            if not series["diverged"] else np.inf
        checks.append((worst >= 1e-3,
                       f"{key[0]} unexpectedly conserved unitarity "
                       f"({worst:.3g})"))
    _report(3, "norms and scalar products under the unitarized step",
            checks)


def test_criterion_4_energy_conservation(sweep_rows):
    rows = sweep_rows
    var_eps = (1e-12, 1e-13, 1e-14)
    var = _best(rows, "var", 300, col="dbar_energy", eps_filter=var_eps)
    reg1 = _best(rows, "reg1", 300, col="dbar_energy")
    reg2 = _best(rows, "reg2", 300, col="dbar_energy")
    checks = [
        (np.isfinite(var), "no surviving var cell at N_g=300"),
        (var <= reg1 / 5.0,
         f"var energy error {var:.3g} not 5x below reg1 {reg1:.3g}"),
        (var <= reg2 / 10.0,
         f"var energy error {var:.3g} not 10x below reg2 {reg2:.3g}"),
        (1e-4 <= var <= 1e-2,
         f"var energy error {var:.3g} outside the 1e-4..1e-2 a.u. band"),
    ]
    _report(4, "time-averaged energy error ordering at N_g=300", checks)


def test_criterion_5_time_reversibility():
    data = lib.criterion5_data()
    checks = []
    for method, eps, bound in (("reg1", 1e-7, 1e-9), ("reg2", 1e-7, 1e-9),
                               ("var", 1e-14, 1e-3)):
        r = data[(method, eps)]
        if r.get("diverged"):
            checks.append((False, f"{method} revert diverged: {r['error']}"))
            continue
        worst = r["discrepancy"].max()
        checks.append((worst <= bound,
                       f"{method} forward-backward discrepancy "
                       f"{worst:.3g} > {bound:g}"))
    _report(5, "forward-backward position retrace", checks)


def test_criterion_6_rescaled_model():
    data = lib.criterion6_data()
    exact = data["exact"]
    dbar = {}
    for key in (("var", 1e-14), ("reg1", 1e-7), ("reg2", 1e-7)):
        series = data[key]
        dbar[key] = {col: _dbar(series, exact, col)
                     for col in ("norm", "energy", "autocorr_abs",
                                 "position")}
    var = dbar[("var", 1e-14)]
    checks = [(np.isfinite(var["norm"]), "var run diverged")]
    checks.append((var["norm"] <= 1e-10,
                   f"var norm error {var['norm']:.3g} > 1e-10"))
    for key in (("reg1", 1e-7), ("reg2", 1e-7)):
        reg = dbar[key]
        checks.append((var["norm"] <= reg["norm"] * 1e-4,
                       f"var norm {var['norm']:.3g} not 4 orders below "
                       f"{key[0]} {reg['norm']:.3g}"))
        for col in ("energy", "autocorr_abs", "position"):
            checks.append((var[col] <= reg[col] / 10.0,
                           f"var {col} {var[col]:.3g} not an order below "
                           f"{key[0]} {reg[col]:.3g}"))
    _report(6, "long rescaled-model propagation accuracy", checks)


def test_step_size_self_check():
    # halving dt must leave the variational observables essentially
    # unchanged, backing the default step size
    data = lib.dt_halving_check()
    a, b = data[1e-3], data[5e-4]
    assert_allclose(a["times"], b["times"], atol=1e-9)
    for col in ("position", "autocorr_abs", "energy"):
        assert np.max(np.abs(a["data"][col] - b["data"][col])) <= 1e-5


def test_criterion_7_property_suite():
    rng = np.random.default_rng(2024)
    checks = []

    # semi-unitarity and pinning identities across all three regimes
    worst_semi = 0.0
    worst_pin = 0.0
    for i in range(1000):
        m1 = int(rng.integers(1, 9))
        m2 = int(rng.integers(1, 9))
        A = rng.standard_normal((m2, m1)) + 1j * rng.standard_normal(
            (m2, m1))
        c = rng.standard_normal(m1) + 1j * rng.standard_normal(m1)
        step = build_ubar(A, c)
        U = step.Ubar
        if m2 >= m1:
            worst_semi = max(worst_semi, np.max(np.abs(
                U.conj().T @ U - np.eye(m1))))
        else:
            worst_semi = max(worst_semi, np.max(np.abs(
                U @ U.conj().T - np.eye(m2))))
            d = c / np.linalg.norm(c)
            worst_pin = max(worst_pin, np.max(np.abs(
                U.conj().T @ (U @ d) - d)))
    checks.append((worst_semi <= 1e-12,
                   f"semi-unitarity residual {worst_semi:.3g}"))
    checks.append((worst_pin <= 1e-12,
                   f"pinning residual {worst_pin:.3g}"))

    # Procrustes optimality against random opponents
    for m2, m1 in ((5, 5), (7, 4)):
        A = rng.standard_normal((m2, m1)) + 1j * rng.standard_normal(
            (m2, m1))
        c = rng.standard_normal(m1) + 1j * rng.standard_normal(m1)
        best = np.linalg.norm(build_ubar(A, c).Ubar - A)
        X = (rng.standard_normal((10000, m2, m1))
             + 1j * rng.standard_normal((10000, m2, m1)))
        Q = np.linalg.qr(X)[0]
        dists = np.linalg.norm(Q - A, axis=(1, 2))
        checks.append((dists.min() >= best - 1e-10,
                       f"a random opponent beat the closest semi-unitary "
                       f"({dists.min():.6g} < {best:.6g})"))

    # working-space identity on random PSD matrices
    worst = 0.0
    for i in range(20):
        n = int(rng.integers(4, 12))
        B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        S = B @ B.conj().T + 0.1 * np.eye(n)
        ws = build_working_space(S, 1e-8)
        worst = max(worst, np.max(np.abs(
            ws.Phi.conj().T @ S @ ws.Phi - np.eye(ws.M))))
    checks.append((worst <= 1e-8,
                   f"working-space identity residual {worst:.3g}"))

    # variational step matches the regularized CN step to O(dt^3)
    z = (rng.standard_normal(10) * 0.8).view(complex)
    c0 = np.zeros(5, dtype=complex)
    c0[0] = 1.0
    diffs = []
    for dt in (2e-3, 1e-3):
        f1 = frame_with_velocities(0.0, z, DOUBLE_WELL)
        f2 = advance_frame(f1, dt, DOUBLE_WELL)
        s1 = WavepacketState(time=0.0, C=c0, frame=f1)
        s2, _ = var_step(s1, f2, DOUBLE_WELL, dt, 1e-12)
        cr = reg_cn_step(c0, f1, f2, DOUBLE_WELL, dt, 1e-12)
        diffs.append(np.linalg.norm(s2.C - cr))
    ratio = diffs[0] / diffs[1]
    checks.append((6.0 <= ratio <= 10.5,
                   f"var/CN difference scales as dt^{np.log2(ratio):.2f}, "
                   f"expected ~dt^3"))

    # exact reference conservation
    c_init = coherent_in_ho(-0.45, 30)
    state = make_exact_state(DOUBLE_WELL, c_init, n_b=30)
    h = state.cache.modes @ (state.cache.energies[:, None]
                             * state.cache.modes.conj().T)
    e0 = np.real(c_init.conj() @ h @ c_init)
    for _ in range(200):
        state = exact_step(state, 0.03)
    checks.append((abs(np.linalg.norm(state.coeffs) - 1.0) <= 1e-12,
                   "exact reference norm drifted"))
    e1 = np.real(state.coeffs.conj() @ h @ state.coeffs)
    checks.append((abs(e1 - e0) <= 1e-12 * max(1.0, abs(e0)),
                   "exact reference energy drifted"))

    # classical integrator: reversibility and O(dt^2) energy error
    z0 = np.array([0.6 + 0.3j, -0.4 - 0.1j])
    z1 = cn_newton_step(z0, 5e-3, DOUBLE_WELL)
    back = cn_newton_step(z1, -5e-3, DOUBLE_WELL)
    checks.append((np.max(np.abs(back - z0)) <= 1e-11,
                   "classical step not reversible"))
    drift = []
    for dt in (2e-2, 1e-2):
        zz = z0.copy()
        e_start = hamilton_function(zz, DOUBLE_WELL)
        for _ in range(int(round(2.0 / dt))):
            zz = cn_newton_step(zz, dt, DOUBLE_WELL)
        drift.append(np.max(np.abs(hamilton_function(zz, DOUBLE_WELL)
                                   - e_start)))
    checks.append((2.5 <= drift[0] / drift[1] <= 6.0,
                   f"classical energy error ratio {drift[0] / drift[1]:.2f} "
                   f"not O(dt^2)"))

    _report(7, "algebraic property suite", checks)
