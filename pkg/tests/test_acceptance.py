"""Acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line with the measured value,
the target and the wall time, then asserts.  Run on its own with

    pytest tests/test_acceptance.py -v -s
"""
import math
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from ionsim.atomic import D32, D52, P12, P32, S12, FieldConfig, ca40_scheme
from ionsim.cli import ExperimentConfig, run
from ionsim.shelving import (detection_steady_state, optimal_pulse,
                             readout_success, reduced_model)
from ionsim.sideband import (CoolingConfig, cooling_steady_state, eta_limit,
                             first_sideband_prediction, spontaneous_recoil_check,
                             strength, strength_matrix)

CA = ca40_scheme()
G15 = CA.decay_rates[(S12, P32)]
G25 = CA.decay_rates[(D32, P32)]
G35 = CA.decay_rates[(D52, P32)]
G4 = CA.total_width(P12)


@pytest.fixture
def report(capsys):
    def _report(number, name, ok, detail, elapsed):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number:2d} {name}: {detail} "
                  f"[{elapsed:.2f} s]")
        assert ok, f"criterion {number} ({name}): {detail}"
    return _report


def test_01_shelving_asymptote(report):
    t0 = time.perf_counter()
    _, eps = optimal_pulse(CA, FieldConfig(0.05), G15)
    dt = time.perf_counter() - t0
    target = G35 / (G35 + G25)
    ok = abs(eps - target) <= 0.01 and dt < 10
    report(1, "shelving asymptote", ok,
           f"eps_opt(0.05 T) = {eps:.4f}, target {target:.4f} +- 0.01", dt)


def test_02_shelving_threshold(report):
    t0 = time.perf_counter()
    rabi = G15 / 4

    def excess(b):
        return optimal_pulse(CA, FieldConfig(b), rabi)[1] - 0.5

    grid = np.geomspace(5e-4, 2e-2, 9)
    vals = [excess(b) for b in grid]
    i = next(k for k in range(len(grid) - 1) if vals[k] < 0 <= vals[k + 1])
    b_half = brentq(excess, grid[i], grid[i + 1], xtol=1e-6)
    dt = time.perf_counter() - t0
    ok = 1.5e-3 <= b_half <= 6e-3 and dt < 30
    report(2, "shelving threshold", ok,
           f"eps = 0.5 at B = {b_half * 1e3:.3f} mT, window [1.5, 6] mT", dt)


def test_03_reduced_model_agreement(report):
    t0 = time.perf_counter()
    field = FieldConfig(0.01)
    t_full, eps_full = optimal_pulse(CA, field, G15)
    red = reduced_model(field, G15)
    dt = time.perf_counter() - t0
    dt_rel = abs(t_full / red.t_max - 1)
    d_eps = abs(eps_full - red.epsilon_max)
    ok = dt_rel <= 0.3 and d_eps <= 0.1 and dt < 5
    report(3, "reduced model", ok,
           f"t_max {t_full:.3e} vs {red.t_max:.3e} s ({dt_rel:.1%}), "
           f"eps {eps_full:.4f} vs {red.epsilon_max:.4f}", dt)


def test_04_detection_signal(report):
    t0 = time.perf_counter()
    p = detection_steady_state(CA, FieldConfig(1e-3), 10 * G4, 10 * G4)
    dt = time.perf_counter() - t0
    ok = 0.15 <= p <= 0.30 and dt < 1
    report(4, "detection signal", ok, f"P1/2 population {p:.4f}, window [0.15, 0.30]", dt)


def test_05_readout_statistics(report):
    t0 = time.perf_counter()
    p = readout_success(0.9, 1, 44)
    dt = time.perf_counter() - t0
    ok = abs(p / 0.01 - 1) <= 0.05
    report(5, "readout statistics", ok, f"0.9^44 = {p:.5f} vs 0.01 ({abs(p / 0.01 - 1):.1%})", dt)


def test_06_matrix_zeros(report):
    t0 = time.perf_counter()
    a = strength(1, 2, math.sqrt(2))
    b = strength(2, 3, math.sqrt(3 - math.sqrt(3)))
    dt = time.perf_counter() - t0
    ok = a < 1e-10 and b < 1e-10
    report(6, "matrix-element zeros", ok, f"I12 = {a:.2e}, I23 = {b:.2e}", dt)


def test_07_unitarity_and_recoil(report):
    t0 = time.perf_counter()
    unit = 0.0
    for eta in np.linspace(0.05, 2.0, 40):
        I = strength_matrix(eta, 700, 101)
        unit = max(unit, np.abs(I.sum(axis=0) - 1).max())
    recoil = 0.0
    for eta in np.linspace(0.1, 2.0, 20):
        for f in range(51):
            recoil = max(recoil, abs(spontaneous_recoil_check(f, eta, n_max=500) - eta ** 2))
    dt = time.perf_counter() - t0
    ok = unit <= 1e-8 and recoil <= 1e-6 and dt < 30
    report(7, "unitarity and recoil", ok,
           f"max |sum_f I - 1| = {unit:.1e}, max recoil error = {recoil:.1e}", dt)


def test_08_first_sideband_limit(report):
    t0 = time.perf_counter()
    eta = math.sqrt(1e-3)
    d = cooling_steady_state(CoolingConfig(eta, 0.1, 1, 0.0))
    pred = first_sideband_prediction(eta, 0.1).mean_n
    closed0 = first_sideband_prediction(0.0, 0.1).closed_form
    dt = time.perf_counter() - t0
    rel = abs(d.mean_n / pred - 1)
    ok = rel <= 0.1 and math.isclose(closed0, 5 / 16 * 0.1 ** 2, rel_tol=1e-15) and dt < 10
    report(8, "first-sideband limit", ok,
           f"<n> = {d.mean_n:.6f} vs {pred:.6f} ({rel:.2%}); closed form at eta=0 {closed0:.6g}",
           dt)


def test_09_second_sideband_plateau(report):
    t0 = time.perf_counter()
    d = cooling_steady_state(CoolingConfig(math.sqrt(1e-4), 0.01, 2, 0.0))
    dt = time.perf_counter() - t0
    rel = abs(d.mean_n / (13 / 32) - 1)
    ok = rel <= 0.02 and dt < 10
    report(9, "second-sideband plateau", ok,
           f"<n> = {d.mean_n:.4f} vs 13/32 = {13 / 32:.4f} ({rel:.1%})", dt)


def test_10_two_sideband_scaling(report):
    t0 = time.perf_counter()
    deficits = [cooling_steady_state(CoolingConfig(1.0, g, 3, 1 / 3, n_max=100)).ground_deficit
                for g in (0.2, 0.1)]
    dt = time.perf_counter() - t0
    ratio = deficits[0] / deficits[1]
    ok = 3 <= ratio <= 5 and dt < 120
    report(10, "two-sideband scaling", ok,
           f"1-P0 {deficits[0]:.4e} -> {deficits[1]:.4e}, ratio {ratio:.3f}, window [3, 5]", dt)


def test_11_eta_limit(report):
    t0 = time.perf_counter()
    r = eta_limit(0.1)
    dt = time.perf_counter() - t0
    ok = 2.7 <= r.eta <= 3.3 and r.residual < 1e-6
    report(11, "eta limit", ok, f"eta_max = {r.eta:.4f}, residual {r.residual:.1e}", dt)


def test_12_recoil_temperature(report):
    t0 = time.perf_counter()
    d = cooling_steady_state(CoolingConfig(0.5, 0.2, 1, 0.0))
    dt = time.perf_counter() - t0
    kT, er = d.temperature, 0.25
    ok = abs(kT / er - 1) <= 0.25 and dt < 10
    report(12, "recoil temperature", ok,
           f"k_B T = {kT:.4f} vs E_R = {er} ({abs(kT / er - 1):.1%})", dt)


def _local_maxima(x, y):
    return [float(x[i]) for i in range(1, len(y) - 1) if y[i] > y[i - 1] and y[i] > y[i + 1]]


def test_13_two_sideband_sweep_structure(report):
    t0 = time.perf_counter()
    config = ExperimentConfig.from_dict({
        "kind": "cool_double",
        "parameters": {"eta2": {"start": 0.0, "stop": 3.0, "points": 60}, "gamma": 0.1,
                       "m": [1, 2, 3, 4], "alpha": "inverse_3eta2", "n_max": 100}})
    table = run(config, threads=1)
    dt = time.perf_counter() - t0
    e2, m, deficit = table.column("eta2"), table.column("m"), table.column("ground_deficit")
    peaks = {k: _local_maxima(e2[m == k][1:], deficit[m == k][1:]) for k in (3, 4)}

    def near(k, x):
        return any(abs(p - x) <= 0.1 for p in peaks[k])

    failed_rows = int(np.sum(table.column("status") >= 2))
    ok = (near(4, 1.27) and near(4, 2.0) and near(3, 2.0) and failed_rows == 0
          and len(table.rows) == 240 and dt < 900)
    report(13, "two-sideband sweep structure", ok,
           f"1-P0 local maxima m=4 at {[round(p, 2) for p in peaks[4]]}, "
           f"m=3 at {[round(p, 2) for p in peaks[3]]}", dt)
