"""Acceptance criteria 1-12 at their stated tolerances.

Each test records one line for the summary printed at the end of the run.
"""
import io
import json
import time

import numpy as np
import pytest

from stochhom.cli import run
from stochhom.ensembles import (constant_ensemble, product_constants, sample_field, shift_field,
                                two_state_diagonal, two_state_nonsymmetric)
from stochhom.fourier import (abar_operator_ratio, cz_ladder, decomposition_defect, green_constant,
                              helmholtz_apply, helmholtz_identity_check, multiplier_identity_defect)
from stochhom.green import decay_profile, ensemble_weighted_sum, mixed_gradient_energy, perturbation_identity_check
from stochhom.lattice import TorusGrid, divergence_star, gradient
from stochhom.moments import moment_vs_oscillation_consistency, scaling_study
from stochhom.solver import CorrectorProblem, default_size, solve_green

TOL = 1e-10
LAM = 0.25
LADDER_2D = [16, 64, 256, 1024]
LADDER_3D = [16, 64, 256]
SCALING_ARGS = ["scaling", "--dim", "2", "--ensemble", "two_state_nonsymmetric", "--lambda", "0.25",
                "--T-ladder", "16,64,256,1024", "--samples", "100", "--p", "1,2", "--seed", "0", "--jobs", "1"]


def _cli(args, path):
    code = run(list(args) + ["--out", str(path)], stdout=io.StringIO())
    assert code == 0, f"CLI exited with {code}"
    return path.read_bytes()


@pytest.fixture(scope="module")
def scaling_2d(tmp_path_factory):
    """Criterion 5's run; shared with criteria 7 and 12."""
    d = tmp_path_factory.mktemp("scaling")
    t0 = time.perf_counter()
    report = json.loads(_cli(SCALING_ARGS + ["--format", "json"], d / "run.json"))
    return report["result"], time.perf_counter() - t0, d


def test_criterion_01_exact_identities(criterion):
    rng = np.random.default_rng(1)
    g = TorusGrid(2, 16)
    spec = two_state_nonsymmetric(2, LAM)
    T = 64.0
    u, v = rng.standard_normal(g.shape), rng.standard_normal((2,) + g.shape)
    sbp = abs(np.sum(gradient(u) * v) - np.sum(u * divergence_star(v)))

    a = sample_field(spec, g, 3)
    y = (5, 9)
    G = solve_green(a, T, y, tol=TOL).solution
    row = abs(G.sum() - T)
    Gt = solve_green(a.transpose(), T, (0, 0), tol=TOL).solution
    G0 = solve_green(a, T, (0, 0), tol=TOL).solution
    sym = max(abs(G[0, 0] - Gt[y]), abs(G0[y] - solve_green(a.transpose(), T, y, tol=TOL).solution[0, 0]))
    stat = 0.0
    for _ in range(5):
        z = tuple(int(c) for c in rng.integers(0, 16, 2))
        Gs = solve_green(shift_field(a, z), T, y, tol=TOL).solution
        stat = max(stat, np.abs(Gs - np.roll(solve_green(a, T, g.shift(y, z), tol=TOL).solution,
                                             (-z[0], -z[1]), axis=(0, 1))).max())

    xi = (1.0, 0.5)
    pb = CorrectorProblem(xi, T, LAM, g)
    pert = 0.0
    for k in range(10):
        x = tuple(int(c) for c in rng.integers(0, 16, 2))
        other = spec.state_array[1 - int(np.argmin([np.abs(s - a.at(x)).max() for s in spec.state_array]))]
        pert = max(pert, perturbation_identity_check(a, x, other, pb, tol=TOL))
    pert_bound = 10 * TOL * np.linalg.norm(xi)

    ok = sbp <= 1e-12 * max(1.0, np.abs(u).sum()) and row <= 1e-8 * T and sym <= 1e-8 and stat <= 1e-8 \
        and pert <= pert_bound
    criterion(1, ok, f"sbp={sbp:.1e} row={row:.1e} sym={sym:.1e} shift={stat:.1e} "
                     f"perturbation={pert:.1e} (<= {pert_bound:.1e})")
    assert ok


def test_criterion_02_energy_and_contraction(criterion):
    rng = np.random.default_rng(2)
    g = TorusGrid(2, 16)
    spec = two_state_nonsymmetric(2, LAM)
    T = 64.0
    energy = max(LAM ** 2 * mixed_gradient_energy(sample_field(spec, g, 100 + k), T,
                                                  tuple(int(c) for c in rng.integers(0, 16, 2)), k % 2, tol=TOL)
                 for k in range(10))
    fields = [sample_field(spec, g, 200 + k) for k in range(10)]
    contraction, abar = 0.0, 0.0
    for k in range(20):
        v = rng.standard_normal((2,) + g.shape)
        contraction = max(contraction, np.linalg.norm(helmholtz_apply(v, T, LAM)) / np.linalg.norm(v))
        abar = max(abar, abar_operator_ratio(fields[k % 10], v, T, LAM))
    ok = energy <= 1 + 1e-6 and contraction <= 1 + 1e-12 and abar <= 1 - LAM
    criterion(2, ok, f"lam^2 energy={energy:.4f} |Hg|/|g|={contraction:.4f} "
                     f"|H abar g|/|g|={abar:.4f} (<= {1 - LAM})")
    assert ok


def test_criterion_03_multiplier_algebra(criterion):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    xi = rng.uniform(-np.pi, np.pi, size=(1000, 2))
    ident = max(multiplier_identity_defect(xi, j, l, T) for j in range(2) for l in range(2) for T in (1, 10, 1e3))
    dec = max(decomposition_defect(xi, j, l, T) for j in range(2) for l in range(2) for T in (1, 10, 1e3))
    dt = time.perf_counter() - t0
    ok = ident <= 1e-12 and dec <= 1e-12 and dt < 10
    criterion(3, ok, f"identity={ident:.1e} decomposition={dec:.1e} ({dt:.2f}s)")
    assert ok


def test_criterion_04_helmholtz_decomposition(criterion):
    g = TorusGrid(2, 16)
    spec = two_state_nonsymmetric(2, LAM)
    defect = max(helmholtz_identity_check(sample_field(spec, g, 300 + k), 64.0, tol=TOL)["defect"]
                 for k in range(5))
    ok = defect <= 100 * TOL
    criterion(4, ok, f"defect={defect:.1e} (<= {100 * TOL:.0e})")
    assert ok


def test_criterion_05_log_scaling_2d(criterion, scaling_2d):
    res, dt, _ = scaling_2d
    fit, site = res["fit"], res["site_fit"]
    ok = fit["slope"] > 0 and fit["r2"] >= 0.9 and dt < 30 * 60
    criterion(5, ok, f"slope={fit['slope']:.4f} R2={fit['r2']:.4f} (origin-only R2={site['r2']:.3f}) "
                     f"L={[default_size(T) for T in LADDER_2D]} ({dt:.0f}s)")
    assert ok


def test_criterion_06_boundedness_3d(criterion):
    t0 = time.perf_counter()
    rep = scaling_study(two_state_nonsymmetric(3, LAM), (1.0, 0.0, 0.0), LADDER_3D, 50, 0, (1,))
    dt = time.perf_counter() - t0
    fit = rep.fit
    ok = fit["ratio_3sigma"] <= 2 and fit["ratio"] <= 2 and dt < 30 * 60
    criterion(6, ok, f"max/min={fit['ratio']:.3f} 3-sigma band={fit['ratio_3sigma']:.3f} "
                     f"(origin-only {rep.site_fit['ratio']:.3f}) ({dt:.0f}s)")
    assert ok


def test_criterion_07_gradient_moments_T_independent(criterion, scaling_2d):
    res = scaling_2d[0]
    bands = res["gradient_ratios"]
    ok = all(bands[p]["ratio_3sigma"] <= 2 and bands[p]["ratio"] <= 2 for p in ("1", "2"))
    criterion(7, ok, " ".join(f"p={p}: max/min={bands[p]['ratio']:.3f} band={bands[p]['ratio_3sigma']:.3f}"
                              for p in ("1", "2")))
    assert ok


def test_criterion_08_weighted_gradient_sums(criterion):
    t0 = time.perf_counter()
    vals2 = [ensemble_weighted_sum(two_state_nonsymmetric(2, LAM), TorusGrid(2, default_size(T)), T, 1.1, 20,
                                   seed=0, tol=TOL, stream_prefix=(k,)).mean for k, T in enumerate(LADDER_2D)]
    per_log = np.array(vals2) / np.log(LADDER_2D)
    vals3 = [ensemble_weighted_sum(two_state_nonsymmetric(3, LAM), TorusGrid(3, default_size(T)), T, 1.1, 20,
                                   seed=0, tol=TOL, stream_prefix=(k,)).mean for k, T in enumerate(LADDER_3D)]
    dt = time.perf_counter() - t0
    r2, r3 = per_log.max() / per_log.min(), max(vals3) / min(vals3)
    ok = r2 <= 3 and r3 <= 3 and dt < 20 * 60
    criterion(8, ok, f"d=2 (value/log T) spread={r2:.3f} d=3 max/min={r3:.3f} ({dt:.0f}s)")
    assert ok


def test_criterion_09_weighted_cz(criterion):
    t0 = time.perf_counter()
    out = {gam: cz_ladder(2, [16, 32, 64], 2.0, gam, 50, seed=0) for gam in (0.0, 0.25, 0.4)}
    dt = time.perf_counter() - t0
    trend = all(o["slope"] <= 0.1 * o["mean_ratio"] for o in out.values())
    unweighted = max(out[0.0]["max_ratios"])
    ok = trend and unweighted <= 1 + 1e-10 and dt < 600
    criterion(9, ok, " ".join(f"gamma={gm}: rel.slope={o['relative_slope']:+.3f}" for gm, o in out.items())
              + f" gamma=0 max={unweighted:.4f} ({dt:.0f}s)")
    assert ok


def test_criterion_10_functional_inequalities(criterion):
    g = TorusGrid(2, 2)
    details, ok = [], True
    for spec in (two_state_diagonal(2, LAM), two_state_nonsymmetric(2, LAM)):
        out = moment_vs_oscillation_consistency(spec, g, CorrectorProblem((1.0, 0.0), 16.0, LAM, g), (1, 2))
        rho = product_constants(spec)
        sg = out["sg"]["lhs"] <= out["sg"]["oscillation_sum"] / rho["SG"] * (1 + 1e-12)
        lsi = out["lsi"]["lhs"] <= out["lsi"]["oscillation_sum"] / (2 * rho["LSI"]) * (1 + 1e-12)
        sgp = all(c["lhs"] <= c["constant"] * c["rhs"] * (1 + 1e-12) and np.isfinite(c["constant"])
                  for c in out["sgp"].values())
        ok &= sg and lsi and sgp
        details.append(f"{spec.name}: SG rho={out['sg']['ratio']:.2f}>={rho['SG']:.0f} "
                       f"LSI rho={out['lsi']['ratio']:.2f}>={rho['LSI']:.2f} "
                       f"SGp C={[round(c['constant'], 4) for c in out['sgp'].values()]}")
    const = moment_vs_oscillation_consistency(constant_ensemble(2), g, CorrectorProblem((1.0, 0.0), 16.0, 1.0, g))
    zero = const["sg"]["lhs"] == 0 and const["lsi"]["lhs"] == 0 and all(
        c["lhs"] == 0 for c in const["sgp"].values())
    ok &= zero
    criterion(10, ok, "; ".join(details) + f"; constant lhs zero={zero}")
    assert ok


def test_criterion_11_constant_coefficient_decay(criterion):
    fits = {}
    for d, T, L in ((2, 64, 64), (3, 36, 32)):
        fits[d] = decay_profile(green_constant(TorusGrid(d, L), T), mode="gradient", T=T).exponent
    ok = all(abs(fits[d] + (d - 1)) <= 0.3 for d in fits)
    criterion(11, ok, " ".join(f"d={d}: exponent={e:.3f} (target {-(d - 1)})" for d, e in fits.items()))
    assert ok


def test_criterion_12_determinism(criterion, scaling_2d):
    d = scaling_2d[2]
    first = _cli(SCALING_ARGS + ["--format", "csv"], d / "first.csv")
    second = _cli(SCALING_ARGS + ["--format", "csv"], d / "second.csv")
    ok = first == second and len(first) > 0
    criterion(12, ok, f"{len(first)} bytes, identical={first == second}")
    assert ok
