import json
import logging

import numpy as np
import pytest

from stochhom.ensembles import (CapacityError, constant_ensemble, two_state_diagonal, two_state_nonsymmetric)
from stochhom.lattice import TorusGrid
from stochhom.moments import (ExperimentAborted, MomentReport, estimate_moments, exact_ahom,
                              gradient_moment_T_independence, moment_vs_oscillation_consistency, samples_to_csv,
                              scaling_study)
from stochhom.solver import CorrectorProblem
import stochhom.moments as moments_mod

# E[a_hom density] for the two-state diagonal law (states 0.25 I and I, p = 1/2) on
# the 2x2 torus at T = 16, from a loop-assembled dense solve over all 16 configurations
AHOM_2x2_T16 = np.array([[0.53927795, -0.02673493], [-0.02673493, 0.53927795]])


def problem(d=2, L=8, T=16.0, lam=0.25, xi=None):
    return CorrectorProblem(tuple(xi or [1.0] + [0.0] * (d - 1)), T, lam, TorusGrid(d, L))


def test_constant_ensemble_moments_vanish():
    m = np.array([[0.7, 0.2], [-0.2, 0.7]])
    spec = constant_ensemble(2, 0.5, m)
    rep = estimate_moments(spec, problem(lam=0.5), 3, 0)
    assert rep.phi(1) == 0 and rep.phi(2) == 0
    np.testing.assert_allclose(rep.ahom, m, atol=1e-15)
    assert rep.grad(1) == pytest.approx(1.0)


def test_exact_ahom_matches_oracle():
    np.testing.assert_allclose(exact_ahom(two_state_diagonal(2), TorusGrid(2, 2), 16.0), AHOM_2x2_T16, atol=1e-8)


def test_monte_carlo_ahom_within_three_se():
    rep = estimate_moments(two_state_diagonal(2), problem(L=2), 200, 1)
    A, se = np.array(rep.ahom), np.array(rep.ahom_se)
    assert np.all(np.abs(A - AHOM_2x2_T16) <= 3 * se + 1e-12)
    # symmetric law: antisymmetric part zero within noise; ellipticity of the symmetric part
    assert abs(A[0, 1] - A[1, 0]) <= 3 * (se[0, 1] + se[1, 0]) + 1e-12
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    assert ev.min() >= 0.25 - 3 * se.max() and ev.max() <= 1 + 3 * se.max()


def test_gradient_bracket_and_invariants():
    lam = 0.25
    rep = estimate_moments(two_state_diagonal(2, lam), problem(L=16, T=64.0), 40, 2, compute_ahom=False)
    assert lam ** 2 <= rep.grad(1) <= lam ** -2
    assert rep.max_energy_defect <= 1e-6
    mean, se = rep.phi0_mean
    assert abs(mean) <= 3 * se
    # origin and spatial estimators of stationary observables agree
    for site, spatial in ((rep.phi_moments["1"], rep.spatial["phi_sq_avg"]),
                          (rep.grad_moments["1"], rep.spatial["grad_sq_avg"])):
        assert abs(site[0] - spatial[0]) <= 3 * np.hypot(site[1], spatial[1])


def test_reports_are_reproducible_and_job_independent():
    spec = two_state_nonsymmetric(2)
    r1 = estimate_moments(spec, problem(), 6, 7, jobs=1)
    r2 = estimate_moments(spec, problem(), 6, 7, jobs=2)
    assert json.dumps(r1.to_dict(True)) == json.dumps(r2.to_dict(True))
    assert samples_to_csv([r1], {"seed": 7}) == samples_to_csv([r2], {"seed": 7})


def test_failures_abort(monkeypatch, caplog):
    calls = {"n": 0}
    real = moments_mod._sample_job

    def flaky(args):
        calls["n"] += 1
        if calls["n"] == 2:
            return {"ok": False, "seed": args[5], "stream": list(args[6]), "error": "boom"}
        return real(args)

    monkeypatch.setattr(moments_mod, "_sample_job", flaky)
    with caplog.at_level(logging.WARNING):
        with pytest.raises(ExperimentAborted, match="stream"):
            estimate_moments(two_state_nonsymmetric(2), problem(), 4, 0)
    assert "boom" in caplog.text
    calls["n"] = 0
    rep = estimate_moments(two_state_nonsymmetric(2), problem(), 40, 0, compute_ahom=False)
    assert rep.N == 39 and rep.failures[0]["stream"] == [1]


def test_validation():
    with pytest.raises(ValueError):
        estimate_moments(two_state_nonsymmetric(2), problem(), 1, 0)
    with pytest.raises(ValueError):
        estimate_moments(two_state_nonsymmetric(3), problem(), 4, 0)
    with pytest.raises(ValueError):
        scaling_study(two_state_nonsymmetric(2), (1.0, 0.0), [64, 16], 4, 0)
    with pytest.raises(ValueError):
        scaling_study(two_state_nonsymmetric(2), (1.0, 0.0), [1, 16], 4, 0)


def test_constant_scaling_is_flagged_degenerate():
    rep = scaling_study(constant_ensemble(2), (1.0, 0.0), [4, 16, 64, 256], 3, 0, size=8)
    assert rep.degenerate and rep.fit["degenerate"]
    assert rep.gradient_ratios["1"]["ratio"] == 1.0


def test_small_scaling_runs_end_to_end():
    rep = scaling_study(two_state_nonsymmetric(2), (1.0, 0.0), [4, 16, 64], 8, 0, p_list=(1,), size=16)
    assert set(rep.fit) >= {"slope", "intercept", "r2"} and set(rep.site_fit) >= {"slope", "r2"}
    d = rep.to_dict()
    assert len(d["moments"]) == 3 and "samples" not in d["moments"][0]
    out = gradient_moment_T_independence(two_state_diagonal(2), (1.0, 0.0), [4, 16, 64], 1, 6)
    assert out["ratio"] >= 1


def test_moment_vs_oscillation_consistency():
    g = TorusGrid(2, 2)
    out = moment_vs_oscillation_consistency(two_state_diagonal(2), g, problem(L=2))
    for p in ("1", "2"):
        c = out["sgp"][p]
        assert c["lhs"] <= c["constant"] * c["rhs"] * (1 + 1e-12)
        assert c["constant"] > 0
    assert out["sg"]["ratio"] >= 1 and out["lsi"]["ratio"] > 0
    assert abs(out["phi_mean"]) <= 1e-12
    const = moment_vs_oscillation_consistency(constant_ensemble(2), g, problem(L=2, lam=1.0))
    assert const["moments"]["1"] == 0 and const["sg"]["lhs"] == 0 and const["lsi"]["lhs"] == 0


def test_capacity_error():
    with pytest.raises(CapacityError):
        moment_vs_oscillation_consistency(two_state_diagonal(2), TorusGrid(2, 5), problem(L=5))


def test_report_roundtrips_through_json():
    rep = estimate_moments(two_state_nonsymmetric(2), problem(), 3, 0)
    data = json.loads(json.dumps(rep.to_dict(with_samples=True)))
    assert MomentReport(**data).to_dict(True) == rep.to_dict(True)
