"""Monte Carlo moments of the modified corrector and their scaling in T."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .ensembles import (EnsembleSpec, enumerate_configurations, enumerate_observable, field_from_states,
                        functional_inequality_from_table, sample_field, sgp_constant)
from .lattice import TorusGrid, gradient
from .solver import DEFAULT_TOL, CorrectorProblem, SolverError, default_size, flux, solve_corrector

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MAX_FAILURE_FRACTION = 0.05


class ExperimentAborted(SolverError):
    pass


# ---------------------------------------------------------------------------
# single sample

def unit_correctors(a, T: float, lam: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Correctors for xi = e_1, ..., e_d, shape ``(d,) + grid.shape``."""
    grid = a.grid
    return np.stack([solve_corrector(CorrectorProblem(tuple(np.eye(grid.d)[k]), T, lam, grid), a, tol=tol).solution
                     for k in range(grid.d)])


def ahom_density(a, phis: np.ndarray) -> np.ndarray:
    """Spatial average of ``(e_i + ∇phi_i) . a (e_j + ∇phi_j)``."""
    d = a.grid.d
    ones = np.ones(a.grid.shape)
    fields = [gradient(phis[k]) + np.stack([ones * (m == k) for m in range(d)]) for k in range(d)]
    fluxes = [flux(a, f) for f in fields]
    return np.array([[float(np.mean(np.sum(fields[i] * fluxes[j], axis=0))) for j in range(d)] for i in range(d)])


def energy_defect(a, phi: np.ndarray, xi, T: float) -> float:
    """Relative defect of ``(1/T) sum phi^2 + sum ∇phi.a∇phi + sum ∇phi.a xi = 0``."""
    g = gradient(phi)
    xi_field = np.broadcast_to(np.asarray(xi, float).reshape((-1,) + (1,) * a.grid.d), g.shape)
    t1 = float((phi ** 2).sum()) / T
    t2 = float((g * flux(a, g)).sum())
    t3 = float((g * flux(a, xi_field)).sum())
    scale = abs(t1) + abs(t2) + abs(t3)
    return 0.0 if scale == 0 else abs(t1 + t2 + t3) / scale


def _sample_job(args) -> dict:
    spec_dict, d, L, T, xi, seed, stream, tol, compute_ahom = args
    spec = EnsembleSpec.from_dict(spec_dict)
    grid = TorusGrid(d, L)
    xi = np.asarray(xi, dtype=float)
    origin = (0,) * d
    try:
        a = sample_field(spec, grid, seed, stream)
        if compute_ahom:
            phis = unit_correctors(a, T, spec.lam, tol)
            phi = np.tensordot(xi, phis, axes=1)
            ahom = ahom_density(a, phis)
        else:
            phi = solve_corrector(CorrectorProblem(tuple(xi), T, spec.lam, grid), a, tol=tol).solution
            ahom = None
    except (SolverError, FloatingPointError) as exc:
        return {"ok": False, "seed": seed, "stream": list(stream), "error": str(exc)}
    g = gradient(phi) + xi.reshape((-1,) + (1,) * d)
    g2 = np.sum(g ** 2, axis=0)
    return {
        "ok": True,
        "phi0": float(phi[origin]),
        "phi0_sq": float(phi[origin] ** 2),
        "grad0_sq": float(g2[origin]),
        "phi_sq_avg": float(np.mean(phi ** 2)),
        "phi_4_avg": float(np.mean(phi ** 4)),
        "grad_sq_avg": float(np.mean(g2)),
        "grad_4_avg": float(np.mean(g2 ** 2)),
        "energy_defect": energy_defect(a, phi, xi, T),
        "ahom": None if ahom is None else ahom.tolist(),
    }


def _run_jobs(jobs_args: list, jobs: int) -> list:
    if jobs <= 1 or len(jobs_args) <= 1:
        return [_sample_job(x) for x in jobs_args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map preserves submission order, so aggregation is independent of scheduling
        return list(pool.map(_sample_job, jobs_args, chunksize=max(1, len(jobs_args) // (4 * jobs))))


# ---------------------------------------------------------------------------
# moment estimation

def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()) if x.size else float("nan"), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


@dataclass
class MomentReport:
    T: float
    L: int
    xi: list
    p_list: list
    N: int
    seed: int
    ensemble: dict
    grad_moments: dict        # p -> [mean, se] of |∇phi(0)+xi|^{2p}
    phi_moments: dict         # p -> [mean, se] of |phi(0)|^{2p}
    spatial: dict             # spatial-average estimators, name -> [mean, se]
    phi0_mean: list
    ahom: Optional[list]
    ahom_se: Optional[list]
    max_energy_defect: float
    failures: list = field(default_factory=list)
    samples: list = field(default_factory=list, repr=False)

    def grad(self, p) -> float:
        return self.grad_moments[str(p)][0]

    def phi(self, p) -> float:
        return self.phi_moments[str(p)][0]

    def to_dict(self, with_samples: bool = False) -> dict:
        out = asdict(self)
        if not with_samples:
            out.pop("samples")
        return out


def estimate_moments(spec: EnsembleSpec, problem: CorrectorProblem, N: int, master_seed: int,
                     p_list: Sequence[int] = (1, 2), jobs: int = 1, compute_ahom: bool = True,
                     tol: float = DEFAULT_TOL, stream_prefix=()) -> MomentReport:
    """Sample ``N`` fields, solve the corrector for each and estimate moments at the origin.

    Sample i uses the generator stream ``stream_prefix + (i,)``. The a_hom estimate
    averages the energy density over all sites and samples (needs d solves per sample;
    the corrector for ``problem.xi`` then follows by linearity).
    """
    if N < 2:
        raise ValueError(f"need N >= 2 samples, got {N}")
    if spec.d != problem.grid.d:
        raise ValueError("ensemble and problem dimensions differ")
    args = [(spec.to_dict(), problem.grid.d, problem.grid.L, problem.T, list(problem.xi), master_seed,
             tuple(stream_prefix) + (i,), tol, compute_ahom) for i in range(N)]
    results = _run_jobs(args, jobs)
    failures = [r for r in results if not r["ok"]]
    for f in failures:
        log.warning("sample failed (seed=%s stream=%s): %s", f["seed"], f["stream"], f["error"])
    if len(failures) > MAX_FAILURE_FRACTION * N:
        raise ExperimentAborted(f"{len(failures)}/{N} samples failed; first replay key "
                                f"seed={failures[0]['seed']} stream={failures[0]['stream']}")
    ok = [r for r in results if r["ok"]]
    g2 = np.array([r["grad0_sq"] for r in ok])
    f2 = np.array([r["phi0_sq"] for r in ok])
    grad_m = {str(p): list(_mean_se(g2 ** p)) for p in p_list}
    phi_m = {str(p): list(_mean_se(f2 ** p)) for p in p_list}
    spatial = {k: list(_mean_se([r[k] for r in ok]))
               for k in ("phi_sq_avg", "phi_4_avg", "grad_sq_avg", "grad_4_avg")}
    ahom = ahom_se = None
    if compute_ahom:
        A = np.array([r["ahom"] for r in ok])
        ahom = A.mean(axis=0).tolist()
        ahom_se = (A.std(axis=0, ddof=1) / math.sqrt(len(ok))).tolist()
    return MomentReport(
        T=problem.T, L=problem.grid.L, xi=list(problem.xi), p_list=list(p_list), N=len(ok), seed=master_seed,
        ensemble=spec.to_dict(), grad_moments=grad_m, phi_moments=phi_m, spatial=spatial,
        phi0_mean=list(_mean_se([r["phi0"] for r in ok])), ahom=ahom, ahom_se=ahom_se,
        max_energy_defect=float(max(r["energy_defect"] for r in ok)),
        failures=[{k: f[k] for k in ("seed", "stream", "error")} for f in failures],
        samples=ok,
    )


# ---------------------------------------------------------------------------
# scaling in T

@dataclass
class ScalingReport:
    d: int
    T_ladder: list
    moments: list
    fit: dict
    site_fit: dict
    gradient_ratios: dict
    degenerate: bool

    def to_dict(self) -> dict:
        return {"d": self.d, "T_ladder": self.T_ladder, "fit": self.fit, "site_fit": self.site_fit,
                "gradient_ratios": self.gradient_ratios, "degenerate": self.degenerate,
                "moments": [m.to_dict() for m in self.moments]}


def _ratio_band(means, ses) -> dict:
    means, ses = np.asarray(means), np.asarray(ses)
    hi, lo = int(np.argmax(means)), int(np.argmin(means))
    ratio = float(means[hi] / means[lo]) if means[lo] > 0 else (1.0 if means[hi] == 0 else math.inf)
    lo_val = means[lo] + 3 * ses[lo]
    band = float(max(means[hi] - 3 * ses[hi], 0.0) / lo_val) if lo_val > 0 else (1.0 if means[hi] == 0 else math.inf)
    return {"ratio": ratio, "ratio_3sigma": band}


def _fit(T_ladder, means, ses, d: int) -> dict:
    means = np.asarray(means, dtype=float)
    if d == 2:
        if np.ptp(means) == 0:
            return {"kind": "log T", "slope": 0.0, "intercept": float(means[0]), "r2": float("nan"), "degenerate": True}
        res = stats.linregress(np.log(np.asarray(T_ladder, dtype=float)), means)
        return {"kind": "log T", "slope": float(res.slope), "intercept": float(res.intercept),
                "r2": float(res.rvalue ** 2), "slope_se": float(res.stderr), "degenerate": False}
    out = {"kind": "constant", "mean": float(means.mean()), "degenerate": bool(np.all(means == 0))}
    out.update(_ratio_band(means, ses))
    return out


def scaling_study(spec: EnsembleSpec, xi, T_ladder: Sequence[float], N: int, master_seed: int,
                  p_list: Sequence[int] = (1, 2), jobs: int = 1, size: Optional[int] = None,
                  tol: float = DEFAULT_TOL, compute_ahom: bool = False) -> ScalingReport:
    """Moments across a T ladder; ``<|phi_T(0)|^2>`` is regressed on log T (d = 2)
    or compared against a constant (d > 2). Ladder entry k uses streams ``(k, i)``.

    ``fit`` uses the spatial average of ``phi_T^2`` over the torus, which has the
    same expectation as ``phi_T(0)^2`` by stationarity and far smaller variance;
    ``site_fit`` repeats the fit with the origin-only estimator."""
    T_ladder = [float(T) for T in T_ladder]
    if len(T_ladder) < 2 or any(b <= a for a, b in zip(T_ladder, T_ladder[1:])):
        raise ValueError(f"T ladder must be strictly increasing with at least two entries, got {T_ladder}")
    if min(T_ladder) < 2:
        raise ValueError("every T in the ladder must be >= 2")
    d = spec.d
    reports = []
    for k, T in enumerate(T_ladder):
        grid = TorusGrid(d, size or default_size(T))
        reports.append(estimate_moments(spec, CorrectorProblem(tuple(xi), T, spec.lam, grid), N, master_seed,
                                        p_list, jobs, compute_ahom, tol, stream_prefix=(k,)))
    site = [r.phi_moments["1"] for r in reports]
    spatial = [r.spatial["phi_sq_avg"] for r in reports]
    fit = _fit(T_ladder, [m for m, _ in spatial], [s for _, s in spatial], d)
    sfit = _fit(T_ladder, [m for m, _ in site], [s for _, s in site], d)
    xi2 = float(np.dot(xi, xi))
    gr = {}
    for p in p_list:
        vals = [r.grad_moments[str(p)] for r in reports]
        gr[str(p)] = _ratio_band([m / xi2 ** p for m, _ in vals], [s / xi2 ** p for _, s in vals])
    return ScalingReport(d, T_ladder, reports, fit, sfit, gr, bool(fit.get("degenerate")))


def gradient_moment_T_independence(spec: EnsembleSpec, xi, T_ladder, p: int, N: int, master_seed: int = 0,
                                   jobs: int = 1, tol: float = DEFAULT_TOL) -> dict:
    """Max/min ratio of ``<|∇phi_T(0)+xi|^{2p}>/|xi|^{2p}`` over the ladder."""
    rep = scaling_study(spec, xi, T_ladder, N, master_seed, (p,), jobs, tol=tol)
    band = rep.gradient_ratios[str(p)]
    return {"p": p, **band, "holds": band["ratio_3sigma"] <= 2.0}


# ---------------------------------------------------------------------------
# enumeration oracles

def moment_vs_oscillation_consistency(spec: EnsembleSpec, grid: TorusGrid, problem: CorrectorProblem,
                                      p_list: Sequence[int] = (1, 2), j: int = 0,
                                      tol: float = DEFAULT_TOL) -> dict:
    """Exact moments of ``phi_T(0)`` with the smallest SGp constants, and both sides
    of SG/LSI for ``zeta = ∇_j phi_T(0) + xi_j``, by exhaustive enumeration."""
    origin = (0,) * grid.d
    cache = {}

    def corrector(a):
        key = a.values.tobytes()
        if key not in cache:
            cache[key] = solve_corrector(problem, a, tol=tol).solution
        return cache[key]

    phi_vals, probs = enumerate_observable(spec, grid, lambda a: corrector(a)[origin])
    zeta_vals, _ = enumerate_observable(spec, grid,
                                        lambda a: gradient(corrector(a))[(j,) + origin] + problem.xi[j])
    out = {"moments": {}, "sgp": {}}
    for p in p_list:
        out["moments"][str(p)] = float((probs * np.abs(phi_vals) ** (2 * p)).sum())
        out["sgp"][str(p)] = sgp_constant(phi_vals, probs, p)
    out["sg"] = functional_inequality_from_table(zeta_vals, probs, "SG").as_dict()
    out["lsi"] = functional_inequality_from_table(zeta_vals, probs, "LSI").as_dict()
    out["phi_mean"] = float((probs * phi_vals).sum())
    return out


def exact_ahom(spec: EnsembleSpec, grid: TorusGrid, T: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Expected spatially averaged a_hom density by exhaustive enumeration."""
    labels, probs = enumerate_configurations(spec, grid)
    acc = np.zeros((grid.d, grid.d))
    for lab, pr in zip(labels, probs):
        a = field_from_states(spec, grid, lab)
        acc += pr * ahom_density(a, unit_correctors(a, T, spec.lam, tol))
    return acc


# ---------------------------------------------------------------------------
# output

SAMPLE_COLUMNS = ("sample_id", "T", "phi0_sq", "grad0_sq", "phi_sq_avg", "grad_sq_avg", "energy_defect")


def samples_to_csv(reports: Sequence[MomentReport], header: Optional[dict] = None) -> str:
    buf = io.StringIO()
    if header is not None:
        buf.write(f"# schema_version={SCHEMA_VERSION}\n")
        buf.write("# config=" + json.dumps(header, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SAMPLE_COLUMNS)
    for rep in reports:
        for i, s in enumerate(rep.samples):
            w.writerow([i, repr(float(rep.T))] + [repr(float(s[c])) for c in SAMPLE_COLUMNS[2:]])
    return buf.getvalue()
