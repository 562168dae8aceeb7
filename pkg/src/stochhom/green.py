"""Probes of Green functions: radial decay fits, weighted gradient sums,
the single-site perturbation identity and mixed-gradient energies.

Convention: ``G(a; x, y)`` is the column solved with a Dirac mass at ``y``,
``(1/T) G + ∇*_x(a ∇_x G) = delta_y``. Gradients in the second variable are
obtained by solving with ``delta_{y+e_j} - delta_y`` on the right-hand side.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from .ensembles import CoefficientField, EnsembleSpec, oscillation_at, sample_field
from .lattice import TorusGrid, gradient, grid_of, magnitude, omega_weight
from .solver import DEFAULT_TOL, OperatorHandle, CorrectorProblem, solve, solve_corrector, solve_green


class DegenerateProfileError(ValueError):
    pass


# ---------------------------------------------------------------------------
# decay fits

@dataclass
class DecayFitReport:
    mode: str
    rate: float
    exponent: float
    intercept: float
    residual: float
    window: tuple
    profile: list = field(default_factory=list)  # (r, max value) pairs

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "max_value"])
        for r, v in self.profile:
            w.writerow([repr(float(r)), repr(float(v))])
        return buf.getvalue()


def shell_maxima(values: np.ndarray, distances: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Maximum of ``values`` over unit shells ``k <= r < k+1``; returns (k, max)."""
    shells = np.floor(distances).astype(int).ravel()
    out = np.full(shells.max() + 1, -np.inf)
    np.maximum.at(out, shells, values.ravel())
    ks = np.nonzero(np.isfinite(out))[0]
    return ks.astype(float), out[ks]


def edge_distances(grid: TorusGrid) -> np.ndarray:
    """Distance of the edge midpoint ``x + e_i/2`` from the origin, shape ``(d,) + grid.shape``.

    A forward difference ``∇_i u(x)`` lives on the edge from x to x + e_i.
    """
    X = grid.minimal_image().astype(float)
    out = []
    for i in range(grid.d):
        Y = X.copy()
        Y[i] = np.abs(Y[i] + 0.5)
        Y[i] = np.minimum(Y[i], grid.L - Y[i])
        out.append(np.sqrt((Y ** 2).sum(axis=0)))
    return np.stack(out)


def decay_profile(G: np.ndarray, mode: str = "value", T: float | None = None) -> DecayFitReport:
    """Fit ``log max_shell = c + alpha log(r+1) - delta r`` with ``delta >= 0``.

    ``mode="gradient"`` profiles ``|∇_i G|`` over edges, placed at edge
    midpoints; shell k collects distances in [k, k+1) and is labelled k. The window
    is ``[2, L/2)``, further cut to ``[2, 2 sqrt(T)]`` when ``T`` is given.
    """
    if mode not in ("value", "gradient"):
        raise ValueError(f"mode must be 'value' or 'gradient', got {mode!r}")
    grid = grid_of(G)
    if grid.L < 16:
        raise ValueError(f"decay fits need L >= 16, got {grid.L}")
    if mode == "value":
        vals, dist = np.abs(G), grid.distance()
    else:
        vals, dist = np.abs(gradient(G)), edge_distances(grid)
    if not np.any(vals > 0):
        raise DegenerateProfileError("profile is identically zero")
    r, m = shell_maxima(vals, dist)
    hi = grid.L / 2 if T is None else min(grid.L / 2, 2 * np.sqrt(T))
    # shells reach up to 2 sqrt(T) inclusive but never L/2, where wraparound starts
    keep = (r >= 2) & (r <= hi) & (r < grid.L / 2) & (m > 0)
    if keep.sum() < 3:
        raise DegenerateProfileError(f"only {int(keep.sum())} usable shells in window [2, {hi:g}]")
    r, m = r[keep], m[keep]
    A = np.column_stack([np.ones_like(r), np.log(r + 1), -r])
    sol = lsq_linear(A, np.log(m), bounds=([-np.inf, -np.inf, 0.0], [np.inf, np.inf, np.inf]))
    c, alpha, delta = sol.x
    resid = float(np.sqrt(np.mean((A @ sol.x - np.log(m)) ** 2)))
    return DecayFitReport(mode, float(delta), float(alpha), float(c), resid, (2.0, float(hi)),
                          list(zip(r.tolist(), m.tolist())))


# ---------------------------------------------------------------------------
# weighted gradient sums

@dataclass
class WeightedSumReport:
    q: float
    T: float
    value: float
    values: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values else self.value

    @property
    def max(self) -> float:
        return float(np.max(self.values)) if self.values else self.value

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", "q", "T", "value"])
        for i, v in enumerate(self.values or [self.value]):
            w.writerow([i, self.q, self.T, repr(float(v))])
        return buf.getvalue()


def weighted_gradient_sum(a: CoefficientField, T: float, q: float = 1.1, tol: float = DEFAULT_TOL) -> WeightedSumReport:
    """``sum_x |∇_x G_T(a; x, 0)|^{2q} omega_q(x)``."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    G = solve_green(a, T, tol=tol).solution
    w = omega_weight(q, T).on(a.grid)
    value = float((magnitude(gradient(G)) ** (2 * q) * w).sum())
    return WeightedSumReport(q, T, value)


def ensemble_weighted_sum(spec: EnsembleSpec, grid: TorusGrid, T: float, q: float, samples: int,
                          seed: int = 0, tol: float = DEFAULT_TOL, stream_prefix=()) -> WeightedSumReport:
    vals = [weighted_gradient_sum(sample_field(spec, grid, seed, tuple(stream_prefix) + (i,)), T, q, tol).value
            for i in range(samples)]
    return WeightedSumReport(q, T, float(np.mean(vals)), vals)


# ---------------------------------------------------------------------------
# perturbation identity

def green_gradient_second(a: CoefficientField, T: float, x, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``∇_x G_T(a; y, x)`` as a function of y, shape ``(d,) + grid.shape``.

    Component j solves with ``delta_{x+e_j} - delta_x``.
    """
    grid = a.grid
    h = OperatorHandle(a, T)
    out = []
    for j in range(grid.d):
        rhs = grid.delta(grid.shift(x, grid.unit(j))) - grid.delta(x)
        out.append(solve(h, rhs, tol=tol).solution)
    return np.stack(out)


def perturbation_identity_check(a: CoefficientField, x, new_state, problem: CorrectorProblem,
                                tol: float = DEFAULT_TOL) -> float:
    """Max over y of the defect in
    ``phi(a~; y) - phi(a; y) = ∇_x G(a~; y, x) . (a(x) - a~(x)) (∇phi(a; x) + xi)``.

    Uses d + 2 solves: both correctors and d second-variable Green gradients.
    """
    grid = a.grid
    x = tuple(int(c) % grid.L for c in x)
    at = a.with_site(x, np.asarray(new_state, dtype=float))
    phi = solve_corrector(problem, a, tol=tol).solution
    phit = solve_corrector(problem, at, tol=tol).solution
    xi = np.asarray(problem.xi)
    h = (a.at(x) - at.at(x)) @ (gradient(phi)[(slice(None),) + x] + xi)
    if not np.any(h):
        rhs = np.zeros(grid.shape)
    else:
        dG = green_gradient_second(at, problem.T, x, tol=tol)
        rhs = np.tensordot(h, dG, axes=1)
    return float(np.abs(phit - phi - rhs).max())


def oscillation_constant(a: CoefficientField, spec: EnsembleSpec, problem: CorrectorProblem, x,
                         tol: float = DEFAULT_TOL) -> dict:
    """Empirical constant ``osc_{a(x)} phi(0) / (|∇_x G(a; 0, x)| |∇phi(a; x) + xi|)``.

    ``G(a; 0, x) = G(a^t; x, 0)``, so one transposed column gives the gradient
    at every x.
    """
    grid = a.grid
    x = tuple(int(c) % grid.L for c in x)
    osc = oscillation_at(lambda b: solve_corrector(problem, b, tol=tol).solution.flat[0], a, x, spec)
    Gt = solve_green(a.transpose(), problem.T, tol=tol).solution
    dG = np.linalg.norm(gradient(Gt)[(slice(None),) + x])
    phi = solve_corrector(problem, a, tol=tol).solution
    dphi = np.linalg.norm(gradient(phi)[(slice(None),) + x] + np.asarray(problem.xi))
    denom = dG * dphi
    bound = 4 * (1 + 2 * np.sqrt(grid.d) / a.lam)
    C = float(osc.value / denom) if denom > 0 else (0.0 if osc.value == 0 else np.inf)
    return {"oscillation": osc.value, "exact": osc.exact, "grad_green": float(dG),
            "grad_corrector": float(dphi), "constant": C, "reference_bound": bound}


# ---------------------------------------------------------------------------
# mixed gradients

def mixed_gradient_energy(a: CoefficientField, T: float, y, j: int, tol: float = DEFAULT_TOL) -> float:
    """``sum_x |∇_x (G(x, y + e_j) - G(x, y))|^2``."""
    grid = a.grid
    if not 0 <= j < grid.d:
        raise ValueError(f"direction {j} out of range for d={grid.d}")
    rhs = grid.delta(grid.shift(y, grid.unit(j))) - grid.delta(y)
    u = solve(OperatorHandle(a, T), rhs, tol=tol).solution
    return float((gradient(u) ** 2).sum())


def defects_to_csv(defects) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "defect"])
    for i, v in enumerate(defects):
        w.writerow([i, repr(float(v))])
    return buf.getvalue()
