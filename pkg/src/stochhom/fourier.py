"""Discrete Fourier analysis on the torus: the multipliers of the discrete
Calderón–Zygmund argument, the modified Helmholtz projection and
constant-coefficient Green functions.

Transform convention: ``dft(f)(xi) = sum_x f(x) exp(-i xi . x)`` on the
frequency grid ``xi = 2 pi m / L``; ``idft`` is its exact inverse, so Parseval
reads ``sum |f|^2 = L^{-d} sum |dft f|^2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensembles import CoefficientField
from .lattice import TorusGrid, grid_of, power_weight, weighted_norm
from .solver import DEFAULT_TOL, flux, laplacian_symbol, solve_green

MULTIPLIER_KINDS = ("M_T", "M_T_cont", "M_star_1", "M_star_2", "M_star_T", "h_factor", "helmholtz_symbol")


def dft(f: np.ndarray) -> np.ndarray:
    return np.fft.fftn(f)


def idft(F: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(F)


def frequencies(grid: TorusGrid) -> np.ndarray:
    """Frequencies in the Brillouin zone (-pi, pi], shape ``(d,) + grid.shape``."""
    m = np.arange(grid.L)
    xi = 2 * np.pi * np.where(m <= grid.L / 2, m, m - grid.L) / grid.L
    return np.stack(np.meshgrid(*([xi] * grid.d), indexing="ij"))


# ---------------------------------------------------------------------------
# multipliers

def h_factor(z):
    """``(e^{iz} - 1) / (iz)`` with ``h(0) = 1``, written as ``e^{iz/2} sinc(z/2)``."""
    z = np.asarray(z)
    return np.exp(0.5j * z) * np.sinc(z / (2 * np.pi))


def _lattice_symbol(xi) -> np.ndarray:
    return np.sum(np.abs(np.exp(1j * xi) - 1.0) ** 2, axis=-1)


@dataclass(frozen=True)
class MultiplierSpec:
    kind: str
    j: int = 0
    l: int = 0
    T: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if self.kind not in MULTIPLIER_KINDS:
            raise ValueError(f"unknown multiplier {self.kind!r}; expected one of {MULTIPLIER_KINDS}")
        if not self.T > 0:
            raise ValueError("T must be positive")


def eval_multiplier(spec: MultiplierSpec, xi) -> np.ndarray:
    """Evaluate a multiplier at frequencies ``xi`` (last axis = d components).

    Indices ``j``/``l`` are zero-based. ``M_T`` is the symbol of ``∇_j u`` for
    ``(1/T) u + ∇*∇u = ∇*_l g``; ``helmholtz_symbol`` is entry (j, l) of the
    modified Helmholtz projection with mass ``lam / T``. Values at ``xi = 0``
    follow the continuous extension (0 for every kind except ``h``, which is 1).
    """
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 0:
        xi = xi[None]
    j, l, T = spec.j, spec.l, spec.T
    if spec.kind == "h_factor":
        return h_factor(xi[..., j])
    ej = np.exp(1j * xi[..., j]) - 1.0
    el = np.exp(-1j * xi[..., l]) - 1.0
    if spec.kind == "M_T":
        return ej * el / (1.0 / T + _lattice_symbol(xi))
    if spec.kind == "helmholtz_symbol":
        return ej * el / (spec.lam / T + _lattice_symbol(xi))
    norm2 = np.sum(xi ** 2, axis=-1)
    if spec.kind == "M_T_cont":
        return (xi[..., j] * xi[..., l] / (1.0 / T + norm2)).astype(complex)
    hjl = h_factor(xi[..., j]) * h_factor(-xi[..., l])
    m1 = 1.0 - 1.0 / hjl
    if spec.kind == "M_star_1":
        return m1
    with np.errstate(invalid="ignore", divide="ignore"):
        m2 = np.sum(xi ** 2 * (1.0 - np.abs(h_factor(xi)) ** 2), axis=-1) / (norm2 * hjl)
    m2 = np.where(norm2 > 0, m2, 0.0)
    if spec.kind == "M_star_2":
        return m2
    return m1 + norm2 / (1.0 / T + norm2) * m2


def multiplier_identity_defect(xi, j: int, l: int, T: float) -> float:
    """max |M_T - M_T_cont - M_T M*_T| over the given frequencies."""
    m = eval_multiplier(MultiplierSpec("M_T", j, l, T), xi)
    mc = eval_multiplier(MultiplierSpec("M_T_cont", j, l, T), xi)
    ms = eval_multiplier(MultiplierSpec("M_star_T", j, l, T), xi)
    return float(np.abs(m - mc - m * ms).max())


def decomposition_defect(xi, j: int, l: int, T: float) -> float:
    """max |M*_T - (M*_1 + |xi|^2 / (1/T + |xi|^2) M*_2)|, with M*_T written out in full."""
    xi = np.asarray(xi, dtype=float)
    hj, hl = h_factor(xi[..., j]), h_factor(-xi[..., l])
    norm2 = np.sum(xi ** 2, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        full = (1 - 1 / (hj * hl) + norm2 / (1 / T + norm2)
                * np.sum(np.abs(xi) ** 2 * (1 - np.abs(h_factor(xi)) ** 2), axis=-1) / (norm2 * hj * hl))
    m1 = eval_multiplier(MultiplierSpec("M_star_1", j, l, T), xi)
    m2 = eval_multiplier(MultiplierSpec("M_star_2", j, l, T), xi)
    split = m1 + norm2 / (1 / T + norm2) * m2
    ok = norm2 > 0
    return float(np.abs(full[ok] - split[ok]).max()) if np.any(ok) else 0.0


# ---------------------------------------------------------------------------
# constant-coefficient operators

def green_constant(grid: TorusGrid, T: float, lam: float = 1.0) -> np.ndarray:
    """Solution of ``(lam/T) G + ∇*∇G = delta_0``, i.e. ``G_{T/lam}(1; ., 0)``."""
    G = idft(1.0 / (lam / T + laplacian_symbol(grid)))
    return np.real(G)


def _grad_symbols(grid: TorusGrid) -> np.ndarray:
    """``e^{i xi_k} - 1`` for each direction k, shape ``(d,) + grid.shape``."""
    return np.exp(1j * frequencies(grid)) - 1.0


def solve_constant(f: np.ndarray, T: float, lam: float = 1.0) -> np.ndarray:
    """Spectral solve of ``(lam/T) u + ∇*∇u = f``."""
    grid = grid_of(f)
    return np.real(idft(dft(f) / (lam / T + laplacian_symbol(grid))))


def helmholtz_apply(g: np.ndarray, T: float, lam: float = 1.0) -> np.ndarray:
    """Modified Helmholtz projection ``∇ (lam/T + ∇*∇)^{-1} ∇* g``, computed spectrally."""
    grid = grid_of(g, vector=True)
    E = _grad_symbols(grid)
    div_hat = np.sum(np.conj(E) * np.stack([dft(gi) for gi in g]), axis=0)
    u_hat = div_hat / (lam / T + laplacian_symbol(grid))
    return np.stack([np.real(idft(Ek * u_hat)) for Ek in E])


def helmholtz_identity_check(a: CoefficientField, T: float, lam: float | None = None,
                             tol: float = DEFAULT_TOL) -> dict:
    """Max-norm defect of ``(id + H abar) ∇G - lam ∇G0`` with ``abar = lam a - 1``.

    ``G = G_T(a; ., 0)`` comes from the iterative solver, ``G0`` from
    :func:`green_constant` with parameter T/lam.
    """
    lam = a.lam if lam is None else lam
    grid = a.grid
    rep = solve_green(a, T, tol=tol)
    from .lattice import gradient

    dG = gradient(rep.solution)
    dG0 = gradient(green_constant(grid, T, lam))
    abar_dG = lam * flux(a, dG) - dG
    lhs = dG + helmholtz_apply(abar_dG, T, lam)
    defect = float(np.abs(lhs - lam * dG0).max())
    return {"defect": defect, "tol": tol, "residual": rep.residual, "iterations": rep.iterations}


def abar_operator_ratio(a: CoefficientField, g: np.ndarray, T: float, lam: float | None = None) -> float:
    """``||H abar g||_2 / ||g||_2``; at most sqrt(1 - lam^2) over the ellipticity class."""
    lam = a.lam if lam is None else lam
    out = helmholtz_apply(lam * flux(a, g) - g, T, lam)
    return float(np.linalg.norm(out) / np.linalg.norm(g))


# ---------------------------------------------------------------------------
# weighted Calderón–Zygmund experiment

def check_cz_parameters(d: int, p: float, gamma: float) -> None:
    if not (1 < p < np.inf):
        raise ValueError(f"need 1 < p < inf, got p={p}")
    if not (0 <= gamma < min(d * (p - 1), 0.5)):
        raise ValueError(f"need 0 <= gamma < min(d(p-1), 1/2) = {min(d * (p - 1), 0.5)}, got gamma={gamma}")


def random_compact_field(grid: TorusGrid, rng: np.random.Generator) -> np.ndarray:
    """Uniform [-1, 1] values on a box of side max(1, L/8) centred at the origin."""
    side = max(1, grid.L // 8)
    lo = -(side // 2)
    g = np.zeros((grid.d,) + grid.shape)
    idx = np.ix_(*[np.arange(lo, lo + side) % grid.L] * grid.d)
    for k in range(grid.d):
        g[k][idx] = rng.uniform(-1.0, 1.0, size=(side,) * grid.d)
    return g


@dataclass
class CZReport:
    L: int
    T: float
    p: float
    gamma: float
    ratios: list
    skipped: int

    @property
    def max_ratio(self) -> float:
        return float(max(self.ratios)) if self.ratios else float("nan")


def cz_ratio_experiment(grid: TorusGrid, T: float, p: float, gamma: float, trials: int,
                        seed: int = 0) -> CZReport:
    """Ratios ``||∇u||_{l^p_gamma} / ||g||_{l^p_gamma}`` for ``(1/T) u + ∇*∇u = ∇*g``
    with random compactly supported ``g``."""
    check_cz_parameters(grid.d, p, gamma)
    w = power_weight(gamma)
    ratios, skipped = [], 0
    for t in range(trials):
        rng = np.random.default_rng([seed, grid.L, t])
        g = random_compact_field(grid, rng)
        gn = weighted_norm(g, p, w, vector=True)
        if gn == 0:
            skipped += 1
            continue
        du = helmholtz_apply(g, T, 1.0)
        ratios.append(weighted_norm(du, p, w, vector=True) / gn)
    return CZReport(grid.L, T, p, gamma, ratios, skipped)


def cz_ladder(d: int, Ls, p: float, gamma: float, trials: int, seed: int = 0, T=None) -> dict:
    """Max ratios over an L ladder (``T = L^2`` unless given) and the slope of
    max ratio against log L."""
    reports = [cz_ratio_experiment(TorusGrid(d, L), (L ** 2 if T is None else T), p, gamma, trials, seed)
               for L in Ls]
    maxima = np.array([r.max_ratio for r in reports])
    slope = float(np.polyfit(np.log(np.asarray(Ls, dtype=float)), maxima, 1)[0]) if len(Ls) > 1 else 0.0
    return {"reports": reports, "max_ratios": maxima.tolist(), "slope": slope,
            "mean_ratio": float(maxima.mean()), "relative_slope": slope / float(maxima.mean())}
