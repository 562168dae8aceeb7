"""Coefficient fields, i.i.d. product ensembles, site oscillations and
exhaustive checks of the spectral gap / log-Sobolev inequalities."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .lattice import TorusGrid

ELL_TOL = 1e-12
MAX_CONFIGURATIONS = 2 ** 20


class EllipticityError(ValueError):
    pass


class CapacityError(RuntimeError):
    pass


def ellipticity_defect(m: np.ndarray, lam: float) -> tuple[float, float]:
    """Return (smallest eigenvalue of the symmetric part, spectral norm) of ``m``."""
    m = np.asarray(m, dtype=float)
    sym = 0.5 * (m + np.swapaxes(m, -1, -2))
    return float(np.linalg.eigvalsh(sym).min()), float(np.linalg.norm(m, ord=2, axis=(-2, -1)).max())


def check_elliptic(m, lam: float, name: str = "matrix") -> np.ndarray:
    """Validate ``v.m v >= lam |v|^2`` and ``|m v| <= |v|``; return ``m`` as an array."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise EllipticityError(f"{name}: expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise EllipticityError(f"{name}: non-finite entries")
    low, norm = ellipticity_defect(m, lam)
    if low < lam - ELL_TOL:
        raise EllipticityError(f"{name}: symmetric part has eigenvalue {low:.6g} < lambda={lam}")
    if norm > 1 + ELL_TOL:
        raise EllipticityError(f"{name}: spectral norm {norm:.6g} > 1")
    return m


@dataclass(frozen=True)
class EllipticMatrix:
    entries: np.ndarray
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "entries", check_elliptic(self.entries, self.lam))


@dataclass(frozen=True)
class CoefficientField:
    """Per-site d x d matrices, stored component-major: ``values[i, j]`` is the
    scalar field ``a_ij``, so ``values.shape == (d, d) + grid.shape``."""

    grid: TorusGrid
    values: np.ndarray
    lam: float

    def __post_init__(self):
        d = self.grid.d
        if self.values.shape != (d, d) + self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid}")

    @classmethod
    def constant(cls, grid: TorusGrid, matrix, lam: float) -> "CoefficientField":
        m = check_elliptic(matrix, lam)
        vals = np.broadcast_to(m.reshape(grid.d, grid.d, *([1] * grid.d)), (grid.d, grid.d) + grid.shape)
        return cls(grid, np.ascontiguousarray(vals), lam)

    @classmethod
    def from_site_matrices(cls, grid: TorusGrid, mats: np.ndarray, lam: float) -> "CoefficientField":
        """Build from an array of shape ``(L^d, d, d)`` in row-major site order."""
        mats = np.asarray(mats, dtype=float)
        vals = np.moveaxis(mats.reshape(grid.shape + (grid.d, grid.d)), (-2, -1), (0, 1))
        return cls(grid, np.ascontiguousarray(vals), lam)

    def site_matrices(self) -> np.ndarray:
        return np.moveaxis(self.values, (0, 1), (-2, -1)).reshape(-1, self.grid.d, self.grid.d)

    def at(self, x) -> np.ndarray:
        return self.values[(slice(None), slice(None)) + tuple(int(c) % self.grid.L for c in x)].copy()

    def with_site(self, x, matrix) -> "CoefficientField":
        vals = self.values.copy()
        vals[(slice(None), slice(None)) + tuple(int(c) % self.grid.L for c in x)] = matrix
        return replace(self, values=vals)

    def transpose(self) -> "CoefficientField":
        return replace(self, values=np.ascontiguousarray(np.swapaxes(self.values, 0, 1)))

    def validate(self) -> None:
        low, norm = ellipticity_defect(self.site_matrices(), self.lam)
        if low < self.lam - ELL_TOL or norm > 1 + ELL_TOL:
            mats = self.site_matrices()
            lows = np.linalg.eigvalsh(0.5 * (mats + np.swapaxes(mats, 1, 2))).min(axis=1)
            norms = np.linalg.norm(mats, ord=2, axis=(1, 2))
            bad = int(np.argmax((lows < self.lam - ELL_TOL) | (norms > 1 + ELL_TOL)))
            check_elliptic(mats[bad], self.lam, name=f"site {self.grid.coords(bad)}")

    def is_symmetric(self) -> bool:
        return bool(np.allclose(self.values, np.swapaxes(self.values, 0, 1), atol=0.0, rtol=0.0))


def shift_field(a: CoefficientField, z) -> CoefficientField:
    """Field ``x -> a(x + z)`` on the torus."""
    vals = a.values
    for i, zi in enumerate(z):
        vals = np.roll(vals, -int(zi), axis=2 + i)
    return replace(a, values=vals)


# ---------------------------------------------------------------------------
# ensembles

KINDS = ("finite_state", "diagonal_iid", "antisymmetric_perturbation", "constant")


@dataclass(frozen=True)
class EnsembleSpec:
    """i.i.d. product law on coefficient fields.

    finite_state
        ``states`` (list of d x d matrices) with ``probabilities``.
    diagonal_iid
        diagonal entries i.i.d. uniform on ``[low, high]`` (``distribution="uniform"``)
        or equal to ``low``/``high`` with probability 1/2 each (``"two_point"``).
    antisymmetric_perturbation
        ``mu I + nu S`` with ``mu`` uniform on ``[mu_low, mu_high]`` and ``S`` a random
        antisymmetric matrix of unit spectral norm.
    constant
        every site equals ``matrix``.
    """

    kind: str
    d: int
    lam: float
    states: tuple = ()
    probabilities: tuple = ()
    low: Optional[float] = None
    high: Optional[float] = None
    distribution: str = "uniform"
    mu_low: Optional[float] = None
    mu_high: Optional[float] = None
    nu: float = 0.0
    matrix: Optional[tuple] = None
    rho: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown ensemble kind {self.kind!r}; expected one of {KINDS}")
        if not (0 < self.lam <= 1):
            raise EllipticityError(f"lambda must lie in (0, 1], got {self.lam}")
        if self.kind == "finite_state":
            if not self.states:
                raise ValueError("finite_state ensemble needs states")
            probs = np.asarray(self.probabilities, dtype=float)
            if probs.shape != (len(self.states),) or np.any(probs < 0) or abs(probs.sum() - 1) > 1e-12:
                raise ValueError(f"probabilities {self.probabilities} must be nonnegative, one per state, and sum to 1")
            for k, s in enumerate(self.states):
                self._check_shape(s, f"state {k}")
                check_elliptic(s, self.lam, name=f"state {k}")
        elif self.kind == "constant":
            if self.matrix is None:
                raise ValueError("constant ensemble needs matrix")
            self._check_shape(self.matrix, "matrix")
            check_elliptic(self.matrix, self.lam, name="matrix")
        elif self.kind == "diagonal_iid":
            if self.low is None or self.high is None or not (self.lam <= self.low <= self.high <= 1):
                raise EllipticityError(f"diagonal entries must satisfy lambda <= low <= high <= 1, got {self.low}, {self.high}")
            if self.distribution not in ("uniform", "two_point"):
                raise ValueError(f"unknown distribution {self.distribution!r}")
        elif self.kind == "antisymmetric_perturbation":
            if self.mu_low is None or self.mu_high is None:
                raise ValueError("antisymmetric_perturbation needs mu_low and mu_high")
            if not (self.lam <= self.mu_low <= self.mu_high) or self.nu < 0 or self.mu_high + self.nu > 1 + ELL_TOL:
                raise EllipticityError(
                    f"need lambda <= mu_low <= mu_high and mu_high + nu <= 1, got "
                    f"mu in [{self.mu_low}, {self.mu_high}], nu={self.nu}")

    def _check_shape(self, m, name):
        if np.asarray(m).shape != (self.d, self.d):
            raise EllipticityError(f"{name}: expected a {self.d}x{self.d} matrix, got shape {np.asarray(m).shape}")

    @property
    def state_array(self) -> np.ndarray:
        """Support of a finite law (a constant law has a single state)."""
        if self.kind == "constant":
            return np.asarray(self.matrix, dtype=float).reshape(1, self.d, self.d)
        return np.asarray(self.states, dtype=float).reshape(-1, self.d, self.d)

    @property
    def state_probabilities(self) -> np.ndarray:
        return np.ones(1) if self.kind == "constant" else np.asarray(self.probabilities, dtype=float)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` i.i.d. single-site matrices, shape ``(n, d, d)``."""
        d = self.d
        if self.kind == "constant":
            return np.broadcast_to(np.asarray(self.matrix, dtype=float), (n, d, d)).copy()
        if self.kind == "finite_state":
            cum = np.cumsum(self.probabilities)
            cum[-1] = 1.0
            idx = np.searchsorted(cum, rng.random(n), side="right")
            return self.state_array[np.minimum(idx, len(self.states) - 1)]
        if self.kind == "diagonal_iid":
            if self.distribution == "uniform":
                diag = rng.uniform(self.low, self.high, size=(n, d))
            else:
                diag = np.where(rng.random((n, d)) < 0.5, self.low, self.high)
            out = np.zeros((n, d, d))
            out[:, np.arange(d), np.arange(d)] = diag
            return out
        mu = rng.uniform(self.mu_low, self.mu_high, size=n)
        return mu[:, None, None] * np.eye(d) + self.nu * _unit_antisymmetric(rng, n, d)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "d": self.d, "lambda": self.lam}
        if self.name:
            out["name"] = self.name
        if self.kind == "finite_state":
            out["states"] = [np.asarray(s, dtype=float).tolist() for s in self.states]
            out["probabilities"] = [float(p) for p in self.probabilities]
        elif self.kind == "constant":
            out["matrix"] = np.asarray(self.matrix, dtype=float).tolist()
        elif self.kind == "diagonal_iid":
            out.update(low=self.low, high=self.high, distribution=self.distribution)
        else:
            out.update(mu_low=self.mu_low, mu_high=self.mu_high, nu=self.nu)
        if self.rho is not None:
            out["rho"] = self.rho
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EnsembleSpec":
        data = dict(data)
        kw = dict(kind=data.pop("kind"), lam=float(data.pop("lambda")))
        if "states" in data:
            kw["states"] = tuple(_as_tuple_matrix(s) for s in data.pop("states"))
            kw["probabilities"] = tuple(float(p) for p in data.pop("probabilities"))
        if "matrix" in data:
            kw["matrix"] = _as_tuple_matrix(data.pop("matrix"))
        d = data.pop("d", None)
        if d is None:
            ref = kw.get("matrix") or (kw["states"][0] if kw.get("states") else None)
            if ref is None:
                raise ValueError("ensemble spec needs 'd'")
            d = len(ref)
        kw["d"] = int(d)
        for key in ("low", "high", "mu_low", "mu_high", "nu", "rho"):
            if key in data:
                v = data.pop(key)
                kw[key] = None if v is None else float(v)
        for key in ("distribution", "name"):
            if key in data:
                kw[key] = data.pop(key)
        if data:
            raise ValueError(f"unknown ensemble keys: {sorted(data)}")
        return cls(**kw)


def _as_tuple_matrix(m) -> tuple:
    return tuple(tuple(float(v) for v in row) for row in np.atleast_2d(np.asarray(m, dtype=float)))


def _unit_antisymmetric(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    if d == 1:
        return np.zeros((n, 1, 1))
    if d == 2:
        J = np.array([[0.0, -1.0], [1.0, 0.0]])
        return np.where(rng.random(n) < 0.5, 1.0, -1.0)[:, None, None] * J
    g = rng.standard_normal((n, d, d))
    s = g - np.swapaxes(g, 1, 2)
    return s / np.linalg.norm(s, ord=2, axis=(1, 2))[:, None, None]


def rotation_generator(d: int) -> np.ndarray:
    """A fixed antisymmetric matrix of unit spectral norm (d >= 2)."""
    if d == 2:
        return np.array([[0.0, -1.0], [1.0, 0.0]])
    n = np.ones(3) / math.sqrt(3.0)
    if d == 3:
        return np.array([[0.0, -n[2], n[1]], [n[2], 0.0, -n[0]], [-n[1], n[0], 0.0]])
    s = np.zeros((d, d))
    s[0, 1], s[1, 0] = -1.0, 1.0
    return s


def constant_ensemble(d: int, lam: float = 1.0, matrix=None) -> EnsembleSpec:
    m = np.eye(d) if matrix is None else np.asarray(matrix, dtype=float)
    return EnsembleSpec("constant", d, lam, matrix=_as_tuple_matrix(m), name="constant")


def two_state_diagonal(d: int, lam: float = 0.25, p: float = 0.5) -> EnsembleSpec:
    """States ``lam * I`` and ``I``."""
    return EnsembleSpec("finite_state", d, lam,
                        states=(_as_tuple_matrix(lam * np.eye(d)), _as_tuple_matrix(np.eye(d))),
                        probabilities=(p, 1.0 - p), name="two_state_diagonal")


def two_state_nonsymmetric(d: int, lam: float = 0.25, nu: float = 0.25, mu_high: float = 0.95,
                           p: float = 0.5) -> EnsembleSpec:
    """States ``lam I + nu S`` and ``mu_high I - nu S`` with ``S`` a fixed unit rotation generator."""
    S = rotation_generator(d)
    return EnsembleSpec("finite_state", d, lam,
                        states=(_as_tuple_matrix(lam * np.eye(d) + nu * S),
                                _as_tuple_matrix(mu_high * np.eye(d) - nu * S)),
                        probabilities=(p, 1.0 - p), name="two_state_nonsymmetric")


def antisymmetric_perturbation(d: int, lam: float = 0.5, nu: float = 0.3, mu_high: Optional[float] = None) -> EnsembleSpec:
    return EnsembleSpec("antisymmetric_perturbation", d, lam, mu_low=lam,
                        mu_high=(1.0 - nu) if mu_high is None else mu_high, nu=nu,
                        name="antisymmetric_perturbation")


PRESETS: dict[str, Callable[..., EnsembleSpec]] = {
    "constant": constant_ensemble,
    "two_state_diagonal": two_state_diagonal,
    "two_state_nonsymmetric": two_state_nonsymmetric,
    "antisymmetric_perturbation": antisymmetric_perturbation,
}


def load_ensemble(source: str, d: Optional[int] = None, lam: Optional[float] = None) -> EnsembleSpec:
    """Resolve an ensemble from a preset name, an inline JSON object or a JSON file."""
    source = source.strip()
    if source in PRESETS:
        if d is None:
            raise ValueError(f"preset {source!r} needs a dimension")
        kw = {} if lam is None else {"lam": lam}
        return PRESETS[source](d, **kw)
    if source.startswith("{"):
        data = json.loads(source)
    else:
        data = json.loads(Path(source).read_text())
    if "preset" in data:
        name = data.pop("preset")
        return PRESETS[name](int(data.pop("d", d)), **{("lam" if k == "lambda" else k): v for k, v in data.items()})
    if d is not None:
        data.setdefault("d", d)
    return EnsembleSpec.from_dict(data)


# ---------------------------------------------------------------------------
# sampling

def site_rng(seed: int, stream=()) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, *stream)``.

    Philox is a counter-based bit generator: draw ``k`` of a stream is a pure function
    of the key and ``k``. Site values are drawn in row-major order, so the value at a
    site depends only on (seed, stream, site index) and never on scheduling.
    """
    stream = (stream,) if isinstance(stream, (int, np.integer)) else tuple(stream)
    key = np.random.SeedSequence([int(seed) & (2 ** 64 - 1)] + [int(s) for s in stream])
    return np.random.Generator(np.random.Philox(key))


def sample_field(spec: EnsembleSpec, grid: TorusGrid, seed: int, stream=()) -> CoefficientField:
    if grid.d != spec.d:
        raise ValueError(f"ensemble is {spec.d}-dimensional but grid is {grid.d}-dimensional")
    mats = spec.draw(site_rng(seed, stream), grid.size)
    return CoefficientField.from_site_matrices(grid, mats, spec.lam)


def field_from_states(spec: EnsembleSpec, grid: TorusGrid, labels: Sequence[int]) -> CoefficientField:
    """Finite-state field with state ``labels[i]`` at row-major site ``i``."""
    return CoefficientField.from_site_matrices(grid, spec.state_array[np.asarray(labels)], spec.lam)


# ---------------------------------------------------------------------------
# oscillation

@dataclass
class Oscillation:
    value: float
    exact: bool
    values: np.ndarray = field(repr=False, default=None)


def oscillation_at(observable: Callable[[CoefficientField], float], a: CoefficientField, x,
                   spec: EnsembleSpec, K: int = 32, seed: int = 0) -> Oscillation:
    """sup - inf of ``observable`` over fields agreeing with ``a`` off site ``x``.

    Exact for finite-state and constant ensembles. For continuous ensembles the
    sup/inf run over ``K`` fresh draws of ``a(x)`` plus its current value, which
    gives a lower bound of the true oscillation (``exact=False``).
    """
    if spec.kind == "finite_state":
        candidates, exact = spec.state_array, True
    elif spec.kind == "constant":
        candidates, exact = np.asarray(spec.matrix, dtype=float)[None], True
    else:
        candidates = np.concatenate([a.at(x)[None], spec.draw(site_rng(seed, (a.grid.index(x),)), K)])
        exact = False
    vals = np.array([float(observable(a.with_site(x, m))) for m in candidates])
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError(f"observable returned non-finite values at site {tuple(x)}: {vals}")
    return Oscillation(float(vals.max() - vals.min()), exact, vals)


# ---------------------------------------------------------------------------
# exhaustive enumeration

def enumerate_configurations(spec: EnsembleSpec, grid: TorusGrid):
    """All finite-state configurations with their probabilities.

    Returns ``(labels, probs)`` with ``labels`` of shape ``(n_states^(L^d), L^d)``
    in lexicographic order (site 0 most significant).
    """
    if spec.kind not in ("finite_state", "constant"):
        raise ValueError("exhaustive enumeration needs a finite_state or constant ensemble")
    k, n = len(spec.state_array), grid.size
    if k ** n > MAX_CONFIGURATIONS:
        raise CapacityError(f"{k}^{n} = {k ** n} configurations exceed the limit {MAX_CONFIGURATIONS}")
    labels = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int64).reshape(-1, n)
    probs = np.prod(spec.state_probabilities[labels], axis=1)
    return labels, probs


def enumerate_observable(spec: EnsembleSpec, grid: TorusGrid, observable) -> tuple[np.ndarray, np.ndarray]:
    """Observable values on every configuration, reshaped to ``(n_states,) * L^d``,
    together with matching probabilities."""
    labels, probs = enumerate_configurations(spec, grid)
    vals = np.array([float(observable(field_from_states(spec, grid, lab))) for lab in labels])
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("observable returned non-finite values during enumeration")
    shape = (len(spec.state_array),) * grid.size
    return vals.reshape(shape), probs.reshape(shape)


def oscillation_table(values: np.ndarray) -> np.ndarray:
    """``osc[x][config]`` for every site axis ``x`` of an enumerated observable table."""
    return np.stack([
        np.broadcast_to(values.max(axis=ax, keepdims=True) - values.min(axis=ax, keepdims=True), values.shape)
        for ax in range(values.ndim)
    ])


@dataclass
class InequalityReport:
    mode: str
    lhs: float
    rhs: float
    ratio: float
    rho: float
    oscillation_sum: float

    def holds(self, rho: float) -> bool:
        return self.lhs <= self.oscillation_sum / (rho if self.mode == "SG" else 2 * rho) * (1 + 1e-12) + 1e-300

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("mode", "lhs", "rhs", "ratio", "rho", "oscillation_sum")}


def functional_inequality_from_table(values: np.ndarray, probs: np.ndarray, mode: str) -> InequalityReport:
    osc2 = (oscillation_table(values) ** 2).sum(axis=0)
    S = float((probs * osc2).sum())
    if mode == "SG":
        mean = float((probs * values).sum())
        lhs = float((probs * (values - mean) ** 2).sum())
        rhs = S
    elif mode == "LSI":
        z2 = values ** 2
        m2 = float((probs * z2).sum())
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = np.where(z2 > 0, z2 * np.log(z2 / m2), 0.0) if m2 > 0 else np.zeros_like(z2)
        lhs = max(float((probs * ent).sum()), 0.0)
        rhs = S / 2
    else:
        raise ValueError(f"mode must be 'SG' or 'LSI', got {mode!r}")
    # round-off of a vanishing variance/entropy is not a violation
    if lhs <= 1e-14 * max(1.0, float((probs * values ** 2).sum())):
        lhs = 0.0
    ratio = math.inf if lhs == 0 else rhs / lhs
    return InequalityReport(mode, lhs, rhs, ratio, ratio, S)


def verify_functional_inequality(spec: EnsembleSpec, grid: TorusGrid, observable, mode: str = "SG") -> InequalityReport:
    """Both sides of SG (variance vs. expected squared oscillations) or LSI
    (entropy of zeta^2 vs. half of it) by exhaustive enumeration.

    ``rhs`` is evaluated at rho = 1, so ``ratio = rhs / lhs`` is the largest rho
    for which the inequality holds for this observable.
    """
    values, probs = enumerate_observable(spec, grid, observable)
    return functional_inequality_from_table(values, probs, mode)


def product_constants(spec: EnsembleSpec) -> dict:
    """A priori SG/LSI constants ``rho`` valid for every observable under ``spec``.

    Per-site variances are at most osc^2 / 4, so SG holds with rho = 4 for any
    product law (Efron-Stein). For two-point laws with weights p, q the sharp
    Bernoulli log-Sobolev bound tensorizes to
    ``rho = (q - p) / (2 p q log(q / p))`` (``rho = 1`` at p = 1/2).
    """
    out = {"SG": 4.0}
    if spec.kind == "constant":
        out["LSI"] = math.inf
    elif spec.kind == "finite_state" and len(spec.states) == 2:
        p, q = (float(v) for v in spec.probabilities)
        if min(p, q) == 0:
            out["LSI"] = math.inf
        elif abs(p - q) < 1e-12:
            out["LSI"] = 1.0
        else:
            out["LSI"] = (q - p) / (2 * p * q * math.log(q / p))
    if spec.rho is not None:
        out["SG"] = out["LSI"] = float(spec.rho)
    return out


def sgp_constant(values: np.ndarray, probs: np.ndarray, p: float) -> dict:
    """Smallest C with ``<|z - <z>|^{2p}> <= C <(sum_x osc_x z^2)^p>``."""
    osc2 = (oscillation_table(values) ** 2).sum(axis=0)
    mean = float((probs * values).sum())
    lhs = float((probs * np.abs(values - mean) ** (2 * p)).sum())
    rhs = float((probs * osc2 ** p).sum())
    if lhs <= 1e-14 * max(1.0, float((probs * np.abs(values) ** (2 * p)).sum())):
        lhs = 0.0
    C = 0.0 if lhs == 0 else (math.inf if rhs == 0 else lhs / rhs)
    return {"p": p, "lhs": lhs, "rhs": rhs, "constant": C}
