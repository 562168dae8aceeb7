"""Periodic lattice geometry and discrete calculus on the torus (Z/LZ)^d.

Fields are plain numpy arrays:

* scalar field: shape ``(L,) * d``
* vector field: shape ``(d,) + (L,) * d`` (component axis first)

Sites are indexed in row-major (C) order, which is numpy's default ravel order.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class TorusGrid:
    d: int
    L: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d}")
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"side length must be an integer >= 2, got {self.L}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.L,) * self.d

    @property
    def size(self) -> int:
        return self.L ** self.d

    def index(self, x) -> int:
        """Row-major site index of the coordinate tuple ``x`` (taken mod L)."""
        return int(np.ravel_multi_index(tuple(int(c) % self.L for c in x), self.shape))

    def coords(self, i: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(int(i), self.shape))

    def shift(self, x, z) -> tuple[int, ...]:
        return tuple((int(a) + int(b)) % self.L for a, b in zip(x, z))

    def unit(self, i: int) -> tuple[int, ...]:
        e = [0] * self.d
        e[i] = 1
        return tuple(e)

    def minimal_image(self) -> np.ndarray:
        """Coordinates of every site mapped into (-L/2, L/2], shape ``(d,) + shape``."""
        c = np.arange(self.L)
        rep = np.where(c <= self.L / 2, c, c - self.L)
        return np.stack(np.meshgrid(*([rep] * self.d), indexing="ij"))

    def distance(self) -> np.ndarray:
        """Euclidean minimal-image distance from the origin, one value per site."""
        return np.sqrt((self.minimal_image().astype(float) ** 2).sum(axis=0))

    def delta(self, y=None) -> np.ndarray:
        u = np.zeros(self.shape)
        u[tuple(int(c) % self.L for c in (y if y is not None else (0,) * self.d))] = 1.0
        return u


def grid_of(u: np.ndarray, vector: bool = False) -> TorusGrid:
    shape = u.shape[1:] if vector else u.shape
    if len(set(shape)) != 1:
        raise ValueError(f"not a cubic lattice field: shape {u.shape}")
    return TorusGrid(len(shape), shape[0])


# ---------------------------------------------------------------------------
# discrete calculus

def gradient(u: np.ndarray) -> np.ndarray:
    """Forward differences ``u(x + e_i) - u(x)`` stacked along a new leading axis."""
    return np.stack([np.roll(u, -1, axis=i) - u for i in range(u.ndim)])


def divergence_star(g: np.ndarray) -> np.ndarray:
    """Negative divergence ``sum_i g_i(x - e_i) - g_i(x)``, the adjoint of :func:`gradient`."""
    out = np.zeros(g.shape[1:])
    for i in range(g.shape[0]):
        out += np.roll(g[i], 1, axis=i) - g[i]
    return out


def laplacian_star(u: np.ndarray) -> np.ndarray:
    """``∇*∇u``, the positive semi-definite graph Laplacian."""
    return divergence_star(gradient(u))


def magnitude(g: np.ndarray) -> np.ndarray:
    """Pointwise Euclidean length of a vector field."""
    return np.sqrt((g ** 2).sum(axis=0))


# ---------------------------------------------------------------------------
# weights and norms

@dataclass(frozen=True)
class WeightSpec:
    """Spatial weight on the torus, evaluated at minimal-image distance |x|.

    ``kind`` is one of

    * ``"omega"``: the polynomial weight used for weighted Green gradient sums,
      ``(|x|+1)^{2(q-1)} + T^{1-q} (|x|+1)^{4(q-1)}`` in d = 2 and
      ``(|x|+1)^{2d(q-1)}`` in d > 2;
    * ``"power"``: ``(|x|+1)^gamma``;
    * ``"custom"``: ``func(|x|)`` for a user supplied function.
    """

    kind: str = "power"
    q: float = 1.0
    gamma: float = 0.0
    T: float = 1.0
    func: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("omega", "power", "custom"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind == "omega" and (self.q < 1 or self.T <= 0):
            raise ValueError("omega weight needs q >= 1 and T > 0")
        if self.kind == "power" and self.gamma < 0:
            raise ValueError("power weight needs gamma >= 0")
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom weight needs func")

    def at_distance(self, r, d: int) -> np.ndarray:
        r1 = np.asarray(r, dtype=float) + 1.0
        if self.kind == "power":
            return r1 ** self.gamma
        if self.kind == "omega":
            q = self.q
            if d == 2:
                return r1 ** (2 * (q - 1)) + self.T ** (1 - q) * r1 ** (4 * (q - 1))
            return r1 ** (2 * d * (q - 1))
        return np.asarray(self.func(np.asarray(r, dtype=float)), dtype=float)

    def on(self, grid: TorusGrid) -> np.ndarray:
        return self.at_distance(grid.distance(), grid.d)


def omega_weight(q: float, T: float) -> WeightSpec:
    return WeightSpec(kind="omega", q=q, T=T)


def power_weight(gamma: float) -> WeightSpec:
    return WeightSpec(kind="power", gamma=gamma)


def weighted_norm(f: np.ndarray, p: float, w: WeightSpec, vector: bool = False) -> float:
    """``(sum_x |f(x)|^p w(x))^(1/p)``; ``|f(x)|`` is the Euclidean length for vector fields."""
    if not (1 <= p < math.inf):
        raise ValueError(f"p must be finite and >= 1, got {p}")
    mag = magnitude(f) if vector else np.abs(f)
    grid = grid_of(mag)
    return float((mag ** p * w.on(grid)).sum() ** (1.0 / p))


# ---------------------------------------------------------------------------
# convolution

def convolve(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Circular convolution ``(f * g)(x) = sum_y f(x - y) g(y)`` via FFT."""
    if f.shape != g.shape:
        raise ValueError(f"shape mismatch {f.shape} vs {g.shape}")
    return np.real(np.fft.ifftn(np.fft.fftn(f) * np.fft.fftn(g)))


# ---------------------------------------------------------------------------
# serialization
#
# binary: three little-endian int64 (d, L, components), then float64 values in
# row-major site order with the components of one site stored contiguously.
# csv: a "d,L,components" header row and its values, then one row per site.

_HEADER = struct.Struct("<qqq")


def _site_major(u: np.ndarray, components: int) -> np.ndarray:
    if components == 1:
        return u.reshape(-1, 1)
    return np.moveaxis(u, 0, -1).reshape(-1, components)


def _from_site_major(values: np.ndarray, d: int, L: int, components: int) -> np.ndarray:
    shape = (L,) * d
    if components == 1:
        return values.reshape(shape)
    return np.moveaxis(values.reshape(shape + (components,)), -1, 0)


def _field_layout(u: np.ndarray, vector: bool) -> tuple[int, int, int]:
    grid = grid_of(u, vector=vector)
    return grid.d, grid.L, (u.shape[0] if vector else 1)


def field_to_bytes(u: np.ndarray, vector: bool = False) -> bytes:
    d, L, comps = _field_layout(u, vector)
    body = _site_major(np.asarray(u, dtype="<f8"), comps).astype("<f8").tobytes()
    return _HEADER.pack(d, L, comps) + body


def field_from_bytes(data: bytes) -> np.ndarray:
    d, L, comps = _HEADER.unpack_from(data)
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if values.size != L ** d * comps:
        raise ValueError(f"expected {L ** d * comps} values, found {values.size}")
    return _from_site_major(values.astype(float), d, L, comps)


def field_to_csv(u: np.ndarray, vector: bool = False) -> str:
    d, L, comps = _field_layout(u, vector)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["d", "L", "components"])
    w.writerow([d, L, comps])
    w.writerow(["site"] + [f"v{k}" for k in range(comps)])
    for i, row in enumerate(_site_major(np.asarray(u, dtype=float), comps)):
        w.writerow([i] + [repr(float(v)) for v in row])
    return buf.getvalue()


def field_from_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(line for line in io.StringIO(text) if not line.startswith("#")))
    d, L, comps = (int(v) for v in rows[1])
    values = np.array([[float(v) for v in r[1:]] for r in rows[3:]])
    if values.shape != (L ** d, comps):
        raise ValueError(f"expected {L ** d} rows of {comps} values, found {values.shape}")
    return _from_site_major(values, d, L, comps)


def save_field(path, u: np.ndarray, vector: bool = False) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        path.write_text(field_to_csv(u, vector))
    else:
        path.write_bytes(field_to_bytes(u, vector))


def load_field(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        return field_from_csv(path.read_text())
    return field_from_bytes(path.read_bytes())
