"""Scalar fields on a uniform torus lattice with periodic interpolation."""

from __future__ import annotations

import base64
import csv
import hashlib
import io
import json
import os

import numpy as np

from .torus import TWO_PI, wrap


class GridField:
    """Function sampled on an n^d uniform torus grid (d in {1, 2}).

    Values are immutable after construction; multilinear interpolation with
    periodic wrap reproduces node values exactly.
    """

    def __init__(self, values, period: float = TWO_PI, meta: dict | None = None):
        v = np.array(values, dtype=float)
        if v.ndim not in (1, 2):
            raise ValueError("GridField supports d in {1, 2}")
        if v.ndim == 2 and v.shape[0] != v.shape[1]:
            raise ValueError("2D grids must be square")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        self.values = v
        self.period = float(period)
        self.meta = dict(meta or {})
        self._key = None

    # -- geometry -----------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def spacing(self) -> float:
        return self.period / self.n

    def axis_coords(self) -> np.ndarray:
        return np.arange(self.n) * self.spacing

    def node_coords(self) -> np.ndarray:
        """All node coordinates, shape (n^d, d)."""
        ax = self.axis_coords()
        if self.dim == 1:
            return ax[:, None]
        return np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)

    def content_key(self) -> bytes:
        if self._key is None:
            m = hashlib.sha1()
            m.update(np.ascontiguousarray(self.values).tobytes())
            m.update(str((self.period, self.values.shape)).encode())
            self._key = m.digest()
        return self._key

    # -- evaluation ----------------------------------------------------------
    def interp(self, x) -> np.ndarray:
        """Multilinear periodic interpolation; x shaped (..., d) or scalar in 1D."""
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            x1 = x[..., 0] if x.ndim >= 2 and x.shape[-1] == 1 else x
            u = x1 / self.spacing
            i0 = np.floor(u).astype(int)
            f = u - i0
            i0 = np.mod(i0, self.n)
            i1 = np.mod(i0 + 1, self.n)
            return (1 - f) * self.values[i0] + f * self.values[i1]
        u = x / self.spacing
        i0 = np.floor(u).astype(int)
        f = u - i0
        i0 = np.mod(i0, self.n)
        i1 = np.mod(i0 + 1, self.n)
        v = self.values
        return ((1 - f[..., 0]) * (1 - f[..., 1]) * v[i0[..., 0], i0[..., 1]]
                + f[..., 0] * (1 - f[..., 1]) * v[i1[..., 0], i0[..., 1]]
                + (1 - f[..., 0]) * f[..., 1] * v[i0[..., 0], i1[..., 1]]
                + f[..., 0] * f[..., 1] * v[i1[..., 0], i1[..., 1]])

    def gradient_central(self, x, step: float | None = None) -> np.ndarray:
        """Central-difference gradient of the interpolant at x, shape (..., d)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.dim:
            x = x[..., None]
        s = self.spacing if step is None else step
        out = np.empty(x.shape)
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = s
            out[..., j] = (self.interp(x + e) - self.interp(x - e)) / (2 * s)
        return out

    def node_gradient(self) -> np.ndarray:
        """Central-difference gradient at all nodes, shape grid + (d,)."""
        v = self.values
        h = self.spacing
        out = np.empty(v.shape + (self.dim,))
        for ax in range(self.dim):
            out[..., ax] = (np.roll(v, -1, axis=ax) - np.roll(v, 1, axis=ax)) / (2 * h)
        return out

    def one_sided_slopes(self, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """(forward, backward) difference quotients at nodes along an axis."""
        v = self.values
        h = self.spacing
        fwd = (np.roll(v, -1, axis=axis) - v) / h
        bwd = (v - np.roll(v, 1, axis=axis)) / h
        return fwd, bwd

    def second_difference_max(self) -> float:
        m = 0.0
        for ax in range(self.dim):
            sec = (np.roll(self.values, -1, axis=ax) - 2 * self.values
                   + np.roll(self.values, 1, axis=ax)) / self.spacing**2
            m = max(m, float(np.max(np.abs(sec))))
        return m

    def lipschitz(self) -> float:
        """Max gradient norm estimated from one-sided node differences."""
        g2 = np.zeros(self.values.shape)
        for ax in range(self.dim):
            fwd, bwd = self.one_sided_slopes(ax)
            g2 = g2 + np.maximum(np.abs(fwd), np.abs(bwd)) ** 2
        return float(np.sqrt(np.max(g2)))

    # -- arithmetic helpers ---------------------------------------------------
    def shifted(self, a: float) -> "GridField":
        return GridField(self.values + a, self.period, self.meta)

    def min(self) -> float:
        return float(np.min(self.values))

    def max_abs_diff(self, other: "GridField") -> float:
        return float(np.max(np.abs(self.values - other.values)))

    # -- serialization ---------------------------------------------------------
    def to_json(self, descriptor: dict | None = None, raw: bool = False) -> str:
        header = {"n": self.n, "d": self.dim, "period": self.period,
                  "hamiltonian": descriptor or self.meta.get("hamiltonian"),
                  "encoding": "raw" if raw else "base64"}
        payload = np.ascontiguousarray(self.values, dtype=np.float64).tobytes()
        if raw:
            header["values"] = list(map(float, self.values.ravel()))
        else:
            header["values_b64"] = base64.b64encode(payload).decode()
        return json.dumps(header)

    @classmethod
    def from_json(cls, text: str) -> "GridField":
        header = json.loads(text)
        n, d = header["n"], header["d"]
        if header.get("encoding") == "raw":
            v = np.array(header["values"], dtype=float)
        else:
            v = np.frombuffer(base64.b64decode(header["values_b64"]), dtype=np.float64).copy()
        v = v.reshape((n,) * d)
        return cls(v, header["period"], {"hamiltonian": header.get("hamiltonian")})

    def write_csv(self, path: str):
        """Rows of (node coordinates..., value)."""
        coords = self.node_coords()
        vals = self.values.ravel()
        tmp = path + ".tmp"
        with open(tmp, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"x{j}" for j in range(self.dim)] + ["value"])
            for c, v in zip(coords, vals):
                w.writerow([f"{cj:.17g}" for cj in c] + [f"{v:.17g}"])
        os.replace(tmp, path)


def field_from_function(fn, n: int, dim: int = 1, period: float = TWO_PI,
                        meta: dict | None = None) -> GridField:
    """Sample a callable of (..., d)-shaped coordinates on the lattice."""
    ax = np.arange(n) * (period / n)
    if dim == 1:
        vals = fn(ax[:, None])
        vals = np.asarray(vals, dtype=float).reshape(n)
    else:
        pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1)
        vals = np.asarray(fn(pts), dtype=float).reshape(n, n)
    return GridField(vals, period, meta)


def constant_field(value: float, n: int, dim: int = 1, period: float = TWO_PI) -> GridField:
    return GridField(np.full((n,) * dim, float(value)), period)
