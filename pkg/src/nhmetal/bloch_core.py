"""Algebra of two-band non-Hermitian Bloch Hamiltonians H = (dR + i dI) . sigma.

Everything here is a pure function of its inputs. Vectorised helpers take
arrays with a trailing axis of length 3 (Bloch vectors) or ``d`` (momenta).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__

SIGMA_0 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = np.stack([SIGMA_X, SIGMA_Y, SIGMA_Z])

DEFAULT_CONDITION_CAP = 1e8


def canonicalize(k):
    """Map momenta into [-pi, pi) per axis. Every periodic reduction goes through here."""
    k = np.asarray(k, dtype=float)
    out = np.mod(k + np.pi, 2 * np.pi) - np.pi
    # mod can return exactly 2*pi - tiny rounding up to pi
    return np.where(out >= np.pi, out - 2 * np.pi, out)


def sqrt_branch(z):
    """Principal square root with Re >= 0, and Im >= 0 whenever Re == 0.

    numpy's sqrt honours the sign of a zero imaginary part, so sqrt(-4-0j)
    gives -2j; that case is folded back onto +2j here.
    """
    w = np.sqrt(np.asarray(z, dtype=complex))
    fix = w.real == 0
    if np.any(fix):
        w = np.where(fix, 1j * np.abs(w.imag), w)
    return w if w.ndim else complex(w)


@dataclass(frozen=True)
class BlochVector:
    dR: tuple[float, float, float]
    dI: tuple[float, float, float]

    def __post_init__(self):
        dR = tuple(float(x) for x in self.dR)
        dI = tuple(float(x) for x in self.dI)
        if len(dR) != 3 or len(dI) != 3:
            raise ValueError("Bloch vector components must be 3-vectors")
        if not all(np.isfinite(dR + dI)):
            raise ValueError("Bloch vector must be finite")
        object.__setattr__(self, "dR", dR)
        object.__setattr__(self, "dI", dI)

    @classmethod
    def from_complex(cls, d) -> "BlochVector":
        d = np.asarray(d, dtype=complex)
        return cls(tuple(d.real), tuple(d.imag))

    @property
    def d(self) -> np.ndarray:
        return np.asarray(self.dR) + 1j * np.asarray(self.dI)

    def norm2(self) -> float:
        """|dR|^2 + |dI|^2."""
        return float(np.dot(self.dR, self.dR) + np.dot(self.dI, self.dI))

    def matrix(self) -> np.ndarray:
        return hamiltonian(self.d)

    def to_dict(self) -> dict:
        return {"dR": list(self.dR), "dI": list(self.dI)}

    @classmethod
    def from_dict(cls, doc: dict) -> "BlochVector":
        return cls(tuple(doc["dR"]), tuple(doc["dI"]))


def hamiltonian(d) -> np.ndarray:
    """d . sigma for complex d with shape (..., 3); returns (..., 2, 2)."""
    d = np.asarray(d, dtype=complex)
    return np.einsum("...i,ijk->...jk", d, PAULI)


def discriminant(d: BlochVector) -> complex:
    """E^2 = |dR|^2 - |dI|^2 + 2i dR.dI, evaluated with real dot products."""
    dR = np.asarray(d.dR)
    dI = np.asarray(d.dI)
    return complex(float(dR @ dR - dI @ dI), float(2.0 * (dR @ dI)))


def discriminant_field(dR, dI) -> np.ndarray:
    """Vectorised :func:`discriminant` over arrays of shape (..., 3)."""
    re = np.einsum("...i,...i->...", dR, dR) - np.einsum("...i,...i->...", dI, dI)
    im = 2.0 * np.einsum("...i,...i->...", dR, dI)
    return re + 1j * im


@dataclass(frozen=True)
class ComplexSpectrum:
    ePlus: complex
    eMinus: complex
    eSquared: complex
    psiPlus: np.ndarray
    psiMinus: np.ndarray
    eigenvectorConditionNumber: float
    defective: bool

    @property
    def gap(self) -> complex:
        return self.ePlus - self.eMinus


def _eigvec(h, lam):
    # right eigenvector of a 2x2 matrix; pick the better conditioned of the two rows
    v1 = np.array([h[0, 1], lam - h[0, 0]])
    v2 = np.array([lam - h[1, 1], h[1, 0]])
    v = v1 if np.linalg.norm(v1) >= np.linalg.norm(v2) else v2
    n = np.linalg.norm(v)
    if n == 0.0:
        return None
    return v / n


def spectrum(h, condition_cap: float = DEFAULT_CONDITION_CAP) -> ComplexSpectrum:
    """Eigen-decomposition of a general complex 2x2 matrix.

    Eigenvalues are ``a +/- sqrt(e2)`` where ``a`` is half the trace and
    ``e2 = -det(h - a)``; the root is taken on the principal branch from
    :func:`sqrt_branch`. The condition number is ``1/|det[psi+, psi-]|`` with
    unit columns (1 for orthogonal eigenvectors, inf at an exceptional point).
    """
    h = np.asarray(h, dtype=complex)
    if h.shape != (2, 2) or not np.all(np.isfinite(h)):
        raise ValueError("spectrum expects a finite 2x2 matrix")
    a = 0.5 * (h[0, 0] + h[1, 1])
    h0 = h - a * SIGMA_0
    e2 = complex(-(h0[0, 0] * h0[1, 1] - h0[0, 1] * h0[1, 0]))
    e = sqrt_branch(e2)

    scale = np.abs(h0).max()
    if scale == 0.0:
        # scalar matrix: every vector is an eigenvector
        psi_p = np.array([1, 0], dtype=complex)
        psi_m = np.array([0, 1], dtype=complex)
    else:
        # eigenvectors from the rescaled matrix so tiny or huge entries neither underflow nor overflow
        hn = h0 / scale
        en = sqrt_branch(complex(-(hn[0, 0] * hn[1, 1] - hn[0, 1] * hn[1, 0])))
        if not np.isfinite(e) or (e == 0 and en != 0):
            e = scale * en
        psi_p = _eigvec(hn, en)
        psi_m = _eigvec(hn, -en)
        if psi_p is None:
            psi_p = psi_m
        if psi_m is None:
            psi_m = psi_p
    ep, em = a + e, a - e
    overlap = abs(psi_p[0] * psi_m[1] - psi_p[1] * psi_m[0])
    cond = np.inf if overlap == 0.0 else 1.0 / overlap
    return ComplexSpectrum(
        ePlus=complex(ep),
        eMinus=complex(em),
        eSquared=e2,
        psiPlus=psi_p,
        psiMinus=psi_m,
        eigenvectorConditionNumber=float(cond),
        defective=bool(cond > condition_cap),
    )


def is_exceptional(d: BlochVector, tol: float = 1e-10) -> bool:
    """EP predicate at non-vanishing d with tolerance relative to max(1, |d|^2)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    n2 = d.norm2()
    s = max(1.0, n2)
    e2 = discriminant(d)
    return abs(e2.real) <= tol * s and abs(e2.imag) <= tol * s and n2 > tol * s


@dataclass(frozen=True)
class SymmetryOp:
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=complex)
        if q.shape != (2, 2):
            raise ValueError("q must be 2x2")
        if np.linalg.norm(q.conj().T @ q - SIGMA_0) > 1e-12:
            raise ValueError("q must be unitary")
        object.__setattr__(self, "q", q)


@dataclass(frozen=True)
class GridSpec:
    """Regular momentum grid; ``endpoint`` follows ``numpy.linspace``.

    A fixed slice is an axis with one sample and ``lo == hi``.
    """

    shape: tuple[int, ...]
    ranges: tuple[tuple[float, float], ...] | None = None
    endpoint: bool = True

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        if len(shape) not in (2, 3):
            raise ValueError("grid must be 2D or 3D")
        ranges = self.ranges
        if ranges is None:
            ranges = tuple((-np.pi, np.pi) for _ in shape)
        ranges = tuple((float(lo), float(hi)) for lo, hi in ranges)
        if len(ranges) != len(shape):
            raise ValueError("one range per axis required")
        for n, (lo, hi) in zip(shape, ranges):
            if n < 1 or (n == 1 and lo != hi):
                raise ValueError("each axis needs >= 2 samples (or 1 for a fixed slice)")
        if sum(n > 1 for n in shape) < 2:
            raise ValueError("grid needs at least two sampled axes")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "ranges", ranges)

    @property
    def dimension(self) -> int:
        return len(self.shape)

    def axes(self) -> list[np.ndarray]:
        return [
            np.array([lo]) if n == 1 else np.linspace(lo, hi, n, endpoint=self.endpoint)
            for n, (lo, hi) in zip(self.shape, self.ranges)
        ]

    def spacing(self) -> np.ndarray:
        return np.array([a[1] - a[0] if len(a) > 1 else 0.0 for a in self.axes()])

    def mesh(self) -> np.ndarray:
        """Momenta with shape (*shape, d)."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def to_dict(self) -> dict:
        return {"shape": list(self.shape), "ranges": [list(r) for r in self.ranges], "endpoint": self.endpoint}

    @classmethod
    def from_dict(cls, doc: dict) -> "GridSpec":
        return cls(tuple(doc["shape"]), tuple(tuple(r) for r in doc.get("ranges") or ()) or None,
                   bool(doc.get("endpoint", True)))

    @classmethod
    def parse(cls, text: str, slices: dict[str, float] | None = None) -> "GridSpec":
        """Parse ``"201x201"`` or ``"61x61x61"``; ``slices`` pins axes, e.g. ``{"kz": 0.65}``."""
        try:
            shape = [int(s) for s in text.lower().split("x")]
        except ValueError:
            raise ValueError(f"bad grid spec {text!r}; expected e.g. 201x201") from None
        if not shape or any(n < 2 for n in shape):
            raise ValueError(f"bad grid spec {text!r}; need >= 2 samples per axis")
        ranges = [(-np.pi, np.pi)] * len(shape)
        for name, value in (slices or {}).items():
            axis = {"kx": 0, "ky": 1, "kz": 2}[name]
            while len(shape) <= axis:
                shape.append(1)
                ranges.append((0.0, 0.0))
            shape[axis] = 1
            ranges[axis] = (float(value), float(value))
        return cls(tuple(shape), tuple(ranges))


FIELD_NAMES = ("reE2", "imE2", "sqrtAbsReE2", "sqrtAbsImE2", "reGap", "imGap")


@dataclass
class FieldGrid:
    grid: GridSpec
    fields: dict[str, np.ndarray]
    model: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.grid.dimension

    def lattice(self, name: str) -> np.ndarray:
        """The named field with singleton (fixed-slice) axes squeezed out."""
        return np.squeeze(self.fields[name])

    def sampled_axes(self) -> list[np.ndarray]:
        return [a for a in self.grid.axes() if len(a) > 1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        kcols = [f"k{i + 1}" for i in range(self.dimension)]
        w.writerow(kcols + ["reE2", "imE2", "reGap", "imGap"])
        K = self.grid.mesh().reshape(-1, self.dimension)
        cols = [self.fields[n].ravel() for n in ("reE2", "imE2", "reGap", "imGap")]
        for row in zip(*K.T, *cols):
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "kind": "FieldGrid",
            "version": __version__,
            "grid": self.grid.to_dict(),
            "axes": [a.tolist() for a in self.grid.axes()],
            "model": self.model,
            "fields": {n: self.fields[n].ravel().tolist() for n in FIELD_NAMES},
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FieldGrid":
        doc = json.loads(text)
        grid = GridSpec.from_dict(doc["grid"])
        fields = {n: np.array(v, dtype=float).reshape(grid.shape) for n, v in doc["fields"].items()}
        return cls(grid, fields, doc.get("model", {}))


def scan_fields(model, grid: GridSpec) -> FieldGrid:
    """Evaluate the spectral lattices of ``model`` pointwise on ``grid``."""
    dR, dI = model.bloch(grid.mesh())
    e2 = discriminant_field(dR, dI)
    e = sqrt_branch(e2)
    fields = {
        "reE2": e2.real,
        "imE2": e2.imag,
        "sqrtAbsReE2": np.sqrt(np.abs(e2.real)),
        "sqrtAbsImE2": np.sqrt(np.abs(e2.imag)),
        "reGap": 2.0 * e.real,
        "imGap": 2.0 * e.imag,
    }
    return FieldGrid(grid, fields, model.to_dict() if hasattr(model, "to_dict") else {})


def symmetry_residual(model, q: SymmetryOp, grid: GridSpec) -> float:
    """max_k || H(k) - q H(k)^dagger q^-1 ||_2 (spectral norm) over the grid."""
    dR, dI = model.bloch(grid.mesh())
    h = hamiltonian(dR + 1j * dI)
    qi = q.q.conj().T
    mirrored = q.q @ np.conj(np.swapaxes(h, -1, -2)) @ qi
    return float(np.linalg.norm(h - mirrored, ord=2, axis=(-2, -1)).max())
