"""Catalog of Bloch-vector families and their analytic momentum derivatives.

Families
--------
``H1``    dR = (2 - cos kx - cos ky, 0, 0), dI = (0, 0, 1/4)
``H2``    dR = (m + 1 - cos kx - cos ky, 0, 0), dI = (0, sin kx, sin ky)
``Knot``  dR = (f1 - eps, eps, 0), dI = (0, f2, sqrt(2) eps) with
          f1 + i f2 = Z0**p + Z1**q, Z0 = sin kx + i sin ky,
          Z1 = 2 (cos kx + cos ky + cos kz) - 5 + i sin kz
``Const`` momentum-independent d given entirely by the perturbation (tests, baselines)

Every family accepts an additive perturbation sum_i c_i sigma_i with complex
c_i, folded in as dR += Re c, dI += Im c.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .bloch_core import BlochVector
from .errors import DimensionMismatch, Unsupported, WrongFamily

FAMILIES = ("H1", "H2", "Knot", "Const")

# perturbation realised in the trefoil robustness run
PRESET_DELTA = (0.3179, 0.3590, 0.2211)


@dataclass(frozen=True)
class ModelSpec:
    family: str
    m: float = 0.0
    p: int = 3
    q_exp: int = 2
    epsilon: float = -20.0
    perturbation: tuple[complex, complex, complex] = (0j, 0j, 0j)
    normalized: bool = False
    const_dimension: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        pert = tuple(complex(c) for c in self.perturbation)
        if len(pert) != 3:
            raise ValueError("perturbation must have three complex coefficients")
        object.__setattr__(self, "perturbation", pert)
        if self.family == "Knot":
            if int(self.p) != self.p or int(self.q_exp) != self.q_exp or self.p < 1 or self.q_exp < 1:
                raise ValueError("knot exponents p, q must be positive integers")
            if self.epsilon == 0:
                raise ValueError("epsilon must be nonzero")
            object.__setattr__(self, "p", int(self.p))
            object.__setattr__(self, "q_exp", int(self.q_exp))
        if self.family == "Const" and self.const_dimension not in (2, 3):
            raise ValueError("const_dimension must be 2 or 3")

    # -- constructors ---------------------------------------------------------
    @classmethod
    def h1(cls, perturbation=(0, 0, 0)) -> "ModelSpec":
        return cls("H1", perturbation=perturbation)

    @classmethod
    def h2(cls, m: float, perturbation=(0, 0, 0)) -> "ModelSpec":
        return cls("H2", m=float(m), perturbation=perturbation)

    @classmethod
    def knot(cls, p: int = 3, q: int = 2, epsilon: float = -20.0, perturbation=(0, 0, 0),
             normalized: bool = False) -> "ModelSpec":
        return cls("Knot", p=p, q_exp=q, epsilon=float(epsilon), perturbation=perturbation,
                   normalized=normalized)

    @classmethod
    def const(cls, d, dimension: int = 2) -> "ModelSpec":
        return cls("Const", perturbation=tuple(d), const_dimension=dimension)

    def with_perturbation(self, c) -> "ModelSpec":
        return replace(self, perturbation=tuple(complex(x) for x in c))

    @property
    def dimension(self) -> int:
        if self.family == "Knot":
            return 3
        if self.family == "Const":
            return self.const_dimension
        return 2

    def preserves_sigma_x_symmetry(self) -> bool:
        """Whether the perturbation keeps H = sigma_x H^dagger sigma_x."""
        cx, cy, cz = self.perturbation
        return cx.imag == 0 and cy.real == 0 and cz.real == 0

    # -- evaluation -----------------------------------------------------------
    def _check(self, k):
        k = np.asarray(k, dtype=float)
        if k.shape[-1] != self.dimension:
            raise DimensionMismatch(
                f"{self.family} needs {self.dimension}D momenta, got trailing axis {k.shape[-1]}")
        return k

    def bloch(self, k):
        """(dR, dI) with shape (..., 3) for momenta of shape (..., d)."""
        k = self._check(k)
        shape = k.shape[:-1]
        dR = np.zeros(shape + (3,))
        dI = np.zeros(shape + (3,))
        if self.family in ("H1", "H2"):
            cx, cy = np.cos(k[..., 0]), np.cos(k[..., 1])
            if self.family == "H1":
                dR[..., 0] = 2.0 - cx - cy
                dI[..., 2] = 0.25
            else:
                dR[..., 0] = self.m + 1.0 - cx - cy
                dI[..., 1] = np.sin(k[..., 0])
                dI[..., 2] = np.sin(k[..., 1])
        elif self.family == "Knot":
            f = _knot_f(self, k)[2]
            eps = self.epsilon
            dR[..., 0] = f.real - eps
            dR[..., 1] = eps
            dI[..., 1] = f.imag
            dI[..., 2] = np.sqrt(2.0) * eps
        c = np.asarray(self.perturbation)
        return dR + c.real, dI + c.imag

    def grad(self, k):
        """Analytic (d dR/dk, d dI/dk), each of shape (..., 3, d)."""
        k = self._check(k)
        shape = k.shape[:-1]
        d = self.dimension
        JR = np.zeros(shape + (3, d))
        JI = np.zeros(shape + (3, d))
        if self.family in ("H1", "H2"):
            sx, sy = np.sin(k[..., 0]), np.sin(k[..., 1])
            JR[..., 0, 0] = sx
            JR[..., 0, 1] = sy
            if self.family == "H2":
                JI[..., 1, 0] = np.cos(k[..., 0])
                JI[..., 2, 1] = np.cos(k[..., 1])
        elif self.family == "Knot":
            dfdk = _knot_df(self, k)
            JR[..., 0, :] = dfdk.real
            JI[..., 1, :] = dfdk.imag
        return JR, JI

    # -- serialisation ----------------------------------------------------------
    def to_dict(self) -> dict:
        doc = {"family": self.family,
               "perturbation": [[c.real, c.imag] for c in self.perturbation]}
        if self.family == "H2":
            doc["m"] = self.m
        if self.family == "Knot":
            doc.update(p=self.p, q=self.q_exp, epsilon=self.epsilon, normalized=self.normalized)
        if self.family == "Const":
            doc["dimension"] = self.const_dimension
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        fam = doc.get("family")
        fam = {"h1": "H1", "h2": "H2", "knot": "Knot", "const": "Const"}.get(str(fam).lower(), fam)
        pert = doc.get("perturbation", [[0, 0]] * 3)
        pert = tuple(complex(*c) if isinstance(c, (list, tuple)) else complex(c) for c in pert)
        kw = dict(family=fam, perturbation=pert)
        if fam == "H2":
            kw["m"] = float(doc["m"])
        if fam == "Knot":
            kw.update(p=int(doc.get("p", 3)), q_exp=int(doc.get("q", 2)),
                      epsilon=float(doc.get("epsilon", -20.0)),
                      normalized=bool(doc.get("normalized", False)))
        if fam == "Const":
            kw["const_dimension"] = int(doc.get("dimension", 2))
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


# -- knot construction -----------------------------------------------------------

def _ipow(z, n):
    # integer power by repeated multiplication; no log branch involved
    out = np.ones_like(z)
    for _ in range(n):
        out = out * z
    return out


def _z_pair(k):
    sx, sy, sz = np.sin(k[..., 0]), np.sin(k[..., 1]), np.sin(k[..., 2])
    z0 = sx + 1j * sy
    z1 = 2.0 * (np.cos(k[..., 0]) + np.cos(k[..., 1]) + np.cos(k[..., 2])) - 5.0 + 1j * sz
    return z0, z1


def _knot_f(spec: ModelSpec, k):
    z0, z1 = _z_pair(k)
    if spec.normalized:
        n = np.sqrt(np.abs(z0) ** 2 + np.abs(z1) ** 2)
        z0, z1 = z0 / n, z1 / n
    return z0, z1, _ipow(z0, spec.p) + _ipow(z1, spec.q_exp)


def _knot_df(spec: ModelSpec, k):
    """d(f1 + i f2)/dk, shape (..., 3), complex."""
    z0, z1 = _z_pair(k)
    zero = np.zeros_like(k[..., 0])
    dz0 = np.stack([np.cos(k[..., 0]), 1j * np.cos(k[..., 1]), zero + 0j], axis=-1)
    dz1 = np.stack([-2.0 * np.sin(k[..., 0]) + 0j, -2.0 * np.sin(k[..., 1]) + 0j,
                    -2.0 * np.sin(k[..., 2]) + 1j * np.cos(k[..., 2])], axis=-1)
    if spec.normalized:
        n = np.sqrt(np.abs(z0) ** 2 + np.abs(z1) ** 2)
        dn = (np.real(np.conj(z0)[..., None] * dz0) + np.real(np.conj(z1)[..., None] * dz1)) / n[..., None]
        dz0 = dz0 / n[..., None] - (z0 / n**2)[..., None] * dn
        dz1 = dz1 / n[..., None] - (z1 / n**2)[..., None] * dn
        z0, z1 = z0 / n, z1 / n
    p, q = spec.p, spec.q_exp
    return (p * _ipow(z0, p - 1))[..., None] * dz0 + (q * _ipow(z1, q - 1))[..., None] * dz1


@dataclass(frozen=True)
class KnotIntermediates:
    z0: complex
    z1: complex
    f1: float
    f2: float


def knot_intermediates(spec: ModelSpec, k) -> KnotIntermediates:
    if spec.family != "Knot":
        raise WrongFamily(f"knot intermediates need the Knot family, got {spec.family}")
    k = spec._check(k)
    z0, z1, f = _knot_f(spec, k)
    return KnotIntermediates(complex(z0), complex(z1), float(f.real), float(f.imag))


def eval_bloch(spec: ModelSpec, k) -> BlochVector:
    dR, dI = spec.bloch(np.asarray(k, dtype=float))
    if dR.ndim != 1:
        raise DimensionMismatch("eval_bloch takes a single momentum")
    return BlochVector(tuple(dR), tuple(dI))


def grad_bloch(spec: ModelSpec, k):
    """Analytic Jacobians (3 x d each) of dR and dI at a single momentum."""
    JR, JI = spec.grad(np.asarray(k, dtype=float))
    return JR, JI


def grad_bloch_fd(spec: ModelSpec, k, h: float = 1e-6):
    """Central finite-difference Jacobians; fallback and cross-check for :func:`grad_bloch`."""
    k = np.asarray(k, dtype=float)
    d = k.shape[-1]
    JR = np.zeros(k.shape[:-1] + (3, d))
    JI = np.zeros_like(JR)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        rp, ip = spec.bloch(k + e)
        rm, im = spec.bloch(k - e)
        JR[..., :, i] = (rp - rm) / (2 * h)
        JI[..., :, i] = (ip - im) / (2 * h)
    return JR, JI


# -- closed-form loci for the symmetric 2D families ----------------------------------

@dataclass(frozen=True)
class EpLocus:
    """Zero set of ``equation`` is the exceptional line of a sigma_x-symmetric model.

    ``dx_ring`` is the critical value of the unperturbed ``d_x`` parameter
    (H1 only); ``tangency`` lists the momenta where the locus degenerates to
    isolated points (H2 at m = sqrt(6) - 1).
    """

    family: str
    equation: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    dx_ring: float | None = None
    tangency: tuple[tuple[float, float], ...] = ()


def analytic_ep_locus(spec: ModelSpec) -> EpLocus:
    if spec.family not in ("H1", "H2"):
        raise Unsupported("closed-form locus only exists for H1 and H2")
    if not spec.preserves_sigma_x_symmetry():
        raise Unsupported("perturbation breaks the sigma_x symmetry; no single-equation locus")
    cx, cy, cz = spec.perturbation

    if spec.family == "H1":
        # d_x^2 = (Im cy)^2 + (1/4 + Im cz)^2 with d_x = 2 - cos kx - cos ky + Re cx
        dI2 = cy.imag**2 + (0.25 + cz.imag) ** 2
        ring = float(np.sqrt(dI2)) - cx.real

        def g(k):
            k = np.asarray(k, dtype=float)
            dx = 2.0 - np.cos(k[..., 0]) - np.cos(k[..., 1]) + cx.real
            return dx**2 - dI2

        return EpLocus("H1", g, dx_ring=ring)

    m = spec.m

    def g(k):
        k = np.asarray(k, dtype=float)
        dx = m + 1.0 - np.cos(k[..., 0]) - np.cos(k[..., 1]) + cx.real
        return dx**2 - (np.sin(k[..., 0]) + cy.imag) ** 2 - (np.sin(k[..., 1]) + cz.imag) ** 2

    tangency = ()
    if cx == 0 and cy == 0 and cz == 0:
        # on the diagonals cos kx = cos ky = u the locus reads
        # 6u^2 - 4(m+1)u + (m+1)^2 - 2 = 0, a double root iff (m+1)^2 = 6
        a = m + 1.0
        disc = 16 * a * a - 24 * (a * a - 2)
        if abs(disc) < 1e-12:
            u = 4 * a / 12
            if abs(u) <= 1:
                t = float(np.arccos(u))
                tangency = tuple((sx * t, sy * t) for sx in (1, -1) for sy in (1, -1))
    return EpLocus("H2", g, tangency=tangency)
