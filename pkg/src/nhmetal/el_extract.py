"""Locating exceptional points and lines.

The residual throughout is F(k) = (Re E^2, Im E^2) with E^2 the Bloch-vector
discriminant; a point is accepted as exceptional when |F| <= tol * s with
s = max(1, |dR|^2 + |dI|^2).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .bloch_core import GridSpec, canonicalize, discriminant_field
from .errors import BudgetExceeded, NoConvergence, TangentDegenerate
from .models import ModelSpec, grad_bloch_fd

CORRECTOR_TOL = 1e-10
CLOSURE_TOL = 1e-6
H_MIN, H_MAX = 1e-3, 5e-2
TURN_TARGET = np.deg2rad(5.0)
TWO_PI = 2 * np.pi


# -- residual and Jacobian -----------------------------------------------------------

def residual(spec: ModelSpec, k):
    """F with shape (..., 2) and the scale s = max(1, |d|^2) with shape (...)."""
    dR, dI = spec.bloch(k)
    e2 = discriminant_field(dR, dI)
    s = np.maximum(1.0, np.einsum("...i,...i->...", dR, dR) + np.einsum("...i,...i->...", dI, dI))
    return np.stack([e2.real, e2.imag], axis=-1), s


def residual_jacobian(spec: ModelSpec, k, jacobian: str = "analytic"):
    """F, s and dF/dk with shape (..., 2, d)."""
    dR, dI = spec.bloch(k)
    JR, JI = spec.grad(k) if jacobian == "analytic" else grad_bloch_fd(spec, k)
    e2 = discriminant_field(dR, dI)
    s = np.maximum(1.0, np.einsum("...i,...i->...", dR, dR) + np.einsum("...i,...i->...", dI, dI))
    g_re = 2.0 * (np.einsum("...i,...ij->...j", dR, JR) - np.einsum("...i,...ij->...j", dI, JI))
    g_im = 2.0 * (np.einsum("...i,...ij->...j", dI, JR) + np.einsum("...i,...ij->...j", dR, JI))
    F = np.stack([e2.real, e2.imag], axis=-1)
    return F, s, np.stack([g_re, g_im], axis=-2)


def newton_batch(spec: ModelSpec, k0, tol: float = CORRECTOR_TOL, max_iter: int = 50,
                 jacobian: str = "analytic"):
    """Damped Gauss-Newton on F for many starting points at once.

    Steps are minimum-norm (pseudo-inverse), which covers both the square 2D
    case and the underdetermined 3D case and degrades gracefully when one
    residual row vanishes identically. A step is halved until |F| decreases.

    Returns ``(k, converged, iterations)``.
    """
    k = np.array(k0, dtype=float, copy=True)
    single = k.ndim == 1
    if single:
        k = k[None]
    n = len(k)
    iters = np.zeros(n, dtype=int)
    F, s = residual(spec, k)
    norm = np.linalg.norm(F, axis=-1) / s
    done = norm <= tol
    stalled = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        act = ~done & ~stalled
        if not act.any():
            break
        ka = k[act]
        Fa, sa, J = residual_jacobian(spec, ka, jacobian)
        step = -np.einsum("...ij,...j->...i", np.linalg.pinv(J, rcond=1e-13), Fa)
        base = np.linalg.norm(Fa, axis=-1) / sa
        alpha = np.ones(len(ka))
        accepted = np.zeros(len(ka), dtype=bool)
        trial = ka.copy()
        for _ in range(30):
            pend = ~accepted
            if not pend.any():
                break
            cand = ka[pend] + alpha[pend, None] * step[pend]
            Fc, sc = residual(spec, cand)
            nc = np.linalg.norm(Fc, axis=-1) / sc
            ok = nc < base[pend]
            idx = np.flatnonzero(pend)
            trial[idx[ok]] = cand[ok]
            accepted[idx[ok]] = True
            alpha[idx[~ok]] *= 0.5
        idx = np.flatnonzero(act)
        k[idx[accepted]] = trial[accepted]
        iters[idx] += 1
        stalled[idx[~accepted]] = True
        F, s = residual(spec, k[idx])
        done[idx] = np.linalg.norm(F, axis=-1) / s <= tol
    if single:
        return k[0], bool(done[0]), int(iters[0])
    return k, done, iters


def refine_newton(spec: ModelSpec, k0, tol: float = CORRECTOR_TOL, max_iter: int = 50,
                  jacobian: str = "analytic") -> np.ndarray:
    """Project ``k0`` onto the exceptional set; raises NoConvergence otherwise."""
    k, ok, _ = newton_batch(spec, np.asarray(k0, dtype=float), tol, max_iter, jacobian)
    if not ok:
        raise NoConvergence(f"Gauss-Newton did not reach |F| <= {tol:g}*s from {np.asarray(k0)}")
    return k


def _vanishing_d(spec: ModelSpec, k, radius: float, tol: float = 1e-9):
    """Gauss-Newton on d(k) = 0; returns the zero if one lies within ``radius`` of k."""
    x = np.array(k, dtype=float)
    for _ in range(40):
        dR, dI = spec.bloch(x)
        g = np.concatenate([dR, dI])
        if np.linalg.norm(g) <= tol:
            return x if np.linalg.norm(x - k) <= radius else None
        JR, JI = spec.grad(x)
        J = np.concatenate([JR, JI])
        x = x - np.linalg.pinv(J) @ g
        if np.linalg.norm(x - k) > radius:
            return None
    return None


# -- result types ------------------------------------------------------------------------

@dataclass
class PolyCurve:
    points: np.ndarray
    closed: bool
    winding: tuple[int, ...]
    residual_max: float = float("nan")

    def __len__(self):
        return len(self.points)

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "closed": self.closed,
                "winding": list(self.winding), "residualMax": self.residual_max}

    @classmethod
    def from_dict(cls, doc: dict) -> "PolyCurve":
        return cls(np.asarray(doc["points"], dtype=float), bool(doc["closed"]),
                   tuple(int(w) for w in doc["winding"]), float(doc.get("residualMax", "nan")))


@dataclass
class ELSet:
    curves: list[PolyCurve] = field(default_factory=list)
    isolated_points: list[np.ndarray] = field(default_factory=list)
    degeneracy_points: list[np.ndarray] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not (self.curves or self.isolated_points or self.degeneracy_points)

    def to_dict(self) -> dict:
        return {"kind": "ELSet",
                "curves": [c.to_dict() for c in self.curves],
                "isolatedPoints": [np.asarray(p).tolist() for p in self.isolated_points],
                "degeneracyPoints": [np.asarray(p).tolist() for p in self.degeneracy_points]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "ELSet":
        return cls([PolyCurve.from_dict(c) for c in doc.get("curves", [])],
                   [np.asarray(p, dtype=float) for p in doc.get("isolatedPoints", [])],
                   [np.asarray(p, dtype=float) for p in doc.get("degeneracyPoints", [])])

    @classmethod
    def from_json(cls, text: str) -> "ELSet":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        """One row per point: kind, index, point index, coordinates."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        dim = self._dim()
        w.writerow(["kind", "id", "seq"] + [f"k{i + 1}" for i in range(dim)])
        for ci, c in enumerate(self.curves):
            for j, p in enumerate(c.points):
                w.writerow(["curve", ci, j] + [repr(float(x)) for x in p])
        for kind, pts in (("isolated", self.isolated_points), ("degeneracy", self.degeneracy_points)):
            for j, p in enumerate(pts):
                w.writerow([kind, j, 0] + [repr(float(x)) for x in p])
        return buf.getvalue()

    def _dim(self) -> int:
        for c in self.curves:
            return c.points.shape[1]
        for p in self.isolated_points + self.degeneracy_points:
            return len(p)
        return 2


# -- marching squares ---------------------------------------------------------------

def contour2d(lattice, iso: float = 0.0, axes=None) -> list[PolyCurve]:
    """Iso-contours of a 2D lattice by marching squares.

    Crossings are placed by linear interpolation along cell edges. Segments
    are oriented so the region ``lattice < iso`` lies on the left, i.e.
    counterclockwise around negative regions when axis 0 is x and axis 1 is
    y. Ambiguous (saddle) cells are resolved by the sign of the cell-centre
    value of the bilinear interpolant. Contours that collapse to fewer than
    three distinct points are dropped.
    """
    F = np.asarray(lattice, dtype=float) - iso
    if F.ndim != 2:
        raise ValueError("contour2d needs a 2D lattice")
    nx, ny = F.shape
    if axes is None:
        axes = (np.arange(nx, dtype=float), np.arange(ny, dtype=float))
    ax, ay = (np.asarray(a, dtype=float) for a in axes)
    neg = F < 0

    def edge_point(key):
        kind, i, j = key
        if kind == 0:  # horizontal edge (i,j)-(i+1,j)
            a, b = F[i, j], F[i + 1, j]
            t = a / (a - b)
            return np.array([ax[i] + t * (ax[i + 1] - ax[i]), ay[j]])
        a, b = F[i, j], F[i, j + 1]
        t = a / (a - b)
        return np.array([ax[i], ay[j] + t * (ay[j + 1] - ay[j])])

    # only cells with mixed corner signs matter
    n00, n10, n11, n01 = neg[:-1, :-1], neg[1:, :-1], neg[1:, 1:], neg[:-1, 1:]
    mixed = ~((n00 == n10) & (n10 == n11) & (n11 == n01))
    nxt: dict = {}
    for i, j in zip(*np.nonzero(mixed)):
        # corners and edges in counterclockwise order
        corners = (neg[i, j], neg[i + 1, j], neg[i + 1, j + 1], neg[i, j + 1])
        edges = ((0, i, j), (1, i + 1, j), (0, i, j + 1), (1, i, j))
        leave, enter = [], []
        for e in range(4):
            a, b = corners[e], corners[(e + 1) % 4]
            if a and not b:
                leave.append(e)
            elif b and not a:
                enter.append(e)
        if len(leave) == 1:
            pairs = [(leave[0], enter[0])]
        else:
            centre = F[i, j] + F[i + 1, j] + F[i + 1, j + 1] + F[i, j + 1]
            pairs = []
            for lv in leave:
                # negative centre joins the negative corners through the middle:
                # pair each exit with the next entry counterclockwise, else the previous one
                order = [(lv + s) % 4 for s in (range(1, 4) if centre < 0 else range(-1, -4, -1))]
                pairs.append((lv, next(e for e in order if e in enter)))
        for lv, en in pairs:
            nxt[edges[lv]] = edges[en]

    curves = []
    starts = set(nxt) - set(nxt.values())
    seen = set()

    def walk(start):
        keys = [start]
        seen.add(start)
        cur = start
        while cur in nxt:
            cur = nxt[cur]
            if cur == start:
                keys.append(cur)
                return keys, True
            if cur in seen:
                break
            seen.add(cur)
            keys.append(cur)
        return keys, False

    for s in sorted(starts):
        keys, closed = walk(s)
        curves.append((keys, closed))
    for s in sorted(nxt):
        if s not in seen:
            keys, closed = walk(s)
            curves.append((keys, closed))

    out = []
    for keys, closed in curves:
        pts = np.array([edge_point(k) for k in keys])
        if len(np.unique(np.round(pts, 12), axis=0)) < 3:
            continue
        out.append(PolyCurve(pts, closed, (0, 0)))
    return out


# -- 2D extraction ----------------------------------------------------------------------

def _sign_change(a, axes_count):
    """Per cell: does ``a`` take both signs (< 0 and >= 0) on the cell corners?"""
    neg = a < 0
    corners = _cell_corners(neg, axes_count)
    return np.logical_or.reduce(corners) & ~np.logical_and.reduce(corners)


def _cell_corners(a, axes_count):
    sl = []
    for offs in np.ndindex(*(2,) * axes_count):
        sl.append(a[tuple(slice(o, a.shape[i] - 1 + o) for i, o in enumerate(offs))])
    return sl


def _dedupe(points, merge_tol):
    kept: list[np.ndarray] = []
    for p in points:
        if all(_torus_dist(p, q) > merge_tol for q in kept):
            kept.append(p)
    return kept


def _torus_dist(a, b):
    diff = np.asarray(a) - np.asarray(b)
    return np.linalg.norm(diff - TWO_PI * np.round(diff / TWO_PI), axis=-1)


def _split_degenerate(spec, roots, radius):
    regular, degenerate = [], []
    for r in roots:
        dR, dI = spec.bloch(r)
        if float(dR @ dR + dI @ dI) < 1e-4:
            z = _vanishing_d(spec, r, radius)
            if z is not None:
                degenerate.append(z)
                continue
        regular.append(r)
    return regular, degenerate


def _squeezed(spec: ModelSpec, grid: GridSpec):
    """Momenta of the sampled 2D section plus its axes."""
    K = grid.mesh()
    keep = [i for i, n in enumerate(grid.shape) if n > 1]
    if len(keep) != 2:
        raise ValueError("2D extraction needs exactly two sampled axes")
    K = K.reshape(tuple(grid.shape[i] for i in keep) + (grid.dimension,))
    axes = [grid.axes()[i] for i in keep]
    return K, axes, keep


def find_eps_2d(spec: ModelSpec, grid: GridSpec, tol: float = CORRECTOR_TOL,
                merge_tol: float | None = None) -> ELSet:
    """Exceptional points on a 2D grid (or a fixed 2D section of a 3D model).

    Seeds are the cells where Re E^2 changes sign and Im E^2 either changes
    sign or vanishes on all corners, plus grid local minima of |F|/s (which
    catch tangential zeros that produce no sign change). Every seed is
    refined with :func:`newton_batch`; unconverged seeds are discarded, so an
    empty result is a valid outcome. Roots where d itself vanishes are
    reported as ``degeneracy_points``.

    In a 3D section the Newton step moves only within the section plane.
    """
    K, axes, keep = _squeezed(spec, grid)
    F, s = residual(spec, K)
    re, im = F[..., 0] / s, F[..., 1] / s
    spacing = min(abs(a[1] - a[0]) for a in axes)
    if merge_tol is None:
        merge_tol = 0.25 * spacing

    im_flat = np.logical_and.reduce([np.abs(c) <= tol for c in _cell_corners(im, 2)])
    cells = _sign_change(re, 2) & (_sign_change(im, 2) | im_flat)
    centres = 0.25 * sum(_cell_corners(K, 2))
    seeds = [centres[cells]]

    norm = np.hypot(re, im)
    local_min = norm == ndimage.minimum_filter(norm, size=3, mode="nearest")
    seeds.append(K[local_min])
    seeds = np.concatenate(seeds) if seeds else np.zeros((0, grid.dimension))
    if len(seeds) == 0:
        return ELSet()

    section = _SectionModel(spec, keep, seeds) if grid.dimension == 3 else None
    if section is not None:
        sol, ok, _ = newton_batch(section, seeds[:, keep], tol)
        roots = section.lift(sol[ok])
    else:
        sol, ok, _ = newton_batch(spec, seeds, tol)
        roots = sol[ok]
    roots = [_canon_axes(r, keep) for r in roots]
    roots = _dedupe(sorted(roots, key=lambda r: tuple(np.round(r, 9))), merge_tol)
    regular, degenerate = _split_degenerate(spec, roots, 2 * spacing)
    return ELSet([], regular, _dedupe(degenerate, merge_tol))


def gap_lower_bound(spec: ModelSpec, grid: GridSpec, floor: float, max_depth: int = 10,
                    lipschitz_margin: float = 1.1):
    """Lower bound on min_k max(|Re E^2|, |Im E^2|) over a 2D Brillouin zone.

    Each grid cell is bounded by f(centre) - L r with r the half diagonal and
    L the largest gradient norm of Re E^2 or Im E^2 sampled on the grid,
    inflated by ``lipschitz_margin``. Cells whose bound falls below ``floor``
    while their centre value does not are split into four and re-bounded, up
    to ``max_depth`` times.

    Returns ``(bound, grid_min)``; ``grid_min`` is the smallest sampled value
    and so an upper bound on the true minimum.
    """
    if spec.dimension != 2 or len(grid.shape) != 2:
        raise ValueError("gap_lower_bound works on 2D models")
    K = grid.mesh()
    F, _, J = residual_jacobian(spec, K)
    L = lipschitz_margin * np.linalg.norm(J, axis=-1).max()
    grid_min = float(np.abs(F).max(axis=-1).min())
    axes = grid.axes()
    hx, hy = (abs(a[1] - a[0]) / 2 for a in axes)
    cx, cy = (0.5 * (a[1:] + a[:-1]) for a in axes)
    centres = np.stack(np.meshgrid(cx, cy, indexing="ij"), axis=-1).reshape(-1, 2)
    bound = np.inf
    for _ in range(max_depth + 1):
        f = np.abs(residual(spec, centres)[0]).max(axis=-1)
        low = f - L * np.hypot(hx, hy)
        # a centre already below the floor settles the question; only split undecided cells
        bad = (low < floor) & (f >= floor)
        if not bad.any():
            break
        bound = min(bound, float(low[~bad].min(initial=np.inf)))
        hx, hy = hx / 2, hy / 2
        c = centres[bad]
        centres = np.concatenate([c + [sx * hx, sy * hy] for sx in (-1, 1) for sy in (-1, 1)])
    return min(bound, float(low.min())), grid_min


def _canon_axes(r, keep):
    r = np.array(r, dtype=float)
    r[keep] = canonicalize(r[keep])
    return r


class _SectionModel:
    """View of a 3D model restricted to the plane of two sampled axes."""

    def __init__(self, spec: ModelSpec, keep, seeds):
        self.spec = spec
        self.keep = list(keep)
        self.fixed = np.array(seeds[0], dtype=float)
        self.dimension = 2

    def _full(self, k):
        k = np.asarray(k, dtype=float)
        full = np.broadcast_to(self.fixed, k.shape[:-1] + (3,)).copy()
        full[..., self.keep] = k
        return full

    def bloch(self, k):
        return self.spec.bloch(self._full(k))

    def grad(self, k):
        JR, JI = self.spec.grad(self._full(k))
        return JR[..., self.keep], JI[..., self.keep]

    def lift(self, k):
        return list(self._full(k))


def extract_el_2d(spec: ModelSpec, grid: GridSpec, tol: float = CORRECTOR_TOL) -> ELSet:
    """Full 2D exceptional set.

    When Im E^2 vanishes identically on the grid (sigma_x-symmetric models)
    the exceptional lines are the zero contours of Re E^2; every contour
    vertex is then projected onto the exact locus with Gauss-Newton. Isolated
    points from :func:`find_eps_2d` that do not lie on a curve are kept.
    """
    K, axes, keep = _squeezed(spec, grid)
    F, s = residual(spec, K)
    spacing = min(abs(a[1] - a[0]) for a in axes)
    generic = find_eps_2d(spec, grid, tol)
    curves: list[PolyCurve] = []
    if np.all(np.abs(F[..., 1]) <= tol * s):
        for c in contour2d(F[..., 0] / s, 0.0, axes):
            full = np.broadcast_to(K.reshape(-1, grid.dimension)[0], (len(c.points), grid.dimension)).copy()
            full[:, keep] = c.points
            if grid.dimension == 3:
                model = _SectionModel(spec, keep, full)
                pts, ok, _ = newton_batch(model, c.points, tol)
                full[:, keep] = pts
            else:
                full, ok, _ = newton_batch(spec, full, tol)
            if not ok.all():
                raise NoConvergence("contour vertex failed to project onto the exceptional line")
            Fc, sc = residual(spec, full)
            curves.append(PolyCurve(full, c.closed, (0,) * grid.dimension,
                                    float((np.linalg.norm(Fc, axis=-1) / sc).max())))
    isolated = [p for p in generic.isolated_points
                if not any(_torus_dist(c.points, p).min() <= 2 * spacing for c in curves)]
    return ELSet(curves, isolated, generic.degeneracy_points)


# -- 3D seed search and continuation ------------------------------------------------------

def seed_search_3d(spec: ModelSpec, grid: GridSpec, tol: float = CORRECTOR_TOL,
                   merge_tol: float | None = None) -> list[np.ndarray]:
    """One refined seed per connected cluster of cells where both Re E^2 and Im E^2 change sign."""
    if grid.dimension != 3 or min(grid.shape) < 2:
        raise ValueError("seed_search_3d needs a full 3D grid")
    K = grid.mesh()
    F, s = residual(spec, K)
    cells = _sign_change(F[..., 0], 3) & _sign_change(F[..., 1], 3)
    if not cells.any():
        return []
    labels, count = ndimage.label(cells, structure=np.ones((3, 3, 3)))
    centres = 0.125 * sum(_cell_corners(K, 3))
    spacing = float(grid.spacing().min())
    if merge_tol is None:
        merge_tol = 0.5 * spacing
    seeds = []
    for lab in range(1, count + 1):
        cand = centres[labels == lab]
        Fc, sc = residual(spec, cand)
        order = np.argsort(np.linalg.norm(Fc, axis=-1) / sc)[:8]
        sol, ok, _ = newton_batch(spec, cand[order], tol)
        if ok.any():
            seeds.append(canonicalize(sol[np.flatnonzero(ok)[0]]))
    seeds.sort(key=lambda p: tuple(np.round(p, 9)))
    return _dedupe(seeds, merge_tol)


def el_tangent(spec: ModelSpec, k, jacobian: str = "analytic"):
    """Unit tangent grad Re E^2 x grad Im E^2 and the sine of the angle between the gradients."""
    _, _, J = residual_jacobian(spec, np.asarray(k, dtype=float), jacobian)
    t = np.cross(J[0], J[1])
    n = np.linalg.norm(t)
    denom = np.linalg.norm(J[0]) * np.linalg.norm(J[1])
    sin = n / denom if denom > 0 else 0.0
    return (t / n if n > 0 else t), sin


def trace_el_3d(spec: ModelSpec, seed, h_min: float = H_MIN, h_max: float = H_MAX,
                turn_target: float = TURN_TARGET, tol: float = CORRECTOR_TOL,
                closure_tol: float = CLOSURE_TOL, max_points: int = 20000,
                degenerate_sin: float = 1e-8) -> PolyCurve:
    """Follow one exceptional line from ``seed`` until it closes.

    Predictor: a step of length h along the unit tangent. Corrector:
    Gauss-Newton back onto F = 0. The step adapts to keep the tangent turning
    angle near ``turn_target`` within [h_min, h_max]. Coordinates are kept
    unwrapped; closure is declared when the curve returns to the seed modulo
    2 pi with a consistent tangent, and the winding vector records the net
    lattice translation.
    """
    start = refine_newton(spec, seed, tol)
    t0, sin = el_tangent(spec, start)
    if sin < degenerate_sin:
        raise TangentDegenerate(f"gradients of Re E^2 and Im E^2 are parallel at {start}")
    pts = [start]
    k, t = start, t0
    h = 0.5 * (h_min + h_max)
    arc = 0.0
    while True:
        if len(pts) > max_points:
            raise BudgetExceeded(f"exceptional line did not close within {max_points} points")
        k_new, ok, _ = newton_batch(spec, k + h * t, tol, max_iter=15)
        if ok:
            t_new, sin = el_tangent(spec, k_new)
            if sin < degenerate_sin:
                raise TangentDegenerate(f"gradients of Re E^2 and Im E^2 are parallel at {k_new}")
            if t_new @ t < 0:
                t_new = -t_new
            angle = float(np.arccos(np.clip(t_new @ t, -1.0, 1.0)))
            dist = float(np.linalg.norm(k_new - k))
            ok = angle <= 2 * turn_target and dist <= 1.5 * h
        if not ok:
            if h <= h_min:
                raise TangentDegenerate(f"continuation stalled at {k} with the minimum step")
            h = max(h_min, 0.5 * h)
            continue
        pts.append(k_new)
        arc += dist
        k, t = k_new, t_new
        h = float(np.clip(h * np.clip(turn_target / max(angle, 1e-6), 0.5, 2.0), h_min, h_max))

        diff = k - start
        wind = np.round(diff / TWO_PI)
        gap = np.linalg.norm(diff - TWO_PI * wind)
        if arc > 4 * h_max and gap <= 1.5 * h and t @ t0 > 0:
            end = start + TWO_PI * wind
            if gap <= closure_tol:
                pts[-1] = end
            else:
                pts.append(end)
            break
    P = np.array(pts)
    Fc, sc = residual(spec, P)
    return PolyCurve(P, True, tuple(int(w) for w in wind), float((np.linalg.norm(Fc, axis=-1) / sc).max()))


def point_to_curve_distance(curve: PolyCurve, p) -> float:
    """Torus distance from ``p`` to the nearest vertex of ``curve``."""
    return float(_torus_dist(curve.points, p).min())


def extract_el_3d(spec: ModelSpec, grid: GridSpec, tol: float = CORRECTOR_TOL,
                  h_min: float = H_MIN, h_max: float = H_MAX, **trace_kw) -> ELSet:
    """Seed search followed by continuation, one curve per distinct component."""
    curves: list[PolyCurve] = []
    for seed in seed_search_3d(spec, grid, tol):
        if any(point_to_curve_distance(c, seed) <= 2 * h_max for c in curves):
            continue
        curves.append(trace_el_3d(spec, seed, h_min=h_min, h_max=h_max, tol=tol, **trace_kw))
    return ELSet(curves)


def extract_el(spec: ModelSpec, grid: GridSpec, tol: float = CORRECTOR_TOL, **kw) -> ELSet:
    if grid.dimension == 3 and min(grid.shape) > 1:
        return extract_el_3d(spec, grid, tol, **kw)
    return extract_el_2d(spec, grid, tol)


# -- Fermi sets ----------------------------------------------------------------------------

GAPPED, FERMI, BOUNDARY = 0, 1, 2
LABEL_NAMES = {GAPPED: "GAPPED", FERMI: "FERMI", BOUNDARY: "BOUNDARY"}


@dataclass
class FermiClassification:
    grid: GridSpec
    labels: np.ndarray
    definition: str

    def count(self, label: int) -> int:
        return int((self.labels == label).sum())

    def cell_centres(self, label: int) -> np.ndarray:
        K = self.grid.mesh()
        sampled = [i for i, n in enumerate(self.grid.shape) if n > 1]
        K = K.reshape(tuple(self.grid.shape[i] for i in sampled) + (self.grid.dimension,))
        centres = sum(_cell_corners(K, len(sampled))) / 2 ** len(sampled)
        return centres[self.labels == label]

    def to_dict(self) -> dict:
        return {"kind": "FermiClassification", "grid": self.grid.to_dict(),
                "definition": self.definition, "cellShape": list(self.labels.shape),
                "labels": [LABEL_NAMES[int(x)] for x in self.labels.ravel()]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        dim = self.labels.ndim
        w.writerow([f"i{j + 1}" for j in range(dim)] + ["label"])
        for idx in np.ndindex(*self.labels.shape):
            w.writerow(list(idx) + [LABEL_NAMES[int(self.labels[idx])]])
        return buf.getvalue()


def fermi_classify(spec: ModelSpec, grid: GridSpec, tol: float = CORRECTOR_TOL) -> FermiClassification:
    """Label grid cells FERMI (purely imaginary spectrum), BOUNDARY or GAPPED.

    A cell lies on the Im E^2 = 0 set if Im E^2 vanishes on every corner
    (within tol * s) or changes sign across the cell. Such a cell is FERMI
    when Re E^2 < -tol * s on every corner and BOUNDARY when Re E^2 changes
    sign; all other cells are GAPPED. For symmetric 2D models this makes
    FERMI the interior of the exceptional lines; in 3D the Im E^2 = 0 set is
    a surface and BOUNDARY cells track the exceptional line that bounds it.
    """
    sampled = [i for i, n in enumerate(grid.shape) if n > 1]
    K = grid.mesh().reshape(tuple(grid.shape[i] for i in sampled) + (grid.dimension,))
    F, s = residual(spec, K)
    re, im = F[..., 0] / s, F[..., 1] / s
    nd = len(sampled)
    im_flat = np.logical_and.reduce([np.abs(c) <= tol for c in _cell_corners(im, nd)])
    on_im = im_flat | _sign_change(im, nd)
    re_neg = np.logical_and.reduce([c < -tol for c in _cell_corners(re, nd)])
    labels = np.full(on_im.shape, GAPPED, dtype=np.int8)
    labels[on_im & re_neg] = FERMI
    labels[on_im & _sign_change(re, nd)] = BOUNDARY
    definition = "FERMI_SEIFERT_3D" if nd == 3 else "FERMI_VOLUME_2D"
    return FermiClassification(grid, labels, definition)
