"""Simulated single-photon interferometric measurement of complex band energies.

Pipeline per momentum and band: passivity shift H' = H + d0 (so that
exp(-iH') has no gain), gate decomposition of exp(-iH') into two rotations
and a polarisation-dependent loss, eigenstate preparation, the four
projective count rates in one output arm, Poisson sampling, and inversion of
the counts back to E' and E = E' - d0.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bloch_core import DEFAULT_CONDITION_CAP, GridSpec, SIGMA_0, hamiltonian, spectrum
from .errors import DegenerateCounts, NearEP, NHMetalError, NotPassive, Overflow, ZeroDenominator
from .models import ModelSpec

PASSIVE_SLACK = 1e-9
T_PRIME, R_PRIME = "T_PRIME", "R_PRIME"
GLOBAL, PER_K = "global", "per-k"


# -- matrix exponential in the log domain -------------------------------------------------

def _antihermitian_bound(h):
    # largest eigenvalue of (h - h^dagger)/(2i); bounds log ||exp(-i h)||
    B = (h - np.conj(np.swapaxes(h, -1, -2))) / 2j
    return np.linalg.eigvalsh(B)[..., -1]


def expm_scaled(h, mu):
    """exp(-i h) * exp(-mu) for 2x2 matrices h with shape (..., 2, 2).

    Closed form exp(-i(a + d.sigma)) = exp(-ia) (cos E - i sin(E)/E d.sigma),
    E^2 = d.d, with every exponential evaluated after the shift by mu so no
    intermediate overflows when mu bounds the growth rate.
    """
    h = np.asarray(h, dtype=complex)
    mu = np.asarray(mu, dtype=float)
    a = 0.5 * (h[..., 0, 0] + h[..., 1, 1])
    h0 = h - a[..., None, None] * SIGMA_0
    e2 = -(h0[..., 0, 0] * h0[..., 1, 1] - h0[..., 0, 1] * h0[..., 1, 0])
    e = np.sqrt(e2 + 0j)
    c = -1j * a - mu
    ep, em = np.exp(c + 1j * e), np.exp(c - 1j * e)
    cos = 0.5 * (ep + em)
    small = np.abs(e) < 1e-6
    safe_e = np.where(small, 1.0, e)
    sinc = np.where(small, np.exp(c) * (1 - e2 / 6 + e2 * e2 / 120), (ep - em) / (2j * safe_e))
    return cos[..., None, None] * SIGMA_0 - 1j * sinc[..., None, None] * h0


def log_lambda(h):
    """log of the largest eigenvalue of exp(-iH) exp(-iH)^dagger, i.e. 2 log sigma_max."""
    h = np.asarray(h, dtype=complex)
    mu = _antihermitian_bound(h)
    U = expm_scaled(h, mu)
    smax = np.linalg.svd(U, compute_uv=False)[..., 0]
    return 2.0 * (np.log(smax) + mu)


def log_lambda_unconditioned(h):
    """Same quantity without the log-domain shift; overflows for strong gain."""
    with np.errstate(over="ignore", invalid="ignore"):
        U = expm_scaled(h, 0.0)
    if not np.all(np.isfinite(U)):
        raise Overflow("exp(-iH) overflowed; use the log-domain path")
    smax = np.linalg.svd(U, compute_uv=False)[..., 0]
    with np.errstate(divide="ignore"):
        return 2.0 * np.log(smax)


# -- passivity shift -----------------------------------------------------------------------

@dataclass(frozen=True)
class ShiftedHamiltonian:
    h: np.ndarray
    h_prime: np.ndarray
    d0: complex
    log_lambda: float
    mode: str

    @property
    def lambda_cap(self) -> float:
        return float(np.exp(self.log_lambda))

    def evolution(self) -> np.ndarray:
        """exp(-i H'), evaluated through the log-domain path."""
        mu = float(_antihermitian_bound(self.h))
        return expm_scaled(self.h, mu) * np.exp(mu - 0.5 * self.log_lambda)


def global_log_lambda(spec: ModelSpec, grid: GridSpec, extra_momenta=None) -> float:
    """max_k log Lambda_k over the grid (and any extra momenta)."""
    K = grid.mesh().reshape(-1, grid.dimension)
    if extra_momenta is not None and len(extra_momenta):
        K = np.vstack([K, np.asarray(extra_momenta, dtype=float).reshape(-1, grid.dimension)])
    dR, dI = spec.bloch(K)
    return float(log_lambda(hamiltonian(dR + 1j * dI)).max())


def passivity_shift(spec: ModelSpec, k, mode: str = PER_K, global_log: float | None = None,
                    grid: GridSpec | None = None) -> ShiftedHamiltonian:
    """Shift H(k) by d0 = i ln sqrt(1/Lambda) so that exp(-iH') is passive.

    ``mode`` is ``"per-k"`` (Lambda from this momentum alone) or ``"global"``
    (Lambda maximised over ``grid``; pass ``global_log`` to reuse a value).
    """
    k = np.asarray(k, dtype=float)
    dR, dI = spec.bloch(k)
    h = hamiltonian(dR + 1j * dI)
    if mode == PER_K:
        ll = float(log_lambda(h))
    elif mode == GLOBAL:
        if global_log is None:
            if grid is None:
                raise ValueError("global shift needs a covering grid or a precomputed log Lambda")
            global_log = global_log_lambda(spec, grid, k[None])
        ll = max(float(global_log), float(log_lambda(h)))
    else:
        raise ValueError(f"unknown shift mode {mode!r}")
    d0 = -0.5j * ll
    return ShiftedHamiltonian(h, h + d0 * SIGMA_0, complex(d0), ll, mode)


# -- gate decomposition ------------------------------------------------------------------

SWAP = np.array([[0, 1], [1, 0]], dtype=complex)


def loss_operator(l: float) -> np.ndarray:
    """L = |V><H| + l |H><V| in the (H, V) basis."""
    return np.array([[0, l], [1, 0]], dtype=complex)


@dataclass(frozen=True)
class GateDecomposition:
    r1: np.ndarray
    r2: np.ndarray
    l: float
    global_attenuation: float

    def reconstruct(self) -> np.ndarray:
        return self.global_attenuation * self.r2 @ loss_operator(self.l) @ self.r1


def decompose(u_prime) -> GateDecomposition:
    """U' = s1 * R2 L(l) R1 from the singular value decomposition U' = W diag(s1, s2) X^dagger."""
    u = np.asarray(u_prime, dtype=complex)
    W, sv, Xh = np.linalg.svd(u)
    s1, s2 = float(sv[0]), float(sv[1])
    if s1 > 1 + PASSIVE_SLACK:
        raise NotPassive(f"largest singular value {s1:.12g} exceeds 1")
    l = s2 / s1 if s1 > 0 else 0.0
    return GateDecomposition(r1=Xh, r2=W @ SWAP, l=l, global_attenuation=s1)


# -- state preparation and detection --------------------------------------------------------

def prepare_eigenstate(sh: ShiftedHamiltonian, band: str, condition_cap: float = DEFAULT_CONDITION_CAP,
                       strict: bool = True):
    """Unit right eigenvector (alpha, beta) of H' for band '+' or '-'.

    The phase is fixed so the first non-negligible component is real and
    positive. Raises NearEP when the eigenvector condition number exceeds
    ``condition_cap`` and ``strict`` is set.
    """
    # H and H' share eigenvectors; the unshifted matrix avoids rounding from d0
    sp = spectrum(sh.h, condition_cap)
    if strict and sp.defective:
        raise NearEP(f"eigenvector condition number {sp.eigenvectorConditionNumber:.3g} exceeds cap")
    psi = np.array(sp.psiPlus if band == "+" else sp.psiMinus, dtype=complex)
    lead = psi[0] if abs(psi[0]) > 1e-12 else psi[1]
    psi = psi * (abs(lead) / lead)
    return psi


@dataclass(frozen=True)
class Probabilities:
    """Per-basis detection probabilities (H, V, +, R) in one arm, excluding the arm weight."""

    pH: float
    pV: float
    pPlus: float
    pR: float
    arm: str
    arm_weight: float

    def as_tuple(self):
        return (self.pH, self.pV, self.pPlus, self.pR)


def ideal_probabilities(psi, z, arm: str = T_PRIME) -> Probabilities:
    """Projective probabilities for interferometer output amplitude ``z = exp(-i E')``.

    T' arm state (|H> + z|V>)/sqrt2 weighted by |alpha|^2; R' arm state
    (z|H> + |V>)/sqrt2 weighted by |beta|^2. Projections use
    |+> = (|H> + |V>)/sqrt2 and |R> = (|H> - i|V>)/sqrt2.
    """
    alpha, beta = complex(psi[0]), complex(psi[1])
    z = complex(z)
    if arm == T_PRIME:
        amp = np.array([1, z]) / np.sqrt(2)
        w = abs(alpha) ** 2
    elif arm == R_PRIME:
        amp = np.array([z, 1]) / np.sqrt(2)
        w = abs(beta) ** 2
    else:
        raise ValueError(f"unknown arm {arm!r}")
    pH = abs(amp[0]) ** 2
    pV = abs(amp[1]) ** 2
    pPlus = abs(amp[0] + amp[1]) ** 2 / 2
    pR = abs(amp[0] + 1j * amp[1]) ** 2 / 2
    return Probabilities(pH, pV, pPlus, pR, arm, w)


def probabilities_from_e_prime(psi, e_prime, arm: str = T_PRIME) -> Probabilities:
    return ideal_probabilities(psi, np.exp(-1j * complex(e_prime)), arm)


@dataclass(frozen=True)
class CountRecord:
    """Coincidence counts in the four bases. Noiseless records hold the real expectation values."""

    nH: float
    nV: float
    nPlus: float
    nR: float
    arm: str
    expected_total: float
    noiseless: bool = False

    def as_tuple(self):
        return (self.nH, self.nV, self.nPlus, self.nR)


def expected_counts(probs: Probabilities, expected_total: float) -> np.ndarray:
    return expected_total * probs.arm_weight * np.array(probs.as_tuple())


def sample_counts(probs: Probabilities, expected_total: float, rng) -> CountRecord:
    """Independent Poisson counts per basis (each basis is its own run)."""
    if expected_total <= 0:
        raise ValueError("expected_total must be positive")
    n = rng.poisson(expected_counts(probs, expected_total))
    return CountRecord(*(int(x) for x in n), probs.arm, float(expected_total))


def exact_counts(probs: Probabilities, expected_total: float) -> CountRecord:
    n = expected_counts(probs, expected_total)
    return CountRecord(*(float(x) for x in n), probs.arm, float(expected_total), noiseless=True)


# -- inversion -----------------------------------------------------------------------------

@dataclass
class MeasurementResult:
    e_prime: complex
    branch_index: int = 0
    e_recovered: complex = complex("nan")
    band: str = "+"
    stderr_re: float = float("nan")
    stderr_im: float = float("nan")
    k: tuple = ()
    arm: str = T_PRIME
    d0: complex = 0j
    flags: list = field(default_factory=list)

    @property
    def stderr_estimate(self) -> float:
        return float(np.hypot(self.stderr_re, self.stderr_im))

    @property
    def ok(self) -> bool:
        return np.isfinite(self.e_recovered.real)

    def to_dict(self) -> dict:
        return {"k": list(self.k), "band": self.band, "arm": self.arm,
                "ePrime": [self.e_prime.real, self.e_prime.imag], "branchIndex": self.branch_index,
                "d0": [self.d0.real, self.d0.imag],
                "E": [self.e_recovered.real, self.e_recovered.imag],
                "stderrRe": self.stderr_re, "stderrIm": self.stderr_im,
                "stderr": self.stderr_estimate, "flags": list(self.flags)}


def _wrap_pi(x):
    # principal interval (-pi, pi]
    return np.pi - np.mod(np.pi - x, 2 * np.pi)


def invert_counts(counts: CountRecord) -> MeasurementResult:
    """E' = i ln(x + i y) on the principal branch, with first-order Poisson error bars.

    T' arm: x = (2N+ - NH - NV)/(2NH), y = (NH + NV - 2NR)/(2NH).
    R' arm: x = (2N+ - NH - NV)/(2NV), y = (2NR - NH - NV)/(2NV).
    """
    nH, nV, nP, nR = counts.as_tuple()
    if counts.arm == T_PRIME:
        den, signal = nH, nV
        x = (2 * nP - nH - nV) / (2 * nH) if nH > 0 else None
        if x is not None:
            y = (nH + nV - 2 * nR) / (2 * nH)
            # partial derivatives wrt (NH, NV, N+, NR)
            dx = np.array([-(0.5 + x) / nH, -0.5 / nH, 1 / nH, 0.0])
            dy = np.array([0.5 / nH - y / nH, 0.5 / nH, 0.0, -1 / nH])
    elif counts.arm == R_PRIME:
        den, signal = nV, nH
        x = (2 * nP - nH - nV) / (2 * nV) if nV > 0 else None
        if x is not None:
            y = (2 * nR - nH - nV) / (2 * nV)
            dx = np.array([-0.5 / nV, -(0.5 + x) / nV, 1 / nV, 0.0])
            dy = np.array([-0.5 / nV, -(0.5 + y) / nV, 0.0, 1 / nV])
    else:
        raise ValueError(f"unknown arm {counts.arm!r}")
    if x is None or den <= 0:
        raise ZeroDenominator(f"reference count is zero in arm {counts.arm}")
    w2 = x * x + y * y
    if w2 == 0 or signal <= 0:
        raise DegenerateCounts("interference signal vanished; E' is undetermined")
    e_prime = 1j * np.log(complex(x, y))
    e_prime = complex(_wrap_pi(e_prime.real), e_prime.imag)
    var = np.array(counts.as_tuple(), dtype=float)
    d_arg = (x * dy - y * dx) / w2
    d_lnabs = (x * dx + y * dy) / w2
    return MeasurementResult(e_prime=e_prime, arm=counts.arm,
                             stderr_re=float(np.sqrt(np.sum(d_arg**2 * var))),
                             stderr_im=float(np.sqrt(np.sum(d_lnabs**2 * var))))


# -- full pipeline -------------------------------------------------------------------------

def _rng_for(seed: int, ik: int, band: str, trial: int):
    ss = np.random.SeedSequence(seed, spawn_key=(ik, 0 if band == "+" else 1, trial))
    return np.random.default_rng(ss)


def measure_point(spec: ModelSpec, k, band: str, expected_total: float = 1e4, *, seed: int = 0,
                  ik: int = 0, trial: int = 0, shift_mode: str = PER_K, global_log: float | None = None,
                  noiseless: bool = False, condition_cap: float = DEFAULT_CONDITION_CAP) -> MeasurementResult:
    """One momentum, one band. Errors become flags on the returned result."""
    k = np.asarray(k, dtype=float)
    sh = passivity_shift(spec, k, shift_mode, global_log)
    flags = []
    U = sh.evolution()
    try:
        dec = decompose(U)
        if np.linalg.norm(dec.reconstruct() - U) > 1e-10 * max(1.0, np.linalg.norm(U)):
            flags.append("DECOMPOSITION_RESIDUAL")
    except NotPassive:
        flags.append(NotPassive.code)
    sp = spectrum(sh.h, condition_cap)
    if sp.defective:
        flags.append(NearEP.code)
    psi = prepare_eigenstate(sh, band, condition_cap, strict=False)
    # photon amplitude after exp(-iH') on an eigenstate is exp(-iE')
    z = complex(np.vdot(psi, U @ psi))
    arm = T_PRIME if abs(psi[0]) >= abs(psi[1]) else R_PRIME
    probs = ideal_probabilities(psi, z, arm)
    counts = (exact_counts(probs, expected_total) if noiseless
              else sample_counts(probs, expected_total, _rng_for(seed, ik, band, trial)))
    try:
        res = invert_counts(counts)
    except (ZeroDenominator, DegenerateCounts) as exc:
        res = MeasurementResult(e_prime=complex("nan"))
        flags.append(exc.code)
    res.band, res.k, res.d0, res.arm = band, tuple(float(x) for x in k), sh.d0, arm
    res.e_recovered = res.e_prime - sh.d0
    res.flags = flags + res.flags
    return res


def measure_band_structure(spec: ModelSpec, momenta, expected_total: float = 1e4, seed: int = 0,
                           shift_mode: str = PER_K, noiseless: bool = False,
                           grid: GridSpec | None = None, trial: int = 0,
                           unwrap: bool = False, threads: int = 1) -> list[MeasurementResult]:
    """Both bands at every momentum; RNG streams are keyed by (momentum index, band, trial).

    Per-point failures are recorded as flags and never abort the batch. The
    output order and counts do not depend on ``threads``.
    """
    momenta = np.atleast_2d(np.asarray(momenta, dtype=float))
    global_log = None
    if shift_mode == GLOBAL:
        if grid is None:
            grid = GridSpec((32,) * spec.dimension)
        global_log = global_log_lambda(spec, grid, momenta)

    def one(task):
        ik, band = task
        k = momenta[ik]
        try:
            return measure_point(spec, k, band, expected_total, seed=seed, ik=ik, trial=trial,
                                 shift_mode=shift_mode, global_log=global_log, noiseless=noiseless)
        except NHMetalError as exc:
            return MeasurementResult(complex("nan"), band=band, k=tuple(float(x) for x in k), flags=[exc.code])

    tasks = [(ik, band) for ik in range(len(momenta)) for band in ("+", "-")]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            out = list(ex.map(one, tasks))
    else:
        out = [one(t) for t in tasks]
    if unwrap:
        unwrap_branches(out)
    return out


def unwrap_branches(results: list[MeasurementResult]) -> None:
    """Add 2 pi n to Re E' per band so it is continuous along the given momentum order."""
    for band in ("+", "-"):
        rows = [r for r in results if r.band == band and r.ok]
        if not rows:
            continue
        re = np.array([r.e_prime.real for r in rows])
        un = np.unwrap(re)
        for r, a, b in zip(rows, re, un):
            n = int(round((b - a) / (2 * np.pi)))
            r.branch_index = n
            r.e_prime = r.e_prime + 2 * np.pi * n
            r.e_recovered = r.e_recovered + 2 * np.pi * n


def gaps(results: list[MeasurementResult]):
    """Delta E = E+ - E- per momentum, with the combined error bars."""
    plus = {r.k: r for r in results if r.band == "+"}
    minus = {r.k: r for r in results if r.band == "-"}
    rows = []
    for k, rp in plus.items():
        rm = minus.get(k)
        if rm is None:
            continue
        rows.append((k, rp.e_recovered - rm.e_recovered,
                     float(np.hypot(rp.stderr_re, rm.stderr_re)), float(np.hypot(rp.stderr_im, rm.stderr_im))))
    return rows


def results_to_csv(results: list[MeasurementResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    dim = max((len(r.k) for r in results), default=2)
    w.writerow([f"k{i + 1}" for i in range(dim)] + ["band", "reE", "imE", "stderr", "stderrRe", "stderrIm", "flags"])
    for r in results:
        w.writerow([repr(float(x)) for x in r.k] + [r.band, repr(r.e_recovered.real), repr(r.e_recovered.imag),
                                                    repr(r.stderr_estimate), repr(r.stderr_re), repr(r.stderr_im),
                                                    ";".join(r.flags)])
    return buf.getvalue()


def results_document(results: list[MeasurementResult], spec: ModelSpec, seed: int, **meta) -> dict:
    """JSON-ready batch record with the model and master seed embedded."""
    return {"kind": "MeasurementBatch", "model": spec.to_dict(), "seed": seed, **meta,
            "results": [r.to_dict() for r in results]}
