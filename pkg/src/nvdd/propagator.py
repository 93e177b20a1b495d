"""Piecewise-exact time evolution through pulse sequences.

States live in the eigenbasis of the static Hamiltonian (each eigenstate
labelled by its dominant bare ``|m_S, m_I>``) and in a frame rotating at
the microwave drive frequency on the ``m_S = -1`` states. In that frame the
static Hamiltonian is diagonal and time independent, and the drive is
constant within each rectangular pulse after the rotating-wave
approximation, so every element propagates with one exact exponential.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache

import numpy as np

from .model import (
    FieldConfig,
    Hamiltonian,
    NvParams,
    build_full_hamiltonian,
    dressed_basis,
    reduce_subspace,
    spin1_operators,
)
from .sequence import DELAY, PULSE, PulseSequence

__all__ = [
    "ConvergenceError",
    "NoiseModel",
    "ReadoutModel",
    "QuantumState",
    "SpinSystem",
    "spin_system",
    "evolve",
    "sequence_propagator",
    "apply_dephasing",
    "readout_signal",
    "normalized_signal",
    "lab_frame_evolve",
    "write_trajectory_csv",
    "phase_optimized_distance",
]

TWO_PI = 2 * math.pi


class ConvergenceError(RuntimeError):
    """Step refinement of a time-dependent segment did not converge."""


@dataclass(frozen=True)
class NoiseModel:
    """Electron dephasing under decoupling plus a quasi-static detuning spread.

    ``stretch`` is the exponent ``p`` of the coherence envelope
    ``exp(-(t / t2_dd) ** p)``. A nonzero ``detuning_sigma`` averages
    ``n_samples`` evolutions with Gaussian detunings drawn from ``seed``.
    """

    t2_dd: float = math.inf
    detuning_sigma: float = 0.0
    seed: int = 0
    stretch: float = 1.0
    n_samples: int = 16

    def __post_init__(self):
        if not self.t2_dd > 0:
            raise ValueError(f"t2_dd must be > 0 or inf, got {self.t2_dd}")
        if self.detuning_sigma < 0:
            raise ValueError("detuning_sigma must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

    @property
    def is_noiseless(self) -> bool:
        return math.isinf(self.t2_dd) and self.detuning_sigma == 0


@dataclass(frozen=True)
class ReadoutModel:
    brightness_0: float = 1.0
    contrast: float = 0.3
    shot_noise: bool = False

    def __post_init__(self):
        if not 0 < self.contrast < 1:
            raise ValueError(f"contrast must lie in (0, 1), got {self.contrast}")
        if self.brightness_0 <= 0:
            raise ValueError("brightness_0 must be positive")


@dataclass(frozen=True)
class QuantumState:
    """Density matrix in the dressed, drive-rotating basis of a SpinSystem."""

    rho: np.ndarray
    labels: tuple
    frame: str = "rotating"
    time: float = 0.0

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    def population(self, ms=None, mi=None) -> float:
        p = np.real(np.diag(self.rho))
        sel = [k for k, (a, b) in enumerate(self.labels) if (ms is None or a == ms) and (mi is None or b == mi)]
        return float(np.sum(p[sel]))

    def check(self, tol: float = 1e-10):
        r = self.rho
        if np.max(np.abs(r - r.conj().T)) > tol:
            raise ValueError("density matrix not Hermitian")
        if abs(np.trace(r).real - 1) > tol:
            raise ValueError("density matrix trace != 1")
        if np.min(np.linalg.eigvalsh(0.5 * (r + r.conj().T))) < -tol:
            raise ValueError("density matrix not positive semidefinite")
        return self

    @classmethod
    def product(cls, labels, ms: int = 0, nuclear=None) -> "QuantumState":
        """Electron in ``|ms>``; nucleus in a given ``m_I`` or maximally mixed.

        ``nuclear`` may be an int ``m_I``, a dict ``{m_I: weight}`` or None
        (uniform over the nuclear levels present in ``labels``).
        """
        mis = sorted({mi for _, mi in labels}, reverse=True)
        if nuclear is None:
            w = {mi: 1 / len(mis) for mi in mis}
        elif isinstance(nuclear, dict):
            tot = sum(nuclear.values())
            w = {k: v / tot for k, v in nuclear.items()}
        else:
            w = {int(nuclear): 1.0}
        p = np.array([w.get(mi, 0.0) if m == ms else 0.0 for m, mi in labels])
        return cls(np.diag(p).astype(complex), tuple(labels))

    @classmethod
    def pure(cls, psi, labels) -> "QuantumState":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()), tuple(labels))


class SpinSystem:
    """Static part of a simulation: dressed basis, frame and drive operator.

    Parameters
    ----------
    dim : 9 for the full electron x 14N model, 4 for the reduced one.
    nuclear_pair : nuclear levels of the reduced model, and the pair whose
        electron lines set the default drive frequency.
    drive : ``"pair"`` (mean electron line of ``nuclear_pair``), ``"center"``
        (mean over all nuclear levels present) or a frequency in Hz.
    """

    def __init__(self, params: NvParams, field: FieldConfig, dim: int = 9,
                 nuclear_pair=(0, -1), drive="pair"):
        if dim not in (9, 4):
            raise ValueError(f"model dim must be 9 or 4, got {dim}")
        self.params, self.field, self.dim = params, field, dim
        self.nuclear_pair = tuple(nuclear_pair)
        h9 = build_full_hamiltonian(params, field)
        h = h9 if dim == 9 else reduce_subspace(h9, self.nuclear_pair)
        self.hamiltonian = h
        self.basis = dressed_basis(h)
        self.labels = self.basis.labels

        ms = np.array([m for m, _ in self.labels])
        self.minus = (ms == -1).astype(float)
        self.zero = (ms == 0).astype(float)
        self.ms = ms
        if isinstance(drive, (int, float)) and not isinstance(drive, bool):
            self.f_drive = float(drive)
        else:
            mis = self.nuclear_pair if drive == "pair" else sorted({mi for _, mi in self.labels})
            lines = [self.basis.energy(-1, mi) - self.basis.energy(0, mi) for mi in mis]
            self.f_drive = float(np.mean(lines))
        # rotating-frame static Hamiltonian (diagonal)
        self.w = self.basis.energies - self.f_drive * self.minus

        sx, _, _ = spin1_operators()
        if dim == 9:
            sx_full = np.kron(sx, np.eye(3))
        else:
            # S_x restricted to m_S in {0, -1}: <-1|Sx|0> = 1/sqrt(2)
            e = np.array([[0, 1], [1, 0]]) / math.sqrt(2)
            sx_full = np.kron(e, np.eye(2))
        self.sx_bare = sx_full
        v = self.basis.vectors
        sx_d = v.conj().T @ sx_full @ v
        mask = np.outer(self.minus, self.zero)
        # raising operator on the driven transition, normalized to unit bare matrix element
        self.drive_op = math.sqrt(2) * sx_d * mask
        self._cache = {}
        self.coherence_mask = (ms[:, None] != ms[None, :]).astype(float)

    def electron_lines(self):
        mis = sorted({mi for _, mi in self.labels}, reverse=True)
        return {mi: self.basis.energy(-1, mi) - self.basis.energy(0, mi) for mi in mis}

    def pulse_hamiltonian(self, rabi_rate, phase, detuning=0.0):
        d = np.exp(1j * phase) * self.drive_op
        return np.diag(self.w - detuning * self.minus) + 0.5 * rabi_rate * (d + d.conj().T)

    def element_propagator(self, element, detuning=0.0):
        key = (element.kind, element.duration, element.phase, element.rabi_rate, detuning)
        u = self._cache.get(key)
        if u is not None:
            return u
        t = element.duration
        if element.kind == DELAY:
            u = np.diag(np.exp(-1j * TWO_PI * (self.w - detuning * self.minus) * t))
        else:
            h = self.pulse_hamiltonian(element.rabi_rate, element.phase, detuning)
            lam, vec = np.linalg.eigh(h)
            u = (vec * np.exp(-1j * TWO_PI * lam * t)) @ vec.conj().T
        if len(self._cache) < 4096:
            self._cache[key] = u
        return u

    def propagator(self, seq: PulseSequence, detuning=0.0):
        u = np.eye(self.dim, dtype=complex)
        # repeated runs of identical elements are common (XY8 units); plain
        # left-multiplication keeps this simple and exact
        for e in _live_elements(seq):
            u = self.element_propagator(e, detuning) @ u
        return u

    def initial_state(self, ms=0, nuclear=None) -> QuantumState:
        return QuantumState.product(self.labels, ms, nuclear)

    def to_bare(self, u):
        """Express a dressed-basis operator in the bare product basis."""
        v = self.basis.vectors
        return v @ u @ v.conj().T


@lru_cache(maxsize=64)
def spin_system(params: NvParams, field: FieldConfig, dim: int = 9, nuclear_pair=(0, -1), drive="pair") -> SpinSystem:
    return SpinSystem(params, field, dim, nuclear_pair, drive)


def _live_elements(seq):
    dropped = 0
    for e in seq.elements:
        if e.duration <= 0:
            dropped += 1
            continue
        yield e
    if dropped:
        warnings.warn(f"dropped {dropped} zero-duration element(s)", RuntimeWarning, stacklevel=3)


def _system(params, field, model):
    model = dict(model or {})
    return spin_system(params, field, model.get("dim", 9), tuple(model.get("nuclear_pair", (0, -1))),
                       model.get("drive", "pair"))


def sequence_propagator(seq: PulseSequence, params: NvParams, field: FieldConfig, model=None) -> np.ndarray:
    """Total noiseless propagator of ``seq`` in the dressed rotating frame."""
    return _system(params, field, model).propagator(seq)


def apply_dephasing(state: QuantumState, duration: float, noise: NoiseModel) -> QuantumState:
    """Shrink electron coherences (``m_S`` off-diagonal blocks) by the envelope.

    The factor continues the envelope from ``state.time``, so applying it
    element by element reproduces ``exp(-(t / t2_dd) ** p)`` overall.
    """
    if duration < 0:
        raise ValueError("duration must be >= 0")
    if math.isinf(noise.t2_dd) or duration == 0:
        return state
    p = noise.stretch
    t0 = state.time
    f = math.exp(-(((t0 + duration) / noise.t2_dd) ** p) + (t0 / noise.t2_dd) ** p)
    ms = np.array([m for m, _ in state.labels])
    mask = ms[:, None] != ms[None, :]
    rho = np.where(mask, state.rho * f, state.rho)
    return replace(state, rho=rho)


def evolve(state: QuantumState, seq: PulseSequence, params: NvParams, field: FieldConfig,
           noise: NoiseModel | None = None, model=None, trajectory: bool = False):
    """Propagate ``state`` through ``seq``.

    Returns the final state, or ``(state, trajectory)`` when ``trajectory``
    is set; the trajectory holds the state after every element. The
    dephasing envelope is applied after each element from the state's
    running time.
    """
    system = _system(params, field, model)
    if state.dim != system.dim:
        raise ValueError(f"state dim {state.dim} does not match model dim {system.dim}")
    noise = noise or NoiseModel()
    elements = list(_live_elements(seq))

    if noise.detuning_sigma > 0:
        rng = np.random.default_rng(noise.seed)
        detunings = rng.normal(0.0, noise.detuning_sigma, noise.n_samples)
    else:
        detunings = [0.0]

    rho_acc = np.zeros_like(state.rho)
    traj_acc = None
    for det in detunings:
        s = state
        traj = [s] if trajectory else None
        if not trajectory and math.isinf(noise.t2_dd):
            u = np.eye(system.dim, dtype=complex)
            for e in elements:
                u = system.element_propagator(e, det) @ u
            s = replace(s, rho=u @ s.rho @ u.conj().T, time=s.time + math.fsum(e.duration for e in elements))
        else:
            for e in elements:
                u = system.element_propagator(e, det)
                s = replace(s, rho=u @ s.rho @ u.conj().T)
                s = apply_dephasing(s, e.duration, noise)
                s = replace(s, time=s.time + e.duration)
                if trajectory:
                    traj.append(s)
        rho_acc += s.rho / len(detunings)
        if trajectory:
            if traj_acc is None:
                traj_acc = [replace(t, rho=t.rho / len(detunings)) for t in traj]
            else:
                traj_acc = [replace(a, rho=a.rho + t.rho / len(detunings)) for a, t in zip(traj_acc, traj)]
    out = replace(s, rho=0.5 * (rho_acc + rho_acc.conj().T))
    return (out, traj_acc) if trajectory else out


def readout_signal(state: QuantumState, readout: ReadoutModel, rng=None) -> float:
    """Fluorescence counts ``brightness_0 * (1 - contrast * P(m_S = -1))``.

    With ``shot_noise`` the mean is Poisson-sampled using ``rng`` (a numpy
    Generator or an integer seed).
    """
    p1 = min(max(state.population(ms=-1), 0.0), 1.0)
    mean = readout.brightness_0 * (1 - readout.contrast * p1)
    if not readout.shot_noise:
        return mean
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return float(rng.poisson(mean))


def normalized_signal(s0, s1):
    """``(s0 - s1) / (s0 + s1)``; works elementwise on arrays."""
    s0 = np.asarray(s0, dtype=float)
    s1 = np.asarray(s1, dtype=float)
    den = s0 + s1
    if np.any(den == 0):
        raise ZeroDivisionError("s0 + s1 must be nonzero")
    out = (s0 - s1) / den
    return float(out) if out.ndim == 0 else out


def lab_frame_evolve(psi0, seq: PulseSequence, params: NvParams, field: FieldConfig, model=None,
                     steps_per_period: int = 16, tol: float = 1e-8, max_halvings: int = 8):
    """Reference integration in the lab frame without the rotating-wave approximation.

    ``psi0`` is given in the dressed rotating frame at t=0 (which coincides
    with the lab frame then). Pulses use the full ``cos`` drive on the bare
    ``S_x`` operator, integrated with a fourth-order Magnus step; the step
    is halved until final populations change by less than ``tol``. Returns
    the final state transformed back to the dressed rotating frame.
    """
    system = _system(params, field, model)
    elements = list(_live_elements(seq))
    n = steps_per_period
    prev = None
    for _ in range(max_halvings + 1):
        psi = _lab_run(system, np.asarray(psi0, dtype=complex), elements, n)
        pops = np.abs(psi) ** 2
        if prev is not None and np.max(np.abs(pops - prev)) < tol:
            return psi
        prev = pops
        n *= 2
    raise ConvergenceError(f"lab-frame integration not converged to {tol} with {n // 2} steps per drive period")


def _lab_run(system, psi_rot, elements, steps_per_period):
    v = system.basis.vectors
    h0 = system.hamiltonian.matrix
    lam0, vec0 = np.linalg.eigh(h0)
    hx = math.sqrt(2) * system.sx_bare
    psi = v @ psi_rot  # lab frame, bare basis, t = 0
    t = 0.0
    fd = system.f_drive
    g1, g2 = 0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6
    for e in elements:
        if e.kind == DELAY:
            psi = vec0 @ (np.exp(-1j * TWO_PI * lam0 * e.duration) * (vec0.conj().T @ psi))
            t += e.duration
            continue
        nsteps = max(1, int(math.ceil(e.duration * abs(fd) * steps_per_period)))
        dt = e.duration / nsteps
        for k in range(nsteps):
            ta = t + k * dt
            a1 = -1j * TWO_PI * (h0 + e.rabi_rate * math.cos(TWO_PI * fd * (ta + g1 * dt) - e.phase) * hx)
            a2 = -1j * TWO_PI * (h0 + e.rabi_rate * math.cos(TWO_PI * fd * (ta + g2 * dt) - e.phase) * hx)
            gen = 0.5 * dt * (a1 + a2) + (math.sqrt(3) / 12) * dt * dt * (a2 @ a1 - a1 @ a2)
            # gen is anti-Hermitian: exponentiate through i*gen (Hermitian)
            lam, vec = np.linalg.eigh(1j * gen)
            psi = vec @ (np.exp(-1j * lam) * (vec.conj().T @ psi))
        t += e.duration
    # back to dressed basis and rotating frame
    psi_d = v.conj().T @ psi
    return np.exp(1j * TWO_PI * fd * t * system.minus) * psi_d


def write_trajectory_csv(path, trajectory, pair=(1, 0)):
    """Dump ``time_s, P_mS0, P_mI_plus1`` and tracked coherences to CSV.

    Tracked coherences: the electron ``<0|rho_e|-1>`` and the nuclear
    ``<a|rho_n|b>`` element of the reduced density matrices, for ``pair=(a, b)``.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "P_mS0", "P_mI_plus1", "re_coh_e", "im_coh_e", "re_coh_n", "im_coh_n"])
        for s in trajectory:
            ce = _reduced_element(s, "e", 0, -1)
            cn = _reduced_element(s, "n", *pair)
            w.writerow([repr(s.time), repr(s.population(ms=0)), repr(s.population(mi=1)),
                        repr(ce.real), repr(ce.imag), repr(cn.real), repr(cn.imag)])


def _reduced_element(state, which, a, b):
    tot = 0j
    for i, (ms_i, mi_i) in enumerate(state.labels):
        for j, (ms_j, mi_j) in enumerate(state.labels):
            if which == "e" and ms_i == a and ms_j == b and mi_i == mi_j:
                tot += state.rho[i, j]
            if which == "n" and mi_i == a and mi_j == b and ms_i == ms_j:
                tot += state.rho[i, j]
    return tot


def phase_optimized_distance(u, target, n_local: int = 2, iters: int = 200):
    """Operator distance minimized over global and local Z phases.

    ``u`` and ``target`` are 4x4 on ``electron (x) nucleus`` qubits. Local Z
    rotations on either qubit may be applied before and after ``u``; the
    returned distance is ``||u' - target||_F / 2`` (so 1 is maximally off
    for unitaries, 0 is equal), after the best phases.
    """
    from scipy.optimize import minimize

    u = np.asarray(u, dtype=complex)
    target = np.asarray(target, dtype=complex)
    z = np.array([[1, 1, -1, -1], [1, -1, 1, -1]], dtype=float) / 2  # Ze, Zn generators

    def dressed(x):
        pre = np.exp(-1j * (x[0] * z[0] + x[1] * z[1]))
        post = np.exp(-1j * (x[2] * z[0] + x[3] * z[1]))
        return (post[:, None] * u) * pre[None, :]

    def cost(x):
        w = dressed(x)
        ov = np.vdot(target, w)  # tr(target^dag w)
        return 4 - abs(ov)

    best = None
    rng = np.random.default_rng(0)
    for start in [np.zeros(4)] + [rng.uniform(-np.pi, np.pi, 4) for _ in range(15)]:
        r = minimize(cost, start, method="BFGS")
        if best is None or r.fun < best.fun:
            best = r
    w = dressed(best.x)
    ov = np.vdot(target, w)
    w = w * np.exp(-1j * np.angle(ov))
    return float(np.linalg.norm(w - target) / 2), w
