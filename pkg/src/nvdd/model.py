"""Physical constants and Hamiltonians of the NV electron / nitrogen-14 system.

All Hamiltonian entries are ordinary frequencies in Hz. The single factor of
2*pi is applied at propagation time, never here.

Basis ordering for both spins is descending magnetic quantum number,
``|+1>, |0>, |-1>``, and the product basis index is ``3 * e + n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, fields, replace
from functools import lru_cache

import numpy as np

__all__ = [
    "NvParams",
    "FieldConfig",
    "Hamiltonian",
    "DegeneracyError",
    "spin1_operators",
    "build_full_hamiltonian",
    "reduce_subspace",
    "nuclear_transition_frequency",
    "dressed_basis",
    "DressedBasis",
    "MS_VALUES",
    "MI_VALUES",
]

MS_VALUES = (1, 0, -1)
MI_VALUES = (1, 0, -1)

# Config-file key for every NvParams field.
_PARAM_KEYS = {
    "d_gs": "d_gs_hz",
    "gamma_e": "gamma_e_hz_per_t",
    "gamma_n": "gamma_n_hz_per_t",
    "a_z": "a_z_hz",
    "a_perp": "a_perp_hz",
    "quadrupole_p": "quadrupole_p_hz",
    "f_const": "f_const",
    "t_pi": "t_pi_s",
    "rabi_rate": "rabi_rate_hz",
}


class DegeneracyError(RuntimeError):
    """Eigenstates cannot be assigned to bare |m_S, m_I> labels unambiguously."""


@dataclass(frozen=True)
class NvParams:
    """Constants of the NV / 14N system in ordinary-frequency units.

    ``rabi_rate`` defaults to ``1 / (2 * t_pi)`` so that a pulse of length
    ``t_pi`` is a pi rotation.
    """

    d_gs: float = 2.87e9
    gamma_e: float = 28e9
    gamma_n: float = 3.077e6
    a_z: float = 2.2e6
    a_perp: float = -2.62e6
    quadrupole_p: float = -4.945e6
    f_const: float = 2.75
    t_pi: float = 35e-9
    rabi_rate: float | None = None

    def __post_init__(self):
        if not self.t_pi > 0:
            raise ValueError(f"t_pi must be positive, got {self.t_pi}")
        if self.rabi_rate is None:
            object.__setattr__(self, "rabi_rate", 0.5 / self.t_pi)
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite, got {v!r}")
        if self.d_gs <= 0:
            raise ValueError(f"d_gs must be positive, got {self.d_gs}")
        if self.gamma_e <= 0:
            raise ValueError(f"gamma_e must be positive, got {self.gamma_e}")
        if abs(self.rabi_rate * self.t_pi - 0.5) > 1e-9 * 0.5:
            raise ValueError(
                f"rabi_rate * t_pi must equal 1/2 (pi pulse), got {self.rabi_rate * self.t_pi!r}"
            )

    def with_t_pi(self, t_pi: float) -> "NvParams":
        return replace(self, t_pi=t_pi, rabi_rate=0.5 / t_pi)

    def to_config(self) -> dict:
        return {key: float(getattr(self, name)) for name, key in _PARAM_KEYS.items()}

    @classmethod
    def from_config(cls, block: dict) -> "NvParams":
        inverse = {v: k for k, v in _PARAM_KEYS.items()}
        unknown = set(block) - set(inverse)
        if unknown:
            raise KeyError(f"unknown constants key(s): {sorted(unknown)}")
        return cls(**{inverse[k]: float(v) for k, v in block.items()})


@dataclass(frozen=True)
class FieldConfig:
    """Static field: axial ``b_z`` and off-axis ``b_perp`` in tesla."""

    b_z: float
    b_perp: float = 0.0
    azimuth: float = 0.0

    def __post_init__(self):
        for name in ("b_z", "b_perp", "azimuth"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.b_perp < 0:
            raise ValueError(f"b_perp must be >= 0, got {self.b_perp}")
        if not 0.0 <= self.azimuth < 2 * math.pi:
            raise ValueError(f"azimuth must lie in [0, 2pi), got {self.azimuth}")

    def to_config(self) -> dict:
        return {"b_z_t": float(self.b_z), "b_perp_t": float(self.b_perp), "azimuth_rad": float(self.azimuth)}

    @classmethod
    def from_config(cls, block: dict) -> "FieldConfig":
        keys = {"b_z_t": "b_z", "b_perp_t": "b_perp", "azimuth_rad": "azimuth"}
        unknown = set(block) - set(keys)
        if unknown:
            raise KeyError(f"unknown field key(s): {sorted(unknown)}")
        return cls(**{keys[k]: float(v) for k, v in block.items()})


@dataclass(frozen=True)
class Hamiltonian:
    """Hermitian matrix plus the bare ``(m_S, m_I)`` label of each basis state."""

    matrix: np.ndarray
    labels: tuple = dc_field(default=())

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def spin1_operators():
    """Return ``(Sx, Sy, Sz)`` for spin 1 in the ``|+1>, |0>, |-1>`` basis."""
    s = 1 / np.sqrt(2)
    sx = np.array([[0, s, 0], [s, 0, s], [0, s, 0]], dtype=complex)
    sy = np.array([[0, -1j * s, 0], [1j * s, 0, -1j * s], [0, 1j * s, 0]], dtype=complex)
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    return sx, sy, sz


def _full_labels():
    return tuple((ms, mi) for ms in MS_VALUES for mi in MI_VALUES)


def build_full_hamiltonian(params: NvParams, field: FieldConfig) -> Hamiltonian:
    """Lab-frame 9x9 Hamiltonian (Hz) of the electron spin-1 and 14N spin-1.

    Terms: zero-field splitting ``D Sz^2``, electron Zeeman, quadrupole
    ``P Iz^2``, nuclear Zeeman ``-gamma_n B.I`` and the hyperfine tensor
    ``A_z Sz Iz + A_perp (Sx Ix + Sy Iy)``.
    """
    sx, sy, sz = spin1_operators()
    one = np.eye(3)
    c, s = math.cos(field.azimuth), math.sin(field.azimuth)
    s_perp = c * sx + s * sy

    h = params.d_gs * np.kron(sz @ sz, one)
    h = h + params.gamma_e * (field.b_z * np.kron(sz, one) + field.b_perp * np.kron(s_perp, one))
    h = h + params.quadrupole_p * np.kron(one, sz @ sz)
    h = h - params.gamma_n * (field.b_z * np.kron(one, sz) + field.b_perp * np.kron(one, s_perp))
    h = h + params.a_z * np.kron(sz, sz)
    h = h + params.a_perp * (np.kron(sx, sx) + np.kron(sy, sy))
    h = 0.5 * (h + h.conj().T)
    return Hamiltonian(h, _full_labels())


def reduce_subspace(h9: Hamiltonian, nuclear_pair=(1, 0)) -> Hamiltonian:
    """Project onto ``m_S in {0, -1}`` times the given pair of ``m_I`` levels.

    The default pair ``(+1, 0)`` is the nuclear subspace studied in the
    reduced model; ``(0, -1)`` selects the other 14N transition.
    """
    m = np.asarray(h9.matrix if isinstance(h9, Hamiltonian) else h9)
    if m.shape != (9, 9):
        raise ValueError(f"reduce_subspace expects a 9x9 Hamiltonian, got shape {m.shape}")
    pair = tuple(int(x) for x in nuclear_pair)
    if len(pair) != 2 or pair[0] == pair[1] or not set(pair) <= set(MI_VALUES):
        raise ValueError(f"invalid nuclear pair {nuclear_pair!r}")
    labels = tuple((ms, mi) for ms in (0, -1) for mi in pair)
    full = _full_labels()
    idx = [full.index(lab) for lab in labels]
    return Hamiltonian(m[np.ix_(idx, idx)].copy(), labels)


@dataclass(frozen=True)
class DressedBasis:
    """Eigen-decomposition of a static Hamiltonian with bare-state labels.

    Column ``k`` of ``vectors`` is the eigenstate assigned to ``labels[k]``;
    the ordering follows the bare basis of the source Hamiltonian and each
    column is phased so its dominant bare component is real positive.
    """

    energies: np.ndarray
    vectors: np.ndarray
    labels: tuple
    min_overlap: float

    def index(self, ms: int, mi: int) -> int:
        return self.labels.index((ms, mi))

    def energy(self, ms: int, mi: int) -> float:
        return float(self.energies[self.index(ms, mi)])


def dressed_basis(h: Hamiltonian, min_overlap: float = 0.9) -> DressedBasis:
    """Diagonalize ``h`` and track eigenvectors back to bare labels by overlap.

    Raises DegeneracyError when any eigenvector's best bare overlap
    (squared modulus) falls below ``min_overlap`` or two eigenvectors claim
    the same bare state.
    """
    evals, evecs = np.linalg.eigh(h.matrix)
    evecs = _align_degenerate(evals, evecs)
    weights = np.abs(evecs) ** 2  # [bare, eigen]
    best = np.argmax(weights, axis=0)
    worst = float(np.min(weights[best, np.arange(h.dim)]))
    if worst < min_overlap or len(set(best.tolist())) != h.dim:
        raise DegeneracyError(
            f"ambiguous eigenstate assignment: smallest bare overlap {worst:.3f} < {min_overlap} "
            "(too close to the ground-state level anticrossing)"
        )
    order = np.argsort(best)  # eigen index for each bare index
    vecs = evecs[:, order]
    energies = evals[order]
    for k in range(h.dim):
        ph = vecs[k, k] / abs(vecs[k, k])
        vecs[:, k] = vecs[:, k] / ph
    return DressedBasis(energies, vecs, h.labels, worst)


def _align_degenerate(evals, evecs, tol=1e-3):
    # Rotate inside each (near-)degenerate cluster towards the bare basis;
    # eigh returns an arbitrary orthonormal set there.
    evecs = evecs.copy()
    n = len(evals)
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and evals[stop] - evals[stop - 1] < tol:
            stop += 1
        if stop - start > 1:
            block = evecs[:, start:stop]
            k = stop - start
            bare = np.argsort(np.sum(np.abs(block) ** 2, axis=1))[-k:]
            u, _, vh = np.linalg.svd(block[bare, :])
            evecs[:, start:stop] = block @ (u @ vh).conj().T
        start = stop
    return evecs


@lru_cache(maxsize=256)
def _cached_dressed(params: NvParams, field: FieldConfig) -> DressedBasis:
    return dressed_basis(build_full_hamiltonian(params, field))


def nuclear_transition_frequency(params: NvParams, field: FieldConfig, m_s: int, nuclear_pair=(1, 0)) -> float:
    """Nuclear transition frequency (Hz, positive) inside one electron manifold.

    Exact diagonalization of the 9-level Hamiltonian with eigenvector-overlap
    tracking; raises DegeneracyError near the level anticrossing.
    """
    if m_s not in (0, -1):
        raise ValueError(f"m_s must be 0 or -1, got {m_s!r}")
    basis = _cached_dressed(params, field)
    a, b = nuclear_pair
    return abs(basis.energy(m_s, a) - basis.energy(m_s, b))
