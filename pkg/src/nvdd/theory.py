"""Effective electron-conditional coupling of the 14N spin and gate design.

Units: every frequency, including the coupling ``g``, is an ordinary
frequency in Hz. The closed-form coupling

    g = gamma_e * b_perp * a_perp * F / (pi * (d_gs - gamma_e * b_z))

is evaluated with ordinary frequencies throughout. This gives about
64.6 kHz at (280 mT, 5 mT); reading the constants as angular frequencies
would make ``g`` 2*pi larger and inconsistent with measured couplings of
tens of kHz. A rotation angle is ``theta = 2*pi*|g| * (2 * tau * n_p)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    DegeneracyError,
    FieldConfig,
    NvParams,
    _cached_dressed,
    build_full_hamiltonian,
    dressed_basis,
    reduce_subspace,
)

__all__ = [
    "GslacProximity",
    "NegativeTau",
    "Infeasible",
    "EffectiveCoupling",
    "GatePlan",
    "GSLAC_EXCLUSION_HZ",
    "electron_detuning",
    "effective_coupling",
    "branch_frequency",
    "branch_pair",
    "resonance_tau",
    "rotation_angle",
    "numeric_coupling_oracle",
    "effective_nuclear_hamiltonians",
    "design_gate",
    "enumerate_plans",
]

GSLAC_EXCLUSION_HZ = 50e6


class GslacProximity(ValueError):
    """The field is inside the exclusion zone around the level anticrossing."""


class NegativeTau(ValueError):
    """The pi pulse is longer than the resonant pulse spacing."""


class Infeasible(ValueError):
    """No gate plan meets the tolerance within the constraints."""


@dataclass(frozen=True)
class EffectiveCoupling:
    g: float
    branch_freqs: tuple  # (f_minus, f_plus), Hz; NaN where levels are too mixed to label


@dataclass(frozen=True)
class GatePlan:
    n_p: int
    tau: float
    theta: float
    total_time: float
    angle_error: float
    t_pi: float
    b_z: float = math.nan
    b_perp: float = math.nan
    g: float = math.nan
    branch: str = "-"

    def __post_init__(self):
        if self.n_p < 8 or self.n_p % 8:
            raise ValueError(f"n_p must be a positive multiple of 8, got {self.n_p}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @property
    def field(self) -> FieldConfig:
        return FieldConfig(self.b_z, self.b_perp)

    @property
    def interaction_time(self) -> float:
        return 2 * self.tau * self.n_p


def electron_detuning(params: NvParams, b_z: float) -> float:
    return params.d_gs - params.gamma_e * b_z


def _check_gslac(params, b_z):
    det = electron_detuning(params, b_z)
    if abs(det) <= GSLAC_EXCLUSION_HZ:
        raise GslacProximity(
            f"b_z={b_z:.6g} T gives |d_gs - gamma_e*b_z| = {abs(det) / 1e6:.2f} MHz, inside the "
            f"{GSLAC_EXCLUSION_HZ / 1e6:.0f} MHz exclusion zone around the level anticrossing"
        )
    return det


def _branch_table(params, field):
    b = _cached_dressed(params, field)
    means = {}
    for pair in ((1, 0), (0, -1)):
        means[pair] = 0.5 * (abs(b.energy(0, pair[0]) - b.energy(0, pair[1]))
                             + abs(b.energy(-1, pair[0]) - b.energy(-1, pair[1])))
    lo, hi = sorted(means, key=means.get)
    return {"-": (means[lo], lo), "+": (means[hi], hi)}


def branch_frequency(params: NvParams, field: FieldConfig, branch: str) -> float:
    """Decoupling frequency resonant with one 14N transition (Hz).

    The target is the nuclear transition frequency averaged over the
    ``m_S = 0`` and ``m_S = -1`` manifolds, i.e. ``w_n -/+ a_z/2`` around the
    ``m_S = 0`` frequency. Branch ``"+"`` is the higher one (``m_I``
    +1 <-> 0 with the default signs), ``"-"`` the lower one (0 <-> -1).
    """
    if branch not in ("+", "-"):
        raise ValueError(f"branch must be '+' or '-', got {branch!r}")
    return _branch_table(params, field)[branch][0]


def branch_pair(params: NvParams, field: FieldConfig, branch: str) -> tuple:
    """Nuclear level pair ``(m_I, m_I')`` addressed by a branch."""
    if branch not in ("+", "-"):
        raise ValueError(f"branch must be '+' or '-', got {branch!r}")
    return _branch_table(params, field)[branch][1]


def effective_coupling(params: NvParams, field: FieldConfig) -> EffectiveCoupling:
    """Closed-form effective transverse coupling ``g`` (Hz, signed)."""
    det = _check_gslac(params, field.b_z)
    g = params.gamma_e * field.b_perp * params.a_perp * params.f_const / (math.pi * det)
    try:
        freqs = (branch_frequency(params, field, "-"), branch_frequency(params, field, "+"))
    except DegeneracyError:
        # strong electron mixing: levels lose their bare labels, g itself is still defined
        freqs = (math.nan, math.nan)
    return EffectiveCoupling(g, freqs)


def resonance_tau(params: NvParams, field: FieldConfig, branch: str = "-", t_pi: float | None = None,
                  order: int = 1, f_target: float | None = None) -> float:
    """Half pulse spacing ``tau`` with ``2*tau + t_pi = (2*order - 1) / (2*f)``.

    ``f`` is the branch frequency unless ``f_target`` is given. ``order``
    selects a higher odd harmonic of the decoupling filter.
    """
    t_pi = params.t_pi if t_pi is None else t_pi
    f = branch_frequency(params, field, branch) if f_target is None else f_target
    slot = (2 * order - 1) / (2 * f)
    if t_pi >= slot:
        raise NegativeTau(f"t_pi={t_pi:.3g} s does not fit in the resonant slot {slot:.3g} s")
    return 0.5 * (slot - t_pi)


def rotation_angle(g: float, n_p: int, tau: float) -> float:
    """``theta = 2*pi*|g| * 2*tau*n_p`` in radians."""
    return 2 * math.pi * abs(g) * (2 * tau * n_p)


def effective_nuclear_hamiltonians(params: NvParams, field: FieldConfig, reduced: bool = False):
    """Nuclear Hamiltonian seen inside each electron manifold (Hz).

    The dressed eigenstates of each manifold are projected onto that
    manifold's bare ``m_S`` block and orthonormalized (polar
    decomposition); the eigenvalues are then re-expressed in the bare
    nuclear basis. Returns ``{m_S: matrix}`` with rows ordered like the
    nuclear levels of the model.
    """
    h9 = build_full_hamiltonian(params, field)
    h = reduce_subspace(h9) if reduced else h9
    basis = dressed_basis(h)
    out = {}
    for ms in sorted({m for m, _ in basis.labels}):
        idx = [k for k, (m, _) in enumerate(basis.labels) if m == ms]
        w = basis.vectors[np.ix_(idx, idx)]
        u, _, vh = np.linalg.svd(w)
        q = u @ vh
        out[ms] = q @ np.diag(basis.energies[idx]) @ q.conj().T
    return out


def numeric_coupling_oracle(params: NvParams, field: FieldConfig, nuclear_pair=(0, -1),
                            reduced: bool = False) -> float:
    """Conditional-rotation rate from exact diagonalization (Hz, magnitude).

    The transverse matrix element ``h_m`` between the two nuclear states
    is read from the effective nuclear Hamiltonian of each manifold
    ``m_S = 0, -1``. Its electron-conditional part ``h_0 - h_-1`` is
    time-averaged by resonant decoupling with weight ``2/pi``, giving the
    rate ``g`` that enters ``theta = 2*pi*g*T``. With ``reduced`` the
    ``m_S = +1`` level is dropped (the two-level electron model).
    """
    _check_gslac(params, field.b_z)
    heff = effective_nuclear_hamiltonians(params, field, reduced=reduced)
    if reduced:
        order = (1, 0)  # reduce_subspace default pair
        pair = (1, 0)
    else:
        order = (1, 0, -1)
        pair = tuple(nuclear_pair)
    i, j = order.index(pair[0]), order.index(pair[1])
    dh = heff[0][i, j] - heff[-1][i, j]
    return 2 * abs(dh) / math.pi


def design_gate(theta_target: float, params: NvParams, field_range, constraints=None, coupling=None) -> GatePlan:
    """Grid search for the fastest XY8 conditional rotation reaching ``theta_target``.

    Parameters
    ----------
    field_range : dict with ``b_z`` (T) and ``b_perp`` (iterable of T
        candidates, or a ``(lo, hi, n)`` tuple).
    constraints : dict; keys ``grid`` (s, default 0.5e-9), ``tolerance``
        (rad, default 0.02), ``max_total_time`` (s, default 50e-6),
        ``n_p_max`` (default 2000), ``branch`` (default ``"-"``),
        ``order`` (odd filter harmonic, default 1), ``interpolate``
        (average several grid spacings, default False).
    coupling : callable ``(params, FieldConfig) -> g``; defaults to the
        closed-form coupling.

    Plans are ranked by total time, then angle error, then ``b_perp``.
    """
    if not 0 < theta_target <= 2 * math.pi:
        raise ValueError("theta_target must be in (0, 2pi]")
    c = {"grid": 0.5e-9, "tolerance": 0.02, "max_total_time": 50e-6, "n_p_max": 2000,
         "branch": "-", "order": 1, "interpolate": False}
    c.update(constraints or {})
    coupling = coupling or (lambda p, f: effective_coupling(p, f).g)
    b_z = float(field_range["b_z"])
    bp = field_range["b_perp"]
    if isinstance(bp, tuple) and len(bp) == 3:
        bp = np.linspace(*bp)
    candidates = []
    for b_perp in bp:
        fc = FieldConfig(b_z, float(b_perp))
        g = coupling(params, fc)
        if g == 0:
            continue
        tau_exact = resonance_tau(params, fc, c["branch"], order=c["order"])
        grid = c["grid"]
        for n_p in range(8, c["n_p_max"] + 1, 8):
            if c["interpolate"]:
                from .sequence import quantum_interpolate
                tau = float(np.mean(quantum_interpolate(tau_exact, grid, n_p // 8)))
            else:
                tau = round(tau_exact / grid) * grid
            total = n_p * (2 * tau + params.t_pi)
            if total > c["max_total_time"] * (1 + 1e-12):
                break
            theta = rotation_angle(g, n_p, tau)
            err = abs(theta - theta_target)
            if err <= c["tolerance"]:
                candidates.append((total, err, float(b_perp), n_p, tau, theta, g))
    if not candidates:
        raise Infeasible(
            f"no plan reaches theta={theta_target:.4f} within {c['tolerance']:.3g} rad "
            f"and {c['max_total_time']:.3g} s"
        )
    total, err, b_perp, n_p, tau, theta, g = min(candidates)
    return GatePlan(n_p, tau, theta, total, err, params.t_pi, b_z, b_perp, g, c["branch"])


def enumerate_plans(theta_target, params, field_range, constraints=None, coupling=None):
    """All feasible candidates as tuples (for exhaustive checks of the ranking)."""
    c = dict(constraints or {})
    out = []
    for b_perp in field_range["b_perp"]:
        try:
            plan = design_gate(theta_target, params, {"b_z": field_range["b_z"], "b_perp": [b_perp]}, c, coupling)
        except Infeasible:
            continue
        out.append(plan)
    return out
