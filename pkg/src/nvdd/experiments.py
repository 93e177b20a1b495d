"""Simulated measurements: decoupling spectra, coherent oscillations, coupling
maps, correlation traces and their spectra, ensemble averages and the
population-transfer gate.

Every scan records the raw fluorescence pair ``(S0, S1)`` next to the
normalized signal ``S = (S0 - S1) / (S0 + S1)``. ``S0`` closes the Ramsey
wrap with ``X/2`` and ``S1`` with ``-X/2``.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field, replace

import numpy as np
from scipy.optimize import curve_fit
from scipy.signal import find_peaks

from . import __version__
from .model import FieldConfig, NvParams
from .propagator import (
    NoiseModel,
    QuantumState,
    ReadoutModel,
    _system,
    evolve,
    normalized_signal,
    phase_optimized_distance,
    readout_signal,
)
from .sequence import (
    MX,
    MY,
    X,
    Y,
    PulseSequence,
    delay,
    quantum_interpolate,
    ramsey_wrap,
    transfer_circuit,
    xy8_block,
    z_half_duration,
)
from .theory import (
    GatePlan,
    GslacProximity,
    branch_frequency,
    branch_pair,
    effective_coupling,
    resonance_tau,
)

__all__ = [
    "ScanResult",
    "SpectrumPeaks",
    "EnsembleSpec",
    "OscillationFit",
    "CouplingMap",
    "TransferRow",
    "GateTimeReport",
    "spectrum_scan",
    "find_dips",
    "oscillation_scan",
    "fit_oscillation",
    "coupling_map",
    "correlation_scan",
    "fft_spectrum",
    "ensemble_average",
    "unit_rotation_angle",
    "calibrate_cr_plan",
    "transfer_unitary",
    "transfer_fidelity",
    "u_trans",
    "estimate_gate_time",
    "flip_infidelity_scaling",
    "transfer_distance",
    "correlation_n_p",
    "save_scan",
]

DEFAULT_MODEL = {"dim": 9, "drive": "center"}
REFERENCE_G_HZ = 59e3
REFERENCE_TRANSFER_S = 8.7e-6


@dataclass
class ScanResult:
    x: np.ndarray
    s: np.ndarray
    s0: np.ndarray
    s1: np.ndarray
    x_name: str = "x"
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        self.s0 = np.asarray(self.s0, dtype=float)
        self.s1 = np.asarray(self.s1, dtype=float)
        if not len(self.x) == len(self.s) == len(self.s0) == len(self.s1):
            raise ValueError("x, s, s0 and s1 must have equal length")
        if len(self.x) > 1 and not (np.all(np.diff(self.x) > 0) or np.all(np.diff(self.x) < 0)):
            raise ValueError("x must be strictly monotone")


@dataclass(frozen=True)
class SpectrumPeaks:
    peak_freqs: tuple
    peak_heights: tuple
    splitting: float
    resolution: float
    under_resolved: bool = False


@dataclass(frozen=True)
class EnsembleSpec:
    """Quasi-static field spread across an ensemble of NV centres."""

    n_members: int = 8
    b_z_sigma: float = 0.0
    b_perp_sigma: float = 0.0
    t2_dd: float = math.inf
    seed: int = 0

    def __post_init__(self):
        if self.n_members < 1:
            raise ValueError("n_members must be >= 1")
        if self.b_z_sigma < 0 or self.b_perp_sigma < 0:
            raise ValueError("field sigmas must be >= 0")
        if not self.t2_dd > 0:
            raise ValueError("t2_dd must be > 0 or inf")


# ---------------------------------------------------------------- helpers

def _workers(workers):
    if workers is None:
        return os.cpu_count() or 1
    return max(1, int(workers))


def _pmap(fn, tasks, workers=1):
    """Order-preserving map, optionally over processes."""
    tasks = list(tasks)
    n = min(_workers(workers), len(tasks))
    if n <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, *zip(*tasks)))


def _point_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _start_state(params, field, model, nuclear):
    system = _system(params, field, model)
    return QuantumState.product(system.labels, 0, nuclear)


def _pair_signal(core, params, field, noise, readout, model, nuclear, seed, index):
    """Run the ``X/2 ... X/2`` and ``X/2 ... -X/2`` wraps of ``core``."""
    state = _start_state(params, field, model, nuclear)
    rng = _point_rng(seed, index)
    out = []
    for last in (X, MX):
        seq = ramsey_wrap(core, X, last)
        final = evolve(state, seq, params, field, noise, model)
        out.append(readout_signal(final, readout, rng))
    return out[0], out[1]


def _meta(params, field, noise, readout, model, seed, **extra):
    m = {
        "params": params.to_config(),
        "field": field.to_config(),
        "noise": {k: (v if math.isfinite(v) else "inf") if isinstance(v, float) else v
                  for k, v in asdict(noise).items()},
        "readout": asdict(readout),
        "model": {k: (list(v) if isinstance(v, tuple) else v) for k, v in dict(model).items()},
        "seed": int(seed),
    }
    m.update(extra)
    return m


def _defaults(noise, readout, model):
    return (noise or NoiseModel(), readout or ReadoutModel(), dict(DEFAULT_MODEL, **(model or {})))


# ---------------------------------------------------------------- spectrum

def _spectrum_point(f_dd, n_p, params, field, noise, readout, model, nuclear, seed, index, grid, interpolate):
    tau = resonance_tau(params, field, f_target=f_dd)
    if interpolate:
        taus = quantum_interpolate(tau, grid, n_p // 8)
    elif grid:
        taus = round(tau / grid) * grid
    else:
        taus = tau
    core = xy8_block(n_p, taus, params.t_pi)
    return _pair_signal(core, params, field, noise, readout, model, nuclear, seed, index)


def spectrum_scan(f_range, n_p: int = 80, params: NvParams | None = None, field: FieldConfig | None = None,
                  noise=None, readout=None, model=None, nuclear=None, seed: int = 0, grid: float = 0.5e-9,
                  interpolate: bool = True, workers=1) -> ScanResult:
    """Normalized signal versus decoupling target frequency ``f_DD`` (Hz).

    For each ``f_DD`` the half spacing follows ``2 tau + t_pi = 1 / (2 f_DD)``.
    Off-grid spacings are realized by quantum interpolation over the
    ``n_p / 8`` XY8 units (``interpolate=True``), or rounded to ``grid``.
    ``grid=0`` keeps exact spacings. The nucleus starts unpolarized unless
    ``nuclear`` says otherwise.
    """
    params = params or NvParams()
    field = field or FieldConfig(0.28, 5e-3)
    noise, readout, model = _defaults(noise, readout, model)
    f = np.asarray(f_range, dtype=float)
    if f.size == 0 or np.any(f <= 0):
        raise ValueError("f_range must be non-empty and positive")
    tasks = [(float(fd), n_p, params, field, noise, readout, model, nuclear, seed, i, grid, interpolate)
             for i, fd in enumerate(f)]
    res = np.array(_pmap(_spectrum_point, tasks, workers))
    s = normalized_signal(res[:, 0], res[:, 1])
    meta = _meta(params, field, noise, readout, model, seed, name="spectrum", n_p=n_p, grid=grid,
                 interpolate=interpolate)
    return ScanResult(f, s, res[:, 0], res[:, 1], "f_dd_hz", meta)


def find_dips(scan: ScanResult, prominence: float = 0.15, merge: float = 2.0):
    """Resonance dips of a spectrum scan, as ``(positions, depths)``.

    The trace is scaled by its off-resonant baseline (the median), so a
    resonance shows up as a drop of ``S / baseline`` below 1 whatever the
    readout contrast. A dip must stand out by ``prominence`` in those units.
    An over-rotated resonance has side minima one or two filter linewidths
    away (linewidth ``2 f / n_p`` for ``n_p`` pulses); minima closer than
    ``merge`` linewidths to a deeper one are folded into it.
    """
    base = float(np.median(scan.s))
    if base == 0:
        return np.array([]), np.array([])
    c = scan.s / base
    idx, props = find_peaks(-c, prominence=prominence)
    cand = []
    for k, prom in zip(idx, props["prominences"]):
        # parabolic refinement on the three samples around the minimum
        if 0 < k < len(c) - 1:
            y0, y1, y2 = c[k - 1], c[k], c[k + 1]
            den = y0 - 2 * y1 + y2
            off = 0.5 * (y0 - y2) / den if den != 0 else 0.0
            off = max(-0.5, min(0.5, off))
            pos = scan.x[k] + off * (scan.x[k + 1] - scan.x[k - 1]) / 2
        else:
            pos = scan.x[k]
        cand.append((float(c[k]), float(pos), float(prom)))
    n_p = scan.meta.get("n_p")
    kept = []
    for depth, pos, prom in sorted(cand):  # deepest first
        width = 2 * pos / n_p if n_p else 0.0
        if all(abs(pos - q) > merge * width for _, q, _ in kept):
            kept.append((depth, pos, prom))
    kept.sort(key=lambda t: t[1])
    return np.array([k[1] for k in kept]), np.array([k[2] for k in kept])


# ---------------------------------------------------------------- oscillation

@dataclass(frozen=True)
class OscillationFit:
    period: float  # in pulses
    amplitude: float
    offset: float
    phase: float
    g: float  # Hz, from period and tau
    residual_rms: float


def _oscillation_point(n_p, tau, params, field, noise, readout, model, nuclear, seed, index):
    core = xy8_block(n_p, tau, params.t_pi)
    return _pair_signal(core, params, field, noise, readout, model, nuclear, seed, index)


def oscillation_scan(n_p_list, params: NvParams | None = None, field: FieldConfig | None = None,
                     branch: str = "-", noise=None, readout=None, model=None, nuclear=None, seed: int = 0,
                     grid: float = 0.5e-9, workers=1) -> ScanResult:
    """Normalized signal versus pulse number at the resonant spacing of ``branch``."""
    params = params or NvParams()
    field = field or FieldConfig(0.28, 5e-3)
    noise, readout, model = _defaults(noise, readout, model)
    n = np.asarray(list(n_p_list), dtype=int)
    if n.size == 0 or np.any(n % 8) or np.any(n < 0):
        raise ValueError("n_p_list must hold non-negative multiples of 8")
    tau = resonance_tau(params, field, branch)
    if grid:
        tau = round(tau / grid) * grid
    tasks = [(int(k), tau, params, field, noise, readout, model, nuclear, seed, i) for i, k in enumerate(n)]
    res = np.array(_pmap(_oscillation_point, tasks, workers))
    s = normalized_signal(res[:, 0], res[:, 1])
    meta = _meta(params, field, noise, readout, model, seed, name="oscillation", branch=branch, tau=tau)
    return ScanResult(n, s, res[:, 0], res[:, 1], "n_pulses", meta)


def _cosine(x, a, period, phase, c):
    return a * np.cos(2 * np.pi * x / period + phase) + c


def fit_oscillation(scan: ScanResult, tau: float | None = None) -> OscillationFit:
    """Least-squares cosine fit of ``S(N_p)``; ``g = 1 / (period * 2 tau)``.

    One fluorescence period is a full turn of the nuclear rotation angle.
    Raises RuntimeError (with the residual) when the fit does not converge.
    """
    x, y = scan.x, scan.s
    if len(x) < 5:
        raise ValueError("need at least 5 points to fit an oscillation")
    tau = scan.meta.get("tau") if tau is None else tau
    if tau is None:
        raise ValueError("tau unknown: pass it or use a scan that records it")
    # starting period from the dominant FFT bin of a uniformly resampled trace
    xu = np.linspace(x[0], x[-1], 4 * len(x))
    yu = np.interp(xu, x, y) - np.mean(y)
    spec = np.abs(np.fft.rfft(yu))
    freqs = np.fft.rfftfreq(len(xu), xu[1] - xu[0])
    k = int(np.argmax(spec[1:]) + 1)
    p0 = 1 / freqs[k]
    amp0 = 0.5 * (np.max(y) - np.min(y))
    best = None
    for ph0 in (0.0, np.pi / 2, np.pi, 3 * np.pi / 2):
        for pscale in (0.8, 1.0, 1.25):
            try:
                popt, _ = curve_fit(_cosine, x, y, p0=[amp0, p0 * pscale, ph0, np.mean(y)], maxfev=20000)
            except RuntimeError:
                continue
            r = float(np.sqrt(np.mean((_cosine(x, *popt) - y) ** 2)))
            if best is None or r < best[1]:
                best = (popt, r)
    if best is None:
        raise RuntimeError("cosine fit did not converge")
    (a, period, phase, c), rms = best
    if a < 0:
        a, phase = -a, phase + np.pi
    period = abs(period)
    g = 1.0 / (period * 2 * tau)
    return OscillationFit(float(period), float(a), float(c), float(phase % (2 * np.pi)), float(g), rms)


# ---------------------------------------------------------------- coupling map

@dataclass
class CouplingMap:
    rows: np.ndarray  # b_z (T) or stage y (m)
    cols: np.ndarray  # b_perp (T) or stage x (m)
    g_abs: np.ndarray  # Hz; NaN inside the anticrossing exclusion zone
    gslac_mask: np.ndarray
    mode: str = "field"


def coupling_map(b_z, b_perp=None, params: NvParams | None = None, stage=None) -> CouplingMap:
    """``|g|`` from the closed form over a field grid or a magnet-stage grid.

    Field mode: ``b_z`` and ``b_perp`` are 1-D arrays (T); rows follow
    ``b_z``. Stage mode: ``stage`` is a dict with ``x``, ``y`` (m), ``x0``,
    ``y0`` (zero-tilt point) and ``tilt`` (T/m); ``b_perp`` grows linearly
    with the planar distance from the zero-tilt point and ``b_z`` is a
    scalar. Cells in the exclusion zone are NaN and flagged in
    ``gslac_mask``.
    """
    params = params or NvParams()
    if stage is None:
        bz = np.atleast_1d(np.asarray(b_z, dtype=float))
        bp = np.atleast_1d(np.asarray(b_perp, dtype=float))
        if bz.size == 0 or bp.size == 0:
            raise ValueError("coupling grid is empty")
        g = np.full((bz.size, bp.size), np.nan)
        mask = np.zeros_like(g, dtype=bool)
        for i, z in enumerate(bz):
            for j, p in enumerate(bp):
                try:
                    g[i, j] = abs(effective_coupling(params, FieldConfig(float(z), float(p))).g)
                except GslacProximity:
                    mask[i, j] = True
        return CouplingMap(bz, bp, g, mask, "field")
    x = np.asarray(stage["x"], dtype=float)
    y = np.asarray(stage["y"], dtype=float)
    if x.size == 0 or y.size == 0:
        raise ValueError("stage grid is empty")
    x0, y0 = float(stage.get("x0", 0.0)), float(stage.get("y0", 0.0))
    tilt = float(stage.get("tilt", 1.0))
    bz = float(b_z)
    g = np.full((y.size, x.size), np.nan)
    mask = np.zeros_like(g, dtype=bool)
    for i, yy in enumerate(y):
        for j, xx in enumerate(x):
            bp = tilt * math.hypot(xx - x0, yy - y0)
            try:
                g[i, j] = abs(effective_coupling(params, FieldConfig(bz, bp)).g)
            except GslacProximity:
                mask[i, j] = True
    return CouplingMap(y, x, g, mask, "stage")


# ---------------------------------------------------------------- correlation

def _drop_electron_coherence(state):
    ms = np.array([m for m, _ in state.labels])
    return replace(state, rho=np.where(ms[:, None] == ms[None, :], state.rho, 0))


def _correlation_point(t_free, n_p, tau, params, field, noise, readout, model, nuclear, seed, index, dephase):
    state = _start_state(params, field, model, nuclear)
    rng = _point_rng(seed, index)
    core = xy8_block(n_p, tau, params.t_pi)
    first = evolve(state, ramsey_wrap(core, X, Y), params, field, noise, model)
    if dephase:
        first = _drop_electron_coherence(first)
    if t_free > 0:
        first = evolve(first, PulseSequence((delay(t_free),)), params, field, noise, model)
    out = []
    for last in (Y, MY):
        final = evolve(first, ramsey_wrap(core, X, last), params, field, noise, model)
        out.append(readout_signal(final, readout, rng))
    return out[0], out[1]


def correlation_n_p(params: NvParams, field: FieldConfig, branch: str = "-", theta: float = math.pi / 2) -> int:
    """Pulse number (multiple of 8) whose closed-form rotation is nearest ``theta``."""
    g = abs(effective_coupling(params, field).g)
    tau = resonance_tau(params, field, branch)
    if g == 0:
        raise ValueError("b_perp = 0: no conditional rotation")
    n = theta / (2 * math.pi * g * 2 * tau)
    return max(8, 8 * round(n / 8))


def correlation_scan(t_free_range, n_p: int | None = None, params: NvParams | None = None,
                     field: FieldConfig | None = None, branch: str = "-", noise=None, readout=None,
                     model=None, nuclear=None, seed: int = 0, grid: float = 0.5e-9, dephase: bool = True,
                     workers=1) -> ScanResult:
    """Signal versus free evolution between two entangling blocks.

    Each block is ``X/2 - XY8(n_p) - Y/2``; the second block closes with
    ``Y/2`` (S0) or ``-Y/2`` (S1). ``n_p`` defaults to the pulse number
    giving a conditional rotation of about pi/2.

    With ``dephase`` the electron coherence left by the first block is
    discarded before the free evolution, as it is in a real centre whose
    inhomogeneous dephasing time is far shorter than ``t_free``. Without it
    a noiseless run also shows the electron precessing at the hyperfine
    offsets of its lines.
    """
    params = params or NvParams()
    field = field or FieldConfig(0.28, 5e-3)
    noise, readout, model = _defaults(noise, readout, model)
    t = np.asarray(t_free_range, dtype=float)
    if t.size == 0 or np.any(t < 0):
        raise ValueError("t_free_range must be non-empty and >= 0")
    if n_p is None:
        n_p = correlation_n_p(params, field, branch)
    tau = resonance_tau(params, field, branch)
    if grid:
        tau = round(tau / grid) * grid
    tasks = [(float(tf), n_p, tau, params, field, noise, readout, model, nuclear, seed, i, dephase)
             for i, tf in enumerate(t)]
    res = np.array(_pmap(_correlation_point, tasks, workers))
    s = normalized_signal(res[:, 0], res[:, 1])
    meta = _meta(params, field, noise, readout, model, seed, name="correlation", n_p=n_p, tau=tau, branch=branch,
                 dephase=dephase)
    return ScanResult(t, s, res[:, 0], res[:, 1], "t_free_s", meta)


def fft_spectrum(trace: ScanResult, n_peaks: int = 2, pad: int = 4, min_rel_height: float = 0.1) -> SpectrumPeaks:
    """Peak frequencies of a uniformly sampled trace.

    Mean-subtracted, Hann-windowed, zero-padded ``pad`` times; peaks are
    local maxima refined by a parabola through the log-magnitude. The
    ``n_peaks`` tallest peaks above ``min_rel_height`` of the maximum are
    returned in ascending frequency; ``splitting`` is the spacing of the
    two tallest. The result is flagged ``under_resolved`` when the span is
    shorter than three periods of that splitting.
    """
    x = np.asarray(trace.x, dtype=float)
    y = np.asarray(trace.s, dtype=float)
    if len(x) < 4:
        raise ValueError("trace too short for a spectrum")
    dt = np.diff(x)
    if not np.allclose(dt, dt[0], rtol=1e-6, atol=0):
        raise ValueError("fft_spectrum needs uniform sampling")
    dt = dt[0]
    y = (y - y.mean()) * np.hanning(len(y))
    n = pad * len(y)
    mag = np.abs(np.fft.rfft(y, n))
    freqs = np.fft.rfftfreq(n, dt)
    span = x[-1] - x[0]
    resolution = 1.0 / span if span > 0 else math.inf
    if not np.any(mag > 0):
        return SpectrumPeaks((), (), math.nan, resolution, False)
    idx, _ = find_peaks(mag, height=min_rel_height * mag.max())
    refined = []
    for k in idx:
        if 0 < k < len(mag) - 1:
            a, b, c = np.log(mag[k - 1:k + 2] + 1e-300)
            den = a - 2 * b + c
            off = 0.5 * (a - c) / den if den != 0 else 0.0
            height = math.exp(b - 0.25 * (a - c) * off)
        else:
            off, height = 0.0, mag[k]
        refined.append((freqs[k] + off * (freqs[1] - freqs[0]), float(height)))
    refined.sort(key=lambda t: -t[1])
    top = sorted(refined[:n_peaks])
    fs = tuple(float(f) for f, _ in top)
    hs = tuple(h for _, h in top)
    if len(refined) >= 2:
        splitting = abs(refined[0][0] - refined[1][0])
        under = span < 3.0 / splitting
    else:
        splitting, under = math.nan, False
    return SpectrumPeaks(fs, hs, float(splitting), resolution, bool(under))


# ---------------------------------------------------------------- ensemble

def ensemble_average(scan_fn, ensemble: EnsembleSpec, params: NvParams | None = None,
                     field: FieldConfig | None = None, noise=None, **scan_kwargs) -> ScanResult:
    """Average a scan over NV centres with Gaussian field offsets.

    ``scan_fn`` is one of the scan functions of this module. Member ``k``
    sees ``b_z + N(0, b_z_sigma)`` and ``|b_perp + N(0, b_perp_sigma)|``,
    the ensemble ``t2_dd``, and seed ``(ensemble.seed, k)``. The raw pairs
    are averaged and then normalized.
    """
    params = params or NvParams()
    field = field or FieldConfig(0.28, 5e-3)
    noise = noise or NoiseModel()
    if math.isfinite(ensemble.t2_dd):
        noise = replace(noise, t2_dd=ensemble.t2_dd)
    rng = np.random.default_rng(np.random.SeedSequence([int(ensemble.seed), 0xE5]))
    offsets = rng.normal(size=(ensemble.n_members, 2))
    s0 = s1 = None
    fields = []
    for k in range(ensemble.n_members):
        fk = FieldConfig(field.b_z + ensemble.b_z_sigma * offsets[k, 0],
                         abs(field.b_perp + ensemble.b_perp_sigma * offsets[k, 1]), field.azimuth)
        fields.append(fk.to_config())
        member_seed = int(np.random.SeedSequence([int(ensemble.seed), k]).generate_state(1)[0])
        r = scan_fn(params=params, field=fk, noise=replace(noise, seed=member_seed), seed=member_seed, **scan_kwargs)
        s0 = r.s0.copy() if s0 is None else s0 + r.s0
        s1 = r.s1.copy() if s1 is None else s1 + r.s1
        x, x_name, meta = r.x, r.x_name, r.meta
    s0 /= ensemble.n_members
    s1 /= ensemble.n_members
    meta = dict(meta, ensemble=asdict(ensemble) | {"t2_dd": ensemble.t2_dd if math.isfinite(ensemble.t2_dd) else "inf"},
                member_fields=fields, field=field.to_config())
    return ScanResult(x, normalized_signal(s0, s1), s0, s1, x_name, meta)


# ---------------------------------------------------------------- transfer gate

def u_trans(theta: float) -> np.ndarray:
    """Ideal transfer propagator on ``|e n>`` = 00, 01, 10, 11."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[1, 0, 0, 0], [0, -1j * c, s, 0], [0, s, -1j * c, 0], [0, 0, 0, -1]], dtype=complex)


def _qubit_indices(system, pair):
    # |0_e> = m_S 0, |1_e> = m_S -1; |0_n>, |1_n> = pair[0], pair[1]
    return [system.labels.index((ms, mi)) for ms in (0, -1) for mi in pair]


def unit_rotation_angle(params: NvParams, field: FieldConfig, tau: float, branch: str = "-") -> float:
    """Conditional nuclear rotation angle of one simulated XY8 unit (rad).

    Compares the nuclear blocks of the unit propagator in ``m_S = 0`` and
    ``m_S = -1``; their relative rotation is twice the conditional angle.
    """
    pair = branch_pair(params, field, branch)
    system = _system(params, field, {"dim": 9, "nuclear_pair": pair, "drive": "pair"})
    u = system.propagator(xy8_block(8, tau, params.t_pi))
    i0 = [system.labels.index((0, m)) for m in pair]
    i1 = [system.labels.index((-1, m)) for m in pair]
    w = u[np.ix_(i1, i1)].conj().T @ u[np.ix_(i0, i0)]
    w = w / np.sqrt(np.linalg.det(w))
    return float(np.arccos(np.clip(abs(np.trace(w).real) / 2, 0.0, 1.0)))


def calibrate_cr_plan(params: NvParams, field: FieldConfig, theta: float = math.pi / 2, branch: str = "-",
                      grid: float = 0.5e-9, n_p: int | None = None) -> GatePlan:
    """Conditional-rotation plan tuned on the simulator rather than the closed form.

    ``n_p`` is the multiple of 8 whose simulated rotation at ``field`` is
    nearest ``theta``; ``b_perp`` is then adjusted (secant steps on the
    simulated unit angle, spacing held fixed) to hit ``theta``.
    """
    tau = round(resonance_tau(params, field, branch) / grid) * grid if grid else resonance_tau(params, field, branch)
    phi = unit_rotation_angle(params, field, tau, branch)
    if phi <= 0:
        raise ValueError("no conditional rotation at this field (b_perp = 0?)")
    if n_p is None:
        n_p = max(8, 8 * round(theta / phi))
    b_perp = field.b_perp * theta / (phi * n_p / 8)
    for _ in range(4):
        ang = unit_rotation_angle(params, FieldConfig(field.b_z, b_perp, field.azimuth), tau, branch) * n_p / 8
        if abs(ang - theta) < 1e-9:
            break
        b_perp *= theta / ang
    ang = unit_rotation_angle(params, FieldConfig(field.b_z, b_perp, field.azimuth), tau, branch) * n_p / 8
    total = n_p * (2 * tau + params.t_pi)
    g = ang / (2 * math.pi * 2 * tau * n_p)
    return GatePlan(n_p, tau, ang, total, abs(ang - theta), params.t_pi, field.b_z, b_perp, g, branch)


def _transfer_sequence(plan, params, grid, variant="three_pulse"):
    nu = branch_frequency(params, plan.field, plan.branch)
    tz = z_half_duration(plan, nu, grid=grid)
    return transfer_circuit(plan, tz, variant=variant)


def transfer_unitary(plan: GatePlan, params: NvParams, field: FieldConfig | None = None,
                     grid: float = 0.5e-9) -> tuple:
    """Simulated transfer circuit restricted to the two-qubit subspace.

    Returns ``(u4, leakage, seq)``; ``leakage`` is the worst population loss
    out of the subspace over its four basis states.
    """
    field = field or plan.field
    pair = branch_pair(params, plan.field, plan.branch)
    seq = _transfer_sequence(plan, params, grid)
    system = _system(params, field, {"dim": 9, "nuclear_pair": pair, "drive": "pair"})
    u = system.propagator(seq)
    idx = _qubit_indices(system, pair)
    u4 = u[np.ix_(idx, idx)]
    leakage = float(1 - np.min(np.sum(np.abs(u4) ** 2, axis=0)))
    return u4, leakage, seq


@dataclass(frozen=True)
class TransferRow:
    theta: float
    b_perp: float
    p0: float
    p1: float
    p0_expected: float
    p1_expected: float
    fidelity: float

    @property
    def error(self) -> float:
        return max(abs(self.p0 - self.p0_expected), abs(self.p1 - self.p1_expected))


def transfer_fidelity(theta_list, params: NvParams | None = None, field: FieldConfig | None = None,
                      c=(0.0, 1.0), branch: str = "-", grid: float = 0.5e-9, plan: GatePlan | None = None):
    """Nuclear populations after the transfer circuit versus conditional angle.

    The circuit timing is the calibrated pi/2 plan at ``field``; a target
    ``theta`` is reached by scaling ``b_perp`` (the coupling is linear in
    it) with the timing unchanged. The input is
    ``(c0 |0_e> + c1 |1_e>) |0_n>``; populations are compared with
    ``p0 = |c0|^2 + |c1|^2 cos^2 theta`` and ``p1 = |c1|^2 sin^2 theta``.
    ``fidelity`` is the classical fidelity of the two distributions.
    """
    params = params or NvParams()
    field = field or FieldConfig(0.28, 5e-3)
    plan = plan or calibrate_cr_plan(params, field, math.pi / 2, branch, grid)
    seq = _transfer_sequence(plan, params, grid)
    pair = branch_pair(params, plan.field, plan.branch)
    c0, c1 = complex(c[0]), complex(c[1])
    norm = math.sqrt(abs(c0) ** 2 + abs(c1) ** 2)
    c0, c1 = c0 / norm, c1 / norm
    rows = []
    for theta in theta_list:
        theta = float(theta)
        if theta < 0:
            raise ValueError("theta must be >= 0")
        b_perp = plan.b_perp * theta / plan.theta
        if theta > 0:
            for _ in range(4):
                ang = unit_rotation_angle(params, FieldConfig(plan.b_z, b_perp), plan.tau, plan.branch) * plan.n_p / 8
                if abs(ang - theta) < 1e-9:
                    break
                b_perp *= theta / ang
        fk = FieldConfig(plan.b_z, b_perp)
        system = _system(params, fk, {"dim": 9, "nuclear_pair": pair, "drive": "pair"})
        psi = np.zeros(system.dim, dtype=complex)
        psi[system.labels.index((0, pair[0]))] = c0
        psi[system.labels.index((-1, pair[0]))] = c1
        out = system.propagator(seq) @ psi
        pops = np.abs(out) ** 2
        p1 = float(sum(pops[k] for k, (_, mi) in enumerate(system.labels) if mi == pair[1]))
        p0 = float(sum(pops[k] for k, (_, mi) in enumerate(system.labels) if mi == pair[0]))
        e1 = abs(c1) ** 2 * math.sin(theta) ** 2
        e0 = abs(c0) ** 2 + abs(c1) ** 2 * math.cos(theta) ** 2
        fid = (math.sqrt(max(p0, 0) * e0) + math.sqrt(max(p1, 0) * e1)) ** 2
        rows.append(TransferRow(theta, b_perp, p0, p1, e0, e1, fid))
    return rows


@dataclass(frozen=True)
class GateTimeReport:
    items: dict
    total: float
    variant: str

    def text(self) -> str:
        lines = [f"{k:<22s} {v * 1e6:9.4f} us" for k, v in self.items.items()]
        lines.append(f"{'total':<22s} {self.total * 1e6:9.4f} us (paper: {REFERENCE_TRANSFER_S * 1e6:.1f} us)")
        return "\n".join(lines)


def estimate_gate_time(plan: GatePlan, params: NvParams | None = None, variant: str = "three_pulse",
                       t_cr: float | None = None, z_duration: float | None = None,
                       t_half: float | None = None) -> GateTimeReport:
    """Itemized duration of the transfer circuit.

    ``t_cr`` overrides the CR block length (default ``n_p (2 tau + t_pi)``),
    ``z_duration`` the nuclear Z segment (default: the quarter-turn rule at
    the plan's field) and ``t_half`` the pi/2 pulse length (default
    ``t_pi / 2``). ``four_pulse`` counts four pi/2 pulses instead of three.
    """
    params = params or NvParams()
    if plan.theta and abs(plan.theta - math.pi / 2) > 0.05:
        raise ValueError(f"gate-time accounting needs a pi/2 plan, got theta={plan.theta:.4f}")
    if variant not in ("three_pulse", "four_pulse"):
        raise ValueError(f"unknown transfer variant {variant!r}")
    t_cr = plan.n_p * (2 * plan.tau + plan.t_pi) if t_cr is None else t_cr
    t_half = plan.t_pi / 2 if t_half is None else t_half
    if z_duration is None:
        nu = branch_frequency(params, plan.field, plan.branch)
        z_duration = z_half_duration(plan, nu)
    n_half = 3 if variant == "three_pulse" else 4
    items = {
        "CR block 1": t_cr,
        "CR block 2": t_cr,
        "nuclear Z segment": z_duration,
        f"pi/2 pulses (x{n_half})": n_half * t_half,
    }
    return GateTimeReport(items, math.fsum(items.values()), variant)


def flip_infidelity_scaling(epsilons, params: NvParams | None = None, field: FieldConfig | None = None,
                            theta: float = math.pi, branch: str = "-", grid: float = 0.5e-9):
    """Gate infidelity caused by a relative coupling error ``eps``.

    A CR(theta) plan is calibrated at ``field``; the coupling is then
    perturbed to ``g (1 + eps)`` by scaling ``b_perp`` and the nuclear flip
    is rerun from ``|m_S = 0, first level of the pair>``. Returns
    ``(eps, 1 - |<psi_0|psi_eps>|^2)`` arrays and the log-log slope.
    """
    params = params or NvParams()
    field = field or FieldConfig(0.28, 5e-3)
    plan = calibrate_cr_plan(params, field, theta, branch, grid)
    pair = branch_pair(params, plan.field, branch)
    seq = xy8_block(plan.n_p, plan.tau, params.t_pi)

    def final(b_perp):
        system = _system(params, FieldConfig(plan.b_z, b_perp), {"dim": 9, "nuclear_pair": pair, "drive": "pair"})
        psi = np.zeros(system.dim, dtype=complex)
        psi[system.labels.index((0, pair[0]))] = 1
        return system.propagator(seq) @ psi

    ref = final(plan.b_perp)
    eps = np.asarray(list(epsilons), dtype=float)
    infid = np.array([1 - abs(np.vdot(ref, final(plan.b_perp * (1 + e)))) ** 2 for e in eps])
    slope = float(np.polyfit(np.log(eps), np.log(infid), 1)[0])
    return eps, infid, slope


def transfer_distance(plan: GatePlan, params: NvParams, grid: float = 0.5e-9):
    """Phase-optimized distance of the simulated circuit to ``u_trans(plan.theta)``."""
    u4, leakage, _ = transfer_unitary(plan, params, grid=grid)
    d, _ = phase_optimized_distance(u4, u_trans(plan.theta))
    return d, leakage


# ---------------------------------------------------------------- output

def save_scan(scan: ScanResult, path, config=None) -> tuple:
    """Write ``<path>.csv`` (unit-tagged header) and ``<path>.json`` (metadata)."""
    base = os.fspath(path)
    if base.endswith(".csv"):
        base = base[:-4]
    csv_path, json_path = base + ".csv", base + ".json"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([scan.x_name, "s0_counts", "s1_counts", "signal_norm"])
        for row in zip(scan.x, scan.s0, scan.s1, scan.s):
            w.writerow([repr(float(v)) for v in row])
    side = {"meta": scan.meta, "config": config, "version": __version__, "rows": len(scan.x)}
    with open(json_path, "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True, default=_json_default)
    return csv_path, json_path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    return str(o)
