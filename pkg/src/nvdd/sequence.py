"""Timed microwave pulse sequences: XY8 blocks, Ramsey wrapping, correlation
and population-transfer protocols, timing quantization and quantum
interpolation of pulse spacings.

Phases are in radians with 0 = X, pi/2 = Y, pi = -X, 3pi/2 = -Y.
Durations are in seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

__all__ = [
    "PULSE",
    "DELAY",
    "PulseElement",
    "PulseSequence",
    "XY8_PHASES",
    "xy8_block",
    "ramsey_wrap",
    "correlation_sequence",
    "transfer_circuit",
    "z_half_duration",
    "quantize_timing",
    "quantum_interpolate",
    "to_text",
    "from_text",
]

PULSE = "pulse"
DELAY = "delay"

X, Y, MX, MY = 0.0, math.pi / 2, math.pi, 3 * math.pi / 2
XY8_PHASES = (X, Y, X, Y, Y, X, Y, X)


@dataclass(frozen=True)
class PulseElement:
    """One rectangular microwave pulse or one free-evolution delay."""

    kind: str
    duration: float
    phase: float = 0.0
    rabi_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in (PULSE, DELAY):
            raise ValueError(f"unknown element kind {self.kind!r}")
        if not self.duration >= 0:
            raise ValueError(f"duration must be >= 0, got {self.duration}")
        if self.kind == PULSE and self.rabi_rate <= 0:
            raise ValueError("pulses need a positive rabi_rate")

    @property
    def area(self) -> float:
        """Rotation in turns of 2*pi (1/2 is a pi pulse)."""
        return self.rabi_rate * self.duration if self.kind == PULSE else 0.0


def pulse(duration, phase, rabi_rate):
    return PulseElement(PULSE, duration, phase % (2 * math.pi), rabi_rate)


def delay(duration):
    return PulseElement(DELAY, duration)


@dataclass(frozen=True)
class PulseSequence:
    elements: tuple = ()
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def duration(self) -> float:
        return math.fsum(e.duration for e in self.elements)

    @property
    def pulses(self):
        return [e for e in self.elements if e.kind == PULSE]

    def __add__(self, other: "PulseSequence") -> "PulseSequence":
        return PulseSequence(self.elements + other.elements, {**self.metadata, **other.metadata})

    def __len__(self):
        return len(self.elements)


def _check_n_p(n_p):
    if n_p < 0 or n_p % 8:
        raise ValueError(f"n_p must be a non-negative multiple of 8, got {n_p}")


def xy8_block(n_p: int, tau, t_pi: float, rabi_rate: float | None = None, initial_half: bool = True) -> PulseSequence:
    """XY8 train of ``n_p`` pi pulses, ``tau - pi - 2tau - pi - ... - pi - tau``.

    ``tau`` is the half spacing between pulse edges. It may also be a list
    with one value per 8-pulse unit (quantum interpolation). With
    ``initial_half=False`` each slot is ``pi - 2tau`` instead (same duration,
    pulses not centred).
    """
    _check_n_p(n_p)
    n_units = n_p // 8
    taus = [float(tau)] * n_units if isinstance(tau, (int, float)) else [float(t) for t in tau]
    if len(taus) != n_units:
        raise ValueError(f"need {n_units} per-unit tau values, got {len(taus)}")
    if any(t <= 0 for t in taus):
        raise ValueError("tau must be positive")
    rabi = 0.5 / t_pi if rabi_rate is None else rabi_rate

    els = []
    if initial_half:
        carry = 0.0
        for t in taus:
            for ph in XY8_PHASES:
                els.append(delay(carry + t))
                els.append(pulse(t_pi, ph, rabi))
                carry = t
        if n_units:
            els.append(delay(carry))
    else:
        for t in taus:
            for ph in XY8_PHASES:
                els.append(pulse(t_pi, ph, rabi))
                els.append(delay(2 * t))
    meta = {"name": "xy8", "n_p": n_p, "tau": taus[0] if len(set(taus)) == 1 else taus, "t_pi": t_pi}
    return PulseSequence(tuple(els), meta)


def ramsey_wrap(core: PulseSequence, first_phase: float = X, last_phase: float = X,
                t_half: float | None = None, rabi_rate: float | None = None) -> PulseSequence:
    """Sandwich ``core`` between two pi/2 pulses with the given phases."""
    for ph in (first_phase, last_phase):
        if min(abs(ph - q) for q in (X, Y, MX, MY, 2 * math.pi)) > 1e-12:
            raise ValueError(f"pi/2 phases must be multiples of pi/2, got {ph}")
    if t_half is None:
        t_half = core.metadata.get("t_pi", 35e-9) / 2
    rabi = 0.25 / t_half if rabi_rate is None else rabi_rate
    els = (pulse(t_half, first_phase, rabi),) + core.elements + (pulse(t_half, last_phase, rabi),)
    meta = dict(core.metadata)
    meta.update(first_phase=first_phase, last_phase=last_phase)
    return PulseSequence(els, meta)


def correlation_sequence(n_p: int, tau, t_free: float, t_pi: float = 35e-9,
                         last_phase: float = Y) -> PulseSequence:
    """``[X/2 - XY8 - Y/2] - t_free - [X/2 - XY8 - Y/2]``.

    ``last_phase`` sets the final pi/2 pulse (flip it by pi for the
    reference measurement).
    """
    if t_free < 0:
        raise ValueError("t_free must be >= 0")
    core = xy8_block(n_p, tau, t_pi)
    first = ramsey_wrap(core, X, Y)
    second = ramsey_wrap(core, X, last_phase)
    mid = (delay(t_free),) if t_free > 0 else ()
    meta = dict(core.metadata, name="correlation", t_free=t_free)
    return PulseSequence(first.elements + mid + second.elements, meta)


def transfer_circuit(plan, z_half_duration: float, variant: str = "three_pulse", tol: float = 0.05,
                     pi_half_phases=(Y, X, MY), z_mode: str = "echo", edge_trim: float | None = None) -> PulseSequence:
    """Electron-to-nucleus population transfer.

    ``three_pulse``: ``pi/2 - CR(theta) - pi/2 - Z/2 - CR(theta) - pi/2`` with
    three electron pi/2 pulses; ``four_pulse`` adds a fourth pi/2 after the
    nuclear Z segment (timing accounting only). Each ``CR(theta)`` is the
    resonant XY8 block of ``plan``.

    The nuclear Z/2 is a free-precession segment of total length
    ``z_half_duration``. With ``z_mode="echo"`` it is split as
    ``d/2 - pi - d - pi - d/2`` so the electron-conditional (hyperfine) part
    of the precession cancels and only the average nuclear phase remains;
    ``"delay"`` is a bare wait. ``edge_trim`` shortens the outer delays of
    each CR block so spacings are measured from the pi/2 pulse centres
    (default ``t_pi/4``).
    """
    if abs(plan.theta - math.pi / 2) > tol:
        raise ValueError(f"transfer needs a conditional pi/2 plan, got theta={plan.theta:.4f}")
    if variant not in ("three_pulse", "four_pulse"):
        raise ValueError(f"unknown transfer variant {variant!r}")
    if z_mode not in ("echo", "delay"):
        raise ValueError(f"unknown z_mode {z_mode!r}")
    t_pi = plan.t_pi
    t_half = t_pi / 2
    rabi = 0.25 / t_half
    trim = t_pi / 4 if edge_trim is None else edge_trim
    cr = list(xy8_block(plan.n_p, plan.tau, t_pi).elements)
    if trim:
        if trim >= cr[0].duration:
            raise ValueError("edge_trim exceeds the first CR delay")
        cr[0] = delay(cr[0].duration - trim)
        cr[-1] = delay(cr[-1].duration - trim)
    if z_mode == "echo":
        if z_half_duration < 2 * t_pi:
            raise ValueError(f"echo Z segment needs >= 2*t_pi, got {z_half_duration:.3g} s")
        d = (z_half_duration - 2 * t_pi) / 2
        zseg = [delay(d / 2), pulse(t_pi, X, rabi), delay(d), pulse(t_pi, X, rabi), delay(d / 2)]
        zseg = [e for e in zseg if e.duration > 0]
    else:
        if z_half_duration < 0:
            raise ValueError("z_half_duration must be >= 0")
        zseg = [delay(z_half_duration)] if z_half_duration > 0 else []
    p1, p2, p3 = pi_half_phases
    els = [pulse(t_half, p1, rabi), *cr, pulse(t_half, p2, rabi), *zseg]
    if variant == "four_pulse":
        els.append(pulse(t_half, p2, rabi))
    els += [*cr, pulse(t_half, p3, rabi)]
    t_cr = math.fsum(e.duration for e in cr)
    meta = {"name": "transfer", "variant": variant, "n_p": plan.n_p, "tau": plan.tau, "t_pi": t_pi,
            "z_half_duration": z_half_duration, "z_mode": z_mode, "edge_trim": trim, "t_cr": t_cr}
    return PulseSequence(tuple(els), meta)


def z_half_duration(plan, nuclear_frequency: float, edge_trim: float | None = None,
                    minimum: float | None = None, grid: float | None = None) -> float:
    """Shortest Z-segment length that turns the second CR axis by a quarter turn.

    The nucleus precesses at ``nuclear_frequency`` (Hz) between the starts
    of the two CR blocks. The segment is chosen so that this start-to-start
    precession is a quarter turn modulo whole turns, which is the Z/2 of the
    circuit in the nuclear rotating frame. ``minimum`` defaults to
    ``2 * t_pi`` (room for the echo pulses). Keep the segment short: a long
    echo is itself a two-pulse decoupling filter and can hit a nuclear
    resonance.
    """
    if nuclear_frequency <= 0:
        raise ValueError("nuclear_frequency must be positive")
    t_pi = plan.t_pi
    trim = t_pi / 4 if edge_trim is None else edge_trim
    minimum = 2 * t_pi if minimum is None else minimum
    t_cr = plan.n_p * (2 * plan.tau + t_pi) - 2 * trim
    period = 1.0 / nuclear_frequency
    fixed = t_cr + t_pi / 2
    target = (0.25 * period - fixed) % period
    if minimum - 0.02 * period <= target < minimum:
        target = minimum  # a phase slip below 0.13 rad beats a whole extra turn
    while target < minimum:
        target += period
    if grid:
        target = round(target / grid) * grid
    return target


def quantize_timing(seq: PulseSequence, grid: float = 0.5e-9) -> PulseSequence:
    """Round every element duration to the nearest multiple of ``grid``.

    Pulse Rabi rates are kept, so a rounded pulse changes its area.
    ``metadata['max_rounding_error']`` records the worst-case change.
    """
    if grid <= 0:
        raise ValueError("grid must be positive")
    out, worst = [], 0.0
    for e in seq.elements:
        d = round(e.duration / grid) * grid
        worst = max(worst, abs(d - e.duration))
        out.append(replace(e, duration=d))
    meta = dict(seq.metadata, grid=grid, max_rounding_error=max(worst, seq.metadata.get("max_rounding_error", 0.0)))
    return PulseSequence(tuple(out), meta)


def quantum_interpolate(tau_target: float, grid: float, n_blocks: int) -> list:
    """Grid-aligned per-block spacings whose running mean tracks ``tau_target``.

    Uses the two grid neighbours of the target and distributes the high
    value with Bresenham accumulation, so high blocks are maximally
    interleaved.
    """
    if grid <= 0:
        raise ValueError("grid must be positive")
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    k = math.floor(tau_target / grid + 1e-9)
    frac = tau_target / grid - k
    if frac < 1e-9 or frac > 1 - 1e-9:
        return [round(tau_target / grid) * grid] * n_blocks
    n_high = round(frac * n_blocks)
    lo, hi = k * grid, (k + 1) * grid
    taus, acc = [], 0
    for _ in range(n_blocks):
        acc += n_high
        if acc >= n_blocks:
            acc -= n_blocks
            taus.append(hi)
        else:
            taus.append(lo)
    return taus


def to_text(seq: PulseSequence) -> str:
    """One element per line: ``kind duration_ns phase_deg rabi_hz``."""
    lines = ["# kind duration_ns phase_deg rabi_hz"]
    for e in seq.elements:
        lines.append(f"{e.kind} {e.duration * 1e9:.6f} {math.degrees(e.phase):.6f} {e.rabi_rate:.6f}")
    return "\n".join(lines) + "\n"


def from_text(text: str) -> PulseSequence:
    els = []
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"line {ln}: expected 4 fields, got {len(parts)}")
        kind, dur, ph, rabi = parts
        els.append(PulseElement(kind, float(dur) * 1e-9, math.radians(float(ph)), float(rabi)))
    return PulseSequence(tuple(els))


def concat(parts: Iterable[PulseSequence], **meta) -> PulseSequence:
    els = []
    for p in parts:
        els.extend(p.elements)
    return PulseSequence(tuple(els), meta)
