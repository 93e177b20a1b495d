"""Invariant suite run by ``nvdd validate``.

Each check returns a :class:`Check` with a one-line detail string. The
sequences are short so the whole suite runs in well under a minute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .experiments import (
    calibrate_cr_plan,
    flip_infidelity_scaling,
    spectrum_scan,
    unit_rotation_angle,
)
from .model import FieldConfig, NvParams
from .propagator import (
    NoiseModel,
    QuantumState,
    ReadoutModel,
    _system,
    evolve,
    lab_frame_evolve,
    normalized_signal,
)
from .sequence import X, Y, PulseSequence, delay, pulse, ramsey_wrap, xy8_block
from .theory import branch_pair, effective_coupling, resonance_tau

__all__ = ["Check", "run_suite", "format_table", "CHECKS"]


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def _field():
    return FieldConfig(0.28, 5e-3)


def check_unitarity(params, field):
    worst = 0.0
    for model in ({"dim": 9, "drive": "pair"}, {"dim": 9, "drive": "center"}, {"dim": 4, "nuclear_pair": (1, 0)}):
        system = _system(params, field, model)
        tau = resonance_tau(params, field, "-")
        for seq in (xy8_block(16, tau, params.t_pi), ramsey_wrap(xy8_block(8, tau, params.t_pi))):
            u = system.propagator(seq)
            worst = max(worst, np.linalg.norm(u.conj().T @ u - np.eye(system.dim)))
    return Check("unitarity", worst < 1e-10, f"max |U^dag U - I| = {worst:.2e} (< 1e-10)")


def check_trace_hermiticity(params, field):
    noise = NoiseModel(t2_dd=2e-6, detuning_sigma=0.2e6, seed=3, n_samples=4)
    system = _system(params, field, {"dim": 9, "drive": "center"})
    tau = resonance_tau(params, field, "-")
    seq = ramsey_wrap(xy8_block(8, tau, params.t_pi))
    _, traj = evolve(system.initial_state(0, 0), seq, params, field, noise, {"dim": 9, "drive": "center"},
                     trajectory=True)
    worst = 0.0
    for s in traj:
        worst = max(worst, abs(np.trace(s.rho) - 1), np.max(np.abs(s.rho - s.rho.conj().T)))
    return Check("trace/Hermiticity", worst < 1e-10,
                 f"max deviation over {len(traj)} states = {worst:.2e} (< 1e-10)")


def check_off_resonance(params, field):
    plan = calibrate_cr_plan(params, field, math.pi)
    pair = branch_pair(params, field, "-")
    system = _system(params, plan.field, {"dim": 9, "nuclear_pair": pair, "drive": "pair"})
    psi = np.zeros(system.dim, dtype=complex)
    psi[system.labels.index((0, pair[0]))] = 1
    flips = {}
    for fac in (1.0, 0.9, 1.1):
        out = system.propagator(xy8_block(plan.n_p, plan.tau * fac, params.t_pi)) @ psi
        flips[fac] = float(sum(abs(out[k]) ** 2 for k, (_, mi) in enumerate(system.labels) if mi == pair[1]))
    ok = flips[0.9] <= 0.1 and flips[1.1] <= 0.1
    return Check("off-resonance decoupling", ok,
                 f"flip {flips[1.0]:.3f} on resonance, {flips[0.9]:.3f} / {flips[1.1]:.3f} at tau -/+10% (<= 0.1)")


def check_quadratic_scaling(params, field):
    _, _, slope = flip_infidelity_scaling(np.geomspace(1e-3, 3e-2, 6), params, field)
    return Check("quadratic error scaling", abs(slope - 2.0) <= 0.2, f"log-log slope {slope:.3f} (2.0 +/- 0.2)")


def check_normalization(params, field):
    rng = np.random.default_rng(11)
    s0, s1 = rng.uniform(10, 1000, 50), rng.uniform(10, 1000, 50)
    worst = 0.0
    for k in (1e-3, 7.0, 1e4):
        worst = max(worst, float(np.max(np.abs(normalized_signal(k * s0, k * s1) - normalized_signal(s0, s1)))))
    ok = worst < 1e-12 and normalized_signal(110, 90) == 0.1 and normalized_signal(5, 5) == 0
    return Check("normalization homogeneity", ok, f"max change under common scaling {worst:.1e}")


def check_determinism(params, field):
    kw = dict(n_p=16, params=params, field=field, readout=ReadoutModel(brightness_0=2e4, contrast=0.3, shot_noise=True),
              noise=NoiseModel(detuning_sigma=0.1e6, seed=5, n_samples=3), seed=42)
    freqs = (2.9e6, 3.0e6, 3.1e6)
    a, b = spectrum_scan(freqs, **kw), spectrum_scan(freqs, **kw)
    same = all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("x", "s", "s0", "s1"))
    return Check("determinism", same, "repeated seeded scan with shot noise is bit-identical" if same
                 else "repeated seeded scan differs")


def check_frame_consistency(params, field):
    r = 0.5 / params.t_pi
    t = params.t_pi
    seqs = {
        "pi": PulseSequence((pulse(t, X, r),)),
        "pi/2": PulseSequence((pulse(t / 2, X, r),)),
        "xy4": PulseSequence((pulse(t, X, r), delay(30e-9), pulse(t, Y, r), delay(30e-9),
                              pulse(t, X, r), delay(30e-9), pulse(t, Y, r))),
    }
    model = {"dim": 9, "drive": "center"}
    system = _system(params, field, model)
    worst = 0.0
    for mi in (0, 1):
        psi = np.zeros(system.dim, dtype=complex)
        psi[system.labels.index((0, mi))] = 1
        for seq in seqs.values():
            lab = lab_frame_evolve(psi, seq, params, field, model)
            rot = system.propagator(seq) @ psi
            worst = max(worst, float(np.max(np.abs(np.abs(lab) ** 2 - np.abs(rot) ** 2))))
    return Check("frame consistency", worst < 1e-3,
                 f"max population difference lab vs rotating {worst:.1e} at {r / 1e6:.1f} MHz Rabi (< 1e-3)")


def check_effective_theory(params, field):
    worst = 0.0
    for b_perp in (1e-3, 3e-3, 5e-3):
        f = FieldConfig(field.b_z, b_perp)
        tau = resonance_tau(params, f, "-")
        sim = unit_rotation_angle(params, f, tau, "-")
        g = abs(effective_coupling(params, f).g)
        worst = max(worst, abs(sim / (2 * math.pi * g * 16 * tau) - 1))
    return Check("effective-theory agreement", worst <= 0.1,
                 f"simulated XY8 unit angle vs 2 pi g T: max relative error {worst:.3f} (<= 0.1)")


def check_state(params, field):
    system = _system(params, field, {"dim": 9})
    s = QuantumState.product(system.labels, 0, None)
    try:
        s.check()
        return Check("state validity", True, "mixed nuclear product state is Hermitian, trace 1, PSD")
    except ValueError as e:
        return Check("state validity", False, str(e))


CHECKS = (
    check_unitarity,
    check_trace_hermiticity,
    check_state,
    check_off_resonance,
    check_quadratic_scaling,
    check_normalization,
    check_determinism,
    check_frame_consistency,
    check_effective_theory,
)


def run_suite(params: NvParams | None = None, field: FieldConfig | None = None, checks=CHECKS):
    params = params or NvParams()
    field = field or _field()
    return [c(params, field) for c in checks]


def format_table(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
    n = sum(r.passed for r in results)
    lines.append(f"{n}/{len(results)} checks passed")
    return "\n".join(lines)
