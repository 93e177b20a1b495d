"""Simulation of electron-conditional control of the nitrogen-14 nuclear spin
of an NV centre by resonant dynamical decoupling under a weak off-axis field.
"""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    DegeneracyError,
    FieldConfig,
    NvParams,
    build_full_hamiltonian,
    dressed_basis,
    nuclear_transition_frequency,
    reduce_subspace,
)
from .theory import (  # noqa: E402
    EffectiveCoupling,
    GatePlan,
    GslacProximity,
    Infeasible,
    NegativeTau,
    branch_frequency,
    branch_pair,
    design_gate,
    enumerate_plans,
    effective_coupling,
    numeric_coupling_oracle,
    resonance_tau,
    rotation_angle,
)
from .sequence import (  # noqa: E402
    PulseElement,
    PulseSequence,
    correlation_sequence,
    from_text,
    quantize_timing,
    quantum_interpolate,
    ramsey_wrap,
    to_text,
    transfer_circuit,
    xy8_block,
    z_half_duration,
)
from .propagator import (  # noqa: E402
    ConvergenceError,
    NoiseModel,
    QuantumState,
    ReadoutModel,
    apply_dephasing,
    evolve,
    normalized_signal,
    readout_signal,
    sequence_propagator,
)
