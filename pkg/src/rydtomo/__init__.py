"""Excitation transport through small Rydberg networks and its machine-learned inversion.

The package simulates a single excitation injected into a randomly arranged
cluster of atoms, sweeps two probe atoms around the cluster to collect
occupation probabilities, and trains models that read the cluster size, the
atom coordinates and the effective network operators back out of those
probabilities.
"""

from .geometry import (
    BoxLayout,
    NetworkRealization,
    ProbeConfiguration,
    assemble_realization,
    probe_trajectory,
    sample_box_layout,
)
from .physics import (
    EnvironmentRealization,
    PhysicalConstants,
    build_hamiltonian,
    dephasing_rates,
    from_mhz,
    rescale_decoherence,
    sample_environment,
    to_mhz,
)
from .dynamics import (
    PropagationSettings,
    initial_excitation,
    measure_output,
    propagate,
    propagate_elementwise,
    transport_trace,
)

__version__ = "0.1.0"
