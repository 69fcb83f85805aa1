"""Circuit transient simulation by physics-informed neural networks.

The circuit DAE built from a netlist is solved either by training a
time-input network on the residual (:mod:`circuitpinn.pinn`) or by a
conventional Newton/implicit-integration solver (:mod:`circuitpinn.refsolver`).
"""

from .errors import (
    CircuitPinnError,
    ConfigError,
    ConvergenceError,
    DomainError,
    NetlistSyntaxError,
    NonFiniteError,
    StructureError,
    ValidationError,
)
from .netlist import Circuit, eval_source, parse
from .pinn import MlpParams, TrainConfig, infer, init_network, train
from .refsolver import StepConfig, dc_operating_point, transient
from .system import DaeSystem, build_system
from .waveform import Waveform, compare, read_csv, write_csv

__version__ = "0.1.0"
