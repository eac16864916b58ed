"""Off-the-grid sparse spike recovery: OP-COMP initialisation, projected gradient
descent and projected block coordinate descent, with diagnostics and a benchmark
harness."""
from .bcd import BcdConfig, BlockPartition, bcd_run, select_blocks
from .comp import CompConfig, best_atom, op_comp, refit_amplitudes
from .descent import DescentConfig, DescentOutcome, merge_projection, pgd, projected_descent
from .objective import BlockGradient, Objective
from .operators import (
    DimensionError,
    FourierOperator,
    FourierOperatorConfig,
    MeasurementOperator,
    MultiPlanePSFConfig,
    MultiPlanePSFOperator,
    operator_from_config,
)
from .spikes import (
    Dipole,
    SeparationModel,
    Spike,
    SpikeTrain,
    dipoles_are_separated,
    min_pairwise_separation,
    satisfies_separation,
)
from .trace import RunTrace, TraceRow

__version__ = "0.1.0"

__all__ = [
    "BcdConfig", "BlockPartition", "bcd_run", "select_blocks",
    "CompConfig", "best_atom", "op_comp", "refit_amplitudes",
    "DescentConfig", "DescentOutcome", "merge_projection", "pgd", "projected_descent",
    "BlockGradient", "Objective",
    "DimensionError", "FourierOperator", "FourierOperatorConfig", "MeasurementOperator",
    "MultiPlanePSFConfig", "MultiPlanePSFOperator", "operator_from_config",
    "Dipole", "SeparationModel", "Spike", "SpikeTrain", "dipoles_are_separated",
    "min_pairwise_separation", "satisfies_separation",
    "RunTrace", "TraceRow",
]
