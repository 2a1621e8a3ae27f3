"""Snapshot-driven reduced-order modelling of deforming point clouds.

POD compresses displacement snapshots, a Tikhonov-regularized DMD fit
identifies linear reduced dynamics from velocity snapshots, and barycentric
interpolation over a two-parameter plane predicts models at unseen couples.
"""

__version__ = "0.1.0"

from .errors import (DataError, DegenerateDataError, FormatError, IncompatibleDataError,
                     InsufficientDataError, NoTriangleError, NumericFailure,
                     RankDeficiencyError, RomError, RomIOError, ShapeError, ValidationError)
from .snapshots import (ParamCouple, RomRecord, SnapshotSet, read_rom_record,
                        read_snapshot_set, write_rom_record, write_snapshot_set)
from .pod import PodBasis, build_basis, ric_curve
from .dmd import (ReducedData, assemble_reduced_data, identify_plain, identify_tikhonov,
                  lcurve_sweep, time_residual)
from .model import (RomModel, Trajectory, continuous_stability, discrete_stability,
                    propagate_euler, propagate_exact, train)
from .metrics import compare_model, learning_time_study, modified_hausdorff
from .params import ParamDatabase, barycentric_coords, find_triangle, predict_trajectory, rom_at
from .synth import ToyCapsule, generate_linear, generate_toy_capsule, make_linear_oracle
from .config import RunConfig

__all__ = [
    "__version__",
    "RomError", "ValidationError", "ShapeError", "FormatError", "DataError",
    "InsufficientDataError", "DegenerateDataError", "NoTriangleError",
    "IncompatibleDataError", "NumericFailure", "RankDeficiencyError", "RomIOError",
    "ParamCouple", "SnapshotSet", "RomRecord", "read_snapshot_set", "write_snapshot_set",
    "read_rom_record", "write_rom_record",
    "PodBasis", "build_basis", "ric_curve",
    "ReducedData", "assemble_reduced_data", "identify_plain", "identify_tikhonov",
    "lcurve_sweep", "time_residual",
    "RomModel", "Trajectory", "train", "propagate_exact", "propagate_euler",
    "discrete_stability", "continuous_stability",
    "compare_model", "learning_time_study", "modified_hausdorff",
    "ParamDatabase", "find_triangle", "barycentric_coords", "predict_trajectory", "rom_at",
    "ToyCapsule", "generate_toy_capsule", "make_linear_oracle", "generate_linear",
    "RunConfig",
]
