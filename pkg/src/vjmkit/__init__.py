"""Stiffness identification and virtual-joint modelling of parallel manipulators."""

from .errors import (
    DimensionMismatch,
    InputFormatError,
    InvalidParams,
    LinearizationWarning,
    NoConvergence,
    NoFeasibleBox,
    RankDeficientLoads,
    SingularConfiguration,
    SingularGeometry,
    SingularJacobian,
    TooFewNodes,
    Unreachable,
    VjmError,
)
from .spatial import (
    DeflectionScrew,
    Pose,
    Wrench,
    pseudoinverse,
    rotation_vector,
    skew,
    small_rotation,
    vec3,
)
from .model import (
    ActiveJoint,
    FixedTransform,
    ManipulatorModel,
    PassiveJoint,
    SerialChainModel,
    VirtualSpring,
    chain_jacobians,
    forward_geometry,
    load_manipulator,
    manipulator_from_dict,
    manipulator_to_dict,
    potential_hessians,
    save_manipulator,
)
from .fieldfit import (
    ComplianceEstimate,
    DisplacementField,
    LoadCase,
    RigidFit,
    check_units,
    estimate_sigma_pooled,
    filter_outliers,
    fit_covariances,
    fit_rigid_transform,
    identify_compliance,
    load_field,
    load_load_case,
    read_case_meta,
    read_field_csv,
    write_case_meta,
    write_field_csv,
)
from .statics import (
    EquilibriumState,
    StiffnessResult,
    deflection_under_load,
    pose_error,
    solve_assembly,
    solve_chain_equilibrium,
    stiffness_loaded,
    stiffness_unloaded,
)
from .performance import (
    ActuatorLimits,
    DynamicsInput,
    EffortProfile,
    TransmissionFactors,
    VoxelMask,
    WorkspaceBox,
    accuracy_bounds,
    box_velocity_factors,
    directional_factor,
    force_bounds,
    input_efforts,
    inscribe_box,
    singular_value_factors,
)
from .orthoglide import (
    ErrorMap,
    OrthoglideParams,
    StudyGrid,
    SweepResult,
    SweepSample,
    build_orthoglide,
    direction_sweep,
    error_map,
    forward_position,
    inverse_kinematics,
    load_orthoglide_params,
    magnitude_sweep,
    params_from_dict,
    params_to_dict,
    place_at,
    save_orthoglide_params,
    sweep_angles,
    write_error_map_csv,
    write_sweep_csv,
)

__version__ = "0.1.0"
