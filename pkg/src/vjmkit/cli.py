"""Batch command-line front end.

Subcommands cover displacement-field fitting, compliance identification,
stiffness evaluation, transmission factors, workspace inscription and the
milling-study sweeps.  Reports are JSON, study outputs are CSV with
``# key=value`` header lines carrying every parameter, so a rerun with the
same arguments reproduces the file byte for byte.

Exit codes: 0 success, 2 malformed input, 3 deficient data or geometry,
4 no convergence (or more than 10% of sweep samples failed),
5 singular configuration.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    InputFormatError,
    InvalidParams,
    NoConvergence,
    NoFeasibleBox,
    RankDeficientLoads,
    SingularConfiguration,
    SingularGeometry,
    SingularJacobian,
    TooFewNodes,
    Unreachable,
)
from .fieldfit import (
    LoadCase,
    check_units,
    filter_outliers,
    fit_rigid_transform,
    identify_compliance,
    load_field,
    load_load_case,
    read_case_meta,
)
from .model import load_manipulator
from .orthoglide import (
    OrthoglideParams,
    StudyGrid,
    direction_sweep,
    error_map,
    load_orthoglide_params,
    magnitude_sweep,
    place_at,
    write_error_map_csv,
    write_sweep_csv,
)
from .performance import (
    VoxelMask,
    accuracy_bounds,
    box_velocity_factors,
    force_bounds,
    inscribe_box,
    singular_value_factors,
)
from .spatial import Pose, Wrench, small_rotation
from .statics import solve_assembly, stiffness_loaded, stiffness_unloaded

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4
EXIT_SINGULAR = 5

# fraction of sweep samples that must succeed for a zero exit
MIN_OK_FRACTION = 0.9

_INPUT_ERRORS = (InputFormatError, InvalidParams, DimensionMismatch)
_DATA_ERRORS = (
    SingularGeometry,
    TooFewNodes,
    RankDeficientLoads,
    Unreachable,
    NoFeasibleBox,
)
_SINGULAR_ERRORS = (SingularConfiguration, SingularJacobian)

PRESETS = {
    "orthoglide-revised": OrthoglideParams.revised,
    "orthoglide-original": OrthoglideParams.original,
}


def _parse_floats(text, name, length=None):
    try:
        values = np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise InputFormatError(f"{name}: expected comma-separated numbers ({exc})")
    if length is not None and values.shape != (length,):
        raise InputFormatError(
            f"{name}: expected {length} comma-separated numbers, got {len(values)}"
        )
    return values


def _matrix_list(matrix):
    return [[float(v) for v in row] for row in np.atleast_2d(matrix)]


def _plain(value):
    """Numbers, strings and containers only, so json.dumps accepts it."""
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _emit_json(payload, output):
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _study_params(args) -> OrthoglideParams:
    if getattr(args, "params", None):
        return load_orthoglide_params(args.params)
    return PRESETS[args.preset]()


def _require_output(args):
    if not args.output:
        raise InputFormatError("this command writes CSV; --output is required")
    return args.output


# ----- fit -----


def cmd_fit(args) -> int:
    field = load_field(args.field, args.meta)
    if args.meta and args.units_check:
        _, _, units = read_case_meta(args.meta)
        check_units(units, args.meta)
    fit = fit_rigid_transform(field)
    n_outliers = 0
    if args.filter_outliers:
        filtered = filter_outliers(field, fit, k=args.outlier_k)
        n_outliers = field.n - filtered.n
        fit = fit_rigid_transform(filtered)
    _emit_json(
        {
            "deflection": {
                "translation_mm": list(fit.deflection.translation),
                "rotation_rad": list(fit.deflection.rotation),
            },
            "deflection_std": [float(v) for v in fit.deflection_std()],
            "sigma_hat_mm": fit.sigma_hat,
            "residual_sum_squares": fit.residual_sum_squares,
            "n_nodes": field.n,
            "n_used": fit.n_used,
            "n_outliers": n_outliers,
            "cov_translation": _matrix_list(fit.cov_translation),
            "cov_rotation": _matrix_list(fit.cov_rotation),
        },
        args.output,
    )
    return EXIT_OK


# ----- identify -----


def _collect_cases(directory, units_check):
    root = Path(directory)
    if not root.is_dir():
        raise InputFormatError(f"{directory}: not a directory")
    cases = []
    for csv_path in sorted(root.glob("*.csv")):
        meta_path = csv_path.with_suffix(".json")
        if not meta_path.exists():
            raise InputFormatError(f"{csv_path}: missing sidecar {meta_path.name}")
        field, wrench, units = load_load_case(csv_path, meta_path)
        if units_check:
            check_units(units, str(meta_path))
        cases.append(LoadCase(wrench=wrench, fit=fit_rigid_transform(field)))
    return cases


def cmd_identify(args) -> int:
    cases = _collect_cases(args.cases, args.units_check)
    estimate = identify_compliance(cases, k_sig=args.k_sig)
    _emit_json(
        {
            "compliance": _matrix_list(estimate.compliance),
            "compliance_symmetrized": _matrix_list(estimate.symmetrized()),
            "entry_std": _matrix_list(estimate.entry_std),
            "significance_mask": [
                [int(v) for v in row] for row in estimate.significance_mask
            ],
            "k_sig": estimate.k_sig,
            "asymmetry": estimate.asymmetry,
            "n_cases": len(cases),
        },
        args.output,
    )
    return EXIT_OK


# ----- stiffness -----


def _parse_pose(text) -> Pose:
    values = _parse_floats(text, "--pose")
    if values.shape == (3,):
        return Pose.from_translation(values)
    if values.shape == (6,):
        return Pose(position=values[:3], rotation=small_rotation(values[3:]))
    raise InputFormatError("--pose: expected 3 or 6 comma-separated numbers")


def cmd_stiffness(args) -> int:
    if args.model:
        manipulator = load_manipulator(args.model)
        pose = _parse_pose(args.pose) if args.pose else Pose.identity()
    else:
        params = _study_params(args)
        point = _parse_floats(args.point, "--point", 3)
        manipulator = place_at(params, point)
        pose = Pose.from_translation(point)
    wrench = Wrench.from_vector(
        _parse_floats(args.wrench, "--wrench", 6) if args.wrench else np.zeros(6)
    )
    loaded = not args.unloaded and np.any(wrench.as_vector() != 0.0)
    extra = {}
    if loaded:
        kwargs = {"tol": args.tol} if args.tol else {}
        state = solve_assembly(
            manipulator, external_wrench=wrench, initial_guess=pose, **kwargs
        )
        result = stiffness_loaded(manipulator, state)
        extra = {
            "iterations": state.iterations,
            "residual_norm": state.residual_norm,
            "loaded_pose_mm": list(state.platform_pose.position),
        }
    else:
        result = stiffness_unloaded(manipulator, pose)
    _emit_json(
        {
            "mode": "loaded" if loaded else "unloaded",
            "K_F": _matrix_list(result.K_F),
            "K_q": _matrix_list(result.K_q) if result.K_q.size else [],
            "condition_diagnostics": _plain(result.condition_diagnostics),
            "wrench": [float(v) for v in wrench.as_vector()],
            **extra,
        },
        args.output,
    )
    return EXIT_OK


# ----- study sweeps -----


def _sweep_exit(ok_fraction) -> int:
    return EXIT_OK if ok_fraction >= MIN_OK_FRACTION else EXIT_CONVERGENCE


def cmd_sweep_direction(args) -> int:
    params = _study_params(args)
    point = _parse_floats(args.point, "--point", 3)
    result = direction_sweep(params, point, args.force, n_angles=args.angles)
    write_sweep_csv(result, _require_output(args))
    return _sweep_exit(result.ok_fraction)


def cmd_sweep_magnitude(args) -> int:
    params = _study_params(args)
    point = _parse_floats(args.point, "--point", 3)
    direction = _parse_floats(args.direction, "--direction", 3)
    magnitudes = _parse_floats(args.forces, "--forces")
    result = magnitude_sweep(params, point, direction, magnitudes)
    write_sweep_csv(result, _require_output(args))
    return _sweep_exit(result.ok_fraction)


def cmd_map(args) -> int:
    params = _study_params(args)
    x_range = _parse_floats(args.x_range, "--x-range", 2)
    y_range = _parse_floats(args.y_range, "--y-range", 2)
    grid = StudyGrid(
        plane_z=args.plane_z,
        x_range=(x_range[0], x_range[1]),
        y_range=(y_range[0], y_range[1]),
        step=args.step,
        force=args.force,
        n_directions=args.directions,
    )
    result = error_map(params, grid)
    write_error_map_csv(result, _require_output(args))
    return _sweep_exit(result.ok_fraction)


# ----- inscribe -----


def cmd_inscribe(args) -> int:
    mask = VoxelMask.load(args.mask)
    base_size = _parse_floats(args.base_size, "--base-size", 3)
    if args.region:
        values = _parse_floats(args.region, "--region", 6)
        region = (values[:3], values[3:])
    else:
        region = (mask.origin, mask.origin + mask.spacing * np.array(mask.mask.shape))
    box = inscribe_box(mask, base_size, region, resolution=args.resolution)
    _emit_json(
        {
            "scale": box.scale,
            "center_mm": list(box.transform.position),
            "size_mm": [float(v) for v in box.size],
            "base_size_mm": [float(v) for v in base_size],
            "resolution_mm": args.resolution,
        },
        args.output,
    )
    return EXIT_OK


# ----- factors -----


def _load_matrix(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputFormatError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(data, dict):
        if "matrix" not in data:
            raise InputFormatError(f"{path}: expected a 'matrix' key or a bare array")
        data = data["matrix"]
    matrix = np.asarray(data, dtype=float)
    if matrix.ndim != 2:
        raise InputFormatError(f"{path}: matrix must be two-dimensional")
    return matrix


def _sampled_directions(rng, count, dim):
    directions = rng.standard_normal((count, dim))
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def cmd_factors(args) -> int:
    matrix = _load_matrix(args.jacobian)
    if args.method == "singular":
        factors = singular_value_factors(matrix, kind=args.kind)
    else:
        if not args.limits:
            raise InputFormatError("--limits is required with the box method")
        limits = _parse_floats(args.limits, "--limits", matrix.shape[1])
        directions = None
        if args.sample:
            rng = np.random.default_rng(args.seed)
            directions = _sampled_directions(rng, args.sample, matrix.shape[0])
        compute = {
            "velocity": box_velocity_factors,
            "force": force_bounds,
            "accuracy": accuracy_bounds,
        }[args.kind]
        factors = compute(matrix, limits, directions=directions)
    _emit_json(
        {
            "k_min": factors.k_min,
            "k_max": factors.k_max,
            "condition": factors.condition,
            "kind": factors.kind,
            "method": factors.method,
        },
        args.output,
    )
    return EXIT_OK


# ----- parser -----


def _add_common(parser):
    parser.add_argument(
        "--units-check",
        action="store_true",
        help="require metadata to declare length=mm, force=N",
    )
    parser.add_argument(
        "--tol", type=float, default=None, help="equilibrium solver tolerance"
    )
    parser.add_argument(
        "--seed", type=int, default=0, help="seed for sampled directions"
    )
    parser.add_argument("--output", default=None, help="output path (JSON to stdout if omitted)")


def _add_study_source(parser):
    parser.add_argument(
        "--preset",
        choices=sorted(PRESETS),
        default="orthoglide-revised",
        help="built-in parameter set",
    )
    parser.add_argument(
        "--params", default=None, help="JSON parameter file overriding the preset"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vjmkit",
        description="stiffness identification, virtual-joint models and "
        "machining performance studies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="rigid screw fit of one displacement field")
    p.add_argument("field", help="node CSV (x,y,z,ux,uy,uz)")
    p.add_argument("meta", nargs="?", default=None, help="sidecar JSON")
    p.add_argument("--filter-outliers", action="store_true")
    p.add_argument("--outlier-k", type=float, default=3.0)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("identify", help="compliance matrix from load-case pairs")
    p.add_argument("cases", help="directory of case CSVs with JSON sidecars")
    p.add_argument("--k-sig", type=float, default=3.0)
    _add_common(p)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("stiffness", help="Cartesian stiffness at a pose")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--model", default=None, help="manipulator JSON file")
    p.add_argument("--pose", default=None, help="x,y,z or x,y,z,rx,ry,rz (model file)")
    p.add_argument("--point", default="0,0,0", help="platform position (presets)")
    p.add_argument("--wrench", default=None, help="fx,fy,fz,mx,my,mz")
    p.add_argument("--unloaded", action="store_true", help="ignore the wrench")
    _add_study_source(p)
    _add_common(p)
    p.set_defaults(func=cmd_stiffness)

    p = sub.add_parser("sweep-direction", help="planar force rotated at one point")
    p.add_argument("--point", required=True)
    p.add_argument("--force", type=float, required=True)
    p.add_argument("--angles", type=int, default=72)
    _add_study_source(p)
    _add_common(p)
    p.set_defaults(func=cmd_sweep_direction)

    p = sub.add_parser("sweep-magnitude", help="force size swept along a direction")
    p.add_argument("--point", required=True)
    p.add_argument("--direction", required=True)
    p.add_argument("--forces", required=True, help="comma-separated magnitudes")
    _add_study_source(p)
    _add_common(p)
    p.set_defaults(func=cmd_sweep_magnitude)

    p = sub.add_parser("map", help="worst-deflection map over a horizontal plane")
    p.add_argument("--plane-z", type=float, required=True)
    p.add_argument("--x-range", required=True, help="min,max")
    p.add_argument("--y-range", required=True, help="min,max")
    p.add_argument("--step", type=float, required=True)
    p.add_argument("--force", type=float, required=True)
    p.add_argument("--directions", type=int, default=36)
    _add_study_source(p)
    _add_common(p)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("inscribe", help="largest box inside a voxel workspace")
    p.add_argument("--mask", required=True, help="npz voxel mask")
    p.add_argument("--base-size", default="1,1,1")
    p.add_argument("--resolution", type=float, required=True)
    p.add_argument("--region", default=None, help="x0,y0,z0,x1,y1,z1")
    _add_common(p)
    p.set_defaults(func=cmd_inscribe)

    p = sub.add_parser("factors", help="transmission factor bounds of a jacobian")
    p.add_argument("--jacobian", required=True, help="JSON matrix file")
    p.add_argument("--limits", default=None, help="per-joint bounds")
    p.add_argument("--kind", choices=["velocity", "force", "accuracy"],
                   default="velocity")
    p.add_argument("--method", choices=["box", "singular"], default="box")
    p.add_argument("--sample", type=int, default=0,
                   help="evaluate this many seeded random directions instead "
                   "of the exact polytope bounds")
    _add_common(p)
    p.set_defaults(func=cmd_factors)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NoConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except _SINGULAR_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SINGULAR


if __name__ == "__main__":
    sys.exit(main())
