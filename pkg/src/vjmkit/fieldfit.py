"""Rigid deflection-screw fits on displacement fields, and compliance
identification from batches of fitted load cases.

A displacement field is a cloud of node positions with measured (or
computed) displacement vectors, all in millimetres.  Under a small rigid
motion the field follows

    dp_i = t + phi x p_i

with translation ``t`` taken at the cloud centroid and rotation vector
``phi``.  Shifting positions to the centroid decouples the least-squares
normal equations, giving closed forms for both parameters; the reported
screw is re-expressed about the field's reference point.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    InputFormatError,
    LinearizationWarning,
    RankDeficientLoads,
    SingularGeometry,
    TooFewNodes,
)
from .spatial import DeflectionScrew, Wrench, pseudoinverse, skew, vec3

# cond() threshold on the geometry normal matrix before a cloud is
# declared unusable (collinear or otherwise rank deficient).
GEOMETRY_CONDITION_LIMIT = 1e12

_FIELD_UNITS_HEADER = "# units: mm"
_FIELD_COLUMNS = "px,py,pz,dx,dy,dz"


@dataclass(frozen=True)
class DisplacementField:
    """Node cloud with displacements, plus the screw reference point."""

    positions: np.ndarray
    displacements: np.ndarray
    reference_point: np.ndarray = field(default_factory=lambda: np.zeros(3))
    label: str = ""
    provenance: tuple = ()

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        disp = np.atleast_2d(np.asarray(self.displacements, dtype=float))
        if pos.shape != disp.shape or pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(
                f"positions {pos.shape} and displacements {disp.shape} "
                "must both be (n, 3)"
            )
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(disp))):
            raise ValueError("field contains non-finite entries")
        if len(pos) < 3:
            raise TooFewNodes(f"need at least 3 nodes, got {len(pos)}")
        pos.setflags(write=False)
        disp.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "displacements", disp)
        object.__setattr__(self, "reference_point", vec3(self.reference_point))
        radius = float(np.max(np.linalg.norm(pos - pos.mean(axis=0), axis=1)))
        largest = float(np.max(np.linalg.norm(disp, axis=1)))
        if radius > 0.0 and largest > 0.1 * radius:
            warnings.warn(
                f"largest displacement {largest:.3g} mm exceeds 10% of the "
                f"cloud radius {radius:.3g} mm; rigid linearization is suspect",
                LinearizationWarning,
                stacklevel=2,
            )

    @property
    def n(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class RigidFit:
    """Least-squares rigid screw for one displacement field.

    ``deflection`` is expressed about the field's reference point.
    ``cov_translation`` is the covariance of that reported translation
    (centroid covariance plus the lever term from the rotation estimate);
    ``cov_rotation`` is frame independent.  Both use ``sigma_hat``.
    """

    deflection: DeflectionScrew
    residual_sum_squares: float
    n_used: int
    sigma_hat: float
    cov_translation: np.ndarray
    cov_rotation: np.ndarray
    centroid: np.ndarray
    outlier_mask: np.ndarray

    def deflection_std(self) -> np.ndarray:
        """Per-component standard deviations of the reported screw."""
        return np.sqrt(
            np.concatenate(
                [np.diag(self.cov_translation), np.diag(self.cov_rotation)]
            )
        )


def _geometry_normal_matrix(centered: np.ndarray) -> np.ndarray:
    # sum of P_i^T P_i over skew matrices of the centered positions
    r2 = np.sum(centered**2, axis=1).sum()
    return r2 * np.eye(3) - centered.T @ centered


def _solve_screw(positions, displacements):
    """Closed-form decoupled fit in the centroid frame.

    Returns (t_centroid, phi, centroid, normal_matrix).
    """
    centroid = positions.mean(axis=0)
    centered = positions - centroid
    m = _geometry_normal_matrix(centered)
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > GEOMETRY_CONDITION_LIMIT:
        raise SingularGeometry(
            f"node cloud is rank deficient (condition {cond:.3g}); "
            "collinear or coincident nodes cannot resolve a rotation"
        )
    t_centroid = displacements.mean(axis=0)
    rhs = np.cross(centered, displacements - t_centroid).sum(axis=0)
    phi = np.linalg.solve(m, rhs)
    return t_centroid, phi, centroid, m


def fit_rigid_transform(field: DisplacementField) -> RigidFit:
    """Fit the small rigid screw dp = t + phi x p to a field.

    The residual variance estimate uses 3n - 6 degrees of freedom.
    """
    pos, disp = field.positions, field.displacements
    n = len(pos)
    t_c, phi, centroid, m = _solve_screw(pos, disp)
    residuals = disp - t_c - np.cross(np.broadcast_to(phi, pos.shape), pos - centroid)
    rss = float(np.sum(residuals**2))
    dof = 3 * n - 6
    sigma_hat = float(np.sqrt(rss / dof)) if dof > 0 else 0.0

    cov_t_centroid, cov_phi = _covariances(n, m, sigma_hat)
    lever = skew(field.reference_point - centroid)
    cov_t = cov_t_centroid + lever @ cov_phi @ lever.T
    translation = t_c + np.cross(phi, field.reference_point - centroid)
    return RigidFit(
        deflection=DeflectionScrew(translation=translation, rotation=phi),
        residual_sum_squares=rss,
        n_used=n,
        sigma_hat=sigma_hat,
        cov_translation=cov_t,
        cov_rotation=cov_phi,
        centroid=centroid,
        outlier_mask=np.zeros(n, dtype=bool),
    )


def _covariances(n, normal_matrix, sigma):
    cov_t = sigma**2 / n * np.eye(3)
    cov_phi = sigma**2 * np.linalg.inv(normal_matrix)
    return cov_t, cov_phi


def fit_covariances(field: DisplacementField, sigma: float):
    """Centroid-frame parameter covariances for a known noise level.

    Returns (cov_translation, cov_rotation) = (sigma^2/n I, sigma^2 M^-1)
    where M is the geometry normal matrix of the centered cloud.
    """
    centered = field.positions - field.positions.mean(axis=0)
    m = _geometry_normal_matrix(centered)
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > GEOMETRY_CONDITION_LIMIT:
        raise SingularGeometry(f"node cloud is rank deficient (condition {cond:.3g})")
    return _covariances(field.n, m, float(sigma))


def filter_outliers(field: DisplacementField, fit: RigidFit | None = None,
                    k: float = 3.0, max_passes: int = 10) -> DisplacementField:
    """Drop nodes with residual norm above k * sigma_hat * sqrt(3), refit,
    and repeat until the node set is stable (at most ``max_passes`` refits).

    Raises TooFewNodes rather than filtering below 10 nodes.
    """
    current = field
    if fit is None:
        fit = fit_rigid_transform(field)
    for i in range(max_passes):
        pos, disp = current.positions, current.displacements
        # the fitted screw is about the reference point, so the predicted
        # node motion uses the lever arm from that same point
        predicted = fit.deflection.translation + np.cross(
            np.broadcast_to(fit.deflection.rotation, pos.shape),
            pos - current.reference_point,
        )
        norms = np.linalg.norm(disp - predicted, axis=1)
        keep = norms <= k * fit.sigma_hat * np.sqrt(3.0)
        if np.all(keep):
            return current
        if int(keep.sum()) < 10:
            raise TooFewNodes(
                f"outlier filtering at k={k} would leave {int(keep.sum())} "
                "nodes; need at least 10"
            )
        removed = int((~keep).sum())
        current = replace(
            current,
            positions=pos[keep],
            displacements=disp[keep],
            provenance=current.provenance
            + (f"outlier pass {i + 1}: removed {removed} node(s) at k={k}",),
        )
        fit = fit_rigid_transform(current)
    return current


def estimate_sigma_pooled(fits) -> float:
    """Pooled noise estimate over several fits of equal-noise fields:
    sqrt(sum RSS_j / sum (3 n_j - 6))."""
    fits = list(fits)
    if not fits:
        raise ValueError("need at least one fit")
    rss = sum(f.residual_sum_squares for f in fits)
    dof = sum(3 * f.n_used - 6 for f in fits)
    if dof <= 0:
        raise ValueError("no residual degrees of freedom")
    return float(np.sqrt(rss / dof))


# ----- compliance identification -----


@dataclass(frozen=True)
class LoadCase:
    """One wrench together with the fitted deflection screw it produced."""

    wrench: Wrench
    fit: RigidFit


@dataclass(frozen=True)
class ComplianceEstimate:
    """6x6 compliance with per-entry noise bounds.

    ``significance_mask[a, b]`` is True where |k_ab| exceeds k_sig times the
    propagated standard deviation of that entry.  The raw estimate is not
    symmetrized; use :meth:`symmetrized` for the averaged matrix.
    """

    compliance: np.ndarray
    entry_std: np.ndarray
    significance_mask: np.ndarray
    k_sig: float

    def symmetrized(self) -> np.ndarray:
        return 0.5 * (self.compliance + self.compliance.T)

    @property
    def asymmetry(self) -> float:
        scale = np.linalg.norm(self.compliance)
        if scale == 0.0:
            return 0.0
        return float(np.linalg.norm(self.compliance - self.compliance.T) / scale)


def identify_compliance(cases, k_sig: float = 3.0) -> ComplianceEstimate:
    """Estimate the 6x6 compliance mapping wrenches to deflection screws.

    Stacks the m cases column-wise and solves deflections = k @ wrenches in
    the least-squares sense: k = D @ pinv(W), with the pseudoinverse
    replaced by the plain inverse when m == 6.  Entry standard deviations
    propagate each case's fitted screw covariance through the same linear
    map, treating the wrenches as exact.
    """
    cases = list(cases)
    m = len(cases)
    if m < 6:
        raise RankDeficientLoads(f"need at least 6 load cases, got {m}")
    wrenches = np.column_stack([c.wrench.as_vector() for c in cases])
    deflections = np.column_stack([c.fit.deflection.as_vector() for c in cases])
    singular = np.linalg.svd(wrenches, compute_uv=False)
    if singular[-1] <= 1e-10 * singular[0]:
        raise RankDeficientLoads(
            "load cases do not span all six wrench directions "
            f"(singular values {singular[0]:.3g} .. {singular[-1]:.3g})"
        )
    if m == 6:
        gain = np.linalg.inv(wrenches)
    else:
        gain = pseudoinverse(wrenches)
    compliance = deflections @ gain

    case_var = np.column_stack(
        [
            np.concatenate(
                [np.diag(c.fit.cov_translation), np.diag(c.fit.cov_rotation)]
            )
            for c in cases
        ]
    )  # (6, m): per-component deflection variance of each case
    entry_var = case_var @ (gain**2)
    entry_std = np.sqrt(entry_var)
    with np.errstate(invalid="ignore"):
        mask = np.abs(compliance) > k_sig * entry_std
    mask = np.where(entry_std == 0.0, compliance != 0.0, mask)
    return ComplianceEstimate(
        compliance=compliance,
        entry_std=entry_std,
        significance_mask=mask,
        k_sig=float(k_sig),
    )


# ----- file formats -----


def write_field_csv(path, field: DisplacementField) -> None:
    data = np.hstack([field.positions, field.displacements])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_FIELD_UNITS_HEADER + "\n")
        fh.write(_FIELD_COLUMNS + "\n")
        for row in data:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def read_field_csv(path):
    """Read node positions/displacements; returns (positions, displacements)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0].replace(" ", "") != _FIELD_UNITS_HEADER.replace(" ", ""):
        raise InputFormatError(
            f"{path}: missing '{_FIELD_UNITS_HEADER}' header line"
        )
    body = lines[1:]
    if body and body[0].replace(" ", "") == _FIELD_COLUMNS:
        body = body[1:]
    if not body:
        raise InputFormatError(f"{path}: no data rows")
    try:
        data = np.array(
            [[float(v) for v in ln.split(",")] for ln in body if not ln.startswith("#")]
        )
    except ValueError as exc:
        raise InputFormatError(f"{path}: non-numeric data row ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != 6:
        raise InputFormatError(
            f"{path}: expected 6 columns ({_FIELD_COLUMNS}), got {data.shape}"
        )
    return data[:, :3], data[:, 3:]


def read_case_meta(path):
    """Read a sidecar JSON: reference point, wrench and declared units."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputFormatError(f"{path}: invalid JSON ({exc})") from exc
    if "reference_point" not in meta:
        raise InputFormatError(f"{path}: missing 'reference_point'")
    ref = vec3(meta["reference_point"])
    wrench = None
    if meta.get("wrench") is not None:
        w = np.asarray(meta["wrench"], dtype=float)
        if w.shape != (6,):
            raise InputFormatError(f"{path}: 'wrench' must have 6 entries")
        wrench = Wrench.from_vector(w)
    units = meta.get("units", {})
    return ref, wrench, units


def check_units(units: dict, path="input") -> None:
    expected = {"length": "mm", "force": "N"}
    for key, val in expected.items():
        if units.get(key) != val:
            raise InputFormatError(
                f"{path}: units declare {key}={units.get(key)!r}, expected {val!r}"
            )


def write_case_meta(path, reference_point, wrench: Wrench | None = None) -> None:
    meta = {
        "reference_point": [float(v) for v in vec3(reference_point)],
        "units": {"length": "mm", "force": "N"},
    }
    if wrench is not None:
        meta["wrench"] = [float(v) for v in wrench.as_vector()]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_field(csv_path, meta_path=None, label="") -> DisplacementField:
    positions, displacements = read_field_csv(csv_path)
    ref = np.zeros(3)
    if meta_path is not None:
        ref, _, _ = read_case_meta(meta_path)
    return DisplacementField(
        positions=positions,
        displacements=displacements,
        reference_point=ref,
        label=label or str(csv_path),
    )


def load_load_case(csv_path, meta_path):
    """Read a field plus its wrench; returns (DisplacementField, Wrench)."""
    positions, displacements = read_field_csv(csv_path)
    ref, wrench, units = read_case_meta(meta_path)
    if wrench is None:
        raise InputFormatError(f"{meta_path}: load case requires a 'wrench'")
    fld = DisplacementField(
        positions=positions,
        displacements=displacements,
        reference_point=ref,
        label=str(csv_path),
    )
    return fld, wrench, units
