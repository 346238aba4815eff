import numpy as np
import pytest

from vjmkit import (
    ActuatorLimits,
    DimensionMismatch,
    DynamicsInput,
    InvalidParams,
    NoFeasibleBox,
    SingularJacobian,
    TransmissionFactors,
    VoxelMask,
    Wrench,
    accuracy_bounds,
    box_velocity_factors,
    directional_factor,
    force_bounds,
    input_efforts,
    inscribe_box,
    singular_value_factors,
)


def unit_directions(rng, count, dim=3):
    d = rng.standard_normal((count, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def radial_extent(matrix, bounds, directions):
    """Closed-form box factor per direction: the polytope boundary along d.

    For y = s*d on the boundary of the image of the limit box under the
    map, the preimage x = s * inv(matrix) @ d hits a bound first at
    min_i bounds_i / |(inv(matrix) d)_i|.
    """
    pre = directions @ np.linalg.inv(matrix).T
    with np.errstate(divide="ignore"):
        ratios = np.asarray(bounds) / np.abs(pre)
    return np.min(ratios, axis=1)


class TestSingularValueFactors:
    def test_identity(self):
        out = singular_value_factors(np.eye(3))
        assert out.k_min == pytest.approx(1.0, abs=1e-15)
        assert out.k_max == pytest.approx(1.0, abs=1e-15)
        assert out.condition == pytest.approx(1.0)
        assert out.method == "singular_value"

    def test_diagonal(self):
        out = singular_value_factors(np.diag([2.0, 1.0, 0.5]))
        assert out.k_min == pytest.approx(0.5, abs=1e-12)
        assert out.k_max == pytest.approx(2.0, abs=1e-12)
        assert out.condition == pytest.approx(4.0, rel=1e-12)

    def test_extremes_over_sphere_sampling(self):
        rng = np.random.default_rng(11)
        matrix = rng.standard_normal((3, 3))
        out = singular_value_factors(matrix)
        lengths = np.linalg.norm(unit_directions(rng, 10_000) @ matrix.T, axis=1)
        assert lengths.max() <= out.k_max + 1e-12
        assert lengths.min() >= out.k_min - 1e-12
        assert lengths.max() >= 0.99 * out.k_max
        assert lengths.min() <= 1.01 * out.k_min

    def test_rectangular_map(self):
        rng = np.random.default_rng(12)
        matrix = rng.standard_normal((6, 3))
        out = singular_value_factors(matrix)
        gram_eigs = np.linalg.eigvalsh(matrix.T @ matrix)
        assert out.k_min == pytest.approx(np.sqrt(gram_eigs[0]), rel=1e-12)
        assert out.k_max == pytest.approx(np.sqrt(gram_eigs[-1]), rel=1e-12)

    def test_rank_deficient_reports_zero(self):
        matrix = np.outer([1.0, 2.0, 3.0], [1.0, 0.0, 1.0])
        out = singular_value_factors(matrix)
        assert out.k_min == pytest.approx(0.0, abs=1e-12)
        assert out.condition == np.inf


class TestBoxFactors:
    def test_identity_unit_limits(self):
        out = box_velocity_factors(np.eye(3), np.ones(3))
        assert out.k_min == pytest.approx(1.0, abs=1e-12)
        assert out.k_max == pytest.approx(np.sqrt(3.0), abs=1e-12)
        assert out.method == "box_all_directions"

    def test_diagonal_map(self):
        out = box_velocity_factors(np.diag([2.0, 1.0, 1.0]), np.ones(3))
        assert out.k_max == pytest.approx(np.sqrt(6.0), abs=1e-12)
        assert out.k_min == pytest.approx(1.0, abs=1e-12)

    def test_k_max_attained_at_a_vertex(self):
        rng = np.random.default_rng(21)
        matrix = rng.standard_normal((3, 3)) + 2.0 * np.eye(3)
        bounds = rng.uniform(0.5, 2.0, size=3)
        out = box_velocity_factors(matrix, bounds)
        # random sign patterns cover all eight vertices
        signs = np.where(rng.standard_normal((200, 3)) > 0, 1.0, -1.0)
        lengths = np.linalg.norm((signs * bounds) @ matrix.T, axis=1)
        assert lengths.max() == pytest.approx(out.k_max, rel=1e-12)
        interior = rng.uniform(-1.0, 1.0, size=(2000, 3)) * bounds
        assert np.linalg.norm(interior @ matrix.T, axis=1).max() <= out.k_max + 1e-12

    def test_k_min_is_nearest_facet(self):
        rng = np.random.default_rng(22)
        matrix = rng.standard_normal((3, 3)) + 2.0 * np.eye(3)
        bounds = rng.uniform(0.5, 2.0, size=3)
        out = box_velocity_factors(matrix, bounds)
        # facet planes are normal to the rows of the inverse map
        normals = np.linalg.inv(matrix)
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        facet = radial_extent(matrix, bounds, normals).min()
        assert out.k_min == pytest.approx(facet, rel=1e-12)
        sampled = radial_extent(matrix, bounds, unit_directions(rng, 10_000))
        assert sampled.min() >= out.k_min - 1e-12
        assert sampled.min() <= 1.01 * out.k_min

    def test_directional_lp_matches_closed_form(self):
        rng = np.random.default_rng(23)
        matrix = rng.standard_normal((3, 3)) + 2.0 * np.eye(3)
        bounds = rng.uniform(0.5, 2.0, size=3)
        directions = unit_directions(rng, 20)
        expected = radial_extent(matrix, bounds, directions)
        for d, want in zip(directions, expected):
            assert directional_factor(matrix, bounds, d) == pytest.approx(
                want, rel=1e-7
            )

    def test_directional_mode_reports_extremes(self):
        rng = np.random.default_rng(24)
        matrix = rng.standard_normal((3, 3)) + 2.0 * np.eye(3)
        bounds = np.ones(3)
        directions = unit_directions(rng, 12)
        out = box_velocity_factors(matrix, bounds, directions=directions)
        expected = radial_extent(matrix, bounds, directions)
        assert out.method == "box_directional"
        assert out.k_min == pytest.approx(expected.min(), rel=1e-7)
        assert out.k_max == pytest.approx(expected.max(), rel=1e-7)

    def test_positive_homogeneity(self):
        rng = np.random.default_rng(25)
        matrix = rng.standard_normal((3, 3)) + 2.0 * np.eye(3)
        bounds = rng.uniform(0.5, 2.0, size=3)
        base = box_velocity_factors(matrix, bounds)
        scaled = box_velocity_factors(matrix, 3.5 * bounds)
        assert scaled.k_min == pytest.approx(3.5 * base.k_min, rel=1e-12)
        assert scaled.k_max == pytest.approx(3.5 * base.k_max, rel=1e-12)

    def test_sphere_box_sandwich(self):
        rng = np.random.default_rng(26)
        for _ in range(20):
            matrix = rng.standard_normal((3, 3)) + np.eye(3)
            if np.linalg.cond(matrix) > 1e6:
                continue
            sphere = singular_value_factors(matrix)
            box = box_velocity_factors(matrix, np.ones(3))
            # unit ball fits in the unit box, which fits in the sqrt(3) ball
            assert sphere.k_max <= box.k_max + 1e-12
            assert box.k_max <= np.sqrt(3.0) * sphere.k_max + 1e-12
            assert sphere.k_min <= box.k_min + 1e-12
            assert box.k_min <= np.sqrt(3.0) * sphere.k_min + 1e-12

    def test_limits_object_supplies_velocity_bounds(self):
        limits = ActuatorLimits(
            max_velocity=(1.0, 2.0, 0.5),
            max_effort=(10.0, 10.0, 10.0),
            max_joint_error=(0.01, 0.01, 0.01),
        )
        out = box_velocity_factors(np.eye(3), limits)
        direct = box_velocity_factors(np.eye(3), np.array([1.0, 2.0, 0.5]))
        assert out.k_min == direct.k_min
        assert out.k_max == direct.k_max

    def test_singular_map_rejected(self):
        singular = np.outer([1.0, 2.0, 3.0], [1.0, 0.0, 1.0])
        with pytest.raises(SingularJacobian):
            box_velocity_factors(singular, np.ones(3))
        with pytest.raises(SingularJacobian):
            directional_factor(singular, np.ones(3), np.array([1.0, 0.0, 0.0]))

    def test_rectangular_map_rejected(self):
        with pytest.raises(DimensionMismatch):
            box_velocity_factors(np.ones((6, 3)), np.ones(3))


class TestForceBounds:
    def test_identity_efforts(self):
        out = force_bounds(np.eye(3), np.full(3, 300.0))
        assert out.kind == "force"
        assert out.k_min == pytest.approx(300.0, abs=1e-9)
        assert out.k_max == pytest.approx(300.0 * np.sqrt(3.0), abs=1e-9)

    def test_equals_velocity_factors_of_inverse_transpose(self):
        rng = np.random.default_rng(31)
        matrix = rng.standard_normal((3, 3)) + 2.0 * np.eye(3)
        efforts = rng.uniform(50.0, 300.0, size=3)
        out = force_bounds(matrix, efforts)
        same = box_velocity_factors(np.linalg.inv(matrix).T, efforts, kind="force")
        assert out.k_min == same.k_min
        assert out.k_max == same.k_max

    def test_guaranteed_force_in_every_direction(self):
        rng = np.random.default_rng(32)
        matrix = rng.standard_normal((3, 3)) + 2.0 * np.eye(3)
        efforts = rng.uniform(50.0, 300.0, size=3)
        out = force_bounds(matrix, efforts)
        reachable = radial_extent(
            np.linalg.inv(matrix).T, efforts, unit_directions(rng, 10_000)
        )
        assert reachable.min() >= out.k_min - 1e-9


class TestAccuracyBounds:
    def test_zero_errors_zero_output(self):
        out = accuracy_bounds(np.eye(3), np.zeros(3))
        assert out.kind == "accuracy"
        assert out.k_min == 0.0
        assert out.k_max == 0.0

    def test_linear_in_error_scale(self):
        rng = np.random.default_rng(41)
        matrix = rng.standard_normal((3, 3)) + 2.0 * np.eye(3)
        errors = rng.uniform(0.001, 0.01, size=3)
        base = accuracy_bounds(matrix, errors)
        scaled = accuracy_bounds(matrix, 4.0 * errors)
        assert scaled.k_min == pytest.approx(4.0 * base.k_min, rel=1e-12)
        assert scaled.k_max == pytest.approx(4.0 * base.k_max, rel=1e-12)

    def test_same_polytope_as_velocity(self):
        rng = np.random.default_rng(42)
        matrix = rng.standard_normal((3, 3)) + 2.0 * np.eye(3)
        errors = rng.uniform(0.001, 0.01, size=3)
        acc = accuracy_bounds(matrix, errors)
        vel = box_velocity_factors(matrix, errors)
        assert acc.k_min == vel.k_min
        assert acc.k_max == vel.k_max


def sphere_predicate(center, radius):
    center = np.asarray(center, dtype=float)

    def inside(points):
        points = np.atleast_2d(points)
        return np.linalg.norm(points - center, axis=1) <= radius

    return inside


def box_predicate(lower, upper):
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)

    def inside(points):
        points = np.atleast_2d(points)
        return np.all((points >= lower) & (points <= upper), axis=1)

    return inside


class TestInscribeBox:
    def test_cube_in_sphere(self):
        radius = 100.0
        center = np.array([10.0, -5.0, 3.0])
        resolution = 5.0
        out = inscribe_box(
            sphere_predicate(center, radius),
            base_size=(1.0, 1.0, 1.0),
            search_region=((-150.0, -150.0, -150.0), (150.0, 150.0, 150.0)),
            resolution=resolution,
        )
        expected = 2.0 * radius / np.sqrt(3.0)
        assert abs(out.scale - expected) <= 2.0 * resolution
        assert np.allclose(out.transform.position, center, atol=2.0 * resolution)
        assert np.allclose(out.transform.rotation, np.eye(3))

    def test_box_workspace_recovers_itself(self):
        lower = np.array([0.0, 0.0, 0.0])
        upper = np.array([10.0, 20.0, 30.0])
        out = inscribe_box(
            box_predicate(lower, upper),
            base_size=(10.0, 20.0, 30.0),
            search_region=(lower, upper),
            resolution=0.5,
        )
        assert out.scale == pytest.approx(1.0, abs=2 * 0.5 / 30.0)
        assert np.allclose(out.transform.position, [5.0, 10.0, 15.0], atol=0.5)

    def test_monotone_under_nested_workspaces(self):
        center = np.array([0.0, 0.0, 0.0])
        scales = []
        for radius in (90.0, 70.0, 50.0):
            out = inscribe_box(
                sphere_predicate(center, radius),
                base_size=(1.0, 1.0, 1.0),
                search_region=((-100.0,) * 3, (100.0,) * 3),
                resolution=4.0,
            )
            scales.append(out.scale)
        assert scales[0] >= scales[1] >= scales[2]

    def test_returned_box_verifies_on_full_lattice(self):
        predicate = sphere_predicate((0.0, 0.0, 0.0), 50.0)
        resolution = 2.0
        out = inscribe_box(
            predicate,
            base_size=(2.0, 1.0, 1.0),
            search_region=((-60.0,) * 3, (60.0,) * 3),
            resolution=resolution,
        )
        size = out.size
        lo = out.transform.position - size / 2
        axes = [
            np.linspace(l, l + s, max(2, int(np.ceil(s / resolution)) + 1))
            for l, s in zip(lo, size)
        ]
        grid = np.meshgrid(*axes, indexing="ij")
        points = np.column_stack([g.ravel() for g in grid])
        assert np.all(predicate(points))

    def test_empty_workspace_raises(self):
        def nothing(points):
            return np.zeros(len(np.atleast_2d(points)), dtype=bool)

        with pytest.raises(NoFeasibleBox):
            inscribe_box(
                nothing,
                base_size=(1.0, 1.0, 1.0),
                search_region=((-10.0,) * 3, (10.0,) * 3),
                resolution=1.0,
            )

    def test_voxel_mask_predicate_and_io(self, tmp_path):
        n = 32
        spacing = 1.0
        radius = 12.0
        centers = (np.arange(n) + 0.5) * spacing
        gx, gy, gz = np.meshgrid(centers, centers, centers, indexing="ij")
        mid = n * spacing / 2.0
        mask = (gx - mid) ** 2 + (gy - mid) ** 2 + (gz - mid) ** 2 <= radius**2
        voxels = VoxelMask(mask=mask, origin=np.zeros(3), spacing=spacing)

        assert voxels(np.array([[mid, mid, mid]]))[0]
        assert not voxels(np.array([[0.1, 0.1, 0.1]]))[0]
        assert not voxels(np.array([[-5.0, mid, mid]]))[0]

        path = tmp_path / "ball.npz"
        voxels.save(path)
        loaded = VoxelMask.load(path)
        assert np.array_equal(loaded.mask, voxels.mask)
        assert np.allclose(loaded.origin, voxels.origin)
        assert np.allclose(loaded.spacing, voxels.spacing)

        out = inscribe_box(
            voxels,
            base_size=(1.0, 1.0, 1.0),
            search_region=((4.0,) * 3, (28.0,) * 3),
            resolution=1.0,
        )
        expected = 2.0 * radius / np.sqrt(3.0)
        assert abs(out.scale - expected) <= 2.5
        assert np.allclose(out.transform.position, mid, atol=2.0)


class TestInputEfforts:
    @staticmethod
    def constant_dynamics(n, mass=None, gravity=None):
        mass = np.eye(n) if mass is None else np.asarray(mass, dtype=float)
        gravity = np.zeros(n) if gravity is None else np.asarray(gravity, dtype=float)
        return {
            "mass_matrix": lambda q: mass,
            "coriolis": lambda q, qd: np.zeros((n, n)),
            "gravity_friction": lambda q: gravity,
        }

    def test_static_samples_reduce_to_gravity(self):
        gravity = np.array([3.0, -1.0, 0.5])
        data = DynamicsInput(
            **self.constant_dynamics(3, gravity=gravity),
            jacobian=np.vstack([np.eye(3), np.zeros((3, 3))]),
            external=Wrench(),
            q=np.zeros((4, 3)),
            qdot=np.zeros((4, 3)),
            qddot=np.zeros((4, 3)),
        )
        out = input_efforts(data)
        assert np.allclose(out.efforts, gravity, atol=1e-15)
        assert np.allclose(out.peak, np.abs(gravity))
        assert np.allclose(out.rms, np.abs(gravity))

    def test_external_wrench_maps_through_jacobian_transpose(self):
        rng = np.random.default_rng(51)
        jacobian = rng.standard_normal((6, 3))
        wrench = Wrench(force=(120.0, -40.0, 80.0), moment=(5.0, 0.0, -2.0))
        data = DynamicsInput(
            **self.constant_dynamics(3),
            jacobian=jacobian,
            external=wrench,
            q=np.zeros((2, 3)),
            qdot=np.zeros((2, 3)),
            qddot=np.zeros((2, 3)),
        )
        out = input_efforts(data)
        expected = jacobian.T @ wrench.as_vector()
        assert np.allclose(out.efforts, expected, atol=1e-12)

    def test_point_mass_acceleration(self):
        mass = 2.5
        accel = np.array([[3.0], [-1.0], [0.0]])
        data = DynamicsInput(
            mass_matrix=lambda q: np.array([[mass]]),
            coriolis=lambda q, qd: np.zeros((1, 1)),
            gravity_friction=lambda q: np.zeros(1),
            jacobian=np.array([[1.0], [0.0], [0.0], [0.0], [0.0], [0.0]]),
            external=Wrench(),
            q=np.zeros((3, 1)),
            qdot=np.zeros((3, 1)),
            qddot=accel,
        )
        out = input_efforts(data)
        assert np.allclose(out.efforts, mass * accel, atol=1e-12)
        assert out.peak[0] == pytest.approx(mass * 3.0, rel=1e-12)
        assert out.rms[0] == pytest.approx(
            mass * np.sqrt((9.0 + 1.0 + 0.0) / 3.0), rel=1e-12
        )

    def test_coriolis_term_multiplies_velocity(self):
        coupling = np.array([[0.0, 1.5], [-1.5, 0.0]])
        qdot = np.array([[2.0, -1.0]])
        data = DynamicsInput(
            mass_matrix=lambda q: np.eye(2),
            coriolis=lambda q, qd: coupling,
            gravity_friction=lambda q: np.zeros(2),
            jacobian=np.vstack([np.eye(2), np.zeros((4, 2))]),
            external=Wrench(),
            q=np.zeros((1, 2)),
            qdot=qdot,
            qddot=np.zeros((1, 2)),
        )
        out = input_efforts(data)
        assert np.allclose(out.efforts[0], coupling @ qdot[0], atol=1e-15)

    def test_dimension_errors(self):
        with pytest.raises(DimensionMismatch):
            DynamicsInput(
                **self.constant_dynamics(3),
                jacobian=np.eye(3),
                external=Wrench(),
                q=np.zeros((2, 3)),
                qdot=np.zeros((2, 3)),
                qddot=np.zeros((2, 3)),
            )
        with pytest.raises(DimensionMismatch):
            DynamicsInput(
                **self.constant_dynamics(3),
                jacobian=np.vstack([np.eye(3), np.zeros((3, 3))]),
                external=Wrench(),
                q=np.zeros((2, 3)),
                qdot=np.zeros((3, 3)),
                qddot=np.zeros((2, 3)),
            )

    def test_bad_mass_matrix_rejected(self):
        base = dict(
            coriolis=lambda q, qd: np.zeros((2, 2)),
            gravity_friction=lambda q: np.zeros(2),
            jacobian=np.vstack([np.eye(2), np.zeros((4, 2))]),
            external=Wrench(),
            q=np.zeros((1, 2)),
            qdot=np.zeros((1, 2)),
            qddot=np.zeros((1, 2)),
        )
        indefinite = DynamicsInput(
            mass_matrix=lambda q: np.diag([1.0, -1.0]), **base
        )
        with pytest.raises(InvalidParams):
            input_efforts(indefinite)
        wrong_shape = DynamicsInput(mass_matrix=lambda q: np.eye(3), **base)
        with pytest.raises(DimensionMismatch):
            input_efforts(wrong_shape)


class TestLimitTypes:
    def test_actuator_limits_validate_positivity(self):
        with pytest.raises(InvalidParams):
            ActuatorLimits(
                max_velocity=(1.0, 0.0, 1.0),
                max_effort=(1.0, 1.0, 1.0),
                max_joint_error=(0.1, 0.1, 0.1),
            )
        with pytest.raises(DimensionMismatch):
            ActuatorLimits(
                max_velocity=(1.0, 1.0),
                max_effort=(1.0, 1.0, 1.0),
                max_joint_error=(0.1, 0.1, 0.1),
            )

    def test_factor_ordering_enforced(self):
        with pytest.raises(InvalidParams):
            TransmissionFactors(
                k_min=2.0, k_max=1.0, kind="velocity", method="singular_value"
            )
        with pytest.raises(InvalidParams):
            TransmissionFactors(
                k_min=0.5, k_max=1.0, kind="speed", method="singular_value"
            )
