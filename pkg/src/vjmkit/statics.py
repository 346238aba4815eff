"""Static equilibrium and Cartesian stiffness of elastic chain models.

Chain statics couple three unknown groups: passive joint values q (which
transmit no generalized force), spring values theta (reacting K_theta *
theta), and the wrench F the tool frame exerts on whatever holds it.  The
displacement-driven problem fixes the tool pose and solves for (q, theta,
F); the force-driven problem fixes the external wrench on the platform
and moves the pose until the chain reactions balance it.

Stiffness in the loaded mode is the exact derivative dF/dt of the
displacement-driven map, obtained by eliminating theta from the
linearized equilibrium system.  The load-geometry coupling enters through
the exact (generally non-symmetric) gradient of the joint-torque map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, SingularConfiguration
from .model import (
    ManipulatorModel,
    SerialChainModel,
    _coordinate_table,
    _gradient_blocks,
    forward_geometry,
)
from .spatial import (
    DeflectionScrew,
    Pose,
    Wrench,
    pseudoinverse,
    rotation_vector,
    small_rotation,
)

# characteristic scales making the mixed-unit residual comparable to one
# tolerance: pose entries in units of 1e-3 mm (and 1e-3 rad), generalized
# forces in units of 1 N (and 1 N*mm)
POSE_SCALE = 1e-3
FORCE_SCALE = 1.0

DEFAULT_TOL = 1e-9
MAX_ITERATIONS = 100
MAX_HALVINGS = 20
MAX_UPHILL = 8
CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class EquilibriumState:
    """Converged configuration of a manipulator assembly."""

    q: tuple
    theta: tuple
    chain_wrenches: tuple
    platform_pose: Pose
    external_wrench: Wrench
    residual_norm: float
    iterations: int


@dataclass(frozen=True)
class StiffnessResult:
    """Cartesian stiffness about the platform frame.

    K_F maps a platform deflection screw to the wrench change (N/mm, N,
    N*mm blocks); K_q stacks the per-chain passive-joint sensitivity
    columns.  condition_diagnostics records the condition numbers met
    while assembling and inverting the block systems.
    """

    K_F: np.ndarray
    K_q: np.ndarray
    condition_diagnostics: dict


def pose_error(pose: Pose, target: Pose) -> np.ndarray:
    """Small-motion screw carrying ``target`` to ``pose`` (world frame)."""
    return np.concatenate(
        [
            pose.position - target.position,
            rotation_vector(pose.rotation @ target.rotation.T),
        ]
    )


def _advance_pose(pose: Pose, step: np.ndarray) -> Pose:
    return Pose(
        position=pose.position + step[:3],
        rotation=small_rotation(step[3:]) @ pose.rotation,
    )


def _check_condition(matrix, what):
    cond = np.linalg.cond(matrix)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularConfiguration(
            f"{what} is numerically singular (condition {cond:.3g})",
            condition=cond,
        )
    return cond


def _equilibrate(matrix):
    """Row then column max-norm scaling factors for a mixed-unit system.

    Chains mix mm with rad and N with N*mm, which inflates the raw
    condition number of perfectly regular systems; after equilibration
    the condition check responds to actual rank loss instead.
    """
    a = np.abs(np.asarray(matrix, dtype=float))
    row = a.max(axis=1)
    row[row == 0.0] = 1.0
    row = 1.0 / row
    col = (a * row[:, None]).max(axis=0)
    col[col == 0.0] = 1.0
    col = 1.0 / col
    return row, col


def _balanced_solve(matrix, rhs, what):
    """Solve ``matrix @ x = rhs`` after equilibration.

    Returns (x, condition of the scaled system); raises
    SingularConfiguration when that condition exceeds CONDITION_LIMIT.
    """
    row, col = _equilibrate(matrix)
    scaled = matrix * row[:, None] * col[None, :]
    cond = _check_condition(scaled, what)
    rhs = np.asarray(rhs, dtype=float)
    if rhs.ndim == 1:
        x = col * np.linalg.solve(scaled, row * rhs)
    else:
        x = col[:, None] * np.linalg.solve(scaled, row[:, None] * rhs)
    return x, cond


# ----- chain equilibrium -----


def solve_chain_equilibrium(
    chain: SerialChainModel,
    platform_pose: Pose,
    mode: str = "elastic",
    initial=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = MAX_ITERATIONS,
):
    """Drive the chain's tool frame to ``platform_pose``.

    mode "elastic" solves the full statics for (q, theta, F) by damped
    Newton iteration on the stacked unknowns; mode "rigid" freezes all
    springs at zero and fits q alone (Gauss-Newton on the pose error),
    returning a zero wrench.  ``initial`` optionally supplies (q, theta,
    F) starting values; defaults are the joint nominals, zero, and zero.

    Returns (q, theta, reaction: Wrench).  The residual is converged in
    the scaled max-norm: pose entries per 1e-3 mm, force entries per 1 N.
    """
    if mode not in ("elastic", "rigid"):
        raise ValueError(f"mode must be 'elastic' or 'rigid', got {mode!r}")
    n, m = chain.n_passive, chain.n_spring
    if initial is not None:
        q = np.array(initial[0], dtype=float).reshape(n)
        theta = np.array(initial[1], dtype=float).reshape(m)
        f = np.array(initial[2], dtype=float).reshape(6)
    else:
        q = chain.passive_nominals()
        theta = np.zeros(m)
        f = np.zeros(6)

    if mode == "rigid":
        q = _solve_rigid(chain, platform_pose, q, tol, max_iter)
        return q, np.zeros(m), Wrench.from_vector(np.zeros(6))

    k_theta = chain.spring_stiffness()

    def residual(qv, tv, fv):
        table = _coordinate_table(chain, qv, tv)
        jq, jt = table.jacobians()
        r = np.concatenate(
            [
                pose_error(table.tool_pose, platform_pose),
                k_theta @ tv - jt.T @ fv,
                jq.T @ fv,
            ]
        )
        return r, table, jq, jt

    def scaled_norm(r, fv):
        # absolute floors of 1e-3 mm and 1 N, relative above 1 N of load
        force_scale = max(FORCE_SCALE, np.max(np.abs(fv), initial=0.0))
        return max(
            np.max(np.abs(r[:6])) / POSE_SCALE,
            np.max(np.abs(r[6:]), initial=0.0) / force_scale,
        )

    r, table, jq, jt = residual(q, theta, f)
    norm = scaled_norm(r, f)
    for iteration in range(max_iter):
        if norm < tol:
            return q, theta, Wrench.from_vector(f)
        wrench = Wrench.from_vector(f)
        g_qq, g_qt, g_tq, g_tt = _gradient_blocks(table, wrench)
        jac = np.block(
            [
                [jq, jt, np.zeros((6, 6))],
                [-g_tq, k_theta - g_tt, -jt.T],
                [g_qq, g_qt, jq.T],
            ]
        )
        dx, _ = _balanced_solve(jac, -r, "chain equilibrium system")
        step = 1.0
        improved = False
        for _ in range(MAX_HALVINGS):
            qn = q + step * dx[:n]
            tn = theta + step * dx[n : n + m]
            fn = f + step * dx[n + m :]
            rn, table_n, jq_n, jt_n = residual(qn, tn, fn)
            norm_n = scaled_norm(rn, fn)
            if norm_n < norm:
                improved = True
                break
            step *= 0.5
        if not improved:
            raise NoConvergence(
                f"chain equilibrium stalled at residual {norm:.3g} "
                f"after {iteration + 1} iteration(s)",
                residual=norm,
            )
        q, theta, f = qn, tn, fn
        r, table, jq, jt = rn, table_n, jq_n, jt_n
        norm = norm_n
    raise NoConvergence(
        f"chain equilibrium not converged in {max_iter} iterations "
        f"(residual {norm:.3g})",
        residual=norm,
    )


def _solve_rigid(chain, platform_pose, q, tol, max_iter):
    theta = np.zeros(chain.n_spring)
    for iteration in range(max_iter):
        table = _coordinate_table(chain, q, theta)
        r = pose_error(table.tool_pose, platform_pose)
        norm = np.max(np.abs(r)) / POSE_SCALE
        if norm < tol:
            return q
        jq, _ = table.jacobians()
        dq = pseudoinverse(jq) @ (-r)
        if np.max(np.abs(dq)) < 1e-15:
            raise NoConvergence(
                f"rigid pose fit stalled at residual {norm:.3g}; "
                "pose may be outside the rigid motion manifold",
                residual=norm,
            )
        q = q + dq
    raise NoConvergence(
        f"rigid pose fit not converged in {max_iter} iterations",
        residual=norm,
    )


# ----- loaded and unloaded stiffness blocks -----


def _chain_stiffness_blocks(chain, q, theta, wrench, loaded=True):
    """(K_F 6x6, K_q 6xn, diagnostics) for one chain at a configuration.

    Differentiates the equilibrium conditions: K_F is dF/dt of the
    displacement-driven map, K_q the wrench sensitivity to passive-joint
    disturbance torques.  Both come from one solve of the linearized
    saddle system in (dq, dtheta, dF); eliminating dtheta first would
    form compliance sums that bury the stiff directions of heterogeneous
    chains below the soft ones and lose them to rounding.  loaded=False
    drops every load-geometry term, which is the unloaded-mode formula
    evaluated at the same configuration.
    """
    table = _coordinate_table(chain, q, theta)
    jq, jt = table.jacobians()
    n = jq.shape[1]
    m = jt.shape[1]
    k_theta = chain.spring_stiffness()
    if loaded:
        g_qq, g_qt, g_tq, g_tt = _gradient_blocks(table, wrench)
    else:
        g_qq = np.zeros((n, n))
        g_qt = np.zeros((n, m))
        g_tq = g_qt.T
        g_tt = np.zeros((m, m))
    system = np.block(
        [
            [jq, jt, np.zeros((6, 6))],
            [-g_tq, k_theta - g_tt, -jt.T],
            [g_qq, g_qt, jq.T],
        ]
    )
    rhs = np.zeros((6 + m + n, 6 + n))
    rhs[:6, :6] = np.eye(6)
    rhs[6 + m :, 6:] = np.eye(n)
    solution, cond = _balanced_solve(system, rhs, "chain stiffness system")
    k_f = solution[n + m :, :6]
    k_q = solution[n + m :, 6:]
    return k_f, k_q, {"system_condition": cond}


def _state_per_chain(manipulator, state: EquilibriumState):
    return zip(manipulator.chains, state.q, state.theta, state.chain_wrenches)


def stiffness_loaded(manipulator: ManipulatorModel, state: EquilibriumState) -> StiffnessResult:
    """Cartesian stiffness linearized about a converged loaded equilibrium."""
    k_total = np.zeros((6, 6))
    kq_blocks = []
    chain_diags = []
    for chain, q, theta, wrench in _state_per_chain(manipulator, state):
        kf, kq, diag = _chain_stiffness_blocks(chain, q, theta, wrench, loaded=True)
        k_total += kf
        kq_blocks.append(kq)
        chain_diags.append(diag)
    kq_all = np.hstack(kq_blocks) if kq_blocks else np.zeros((6, 0))
    return StiffnessResult(
        K_F=k_total,
        K_q=kq_all,
        condition_diagnostics={
            "chains": chain_diags,
            "total_condition": float(np.linalg.cond(k_total)),
        },
    )


def stiffness_unloaded(manipulator: ManipulatorModel, platform_pose: Pose) -> StiffnessResult:
    """Unloaded-mode stiffness: springs at the pose's zero-load equilibrium,
    with no load-geometry coupling terms in the block system."""
    state = solve_assembly(manipulator, platform_pose=platform_pose)
    k_total = np.zeros((6, 6))
    kq_blocks = []
    chain_diags = []
    for chain, q, theta, wrench in _state_per_chain(manipulator, state):
        kf, kq, diag = _chain_stiffness_blocks(chain, q, theta, wrench, loaded=False)
        k_total += kf
        kq_blocks.append(kq)
        chain_diags.append(diag)
    kq_all = np.hstack(kq_blocks) if kq_blocks else np.zeros((6, 0))
    return StiffnessResult(
        K_F=k_total,
        K_q=kq_all,
        condition_diagnostics={
            "chains": chain_diags,
            "total_condition": float(np.linalg.cond(k_total)),
        },
    )


# ----- assembly equilibrium -----


def _solve_chains_at_pose(manipulator, pose, guesses, tol):
    qs, thetas, wrenches, iters = [], [], [], 0
    for chain, guess in zip(manipulator.chains, guesses):
        q, theta, wrench = solve_chain_equilibrium(
            chain, pose, mode="elastic", initial=guess, tol=tol
        )
        qs.append(q)
        thetas.append(theta)
        wrenches.append(wrench)
    return qs, thetas, wrenches


def _default_guesses(manipulator, initial_guess):
    if initial_guess is None or isinstance(initial_guess, Pose):
        return [None] * len(manipulator.chains)
    if isinstance(initial_guess, EquilibriumState):
        return [
            (q, t, w.as_vector())
            for q, t, w in zip(
                initial_guess.q, initial_guess.theta, initial_guess.chain_wrenches
            )
        ]
    return list(initial_guess)


def solve_assembly(
    manipulator: ManipulatorModel,
    platform_pose: Pose = None,
    external_wrench: Wrench = None,
    initial_guess=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = MAX_ITERATIONS,
) -> EquilibriumState:
    """Equilibrium of all chains grasping one rigid platform.

    Displacement-driven (``platform_pose`` given): each chain is solved at
    that pose; the reported external wrench is the total reaction needed
    to hold it.  Force-driven (``external_wrench`` given): outer Newton on
    the platform pose, using the summed loaded chain stiffness as the
    Jacobian, until the chain reactions balance the applied wrench.  Pass
    exactly one target; a previous EquilibriumState may seed the search.
    """
    if (platform_pose is None) == (external_wrench is None):
        raise ValueError("specify exactly one of platform_pose, external_wrench")
    guesses = _default_guesses(manipulator, initial_guess)

    if platform_pose is not None:
        qs, thetas, wrenches = _solve_chains_at_pose(
            manipulator, platform_pose, guesses, tol
        )
        total = np.sum([w.as_vector() for w in wrenches], axis=0)
        return EquilibriumState(
            q=tuple(qs),
            theta=tuple(thetas),
            chain_wrenches=tuple(wrenches),
            platform_pose=platform_pose,
            external_wrench=Wrench.from_vector(total),
            residual_norm=0.0,
            iterations=1,
        )

    # force-driven: start from the nominal (or seeded) pose
    if isinstance(initial_guess, EquilibriumState):
        pose = initial_guess.platform_pose
    elif isinstance(initial_guess, Pose):
        pose = initial_guess
    else:
        chain0 = manipulator.chains[0]
        pose = forward_geometry(
            chain0, chain0.passive_nominals(), np.zeros(chain0.n_spring)
        )
    return _solve_force_driven(
        manipulator, pose, external_wrench, guesses, tol, max_iter
    )


def _solve_force_driven(manipulator, pose, external_wrench, guesses, tol, max_iter):
    """Monolithic Newton over the platform twist and every chain's state.

    Solving chains to a pose and then correcting the pose from the force
    imbalance amplifies the inner pose tolerance by the stiffest chain
    direction, which can exceed any sensible force tolerance.  Treating
    all unknowns at once keeps every residual row at its own rounding
    floor instead.  When the full load deflects the structure too far for
    one Newton basin, the load is ramped up in fractions with warm
    restarts.
    """
    chains = manipulator.chains
    target = external_wrench.as_vector()

    qs, thetas, fs = [], [], []
    for chain, guess in zip(chains, guesses):
        if guess is None:
            qs.append(chain.passive_nominals())
            thetas.append(np.zeros(chain.n_spring))
            # an even split of the target load; starting a chain with
            # passive joints at exactly F = 0 zeroes the load-geometry
            # terms and leaves the passive rows unable to steer the force
            fs.append(target / len(chains))
        else:
            qs.append(np.array(guess[0], dtype=float).reshape(chain.n_passive))
            thetas.append(np.array(guess[1], dtype=float).reshape(chain.n_spring))
            fs.append(np.array(guess[2], dtype=float).reshape(6))

    current = (pose, qs, thetas, fs)
    reached = 0.0
    fraction = 1.0
    while True:
        attempt = min(1.0, reached + fraction)
        try:
            current, norm, iterations = _force_newton(
                manipulator, current, attempt * target, tol, max_iter
            )
        except NoConvergence:
            fraction *= 0.5
            if fraction < 1.0 / 64.0:
                raise
            continue
        if attempt == 1.0:
            break
        reached = attempt
        fraction *= 2.0
    pose, qs, thetas, fs = current
    return EquilibriumState(
        q=tuple(qs),
        theta=tuple(thetas),
        chain_wrenches=tuple(Wrench.from_vector(f) for f in fs),
        platform_pose=pose,
        external_wrench=external_wrench,
        residual_norm=norm,
        iterations=iterations,
    )


def _force_newton(manipulator, start, target, tol, max_iter):
    chains = manipulator.chains
    k_thetas = [chain.spring_stiffness() for chain in chains]

    # unknown layout: platform twist, then (q_i, theta_i, F_i) per chain
    sizes = [6] + [c.n_passive + c.n_spring + 6 for c in chains]
    offsets = np.cumsum([0] + sizes)
    total = offsets[-1]

    # one scale per solve so norms of different iterates are comparable
    force_scale = max(
        FORCE_SCALE,
        np.max(np.abs(target)),
        *(np.max(np.abs(f), initial=0.0) for f in start[3]),
    )
    scale_parts = []
    for chain in chains:
        scale_parts.append(np.full(6, POSE_SCALE))
        scale_parts.append(np.full(chain.n_spring + chain.n_passive, force_scale))
    scale_parts.append(np.full(6, force_scale))
    scale = np.concatenate(scale_parts)

    def assemble(pose_c, qs_c, ts_c, fs_c):
        rows = []
        jac = np.zeros((total, total))
        row = 0
        for i, chain in enumerate(chains):
            n, m = chain.n_passive, chain.n_spring
            off = offsets[i + 1]
            table = _coordinate_table(chain, qs_c[i], ts_c[i])
            jq, jt = table.jacobians()
            g_qq, g_qt, g_tq, g_tt = _gradient_blocks(
                table, Wrench.from_vector(fs_c[i])
            )
            # chain closure: tool pose equals the platform pose
            rows.append(pose_error(table.tool_pose, pose_c))
            jac[row : row + 6, :6] = -np.eye(6)
            jac[row : row + 6, off : off + n] = jq
            jac[row : row + 6, off + n : off + n + m] = jt
            row += 6
            # spring balance
            rows.append(k_thetas[i] @ ts_c[i] - jt.T @ fs_c[i])
            jac[row : row + m, off : off + n] = -g_tq
            jac[row : row + m, off + n : off + n + m] = k_thetas[i] - g_tt
            jac[row : row + m, off + n + m : off + n + m + 6] = -jt.T
            row += m
            # passive joints transmit nothing
            rows.append(jq.T @ fs_c[i])
            jac[row : row + n, off : off + n] = g_qq
            jac[row : row + n, off + n : off + n + m] = g_qt
            jac[row : row + n, off + n + m : off + n + m + 6] = jq.T
            row += n
        # platform force balance
        rows.append(np.sum(fs_c, axis=0) - target)
        for i in range(len(chains)):
            off = offsets[i + 1] + chains[i].n_passive + chains[i].n_spring
            jac[row : row + 6, off : off + 6] = np.eye(6)
        return np.concatenate(rows), jac

    def apply_step(state, dx, step):
        pose_c, qs_c, ts_c, fs_c = state
        pose_n = _advance_pose(pose_c, step * dx[:6])
        qs_n, ts_n, fs_n = [], [], []
        for i, chain in enumerate(chains):
            n, m = chain.n_passive, chain.n_spring
            off = offsets[i + 1]
            qs_n.append(qs_c[i] + step * dx[off : off + n])
            ts_n.append(ts_c[i] + step * dx[off + n : off + n + m])
            fs_n.append(fs_c[i] + step * dx[off + n + m : off + n + m + 6])
        return pose_n, qs_n, ts_n, fs_n

    # full Newton steps may pass through residual spikes before the fast
    # final contraction, so uphill moves are tolerated for a bounded
    # stretch (watchdog); damping restarts from the best state seen
    state = start
    r, jac = assemble(*state)
    norm = np.max(np.abs(r) / scale)
    best = (state, r, jac, norm)
    uphill = 0
    for iteration in range(max_iter):
        if norm < tol:
            return state, norm, iteration + 1
        dx, _ = _balanced_solve(jac, -r, "assembly equilibrium system")
        cand = apply_step(state, dx, 1.0)
        rn, jac_n = assemble(*cand)
        norm_n = np.max(np.abs(rn) / scale)
        if norm_n < norm:
            uphill = 0
        else:
            uphill += 1
        if uphill <= MAX_UPHILL:
            state, r, jac, norm = cand, rn, jac_n, norm_n
            if norm < best[3]:
                best = (state, r, jac, norm)
            continue
        # watchdog expired: damped search from the best iterate
        state, r, jac, norm = best
        dx, _ = _balanced_solve(jac, -r, "assembly equilibrium system")
        step = 0.5
        improved = False
        for _ in range(MAX_HALVINGS):
            cand = apply_step(state, dx, step)
            rn, jac_n = assemble(*cand)
            norm_n = np.max(np.abs(rn) / scale)
            if norm_n < norm:
                improved = True
                break
            step *= 0.5
        if not improved:
            raise NoConvergence(
                f"assembly equilibrium stalled at residual {norm:.3g}",
                residual=norm,
            )
        uphill = 0
        state, r, jac, norm = cand, rn, jac_n, norm_n
        best = (state, r, jac, norm)
    raise NoConvergence(
        f"assembly equilibrium not converged in {max_iter} iterations "
        f"(residual {norm:.3g})",
        residual=norm,
    )


def deflection_under_load(
    manipulator: ManipulatorModel,
    nominal_pose: Pose,
    wrench: Wrench,
    initial_guess=None,
    tol: float = DEFAULT_TOL,
) -> DeflectionScrew:
    """Platform deflection screw between the loaded equilibrium and the
    nominal pose (small-rotation vector for the orientation part)."""
    if initial_guess is None:
        initial_guess = nominal_pose
    state = solve_assembly(
        manipulator,
        external_wrench=wrench,
        initial_guess=initial_guess,
        tol=tol,
    )
    screw = pose_error(state.platform_pose, nominal_pose)
    return DeflectionScrew.from_vector(screw)
