"""Dynamic risk measures, measure changes, penalties and dual values.

The risk of a claim X is the backward solve with terminal value -X.  A
measure change is carried by an adapted kernel q; on the lattice it acts
through exact tilted branch weights

    p_up = (1 + q * sqrt(dt)) / 2,    p_down = (1 - q * sqrt(dt)) / 2,

requiring |q| * sqrt(dt) < 1, under which one-step increments gain drift
q * dt.  This makes the dual representation an exact identity on the tree:
the risk value dominates every tilted expectation minus its penalty, with
equality when q is the driver subgradient along the solution's control.

On path ensembles the kernel acts through its stochastic exponential with
log-increments q * dB - ||q||^2 * dt / 2 (the sign convention is validated
by the attainment identity above, not assumed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .drivers import Driver
from .engine import (BasisSpec, BsdeSolution, RevealedClaim, TerminalClaim,
                     _basis_matrix, _ridge_solve, solve_lsmc, solve_tree,
                     tree_backward)
from .errors import (InadmissibleKernelError, InvalidArgumentError,
                     RejectedConfigurationError)
from .grid import PathEnsemble, TreeModel

__all__ = ["RiskProcess", "GirsanovKernel", "PenaltyProcess", "rho",
           "kernel_from_subgradient", "constant_kernel", "penalty",
           "expectation_under_Q", "dual_value"]


@dataclass
class RiskProcess:
    """Adapted risk values rho_k, one array per grid level."""

    values: list
    solution: BsdeSolution
    driver: Driver
    claim: object

    @property
    def initial(self) -> float:
        return self.solution.initial

    def at(self, k: int):
        return self.values[k]


@dataclass
class PenaltyProcess:
    """Adapted minimal-penalty values along one kernel."""

    values: list

    @property
    def initial(self) -> float:
        return float(np.asarray(self.values[0]).flat[0])

    def at(self, k: int):
        return self.values[k]


@dataclass(frozen=True)
class GirsanovKernel:
    """Adapted drift kernel identifying an absolutely continuous measure.

    On a tree, ``q[k]`` holds one value per level-k node (matrices for
    revealed solves); on a path ensemble, one (paths, d) array per step and
    ``density[k]`` the stochastic-exponential values at level k.
    """

    q: list
    discretization: object
    density: list | None = field(default=None, repr=False)

    @property
    def on_tree(self) -> bool:
        return isinstance(self.discretization, TreeModel)

    def tilt_up(self, k: int):
        """Lattice branch weight of the up move under the tilted measure."""
        s = self.discretization.sqrt_dt
        return 0.5 * (1.0 + np.asarray(self.q[k]) * s)

    def density_paths(self, max_steps: int = 16):
        """Exact path-wise densities on a small tree.

        Expands the 2^N binary paths and returns (node_index, L) where
        ``node_index[p, k]`` is the lattice node visited by path p at level
        k and ``L[p, k]`` the running density product.  The density is a
        positive unit-mean martingale under the reference measure.
        """
        if not self.on_tree:
            raise InvalidArgumentError("path expansion applies to tree kernels")
        n = self.discretization.grid.steps
        if n > max_steps:
            raise RejectedConfigurationError(
                f"path expansion needs 2^{n} paths; limit is 2^{max_steps}",
                required_steps=max_steps)
        s = self.discretization.sqrt_dt
        count = 2 ** n
        node = np.zeros((count, n + 1), dtype=int)
        dens = np.ones((count, n + 1))
        for k in range(n):
            ups = (np.arange(count) >> k) & 1
            qk = np.asarray(self.q[k])[node[:, k]]
            node[:, k + 1] = node[:, k] + ups
            dens[:, k + 1] = dens[:, k] * (1.0 + np.where(ups, 1.0, -1.0) * qk * s)
        return node, dens


def rho(driver: Driver, claim, discretization, basis: BasisSpec | None = None,
        **solve_opts) -> RiskProcess:
    """Dynamic risk of ``claim``: the backward solve with terminal -claim."""
    if isinstance(discretization, TreeModel):
        sol = solve_tree(driver, -claim, discretization, **solve_opts)
    elif isinstance(discretization, PathEnsemble):
        if isinstance(claim, RevealedClaim):
            raise InvalidArgumentError("revealed claims are tree-only")
        sol = solve_lsmc(driver, -claim, discretization, basis)
    else:
        raise InvalidArgumentError(
            f"unsupported discretization {type(discretization).__name__}")
    return RiskProcess(sol.values, sol, driver, claim)


def _tree_kernel_values(driver, solution):
    tree = solution.discretization
    times = tree.grid.times
    q = []
    for k, z in enumerate(solution.controls):
        qk = driver.subgradient(times[k], np.asarray(z)[..., None])[..., 0]
        q.append(qk)
    bound = max((float(np.max(np.abs(qk))) for qk in q), default=0.0)
    if bound * tree.sqrt_dt >= 1.0:
        raise RejectedConfigurationError(
            f"kernel magnitude {bound:.4g} makes a lattice weight non-positive; "
            "refine the grid", kernel_bound=bound)
    return q


def kernel_from_subgradient(driver: Driver, solution: BsdeSolution) -> GirsanovKernel:
    """Kernel q_k = subgradient of the driver along the solution's control.

    This is the optimal-scenario kernel: its tilted expectation minus
    penalty attains the risk value.
    """
    if getattr(solution.driver, "name", None) != driver.name:
        raise InvalidArgumentError(
            f"solution was produced by driver {solution.driver!r}, not "
            f"{driver.name!r}; build the kernel from the matching solve")
    if solution.reveal is not None:
        raise InvalidArgumentError(
            "kernels are built from plain solves; revealed solves are not "
            "supported here")
    if isinstance(solution.discretization, TreeModel):
        return GirsanovKernel(_tree_kernel_values(driver, solution),
                              solution.discretization)
    paths = solution.discretization
    times = paths.grid.times
    q = [driver.subgradient(times[k], np.asarray(z)) for k, z in
         enumerate(solution.controls)]
    return GirsanovKernel(q, paths, _path_density(q, paths))


def _path_density(q, paths: PathEnsemble):
    dt = paths.grid.dt
    dens = [np.ones(paths.paths)]
    for k in range(paths.grid.steps):
        qk = np.asarray(q[k], dtype=float)
        inc = np.sum(qk * paths.increments[:, k, :], axis=-1)
        dens.append(dens[-1] * np.exp(inc - 0.5 * np.sum(qk * qk, axis=-1) * dt))
    return dens


def constant_kernel(value, discretization) -> GirsanovKernel:
    """Deterministic constant kernel (scalar for the tree, length-d vector
    for ensembles)."""
    if isinstance(discretization, TreeModel):
        c = float(value)
        if abs(c) * discretization.sqrt_dt >= 1.0:
            raise RejectedConfigurationError(
                f"constant kernel {c:g} violates |q|*sqrt(dt) < 1 on this grid",
                kernel_bound=abs(c))
        q = [np.full(k + 1, c) for k in range(discretization.grid.steps)]
        return GirsanovKernel(q, discretization)
    vec = np.atleast_1d(np.asarray(value, dtype=float))
    if vec.shape != (discretization.dimension,):
        raise InvalidArgumentError(
            f"constant kernel needs {discretization.dimension} coordinates")
    q = [np.broadcast_to(vec, (discretization.paths, discretization.dimension)).copy()
         for _ in range(discretization.grid.steps)]
    return GirsanovKernel(q, discretization, _path_density(q, discretization))


def _claim_values(claim, discretization):
    if isinstance(discretization, TreeModel):
        if isinstance(claim, RevealedClaim):
            return claim.terminal_matrix(discretization), claim.level
        if isinstance(claim, TerminalClaim):
            return claim.on_tree(discretization), None
        return np.asarray(claim, dtype=float), None
    if isinstance(claim, TerminalClaim):
        return claim.on_paths(discretization), None
    return np.asarray(claim, dtype=float), None


def expectation_under_Q(claim, kernel: GirsanovKernel, t: int | None = None,
                        basis: BasisSpec | None = None):
    """Adapted expected loss E_Q[-claim | F_k] along the kernel's measure.

    Returns the list of level arrays, or the level-``t`` array when ``t``
    is given.  On ensembles the conditional expectations are density
    weighted regressions (plain means at k = 0).
    """
    disc = kernel.discretization
    values, reveal = _claim_values(claim, disc)
    if isinstance(disc, TreeModel):
        def update(k, up, down):
            pu = kernel.tilt_up(k)
            if np.ndim(pu) < np.ndim(up):
                pu = np.asarray(pu)[None, :]
            return pu * up + (1.0 - pu) * down

        levels = tree_backward(disc, -values, update, reveal)
    else:
        levels = _path_conditional(-values, kernel, disc, basis or BasisSpec())
    return levels if t is None else levels[t]


def _path_conditional(terminal, kernel: GirsanovKernel, paths: PathEnsemble,
                      basis: BasisSpec):
    """E_Q[terminal | F_k] per path via L(T;k)-weighted regression."""
    if kernel.density is None:
        raise InvalidArgumentError("kernel carries no path density")
    total = np.asarray(terminal, dtype=float)
    out = []
    for k in range(paths.grid.steps + 1):
        weighted = total * kernel.density[-1] / kernel.density[k]
        if k == 0:
            out.append(np.full(paths.paths, float(np.mean(weighted))))
        elif k == paths.grid.steps:
            out.append(weighted)
        else:
            design = _basis_matrix(paths.state_at(k), basis, None)
            out.append(design @ _ridge_solve(design, weighted, basis.ridge))
    return out


def _conjugate_levels(driver, kernel):
    disc = kernel.discretization
    times = disc.grid.times
    out = []
    for k, qk in enumerate(kernel.q):
        conj = driver.conjugate(times[k], np.asarray(qk)[..., None]) \
            if isinstance(disc, TreeModel) else driver.conjugate(times[k], qk)
        conj = np.asarray(conj, dtype=float)
        if np.any(np.isinf(conj)):
            raise InadmissibleKernelError(
                f"driver conjugate is infinite along the kernel at step {k}")
        out.append(conj)
    return out


def penalty(driver: Driver, kernel: GirsanovKernel,
            t: int | None = None, basis: BasisSpec | None = None) -> PenaltyProcess:
    """Minimal penalty of the kernel's measure: the conditional Q-expectation
    of the accumulated driver conjugate along the kernel."""
    disc = kernel.discretization
    conj = _conjugate_levels(driver, kernel)
    dt = disc.grid.dt
    if isinstance(disc, TreeModel):
        def update(k, up, down):
            pu = kernel.tilt_up(k)
            return pu * up + (1.0 - pu) * down + conj[k] * dt

        levels = tree_backward(disc, np.zeros(disc.grid.steps + 1), update)
    else:
        accrued = np.sum(np.column_stack(conj), axis=1) * dt
        running = [accrued.copy()]
        for k in range(disc.grid.steps):
            accrued = accrued - conj[k] * dt
            running.append(accrued.copy())
        levels = []
        b = basis or BasisSpec()
        for k in range(disc.grid.steps + 1):
            weighted = running[k] * kernel.density[-1] / kernel.density[k]
            if k == 0:
                levels.append(np.full(disc.paths, float(np.mean(weighted))))
            elif k == disc.grid.steps:
                levels.append(weighted)
            else:
                design = _basis_matrix(disc.state_at(k), b, None)
                levels.append(design @ _ridge_solve(design, weighted, b.ridge))
    proc = PenaltyProcess(levels)
    return proc if t is None else proc.at(t)


def dual_value(driver: Driver, claim, kernel: GirsanovKernel,
               t: int | None = None, basis: BasisSpec | None = None):
    """One candidate of the dual representation: E_Q[-claim|F_k] - penalty_k.

    Never exceeds the risk value; equals it for the subgradient kernel of
    the claim's own solve.
    """
    expect = expectation_under_Q(claim, kernel, basis=basis)
    pen = penalty(driver, kernel, basis=basis)
    levels = [e - c for e, c in zip(expect, pen.values)]
    return levels if t is None else levels[t]
