"""Backward solvers: exact lattice recursion and regression Monte Carlo.

Tree recursion (the oracle).  With dt = T/N and s = sqrt(dt), each level is
computed from its children by

    Z_k = (Y_up - Y_down) / (2 s)
    Y_k = (Y_up + Y_down) / 2 + g(t_k, Z_k) * dt

which is exact nonlinear dynamic programming on the lattice: every identity
of the continuous theory that survives discretization holds here to
floating-point accuracy, which is what the axiom checks rely on.

Claims revealed mid-horizon.  Amounts that become known at level t (used by
cash-additivity, riskless and time-consistency checks) make the terminal
value depend on the level-t node as well as the terminal node.  The solver
then runs one copy of the recursion per level-t node (vectorized as a
matrix with one row per copy), collapses to the diagonal at level t and
continues as usual.  Such solutions store matrices at levels >= reveal.

LSMC.  Standard backward regression Monte Carlo: Z from regressing
Y_{k+1} * dB_k / dt on basis functions of the current state, Y from the
fitted conditional expectation plus the driver step.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .drivers import AllocDriver, Driver
from .errors import (InvalidArgumentError, NumericalFailureError,
                     RejectedConfigurationError)
from .grid import PathEnsemble, TreeModel

__all__ = ["TerminalClaim", "RevealedClaim", "BasisSpec", "BsdeSolution",
           "solve_tree", "solve_alloc_tree", "solve_lsmc", "solve_alloc_lsmc",
           "tree_backward", "cone_mask", "combine_claims", "lsmc_standard_error",
           "lsmc_block_estimate"]


@dataclass(frozen=True)
class TerminalClaim:
    """A payoff of the terminal Brownian value with an essential bound.

    ``payoff`` maps terminal states (shape (n,) for d=1, (n, d) otherwise)
    to values of shape (n,).  ``bound`` is checked whenever the claim is
    evaluated on a discretization.
    """

    payoff: Callable = field(repr=False)
    bound: float = np.inf
    label: str = "claim"

    def evaluate(self, states) -> np.ndarray:
        values = np.asarray(self.payoff(states), dtype=float)
        if values.ndim == 0 and np.ndim(states) >= 1:
            values = np.full(np.shape(states)[0], float(values))
        if np.any(np.abs(values) > self.bound):
            raise InvalidArgumentError(
                f"claim {self.label!r} exceeds its bound {self.bound:g}")
        return values

    def on_tree(self, tree: TreeModel) -> np.ndarray:
        return self.evaluate(tree.terminal_states)

    def on_paths(self, paths: PathEnsemble) -> np.ndarray:
        return self.evaluate(paths.terminal_values())

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, a: float) -> "TerminalClaim":
        p = self.payoff
        return TerminalClaim(lambda w: a * np.asarray(p(w), dtype=float),
                             abs(a) * self.bound, f"{a:g}*{self.label}")

    def __add__(self, other: "TerminalClaim") -> "TerminalClaim":
        p, q = self.payoff, other.payoff
        return TerminalClaim(
            lambda w: np.asarray(p(w), dtype=float) + np.asarray(q(w), dtype=float),
            self.bound + other.bound, f"{self.label}+{other.label}")

    def __sub__(self, other: "TerminalClaim") -> "TerminalClaim":
        return self + other.scale(-1.0)


def combine_claims(weights, claims, label=None) -> TerminalClaim:
    """Exact linear combination: the payoff is the float sum of the parts."""
    weights = [float(w) for w in weights]
    parts = [c.payoff for c in claims]

    def payoff(w):
        total = weights[0] * np.asarray(parts[0](w), dtype=float)
        for a, p in zip(weights[1:], parts[1:]):
            total = total + a * np.asarray(p(w), dtype=float)
        return total

    bound = sum(abs(a) * c.bound for a, c in zip(weights, claims))
    if label is None:
        label = "+".join(f"{a:g}*{c.label}" for a, c in zip(weights, claims))
    return TerminalClaim(payoff, bound, label)


@dataclass(frozen=True)
class RevealedClaim:
    """Terminal claim plus an amount revealed at a lattice level.

    ``values`` holds the revealed amount per node of level ``level``; the
    claim pays terminal + revealed.  ``terminal`` may be None for purely
    revealed amounts.  Only meaningful on the tree.
    """

    level: int
    values: np.ndarray
    terminal: TerminalClaim | None = None
    label: str = "revealed"

    def terminal_matrix(self, tree: TreeModel) -> np.ndarray:
        n = tree.grid.steps
        if not 0 <= self.level <= n:
            raise InvalidArgumentError(
                f"reveal level {self.level} outside the grid 0..{n}")
        rev = np.asarray(self.values, dtype=float)
        if rev.shape != (self.level + 1,):
            raise InvalidArgumentError(
                f"revealed values must have shape ({self.level + 1},), got {rev.shape}")
        base = (self.terminal.on_tree(tree) if self.terminal is not None
                else np.zeros(n + 1))
        return base[None, :] + rev[:, None]

    def __neg__(self):
        term = None if self.terminal is None else -self.terminal
        return RevealedClaim(self.level, -np.asarray(self.values, dtype=float),
                             term, f"-({self.label})")


@dataclass(frozen=True)
class BasisSpec:
    """Regression basis: monomials up to ``degree`` plus the payoff shape."""

    degree: int = 3
    include_payoff: bool = True
    ridge: float = 1e-8

    def size(self, dimension: int) -> int:
        mono = len(list(_monomials(dimension, self.degree)))
        return mono + (1 if self.include_payoff else 0)


def _monomials(dimension, degree):
    for combo in itertools.product(range(degree + 1), repeat=dimension):
        if sum(combo) <= degree:
            yield combo


def _basis_matrix(state, spec: BasisSpec, payoff=None):
    x = np.asarray(state, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    cols = [np.prod(x ** np.asarray(e), axis=1) for e in _monomials(x.shape[1], spec.degree)]
    if spec.include_payoff and payoff is not None:
        w = state if np.ndim(state) == 1 else x
        cols.append(np.asarray(payoff(w), dtype=float))
    return np.column_stack(cols)


@dataclass
class BsdeSolution:
    """Adapted value/control pair from a backward solve.

    ``values[k]`` are the node (or path) values at level k; ``controls[k]``
    the volatility estimates over step k -> k+1 (the recursion never needs a
    terminal control; queries past the last step return the final one).
    For revealed solves, levels >= ``reveal`` hold one row per level-reveal
    node and the honest per-node values at the reveal level sit on the
    diagonal.
    """

    values: list
    controls: list
    discretization: object
    driver: object
    method: str
    metadata: dict = field(default_factory=dict)
    reveal: int | None = None

    @property
    def initial(self) -> float:
        return float(np.asarray(self.values[0]).flat[0])

    def control_at(self, k: int):
        return self.controls[min(k, len(self.controls) - 1)]

    def values_at_reveal(self) -> np.ndarray:
        if self.reveal is None:
            raise InvalidArgumentError("not a revealed solve")
        return np.diagonal(self.values[self.reveal]).copy()


def cone_mask(level: int, reveal: int) -> np.ndarray:
    """Reachable cells (row=reveal node, col=level node) at ``level`` >= reveal."""
    v = np.arange(reveal + 1)[:, None]
    j = np.arange(level + 1)[None, :]
    return (j >= v) & (j <= v + (level - reveal))


def tree_backward(tree: TreeModel, terminal, update, reveal=None):
    """Generic backward pass; ``update(k, up, down)`` produces level k.

    ``terminal`` is the level-N value array, or a (reveal+1, N+1) matrix of
    per-copy terminal values when ``reveal`` is given.  Returns the list of
    level arrays (matrices above the reveal level).
    """
    n = tree.grid.steps
    levels = [None] * (n + 1)
    src = np.asarray(terminal, dtype=float)
    levels[n] = src
    if reveal is not None and reveal == n:
        src = np.diagonal(src).copy()
    for k in range(n - 1, -1, -1):
        vals = update(k, src[..., 1:], src[..., : k + 1])
        levels[k] = vals
        src = vals
        if reveal is not None and k == reveal:
            src = np.diagonal(vals).copy()
    return levels


def _required_steps(lipschitz, horizon):
    return int(np.floor(lipschitz * lipschitz * horizon)) + 1


def _check_tree_preconditions(lipschitz, quadratic, tree, max_step):
    dt = tree.grid.dt
    if lipschitz is not None and lipschitz > 0:
        if lipschitz * np.sqrt(dt) >= 1.0:
            need = _required_steps(lipschitz, tree.grid.horizon)
            raise RejectedConfigurationError(
                f"stability requires mu*sqrt(dt) < 1; use at least N = {need} steps",
                required_steps=need)
    elif quadratic and max_step is not None and dt > max_step:
        need = int(np.ceil(tree.grid.horizon / max_step))
        raise RejectedConfigurationError(
            f"quadratic-growth driver needs dt <= {max_step:g}; use N >= {need}",
            required_steps=need)


def _terminal_on_tree(terminal, tree):
    """Normalize a claim / revealed claim / raw array to (values, reveal)."""
    if isinstance(terminal, RevealedClaim):
        return terminal.terminal_matrix(tree), terminal.level
    if isinstance(terminal, TerminalClaim):
        return terminal.on_tree(tree), None
    values = np.asarray(terminal, dtype=float)
    if values.shape[-1] != tree.grid.steps + 1:
        raise InvalidArgumentError(
            f"terminal values have {values.shape[-1]} entries, lattice has "
            f"{tree.grid.steps + 1} terminal nodes")
    reveal = values.shape[0] - 1 if values.ndim == 2 else None
    return values, reveal


def solve_tree(driver: Driver, terminal, tree: TreeModel, *,
               max_step=None) -> BsdeSolution:
    """Backward lattice solve; ``terminal`` supplies the level-N values as is."""
    _check_tree_preconditions(driver.lipschitz, driver.quadratic_growth, tree, max_step)
    term, reveal = _terminal_on_tree(terminal, tree)
    dt, s = tree.grid.dt, tree.sqrt_dt
    times = tree.grid.times
    controls = [None] * tree.grid.steps

    def update(k, up, down):
        z = (up - down) / (2.0 * s)
        controls[k] = z
        return 0.5 * (up + down) + driver.evaluate(times[k], z[..., None]) * dt

    values = tree_backward(tree, term, update, reveal)
    margin = (driver.lipschitz or 0.0) * s
    return BsdeSolution(values, controls, tree, driver, "tree",
                        {"stability_margin": margin}, reveal)


def _aligned_zy(z_y, k, like):
    zk = np.asarray(z_y[k], dtype=float)
    if zk.ndim < like.ndim:
        zk = zk[None, :]
    return zk


def _validate_zy(z_y, tree, reveal):
    n = tree.grid.steps
    if len(z_y) < n:
        raise InvalidArgumentError(
            f"portfolio control has {len(z_y)} steps, lattice needs {n}")
    for k in range(n):
        zk = np.asarray(z_y[k])
        if zk.shape[-1] != k + 1:
            raise InvalidArgumentError(
                f"portfolio control at step {k} has trailing size {zk.shape[-1]}, "
                f"expected {k + 1} (grid mismatch)")
        if zk.ndim == 2 and reveal is None:
            raise InvalidArgumentError(
                "portfolio control is revealed but the claim is not; solve the "
                "claim as a revealed claim at the same level")


def solve_alloc_tree(alloc: AllocDriver, position, z_y, tree: TreeModel, *,
                     max_step=None) -> BsdeSolution:
    """Allocation solve for sub-position ``position``: terminal value is -position.

    ``z_y`` is the control process of the base solve of the negated
    portfolio on the same lattice (one array per step).
    """
    _check_tree_preconditions(alloc.lipschitz, alloc.quadratic_growth, tree, max_step)
    pos, reveal = _terminal_on_tree(position, tree)
    term = -pos
    _validate_zy(z_y, tree, reveal)
    dt, s = tree.grid.dt, tree.sqrt_dt
    times = tree.grid.times
    controls = [None] * tree.grid.steps

    def update(k, up, down):
        z = (up - down) / (2.0 * s)
        controls[k] = z
        zyk = _aligned_zy(z_y, k, z)
        g = alloc.evaluate(times[k], z[..., None], zyk[..., None])
        return 0.5 * (up + down) + g * dt

    values = tree_backward(tree, term, update, reveal)
    margin = (alloc.lipschitz or 0.0) * s
    return BsdeSolution(values, controls, tree, alloc, "tree",
                        {"stability_margin": margin}, reveal)


def _ridge_solve(design, targets, ridge):
    gram = design.T @ design + ridge * np.eye(design.shape[1])
    try:
        coef = np.linalg.solve(gram, design.T @ targets)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(
            f"regression is singular despite ridge {ridge:g}",
            condition=float(np.linalg.cond(gram))) from exc
    if not np.all(np.isfinite(coef)):
        raise NumericalFailureError(
            "regression produced non-finite coefficients",
            condition=float(np.linalg.cond(gram)))
    return coef


def _lsmc_core(step_driver, terminal_values, paths: PathEnsemble,
               basis: BasisSpec, payoff):
    n, dt = paths.grid.steps, paths.grid.dt
    m, d = paths.paths, paths.dimension
    size = basis.size(d)
    if m < 10 * size:
        raise InvalidArgumentError(
            f"need at least 10 paths per basis function: M = {m} < {10 * size}")
    times = paths.grid.times
    values = [None] * (n + 1)
    controls = [None] * n
    y = np.asarray(terminal_values, dtype=float)
    values[n] = y
    db = paths.increments
    for k in range(n - 1, -1, -1):
        # The Z target is centered by the fitted conditional mean: same
        # conditional expectation, but variance O(1) instead of O(1/dt),
        # which kills the convexity bias g(Z_hat) would otherwise inherit.
        if k == 0:
            cond = np.full(m, float(np.mean(y)))
            target_z = (y - cond)[:, None] * db[:, k, :] / dt
            z = np.broadcast_to(np.mean(target_z, axis=0), (m, d)).copy()
        else:
            design = _basis_matrix(paths.state_at(k), basis, payoff)
            cond = design @ _ridge_solve(design, y, basis.ridge)
            target_z = (y - cond)[:, None] * db[:, k, :] / dt
            z = design @ _ridge_solve(design, target_z, basis.ridge)
        y = cond + step_driver(k, times[k], z) * dt
        values[k] = y
        controls[k] = z
    return values, controls, size


def solve_lsmc(driver: Driver, terminal, paths: PathEnsemble,
               basis: BasisSpec | None = None) -> BsdeSolution:
    """Least-squares Monte Carlo solve; terminal values are used as is."""
    basis = basis or BasisSpec()
    if isinstance(terminal, TerminalClaim):
        term, payoff = terminal.on_paths(paths), terminal.payoff
    else:
        term, payoff = np.asarray(terminal, dtype=float), None
    values, controls, size = _lsmc_core(
        lambda k, t, z: driver.evaluate(t, z), term, paths, basis, payoff)
    return BsdeSolution(values, controls, paths, driver, "lsmc",
                        {"basis_size": size, "seed": paths.seed,
                         "ridge": basis.ridge})


def solve_alloc_lsmc(alloc: AllocDriver, position, z_y, paths: PathEnsemble,
                     basis: BasisSpec | None = None) -> BsdeSolution:
    """Allocation LSMC: terminal is -position, step uses the frozen z_y."""
    basis = basis or BasisSpec()
    if isinstance(position, TerminalClaim):
        pos, payoff = position.on_paths(paths), position.payoff
    else:
        pos, payoff = np.asarray(position, dtype=float), None
    if len(z_y) < paths.grid.steps:
        raise InvalidArgumentError("portfolio control does not cover the grid")
    for k in range(paths.grid.steps):
        if np.shape(z_y[k]) != (paths.paths, paths.dimension):
            raise InvalidArgumentError(
                "portfolio control must come from the same ensemble "
                f"(step {k} has shape {np.shape(z_y[k])})")

    values, controls, size = _lsmc_core(
        lambda k, t, z: alloc.evaluate(t, z, z_y[k]), -pos, paths, basis, payoff)
    return BsdeSolution(values, controls, paths, alloc, "lsmc",
                        {"basis_size": size, "seed": paths.seed,
                         "ridge": basis.ridge})


def lsmc_standard_error(solution: BsdeSolution) -> float:
    """Cheap standard-error proxy for the initial LSMC value.

    Uses the first-step value spread; adequate for comparisons between
    quantities computed on the same ensemble (their noise is correlated).
    For absolute error bands prefer ``lsmc_block_estimate``.
    """
    if solution.method != "lsmc":
        raise InvalidArgumentError("standard error applies to LSMC solutions")
    spread = np.std(np.asarray(solution.values[1]))
    return float(spread / np.sqrt(len(solution.values[1])))


def lsmc_block_estimate(solve, paths: PathEnsemble, blocks: int = 10):
    """Block-resampled (estimate, standard error) for an LSMC functional.

    ``solve`` maps a PathEnsemble to a float.  The ensemble is split into
    contiguous blocks, the functional recomputed per block and the standard
    error taken across blocks, so regression noise is included.
    """
    if blocks < 2 or paths.paths < 2 * blocks:
        raise InvalidArgumentError("need at least two blocks of paths")
    size = paths.paths // blocks
    estimates = []
    for b in range(blocks):
        chunk = paths.increments[b * size:(b + 1) * size]
        sub = PathEnsemble(paths.grid, paths.dimension, chunk.shape[0],
                           paths.seed, chunk)
        estimates.append(float(solve(sub)))
    estimates = np.asarray(estimates)
    return float(solve(paths)), float(np.std(estimates, ddof=1) / np.sqrt(blocks))
