import numpy as np
import pytest

from riskalloc import (BasisSpec, InvalidArgumentError,
                       RejectedConfigurationError, TerminalClaim,
                       alloc_driver_entropic_two_level, alloc_driver_gradient,
                       alloc_driver_subdiff, build_grid, build_tree,
                       combine_claims, driver_entropic, driver_scaled_norm,
                       driver_zero, lsmc_block_estimate, lsmc_standard_error,
                       sample_paths,
                       solve_alloc_lsmc, solve_alloc_tree, solve_lsmc,
                       solve_tree)

W = TerminalClaim(lambda w: np.asarray(w, float), label="W")
CALL = TerminalClaim(lambda w: np.maximum(w, 0.0), label="call")


def tree(n, horizon=1.0):
    return build_tree(build_grid(horizon, n))


def test_zero_driver_linear_terminal():
    sol = solve_tree(driver_zero(), W, tree(2))
    assert sol.initial == pytest.approx(0.0, abs=1e-15)


def test_constant_terminal_propagates():
    t = tree(6)
    claim = TerminalClaim(lambda w: np.full(len(w), 1.3), label="c")
    sol = solve_tree(driver_entropic(1.0), claim, t)
    for vals in sol.values:
        assert np.allclose(vals, 1.3, atol=1e-13)


def test_worst_case_value_scaled_norm():
    sol = solve_tree(driver_scaled_norm(0.5), -W, tree(200))
    assert sol.initial == pytest.approx(0.5, abs=2e-2)


def test_recursion_residual_exact():
    t = tree(40)
    drv = driver_scaled_norm(0.8)
    sol = solve_tree(drv, CALL, t)
    dt, s = t.grid.dt, t.sqrt_dt
    for k in range(40):
        up, dn = sol.values[k + 1][1:], sol.values[k + 1][:-1]
        z = (up - dn) / (2 * s)
        resid = sol.values[k] - (0.5 * (up + dn)
                                 + drv.evaluate(t.grid.time(k), z[:, None]) * dt)
        assert np.max(np.abs(resid)) < 1e-12
        assert np.max(np.abs(z - sol.controls[k])) < 1e-14


def test_stability_rejection_names_required_steps():
    with pytest.raises(RejectedConfigurationError) as err:
        solve_tree(driver_scaled_norm(2.0), W, tree(3))
    assert err.value.detail["required_steps"] == 5
    solve_tree(driver_scaled_norm(2.0), W, tree(5))  # admissible


def test_quadratic_driver_step_bound():
    with pytest.raises(RejectedConfigurationError):
        solve_tree(driver_entropic(1.0), W, tree(4), max_step=0.1)
    solve_tree(driver_entropic(1.0), W, tree(16), max_step=0.1)


def test_comparison_theorem_on_tree():
    t = tree(60)
    lo = solve_tree(driver_zero(), W, t)
    hi = solve_tree(driver_scaled_norm(0.5), W, t)
    for a, b in zip(lo.values, hi.values):
        assert np.all(a <= b + 1e-12)
    shifted = TerminalClaim(lambda w: np.asarray(w, float) + 0.1, label="W+.1")
    hi2 = solve_tree(driver_scaled_norm(0.5), shifted, t)
    for a, b in zip(hi.values, hi2.values):
        assert np.all(a <= b + 1e-12)


def test_linear_driver_solution_is_linear():
    t = tree(50)
    base = driver_entropic(1.0)
    zy = solve_tree(base, -W, t).controls
    grad = alloc_driver_gradient(base)
    a = solve_alloc_tree(grad, W, zy, t)
    b = solve_alloc_tree(grad, CALL, zy, t)
    both = solve_alloc_tree(grad, combine_claims([1, 1], [W, CALL]), zy, t)
    scaled = solve_alloc_tree(grad, W.scale(2.5), zy, t)
    for va, vb, vc in zip(a.values, b.values, both.values):
        assert np.max(np.abs(va + vb - vc)) < 1e-10
    for va, vs in zip(a.values, scaled.values):
        assert np.max(np.abs(2.5 * va - vs)) < 1e-10


def test_solver_cash_additivity():
    t = tree(80)
    drv = driver_scaled_norm(0.5)
    base = solve_tree(drv, CALL, t)
    shifted = solve_tree(drv, CALL + TerminalClaim(lambda w: np.full(len(w), 0.7),
                                                   label="c"), t)
    for a, b in zip(base.values, shifted.values):
        assert np.max(np.abs(b - (a + 0.7))) < 1e-12


def test_alloc_diagonal_matches_base_solve():
    t = tree(100)
    for drv in (driver_scaled_norm(0.5), driver_entropic(1.0)):
        base = solve_tree(drv, -W, t)
        alloc = alloc_driver_subdiff(drv)
        again = solve_alloc_tree(alloc, W, base.controls, t)
        for a, b in zip(base.values, again.values):
            assert np.max(np.abs(a - b)) < 1e-12
        for a, b in zip(base.controls, again.controls):
            assert np.max(np.abs(a - b)) < 1e-13


def test_alloc_zero_position_stays_zero():
    t = tree(60)
    drv = driver_entropic(1.0)
    zy = solve_tree(drv, -CALL, t).controls
    grad = alloc_driver_gradient(drv)  # vanishes at z = 0
    zero = TerminalClaim(lambda w: np.zeros(len(w)), label="0")
    sol = solve_alloc_tree(grad, zero, zy, t)
    for vals in sol.values:
        assert np.max(np.abs(vals)) < 1e-14


def test_alloc_no_undercut_vs_rho_on_tree():
    t = tree(200)
    drv = driver_scaled_norm(0.5)
    zy = solve_tree(drv, -W, t).controls
    alloc = alloc_driver_subdiff(drv)
    lam = solve_alloc_tree(alloc, CALL, zy, t)
    risk = solve_tree(drv, -CALL, t)
    for a, b in zip(lam.values, risk.values):
        assert np.all(a <= b + 1e-12)


def test_alloc_grid_mismatch_rejected():
    t = tree(20)
    zy = solve_tree(driver_scaled_norm(0.5), -W, tree(10)).controls
    with pytest.raises(InvalidArgumentError):
        solve_alloc_tree(alloc_driver_subdiff(driver_scaled_norm(0.5)), W, zy, t)


def test_lsmc_zero_driver_unbiased():
    paths = sample_paths(build_grid(1.0, 20), 1, 100_000, seed=42)
    sol = solve_lsmc(driver_zero(), W, paths)
    assert abs(sol.initial) <= 3 * lsmc_standard_error(sol)


def test_lsmc_entropic_linear_terminal():
    paths = sample_paths(build_grid(1.0, 50), 1, 100_000, seed=42)
    sol = solve_lsmc(driver_entropic(1.0), -W, paths)
    assert sol.initial == pytest.approx(0.5, rel=0.02)


def test_lsmc_constant_terminal_exact():
    paths = sample_paths(build_grid(1.0, 10), 1, 5_000, seed=1)
    claim = TerminalClaim(lambda w: np.full(len(w), 2.2), label="c")
    sol = solve_lsmc(driver_zero(), claim, paths)
    assert sol.initial == pytest.approx(2.2, abs=1e-8)


def test_lsmc_needs_enough_paths():
    paths = sample_paths(build_grid(1.0, 4), 1, 30, seed=1)
    with pytest.raises(InvalidArgumentError):
        solve_lsmc(driver_zero(), W, paths)


def test_alloc_lsmc_two_level_closed_form():
    # portfolio W, sub-position W/2: value is 0.5 + log E[exp(W/2)] = 0.625
    paths = sample_paths(build_grid(1.0, 50), 1, 100_000, seed=42)
    base = driver_entropic(1.0)
    zy = solve_lsmc(base, -W, paths).controls
    alloc = alloc_driver_entropic_two_level(1.0, 1.0)
    half = TerminalClaim(lambda w: 0.5 * np.asarray(w, float), label="W/2")
    sol = solve_alloc_lsmc(alloc, half, zy, paths)
    expected = 0.5 + 0.125
    assert sol.initial == pytest.approx(expected, rel=0.02)


def test_alloc_lsmc_requires_matching_ensemble():
    paths = sample_paths(build_grid(1.0, 10), 1, 2_000, seed=3)
    other = sample_paths(build_grid(1.0, 10), 1, 1_000, seed=3)
    zy = solve_lsmc(driver_entropic(1.0), -W, other).controls
    with pytest.raises(InvalidArgumentError):
        solve_alloc_lsmc(alloc_driver_subdiff(driver_entropic(1.0)), W, zy, paths)


def test_alloc_subdiff_zero_position_tree_vs_lsmc():
    # X = 0 has a penalty-like value; the lattice is the oracle
    n = 50
    t = tree(n)
    drv = driver_entropic(1.0)
    zy_t = solve_tree(drv, -CALL, t).controls
    alloc = alloc_driver_subdiff(drv)
    zero = TerminalClaim(lambda w: np.zeros(np.shape(w)[0]), label="0")
    tree_val = solve_alloc_tree(alloc, zero, zy_t, t).initial

    paths = sample_paths(build_grid(1.0, n), 1, 100_000, seed=9)
    zy_p = solve_lsmc(drv, -CALL, paths).controls
    mc_val = solve_alloc_lsmc(alloc, zero, zy_p, paths).initial
    assert mc_val == pytest.approx(tree_val, abs=max(0.02 * abs(tree_val), 5e-3))


@pytest.mark.parametrize("make_driver_fn", [driver_zero,
                                            lambda: driver_scaled_norm(0.5)])
def test_lsmc_matches_tree_within_three_se(make_driver_fn):
    n = 50
    drv = make_driver_fn()
    t = tree(n)
    basis = BasisSpec(degree=5)
    paths = sample_paths(build_grid(1.0, n), 1, 4_000, seed=17)
    corpus = (W, CALL,
              TerminalClaim(lambda w: np.exp(-np.asarray(w, float) ** 2),
                            label="bump"),
              TerminalClaim(lambda w: np.asarray(w, float) / (1 + np.abs(w)),
                            label="squash"))
    for claim in corpus:
        ref = solve_tree(drv, -claim, t).initial
        est, se = lsmc_block_estimate(
            lambda sub: solve_lsmc(drv, -claim, sub, basis).initial, paths)
        assert abs(est - ref) <= 3 * se, (claim.label, est, ref, se)


def test_lsmc_straddle_known_projection_bias():
    # |W| under the worst-case driver stresses the polynomial basis: the
    # regression cannot fully resolve the step-shaped control around the
    # kink, leaving a small systematic gap that more paths do not remove.
    n = 50
    drv = driver_scaled_norm(0.5)
    straddle = TerminalClaim(lambda w: np.abs(w), label="abs")
    ref = solve_tree(drv, -straddle, tree(n)).initial
    paths = sample_paths(build_grid(1.0, n), 1, 4_000, seed=17)
    est = solve_lsmc(drv, -straddle, paths, BasisSpec(degree=5)).initial
    assert abs(est - ref) <= 0.05


def test_basis_size_and_payoff_column():
    basis = BasisSpec(degree=3, include_payoff=True)
    assert basis.size(1) == 5
    assert BasisSpec(degree=2, include_payoff=False).size(2) == 6


def test_claim_bound_enforced():
    t = tree(10)
    bounded = TerminalClaim(lambda w: np.asarray(w, float), bound=0.5, label="W")
    with pytest.raises(InvalidArgumentError):
        solve_tree(driver_zero(), bounded, t)
