import math

import numpy as np
import pytest

from _support import random_states, tangent_fd_error
from crbm.bench import solve_hertz
from crbm.nitsche import (
    GAP_SENTINEL,
    CoulombConfig,
    FrictionModel,
    NitscheParams,
    NonConvergence,
    RigidDisk,
    SolverConfig,
    eval_contact_traces,
    ray_gap,
    solve_coulomb,
    solve_nitsche,
)
from crbm.fem import MaterialParams


def test_ray_gap_pole_and_miss():
    disk = RigidDisk(1.0, (0.0, -(1.0 + 0.001 + 1.0)))
    g = ray_gap(np.array([[0.0, -1.0], [1.0, 0.0]]), np.array([[0.0, -1.0], [1.0, 0.0]]), disk)
    assert g[0] == pytest.approx(0.001, abs=1e-15)
    assert g[1] == GAP_SENTINEL


def test_ray_gap_matches_circle_intersection(rng):
    disk = RigidDisk(1.0, (0.0, -2.001))
    theta = rng.uniform(-5 * math.pi / 8, -3 * math.pi / 8, 200)
    p = np.stack([np.cos(theta), np.sin(theta)], 1)
    g = ray_gap(p, p, disk)
    hit = p + g[:, None] * p
    assert np.allclose(np.linalg.norm(hit - disk.center, axis=1), 1.0, atol=1e-12)
    assert np.all(g >= 0.001 - 1e-15)


def test_nitsche_params():
    p = NitscheParams.from_material(MaterialParams(), 0.01, 50.0)
    assert p.gamma == pytest.approx(50.0 * MaterialParams().lame_mu / 0.01)
    with pytest.raises(ValueError):
        FrictionModel.tresca(-1.0)
    with pytest.raises(ValueError):
        FrictionModel.coulomb(0.0)
    with pytest.raises(ValueError):
        SolverConfig(delta_u=0.0)


@pytest.mark.parametrize("fixture", ["coarse_model", "tresca_model"])
def test_tangent_matches_finite_differences(request, fixture, rng):
    model = request.getfixturevalue(fixture)
    system = model.system(0.9)
    base = solve_hertz(model, 0.9).U_cv
    states = random_states(system, base, rng, 3, scale=1e-3)
    assert len(states) == 3
    for U, V in states:
        assert np.any(eval_contact_traces(system.data, U).p_n_gamma_g < 0)
        err, _ = tangent_fd_error(system, U, V)
        assert err <= 1e-5


def test_converged_state_has_small_residual(coarse_model):
    mu = 1.1
    system = coarse_model.system(mu)
    res = solve_hertz(coarse_model, mu)
    assert res.converged and res.k_cv == len(res.increments)
    assert res.increments[-1] <= 1e-8
    r = system.residual(res.U_cv)
    # scale of the effective load: residual of the imposed translation alone
    f_eff = np.linalg.norm(system.a_gamma() @ coarse_model.lift())
    f_eff = max(f_eff, np.linalg.norm(system.residual(system.linear_solution())))
    assert np.linalg.norm(r) <= 10 * 1e-8 * max(f_eff, np.linalg.norm(system.stiffness @ res.U_cv))


@pytest.mark.parametrize("mu", [0.7, 1.0, 1.3])
def test_mirror_symmetry(coarse_model, mu):
    U = solve_hertz(coarse_model, mu).U_cv
    perm, sign = coarse_model.space.mirror_dofs()
    assert np.linalg.norm(sign * U[perm] - U) <= 1e-9 * np.linalg.norm(U)


def test_nonconvergence_carries_result(coarse_model):
    with pytest.raises(NonConvergence) as info:
        solve_nitsche(coarse_model.system(1.0), SolverConfig(1e-8, 2), U0=coarse_model.lift())
    res = info.value.result
    assert res is not None and not res.converged and len(res.iterates) == 3


def test_initial_guess_is_linear_solution(coarse_model):
    system = coarse_model.system(1.0)
    assert np.allclose(system.linear_solution(), coarse_model.lift(), atol=1e-12)


def test_tresca_converges_and_stresses_bounded(tresca_model):
    res = solve_hertz(tresca_model, 1.0)
    tr = tresca_model.nodal_traces(1.0, res.U_cv)
    assert res.converged
    assert np.max(np.abs(tr.sigma_ntau)) > 0


def test_coulomb_fixed_point_deterministic(coarse_model):
    system = coarse_model.system(1.0)
    a = solve_coulomb(system, 0.3, CoulombConfig())
    b = solve_coulomb(system, 0.3, CoulombConfig())
    assert a.converged and a.outer_iterations >= 1
    assert np.array_equal(a.U_cv, b.U_cv)


def test_zero_threshold_limit_is_continuous(coarse_model):
    """Tresca at s = 0 and s = 1e-14 coincide; the limit itself is the symmetric frictional form."""
    mu = 0.7
    sys0 = coarse_model.system(mu, FrictionModel.tresca(0.0))
    sys1 = coarse_model.system(mu, FrictionModel.tresca(1e-14))
    u0 = solve_nitsche(sys0, U0=coarse_model.lift()).U_cv
    u1 = solve_nitsche(sys1, U0=coarse_model.lift()).U_cv
    W = coarse_model.gram(mu)
    assert math.sqrt((u1 - u0) @ W @ (u1 - u0)) <= 1e-12 * math.sqrt(u0 @ W @ u0)


def _rel(model, mu, a, b):
    W = model.gram(mu)
    return math.sqrt((a - b) @ W @ (a - b)) / math.sqrt(b @ W @ b)


@pytest.mark.xfail(strict=True, reason="the frictional Nitsche form subtracts the full sigma(u)n.sigma(v)n term, "
                                      "so its zero-threshold limit differs from the frictionless form by a "
                                      "discretization-level amount (about 6e-4 at h = 10 mm)")
def test_zero_threshold_matches_frictionless(coarse_model):
    mu = 0.7
    u_f = solve_hertz(coarse_model, mu).U_cv
    u_t = solve_hertz(coarse_model, mu, FrictionModel.tresca(1e-14)).U_cv
    assert _rel(coarse_model, mu, u_t, u_f) <= 1e-6


def test_zero_threshold_gap_shrinks_with_h():
    from crbm.bench import HertzConfig, build_hertz_model
    out = []
    for h in (0.01, 0.005):
        m = build_hertz_model(HertzConfig(h_target=h))
        u_f = solve_hertz(m, 0.7).U_cv
        u_t = solve_hertz(m, 0.7, FrictionModel.tresca(1e-14)).U_cv
        out.append(_rel(m, 0.7, u_t, u_f))
    assert out[1] < out[0]


@pytest.mark.xfail(strict=True, reason="Nitsche imposes stick weakly: u_tau ~ sigma_ntau / gamma, "
                                      "about 1e-4 of the frictionless slip at h = 10 mm")
def test_infinite_threshold_clamps_tangential_displacement(coarse_model):
    mu = 1.0
    t0 = coarse_model.nodal_traces(mu, solve_hertz(coarse_model, mu).U_cv)
    t1 = coarse_model.nodal_traces(mu, solve_hertz(coarse_model, mu, FrictionModel.tresca(1e12)).U_cv)
    active = t0.p_n_gamma_g < 0
    assert np.linalg.norm(t1.v_tau[active]) <= 1e-8 * np.linalg.norm(t0.v_tau[active])


def test_infinite_threshold_reduces_slip(coarse_model):
    mu = 1.0
    t0 = coarse_model.nodal_traces(mu, solve_hertz(coarse_model, mu).U_cv)
    t1 = coarse_model.nodal_traces(mu, solve_hertz(coarse_model, mu, FrictionModel.tresca(1e12)).U_cv)
    active = t0.p_n_gamma_g < 0
    assert np.linalg.norm(t1.v_tau[active]) <= 1e-3 * np.linalg.norm(t0.v_tau[active])


def test_plain_newton_cycles_where_line_search_converges(coarse_model):
    system = coarse_model.system(1.0, FrictionModel.tresca(1.0))
    with pytest.raises(NonConvergence):
        solve_nitsche(system, SolverConfig(), U0=coarse_model.lift())
    res = solve_nitsche(system, SolverConfig(line_search=True), U0=coarse_model.lift())
    assert res.converged
    r = system.residual(res.U_cv)
    assert np.linalg.norm(r) <= 1e-6 * np.linalg.norm(system.stiffness @ res.U_cv)


def test_line_search_keeps_converged_solution(tresca_model):
    a = solve_hertz(tresca_model, 1.0, config=SolverConfig())
    b = solve_hertz(tresca_model, 1.0, config=SolverConfig(line_search=True))
    W = tresca_model.gram(1.0)
    assert math.sqrt((a.U_cv - b.U_cv) @ W @ (a.U_cv - b.U_cv)) <= 1e-7 * math.sqrt(a.U_cv @ W @ a.U_cv)


def test_energy_gradient_is_residual(tresca_model, rng):
    system = tresca_model.system(1.0)
    base = solve_hertz(tresca_model, 1.0).U_cv
    e = lambda x: system.energies(x)["J_friction"]
    for U, V in random_states(system, base, rng, 3, scale=1e-3):
        h = 1e-6 * np.linalg.norm(U) / np.linalg.norm(V)
        fd = (e(U + h * V) - e(U - h * V)) / (2 * h)
        assert fd == pytest.approx(system.residual(U) @ V, rel=1e-5)
