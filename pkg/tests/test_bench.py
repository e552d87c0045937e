import numpy as np
import pytest

from crbm.bench import (
    HertzConfig,
    NotApplicable,
    ParameterSets,
    StudyTable,
    convergence_study,
    error_alart_curnier_normal,
    gap_violation,
    parse_grid,
    rb_error_metrics,
    solve_hertz,
)
from crbm.fem import build_fe_space
from crbm.mesh import GeometricMapping, apply_mapping
from crbm.nitsche import ContactData, ContactPattern, FrictionModel, NitscheParams, local_correction

from _support import tresca_stress_ratio


def test_parse_grid():
    g = parse_grid("0.7:0.0075:61")
    assert len(g) == 61 and g[0] == 0.7 and g[-1] == 1.15 and g[40] == 1.0
    assert parse_grid("1, 2,3").tolist() == [1.0, 2.0, 3.0]


def test_parameter_sets_deterministic():
    a, b = ParameterSets.standard(7), ParameterSets.standard(7)
    assert np.array_equal(a.D_valid, b.D_valid)
    assert not np.array_equal(a.D_valid, ParameterSets.standard(8).D_valid)
    r = a.restricted_valid(1.18)
    assert np.all(r <= 1.18) and len(r) == np.sum(a.D_valid <= 1.18)


def test_config_rejects_bad_range():
    with pytest.raises(ValueError):
        HertzConfig(mu_range=(0.0, 1.0))


def test_model_rejects_mu_outside_range(coarse_model):
    with pytest.raises(ValueError):
        coarse_model.system(1.5)


@pytest.mark.parametrize("friction", [FrictionModel.frictionless(), FrictionModel.tresca(0.1)])
@pytest.mark.parametrize("mu", [0.7, 1.13, 1.3])
def test_scaled_operators_match_mapped_mesh(coarse_model, friction, mu):
    """The reference correction equals the one assembled on the mapped domain with its own mesh size."""
    m = coarse_model
    mapped = build_fe_space(apply_mapping(m.mesh, GeometricMapping(mu)), m.config.degree)
    gamma = NitscheParams.from_material(m.config.material, mu * m.config.h_target, m.config.gamma0_factor).gamma
    assert gamma == pytest.approx(m.gamma_at(mu), rel=1e-15)
    data = ContactData.build(mapped.contact, m.config.material, gamma, m.gap(mu))
    pattern = ContactPattern.build(mapped.contact.dofs, mapped.n_dof)
    direct = pattern.to_matrix(pattern.matrix_values(local_correction(data, friction)))
    assert abs(direct - m.correction_ref(friction)).max() <= 1e-12 * abs(direct).max()
    via_system = m.system(mu, friction).correction()
    assert abs(direct - via_system).max() <= 1e-12 * abs(direct).max()
    assert np.allclose(data.gap, m.contact_data(mu).gap, rtol=0, atol=1e-15)


def test_lift_matches_dirichlet_data(coarse_model):
    lift = coarse_model.lift()
    dofs = coarse_model.space.dirichlet_dofs
    assert np.array_equal(lift[dofs], coarse_model.dirichlet_values())


def test_tresca_physical_sanity(tresca_model):
    s = tresca_model.config.friction.s
    for mu in (0.7, 1.0, 1.3):
        res = solve_hertz(tresca_model, mu)
        assert gap_violation(tresca_model, mu, res.U_cv) <= 1e-3 * tresca_model.config.d
        ratio, count = tresca_stress_ratio(tresca_model, mu, res.U_cv, s)
        assert count > 50 and ratio <= 1.15


def test_rb_metrics_zero_for_identical(coarse_model):
    res = solve_hertz(coarse_model, 1.0)
    m = rb_error_metrics(coarse_model, 1.0, res.U_cv, res.U_cv)
    assert m == {"e_u": 0.0, "e_nn": 0.0, "e_ntau": 0.0}
    m = rb_error_metrics(coarse_model, 1.0, res.U_cv, 1.01 * res.U_cv)
    assert m["e_u"] == pytest.approx(0.01, rel=1e-10)


def test_not_applicable_without_contact(coarse_model):
    tr = coarse_model.nodal_traces(1.0, np.zeros(coarse_model.n_dof))
    with pytest.raises(NotApplicable):
        error_alart_curnier_normal(tr)


def test_study_orders():
    t = StudyTable([1.0, 2.0], [0.04, 0.02, 0.01], np.array([[4.0, 2.0, 1.0], [1.0, 0.25, 0.0625]]),
                   np.zeros((2, 3), int), "e_AC_n")
    assert np.allclose(t.orders(), [[1.0, 1.0], [2.0, 2.0]])
    assert StudyTable([1.0], [0.01], np.ones((1, 1)), np.zeros((1, 1), int), "e").orders().shape == (1, 0)


def test_convergence_study_small():
    t = convergence_study(HertzConfig(), [1.0], [0.02, 0.01])
    assert t.metric == "e_AC_n" and t.errors.shape == (1, 2) and np.all(t.errors > 0)
    assert np.all(t.iterations >= 1)
    with pytest.raises(ValueError):
        convergence_study(HertzConfig(), [], [0.01])


@pytest.mark.parametrize("mu", [0.7, 1.0, 1.3])
def test_nitsche_operator_coercive(coarse_model, mu):
    """A_gamma(mu) on the free DOFs is positive definite over the whole parameter range."""
    system = coarse_model.system(mu)
    free = np.ones(system.n_dof, bool)
    free[system.dirichlet_dofs] = False
    A = system.a_gamma()[free][:, free].toarray()
    assert np.linalg.eigvalsh(A)[0] > 0.0
