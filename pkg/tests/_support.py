"""Shared numerical checks used by the unit and acceptance tests."""

import numpy as np

from crbm.nitsche import ball_proj_jacobian, eval_contact_traces


def kink_margin(system, U, V, h):
    """True if the segment ``U +- h V`` crosses no kink of the contact operators."""
    t0 = eval_contact_traces(system.data, U)
    dt = eval_contact_traces(system.data, V)
    w = system.data.points.weights > 0
    ok = np.all(np.abs(t0.p_n_gamma_g[w]) > 2 * h * np.abs(dt.p_n_gamma_g[w]))
    if system.friction.tangential:
        s = np.broadcast_to(np.asarray(system.friction.s, float), t0.p_tau.shape)
        gap = np.abs(np.abs(t0.p_tau) - s)
        ok &= np.all(gap[w] > 2 * h * np.abs(dt.p_tau[w]))
    return bool(ok)


def tangent_fd_error(system, U, V, rel_step=1e-6):
    """Relative mismatch between ``(A + B(U)) V`` and the central difference of the residual."""
    h = rel_step * np.linalg.norm(U) / np.linalg.norm(V)
    a = system.a_gamma()
    free = np.ones(system.n_dof, bool)
    free[system.dirichlet_dofs] = False
    jv = (a @ V + system.b_gamma(U) @ V)[free]
    fd = ((system.residual(U + h * V, a) - system.residual(U - h * V, a)) / (2 * h))[free]
    return float(np.linalg.norm(jv - fd) / np.linalg.norm(jv)), h


def random_states(system, base, rng, count, scale=0.02, max_tries=2000):
    """Perturbed states around ``base`` with random directions avoiding every kink."""
    out = []
    free = np.ones(system.n_dof, bool)
    free[system.dirichlet_dofs] = False
    tries = 0
    while len(out) < count and tries < max_tries:
        tries += 1
        U = base.copy()
        U[free] += scale * np.abs(base).max() * rng.standard_normal(free.sum()) * rng.uniform(0.1, 1.0)
        V = np.zeros_like(U)
        V[free] = rng.standard_normal(free.sum())
        h = 1e-6 * np.linalg.norm(U) / np.linalg.norm(V)
        if kink_margin(system, U, V, h):
            out.append((U, V))
    return out


def stick_fraction(trace, s):
    return float(np.mean(ball_proj_jacobian(trace.p_tau, s)))


def away_from_transitions(coords, flags, radius):
    """Nodes farther than ``radius`` from any node with a different value of one of the status flags."""
    D = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
    near = D <= radius
    far = np.ones(len(coords), bool)
    for f in flags:
        far &= ~np.any(near & (f[:, None] != f[None, :]), axis=1)
    return far


def tresca_stress_ratio(model, mu, U, s, width=3):
    """Largest ``|sigma_ntau| / s`` over contact-boundary nodes away from contact and slip transitions."""
    tr = model.nodal_traces(mu, U)
    coords = model.space.sampler.coords * mu
    far = away_from_transitions(coords, (tr.p_n_gamma_g < 0, np.abs(tr.p_tau) > s),
                                width * model.config.h_target * mu)
    return float(np.abs(tr.sigma_ntau[far]).max() / s), int(far.sum())
