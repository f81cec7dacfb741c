"""System and cost generators: hypothesis compliance and exact networks."""

import numpy as np
import pytest

from stiffnet import (
    make_controlled_relu_drift,
    make_galerkin_heat,
    make_ou,
    make_quadratic_cost,
    make_relu_drift_system,
    make_system,
    perturb_coefficients,
    realize,
    validate_system,
)
from stiffnet.calculus import arch_signature


def _coeff_input(t, x):
    return np.concatenate([[t], np.asarray(x, dtype=np.float64)])


def test_galerkin_spectral_matrix():
    rec = make_galerkin_heat(3, diffusivity=1.0)
    want = np.diag(np.pi**2 * np.array([1.0, 4.0, 9.0]))
    assert np.allclose(rec.system.A, want)
    assert validate_system(rec.system, trials=300).passed


def test_galerkin_operator_norm_scaling():
    # ||A||_op / d^2 is constant across d: the declared kappa0 covers it
    vals = []
    for d in (4, 8, 16, 32):
        rec = make_galerkin_heat(d, diffusivity=0.7)
        op = np.linalg.norm(rec.system.A, 2)
        assert op <= rec.system.kappa0 * d**rec.system.kappa0
        vals.append(op / d**2)
    assert np.ptp(vals) <= 1e-9


def test_galerkin_psd_probes():
    rec = make_galerkin_heat(5)
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.normal(size=5)
        assert x @ rec.system.A @ x >= 0.0


def test_galerkin_drift_net_exact():
    rec = make_galerkin_heat(4, drift_scale=0.5)
    rng = np.random.default_rng(1)
    for _ in range(50):
        t, x = rng.uniform(), rng.normal(size=4)
        got = realize(rec.mu_net, _coeff_input(t, x))
        assert np.max(np.abs(got - rec.system.mu(t, x))) <= 1e-14
    assert rec.gamma == 0.0


def test_galerkin_diag_noise_recipe():
    rec = make_galerkin_heat(4, noise_scale=0.6, sigma_kind="diag")
    rng = np.random.default_rng(2)
    for _ in range(20):
        t, x = rng.uniform(), rng.normal(size=4)
        sig = rec.system.sigma(t, x)
        assert np.allclose(sig, 0.6 * np.diag(x))
        cols = np.stack(
            [realize(c, _coeff_input(t, x)) for c in rec.sigma_col_nets], axis=1
        )
        assert np.max(np.abs(cols - sig)) <= 1e-14
    assert validate_system(rec.system, trials=300).passed
    assert not rec.linear


def test_galerkin_rejects_bad_kind():
    with pytest.raises(ValueError):
        make_galerkin_heat(2, sigma_kind="full")


def test_ou_recipe_and_oracle():
    rec = make_ou(3, decay=0.5, noise=0.2)
    assert rec.linear
    x0 = np.array([1.0, 0.5, -0.2])
    betaw = np.ones(3)
    a, s, T = 0.5, 0.2, 1.0
    want = np.exp(-2 * a * T) * np.dot(x0, x0) + 3 * s * s * (
        1 - np.exp(-2 * a * T)
    ) / (2 * a)
    assert rec.exact_value(betaw, x0, T) == pytest.approx(want, rel=1e-9)


def test_ou_diag_noise_recipe():
    rec = make_ou(3, decay=0.5, noise=0.7, sigma_kind="diag")
    assert not rec.linear
    x = np.array([1.0, -2.0, 0.5])
    assert np.allclose(rec.system.sigma(0.0, x), 0.7 * np.diag(x))
    # beta covers the multiplicative-noise monotonicity contribution
    assert rec.system.beta == pytest.approx(0.5 * 1.5 * 0.49)
    assert validate_system(rec.system, trials=300).passed


def test_ou_exact_value_requires_linear():
    rec = make_ou(2, sigma_kind="diag")
    with pytest.raises(ValueError):
        rec.exact_value(np.ones(2), np.ones(2), 1.0)


def test_coefficient_nets_share_architecture():
    for rec in (
        make_ou(3),
        make_ou(3, sigma_kind="diag"),
        make_galerkin_heat(3, drift_scale=0.4),
        make_galerkin_heat(3, sigma_kind="diag"),
        make_relu_drift_system(3, l_mu=0.5),
    ):
        sigs = {arch_signature(c) for c in rec.sigma_col_nets}
        assert len(sigs) == 1


def test_relu_drift_recipe():
    rec = make_relu_drift_system(2, l_mu=1.0, eta=0.5)
    assert rec.system.beta == pytest.approx(1.0 + 0.5)
    rng = np.random.default_rng(3)
    for _ in range(100):
        t, x = rng.uniform(), rng.normal(size=2)
        got = realize(rec.mu_net, _coeff_input(t, x))
        assert np.max(np.abs(got - rec.system.mu(t, x))) <= 1e-14


def test_relu_drift_zero_lipschitz():
    rec = make_relu_drift_system(2, l_mu=0.0)
    assert rec.system.beta == 0.0
    assert np.allclose(rec.system.mu(0.0, np.ones(2)), 0.0)


def test_controlled_recipe_accepts_action_input():
    rec = make_controlled_relu_drift(2, m1=1, m2=1)
    assert rec.control_dims == (1, 1)
    # coefficient nets take (t, x, u1, u2)
    assert rec.mu_net.dim_in == 2 + 1 + 2
    rng = np.random.default_rng(4)
    t, x, u = 0.3, rng.normal(size=2), rng.normal(size=2)
    inp = np.concatenate([[t], x, u])
    got = realize(rec.mu_net, inp)
    want = rec.controlled_mu(t, x, u[:1], u[1:])
    assert np.max(np.abs(got - want)) <= 1e-12


def test_registry_dispatch():
    rec = make_system("ou", 2, decay=0.3)
    assert rec.id == "ou"
    assert rec.params["decay"] == 0.3
    with pytest.raises(KeyError):
        make_system("unknown", 2)


def test_quadratic_cost_pack():
    beta = np.array([1.0, 2.0])
    cost = make_quadratic_cost(beta, 10.0, 1e-3)
    x = np.array([0.5, -0.25])
    # inside the box the truncation is the exact quadratic
    assert cost.f_trunc(x) == pytest.approx(cost.f(x), rel=1e-12)
    assert cost.theta == pytest.approx(2.0 * 2 * 100.0 * 1e-3)


def test_quadratic_cost_outside_box_gap():
    beta = np.array([1.5])
    cost = make_quadratic_cost(beta, 1.0, 1e-2)
    xs = np.linspace(1.0, 4.0, 200)
    for x in xs:
        gap = abs(cost.f(np.array([x])) - cost.f_trunc(np.array([x])))
        assert gap <= 1.5 * x * x + 1e-12


def test_quadratic_cost_theta_matches_grid_sup():
    beta = np.array([2.0])
    D, eps_cost = 2.0, 1e-2
    cost = make_quadratic_cost(beta, D, eps_cost)
    xs = np.linspace(-3.0, 3.0, 4001)[:, None]
    gap = np.abs(cost.f_tilde(xs) - np.array([cost.f_trunc(x) for x in xs]))
    assert np.max(gap) <= cost.theta + 1e-12


def test_perturbation_stays_within_gamma():
    rec = make_ou(3, decay=0.5, noise=0.2)
    gamma = 0.05
    coeffs = perturb_coefficients(rec.system, gamma)
    rng = np.random.default_rng(5)
    for _ in range(200):
        t, x = rng.uniform(), rng.normal(scale=3.0, size=3)
        dmu = np.linalg.norm(coeffs.mu(t, x) - rec.system.mu(t, x))
        dsig = np.linalg.norm(coeffs.sigma(t, x) - rec.system.sigma(t, x))
        assert dmu + dsig <= gamma + 1e-12
    assert coeffs.gamma == gamma


def test_recipes_validate_at_construction():
    # each factory runs the hypothesis checker; bad parameters are rejected
    with pytest.raises(ValueError):
        make_galerkin_heat(2, diffusivity=-1.0)
