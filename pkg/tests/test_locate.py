import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from w2loc.adjoint import Evaluation, KernelResult
from w2loc.locate import (
    CONVERGED,
    CORRECT,
    DIVERGED,
    DIVERGENCE,
    ERROR_CONVERGENCE,
    MAX_ITER,
    NOT_CONVERGED_MESSAGE,
    LmfConfig,
    LmfState,
    LocateRun,
    SingularNormalEquations,
    bfgs_locate,
    classify,
    gamma_ratio,
    gn_locate,
    initial_nu,
    lmf_locate,
    lmf_locate_noise,
    lmf_step,
    nu_update,
)


class ToyProblem:
    """chi_i = g_i(x)^2 for residual functions g with Jacobian G."""

    def __init__(self, g, G, box=None):
        self.g, self.G, self.box = g, G, box
        self.n_eval = 0

    def in_domain(self, x):
        if self.box is None:
            return True
        lo, hi = self.box
        return bool(np.all(x >= lo) and np.all(x <= hi))

    def objective(self, x):
        return 0.5 * float(np.sum(self.g(x) ** 2))

    def evaluate(self, x):
        self.n_eval += 1
        g, G = self.g(x), self.G(x)
        ks = [KernelResult(i, 2 * g[i] * G[i, :2], float(2 * g[i] * G[i, 2]), float(g[i] ** 2))
              for i in range(g.size)]
        return Evaluation(np.asarray(x, float), g**2, ks)


def linear_problem(seed=0, m=6, box=None):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, 3))
    x_true = np.array([4.0, 2.0, 1.0])
    b = A @ x_true + 0.0
    return ToyProblem(lambda x: A @ x - b, lambda x: A, box), x_true


def rosenbrock_problem():
    g = lambda x: np.array([10 * (x[1] - x[0] ** 2), 1 - x[0], x[2] - 3.0])  # noqa: E731
    G = lambda x: np.array([[-20 * x[0], 10, 0], [-1, 0, 0], [0, 0, 1.0]])  # noqa: E731
    return ToyProblem(g, G), np.array([1.0, 1.0, 3.0])


# ---------------------------------------------------------------- step and ratio

def test_lmf_step_examples():
    d = lmf_step(np.eye(3), np.array([1.0, -2.0, 0.5]), 0.0)
    np.testing.assert_allclose(d, [-1.0, 2.0, -0.5])
    r = np.array([1.0, -2.0, 0.5])
    J = np.arange(9.0).reshape(3, 3) + np.eye(3)
    big = lmf_step(J, r, 1e8)
    exact = np.linalg.solve(J.T @ J + 1e8 * np.eye(3), -J.T @ r)
    np.testing.assert_allclose(big, exact, rtol=1e-12)
    # large damping tends to a short steepest-descent step, error O(|J^T J| / nu)
    np.testing.assert_allclose(big, -J.T @ r / 1e8, rtol=1e-5)
    rng = np.random.default_rng(0)
    J = rng.normal(size=(7, 3))
    r = rng.normal(size=7)
    d = lmf_step(J, r, 0.3)
    assert np.linalg.norm((J.T @ J + 0.3 * np.eye(3)) @ d + J.T @ r) < 1e-12
    with pytest.raises(SingularNormalEquations):
        lmf_step(np.zeros((4, 3)), np.ones(4), 0.0)
    with pytest.raises(ValueError):
        lmf_step(J, r, -1.0)


def test_gamma_ratio_examples():
    rng = np.random.default_rng(1)
    J = rng.normal(size=(5, 3))
    r = rng.normal(size=5)
    d = rng.normal(size=3)
    f0 = 0.5 * r @ r
    # exact on a linear residual
    f1 = 0.5 * float((J @ d + r) @ (J @ d + r))
    assert gamma_ratio(f0, f1, J, r, d) == pytest.approx(1.0, rel=1e-12)
    assert gamma_ratio(f0, f0, J, r, d) == 0.0
    # cubic objective f(x) = x^2/2 + x^3 from x = 1, r = 1, J = 1, d = -0.5
    f_old = 0.5 + 1.0
    f_new = 0.5 * 0.25 + 0.125
    pred = 0.5 - 0.5 * 0.25
    assert gamma_ratio(f_old, f_new, [[1.0]], [1.0], [-0.5]) == pytest.approx(
        (f_old - f_new) / pred)
    assert gamma_ratio(1.0, 0.5, [[1.0]], [0.0], [0.0]) == -1.0


# ---------------------------------------------------------------- damping update

@pytest.mark.parametrize("gamma, factor", [(0.5, 1.0), (1.0, 1 / 3), (0.25, 1.125),
                                           (0.75, 1 - 0.125), (2.0, 1 / 3)])
def test_nu_update_accept(gamma, factor):
    nu, mu, acc = nu_update(gamma, 0.4, 16.0)
    assert acc and mu == 2.0
    assert nu == pytest.approx(0.4 * factor)


def test_nu_update_reject():
    assert nu_update(-0.3, 0.4, 4.0) == (1.6, 8.0, False)
    assert nu_update(0.0, 0.4, 2.0) == (0.8, 4.0, False)


def test_nu_update_noise_mode():
    # below the cap a rejection grows nu, capped at eta
    nu, mu, acc = nu_update(-1.0, 6e-4, 2.0, noise_mode=True, eta=1e-3)
    assert not acc and nu == 1e-3 and mu == 4.0
    # at the cap even a bad step is accepted
    nu, mu, acc = nu_update(-1.0, 1e-3, 4.0, noise_mode=True, eta=1e-3)
    assert acc and mu == 2.0 and nu == pytest.approx(1e-3)
    nu, _, acc = nu_update(0.9, 1e-3, 2.0, noise_mode=True, eta=1e-3)
    assert acc and nu <= 1e-3


@given(st.floats(-5, 5), st.floats(1e-8, 1.0), st.sampled_from([2.0, 4.0, 64.0]),
       st.booleans())
def test_nu_update_properties(gamma, nu, mu, noise):
    eta = 1e-3
    nu2, mu2, acc = nu_update(gamma, nu, mu, noise, eta)
    assert nu2 > 0
    if noise:
        assert nu2 <= eta
    if acc:
        assert mu2 == 2.0
        assert nu2 <= max(nu, 0) * 2.0 + 1e-300
    else:
        assert mu2 == 2 * mu


def test_initial_nu():
    J = np.diag([1.0, 3.0, 2.0])
    assert initial_nu(J, LmfConfig()) == pytest.approx(9e-6)
    assert initial_nu(J, LmfConfig(noise_mode=True)) == 1e-3


def test_config_validation():
    with pytest.raises(ValueError):
        LmfConfig(eps=0.0)
    with pytest.raises(ValueError):
        LmfConfig(K_max=0)


# ---------------------------------------------------------------- iterations

def test_gauss_newton_solves_linear_problem_in_one_step():
    P, xt = linear_problem()
    run = gn_locate(P, np.zeros(3), LmfConfig(eps=1e-20))
    np.testing.assert_allclose(run.trajectory[1].x, xt, atol=1e-10)
    assert run.status == CONVERGED


def test_lmf_linear_problem():
    P, xt = linear_problem()
    run = lmf_locate(P, np.zeros(3), LmfConfig(eps=1e-16), truth=xt)
    assert run.status == CONVERGED
    np.testing.assert_allclose(run.x_final, xt, atol=1e-7)
    assert run.iterations <= 3
    assert run.hypocenter_errors()[-1] < 1e-7


def test_start_at_truth_takes_no_iterations():
    P, xt = linear_problem()
    for method in (lmf_locate, lmf_locate_noise, gn_locate, bfgs_locate):
        run = method(P, xt, truth=xt)
        assert run.status == CONVERGED and run.iterations == 0
        assert run.k_star == 0


def test_lmf_rosenbrock():
    P, xt = rosenbrock_problem()
    run = lmf_locate(P, np.array([-1.2, 1.0, 0.0]), LmfConfig(eps=1e-14, K_max=100,
                                                               max_trials=1000))
    assert run.status == CONVERGED
    np.testing.assert_allclose(run.x_final, xt, atol=1e-5)
    # accepted objective values never increase without noise mode
    assert np.all(np.diff(run.objective_values) <= 0)
    for s in run.trajectory[1:]:
        assert s.accepted == (s.gamma > 0)


def test_bfgs_rosenbrock():
    P, xt = rosenbrock_problem()
    run = bfgs_locate(P, np.array([-1.2, 1.0, 0.0]), LmfConfig(eps=1e-12, K_max=200))
    assert run.status == CONVERGED
    np.testing.assert_allclose(run.x_final[:2], xt[:2], atol=1e-4)
    assert np.all(np.diff(run.objective_values) <= 0)


def test_noise_mode_caps_nu():
    P, xt = rosenbrock_problem()
    cfg = LmfConfig(eps=1e-14, K_max=30, eta=1e-3)
    run = lmf_locate_noise(P, np.array([-1.2, 1.0, 0.0]), cfg)
    assert all(s.nu <= 1e-3 for s in run.trajectory)
    assert run.trajectory[0].nu == 1e-3


def test_max_iterations_message():
    P, _ = rosenbrock_problem()
    run = lmf_locate(P, np.array([-1.2, 1.0, 0.0]), LmfConfig(eps=1e-14, K_max=2))
    assert run.status == MAX_ITER
    assert run.message == NOT_CONVERGED_MESSAGE == "The iteration doesn't converges."


def test_trial_cap_stops_run():
    P, _ = rosenbrock_problem()
    run = lmf_locate(P, np.array([-1.2, 1.0, 0.0]), LmfConfig(eps=1e-14, K_max=100,
                                                               max_trials=5))
    assert run.status == MAX_ITER and run.n_trials == 5


def test_out_of_domain_steps_are_rejected():
    P, xt = linear_problem(box=(np.full(3, -0.5), np.full(3, 10.0)))
    run = lmf_locate(P, np.zeros(3), LmfConfig(eps=1e-16))
    assert all(P.in_domain(s.x) for s in run.accepted)
    with pytest.raises(ValueError):
        lmf_locate(P, np.full(3, 20.0))


def test_gn_leaving_domain_diverges():
    P, _ = linear_problem(box=(np.full(3, -0.5), np.full(3, 3.0)))
    run = gn_locate(P, np.zeros(3))
    assert run.status == DIVERGED


def test_singular_jacobian_diverges():
    P = ToyProblem(lambda x: np.array([x[0] - 1.0]), lambda x: np.array([[1.0, 0, 0]]))
    run = gn_locate(P, np.zeros(3))
    assert run.status == DIVERGED


# ---------------------------------------------------------------- bookkeeping

def state(k, f, accepted=True, x=(0.0, 0.0, 0.0)):
    return LmfState(k, np.array(x, float), 1.0, 2.0, f, accepted=accepted)


def test_k_star_first_minimum_on_ties():
    run = LocateRun([state(0, 3.0), state(1, 1.0), state(1, 0.1, False), state(2, 1.0)], MAX_ITER)
    assert run.k_star == 1
    assert run.iterations == 2


def test_classify():
    truth = np.array([50.0, 20.0, 10.0])
    ok = LocateRun([state(0, 1.0, x=(50.3, 20.4, 10.0))], CONVERGED)
    assert classify(ok, truth) == CORRECT
    wrong = LocateRun([state(0, 0.001, x=(60.0, 20.0, 10.0))], CONVERGED)
    assert classify(wrong, truth) == ERROR_CONVERGENCE
    lost = LocateRun([state(0, 5.0, x=(60.0, 20.0, 10.0))], MAX_ITER)
    assert classify(lost, truth) == DIVERGENCE
    blown = LocateRun([state(0, 5.0, x=(50.0, 20.0, 10.0))], DIVERGED)
    assert classify(blown, truth) == DIVERGENCE


def test_trajectory_csv(tmp_path):
    run = LocateRun([state(0, 2.0, x=(3.0, 4.0, 1.0)), state(0, 5.0, False)], MAX_ITER,
                    truth=np.zeros(3))
    path = tmp_path / "t.csv"
    run.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == ["k", "xi_x", "xi_z", "tau", "nu", "gamma", "objective",
                                   "accepted", "hypocenter_error_km"]
    assert lines[1].split(",")[-1] == "5.0"
    assert lines[2].split(",")[7] == "0"
