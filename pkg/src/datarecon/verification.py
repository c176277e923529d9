"""Hermetic verification suite: the divergence/kernel identities and the
derivative audits, with all fixtures constructed internally.

These checks double as the acceptance harness: the CLI ``verify`` command and
the test suite call the same functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attack import objective_gradients, objective_value
from .divergence import (
    BayesKernel,
    NonBayesKernel,
    PosteriorDraws,
    fd_direct,
    fd_ibp_objective,
    loss_gradient_gap,
    mmd_squared,
    nonbayes_objective,
    sfd_objective,
)
from .measures import build_measure
from .models import (
    BayesLinReg,
    GaussianMeanLocation,
    KidScoreModel,
    LogisticLoss,
    SquaredErrorLoss,
    finite_difference_audit,
)
from .samplers import exact_gaussian_mean_draws


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _random_bayes_instance(rng):
    """Random model + data + draws + weighted recon measure, small sizes."""
    if rng.random() < 0.5:
        d = int(rng.integers(1, 4))
        model = GaussianMeanLocation(d)
        N = int(rng.integers(1, 11))
        M = int(rng.integers(1, 11))
        X = rng.standard_normal((N, d))
        Z = rng.standard_normal((M, d))
    else:
        x_dim = int(rng.integers(1, 3))
        model = BayesLinReg.identity_with_intercept(x_dim)
        N = int(rng.integers(1, 11))
        M = int(rng.integers(1, 11))
        X = np.column_stack([np.ones(N), rng.standard_normal((N, x_dim + 1))])
        Z = np.column_stack([np.ones(M), rng.standard_normal((M, x_dim + 1))])
    T = int(rng.integers(10, 201))
    draws = PosteriorDraws(rng.standard_normal((T, model.param_dim)))
    w = rng.standard_normal(M)
    return model, build_measure(X), build_measure(Z, w), draws


def check_fd_mmd_identity(n_instances: int = 50, tol: float = 1e-9,
                          seed: int = 20240817) -> CheckResult:
    """Exact identity: score-gap divergence equals half the squared MMD with
    the draw-averaged score kernel, per draw set."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        model, target, recon, draws = _random_bayes_instance(rng)
        fd = fd_direct(model, draws, target, recon).value
        mmd2 = mmd_squared(BayesKernel(model, draws), target, recon)
        rel = abs(fd - 0.5 * mmd2) / max(abs(fd), 1e-300)
        worst = max(worst, rel)
    return CheckResult("fd_equals_half_mmd_squared", worst < tol,
                       f"max rel err {worst:.3e} (tol {tol:g})")


def _random_loss_instance(rng):
    if rng.random() < 0.5:
        x_dim = int(rng.integers(1, 3))
        model = SquaredErrorLoss.identity_with_intercept(x_dim, ridge=float(rng.random()))
        N = int(rng.integers(1, 11))
        M = int(rng.integers(1, 11))
        X = np.column_stack([np.ones(N), rng.standard_normal((N, x_dim + 1))])
        Z = np.column_stack([np.ones(M), rng.standard_normal((M, x_dim + 1))])
    else:
        d = int(rng.integers(1, 4))
        model = LogisticLoss(d, ridge=float(rng.random()))
        N = int(rng.integers(1, 11))
        M = int(rng.integers(1, 11))
        X = np.column_stack([rng.standard_normal((N, d)), rng.choice([-1.0, 1.0], N)])
        Z = np.column_stack([rng.standard_normal((M, d)), rng.standard_normal(M)])
    theta_star = rng.standard_normal(model.param_dim)
    w = rng.standard_normal(M)
    return model, theta_star, build_measure(X), build_measure(Z, w)


def check_nonbayes_identity(n_instances: int = 50, tol: float = 1e-10,
                            seed: int = 20240818) -> CheckResult:
    """Exact identity: the loss-gradient gap norm equals the square root of
    the MMD with the loss-gradient kernel."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        model, theta_star, target, recon = _random_loss_instance(rng)
        gap = loss_gradient_gap(model, theta_star, target, recon)
        mmd2 = mmd_squared(NonBayesKernel(model, theta_star), target, recon)
        root = np.sqrt(max(mmd2, 0.0))
        rel = abs(gap - root) / max(abs(gap), 1e-300)
        worst = max(worst, rel)
    return CheckResult("nonbayes_gap_equals_sqrt_mmd", worst < tol,
                       f"max rel err {worst:.3e} (tol {tol:g})")


def check_sfd_fd_agreement(T: int = 100, L: int = 10_000,
                           seed: int = 20240819) -> CheckResult:
    """Statistical identity: the sliced objective converges to the trace-form
    objective as the slice count grows; tested at 3 combined MC errors."""
    rng = np.random.default_rng(seed)
    d = 2
    model = GaussianMeanLocation(d)
    X = rng.standard_normal((6, d))
    Z = rng.standard_normal((4, d))
    recon = build_measure(Z, rng.standard_normal(4))
    draws = exact_gaussian_mean_draws(X, T, seed=seed + 1)
    slices = rng.standard_normal((T, L, d))
    sfd = sfd_objective(model, draws, slices, recon)
    fd = fd_ibp_objective(model, draws, recon)
    # slice-MC error of the quadratic-form term, on top of the shared draws
    quads = model.prior_quad_batch(draws.draws, slices) + model.quad_batch(
        draws.draws, recon.points, slices) @ recon.weights
    se_slice = float(np.std(quads.mean(axis=0), ddof=1) / np.sqrt(L))
    se = np.sqrt(se_slice**2 + sfd.std_error**2 + fd.std_error**2)
    gap = abs(sfd.value - fd.value)
    return CheckResult("sfd_matches_fd_ibp", gap <= 3 * se,
                       f"gap {gap:.3e} vs 3*se {3 * se:.3e}")


def check_ibp_constant(T: int = 100_000, seed: int = 20240820) -> CheckResult:
    """The target-free objective plus the oracle constant (half the mean
    squared target score over the same draws) matches the direct divergence,
    and both match the closed-form Gaussian-moment value, within 3 SE."""
    rng = np.random.default_rng(seed)
    model = GaussianMeanLocation(1)
    X = rng.standard_normal((5, 1))
    target = build_measure(X)
    Z = rng.standard_normal((3, 1))
    w = rng.standard_normal(3)
    recon = build_measure(Z, w)
    draws = exact_gaussian_mean_draws(X, T, seed=seed + 1)

    fd = fd_direct(model, draws, target, recon)
    ibp = fd_ibp_objective(model, draws, recon)
    thetas = draws.draws
    S_target = model.prior_score_batch(thetas) + np.einsum(
        "m,tmd->td", target.weights, model.score_batch(thetas, target.points))
    c_per_draw = 0.5 * np.sum(S_target**2, axis=1)
    c_oracle = float(np.mean(c_per_draw))
    c_se = float(np.std(c_per_draw, ddof=1) / np.sqrt(T))

    se = np.sqrt(fd.std_error**2 + ibp.std_error**2 + c_se**2)
    gap = abs(ibp.value + c_oracle - fd.value)
    ok1 = gap <= 3 * se

    # closed form under the conjugate posterior N(mu, s2): the score gap is
    # (sum x - sum w z) - (N - S_w) * theta, an affine function of theta
    N = len(X)
    mu = float(X.sum() / (N + 1))
    s2 = 1.0 / (N + 1)
    a = float(X.sum() - w @ Z.ravel())
    b = float(N - w.sum())
    fd_closed = 0.5 * ((a - b * mu) ** 2 + b**2 * s2)
    ok2 = abs(fd.value - fd_closed) <= 3 * fd.std_error
    detail = (f"ibp+C vs fd gap {gap:.3e} (3*se {3 * se:.3e}); "
              f"fd vs closed form gap {abs(fd.value - fd_closed):.3e} "
              f"(3*se {3 * fd.std_error:.3e})")
    return CheckResult("ibp_constant_consistency", ok1 and ok2, detail)


def _audit_models(rng):
    yield GaussianMeanLocation(2), rng.standard_normal(2), rng.standard_normal(2)
    m = BayesLinReg.identity_with_intercept(1)
    yield m, rng.standard_normal(2), np.array([1.0, *rng.standard_normal(2)])
    m = BayesLinReg.polynomial(3)
    yield m, rng.standard_normal(4), rng.standard_normal(2)
    m = KidScoreModel()
    theta = np.array([*rng.standard_normal(2), 0.5 + rng.random()])
    yield m, theta, np.array([1.0, *rng.standard_normal(2)])
    m = SquaredErrorLoss.identity_with_intercept(1, ridge=0.3)
    yield m, rng.standard_normal(2), np.array([1.0, *rng.standard_normal(2)])
    m = LogisticLoss(2, ridge=0.1)
    yield m, rng.standard_normal(2), rng.standard_normal(3)


def check_fd_audits(n_rounds: int = 10, seed: int = 20240821) -> CheckResult:
    """Central-difference audit of every bundled model at random interior
    points."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_rounds):
        for model, theta, x in _audit_models(rng):
            report = finite_difference_audit(model, theta, x)
            worst = max(worst, report.max_rel_error)
            if not report.passed:
                return CheckResult(
                    "finite_difference_audits", False,
                    f"{type(model).__name__}: max rel err {report.max_rel_error:.3e}")
    return CheckResult("finite_difference_audits", True,
                       f"max rel err {worst:.3e} (tol 1e-5)")


def check_objective_gradients(n_states: int = 100, tol: float = 1e-5,
                              seed: int = 20240822) -> CheckResult:
    """Analytic objective gradients vs central differences of the scalar
    objective, for every objective mode."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_states):
        mode = ("fd", "sfd", "nonbayes")[i % 3]
        if mode == "nonbayes":
            model, theta_star, _, recon = _random_loss_instance(rng)
            kwargs = {"theta_star": theta_star}
        else:
            model, _, recon, draws = _random_bayes_instance(rng)
            kwargs = {"draws": draws}
            if mode == "sfd":
                kwargs["slices"] = rng.standard_normal((draws.T, 3, model.param_dim))
        rel = _gradcheck(mode, model, recon, kwargs)
        worst = max(worst, rel)
    return CheckResult("objective_gradients", worst < tol,
                       f"max rel err {worst:.3e} (tol {tol:g})")


def _gradcheck(mode, model, measure, kwargs, h: float = 1e-6) -> float:
    gw, gz = objective_gradients(mode, model, measure, **kwargs)
    layout = model.layout
    free_idx = list(layout.free_idx)
    worst = 0.0

    def value(meas):
        return objective_value(mode, model, meas, **kwargs)

    scale = max(1.0, np.max(np.abs(gw)), np.max(np.abs(gz)) if gz.size else 0.0)
    for m in range(measure.size):
        w = measure.weights.copy()
        w[m] += h
        vp = value(measure.replace(weights=w))
        w[m] -= 2 * h
        vm = value(measure.replace(weights=w))
        num = (vp - vm) / (2 * h)
        worst = max(worst, abs(gw[m] - num) / scale)
        for j, idx in enumerate(free_idx):
            pts = measure.points.copy()
            pts[m, idx] += h
            vp = value(measure.replace(points=pts))
            pts[m, idx] -= 2 * h
            vm = value(measure.replace(points=pts))
            num = (vp - vm) / (2 * h)
            worst = max(worst, abs(gz[m, j] - num) / scale)
    return worst


def check_norm_growth(n_trials: int = 20, seed: int = 20240823) -> CheckResult:
    """The squared measure norm sum_n k(x_n, x_n) strictly increases as data
    points are appended, for the draw-averaged score kernel."""
    rng = np.random.default_rng(seed)
    for _ in range(n_trials):
        d = int(rng.integers(1, 4))
        model = GaussianMeanLocation(d)
        X = rng.standard_normal((8, d)) + rng.standard_normal(d)
        draws = PosteriorDraws(rng.standard_normal((50, d)))
        kernel = BayesKernel(model, draws)
        norms = []
        for n in range(1, len(X) + 1):
            g = kernel.gram(X[:n], X[:n])
            norms.append(float(np.trace(g)))
        diffs = np.diff(norms)
        if not np.all(diffs > 0):
            return CheckResult("norm_growth", False,
                               f"non-increasing step: min diff {diffs.min():.3e}")
    return CheckResult("norm_growth", True, f"{n_trials} trials, all strictly increasing")


ALL_CHECKS = (
    check_fd_mmd_identity,
    check_nonbayes_identity,
    check_sfd_fd_agreement,
    check_ibp_constant,
    check_fd_audits,
    check_objective_gradients,
    check_norm_growth,
)


def run_all(name_filter: str | None = None) -> list[CheckResult]:
    results = []
    for fn in ALL_CHECKS:
        if name_filter and name_filter not in fn.__name__:
            continue
        results.append(fn())
    return results
