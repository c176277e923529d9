"""Likelihood and loss models with analytic scores, curvature and data
derivatives.

Every bundled model implements vectorised batch callbacks (over posterior
draws, pseudo-points and slice directions); the scalar operations used in
tests and audits are thin wrappers around these. All derivatives are
analytic and validated against a central-difference oracle, see
``finite_difference_audit``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import Layout


class DomainError(ValueError):
    """Parameter outside the model's declared domain (e.g. sigma <= 0)."""


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# --- feature maps ------------------------------------------------------------

class IdentityFeatures:
    """psi(x) = x, for an x-part that may carry a fixed intercept coordinate."""

    def __init__(self, px: int):
        self.dim = px
        self.px = px

    def value(self, x):
        return np.asarray(x, dtype=float)

    def jac(self, x):
        x = np.asarray(x, dtype=float)
        eye = np.eye(self.dim)
        return np.broadcast_to(eye, x.shape[:-1] + (self.dim, self.px)).copy()


class PolynomialFeatures:
    """psi(s) = (1, s, s^2, ..., s^degree) for a scalar covariate."""

    def __init__(self, degree: int):
        if degree < 1:
            raise ValueError("degree must be >= 1")
        self.degree = degree
        self.dim = degree + 1
        self.px = 1

    def value(self, x):
        s = np.asarray(x, dtype=float)[..., 0]
        return np.stack([s**r for r in range(self.degree + 1)], axis=-1)

    def jac(self, x):
        s = np.asarray(x, dtype=float)[..., 0]
        cols = [np.zeros_like(s)] + [
            r * s ** (r - 1) for r in range(1, self.degree + 1)
        ]
        return np.stack(cols, axis=-1)[..., None]


# --- likelihood model contract ----------------------------------------------

class LikelihoodModel:
    """Contract: analytic log-likelihood, scores, curvature and data
    derivatives, plus the prior terms entering the weighted posterior."""

    param_dim: int
    layout: Layout

    # subclasses restrict the parameter domain here
    def _domain_ok(self, thetas: np.ndarray) -> bool:
        return True

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.shape != (self.param_dim,):
            raise ValueError(f"theta must have length {self.param_dim}")
        if not np.all(np.isfinite(theta)):
            raise DomainError("theta contains non-finite entries")
        if not self._domain_ok(theta[None, :]):
            raise DomainError("theta outside model domain")
        return theta

    def check_draws(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if thetas.shape[1] != self.param_dim:
            raise ValueError(f"draws must have {self.param_dim} columns")
        if not np.all(np.isfinite(thetas)):
            raise DomainError("draws contain non-finite entries")
        if not self._domain_ok(thetas):
            raise DomainError("a draw lies outside the model domain")
        return thetas

    # batch callbacks, implemented per model ---------------------------------
    def log_lik_batch(self, theta, points):           # (M,)
        raise NotImplementedError

    def score_batch(self, thetas, points):            # (T, M, d)
        raise NotImplementedError

    def trace_batch(self, thetas, points):            # (T, M)
        raise NotImplementedError

    def quad_batch(self, thetas, points, vs):         # (T, L, M)
        raise NotImplementedError

    def jac_score_batch(self, thetas, points):        # (T, M, d, p_free)
        raise NotImplementedError

    def grad_trace_batch(self, thetas, points):       # (T, M, p_free)
        raise NotImplementedError

    def grad_quad_batch(self, thetas, points, vs):    # (T, L, M, p_free)
        raise NotImplementedError

    def log_prior(self, theta) -> float:
        raise NotImplementedError

    def prior_score_batch(self, thetas):              # (T, d)
        raise NotImplementedError

    def prior_trace_batch(self, thetas):              # (T,)
        raise NotImplementedError

    def prior_quad_batch(self, thetas, vs):           # (T, L)
        raise NotImplementedError

    # y-part initialisation hooks (regression models override)
    def predict_mean(self, theta, x_part):
        raise NotImplementedError

    def noise_scale(self, theta) -> float:
        raise NotImplementedError

    # scalar wrappers ----------------------------------------------------------
    def log_lik(self, theta, x) -> float:
        theta = self.check_theta(theta)
        return float(self.log_lik_batch(theta, np.atleast_2d(x))[0])

    def score_theta(self, theta, x) -> np.ndarray:
        theta = self.check_theta(theta)
        return self.score_batch(theta[None, :], np.atleast_2d(x))[0, 0]

    def curvature(self, theta, x, v=None) -> float:
        theta = self.check_theta(theta)
        pts = np.atleast_2d(x)
        if v is None:
            return float(self.trace_batch(theta[None, :], pts)[0, 0])
        v = np.asarray(v, dtype=float)
        return float(self.quad_batch(theta[None, :], pts, v[None, None, :])[0, 0, 0])

    def data_derivatives(self, theta, x, v=None) -> dict:
        theta = self.check_theta(theta)
        pts = np.atleast_2d(x)
        out = {
            "jac_score": self.jac_score_batch(theta[None, :], pts)[0, 0],
            "grad_trace": self.grad_trace_batch(theta[None, :], pts)[0, 0],
        }
        if v is not None:
            v = np.asarray(v, dtype=float)
            out["grad_quad"] = self.grad_quad_batch(
                theta[None, :], pts, v[None, None, :]
            )[0, 0, 0]
        return out

    def prior_terms(self, theta, v=None) -> dict:
        theta = self.check_theta(theta)
        out = {
            "score": self.prior_score_batch(theta[None, :])[0],
            "trace": float(self.prior_trace_batch(theta[None, :])[0]),
        }
        if v is not None:
            v = np.asarray(v, dtype=float)
            out["quad"] = float(self.prior_quad_batch(theta[None, :], v[None, None, :])[0, 0])
        return out


# --- bundled likelihood models -----------------------------------------------

class GaussianMeanLocation(LikelihoodModel):
    """Infer the mean of observed vectors: l(theta, x) = exp(-||theta - x||^2 / 2)
    with a standard Gaussian prior. Score is x - theta, Hessian is -I."""

    def __init__(self, dim: int):
        self.param_dim = dim
        self.layout = Layout(p=dim, x_idx=tuple(range(dim)))

    def log_lik_batch(self, theta, points):
        return -0.5 * np.sum((np.asarray(points) - theta) ** 2, axis=1)

    def score_batch(self, thetas, points):
        return np.asarray(points)[None, :, :] - np.asarray(thetas)[:, None, :]

    def trace_batch(self, thetas, points):
        T, M = len(thetas), len(points)
        return np.full((T, M), -float(self.param_dim))

    def quad_batch(self, thetas, points, vs):
        vnorm = np.sum(np.asarray(vs) ** 2, axis=-1)  # (T, L)
        return np.broadcast_to(-vnorm[:, :, None], vnorm.shape + (len(points),)).copy()

    def jac_score_batch(self, thetas, points):
        eye = np.eye(self.param_dim)
        shape = (len(thetas), len(points), self.param_dim, self.param_dim)
        return np.broadcast_to(eye, shape).copy()

    def grad_trace_batch(self, thetas, points):
        return np.zeros((len(thetas), len(points), self.param_dim))

    def grad_quad_batch(self, thetas, points, vs):
        vs = np.asarray(vs)
        return np.zeros(vs.shape[:2] + (len(points), self.param_dim))

    def log_prior(self, theta) -> float:
        return -0.5 * float(np.sum(np.asarray(theta) ** 2))

    def prior_score_batch(self, thetas):
        return -np.asarray(thetas, dtype=float)

    def prior_trace_batch(self, thetas):
        return np.full(len(thetas), -float(self.param_dim))

    def prior_quad_batch(self, thetas, vs):
        return -np.sum(np.asarray(vs) ** 2, axis=-1)


class BayesLinReg(LikelihoodModel):
    """Bayesian linear regression on a feature vector psi(x) with unit noise:
    l(theta, x) proportional to exp(-(  <theta, psi(x)> - y )^2 / 2) and a
    standard Gaussian prior on the coefficients."""

    def __init__(self, features, layout: Layout):
        if layout.y_idx is None:
            raise ValueError("BayesLinReg requires a y coordinate in the layout")
        if features.px != layout.px:
            raise ValueError("feature map input size must match the layout x-part")
        self.features = features
        self.layout = layout
        self.param_dim = features.dim

    @classmethod
    def identity_with_intercept(cls, x_dim: int) -> "BayesLinReg":
        """Data points (1, x_1..x_dim, y) with psi(x) the raw x-part."""
        p = x_dim + 2
        layout = Layout(
            p=p,
            x_idx=tuple(range(x_dim + 1)),
            y_idx=x_dim + 1,
            frozen_idx=(0,),
        )
        return cls(IdentityFeatures(x_dim + 1), layout)

    @classmethod
    def polynomial(cls, degree: int) -> "BayesLinReg":
        """Data points (s, y) with psi(s) = (1, s, ..., s^degree)."""
        layout = Layout(p=2, x_idx=(0,), y_idx=1)
        return cls(PolynomialFeatures(degree), layout)

    def _parts(self, points):
        pts = np.asarray(points, dtype=float)
        x = pts[:, list(self.layout.x_idx)]
        u = pts[:, self.layout.y_idx]
        psi = self.features.value(x)       # (M, d)
        jpsi = self.features.jac(x)        # (M, d, px)
        return x, u, psi, jpsi

    def _free_x_positions(self):
        # positions within x_idx of the non-frozen x coordinates
        return [k for k, i in enumerate(self.layout.x_idx) if i not in self.layout.frozen_idx]

    def log_lik_batch(self, theta, points):
        _, u, psi, _ = self._parts(points)
        e = psi @ np.asarray(theta) - u
        return -0.5 * e**2

    def score_batch(self, thetas, points):
        _, u, psi, _ = self._parts(points)
        e = np.asarray(thetas) @ psi.T - u[None, :]   # (T, M)
        return -psi[None, :, :] * e[:, :, None]

    def trace_batch(self, thetas, points):
        _, _, psi, _ = self._parts(points)
        return np.broadcast_to(-np.sum(psi**2, axis=1), (len(thetas), len(points))).copy()

    def quad_batch(self, thetas, points, vs):
        _, _, psi, _ = self._parts(points)
        a = np.einsum("tld,md->tlm", np.asarray(vs), psi)
        return -(a**2)

    def jac_score_batch(self, thetas, points):
        thetas = np.asarray(thetas)
        _, u, psi, jpsi = self._parts(points)
        e = thetas @ psi.T - u[None, :]                         # (T, M)
        tj = np.einsum("td,mdp->tmp", thetas, jpsi)             # (T, M, px)
        # d score_i / d x_p = -(dpsi_i/dx_p * e + psi_i * <theta, dpsi/dx_p>)
        jac_x = -(
            jpsi[None, :, :, :] * e[:, :, None, None]
            + psi[None, :, :, None] * tj[:, :, None, :]
        )                                                       # (T, M, d, px)
        free_x = self._free_x_positions()
        cols = [jac_x[:, :, :, k] for k in free_x]
        # d score / d y = psi
        cols.append(np.broadcast_to(psi[None, :, :], (len(thetas), len(psi), self.param_dim)).copy())
        return np.stack(cols, axis=-1)

    def grad_trace_batch(self, thetas, points):
        _, _, psi, jpsi = self._parts(points)
        g_x = -2.0 * np.einsum("md,mdp->mp", psi, jpsi)         # (M, px)
        free_x = self._free_x_positions()
        cols = [np.broadcast_to(g_x[:, k], (len(thetas), len(psi))).copy() for k in free_x]
        cols.append(np.zeros((len(thetas), len(psi))))
        return np.stack(cols, axis=-1)

    def grad_quad_batch(self, thetas, points, vs):
        vs = np.asarray(vs)
        _, _, psi, jpsi = self._parts(points)
        a = np.einsum("tld,md->tlm", vs, psi)                   # (T, L, M)
        b = np.einsum("tld,mdp->tlmp", vs, jpsi)                # (T, L, M, px)
        g_x = -2.0 * a[..., None] * b
        free_x = self._free_x_positions()
        cols = [g_x[..., k] for k in free_x]
        cols.append(np.zeros(a.shape))
        return np.stack(cols, axis=-1)

    def log_prior(self, theta) -> float:
        return -0.5 * float(np.sum(np.asarray(theta) ** 2))

    def prior_score_batch(self, thetas):
        return -np.asarray(thetas, dtype=float)

    def prior_trace_batch(self, thetas):
        return np.full(len(thetas), -float(self.param_dim))

    def prior_quad_batch(self, thetas, vs):
        return -np.sum(np.asarray(vs) ** 2, axis=-1)

    def predict_mean(self, theta, x_part):
        return self.features.value(np.atleast_2d(x_part)) @ np.asarray(theta)

    def noise_scale(self, theta) -> float:
        return 1.0


class KidScoreModel(LikelihoodModel):
    """Linear regression with unknown noise scale, theta = (beta_0, beta_1, sigma).

    Data points are (1, r, u): fixed intercept, covariate score, response
    score. Gaussian likelihood with scale sigma, flat prior on beta and a
    half-line Cauchy prior (configurable scale) on sigma.
    """

    def __init__(self, prior_scale: float = 2.5):
        if prior_scale <= 0:
            raise ValueError("prior_scale must be positive")
        self.prior_scale = prior_scale
        self.param_dim = 3
        self.layout = Layout(
            p=3, x_idx=(0, 1), y_idx=2, frozen_idx=(0,),
            names=("intercept", "r", "u"),
        )

    def _domain_ok(self, thetas):
        return bool(np.all(thetas[:, 2] > 0))

    def _parts(self, thetas, points):
        thetas = np.asarray(thetas, dtype=float)
        pts = np.asarray(points, dtype=float)
        beta = thetas[:, :2]
        sigma = thetas[:, 2]
        x = pts[:, :2]
        u = pts[:, 2]
        e = beta @ x.T - u[None, :]    # (T, M)
        return beta, sigma, x, u, e

    def log_lik_batch(self, theta, points):
        theta = np.asarray(theta, dtype=float)
        _, sigma, _, _, e = self._parts(theta[None, :], points)
        s = sigma[0]
        return -0.5 * np.log(2.0 * np.pi * s**2) - e[0] ** 2 / (2.0 * s**2)

    def score_batch(self, thetas, points):
        _, sigma, x, _, e = self._parts(thetas, points)
        inv2 = (1.0 / sigma**2)[:, None]
        inv3 = (1.0 / sigma**3)[:, None]
        s_beta = -inv2[:, :, None] * e[:, :, None] * x[None, :, :]
        s_sigma = inv3 * e**2 - (1.0 / sigma)[:, None]
        return np.concatenate([s_beta, s_sigma[:, :, None]], axis=2)

    def trace_batch(self, thetas, points):
        _, sigma, x, _, e = self._parts(thetas, points)
        xx = np.sum(x**2, axis=1)
        return (
            -xx[None, :] / (sigma**2)[:, None]
            - 3.0 * e**2 / (sigma**4)[:, None]
            + (1.0 / sigma**2)[:, None]
        )

    def quad_batch(self, thetas, points, vs):
        vs = np.asarray(vs)
        _, sigma, x, _, e = self._parts(thetas, points)
        vb = vs[..., :2]
        vsig = vs[..., 2]
        a = np.einsum("tli,mi->tlm", vb, x)
        inv2 = (1.0 / sigma**2)[:, None, None]
        inv3 = (1.0 / sigma**3)[:, None, None]
        inv4 = (1.0 / sigma**4)[:, None, None]
        return (
            -inv2 * a**2
            + 4.0 * inv3 * vsig[:, :, None] * a * e[:, None, :]
            + vsig[:, :, None] ** 2 * (-3.0 * inv4 * e[:, None, :] ** 2 + inv2)
        )

    def jac_score_batch(self, thetas, points):
        beta, sigma, x, _, e = self._parts(thetas, points)
        T, M = e.shape
        b1 = beta[:, 1]
        inv2 = (1.0 / sigma**2)[:, None]
        inv3 = (1.0 / sigma**3)[:, None]
        out = np.zeros((T, M, 3, 2))
        # d(beta-score)/dr = -(1/s^2) (e * e_r + beta_1 * x), with e_r = (0, 1)
        out[:, :, 0, 0] = -inv2 * b1[:, None] * x[None, :, 0]
        out[:, :, 1, 0] = -inv2 * (e + b1[:, None] * x[None, :, 1])
        # d(sigma-score)/dr = (2/s^3) e beta_1
        out[:, :, 2, 0] = 2.0 * inv3 * e * b1[:, None]
        # d(beta-score)/du = (1/s^2) x;   d(sigma-score)/du = -(2/s^3) e
        out[:, :, 0, 1] = inv2 * x[None, :, 0]
        out[:, :, 1, 1] = inv2 * x[None, :, 1]
        out[:, :, 2, 1] = -2.0 * inv3 * e
        return out

    def grad_trace_batch(self, thetas, points):
        beta, sigma, x, _, e = self._parts(thetas, points)
        T, M = e.shape
        b1 = beta[:, 1]
        inv2 = (1.0 / sigma**2)[:, None]
        inv4 = (1.0 / sigma**4)[:, None]
        out = np.zeros((T, M, 2))
        out[:, :, 0] = -2.0 * inv2 * x[None, :, 1] - 6.0 * inv4 * e * b1[:, None]
        out[:, :, 1] = 6.0 * inv4 * e
        return out

    def grad_quad_batch(self, thetas, points, vs):
        vs = np.asarray(vs)
        beta, sigma, x, _, e = self._parts(thetas, points)
        vb = vs[..., :2]
        vsig = vs[..., 2]
        b1 = beta[:, 1]
        a = np.einsum("tli,mi->tlm", vb, x)                     # (T, L, M)
        inv2 = (1.0 / sigma**2)[:, None, None]
        inv3 = (1.0 / sigma**3)[:, None, None]
        inv4 = (1.0 / sigma**4)[:, None, None]
        eTM = e[:, None, :]
        vs1 = vsig[:, :, None]
        vb1 = vb[..., 1][:, :, None]
        b1T = b1[:, None, None]
        g_r = (
            -2.0 * inv2 * a * vb1
            + 4.0 * inv3 * vs1 * (vb1 * eTM + a * b1T)
            - 6.0 * inv4 * vs1**2 * eTM * b1T
        )
        g_u = -4.0 * inv3 * vs1 * a + 6.0 * inv4 * vs1**2 * eTM
        return np.stack([g_r, g_u], axis=-1)

    def log_prior(self, theta) -> float:
        sigma = float(np.asarray(theta).ravel()[2])
        return -float(np.log1p((sigma / self.prior_scale) ** 2))

    def prior_score_batch(self, thetas):
        thetas = np.asarray(thetas, dtype=float)
        sigma = thetas[:, 2]
        out = np.zeros_like(thetas)
        out[:, 2] = -2.0 * sigma / (self.prior_scale**2 + sigma**2)
        return out

    def prior_trace_batch(self, thetas):
        sigma = np.asarray(thetas, dtype=float)[:, 2]
        g2 = self.prior_scale**2
        return 2.0 * (sigma**2 - g2) / (g2 + sigma**2) ** 2

    def prior_quad_batch(self, thetas, vs):
        vs = np.asarray(vs)
        return self.prior_trace_batch(thetas)[:, None] * vs[..., 2] ** 2

    def predict_mean(self, theta, x_part):
        beta = np.asarray(theta, dtype=float)[:2]
        return np.atleast_2d(x_part) @ beta

    def noise_scale(self, theta) -> float:
        return float(np.asarray(theta).ravel()[2])


# --- loss model contract -----------------------------------------------------

class LossModel:
    """Contract for trained (non-Bayesian) models: per-datum loss, its
    parameter gradient and the data-Jacobian of that gradient, plus an
    optional regularizer."""

    param_dim: int
    layout: Layout
    ridge: float = 0.0

    def loss_batch(self, theta, points):            # (M,)
        raise NotImplementedError

    def grad_theta_batch(self, theta, points):      # (M, d)
        raise NotImplementedError

    def jac_data_batch(self, theta, points):        # (M, d, p_free)
        raise NotImplementedError

    def reg_value(self, theta) -> float:
        return self.ridge * float(np.sum(np.asarray(theta) ** 2))

    def reg_grad(self, theta) -> np.ndarray:
        return 2.0 * self.ridge * np.asarray(theta, dtype=float)

    def loss_terms(self, theta, x) -> dict:
        theta = np.asarray(theta, dtype=float).ravel()
        pts = np.atleast_2d(x)
        return {
            "value": float(self.loss_batch(theta, pts)[0]),
            "grad_theta": self.grad_theta_batch(theta, pts)[0],
            "jac_data": self.jac_data_batch(theta, pts)[0],
        }

    def predict_mean(self, theta, x_part):
        return np.zeros(len(np.atleast_2d(x_part)))

    def noise_scale(self, theta) -> float:
        return 1.0


class SquaredErrorLoss(LossModel):
    """l(theta, x) = (<theta, psi(x)> - y)^2, optional ridge regularizer."""

    def __init__(self, features, layout: Layout, ridge: float = 0.0):
        if layout.y_idx is None:
            raise ValueError("SquaredErrorLoss requires a y coordinate")
        if features.px != layout.px:
            raise ValueError("feature map input size must match the layout x-part")
        self.features = features
        self.layout = layout
        self.param_dim = features.dim
        self.ridge = ridge

    @classmethod
    def identity_with_intercept(cls, x_dim: int, ridge: float = 0.0):
        p = x_dim + 2
        layout = Layout(p=p, x_idx=tuple(range(x_dim + 1)), y_idx=x_dim + 1,
                        frozen_idx=(0,))
        return cls(IdentityFeatures(x_dim + 1), layout, ridge)

    @classmethod
    def polynomial(cls, degree: int, ridge: float = 0.0):
        layout = Layout(p=2, x_idx=(0,), y_idx=1)
        return cls(PolynomialFeatures(degree), layout, ridge)

    def _parts(self, theta, points):
        pts = np.asarray(points, dtype=float)
        x = pts[:, list(self.layout.x_idx)]
        u = pts[:, self.layout.y_idx]
        psi = self.features.value(x)
        jpsi = self.features.jac(x)
        e = psi @ np.asarray(theta, dtype=float) - u
        return x, u, psi, jpsi, e

    def _free_x_positions(self):
        return [k for k, i in enumerate(self.layout.x_idx) if i not in self.layout.frozen_idx]

    def loss_batch(self, theta, points):
        _, _, _, _, e = self._parts(theta, points)
        return e**2

    def grad_theta_batch(self, theta, points):
        _, _, psi, _, e = self._parts(theta, points)
        return 2.0 * psi * e[:, None]

    def jac_data_batch(self, theta, points):
        theta = np.asarray(theta, dtype=float)
        _, _, psi, jpsi, e = self._parts(theta, points)
        tj = np.einsum("d,mdp->mp", theta, jpsi)
        jac_x = 2.0 * (jpsi * e[:, None, None] + psi[:, :, None] * tj[:, None, :])
        cols = [jac_x[:, :, k] for k in self._free_x_positions()]
        cols.append(-2.0 * psi)
        return np.stack(cols, axis=-1)

    def predict_mean(self, theta, x_part):
        return self.features.value(np.atleast_2d(x_part)) @ np.asarray(theta)


class LogisticLoss(LossModel):
    """l(theta, x) = log(1 + exp(-y <theta, x>)), optional ridge regularizer.

    A second analytic loss; y is treated as a real coordinate so the data
    derivatives stay well defined during optimisation.
    """

    def __init__(self, dim: int, ridge: float = 0.0):
        self.param_dim = dim
        self.layout = Layout(p=dim + 1, x_idx=tuple(range(dim)), y_idx=dim)
        self.ridge = ridge

    def _parts(self, theta, points):
        pts = np.asarray(points, dtype=float)
        x = pts[:, : self.param_dim]
        y = pts[:, self.param_dim]
        z = y * (x @ np.asarray(theta, dtype=float))
        s = _sigmoid(-z)
        return x, y, z, s

    def loss_batch(self, theta, points):
        _, _, z, _ = self._parts(theta, points)
        return np.logaddexp(0.0, -z)

    def grad_theta_batch(self, theta, points):
        x, y, _, s = self._parts(theta, points)
        return -(y * s)[:, None] * x

    def jac_data_batch(self, theta, points):
        theta = np.asarray(theta, dtype=float)
        x, y, _, s = self._parts(theta, points)
        ds = s * (1.0 - s)
        M, d = x.shape
        out = np.zeros((M, d, d + 1))
        # d grad_i / d x_j = y^2 s(1-s) theta_j x_i - y s delta_ij
        out[:, :, :d] = (y**2 * ds)[:, None, None] * x[:, :, None] * theta[None, None, :]
        out[:, :, :d] -= (y * s)[:, None, None] * np.eye(d)[None, :, :]
        # d grad_i / d y = -s x_i + y s(1-s) <theta, x> x_i
        tx = x @ theta
        out[:, :, d] = (-s + y * ds * tx)[:, None] * x
        return out


# --- finite-difference audit ---------------------------------------------------

@dataclass
class AuditReport:
    max_rel_error: float
    per_check: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def _steps(values, h_scale):
    return h_scale * np.maximum(1.0, np.abs(values))


def _rel_err(analytic, numeric):
    analytic = np.atleast_1d(np.asarray(analytic, dtype=float))
    numeric = np.atleast_1d(np.asarray(numeric, dtype=float))
    den = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / den))


def finite_difference_audit(model, theta, x, h_scale: float = 1e-5,
                            v=None, tol: float = 1e-5) -> AuditReport:
    """Validate every analytic callback against central differences.

    Works for both likelihood models (scores, curvature, data derivatives,
    prior terms) and loss models (parameter gradient, data Jacobian). The
    step is scaled per coordinate: h = h_scale * max(1, |coordinate|).
    """
    theta = np.asarray(theta, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    checks: dict[str, float] = {}

    if isinstance(model, LossModel):
        _audit_loss(model, theta, x, h_scale, checks)
    else:
        _audit_likelihood(model, theta, x, h_scale, v, checks)

    max_err = max(checks.values())
    return AuditReport(max_err, checks, tol)


def _audit_likelihood(model, theta, x, h_scale, v, checks):
    d = model.param_dim
    if v is None:
        v = np.full(d, 1.0 / np.sqrt(d))
    v = np.asarray(v, dtype=float)
    hs_t = _steps(theta, h_scale)

    # score vs FD of log_lik
    num = np.empty(d)
    for i in range(d):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += hs_t[i]
        tm[i] -= hs_t[i]
        num[i] = (model.log_lik(tp, x) - model.log_lik(tm, x)) / (2 * hs_t[i])
    checks["score_theta"] = _rel_err(model.score_theta(theta, x), num)

    # prior score vs FD of log_prior
    num = np.empty(d)
    for i in range(d):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += hs_t[i]
        tm[i] -= hs_t[i]
        num[i] = (model.log_prior(tp) - model.log_prior(tm)) / (2 * hs_t[i])
    checks["prior_score"] = _rel_err(model.prior_terms(theta)["score"], num)

    # trace vs sum of FD diagonal of the score Jacobian
    tr = 0.0
    for i in range(d):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += hs_t[i]
        tm[i] -= hs_t[i]
        tr += (model.score_theta(tp, x)[i] - model.score_theta(tm, x)[i]) / (2 * hs_t[i])
    checks["trace"] = _rel_err(model.curvature(theta, x), tr)

    # quad vs directional FD of <v, score>
    h = h_scale
    qp = v @ model.score_theta(theta + h * v, x)
    qm = v @ model.score_theta(theta - h * v, x)
    checks["quad"] = _rel_err(model.curvature(theta, x, v), (qp - qm) / (2 * h))

    # prior trace / quad via FD of prior score
    tr = 0.0
    for i in range(d):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += hs_t[i]
        tm[i] -= hs_t[i]
        tr += (model.prior_terms(tp)["score"][i] - model.prior_terms(tm)["score"][i]) / (2 * hs_t[i])
    checks["prior_trace"] = _rel_err(model.prior_terms(theta)["trace"], tr)
    qp = v @ model.prior_terms(theta + h * v)["score"]
    qm = v @ model.prior_terms(theta - h * v)["score"]
    checks["prior_quad"] = _rel_err(model.prior_terms(theta, v)["quad"], (qp - qm) / (2 * h))

    # data derivatives vs FD over the free coordinates
    free = model.layout.free_idx
    hs_x = _steps(x, h_scale)
    deriv = model.data_derivatives(theta, x, v)
    jac_num = np.empty((d, len(free)))
    gtr_num = np.empty(len(free))
    gq_num = np.empty(len(free))
    for j, idx in enumerate(free):
        xp, xm = x.copy(), x.copy()
        xp[idx] += hs_x[idx]
        xm[idx] -= hs_x[idx]
        jac_num[:, j] = (model.score_theta(theta, xp) - model.score_theta(theta, xm)) / (2 * hs_x[idx])
        gtr_num[j] = (model.curvature(theta, xp) - model.curvature(theta, xm)) / (2 * hs_x[idx])
        gq_num[j] = (model.curvature(theta, xp, v) - model.curvature(theta, xm, v)) / (2 * hs_x[idx])
    checks["jac_score"] = _rel_err(deriv["jac_score"], jac_num)
    checks["grad_trace"] = _rel_err(deriv["grad_trace"], gtr_num)
    checks["grad_quad"] = _rel_err(deriv["grad_quad"], gq_num)


def _audit_loss(model, theta, x, h_scale, checks):
    d = model.param_dim
    hs_t = _steps(theta, h_scale)
    terms = model.loss_terms(theta, x)

    num = np.empty(d)
    for i in range(d):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += hs_t[i]
        tm[i] -= hs_t[i]
        num[i] = (model.loss_terms(tp, x)["value"] - model.loss_terms(tm, x)["value"]) / (2 * hs_t[i])
    checks["grad_theta"] = _rel_err(terms["grad_theta"], num)

    num = np.empty(d)
    for i in range(d):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += hs_t[i]
        tm[i] -= hs_t[i]
        num[i] = (model.reg_value(tp) - model.reg_value(tm)) / (2 * hs_t[i])
    checks["reg_grad"] = _rel_err(model.reg_grad(theta), num)

    free = model.layout.free_idx
    hs_x = _steps(x, h_scale)
    jac_num = np.empty((d, len(free)))
    for j, idx in enumerate(free):
        xp, xm = x.copy(), x.copy()
        xp[idx] += hs_x[idx]
        xm[idx] -= hs_x[idx]
        gp = model.loss_terms(theta, xp)["grad_theta"]
        gm = model.loss_terms(theta, xm)["grad_theta"]
        jac_num[:, j] = (gp - gm) / (2 * hs_x[idx])
    checks["jac_data"] = _rel_err(terms["jac_data"], jac_num)
