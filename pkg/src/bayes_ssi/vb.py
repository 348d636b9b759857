"""Coordinate-ascent variational engine for the hierarchical
latent-projection model.

The surrogate posterior factorizes over the latent columns, each weight
column, the mean and the per-view noise precisions (Gaussian factors plus a
Wishart factor per view).  All updates are closed form; the evidence lower
bound is tracked every sweep and must not decrease.

The latent factor is a joint Gaussian over each column, so its covariance
couples the latent rows; the weight update therefore carries a
cross-covariance correction term.  ``latent_cross_cov=False`` drops that
correction (mean-only treatment of the other rows), which is no longer an
exact coordinate update, so the bound is then allowed to wobble (warning
instead of error).

Update functions accept optional precomputed quantities (expected
precisions, prior precisions, the centred-data cross Gram); ``run_vb``
passes them to avoid recomputing invariants inside a sweep, which changes
no result.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import multigammaln, psi

from .model import PriorHyper, StackedData
from .rng import Rng, spd_cholesky, symmetrize

__all__ = [
    "VBConfig",
    "VBPosterior",
    "ElboDecreaseError",
    "expected_noise_precision",
    "expected_residual_scatter",
    "update_latent_factor",
    "update_weight_factor",
    "update_noise_factor",
    "update_mean_factor",
    "elbo",
    "initial_posterior",
    "run_vb",
]

_MONOTONE_RTOL = 1e-8


class ElboDecreaseError(RuntimeError):
    """The bound decreased beyond floating-point tolerance."""


@dataclass(frozen=True)
class VBConfig:
    """Convergence control; the seed only randomizes the initialization.

    ``warm_start`` initializes the weight means at the classical
    canonical-variate estimate instead of small random draws.  With very
    little data and a noise-prior scale that dwarfs the data scatter, the
    mean-field objective has a degenerate local optimum with zero weights
    that the default initialization can fall into; the warm start lands in
    the informative basin.
    """

    max_iter: int = 500
    elbo_rel_tol: float = 1e-7
    seed: int = 0
    latent_cross_cov: bool = True
    warm_start: bool = False

    def __post_init__(self):
        if self.elbo_rel_tol <= 0:
            raise ValueError("elbo_rel_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class VBPosterior:
    """Parameters of the factorized surrogate posterior."""

    latent_cov: np.ndarray           # d x d, shared across columns
    latent_mean: np.ndarray          # d x N
    weight_mean: np.ndarray          # D x d
    weight_cov: np.ndarray           # d x D x D
    mean_loc: np.ndarray             # D
    mean_cov: np.ndarray             # D x D
    noise_scale: list[np.ndarray]    # per view
    noise_dof: list[float]           # per view
    view_dims: tuple[int, ...]
    elbo_trace: list[float] = field(default_factory=list)
    converged: bool = False
    n_iter: int = 0
    elapsed_s: float = 0.0

    def slices(self) -> list[slice]:
        edges = np.concatenate([[0], np.cumsum(self.view_dims)])
        return [slice(int(edges[m]), int(edges[m + 1]))
                for m in range(len(self.view_dims))]

    def copy(self) -> "VBPosterior":
        return VBPosterior(
            latent_cov=self.latent_cov.copy(), latent_mean=self.latent_mean.copy(),
            weight_mean=self.weight_mean.copy(), weight_cov=self.weight_cov.copy(),
            mean_loc=self.mean_loc.copy(), mean_cov=self.mean_cov.copy(),
            noise_scale=[s.copy() for s in self.noise_scale],
            noise_dof=list(self.noise_dof), view_dims=self.view_dims,
            elbo_trace=list(self.elbo_trace), converged=self.converged,
            n_iter=self.n_iter, elapsed_s=self.elapsed_s,
        )


def expected_noise_precision(post: VBPosterior) -> list[np.ndarray]:
    """Per-view expected precision dof * scale^-1 of the Wishart factors."""
    out = []
    for scale, dof in zip(post.noise_scale, post.noise_dof):
        chol = spd_cholesky(scale, "noise factor scale")
        out.append(symmetrize(dof * cho_solve((chol, True), np.eye(scale.shape[0]),
                                              check_finite=False)))
    return out


def _precision_of(cov: np.ndarray, name: str) -> np.ndarray:
    chol = spd_cholesky(cov, name)
    return symmetrize(cho_solve((chol, True), np.eye(cov.shape[0]),
                                check_finite=False))


def _chol_inverse(prec: np.ndarray, name: str) -> np.ndarray:
    chol = spd_cholesky(symmetrize(prec), name)
    return symmetrize(cho_solve((chol, True), np.eye(prec.shape[0]),
                                check_finite=False))


def update_latent_factor(post: VBPosterior, data: StackedData, priors: PriorHyper,
                         psi_blocks: list[np.ndarray] | None = None) -> None:
    """Closed-form update of the shared latent covariance and all column means."""
    slices = post.slices()
    if psi_blocks is None:
        psi_blocks = expected_noise_precision(post)
    d = post.latent_mean.shape[0]

    quad = np.zeros((d, d))
    trace_corr = np.zeros(d)
    projector = np.empty((d, data.dim))
    for psi_m, sl in zip(psi_blocks, slices):
        wm = post.weight_mean[sl]
        psi_wm = psi_m @ wm
        quad += wm.T @ psi_wm
        projector[:, sl] = psi_wm.T
        for i in range(d):
            trace_corr[i] += float(np.sum(psi_m * post.weight_cov[i][sl, sl]))
    quad += np.diag(trace_corr) + np.eye(d)
    post.latent_cov = _chol_inverse(quad, "latent factor precision")
    means = projector @ data.x
    means -= (projector @ post.mean_loc)[:, None]
    post.latent_mean = post.latent_cov @ means


def update_weight_factor(post: VBPosterior, data: StackedData, priors: PriorHyper,
                         i: int, cross_cov: bool = True,
                         psi_blocks: list[np.ndarray] | None = None,
                         prior_prec: np.ndarray | None = None,
                         data_proj: np.ndarray | None = None) -> None:
    """Closed-form update of weight-column factor ``i``.

    ``cross_cov`` keeps the shared latent covariance's off-diagonal
    contribution when subtracting the other columns' effect.  ``data_proj``
    may carry the precomputed centred-data/latent-mean cross Gram
    (x - mean) @ latent_mean^T; it is valid as long as the mean and latent
    factors have not moved since it was computed.
    """
    slices = post.slices()
    if psi_blocks is None:
        psi_blocks = expected_noise_precision(post)
    if prior_prec is None:
        prior_prec = _precision_of(priors.weight_cov, "weight_cov")
    n = data.n_columns

    row = post.latent_mean[i]
    sq_sum = float(row @ row) + n * post.latent_cov[i, i]

    prec = prior_prec.copy()
    for psi_m, sl in zip(psi_blocks, slices):
        prec[sl, sl] += sq_sum * psi_m
    cov = _chol_inverse(prec, "weight factor precision")

    cross = post.latent_mean @ row
    if cross_cov:
        cross = cross + n * post.latent_cov[:, i]
    if data_proj is not None:
        data_term = data_proj[:, i].copy()
    else:
        data_term = data.x @ row
        data_term -= post.mean_loc * float(row.sum())
    data_term -= post.weight_mean @ cross - post.weight_mean[:, i] * cross[i]

    rhs = np.empty(data.dim)
    for psi_m, sl in zip(psi_blocks, slices):
        rhs[sl] = psi_m @ data_term[sl]
    rhs += prior_prec @ priors.weight_loc
    post.weight_mean[:, i] = cov @ rhs
    post.weight_cov[i] = cov


def expected_residual_scatter(post: VBPosterior, data: StackedData,
                              data_gram: np.ndarray | None = None,
                              data_sum: np.ndarray | None = None,
                              data_proj: np.ndarray | None = None,
                              ) -> list[np.ndarray]:
    """Per-view blocks of sum_n E[(x_n - mu - W z_n)(x_n - mu - W z_n)^T].

    Expands every second moment of the surrogate: the mean-factor
    covariance, the shared latent covariance mapped through the weights,
    and the per-column weight covariances weighted by the latent second
    moments.  Single source of truth shared by the noise update and the
    bound.

    When the data Gram ``x @ x.T``, the data row sum and the centred cross
    Gram ``(x - mean) @ latent_mean.T`` are supplied, the mean-residual
    part is expanded through them instead of streaming the data matrix.
    """
    slices = post.slices()
    n = data.n_columns
    sq_diag = np.sum(post.latent_mean**2, axis=1) + n * np.diag(post.latent_cov)

    if data_gram is not None and data_sum is not None and data_proj is not None:
        loc = post.mean_loc
        fitted_gram = post.latent_mean @ post.latent_mean.T
        centred_gram = (data_gram - np.outer(data_sum, loc) - np.outer(loc, data_sum)
                        + n * np.outer(loc, loc))
        full = (centred_gram - data_proj @ post.weight_mean.T
                - post.weight_mean @ data_proj.T
                + post.weight_mean @ fitted_gram @ post.weight_mean.T)
        resid_blocks = [full[sl, sl] for sl in slices]
    else:
        resid = data.x - post.mean_loc[:, None]
        np.subtract(resid, post.weight_mean @ post.latent_mean, out=resid)
        resid_blocks = [resid[sl] @ resid[sl].T for sl in slices]

    out = []
    for sl, block in zip(slices, resid_blocks):
        block = block + n * post.mean_cov[sl, sl]
        wm = post.weight_mean[sl]
        block += n * wm @ post.latent_cov @ wm.T
        for i in range(post.weight_mean.shape[1]):
            block += sq_diag[i] * post.weight_cov[i][sl, sl]
        out.append(symmetrize(block))
    return out


def update_noise_factor(post: VBPosterior, data: StackedData, priors: PriorHyper,
                        scatter: list[np.ndarray] | None = None) -> None:
    """Closed-form update of the per-view Wishart precision factors."""
    if scatter is None:
        scatter = expected_residual_scatter(post, data)
    n = data.n_columns
    post.noise_scale = [symmetrize(scale0 + blk)
                        for scale0, blk in zip(priors.noise_scale, scatter)]
    post.noise_dof = [dof0 + n for dof0 in priors.noise_dof]


def update_mean_factor(post: VBPosterior, data: StackedData, priors: PriorHyper,
                       psi_blocks: list[np.ndarray] | None = None,
                       prior_prec: np.ndarray | None = None) -> None:
    """Closed-form update of the mean factor."""
    slices = post.slices()
    if psi_blocks is None:
        psi_blocks = expected_noise_precision(post)
    if prior_prec is None:
        prior_prec = _precision_of(priors.mean_cov, "mean_cov")
    n = data.n_columns

    prec = prior_prec.copy()
    for psi_m, sl in zip(psi_blocks, slices):
        prec[sl, sl] += n * psi_m
    cov = _chol_inverse(prec, "mean factor precision")

    demeaned = data.x.sum(axis=1) - post.weight_mean @ post.latent_mean.sum(axis=1)
    rhs = np.empty(data.dim)
    for psi_m, sl in zip(psi_blocks, slices):
        rhs[sl] = psi_m @ demeaned[sl]
    rhs += prior_prec @ priors.mean_loc
    post.mean_loc = cov @ rhs
    post.mean_cov = cov


def _chol_logdet(mat: np.ndarray, name: str) -> float:
    chol = spd_cholesky(mat, name)
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def _expected_logdet_precision(scale: np.ndarray, dof: float) -> float:
    """E[ln |precision|] under a Wishart factor with the given scale inverse."""
    dim = scale.shape[0]
    digamma_sum = float(np.sum(psi(0.5 * (dof - np.arange(dim)))))
    return digamma_sum + dim * np.log(2.0) - _chol_logdet(scale, "noise factor scale")


def elbo(post: VBPosterior, data: StackedData, priors: PriorHyper,
         psi_blocks: list[np.ndarray] | None = None,
         scatter: list[np.ndarray] | None = None) -> float:
    """Evidence lower bound: expected log joint minus the surrogate's
    expected log density, all terms in closed form."""
    if psi_blocks is None:
        psi_blocks = expected_noise_precision(post)
    if scatter is None:
        scatter = expected_residual_scatter(post, data)
    n = data.n_columns
    d = post.latent_mean.shape[0]
    total_dim = data.dim

    value = 0.0
    # expected log likelihood, per view
    for psi_m, blk, scale, dof in zip(psi_blocks, scatter, post.noise_scale,
                                      post.noise_dof):
        dim = scale.shape[0]
        e_logdet = _expected_logdet_precision(scale, dof)
        value += 0.5 * n * (e_logdet - dim * np.log(2.0 * np.pi))
        value -= 0.5 * float(np.sum(psi_m * blk))

    # expected log prior of the latent columns
    sq_total = float(np.sum(post.latent_mean**2)) + n * float(np.trace(post.latent_cov))
    value += -0.5 * n * d * np.log(2.0 * np.pi) - 0.5 * sq_total

    # expected log prior of the noise precisions
    for scale0, dof0, scale, dof, psi_m in zip(priors.noise_scale, priors.noise_dof,
                                               post.noise_scale, post.noise_dof,
                                               psi_blocks):
        dim = scale0.shape[0]
        e_logdet = _expected_logdet_precision(scale, dof)
        value += 0.5 * (dof0 - dim - 1) * e_logdet
        value -= 0.5 * float(np.sum(scale0 * psi_m))
        value += 0.5 * dof0 * _chol_logdet(scale0, "noise prior scale")
        value -= 0.5 * dof0 * dim * np.log(2.0)
        value -= multigammaln(0.5 * dof0, dim)

    # expected log prior of the mean
    prior_prec = _precision_of(priors.mean_cov, "mean_cov")
    dev = post.mean_loc - priors.mean_loc
    value += -0.5 * total_dim * np.log(2.0 * np.pi)
    value -= 0.5 * _chol_logdet(priors.mean_cov, "mean_cov")
    value -= 0.5 * (float(dev @ prior_prec @ dev)
                    + float(np.sum(prior_prec * post.mean_cov)))

    # expected log prior of the weight columns
    w_prior_prec = _precision_of(priors.weight_cov, "weight_cov")
    w_prior_logdet = _chol_logdet(priors.weight_cov, "weight_cov")
    for i in range(d):
        dev = post.weight_mean[:, i] - priors.weight_loc
        value += -0.5 * total_dim * np.log(2.0 * np.pi) - 0.5 * w_prior_logdet
        value -= 0.5 * (float(dev @ w_prior_prec @ dev)
                        + float(np.sum(w_prior_prec * post.weight_cov[i])))

    # minus expected log of the surrogate (its negative entropy)
    value += 0.5 * n * (_chol_logdet(post.latent_cov, "latent factor cov")
                        + d * (1.0 + np.log(2.0 * np.pi)))
    for i in range(d):
        value += 0.5 * (_chol_logdet(post.weight_cov[i], "weight factor cov")
                        + total_dim * (1.0 + np.log(2.0 * np.pi)))
    value += 0.5 * (_chol_logdet(post.mean_cov, "mean factor cov")
                    + total_dim * (1.0 + np.log(2.0 * np.pi)))
    for scale, dof in zip(post.noise_scale, post.noise_dof):
        dim = scale.shape[0]
        e_logdet = _expected_logdet_precision(scale, dof)
        # E[ln q(precision)] with tr(scale <precision>) = dof * dim
        e_log_q = (0.5 * (dof - dim - 1) * e_logdet - 0.5 * dof * dim
                   - 0.5 * dof * dim * np.log(2.0)
                   + 0.5 * dof * _chol_logdet(scale, "noise factor scale")
                   - multigammaln(0.5 * dof, dim))
        value -= e_log_q
    return float(value)


def initial_posterior(data: StackedData, priors: PriorHyper, seed: int,
                      warm_start: bool = False) -> VBPosterior:
    """Deterministic seeded initialization: small random weight means, zero
    latent means, noise factors at their prior, mean factor centred on the
    data row means.

    ``warm_start`` replaces the random weight means with the classical
    maximum-likelihood point and matches the noise factors to the residual
    covariance there.
    """
    rng = Rng(seed, stream=2)
    d = priors.latent_dim
    total_dim = data.dim
    if warm_start:
        from .gibbs import _warm_start_state

        state = _warm_start_state(data, priors)
        weight_mean = state.weights
        weight_cov = np.repeat(1e-8 * np.eye(total_dim)[None, :, :], d, axis=0)
        noise_dof = [dof0 + data.n_columns for dof0 in priors.noise_dof]
        noise_scale = [dof * blk for dof, blk in zip(noise_dof, state.noise_cov)]
    else:
        scale = 0.1 * float(np.sqrt(np.mean(data.x**2))) + 1e-8
        weight_mean = scale * rng.generator.standard_normal((total_dim, d))
        weight_cov = np.repeat(priors.weight_cov[None, :, :], d, axis=0)
        noise_scale = [s.copy() for s in priors.noise_scale]
        noise_dof = list(priors.noise_dof)
    return VBPosterior(
        latent_cov=np.eye(d),
        latent_mean=np.zeros((d, data.n_columns)),
        weight_mean=weight_mean,
        weight_cov=weight_cov,
        mean_loc=data.x.mean(axis=1),
        mean_cov=1e-10 * np.eye(total_dim),
        noise_scale=noise_scale,
        noise_dof=noise_dof,
        view_dims=priors.view_dims,
    )


def _shift_scatter(scatter: list[np.ndarray], slices: list[slice],
                   resid_sums: list[np.ndarray], old_loc: np.ndarray,
                   new_loc: np.ndarray, old_cov: np.ndarray, new_cov: np.ndarray,
                   n: int) -> list[np.ndarray]:
    """Exact update of the residual scatter after the mean factor moved.

    With delta = old - new, the raw scatter gains
    delta s^T + s delta^T + n delta delta^T (s is the per-view residual
    row-sum under the old mean) and the mean-covariance term changes by
    n * (new_cov - old_cov).
    """
    out = []
    for blk, sl, s_old in zip(scatter, slices, resid_sums):
        delta = (old_loc - new_loc)[sl]
        adjusted = blk + np.outer(delta, s_old) + np.outer(s_old, delta)
        adjusted += n * np.outer(delta, delta)
        adjusted += n * (new_cov[sl, sl] - old_cov[sl, sl])
        out.append(symmetrize(adjusted))
    return out


def run_vb(data: StackedData, priors: PriorHyper, config: VBConfig) -> VBPosterior:
    """Iterate the coordinate updates until the bound converges.

    Update order per sweep: latent factor, every weight column, noise
    factors, mean factor; the bound is evaluated after each full sweep.  A
    decrease beyond 1e-8 relative raises (warns in the non-exact
    ``latent_cross_cov=False`` mode); a non-finite bound aborts with a
    state dump.
    """
    post = initial_posterior(data, priors, config.seed,
                             warm_start=config.warm_start)
    d = priors.latent_dim
    n = data.n_columns
    slices = post.slices()
    prior_weight_prec = _precision_of(priors.weight_cov, "weight_cov")
    prior_mean_prec = _precision_of(priors.mean_cov, "mean_cov")
    data_gram = data.x @ data.x.T
    data_sum = data.x.sum(axis=1)

    start = time.perf_counter()
    previous = -np.inf
    psi_blocks = expected_noise_precision(post)
    for sweep in range(1, config.max_iter + 1):
        update_latent_factor(post, data, priors, psi_blocks)
        # centred-data cross Gram, valid until the mean or latent factor moves
        latent_sum = post.latent_mean.sum(axis=1)
        data_proj = data.x @ post.latent_mean.T - np.outer(post.mean_loc, latent_sum)
        for i in range(d):
            update_weight_factor(post, data, priors, i,
                                 cross_cov=config.latent_cross_cov,
                                 psi_blocks=psi_blocks,
                                 prior_prec=prior_weight_prec,
                                 data_proj=data_proj)
        scatter = expected_residual_scatter(post, data, data_gram, data_sum,
                                            data_proj)
        update_noise_factor(post, data, priors, scatter)
        psi_blocks = expected_noise_precision(post)

        # residual row sums under the pre-update mean, for the exact
        # scatter shift after the mean factor moves
        fitted_sum = post.weight_mean @ latent_sum
        resid_sum_full = data_sum - n * post.mean_loc - fitted_sum
        old_loc, old_cov = post.mean_loc, post.mean_cov
        update_mean_factor(post, data, priors, psi_blocks, prior_mean_prec)
        scatter = _shift_scatter(scatter, slices,
                                 [resid_sum_full[sl] for sl in slices],
                                 old_loc, post.mean_loc, old_cov, post.mean_cov, n)

        bound = elbo(post, data, priors, psi_blocks, scatter)
        if not np.isfinite(bound):
            raise RuntimeError(
                "bound became non-finite at sweep "
                f"{sweep}; state: |W|={np.linalg.norm(post.weight_mean):.3e}, "
                f"|mu|={np.linalg.norm(post.mean_loc):.3e}, "
                f"dof={post.noise_dof}"
            )
        if bound < previous - _MONOTONE_RTOL * abs(previous):
            message = (f"bound decreased at sweep {sweep}: "
                       f"{previous:.12e} -> {bound:.12e}")
            if config.latent_cross_cov:
                raise ElboDecreaseError(message)
            warnings.warn(message)
        post.elbo_trace.append(bound)
        post.n_iter = sweep
        if np.isfinite(previous) and abs(bound - previous) < config.elbo_rel_tol * abs(previous):
            post.converged = True
            break
        previous = bound
    post.elapsed_s = time.perf_counter() - start
    return post
