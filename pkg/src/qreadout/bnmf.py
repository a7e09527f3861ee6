"""Variational Bayesian Poisson-Exponential nonnegative matrix factorization.

Decomposes a nonnegative M x T observation into an M x K basis matrix and a
K x T activation matrix.  Every basis entry u_mk carries an exponential
prior with rate ``alpha_mk`` and every activation entry w_kt one with rate
``beta_kt``; the posterior over each entry is a Gamma whose shape/scale are
updated in closed form, the per-observation allocation over bases is a
multinomial with parameter eta, and the prior rates themselves are
re-estimated every sweep from the positive root of a quadratic.  Model
order is chosen by maximizing the variational lower bound over K.

All updates are deterministic given the seed; a fit never mutates its
input model, it returns a fresh one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .errors import NumericalDomainError, ValidationError

EPS = 1e-12  # floor for denominators and log arguments


@dataclass(frozen=True)
class FitOptions:
    """Iteration controls for a variational fit."""

    max_iters: int = 500
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol > 0:
            raise ValidationError(f"tol must be > 0, got {self.tol}")


@dataclass(frozen=True)
class FactorModel:
    """State of the variational factorization.

    ``bases`` and ``activations`` are the Gamma posterior means of the
    basis and activation entries (the point estimates used for the
    reconstruction ``bases @ activations``); ``log_bases`` and
    ``log_activations`` are the corresponding posterior means of the logs.
    ``eta`` holds the per-(m, t) multinomial allocation over the K bases.
    ``ctrl_alpha`` / ``ctrl_beta`` are the running closed-form estimates of
    the exponential prior rates; the rates themselves stay fixed at
    ``prior_rate_u`` / ``prior_rate_w`` so every sweep is an exact
    coordinate-ascent move on the bound.
    """

    bases: np.ndarray          # E(u), M x K
    activations: np.ndarray    # E(w), K x T
    log_bases: np.ndarray      # E(log u), M x K
    log_activations: np.ndarray  # E(log w), K x T
    eta: np.ndarray            # M x K x T, sums to 1 over axis 1
    a_shape: np.ndarray        # M x K
    a_scale: np.ndarray        # M x K
    b_shape: np.ndarray        # K x T
    b_scale: np.ndarray        # K x T
    ctrl_alpha: np.ndarray     # M x K
    ctrl_beta: np.ndarray      # K x T
    K: int
    prior_rate_u: float = 1.0
    prior_rate_w: float = 1.0
    converged: bool = False
    iterations: int = 0
    elbo_trace: tuple = field(default_factory=tuple)

    @property
    def shape(self) -> tuple[int, int]:
        return self.bases.shape[0], self.activations.shape[1]

    def reconstruction(self) -> np.ndarray:
        """Point reconstruction of the observation from the Gamma means."""
        return self.bases @ self.activations

    def fixed_point_estimates(self) -> tuple[np.ndarray, np.ndarray]:
        """Self-consistent exponential-density point estimates.

        Solves u = a * exp(-a * u) for a = ctrl_alpha (and likewise for the
        activations), which reduces to u = W(a^2)/a with W the principal
        Lambert branch.
        """
        a = np.maximum(self.ctrl_alpha, EPS)
        b = np.maximum(self.ctrl_beta, EPS)
        u = special.lambertw(a**2).real / a
        w = special.lambertw(b**2).real / b
        return u, w

    def check_invariants(self) -> None:
        sums = self.eta.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-10):
            raise NumericalDomainError("eta allocation violates the simplex invariant")
        for name, arr in (
            ("a_shape", self.a_shape),
            ("a_scale", self.a_scale),
            ("b_shape", self.b_shape),
            ("b_scale", self.b_scale),
            ("ctrl_alpha", self.ctrl_alpha),
            ("ctrl_beta", self.ctrl_beta),
        ):
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise NumericalDomainError(f"{name} must be strictly positive and finite")
        if np.any(self.a_shape < 1.0 - 1e-12):
            raise NumericalDomainError("a_shape fell below its lower bound of 1")

    _ARRAY_FIELDS = (
        "bases", "activations", "log_bases", "log_activations", "eta",
        "a_shape", "a_scale", "b_shape", "b_scale", "ctrl_alpha", "ctrl_beta",
    )

    def to_dict(self) -> dict:
        # matrices go out row-major with their shapes explicit
        doc = {
            "K": self.K,
            "prior_rate_u": self.prior_rate_u,
            "prior_rate_w": self.prior_rate_w,
            "converged": self.converged,
            "iterations": self.iterations,
            "elbo_trace": list(self.elbo_trace),
        }
        for name in self._ARRAY_FIELDS:
            arr = getattr(self, name)
            doc[name] = {
                "shape": list(arr.shape),
                "data": [float(v) for v in np.ravel(arr, order="C")],
            }
        return doc

    @classmethod
    def from_dict(cls, d: dict) -> "FactorModel":
        def arr(key):
            entry = d[key]
            if isinstance(entry, dict):
                return np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
            return np.asarray(entry, dtype=float)

        return cls(
            **{name: arr(name) for name in cls._ARRAY_FIELDS},
            K=int(d["K"]),
            prior_rate_u=float(d.get("prior_rate_u", 1.0)),
            prior_rate_w=float(d.get("prior_rate_w", 1.0)),
            converged=bool(d["converged"]),
            iterations=int(d["iterations"]),
            elbo_trace=tuple(d.get("elbo_trace", ())),
        )


def _as_observation(X) -> np.ndarray:
    X = np.asarray(getattr(X, "values", X), dtype=float)
    if X.ndim != 2:
        raise ValidationError(f"observation must be a 2-D matrix, got ndim={X.ndim}")
    if np.any(X < 0) or not np.all(np.isfinite(X)):
        raise ValidationError("observation entries must be finite and nonnegative")
    return X


def init_model(X, K: int, seed: int = 0) -> FactorModel:
    """Initialize variational state from perturbed data row/column means.

    Prior rates start at one (unit-mean exponential priors), allocations
    start uniform at 1/K, and the Gamma shapes/scales are seeded so the
    initial reconstruction matches the data's magnitude.
    """
    X = _as_observation(X)
    if K < 1:
        raise ValidationError(f"K must be >= 1, got {K}")
    rng = np.random.default_rng(seed)
    M, T = X.shape

    row_scale = np.sqrt((X.mean(axis=1) + EPS) / K)   # (M,)
    col_scale = np.sqrt((X.mean(axis=0) + EPS) / K)   # (T,)

    a_shape = 1.0 + rng.uniform(0.0, 0.05, size=(M, K))
    a_scale = row_scale[:, None] * rng.uniform(0.9, 1.1, size=(M, K)) / a_shape
    b_shape = 1.0 + rng.uniform(0.0, 0.05, size=(K, T))
    b_scale = col_scale[None, :] * rng.uniform(0.9, 1.1, size=(K, T)) / b_shape

    model = FactorModel(
        bases=a_shape * a_scale,
        activations=b_shape * b_scale,
        log_bases=special.psi(a_shape) + np.log(a_scale),
        log_activations=special.psi(b_shape) + np.log(b_scale),
        eta=np.full((M, K, T), 1.0 / K),
        a_shape=a_shape,
        a_scale=a_scale,
        b_shape=b_shape,
        b_scale=b_scale,
        ctrl_alpha=np.ones((M, K)),
        ctrl_beta=np.ones((K, T)),
        K=K,
    )
    model.check_invariants()
    return model


def update_eta(model: FactorModel, X) -> FactorModel:
    """Refresh the multinomial allocation from the current log means.

    eta_mkt is the softmax over k of E(log u_mk) + E(log w_kt), evaluated
    in log space with max subtraction so a common shift leaves it unchanged.
    """
    logits = model.log_bases[:, :, None] + model.log_activations[None, :, :]
    if not np.all(np.isfinite(logits)):
        idx = tuple(np.argwhere(~np.isfinite(logits))[0])
        raise NumericalDomainError(f"non-finite log expectation at index {idx}")
    logits = logits - logits.max(axis=1, keepdims=True)
    eta = np.exp(logits)
    eta /= eta.sum(axis=1, keepdims=True)
    return replace(model, eta=eta)


def update_variational(model: FactorModel, X) -> FactorModel:
    """Closed-form Gamma updates for bases then activations.

    The expected allocation counts are E(kappa_mkt) = X_mt * eta_mkt; the
    basis posteriors update first from the current activation means, then
    the activation posteriors update from the refreshed basis means, so
    each half-step is an exact coordinate-ascent move.
    """
    X = _as_observation(X)
    e_kappa = X[:, None, :] * model.eta  # M x K x T

    sum_w = model.activations.sum(axis=1)  # (K,)
    a_shape = 1.0 + e_kappa.sum(axis=2)
    a_denom = sum_w[None, :] + model.prior_rate_u
    if np.any(a_denom < EPS):
        warnings.warn(
            "zero basis-scale denominator floored at 1e-12",
            RuntimeWarning,
            stacklevel=2,
        )
    a_scale = 1.0 / _floored(a_denom)
    bases = a_shape * a_scale
    log_bases = special.psi(a_shape) + np.log(a_scale)

    sum_u = bases.sum(axis=0)  # (K,)
    b_shape = 1.0 + e_kappa.sum(axis=0)
    b_denom = sum_u[:, None] + model.prior_rate_w
    if np.any(b_denom < EPS):
        warnings.warn(
            "zero activation-scale denominator floored at 1e-12",
            RuntimeWarning,
            stacklevel=2,
        )
    b_scale = 1.0 / _floored(b_denom)
    activations = b_shape * b_scale
    log_activations = special.psi(b_shape) + np.log(b_scale)

    return replace(
        model,
        bases=bases,
        activations=activations,
        log_bases=log_bases,
        log_activations=log_activations,
        a_shape=a_shape,
        a_scale=a_scale,
        b_shape=b_shape,
        b_scale=b_scale,
    )


def update_control(model: FactorModel) -> FactorModel:
    """Refresh the closed-form estimates of the prior rates.

    The basis-rate estimate is the positive root of
    alpha^2 + s_w * alpha - s_w / E(u) = 0 with s_w the activation sum over
    time; the activation rate solves the mirrored equation with s_u the
    basis sum over sources.  The estimates track the posterior as it
    converges; the rates the updates actually use stay at their fixed
    values so the sweep remains an ascent on the bound.
    """
    sum_w = model.activations.sum(axis=1)[None, :]  # 1 x K
    e_u = _floored(model.bases)
    e_ctrl = 0.5 * (-sum_w + np.sqrt(sum_w**2 + 4.0 * sum_w / e_u))

    sum_u = model.bases.sum(axis=0)[:, None]  # K x 1
    e_w = _floored(model.activations)
    f_ctrl = 0.5 * (-sum_u + np.sqrt(sum_u**2 + 4.0 * sum_u / e_w))

    if not (np.all(np.isfinite(e_ctrl)) and np.all(np.isfinite(f_ctrl))):
        raise NumericalDomainError("control estimate is non-finite")
    return replace(
        model,
        ctrl_alpha=np.maximum(e_ctrl, EPS),
        ctrl_beta=np.maximum(f_ctrl, EPS),
    )


def lower_bound(model: FactorModel, X) -> float:
    """Variational lower bound of the marginal likelihood.

    Assembles the expected joint log density (Poisson allocation terms plus
    the exponential prior terms at the model's fixed rates) and the
    Gamma/multinomial entropies.  The delta-constraint and
    log-Gamma(kappa+1) terms cancel between the two halves and are omitted.
    """
    X = _as_observation(X)
    e_kappa = X[:, None, :] * model.eta

    recon = float(np.sum(model.bases @ model.activations))
    data = -float(special.gammaln(X + 1.0).sum())
    alloc = special.xlogy(e_kappa, model.eta)
    if not np.all(np.isfinite(alloc)):
        idx = tuple(np.argwhere(~np.isfinite(alloc))[0])
        raise NumericalDomainError(
            f"allocation entropy has log of a nonpositive argument at index {idx}"
        )
    data -= float(alloc.sum())

    cross_u = float(np.sum(model.log_bases * e_kappa.sum(axis=2)))
    cross_w = float(np.sum(model.log_activations * e_kappa.sum(axis=0)))

    rate_u, rate_w = model.prior_rate_u, model.prior_rate_w
    if not (rate_u > 0 and rate_w > 0):
        raise NumericalDomainError("prior rates must be positive for the bound")
    prior_u = float(np.sum(np.log(rate_u) - rate_u * model.bases))
    prior_w = float(np.sum(np.log(rate_w) - rate_w * model.activations))

    ent_u = float(np.sum(_gamma_entropy(model.a_shape, model.a_scale)))
    ent_w = float(np.sum(_gamma_entropy(model.b_shape, model.b_scale)))

    total = -recon + data + cross_u + cross_w + prior_u + prior_w + ent_u + ent_w
    if not np.isfinite(total):
        raise NumericalDomainError("lower bound evaluated to a non-finite value")
    return total


def _gamma_entropy(shape: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return (
        -(shape - 1.0) * special.psi(shape)
        + np.log(_floored(scale))
        + shape
        + special.gammaln(shape)
    )


def _floored(arr: np.ndarray) -> np.ndarray:
    return np.maximum(arr, EPS)


def fit(X, K: int, opts: FitOptions | None = None) -> FactorModel:
    """Run the full variational loop until the bound stabilizes.

    Per sweep: allocation update, Gamma updates, prior-rate update.  Stops
    when the relative bound change drops below ``opts.tol`` or after
    ``opts.max_iters`` sweeps; a non-converged model is returned flagged,
    not raised.  An all-zero observation short-circuits after the first
    sweep since there is no mass to allocate.
    """
    opts = opts or FitOptions()
    X = _as_observation(X)
    model = init_model(X, K, opts.seed)
    zero_mass = float(X.sum()) == 0.0

    trace: list[float] = []
    converged = False
    previous = None
    for iteration in range(1, opts.max_iters + 1):
        model = update_eta(model, X)
        model = update_variational(model, X)
        elbo = lower_bound(model, X)
        trace.append(elbo)
        model = update_control(model)
        if zero_mass:
            converged = True
            break
        if previous is not None:
            if abs(elbo - previous) <= opts.tol * max(abs(previous), EPS):
                converged = True
                break
        previous = elbo

    return replace(
        model,
        converged=converged,
        iterations=len(trace),
        elbo_trace=tuple(trace),
    )


def select_order(
    X,
    k_min: int,
    k_max: int,
    opts: FitOptions | None = None,
    with_trace: bool = False,
):
    """Pick the basis count maximizing the converged lower bound.

    Fits every K in [k_min, k_max] with a seed derived per K, and returns
    the argmax; ties resolve toward the smaller K.
    """
    opts = opts or FitOptions()
    if not 1 <= k_min <= k_max:
        raise ValidationError(
            f"order range requires 1 <= k_min <= k_max, got [{k_min}, {k_max}]"
        )
    X = _as_observation(X)

    best_k = None
    best_model = None
    best_elbo = -np.inf
    scores = []
    for K in range(k_min, k_max + 1):
        child_seed = np.random.SeedSequence(entropy=(opts.seed, K))
        child = replace(opts, seed=int(child_seed.generate_state(1)[0]))
        model = fit(X, K, child)
        elbo = model.elbo_trace[-1]
        scores.append((K, elbo, model.converged))
        if elbo > best_elbo:
            best_k, best_model, best_elbo = K, model, elbo
    if with_trace:
        return best_k, best_model, scores
    return best_k, best_model
