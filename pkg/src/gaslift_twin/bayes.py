"""Weight-space uncertainty: random-walk Metropolis posteriors, Monte Carlo
propagation to prediction coverage regions, and ensemble reduction.

The likelihood is the Gaussian completion of the training MSE,
log L = -n * MSE(theta) / (2 sigma^2), with sigma estimated from the
MAP-fit residual spread (floored, since a near-interpolating fit would
otherwise collapse the posterior). The prior is a flat box around the MAP
weights. Proposal scale adapts toward a 20-40% acceptance rate during
burn-in and stays frozen afterwards so the post-burn-in chain is a valid
Metropolis sampler.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    BurnInExceedsChain,
    GasLiftError,
    InsufficientSamples,
    InvalidRegion,
    MemberDroppedWarning,
    NoInflectionWarning,
    NonFiniteStart,
)
from .network import NetworkSpec, forward, simulate_closed_loop
from .structure import NarxLayout

DEFAULT_SIGMA_FLOOR = 5e-3
DEFAULT_LIKELIHOOD_ROWS = 2000
DEFAULT_PRIOR_HALF_WIDTH = 10.0


@dataclass(frozen=True)
class BoxPrior:
    """Flat prior supported on a hypercube around a center point."""

    center: np.ndarray
    half_width: float = DEFAULT_PRIOR_HALF_WIDTH

    def contains(self, theta: np.ndarray) -> bool:
        return bool(np.max(np.abs(theta - self.center)) <= self.half_width)

    def log_prob(self, theta: np.ndarray) -> float:
        return 0.0 if self.contains(theta) else -np.inf


def log_posterior(
    theta: np.ndarray,
    spec: NetworkSpec,
    X: np.ndarray,
    y: np.ndarray,
    prior: BoxPrior,
    sigma: float,
) -> float:
    """Gaussian-likelihood log posterior; non-finite fits score -inf."""
    lp = prior.log_prob(theta)
    if not np.isfinite(lp):
        return -np.inf
    resid = forward(theta, spec, X) - y
    mse = float(np.mean(resid * resid))
    if not np.isfinite(mse):
        return -np.inf
    return -len(y) * mse / (2.0 * sigma * sigma) + lp


@dataclass(frozen=True)
class Chain:
    """One Metropolis run: every post-initialization state with its
    log-posterior and whether the step's proposal was accepted."""

    samples: np.ndarray          # (n, n_params)
    log_posteriors: np.ndarray   # (n,)
    accepted: np.ndarray         # (n,) bool
    proposal_scale: float        # scale in force after burn-in
    seed: int
    burn_in: int

    def __post_init__(self):
        n = len(self.samples)
        if len(self.log_posteriors) != n or len(self.accepted) != n:
            raise GasLiftError("chain fields must align 1:1 with samples")
        if not np.isfinite(self.samples).all():
            raise GasLiftError("chain contains non-finite samples")
        if not 0 <= self.burn_in < n:
            raise BurnInExceedsChain(f"burn-in {self.burn_in} >= length {n}")

    @property
    def length(self) -> int:
        return len(self.samples)

    @property
    def acceptance_rate(self) -> float:
        """Acceptance fraction over the post-burn-in portion."""
        return float(np.mean(self.accepted[self.burn_in :]))

    def post_burn(self) -> np.ndarray:
        return self.samples[self.burn_in :]

    def fingerprint(self) -> str:
        return hashlib.sha256(
            np.ascontiguousarray(self.samples).tobytes()
        ).hexdigest()[:16]


def mcmc_sample(
    log_target,
    init: np.ndarray,
    n_samples: int,
    proposal_scale: float,
    seed: int,
    *,
    burn_in: int = 0,
    adapt_interval: int = 100,
    accept_low: float = 0.25,
    accept_high: float = 0.35,
) -> Chain:
    """Random-walk Metropolis with isotropic Gaussian proposals.

    During burn-in the proposal scale shrinks or grows whenever the recent
    acceptance fraction leaves [accept_low, accept_high]; after burn-in the
    scale is frozen. The chain replays bitwise for a given seed.
    """
    init = np.asarray(init, dtype=float).ravel()
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if burn_in >= n_samples:
        raise BurnInExceedsChain(f"burn-in {burn_in} >= n_samples {n_samples}")
    lp = float(log_target(init))
    if not np.isfinite(lp):
        raise NonFiniteStart("initial point has non-finite log posterior")

    rng = np.random.Generator(np.random.PCG64(seed))
    theta = init.copy()
    scale = float(proposal_scale)
    samples = np.empty((n_samples, len(init)))
    log_posts = np.empty(n_samples)
    accepted = np.empty(n_samples, dtype=bool)
    window_accepts = 0

    for i in range(n_samples):
        prop = theta + scale * rng.standard_normal(len(init))
        lp_prop = float(log_target(prop))
        log_u = np.log(rng.uniform())
        take = log_u < lp_prop - lp
        if take:
            theta, lp = prop, lp_prop
        samples[i] = theta
        log_posts[i] = lp
        accepted[i] = take
        window_accepts += int(take)

        if i < burn_in and (i + 1) % adapt_interval == 0:
            rate = window_accepts / adapt_interval
            if rate < accept_low:
                scale *= 0.8
            elif rate > accept_high:
                scale *= 1.25
            window_accepts = 0

    return Chain(
        samples=samples,
        log_posteriors=log_posts,
        accepted=accepted,
        proposal_scale=scale,
        seed=seed,
        burn_in=burn_in,
    )


def sample_weight_posterior(
    dataset,
    spec: NetworkSpec,
    map_weights,
    *,
    n_samples: int,
    burn_in: int,
    proposal_scale: float = 1e-3,
    seed: int = 0,
    sigma_floor: float = DEFAULT_SIGMA_FLOOR,
    likelihood_rows: int = DEFAULT_LIKELIHOOD_ROWS,
    prior_half_width: float = DEFAULT_PRIOR_HALF_WIDTH,
) -> tuple[Chain, float]:
    """Posterior chain over one channel's network weights.

    The likelihood uses a fixed, seeded subsample of the normalized
    training rows so every chain evaluation sees the same data. Returns
    the chain and the sigma actually used.
    """
    X, y = dataset.normalized_split("train")
    if len(y) > likelihood_rows:
        pick = np.random.Generator(np.random.PCG64(seed)).choice(
            len(y), size=likelihood_rows, replace=False
        )
        pick.sort()
        X, y = X[pick], y[pick]
    theta0 = np.asarray(
        map_weights.theta if hasattr(map_weights, "theta") else map_weights,
        dtype=float,
    )
    resid = forward(theta0, spec, X) - y
    sigma = max(float(np.std(resid)), sigma_floor)
    prior = BoxPrior(center=theta0.copy(), half_width=prior_half_width)

    def target(theta):
        return log_posterior(theta, spec, X, y, prior, sigma)

    chain = mcmc_sample(
        target, theta0, n_samples, proposal_scale, seed, burn_in=burn_in
    )
    return chain, sigma


def burn_in_trim(chain: Chain, n_burn: int) -> np.ndarray:
    """Post-burn-in samples; n_burn must leave at least one sample."""
    if n_burn >= chain.length:
        raise BurnInExceedsChain(f"burn {n_burn} >= chain length {chain.length}")
    if n_burn < 0:
        raise ValueError("burn-in must be non-negative")
    return chain.samples[n_burn:]


@dataclass(frozen=True)
class PosteriorSummary:
    theta_hat: np.ndarray
    U: np.ndarray            # covariance, symmetric PSD

    def __post_init__(self):
        if not np.allclose(self.U, self.U.T, rtol=0, atol=0):
            raise GasLiftError("covariance must be exactly symmetric")
        if np.linalg.eigvalsh(self.U).min() < -1e-10:
            raise GasLiftError("covariance has a significantly negative eigenvalue")


def posterior_stats(samples: np.ndarray) -> PosteriorSummary:
    """Sample mean and unbiased covariance of the retained draws."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] < 2:
        raise InsufficientSamples("need at least two samples for covariance")
    mean = samples.mean(axis=0)
    centered = samples - mean
    U = centered.T @ centered / (samples.shape[0] - 1)
    U = (U + U.T) / 2.0
    return PosteriorSummary(theta_hat=mean, U=U)


def thin(samples: np.ndarray, n: int) -> np.ndarray:
    """Every k-th sample so at most n survive, keeping chronological order."""
    if n < 1:
        raise ValueError("thinned count must be positive")
    samples = np.atleast_2d(samples)
    stride = max(1, len(samples) // n)
    return samples[::stride][:n]


@dataclass(frozen=True)
class CoverageSeries:
    """Per-step empirical quantile band of an ensemble free run."""

    lower: np.ndarray
    upper: np.ndarray
    median: np.ndarray
    spread: np.ndarray       # member standard deviation per step
    confidence: float
    n_members: int

    def contains(self, y: np.ndarray) -> np.ndarray:
        """Boundary-inclusive pointwise membership of a trajectory."""
        y = np.asarray(y, dtype=float)
        return (y >= self.lower) & (y <= self.upper)

    def width(self) -> np.ndarray:
        return self.upper - self.lower


def propagate_uncertainty(
    members: np.ndarray,
    spec: NetworkSpec,
    layout: NarxLayout,
    y_window: np.ndarray,
    U: np.ndarray,
    *,
    confidence: float = 0.95,
    u_history: np.ndarray | None = None,
) -> CoverageSeries:
    """Free-run every member and summarize the trajectories per step.

    Members whose trajectories go non-finite are dropped with a warning;
    at least one must survive.
    """
    members = np.atleast_2d(np.asarray(members, dtype=float))
    if len(members) == 0:
        raise InvalidRegion("ensemble is empty")
    if not 0.0 < confidence < 1.0:
        raise InvalidRegion(f"confidence {confidence} outside (0, 1)")
    with np.errstate(over="ignore", invalid="ignore"):
        paths = simulate_closed_loop(
            members, spec, layout, y_window, U, u_history=u_history
        )
    ok = np.isfinite(paths).all(axis=1)
    if not ok.all():
        warnings.warn(
            f"dropped {int((~ok).sum())} diverged ensemble member(s)",
            MemberDroppedWarning,
        )
    paths = paths[ok]
    if len(paths) == 0:
        raise InvalidRegion("every ensemble member diverged")
    lo_q = (1.0 - confidence) / 2.0
    return CoverageSeries(
        lower=np.quantile(paths, lo_q, axis=0),
        upper=np.quantile(paths, 1.0 - lo_q, axis=0),
        median=np.quantile(paths, 0.5, axis=0),
        spread=paths.std(axis=0),
        confidence=confidence,
        n_members=int(len(paths)),
    )


@dataclass(frozen=True)
class ModelEnsemble:
    members: np.ndarray          # (size, n_params)
    source_fingerprint: str

    def __post_init__(self):
        if len(self.members) < 1:
            raise InvalidRegion("ensemble must keep at least one member")

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class ReductionReport:
    sizes: tuple[int, ...]               # tested, descending
    width_ratios: tuple[float, ...]      # vs the full ensemble, same order
    inflection_size: int | None
    chosen_size: int


def reduce_ensemble(
    samples: np.ndarray,
    spec: NetworkSpec,
    layout: NarxLayout,
    y_window: np.ndarray,
    U: np.ndarray,
    sizes: tuple[int, ...],
    seed: int,
    *,
    degeneration_tol: float = 0.1,
    confidence: float = 0.95,
    u_history: np.ndarray | None = None,
    safety_factor: float = 1.25,
) -> tuple[ModelEnsemble, ReductionReport]:
    """Find the smallest sub-ensemble whose coverage band has not degenerated.

    Candidate sizes run descending; each is scored by its mean interval
    width on the validation sequence relative to the full ensemble. The
    inflection size is the smallest whose ratio stays at or above
    1 - degeneration_tol, and the returned ensemble is a fresh draw of
    ceil(safety_factor * inflection) members. If even the largest tested
    size has degenerated the full ensemble is returned with a warning.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n = len(samples)
    sizes = tuple(int(s) for s in sizes)
    if any(a <= b for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly descending")
    if sizes[0] > n or sizes[-1] < 1:
        raise ValueError("sizes must lie within the sample count")

    fingerprint = hashlib.sha256(np.ascontiguousarray(samples).tobytes()).hexdigest()[:16]
    full = propagate_uncertainty(
        samples, spec, layout, y_window, U,
        confidence=confidence, u_history=u_history,
    )
    w_full = float(np.mean(full.width()))
    rng = np.random.Generator(np.random.PCG64(seed))

    ratios = []
    for size in sizes:
        idx = rng.choice(n, size=size, replace=False)
        if w_full == 0.0:
            ratios.append(1.0)       # zero-width bands cannot degenerate
            continue
        sub = propagate_uncertainty(
            samples[idx], spec, layout, y_window, U,
            confidence=confidence, u_history=u_history,
        )
        ratios.append(float(np.mean(sub.width())) / w_full)

    inflection = None
    for size, ratio in sorted(zip(sizes, ratios)):
        if ratio >= 1.0 - degeneration_tol:
            inflection = size
            break

    if inflection is None:
        warnings.warn(
            "coverage width degenerates at every tested size; keeping the "
            "full ensemble",
            NoInflectionWarning,
        )
        ensemble = ModelEnsemble(members=samples.copy(), source_fingerprint=fingerprint)
        report = ReductionReport(
            sizes=sizes, width_ratios=tuple(ratios),
            inflection_size=None, chosen_size=n,
        )
        return ensemble, report

    chosen = min(n, int(np.ceil(safety_factor * inflection)))
    idx = rng.choice(n, size=chosen, replace=False)
    idx.sort()
    ensemble = ModelEnsemble(members=samples[idx], source_fingerprint=fingerprint)
    report = ReductionReport(
        sizes=sizes, width_ratios=tuple(ratios),
        inflection_size=inflection, chosen_size=chosen,
    )
    return ensemble, report
