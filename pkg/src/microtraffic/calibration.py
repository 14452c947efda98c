"""Random-walk Metropolis-Hastings calibration of driver parameters.

The target is a Gaussian quasi-likelihood built from the one-step
acceleration-prediction RMSE on an observed trajectory, restricted to a
flat box prior on the positive orthant. The proposal kernel is an
independent Gaussian per coordinate, which is symmetric, so the kernel
terms cancel exactly in the acceptance ratio.

The sampler itself only needs an object with ``log_density(theta)``, so
toy targets (see :class:`GaussianTarget`) can stand in for the trajectory
target when validating the chain machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import DegenerateSeriesError, GenerationError, InputDomainError
from .histogram import Histogram
from .idm import (PARAM_NAMES, FollowingState, ParamSet, Trajectory,
                  desired_gap, rollout_follower, rollout_rmse_objective)

DEFAULT_NOISE_SIGMA = 0.3
#: Flat prior box, open at zero: a_max, a_comf, v_des, d_min, T, delta.
DEFAULT_PRIOR_LO = np.zeros(6)
DEFAULT_PRIOR_HI = np.array([6.0, 8.0, 60.0, 100.0, 5.0, 10.0])


def default_proposal_sigma() -> np.ndarray:
    """Per-coordinate proposal scale: 2% of the default prior box width."""
    return 0.02 * (DEFAULT_PRIOR_HI - DEFAULT_PRIOR_LO)


def _theta_of(p) -> np.ndarray:
    if isinstance(p, ParamSet):
        return p.to_array()
    theta = np.asarray(p, dtype=np.float64)
    if theta.ndim != 1 or theta.size == 0:
        raise InputDomainError("parameter vector must be 1-D and non-empty")
    return theta


@dataclass(frozen=True)
class ProposalConfig:
    """Chain settings: proposal scales, length, burn-in, thinning.

    ``burn_in`` defaults to 20% of ``n_iter``. ``pin_delta`` freezes the
    exponent coordinate at the given value instead of calibrating it
    (only meaningful for 6-dimensional chains).
    """

    sigma_prop: np.ndarray
    n_iter: int
    seed: int = 0
    burn_in: int | None = None
    thin: int = 1
    pin_delta: float | None = None

    def __post_init__(self):
        sigma = np.ascontiguousarray(self.sigma_prop, dtype=np.float64)
        if sigma.ndim != 1 or sigma.size == 0:
            raise InputDomainError("sigma_prop must be a non-empty 1-D array")
        if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0.0):
            raise InputDomainError("sigma_prop entries must be finite and > 0")
        object.__setattr__(self, "sigma_prop", sigma)
        n_iter = int(self.n_iter)
        if n_iter < 1:
            raise InputDomainError(f"n_iter must be >= 1, got {n_iter}")
        object.__setattr__(self, "n_iter", n_iter)
        burn_in = self.burn_in
        burn_in = n_iter // 5 if burn_in is None else int(burn_in)
        if not 0 <= burn_in < n_iter:
            raise InputDomainError(
                f"burn_in must satisfy 0 <= burn_in < n_iter, got {burn_in}"
            )
        object.__setattr__(self, "burn_in", burn_in)
        thin = int(self.thin)
        if thin < 1:
            raise InputDomainError(f"thin must be >= 1, got {thin}")
        object.__setattr__(self, "thin", thin)
        if self.pin_delta is not None:
            pin = float(self.pin_delta)
            if not math.isfinite(pin) or pin <= 0.0:
                raise InputDomainError(f"pin_delta must be finite and > 0, got {pin!r}")
            if sigma.size != len(PARAM_NAMES):
                raise InputDomainError("pin_delta requires a 6-dimensional chain")
            object.__setattr__(self, "pin_delta", pin)

    @property
    def effective_sigma(self) -> np.ndarray:
        """Proposal scales actually used; the pinned coordinate gets zero."""
        sigma = self.sigma_prop.copy()
        if self.pin_delta is not None:
            sigma[PARAM_NAMES.index("delta")] = 0.0
        return sigma

    @property
    def n_kept(self) -> int:
        return len(range(self.burn_in, self.n_iter, self.thin))


class TargetDensity:
    """Unnormalised log-posterior for driver parameters given a trajectory.

    ``log_density`` is ``-n * rmse^2 / (2 * noise_sigma^2)`` inside the
    prior box (so exact prediction scores 0) and -inf outside it or for
    any non-positive coordinate. ``objective`` selects the one-step
    prediction RMSE (default) or a full re-rollout RMSE.
    """

    def __init__(self, obs: Trajectory, noise_sigma: float = DEFAULT_NOISE_SIGMA,
                 prior_lo=None, prior_hi=None, objective: str = "one-step"):
        if len(obs) == 0:
            raise InputDomainError("target density needs a non-empty trajectory")
        noise_sigma = float(noise_sigma)
        if not math.isfinite(noise_sigma) or noise_sigma <= 0.0:
            raise InputDomainError(f"noise_sigma must be finite and > 0, got {noise_sigma!r}")
        lo = DEFAULT_PRIOR_LO.copy() if prior_lo is None else np.ascontiguousarray(prior_lo, dtype=np.float64)
        hi = DEFAULT_PRIOR_HI.copy() if prior_hi is None else np.ascontiguousarray(prior_hi, dtype=np.float64)
        if lo.shape != (6,) or hi.shape != (6,):
            raise InputDomainError("prior bounds must be 6-vectors")
        if np.any(lo < 0.0) or np.any(hi <= lo):
            raise InputDomainError("prior box needs 0 <= lo < hi per coordinate")
        if objective not in ("one-step", "rollout"):
            raise InputDomainError(f"unknown objective {objective!r}")
        self.obs = obs
        self.noise_sigma = noise_sigma
        self.prior_lo = lo
        self.prior_hi = hi
        self.objective = objective
        self.dim = 6
        v, dv, gap = obs.states()
        self._v = np.ascontiguousarray(v)
        self._dv = np.ascontiguousarray(dv)
        self._gap = np.ascontiguousarray(gap)
        self._a_obs = np.ascontiguousarray(obs.a_obs)
        self._scale = len(obs) / (2.0 * noise_sigma ** 2)

    def in_support(self, theta) -> bool:
        theta = np.asarray(theta, dtype=np.float64)
        return bool(
            np.all(theta > 0.0)
            and np.all(theta >= self.prior_lo)
            and np.all(theta <= self.prior_hi)
        )

    def rmse(self, theta) -> float:
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if self.objective == "one-step":
            return float(_kernels.ACTIVE.rmse_one_step(
                theta, self._v, self._dv, self._gap, self._a_obs))
        return rollout_rmse_objective(self.obs, ParamSet.from_array(theta))

    def log_density(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        if not self.in_support(theta):
            return -math.inf
        rmse = self.rmse(theta)
        if not math.isfinite(rmse):
            return -math.inf
        return -self._scale * rmse * rmse


class GaussianTarget:
    """1-D Gaussian log-density adapter for sampler self-checks."""

    def __init__(self, mu: float, sigma: float):
        sigma = float(sigma)
        if not math.isfinite(sigma) or sigma <= 0.0:
            raise InputDomainError(f"sigma must be finite and > 0, got {sigma!r}")
        self.mu = float(mu)
        self.sigma = sigma
        self.dim = 1

    def log_density(self, theta) -> float:
        z = (float(np.asarray(theta).ravel()[0]) - self.mu) / self.sigma
        return -0.5 * z * z


def log_target(td, p) -> float:
    """Log target density at ``p`` (a ParamSet or parameter vector)."""
    return float(td.log_density(_theta_of(p)))


def propose(theta, sigma, rng: np.random.Generator) -> np.ndarray:
    """Random-walk proposal: theta plus independent Gaussian jitter.

    No positivity or box check happens here; out-of-support proposals are
    meant to be rejected by the acceptance step. Zero entries in ``sigma``
    leave the matching coordinate untouched.
    """
    theta = _theta_of(theta)
    sigma = np.asarray(sigma, dtype=np.float64)
    return theta + sigma * rng.standard_normal(theta.size)


def transition_log_density(theta_to, theta_from, sigma) -> float:
    """Log density of moving ``theta_from`` -> ``theta_to`` under the kernel.

    ``sigma`` is the per-coordinate scale array (or a ProposalConfig, whose
    raw ``sigma_prop`` is used). Symmetric in its first two arguments.
    """
    if isinstance(sigma, ProposalConfig):
        sigma = sigma.sigma_prop
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0.0):
        raise InputDomainError("kernel sigma entries must be > 0")
    z = (_theta_of(theta_to) - _theta_of(theta_from)) / sigma
    return float(np.sum(-0.5 * z * z - np.log(sigma * math.sqrt(2.0 * math.pi))))


class MHStep(NamedTuple):
    theta: np.ndarray
    log_target: float
    accepted: bool


def mh_step(theta_curr, target, sigma, rng: np.random.Generator,
            logp_curr: float | None = None) -> MHStep:
    """One Metropolis-Hastings step from ``theta_curr``.

    ``sigma`` is the effective proposal scale array (or a ProposalConfig).
    The kernel is symmetric, so the acceptance ratio reduces to the target
    ratio; a proposal with zero target density is always rejected. Pass
    ``logp_curr`` to skip re-evaluating the target at the current point.
    """
    if isinstance(sigma, ProposalConfig):
        sigma = sigma.effective_sigma
    theta_curr = _theta_of(theta_curr)
    if logp_curr is None:
        logp_curr = float(target.log_density(theta_curr))
    theta_prop = propose(theta_curr, sigma, rng)
    logp_prop = float(target.log_density(theta_prop))
    u = rng.random()
    if logp_prop > -math.inf and math.log(u) < logp_prop - logp_curr:
        return MHStep(theta_prop, logp_prop, True)
    return MHStep(theta_curr, logp_curr, False)


@dataclass(frozen=True)
class Chain:
    """Post-burn-in, thinned samples plus bookkeeping.

    ``iterations[i]`` is the 0-based chain iteration sample i was recorded
    at and ``accepted[i]`` whether that iteration's proposal was accepted.
    ``accept_count`` counts acceptances over the whole run including
    burn-in.
    """

    samples: np.ndarray
    log_targets: np.ndarray
    iterations: np.ndarray
    accepted: np.ndarray
    accept_count: int
    config: ProposalConfig
    param_names: tuple

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def acceptance_rate(self) -> float:
        return self.accept_count / self.config.n_iter

    def posterior_mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def param_set(self, i: int) -> ParamSet:
        if self.dim != len(PARAM_NAMES):
            raise InputDomainError("chain is not over driver parameters")
        return ParamSet.from_array(self.samples[i])

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write("iter," + ",".join(self.param_names) + ",log_target,accepted\n")
            for i in range(len(self)):
                fields = [str(int(self.iterations[i]))]
                fields += [repr(float(x)) for x in self.samples[i]]
                fields.append(repr(float(self.log_targets[i])))
                fields.append(str(int(self.accepted[i])))
                fh.write(",".join(fields) + "\n")


def run_chain(target, cfg: ProposalConfig, theta_init) -> Chain:
    """Run the chain and record post-burn-in, thinned samples.

    ``target`` needs a ``log_density(theta) -> float`` method. The initial
    point must have non-zero target density. With ``cfg.pin_delta`` set
    the exponent coordinate is forced to the pinned value and never moves.
    """
    theta = _theta_of(theta_init).copy()
    if theta.size != cfg.sigma_prop.size:
        raise InputDomainError(
            f"init point has dim {theta.size}, proposal config has {cfg.sigma_prop.size}"
        )
    if cfg.pin_delta is not None:
        theta[PARAM_NAMES.index("delta")] = cfg.pin_delta
    logp = float(target.log_density(theta))
    if logp == -math.inf:
        raise InputDomainError("initial point has zero target density")

    rng = np.random.default_rng(cfg.seed)
    sigma = cfg.effective_sigma
    dim = theta.size
    n_kept = cfg.n_kept
    samples = np.empty((n_kept, dim))
    log_targets = np.empty(n_kept)
    iterations = np.empty(n_kept, dtype=np.int64)
    accepted = np.empty(n_kept, dtype=bool)
    accept_count = 0
    j = 0
    for i in range(cfg.n_iter):
        step = mh_step(theta, target, sigma, rng, logp_curr=logp)
        theta = step.theta
        logp = step.log_target
        accept_count += step.accepted
        if i >= cfg.burn_in and (i - cfg.burn_in) % cfg.thin == 0:
            samples[j] = theta
            log_targets[j] = logp
            iterations[j] = i
            accepted[j] = step.accepted
            j += 1
    names = PARAM_NAMES if dim == len(PARAM_NAMES) else tuple(f"p{k}" for k in range(dim))
    return Chain(samples, log_targets, iterations, accepted,
                 accept_count, cfg, names)


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelation at lags 0..max_lag (lag 0 is 1.0)."""
    x = np.asarray(series, dtype=np.float64).ravel()
    max_lag = int(max_lag)
    if max_lag < 0:
        raise InputDomainError(f"max_lag must be >= 0, got {max_lag}")
    if x.size <= max_lag:
        raise InputDomainError(
            f"series length {x.size} must exceed max_lag {max_lag}"
        )
    y = x - x.mean()
    c0 = float(np.dot(y, y))
    if c0 == 0.0:
        raise DegenerateSeriesError("series is constant, autocorrelation undefined")
    acf = np.empty(max_lag + 1)
    acf[0] = 1.0
    for k in range(1, max_lag + 1):
        acf[k] = float(np.dot(y[:-k], y[k:])) / c0
    return acf


def posterior_histogram(chain: Chain, param_index: int, n_bins: int) -> Histogram:
    """Equal-width histogram of one chain coordinate over its sample range."""
    if len(chain) == 0:
        raise InputDomainError("chain has no samples")
    n_bins = int(n_bins)
    if n_bins < 1:
        raise InputDomainError(f"n_bins must be >= 1, got {n_bins}")
    x = chain.samples[:, param_index]
    lo = float(x.min())
    hi = float(x.max())
    if hi <= lo:
        # All samples identical: keep the support glued to the value.
        hi = lo + max(1e-9, abs(lo) * 1e-9)
    counts, edges = np.histogram(x, bins=n_bins, range=(lo, hi))
    return Histogram(edges[:-1], edges[1:], counts / x.size)


def pooled_histograms(chains, n_bins: int):
    """Per-coordinate histograms over the concatenated samples of ``chains``."""
    chains = list(chains)
    if not chains:
        raise InputDomainError("need at least one chain")
    names = chains[0].param_names
    for c in chains[1:]:
        if c.param_names != names:
            raise InputDomainError("chains have mismatched parameter names")
    merged = Chain(
        samples=np.concatenate([c.samples for c in chains], axis=0),
        log_targets=np.concatenate([c.log_targets for c in chains]),
        iterations=np.concatenate([c.iterations for c in chains]),
        accepted=np.concatenate([c.accepted for c in chains]),
        accept_count=sum(c.accept_count for c in chains),
        config=chains[0].config,
        param_names=names,
    )
    return {name: posterior_histogram(merged, i, n_bins)
            for i, name in enumerate(names)}


def synthetic_trajectory(params: ParamSet, rng, n_obs: int = 200,
                         dt: float = 0.1,
                         noise_sigma: float = DEFAULT_NOISE_SIGMA,
                         piece_duration: float = 20.0,
                         speed_range=(10.0, 30.0)) -> Trajectory:
    """Simulated follower data for calibration exercises.

    The leader holds a uniformly drawn speed for ``piece_duration``
    seconds at a time. The follower starts near the first leader speed
    with a gap drawn around its own preferred value, runs noise-free, and
    only the recorded acceleration column carries Gaussian noise, which
    matches the likelihood used by :class:`TargetDensity`.
    """
    if n_obs < 2 or dt <= 0:
        raise InputDomainError("need n_obs >= 2 and dt > 0")
    if noise_sigma < 0:
        raise InputDomainError(f"noise_sigma must be >= 0, got {noise_sigma}")
    n = int(n_obs)
    per_piece = max(int(round(piece_duration / dt)), 1)
    n_pieces = -(-n // per_piece)
    lo, hi = speed_range
    pieces = rng.uniform(lo, hi, n_pieces)
    lead = np.repeat(pieces, per_piece)[:n]
    v0 = max(float(lead[0] + rng.uniform(-5.0, 5.0)), 0.1)
    ref = desired_gap(params, v0, v0 - float(lead[0]))
    gap0 = max(float(ref * rng.uniform(0.9, 1.4)), 5.0)
    init = FollowingState(v=v0, delta_v=v0 - float(lead[0]), d_front=gap0)
    clean = rollout_follower(params, lead, init, dt, n)
    if clean.gap_collapsed:
        raise GenerationError(
            "synthetic rollout collapsed; widen the initial gap or soften the leader profile"
        )
    a_obs = clean.a_obs + rng.normal(0.0, noise_sigma, len(clean))
    return Trajectory(clean.dt, clean.t, clean.v_ego, clean.v_leader, clean.gap, a_obs)
