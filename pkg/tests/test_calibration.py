"""Sampler machinery: targets, proposals, chains, diagnostics."""

import math

import numpy as np
import pytest

from conftest import THETA_STAR
from microtraffic import (DegenerateSeriesError, FollowingState,
                          GaussianTarget, GenerationError, InputDomainError,
                          ParamSet, ProposalConfig, TargetDensity, Trajectory,
                          autocorrelation, default_proposal_sigma, log_target,
                          mh_step, pooled_histograms, posterior_histogram,
                          propose, rmse_objective, rollout_follower,
                          run_chain, synthetic_trajectory,
                          transition_log_density)
from microtraffic.calibration import (DEFAULT_PRIOR_HI, DEFAULT_PRIOR_LO,
                                      Chain)


class FlatTarget:
    """Log density zero everywhere: every proposal is accepted."""

    dim = 1

    def log_density(self, theta):
        return 0.0


class HalfTarget:
    """Constant log density log(0.5), for exercising the accept ratio."""

    dim = 1

    def log_density(self, theta):
        return math.log(0.5)


class ShiftedTarget:
    def __init__(self, base, offset):
        self.base = base
        self.offset = offset
        self.dim = base.dim

    def log_density(self, theta):
        return self.base.log_density(theta) + self.offset


def short_trajectory(theta=THETA_STAR):
    init = FollowingState(v=20.0, delta_v=0.0, d_front=40.0)
    return rollout_follower(theta, np.repeat([24.0, 16.0], 30), init, 0.1, 60)


def test_default_proposal_sigma_is_two_percent_of_box():
    sigma = default_proposal_sigma()
    assert np.array_equal(sigma, 0.02 * (DEFAULT_PRIOR_HI - DEFAULT_PRIOR_LO))
    assert sigma == pytest.approx([0.12, 0.16, 1.2, 2.0, 0.1, 0.2])


def test_proposal_config_defaults_and_kept_count():
    cfg = ProposalConfig(np.ones(6), 1000)
    assert cfg.burn_in == 200
    assert cfg.thin == 1
    assert cfg.n_kept == 800

    cfg = ProposalConfig(np.ones(2), 10, burn_in=4, thin=2)
    assert cfg.n_kept == 3


def test_proposal_config_validation():
    with pytest.raises(InputDomainError):
        ProposalConfig(np.array([1.0, 0.0]), 10)
    with pytest.raises(InputDomainError):
        ProposalConfig(np.ones(3), 0)
    with pytest.raises(InputDomainError):
        ProposalConfig(np.ones(3), 10, burn_in=10)
    with pytest.raises(InputDomainError):
        ProposalConfig(np.ones(3), 10, thin=0)
    with pytest.raises(InputDomainError):
        ProposalConfig(np.ones(3), 10, pin_delta=4.0)
    with pytest.raises(InputDomainError):
        ProposalConfig(np.ones(6), 10, pin_delta=-1.0)


def test_effective_sigma_zeroes_pinned_exponent():
    cfg = ProposalConfig(np.ones(6), 10, pin_delta=4.0)
    assert np.array_equal(cfg.effective_sigma, [1, 1, 1, 1, 1, 0])
    assert np.array_equal(cfg.sigma_prop, np.ones(6))


def test_target_density_zero_at_exact_parameters():
    td = TargetDensity(short_trajectory())
    assert td.log_density(THETA_STAR.to_array()) == 0.0
    assert log_target(td, THETA_STAR) == 0.0


def test_target_density_matches_rmse_formula():
    tr = short_trajectory()
    td = TargetDensity(tr, noise_sigma=0.4)
    candidate = ParamSet(2.0, 4.0, 30.0, 12.0, 1.5, 4.0)
    rmse = rmse_objective(tr, candidate)
    want = -len(tr) * rmse ** 2 / (2.0 * 0.4 ** 2)
    assert td.log_density(candidate.to_array()) == pytest.approx(want, rel=1e-12)


def test_target_density_support_boundaries():
    td = TargetDensity(short_trajectory())
    inside = THETA_STAR.to_array()
    assert td.in_support(inside)
    assert td.log_density(np.array([3, 5, 61, 10, 2, 4.0])) == -math.inf
    assert td.log_density(np.array([0.0, 5, 35, 10, 2, 4.0])) == -math.inf
    assert td.log_density(np.array([-1, 5, 35, 10, 2, 4.0])) == -math.inf


def test_target_density_rollout_objective_rejects_collapse():
    # Leader brakes to a stop; a near-zero-headway candidate rams it during
    # the re-rollout, which the rollout objective maps to zero density.
    lead = np.concatenate([np.full(30, 25.0), np.zeros(30)])
    init = FollowingState(v=25.0, delta_v=0.0, d_front=60.0)
    tr = rollout_follower(THETA_STAR, lead, init, 0.1, 60)
    td = TargetDensity(tr, objective="rollout")
    assert td.log_density(THETA_STAR.to_array()) == 0.0
    reckless = np.array([6.0, 8.0, 60.0, 1e-3, 1e-3, 4.0])
    assert td.log_density(reckless) == -math.inf


def test_target_density_validation():
    tr = short_trajectory()
    empty = Trajectory(0.1, np.array([]), np.array([]), np.array([]),
                       np.array([]), np.array([]))
    with pytest.raises(InputDomainError):
        TargetDensity(empty)
    with pytest.raises(InputDomainError):
        TargetDensity(tr, noise_sigma=0.0)
    with pytest.raises(InputDomainError):
        TargetDensity(tr, prior_lo=np.zeros(3))
    with pytest.raises(InputDomainError):
        TargetDensity(tr, prior_lo=np.ones(6), prior_hi=np.ones(6))
    with pytest.raises(InputDomainError):
        TargetDensity(tr, objective="two-step")


def test_gaussian_target_moments_of_log_density():
    g = GaussianTarget(2.0, 0.5)
    assert g.log_density(np.array([2.0])) == 0.0
    assert g.log_density(np.array([2.5])) == -0.5
    with pytest.raises(InputDomainError):
        GaussianTarget(0.0, 0.0)


def test_propose_zero_sigma_leaves_coordinate():
    rng = np.random.default_rng(3)
    theta = np.array([1.0, 2.0, 3.0])
    out = propose(theta, np.array([0.5, 0.0, 0.5]), rng)
    assert out[1] == 2.0
    assert out[0] != 1.0 and out[2] != 3.0


def test_propose_is_seed_deterministic():
    theta = np.array([1.0, 2.0])
    sigma = np.array([0.3, 0.7])
    a = propose(theta, sigma, np.random.default_rng(9))
    b = propose(theta, sigma, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_propose_moments():
    rng = np.random.default_rng(42)
    n = 20_000
    draws = np.array([propose([5.0], [2.0], rng)[0] for _ in range(n)])
    assert abs(draws.mean() - 5.0) < 3.0 * 2.0 / math.sqrt(n)
    assert abs(draws.std() - 2.0) < 0.05


def test_transition_log_density_unit_gaussian_values():
    at_zero = transition_log_density([0.0], [0.0], [1.0])
    assert at_zero == -0.5 * math.log(2.0 * math.pi)
    assert at_zero == pytest.approx(-0.9189385332046727, abs=1e-15)
    one_off = transition_log_density([1.0], [0.0], [1.0])
    assert one_off == pytest.approx(-1.4189385332046727, abs=1e-15)


def test_transition_log_density_sums_over_coordinates():
    sigma = np.array([0.5, 2.0])
    got = transition_log_density([1.0, 3.0], [0.5, 1.0], sigma)
    want = sum(-0.5 * ((d / s) ** 2) - math.log(s * math.sqrt(2 * math.pi))
               for d, s in zip([0.5, 2.0], sigma))
    assert got == pytest.approx(want, rel=1e-12)


def test_transition_log_density_symmetry():
    rng = np.random.default_rng(1)
    sigma = np.array([0.3, 1.1, 2.0])
    for _ in range(20):
        a = rng.uniform(-5, 5, 3)
        b = rng.uniform(-5, 5, 3)
        assert transition_log_density(a, b, sigma) == pytest.approx(
            transition_log_density(b, a, sigma), rel=1e-12)


def test_transition_log_density_accepts_config_and_rejects_zero_sigma():
    cfg = ProposalConfig(np.ones(6), 10, pin_delta=4.0)
    via_cfg = transition_log_density(np.zeros(6), np.zeros(6), cfg)
    via_arr = transition_log_density(np.zeros(6), np.zeros(6), np.ones(6))
    assert via_cfg == via_arr
    with pytest.raises(InputDomainError):
        transition_log_density([0.0], [0.0], [0.0])


def test_mh_step_flat_target_always_accepts():
    rng = np.random.default_rng(0)
    theta = np.array([0.0])
    for _ in range(200):
        step = mh_step(theta, FlatTarget(), np.array([1.0]), rng)
        assert step.accepted
        assert step.log_target == 0.0
        theta = step.theta


def test_mh_step_acceptance_frequency_matches_target_ratio():
    # With logp_curr pinned at 0 and the target constant at log(0.5) the
    # acceptance probability is exactly 0.5 per step.
    rng = np.random.default_rng(123)
    target = HalfTarget()
    theta = np.array([0.0])
    sigma = np.array([1.0])
    n = 20_000
    accepted = sum(mh_step(theta, target, sigma, rng, logp_curr=0.0).accepted
                   for _ in range(n))
    assert abs(accepted / n - 0.5) < 0.011


def test_mh_step_rejects_zero_density_proposal():
    class OnlyOrigin:
        dim = 1

        def log_density(self, theta):
            return 0.0 if float(np.asarray(theta)[0]) == 0.0 else -math.inf

    rng = np.random.default_rng(5)
    theta = np.array([0.0])
    for _ in range(50):
        step = mh_step(theta, OnlyOrigin(), np.array([1.0]), rng)
        assert not step.accepted
        assert np.array_equal(step.theta, theta)
        assert step.log_target == 0.0


def test_mh_step_uses_provided_current_log_density():
    class Counting(FlatTarget):
        calls = 0

        def log_density(self, theta):
            type(self).calls += 1
            return 0.0

    target = Counting()
    mh_step(np.array([0.0]), target, np.array([1.0]),
            np.random.default_rng(0), logp_curr=0.0)
    assert Counting.calls == 1


def test_run_chain_log_shift_invariance():
    base = GaussianTarget(2.0, 0.5)
    cfg = ProposalConfig(np.array([1.2]), 2000, seed=31)
    plain = run_chain(base, cfg, np.array([2.0]))
    shifted = run_chain(ShiftedTarget(base, 7.3), cfg, np.array([2.0]))
    assert np.array_equal(plain.samples, shifted.samples)
    assert plain.accept_count == shifted.accept_count
    assert np.max(np.abs(shifted.log_targets - plain.log_targets - 7.3)) < 1e-12


def test_run_chain_is_seed_reproducible():
    cfg = ProposalConfig(np.array([1.2]), 500, seed=8)
    a = run_chain(GaussianTarget(0.0, 1.0), cfg, np.array([0.0]))
    b = run_chain(GaussianTarget(0.0, 1.0), cfg, np.array([0.0]))
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.iterations, b.iterations)
    assert a.accept_count == b.accept_count


def test_run_chain_bookkeeping():
    cfg = ProposalConfig(np.array([1.0]), 10, burn_in=4, thin=2, seed=1)
    chain = run_chain(FlatTarget(), cfg, np.array([0.0]))
    assert len(chain) == 3
    assert chain.iterations.tolist() == [4, 6, 8]
    assert chain.param_names == ("p0",)
    assert chain.accept_count == 10
    assert chain.acceptance_rate == 1.0
    assert np.all(chain.accepted)


def test_run_chain_single_iteration():
    cfg = ProposalConfig(np.array([1.0]), 1, burn_in=0, seed=0)
    chain = run_chain(GaussianTarget(0.0, 1.0), cfg, np.array([0.0]))
    assert len(chain) == 1
    assert chain.dim == 1


def test_run_chain_samples_stay_in_support():
    tr = short_trajectory()
    td = TargetDensity(tr, noise_sigma=1.0)
    cfg = ProposalConfig(default_proposal_sigma(), 400, seed=3)
    chain = run_chain(td, cfg, THETA_STAR.to_array())
    assert chain.param_names == ("a_max", "a_comf", "v_des", "d_min", "T", "delta")
    assert np.all(chain.samples > 0.0)
    assert np.all(chain.samples <= DEFAULT_PRIOR_HI)


def test_run_chain_pins_exponent():
    tr = short_trajectory()
    td = TargetDensity(tr, noise_sigma=1.0)
    cfg = ProposalConfig(default_proposal_sigma(), 300, seed=3, pin_delta=4.0)
    init = np.array([3.0, 5.0, 35.0, 10.0, 2.0, 9.0])
    chain = run_chain(td, cfg, init)
    assert np.all(chain.samples[:, 5] == 4.0)
    assert chain.samples[:, 0].std() > 0.0


def test_run_chain_rejects_bad_init():
    cfg = ProposalConfig(np.ones(6), 10)
    td = TargetDensity(short_trajectory())
    with pytest.raises(InputDomainError):
        run_chain(td, cfg, np.array([-1.0, 5, 35, 10, 2, 4]))
    with pytest.raises(InputDomainError):
        run_chain(td, ProposalConfig(np.ones(2), 10), THETA_STAR.to_array())


def test_chain_csv_layout(tmp_path):
    cfg = ProposalConfig(np.array([1.0]), 6, burn_in=2, seed=0)
    chain = run_chain(GaussianTarget(0.0, 1.0), cfg, np.array([0.0]))
    path = tmp_path / "chain.csv"
    chain.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,p0,log_target,accepted"
    assert len(lines) == 1 + len(chain)
    first = lines[1].split(",")
    assert first[0] == str(chain.iterations[0])
    assert first[3] in ("0", "1")


def test_autocorrelation_lag_zero_and_alternating():
    x = np.array([1.0, -1.0] * 5)
    acf = autocorrelation(x, 2)
    assert acf[0] == 1.0
    assert acf[1] == pytest.approx(-(len(x) - 1) / len(x), abs=1e-12)


def test_autocorrelation_white_noise_is_small():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(4000)
    acf = autocorrelation(x, 50)
    assert np.max(np.abs(acf[1:])) < 4.0 / math.sqrt(x.size)


def test_autocorrelation_errors():
    with pytest.raises(DegenerateSeriesError):
        autocorrelation(np.ones(10), 3)
    with pytest.raises(InputDomainError):
        autocorrelation(np.arange(5.0), 5)
    with pytest.raises(InputDomainError):
        autocorrelation(np.arange(5.0), -1)


def _chain_with_samples(samples):
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    return Chain(
        samples=samples,
        log_targets=np.zeros(n),
        iterations=np.arange(n, dtype=np.int64),
        accepted=np.ones(n, dtype=bool),
        accept_count=n,
        config=ProposalConfig(np.ones(samples.shape[1]), n),
        param_names=tuple(f"p{k}" for k in range(samples.shape[1])),
    )


def test_posterior_histogram_masses():
    chain = _chain_with_samples([[1.0], [1.0], [2.0], [2.0], [2.0], [2.0]])
    hist = posterior_histogram(chain, 0, 2)
    assert hist.mass == pytest.approx([1 / 3, 2 / 3], abs=1e-12)
    assert hist.support == (1.0, 2.0)


def test_posterior_histogram_degenerate_samples():
    chain = _chain_with_samples([[3.0]] * 4)
    hist = posterior_histogram(chain, 0, 1)
    assert hist.mass == pytest.approx([1.0])
    lo, hi = hist.support
    assert lo == 3.0 and 0.0 < hi - lo < 1e-6


def test_posterior_histogram_validation():
    chain = _chain_with_samples([[1.0], [2.0]])
    with pytest.raises(InputDomainError):
        posterior_histogram(chain, 0, 0)


def test_pooled_histograms_concatenate():
    a = _chain_with_samples([[1.0], [1.0]])
    b = _chain_with_samples([[2.0], [2.0], [2.0], [2.0]])
    pooled = pooled_histograms([a, b], 2)
    assert set(pooled) == {"p0"}
    assert pooled["p0"].mass == pytest.approx([1 / 3, 2 / 3], abs=1e-12)

    with pytest.raises(InputDomainError):
        pooled_histograms([], 2)
    mismatched = _chain_with_samples([[1.0, 1.0]])
    with pytest.raises(InputDomainError):
        pooled_histograms([a, mismatched], 2)


def test_synthetic_trajectory_shape_and_determinism():
    tr = synthetic_trajectory(THETA_STAR, np.random.default_rng(7), n_obs=150)
    again = synthetic_trajectory(THETA_STAR, np.random.default_rng(7), n_obs=150)
    assert len(tr) == 150
    assert tr.dt == 0.1
    assert np.array_equal(tr.a_obs, again.a_obs)
    assert np.array_equal(tr.v_leader, again.v_leader)


def test_synthetic_trajectory_noise_free_fits_exactly():
    tr = synthetic_trajectory(THETA_STAR, np.random.default_rng(77),
                              n_obs=200, noise_sigma=0.0)
    assert rmse_objective(tr, THETA_STAR) == 0.0


def test_synthetic_trajectory_noise_level_shows_in_rmse():
    tr = synthetic_trajectory(THETA_STAR, np.random.default_rng(77),
                              n_obs=200, noise_sigma=0.3)
    assert 0.2 < rmse_objective(tr, THETA_STAR) < 0.4


def test_synthetic_trajectory_piecewise_leader():
    tr = synthetic_trajectory(THETA_STAR, np.random.default_rng(1),
                              n_obs=400, dt=0.1, piece_duration=10.0)
    assert len(np.unique(tr.v_leader)) == 4


def test_synthetic_trajectory_validation_and_collapse():
    rng = np.random.default_rng(0)
    with pytest.raises(InputDomainError):
        synthetic_trajectory(THETA_STAR, rng, n_obs=1)
    with pytest.raises(InputDomainError):
        synthetic_trajectory(THETA_STAR, rng, noise_sigma=-0.1)

    weak = ParamSet(a_max=0.01, a_comf=0.01, v_des=60.0, d_min=1.0,
                    T=0.01, delta=4.0)
    with pytest.raises(GenerationError):
        synthetic_trajectory(weak, np.random.default_rng(4), n_obs=30,
                             dt=1.0, piece_duration=2.0,
                             speed_range=(0.1, 30.0))
