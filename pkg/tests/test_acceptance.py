"""Acceptance suite: one test per release criterion, each at its stated
tolerance.  The terminal summary prints one line per criterion (see
conftest.pytest_terminal_summary).

The two MNIST-bound criteria need the real IDX files (point --data-dir or
$BNN_MNIST_DIR at a directory holding train-images-idx3-ubyte & friends,
optionally gzipped); without them they report as skipped, never as green.
The remaining criteria are self-contained and always run.  Setting
BNN_FULL_TABLE1=1 switches criterion 1 from the CI smoke profile (256x256
hidden, 20 epochs, error < 5%) to the full-scale reference profile
(1000x1000x1000, 100 epochs, absolute error targets), which takes tens of
minutes per method on a desktop CPU.
"""

import os

import numpy as np
import pytest
from scipy.stats import spearmanr

from bnnkit import cli
from bnnkit.calibration import bin_accumulate, ece_mce, fit_temperature, scaled_probs
from bnnkit.data import SplitConfig, split, synth_blobs
from bnnkit.laplace import fisher_accumulate, la_fit, la_posterior
from bnnkit.mc_dropout import BIAS_SPIKYMIX, McdConfig, McdState, mcd_fit, mcd_loss_and_grad, mcd_mask
from bnnkit.mlp import Batch, Mlp, MlpSpec, init_params
from bnnkit.params import FlatParams, LayoutEntry, ParamLayout, PriorSpec, zero_prior
from bnnkit.predictive import PredictiveResult, error_rate
from bnnkit.sgd import SgdConfig, fit_sgd, map_weight_decay, train_map
from bnnkit.seeding import seed_streams
from bnnkit.sgld import moments_init, moments_update, sgld_step
from bnnkit.vi import LINKS, ViConfig, ViState, link_inverse, vi_fit, vi_kl, vi_loss_and_grads

from conftest import central_diff, grad_rel_err
from test_calibration import grid_argmin_temperature, oracle_bin, oracle_ece_mce, random_instance, synthetic_logits
from test_cli import final_lines

REFERENCE_TEST_ERRORS = {
    "vanilla": 2.52,
    "vi": 2.25,
    "mc_dropout": 2.47,
    "sgld": 2.74,
    "la": 2.41,
}


def mnist_available():
    try:
        cli.find_mnist(None)
        return True
    except FileNotFoundError:
        return False


def mnist_profile():
    if os.environ.get("BNN_FULL_TABLE1") == "1":
        return ["--hidden", "1000,1000,1000", "--epochs", "100"], True
    return ["--hidden", "256,256", "--epochs", "20"], False


def mnist_run(method, tmp_path, extra=()):
    profile, full = mnist_profile()
    argv = [
        "--method", method, "--dataset", "mnist", *profile,
        "--lr", "1e-2", "--momentum", "0.5", "--batch-size", "128",
        "--patience", "10", "--seed", "0",
        "--out-dir", str(tmp_path / method), *extra,
    ]
    assert cli.main(argv) == 0
    return full


@pytest.mark.parametrize("method", sorted(REFERENCE_TEST_ERRORS))
def test_criterion_01_mnist_table1(method, tmp_path, capsys):
    """MNIST test error per method: < 5% on the smoke profile; within
    +/- 1.0 absolute percentage points of the reference values on the full
    profile (BNN_FULL_TABLE1=1)."""
    if not mnist_available():
        pytest.skip("MNIST IDX files not found; set $BNN_MNIST_DIR or --data-dir")
    extra = []
    if method == "sgld":
        # burn-in 5 epochs at full scale; half the budget on the short smoke
        # profile so the moment fit averages post-convergence iterates
        burnin = "5" if os.environ.get("BNN_FULL_TABLE1") == "1" else "10"
        extra = ["--burnin", burnin, "--thin", "10"]
    full = mnist_run(method, tmp_path, extra)
    err = final_lines(capsys.readouterr().out)[0]["err"] * 100.0
    if full:
        assert abs(err - REFERENCE_TEST_ERRORS[method]) <= 1.0
    else:
        assert err < 5.0


def test_criterion_02_mcd_ece_trend(tmp_path, capsys):
    """Averaging posterior samples improves MC-dropout calibration:
    ECE at nst=5 is below ECE at nst=0 on the MNIST run."""
    if not mnist_available():
        pytest.skip("MNIST IDX files not found; set $BNN_MNIST_DIR or --data-dir")
    mnist_run("mc_dropout", tmp_path, ["--nst", "5"])
    finals = final_lines(capsys.readouterr().out)
    assert finals[5]["ece"] < finals[0]["ece"]


def test_criterion_03_gradient_oracles(tiny_spec, tiny_batch):
    """Backbone, VI (all three links, frozen noise), MC-dropout (frozen
    mask) and the MAP objective all match central finite differences at
    relative error < 1e-5 (denominator floored at the oracle's resolution)."""
    model = Mlp(tiny_spec)
    n = model.layout.total_len
    rng = np.random.default_rng(17)

    theta = rng.normal(scale=0.4, size=n)
    _, g = model.loss_and_grad(theta, tiny_batch)
    fd = central_diff(lambda v: model.loss_and_grad(v, tiny_batch)[0], theta)
    assert grad_rel_err(g, fd) < 1e-5

    prior = PriorSpec(rng.normal(scale=0.1, size=n), 0.9)
    for link in LINKS:
        m = rng.normal(scale=0.4, size=n)
        s_tilde = rng.uniform(0.3, 0.8, size=n) if link == "hinge" else rng.uniform(-2.0, -0.5, size=n)
        noise = rng.standard_normal(n)

        def vi_loss(vec, link=link, noise=noise):
            st = ViState(vec[:n], vec[n:], link)
            return vi_loss_and_grads(st, prior, tiny_batch, 50.0, 0.7, noise, model)[0]

        _, gm, gs = vi_loss_and_grads(
            ViState(m, s_tilde, link), prior, tiny_batch, 50.0, 0.7, noise, model
        )
        fd = central_diff(vi_loss, np.concatenate([m, s_tilde]))
        assert grad_rel_err(np.concatenate([gm, gs]), fd) < 1e-5, link

    m = rng.normal(scale=0.4, size=n)
    z = mcd_mask(n, 0.3, BIAS_SPIKYMIX, model.layout, rng)
    _, gmc = mcd_loss_and_grad(
        McdState(m), prior, tiny_batch, 40.0, 0.6, z, model, BIAS_SPIKYMIX, 0.3
    )
    fd = central_diff(
        lambda v: mcd_loss_and_grad(
            McdState(v), prior, tiny_batch, 40.0, 0.6, z, model, BIAS_SPIKYMIX, 0.3
        )[0],
        m,
    )
    assert grad_rel_err(gmc, fd) < 1e-5

    wd = map_weight_decay(prior, 30, 2.0)
    theta = rng.normal(scale=0.4, size=n)

    def map_objective(v):
        loss, _ = model.loss_and_grad(v, tiny_batch)
        return loss + 0.5 * wd * float(((v - prior.mean) ** 2).sum())

    _, g = model.loss_and_grad(theta, tiny_batch)
    g_map = g + wd * (theta - prior.mean)
    fd = central_diff(map_objective, theta)
    assert grad_rel_err(g_map, fd) < 1e-5


def test_criterion_04_kl_identity():
    """KL vanishes exactly at the prior (m = mean, s = sigma) and is
    non-negative on 1000 random states."""
    lay = ParamLayout((LayoutEntry("w", 0, 8, False),))
    rng = np.random.default_rng(0)
    prior = PriorSpec(rng.normal(size=8), 1.7)
    at_prior = ViState(prior.mean.copy(), np.full(8, link_inverse(1.7, "exp")), "exp")
    assert abs(vi_kl(at_prior, prior, lay)) <= 1e-12

    for _ in range(1000):
        prior_i = PriorSpec(rng.normal(size=8), float(rng.uniform(0.2, 2.5)))
        state = ViState(rng.normal(size=8), rng.normal(size=8), "softplus")
        assert vi_kl(state, prior_i, lay) >= 0.0


def _conjugate_chain(y, steps, burn, lr, seed):
    dim = y.shape[0]
    lay = ParamLayout((LayoutEntry("w", 0, dim, False),))
    prior = PriorSpec(np.zeros(dim), 1.0)
    rng = np.random.default_rng(seed)
    theta = np.zeros(dim)
    acc = moments_init(dim)
    for t in range(steps):
        theta = sgld_step(theta, prior, theta - y, 1.0, lr, 1.0, rng.standard_normal(dim), lay)
        if t >= burn:
            acc = moments_update(acc, theta)
    return acc


def test_criterion_05_sgld_conjugate():
    """1-D and 5-D Gaussian conjugate models: the fitted Gaussian matches
    the analytic posterior (mean y/2, variance 1/2) within 5%."""
    acc = _conjugate_chain(np.array([2.0]), 250_000, 5_000, 0.02, 2024)
    assert abs(acc.mean[0] - 1.0) <= 0.05
    assert abs(acc.variance()[0] - 0.5) <= 0.025

    y5 = np.array([2.0, -2.0, 3.0, 2.5, -3.0])
    acc5 = _conjugate_chain(y5, 450_000, 5_000, 0.03, 77)
    assert (np.abs(acc5.mean - y5 / 2) / np.abs(y5 / 2) <= 0.05).all()
    assert (np.abs(acc5.variance() - 0.5) / 0.5 <= 0.05).all()


def test_criterion_06_laplace_oracle():
    """Posterior variance agrees with an analytic per-example-gradient
    implementation to 1e-8 relative, and the diagonal Laplace density rank-
    correlates (> 0.8) with the brute-force grid posterior."""
    from test_laplace import BinaryLogistic, logistic_data

    ds = logistic_data(20)
    spec = MlpSpec(2, (), 2)
    model = Mlp(spec)
    prior = zero_prior(model.layout, 1.0)
    cfg = SgdConfig(lr=0.5, momentum=0.0, epochs=150, batch_size=20)
    post = la_fit(spec, ds, ds, cfg, prior, ninflate=1.0, damping=1e-4, seed=0)

    theta = post.theta_star
    w, b = theta[:4].reshape(2, 2), theta[4:]
    fisher = np.zeros(6)
    for x, yy in zip(ds.inputs, ds.labels):
        zlog = w @ x + b
        p = np.exp(zlog - zlog.max())
        p /= p.sum()
        dz = p.copy()
        dz[yy] -= 1.0
        gvec = np.concatenate([np.outer(dz, x).ravel(), dz])
        fisher += gvec * gvec
    expected_v = 1.0 / (1.0 / prior.sigma**2 + fisher + 1e-4)
    assert np.abs(post.v - expected_v).max() / expected_v.max() < 1e-8

    ds2 = logistic_data(20, seed=9)
    lmodel = BinaryLogistic()
    lprior = PriorSpec(np.zeros(2), 1.0)
    theta_star = train_map(
        lmodel, FlatParams(np.zeros(2), lmodel.layout), lprior, ds2, ds2,
        SgdConfig(lr=0.5, momentum=0.0, epochs=300, batch_size=20),
    )
    lpost = la_posterior(theta_star, fisher_accumulate(lmodel, theta_star, ds2), lprior, damping=0.0)
    lim = 2.5 * np.sqrt(lpost.v)
    grid0 = np.linspace(theta_star.values[0] - lim[0], theta_star.values[0] + lim[0], 50)
    grid1 = np.linspace(theta_star.values[1] - lim[1], theta_star.values[1] + lim[1], 50)
    batch = Batch(ds2.inputs, ds2.labels)
    la_logd, true_logd = [], []
    for a in grid0:
        for bb in grid1:
            wv = np.array([a, bb])
            la_logd.append(-0.5 * (((wv - theta_star.values) ** 2) / lpost.v).sum())
            true_logd.append(
                -lmodel.loss_and_grad(wv, batch)[0] * len(ds2) - 0.5 * (wv**2).sum()
            )
    assert spearmanr(la_logd, true_logd).statistic > 0.8


def test_criterion_07_calibration_oracle():
    """Binning and ECE/MCE agree exactly with a straight-from-definition
    enumeration on 100 random instances; the fitted temperature is within
    1e-2 of a dense grid search; scaling never changes the error rate."""
    rng = np.random.default_rng(2718)
    for _ in range(100):
        probs, labels, n, k, m = random_instance(rng)
        table = bin_accumulate(probs, labels, m)
        ob, oa, oc = oracle_bin(probs, labels, m)
        assert table.binsize.tolist() == ob
        assert table.acc_sum.tolist() == oa
        assert table.conf_sum.tolist() == oc
        assert ece_mce(table, n, k) == oracle_ece_mce(ob, oa, oc, n, k)

    for seed in range(5):
        logits, labels = synthetic_logits(seed + 40)
        assert abs(fit_temperature(logits, labels) - grid_argmin_temperature(logits, labels)) < 1e-2

    logits, labels = synthetic_logits(99)
    base = PredictiveResult(scaled_probs(logits, 1.0))
    for t in (0.08, 0.9, 4.2, 18.0):
        scaled = PredictiveResult(scaled_probs(logits, t))
        assert error_rate(scaled, labels) == error_rate(base, labels)


def test_criterion_08_reduction_identities():
    """MC-dropout with p=0, zero prior mean and a kld matched to the weight
    decay reproduces vanilla SGD bit-for-bit; the MAP stage with a huge
    prior scale reproduces vanilla wd=0 bit-for-bit."""
    full = synth_blobs(2, 256, 8, 0.25, 77)
    train, valid = split(full, SplitConfig(0.5, 77))
    spec = MlpSpec(8, (8,), 2)
    model = Mlp(spec)
    seed = 21
    streams = seed_streams(seed)
    theta0 = init_params(spec, streams.init_seed)

    wd = 2.0**-10
    mcfg = McdConfig(
        prior=zero_prior(model.layout, 1.0), p_drop=0.0, bias_opt=BIAS_SPIKYMIX,
        kld=wd * 256.0, lr=2.0**-7, momentum=0.5, epochs=5, batch_size=32, seed=seed,
    )
    state = mcd_fit(spec, train, valid, mcfg)
    theta_wd = fit_sgd(
        model, theta0, train, valid,
        SgdConfig(lr=2.0**-7, momentum=0.5, epochs=5, batch_size=32, wd=wd),
        shuffle_seed=streams.shuffle_seed,
    )
    assert (state.m == theta_wd.values).all()

    # sigma = 1e300 squares to inf, so the equivalent weight decay underflows to 0
    huge_prior = PriorSpec(np.zeros(model.layout.total_len), 1e300)
    theta_map = train_map(
        model, theta0, huge_prior, train, valid,
        SgdConfig(lr=1e-2, momentum=0.5, epochs=5, batch_size=32),
        shuffle_seed=streams.shuffle_seed,
    )
    theta_plain = fit_sgd(
        model, theta0, train, valid,
        SgdConfig(lr=1e-2, momentum=0.5, epochs=5, batch_size=32, wd=0.0),
        shuffle_seed=streams.shuffle_seed,
    )
    assert (theta_map.values == theta_plain.values).all()


def test_criterion_09_warm_start():
    """Pretraining on one half of a blob task and using the weights as the
    prior mean (and starting point) reaches lower validation NLL after
    three epochs than a zero-mean cold start, in at least 4 of 5 seeds."""
    full = synth_blobs(3, 240, 8, 0.3, 555)
    part_a, part_b = split(full, SplitConfig(0.5, 555))
    b_train, b_valid = split(part_b, SplitConfig(0.5, 556))
    spec = MlpSpec(8, (16,), 3)
    model = Mlp(spec)

    streams = seed_streams(900)
    theta_pre = fit_sgd(
        model, init_params(spec, streams.init_seed), part_a, part_a,
        SgdConfig(lr=1e-2, momentum=0.5, epochs=15, batch_size=32),
        shuffle_seed=streams.shuffle_seed,
    )

    wins = 0
    for seed in range(5):
        def nll_after_3_epochs(prior, warm):
            rows = []
            cfg = ViConfig(
                prior=prior, kld=1e-3, lr=1e-2, momentum=0.5,
                epochs=3, batch_size=32, seed=seed,
            )
            vi_fit(spec, b_train, b_valid, cfg, on_epoch=rows.append, init_at_prior_mean=warm)
            return rows[-1]["valid_loss"]

        warm_nll = nll_after_3_epochs(PriorSpec(theta_pre.values, 1.0), True)
        cold_nll = nll_after_3_epochs(zero_prior(model.layout, 1.0), False)
        wins += warm_nll < cold_nll
    assert wins >= 4


def test_criterion_10_end_to_end_determinism(tmp_path):
    """Two CLI runs with an identical configuration produce byte-identical
    metrics.csv files."""
    args = [
        "--method", "sgld", "--dataset", "blobs", "--hidden", "16",
        "--epochs", "6", "--burnin", "2", "--thin", "3", "--batch-size", "32",
        "--blobs-per-class", "120", "--blobs-dim", "8", "--seed", "11",
    ]
    assert cli.main([*args, "--out-dir", str(tmp_path / "a")]) == 0
    assert cli.main([*args, "--out-dir", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a == b
