"""Acceptance battery.

Every criterion prints exactly one PASS/FAIL/SKIP line (run with
`pytest tests/test_acceptance.py -v -s` to see them live).  Criteria that
need the real MNIST IDX files skip with an explanation when no local copy
is found; everything else runs on synthetic data.
"""

import os
import time

import numpy as np
import pytest

import oracles
from conftest import find_mnist
from robust_pll import _kernels as kern
from robust_pll import core, data, evaluate, nn
from robust_pll.subjective import (
    DirichletParams,
    MultinomialOpinion,
    dirichlet_mean,
    dirichlet_var,
    project,
)


def _line(num, label, status, detail=""):
    msg = f"ACCEPTANCE {num:02d} [{label}] {status}"
    if detail:
        msg += f" :: {detail}"
    print(msg)


def _finish(num, label, ok, detail=""):
    _line(num, label, "PASS" if ok else "FAIL", detail)
    assert ok, f"criterion {num} ({label}): {detail}"


def test_criterion_01_weight_update_matches_grid_oracle():
    rng = np.random.default_rng(101)
    t0 = time.monotonic()
    cases = 0
    max_dist = 0.0
    max_loss_gap = -np.inf
    while cases < 1000:
        k = int(rng.integers(3, 7))
        evidence = rng.uniform(0.0, 9.0, k)
        size = int(rng.integers(1, k + 1))
        cand = np.sort(rng.choice(k, size, replace=False))
        pbar = (evidence + 1.0) / (evidence + 1.0).sum()
        closed = core.update_weights_mse(pbar, cand)
        if np.any(closed < 0.0):  # unclamped form infeasible: excluded
            continue
        cases += 1
        argmin, grid_loss = oracles.simplex_grid_min(evidence, cand)
        closed_loss = core.squared_loss(evidence, closed).total
        max_loss_gap = max(max_loss_gap, closed_loss - grid_loss)
        max_dist = max(max_dist, float(np.max(np.abs(argmin - closed))))
    elapsed = time.monotonic() - t0
    ok = max_loss_gap <= 1e-6 and max_dist <= 2e-3 and elapsed < 60.0
    _finish(
        1,
        "weight-update-vs-grid-oracle",
        ok,
        f"1000 cases, max loss gap {max_loss_gap:.2e}, max argmin dist "
        f"{max_dist:.2e}, {elapsed:.1f}s",
    )


def test_criterion_02_opinion_projection_identity():
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(2, 9))
        evidence = rng.uniform(0.0, 15.0, k)
        cand = np.sort(rng.choice(k, int(rng.integers(1, k + 1)), replace=False))
        opinion = core.decompose_opinion(evidence, cand)
        alpha = evidence + 1.0
        update = core.update_weights_mse(alpha / alpha.sum(), cand)
        worst = max(worst, float(np.max(np.abs(project(opinion) - update))))
        worst = max(worst, abs(opinion.uncertainty + opinion.belief.sum() - 1.0))
    _finish(2, "opinion-decomposition-identity", worst <= 1e-12, f"max deviation {worst:.2e}")


def test_criterion_03_weight_drift_bounded(trained_2000):
    _, result = trained_2000
    # exact inequality up to float64 rounding noise
    excess = max(t.max_drift_excess for t in result.trace)
    violations = sum(t.max_drift_excess > 1e-12 for t in result.trace)
    ok = violations == 0 and len(result.trace) == 30
    _finish(
        3,
        "weight-drift-bounded-by-probability-drift",
        ok,
        f"30 epochs x 2000 instances, {violations} violations, max excess {excess:.2e}",
    )


def test_criterion_04_loss_crossover_and_monte_carlo():
    rng = np.random.default_rng(404)
    crossover_ok = True
    for _ in range(10_000):
        k = int(rng.integers(2, 7))
        evidence = rng.uniform(0.0, 10.0, k)
        weights = rng.dirichlet(np.ones(k))
        alpha = evidence + 1.0
        pbar = alpha / alpha.sum()
        err = (weights - pbar) ** 2
        var = pbar * (1.0 - pbar) / (1.0 + alpha.sum())
        if not np.array_equal(err < var, np.abs(weights - pbar) < np.sqrt(var)):
            crossover_ok = False
            break

    mc_rng = np.random.default_rng(1234)
    worst_z = 0.0
    for i in range(20):
        k = int(mc_rng.integers(3, 7))
        evidence = mc_rng.uniform(0.0, 8.0, k)
        weights = mc_rng.dirichlet(np.ones(k))
        closed = core.squared_loss(evidence, weights).total
        estimate, stderr = oracles.mc_expected_sq_error(
            weights, evidence + 1.0, 1_000_000, seed=5000 + i
        )
        worst_z = max(worst_z, abs(estimate - closed) / stderr)
    ok = crossover_ok and worst_z <= 3.0
    _finish(
        4,
        "crossover-and-monte-carlo-loss",
        ok,
        f"crossover on 10^4 draws {'ok' if crossover_ok else 'FAILED'}, "
        f"worst |z| {worst_z:.2f} over 20 pairs x 10^6 samples",
    )


def test_criterion_05_kl_closed_form_vs_quadrature():
    exact_zero = core.kl_regularizer(np.zeros(3), [0, 1, 2]) == 0.0
    rng = np.random.default_rng(505)
    worst = 0.0
    for i in range(20):
        k = 2 if i < 8 else 3
        evidence = rng.uniform(0.0, 7.0, k)
        cand = [int(rng.integers(0, k))]
        closed = core.kl_regularizer(evidence, cand)
        alpha_t = np.where(np.isin(np.arange(k), cand), 1.0, evidence + 1.0)
        quad = oracles.kl_numeric(alpha_t)
        worst = max(worst, abs(closed - quad))
    ok = exact_zero and worst <= 1e-5
    _finish(
        5,
        "kl-closed-form-vs-quadrature",
        ok,
        f"uniform case exact zero: {exact_zero}, max |closed - quad| {worst:.2e}",
    )


def test_criterion_06_risk_gradient_fidelity():
    seed, n, d, k = 0, 6, 10, 4
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.1, 1.0, (n, d))
    cand = rng.random((n, k)) < 0.5
    cand[np.arange(n), rng.integers(0, k, n)] = True
    ds = data.PartialDataset(X, cand)
    weights = core.init_label_weights(ds)
    anneal_coeff = 0.7
    model = nn.init_mlp([d, 8, 6, k], seed=seed)

    # the test setup must stay away from rectifier kinks for finite
    # differences to be meaningful
    _, cache = nn.forward_cached(model, X)
    assert min(np.abs(z).min() for z in cache[0]) > 1e-3

    out, cache = nn.forward_cached(model, X)
    _, _, g_fit = kern.sq_loss_value_grad(out, np.ascontiguousarray(weights.matrix))
    _, g_kl = kern.kl_value_grad(out, ds.candidates.astype(np.uint8))
    grads = nn.backward_from_cache(model, cache, (g_fit + anneal_coeff * g_kl) / n)
    analytic = np.concatenate(
        [g.ravel() for g in grads.weights] + [g.ravel() for g in grads.biases]
    )

    def risk_of(flat):
        probe = nn.init_mlp([d, 8, 6, k], seed=seed)
        nn.set_flat_params(probe, flat)
        return core.empirical_risk(probe, ds, weights, anneal_coeff).total

    numeric = oracles.finite_diff_grad(risk_of, nn.get_flat_params(model), step=1e-5)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    live = scale > 1e-7
    rel = np.abs(analytic - numeric)[live] / np.maximum(scale[live], 1e-6)
    dead_abs = np.abs(analytic - numeric)[~live].max() if (~live).any() else 0.0
    ok = rel.max() < 1e-4 and dead_abs < 1e-8
    _finish(
        6,
        "risk-gradient-finite-difference",
        ok,
        f"{live.sum()}/{analytic.size} live coords, max rel err {rel.max():.2e}, "
        f"dead-coord abs err {dead_abs:.2e}",
    )


def test_criterion_07_golden_examples():
    checks = []
    op1 = MultinomialOpinion(np.array([2 / 3, 1 / 6, 1 / 6]), np.full(3, 1 / 3), 0.0)
    op2 = MultinomialOpinion(np.array([0.5, 0.0, 0.0]), np.full(3, 1 / 3), 0.5)
    for op in (op1, op2):
        checks.append([round(v, 3) for v in project(op)] == [0.667, 0.167, 0.167])

    low = DirichletParams(np.array([5.0, 2.0, 2.0]))
    high = DirichletParams(np.array([8.0, 5.0, 5.0]))
    checks.append([round(v, 3) for v in dirichlet_mean(low)] == [0.556, 0.222, 0.222])
    checks.append([round(v, 3) for v in dirichlet_mean(high)] == [0.444, 0.278, 0.278])
    checks.append([round(v, 3) for v in dirichlet_var(low)] == [0.025, 0.017, 0.017])
    checks.append([round(v, 3) for v in dirichlet_var(high)] == [0.013, 0.011, 0.011])
    _finish(7, "golden-examples-to-3-decimals", all(checks), f"{sum(checks)}/6 values match")


def test_criterion_08_mnist_noise_statistics():
    paths = find_mnist()
    if paths is None:
        _line(
            8,
            "mnist-noise-statistics",
            "SKIP",
            "real MNIST IDX files not found (no dataset download route in "
            "this environment); place them under $ROBUST_PLL_DATA_DIR or "
            "./data to enable",
        )
        pytest.skip("MNIST data unavailable")
    t0 = time.monotonic()
    features, labels = data.read_idx(paths["train_images"], paths["train_labels"])
    noisy = data.generate_candidates(features, labels, data.NoiseConfig(seed=1))
    mean_s = float(noisy.candidates.sum(axis=1).mean())
    elapsed = time.monotonic() - t0
    ok = 5.6 <= mean_s <= 6.6 and elapsed < 900.0
    _finish(8, "mnist-noise-statistics", ok, f"mean |S| {mean_s:.3f}, {elapsed:.0f}s")


def test_criterion_09_desk_scale_accuracy(desk):
    acc_robust = evaluate.accuracy(desk.robust.model, desk.test_features, desk.test_labels)
    acc_proden = evaluate.accuracy(desk.proden.model, desk.test_features, desk.test_labels)
    ok = acc_robust > acc_proden - 0.02 and acc_robust > 0.70
    _finish(
        9,
        "desk-scale-accuracy",
        ok,
        f"evidential {100 * acc_robust:.1f}% vs baseline {100 * acc_proden:.1f}% "
        f"(synthetic surrogate, avg |S| "
        f"{desk.noisy.candidates.sum(axis=1).mean():.2f})",
    )


@pytest.mark.skipif(
    os.environ.get("RUN_FULL_SCALE") != "1",
    reason="full-scale MNIST run is off by default (set RUN_FULL_SCALE=1)",
)
def test_criterion_09_full_scale_accuracy():
    paths = find_mnist()
    if paths is None:
        _line(9, "full-scale-accuracy", "SKIP", "RUN_FULL_SCALE=1 but MNIST files not found")
        pytest.skip("MNIST data unavailable")
    features, labels = data.read_idx(paths["train_images"], paths["train_labels"])
    noisy = data.generate_candidates(features, labels, data.NoiseConfig(seed=1))
    result = core.train(noisy, core.TrainConfig(epochs=200, batch_size=256, seed=1))
    test_x, test_y = data.read_idx(paths["test_images"], paths["test_labels"])
    acc = evaluate.accuracy(result.model, test_x, test_y)
    ok = abs(acc - 0.960) <= 0.025
    _finish(9, "full-scale-accuracy", ok, f"test accuracy {100 * acc:.1f}%")


def test_criterion_10_ood_direction(desk):
    ent_test = evaluate.entropy_samples(desk.robust.model, desk.test_features)
    ent_ood = evaluate.entropy_samples(desk.robust.model, desk.ood_features)
    report = evaluate.ood_report(ent_test, ent_ood, seed=0)
    ok = report.cdf_area >= 0.1 and report.ks_stat > 0.0 and report.mmd > 0.0
    _finish(
        10,
        "ood-entropy-direction",
        ok,
        f"cdf_area {report.cdf_area:.4f}, ks {report.ks_stat:.4f}, mmd {report.mmd:.4f} "
        "(permuted-pixel OOD stand-in)",
    )


def test_criterion_11_adversarial_retention(desk):
    X, y = desk.test_features, desk.test_labels
    clean_r = evaluate.accuracy(desk.robust.model, X, y)
    clean_p = evaluate.accuracy(desk.proden.model, X, y)

    adv_r = evaluate.pgd_attack(desk.robust.model, X, y, evaluate.AttackConfig(epsilon=0.1))
    ball_violations = int((np.abs(adv_r - X) > 0.1).sum())
    box_violations = int(((adv_r < 0.0) | (adv_r > 1.0)).sum())
    acc_r = evaluate.accuracy(desk.robust.model, adv_r, y)

    adv_p = evaluate.pgd_attack(desk.proden.model, X, y, evaluate.AttackConfig(epsilon=0.1))
    acc_p = evaluate.accuracy(desk.proden.model, adv_p, y)

    retention_r = acc_r / clean_r
    retention_p = acc_p / clean_p

    sweep = evaluate.attack_sweep(desk.robust.model, X, y, [0.0, 0.1, 0.2, 0.3, 0.4])
    accs = [acc for _, acc in sweep]
    weakly_decreasing = all(b <= a + 0.02 for a, b in zip(accs, accs[1:]))

    ok = (
        retention_r > retention_p
        and ball_violations == 0
        and box_violations == 0
        and weakly_decreasing
    )
    _finish(
        11,
        "adversarial-retention-and-constraints",
        ok,
        f"retention {100 * retention_r:.1f}% vs {100 * retention_p:.1f}% at eps=0.1, "
        f"{ball_violations} ball / {box_violations} box violations, "
        f"sweep {['%.3f' % a for a in accs]}",
    )


def test_criterion_12_metric_properties():
    checks = []
    low, high = np.array([0.0, 0.0]), np.array([1.0, 1.0])
    checks.append(evaluate.cdf_area(low, high) == 1.0)
    checks.append(evaluate.cdf_area(high, low) == -1.0)
    checks.append(evaluate.ks_statistic(low, high) == 1.0)
    checks.append(evaluate.ks_statistic(high, low) == -1.0)
    checks.append(evaluate.mmd_rbf(np.zeros(3), np.ones(3)) > 0.0)
    checks.append(evaluate.mmd_rbf(np.ones(3), np.zeros(3)) < 0.0)

    rng = np.random.default_rng(1212)
    a, b = rng.random(60), rng.random(45) * 0.7 + 0.3
    for metric in (evaluate.cdf_area, evaluate.ks_statistic, evaluate.mmd_rbf):
        checks.append(abs(metric(a, b) + metric(b, a)) <= 1e-12)
        checks.append(metric(a, a.copy()) == 0.0)

    checks.append(evaluate.normalized_entropy(np.array([1.0, 0.0, 0.0])) == 0.0)
    checks.append(evaluate.normalized_entropy(np.array([0.5, 0.5])) == 1.0)
    checks.append(evaluate.normalized_entropy(np.full(4, 0.25)) == 1.0)
    _finish(12, "metric-properties", all(checks), f"{sum(checks)}/{len(checks)} checks")
