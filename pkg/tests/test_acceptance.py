"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the
lines are repeated in the terminal summary.
"""
import functools
import time

import numpy as np
import pytest
from scipy.special import softmax
from scipy.stats import spearmanr

from creinn.autodiff import finite_diff_check
from creinn.credal import (
    ProbabilityIntervals,
    average_intervals,
    batch_uncertainty,
    intersection_probability,
    lower_entropy,
    reachable,
    upper_entropy,
)
from creinn.data import (
    NOISE_PAIRS,
    load_idx,
    make_interval_noise,
    save_idx,
    split,
    standardize,
    synth_blobs,
    synth_ood,
    to_unit_box,
    with_label_noise,
)
from creinn.interval import IntervalTensor
from creinn.layers import ModelSpec, softmax_bounds
from creinn.metrics import ar_curve, auroc, ood_detect, relative_increase
from creinn.training import TrainConfig, batch_loss, fit, init_params, make_rng, predict

from oracles import (
    ReferenceMLP,
    glorot_draws,
    grid_entropy_extremes,
    pairwise_auroc,
    random_proper_system,
    reference_train,
    softmax_fixed_opponents,
)

SEEDS = range(5)
BLOBS_NET = [2, 16, 16, 3]


def trained(train, valid, seed, epochs=50):
    return fit(ModelSpec.mlp(BLOBS_NET, use_ibn=True), train, valid, TrainConfig(epochs=epochs, seed=seed))


def intervals_on(model, data):
    lo, hi, _ = predict(model, data)
    return ProbabilityIntervals(lo, hi)


# ---------------------------------------------------------------- 1


def random_interval_mlp(rng):
    depth = int(rng.integers(1, 4))
    sizes = [int(rng.integers(1, 17)) for _ in range(depth)] + [int(rng.integers(2, 17))]
    model = init_params(ModelSpec.mlp(sizes), seed=int(rng.integers(1 << 31)))
    for layer in model.layers:
        layer.bias.c.value = rng.normal(scale=0.5, size=layer.bias.center.shape)
        layer.weight.r.value = rng.uniform(0.0, 0.3, layer.weight.radius.shape)
        layer.bias.r.value = rng.uniform(0.0, 0.3, layer.bias.radius.shape)
    return model


def sampled_logits(model, xl, xu, n, rng):
    """Logits of ``n`` point networks drawn inside the model's intervals, at points inside the input box."""
    a = xl + (xu - xl) * rng.random((n, len(xl)))
    for i, layer in enumerate(model.layers):
        w, b = layer.weight, layer.bias
        ws = w.center + w.radius * rng.uniform(-1, 1, (n,) + w.center.shape)
        bs = b.center + b.radius * rng.uniform(-1, 1, (n,) + b.center.shape)
        a = np.einsum("kij,kj->ki", ws, a) + bs
        if i < len(model.layers) - 1:
            a = np.maximum(a, 0.0)
    return a


def test_set_constraint_enclosure(criterion):
    rng = np.random.default_rng(2024)
    slack = 1e-9
    start = time.perf_counter()
    violations = 0
    for _ in range(1000):
        model = random_interval_mlp(rng)
        xl = rng.normal(size=model.spec.input_dim)
        xu = xl + rng.uniform(0.0, 0.5, xl.shape)
        z = model.logits(IntervalTensor(xl, xu))
        ql, qu = softmax_bounds(z.lower, z.upper)
        zs = sampled_logits(model, xl, xu, 1000, rng)
        qs = softmax_fixed_opponents(zs, z.center)
        violations += int(np.sum(zs < z.lower - slack) + np.sum(zs > z.upper + slack))
        violations += int(np.sum(qs < ql - slack) + np.sum(qs > qu + slack))
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 120
    criterion(1, "set-constraint enclosure", ok, f"{violations} violations, {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------- 2


def test_interval_softmax_validity(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    done = 0
    while done < 100_000:
        c = int(rng.integers(2, 11))
        n = min(10_000, 100_000 - done)
        lo = rng.normal(scale=3.0, size=(n, c))
        hi = lo + rng.exponential(1.0, (n, c)) * (rng.random((n, c)) > 0.1)
        ql, qu = softmax_bounds(lo, hi)
        worst = max(worst, float(np.max(ql.sum(-1) - 1)), float(np.max(1 - qu.sum(-1))),
                    float(np.max(ql - qu)))
        done += n
    z = rng.normal(scale=5.0, size=(1000, 6))
    ql, qu = softmax_bounds(z, z)
    degenerate_err = float(max(np.abs(ql - softmax(z, axis=-1)).max(), np.abs(qu - softmax(z, axis=-1)).max()))
    lo, hi = np.array([0.0, -1.0, 1.0]), np.array([1.0, 0.0, 3.0])
    ql, qu = softmax_bounds(lo, hi)
    plain_inverted = bool(np.any(softmax(hi) < softmax(lo)))
    ours_valid = bool(np.all(ql <= qu) and ql.sum() <= 1 <= qu.sum())
    ok = worst <= 1e-12 and degenerate_err <= 1e-12 and plain_inverted and ours_valid
    criterion(2, "interval SoftMax validity", ok,
              f"worst violation {worst:.1e}, degenerate error {degenerate_err:.1e}, "
              f"worked input valid={ours_valid} while plain SoftMax inverts={plain_inverted}")
    assert ok


# ---------------------------------------------------------------- 3


def test_entropy_solvers_match_grid(criterion):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    worst, count = 0.0, 0
    for c, half_width in ((2, 0.5), (3, 0.4), (4, 0.1)):
        for _ in range(200):
            pi = reachable(ProbabilityIntervals(*random_proper_system(rng, c, half_width)))
            h_min, h_max = grid_entropy_extremes(pi.lower, pi.upper)
            worst = max(worst, abs(upper_entropy(pi) - h_max), abs(lower_entropy(pi) - h_min))
            count += 1
    example = ProbabilityIntervals(np.array([0.5, 0.1, 0.1]), np.array([0.8, 0.3, 0.3]))
    h_up, h_lo = upper_entropy(example), lower_entropy(example)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and abs(h_up - 1.5) <= 1e-6 and abs(h_lo - 0.9219) < 5e-5 and elapsed < 300
    criterion(3, "entropy solvers vs grid", ok,
              f"{count} systems, max error {worst:.1e}, worked case {h_up:.6f}/{h_lo:.5f}, {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------- 4


def randomize(model, rng):
    for layer in model.layers:
        layer.bias.c.value = rng.normal(scale=0.3, size=layer.bias.center.shape)
        layer.weight.r.value = rng.uniform(0.0, 0.2, layer.weight.radius.shape)
        layer.bias.r.value = rng.uniform(0.0, 0.2, layer.bias.radius.shape)
        if layer.ibn is not None:
            for p in layer.ibn.params():
                p.value = rng.uniform(0.5, 1.5, p.value.shape)


def test_full_loss_gradient(criterion):
    rng = np.random.default_rng(4)
    worst, skipped = 0.0, 0
    for use_ibn in (False, True):
        spec = ModelSpec.mlp(BLOBS_NET, use_ibn=use_ibn)
        checked = 0
        while checked < 20:
            model = init_params(spec, seed=int(rng.integers(1 << 31)))
            randomize(model, rng)
            x = rng.normal(size=(8, 2))
            y = rng.integers(0, 3, 8)

            def loss(*ps):
                with model.using(ps):
                    value, _ = batch_loss(model, x, x + 0.1, y, mode="train", update_stats=False)
                return value

            rep = finite_diff_check(loss, [p.value for p in model.params()])
            if rep.nondifferentiable:
                skipped += 1
                continue
            worst = max(worst, rep.max_rel_error)
            checked += 1
    ok = worst < 1e-4
    criterion(4, "full-loss gradient", ok,
              f"max relative error {worst:.1e} over 40 points, {skipped} tie points resampled")
    assert ok


# ---------------------------------------------------------------- 5


def test_zero_radius_matches_standard_mlp(criterion):
    seed, sizes = 0, BLOBS_NET
    train, valid = standardize(*split(synth_blobs(3, 240, 4.0, seed=seed), seed=seed))
    cfg = TrainConfig(epochs=50, seed=seed)
    model = init_params(ModelSpec.mlp(sizes), seed)
    model.freeze_radii(0.0)
    ws = glorot_draws(make_rng(seed), sizes)
    init_equal = all(np.array_equal(w, layer.weight.center) for w, layer in zip(ws, model.layers))

    inference_equal = []

    def compare(m, row):
        ref = ReferenceMLP([layer.weight.center for layer in m.layers])
        ref.bs = [layer.bias.center.copy() for layer in m.layers]
        p = ref.softmax(ref.forward(valid.inputs)[1][-1])
        lo, hi, q = predict(m, valid)
        inference_equal.append(bool(np.array_equal(lo, p) and np.array_equal(hi, p) and np.array_equal(q, p)))

    _, history = fit(model, train, valid, cfg, callback=compare)
    ref_losses, _ = reference_train(ws, train.inputs, train.labels, cfg.epochs, cfg.batch_size,
                                    cfg.learning_rate, shuffle_rng=make_rng(seed + 1))
    ours = np.array([h["train_loss"] for h in history])
    training_equal = np.array_equal(ours, ref_losses)
    gap = float(np.max(np.abs(ours - np.array(ref_losses))))
    ok = init_equal and all(inference_equal) and training_equal
    criterion(5, "zero-radius degeneracy", ok,
              f"init equal={init_equal}, inference bitwise equal in {sum(inference_equal)}/{len(inference_equal)} "
              f"epochs, training losses bitwise equal={training_equal} (max gap {gap:.1e})")
    assert init_equal and all(inference_equal)
    assert training_equal, f"training trajectories drift by {gap:.1e}"


# ---------------------------------------------------------------- 6


def test_desk_scale_training(criterion):
    train, valid = standardize(*split(synth_blobs(3, 240, 4.0, seed=0), seed=0))
    start = time.perf_counter()
    model, history = trained(train, valid, seed=0)
    elapsed = time.perf_counter() - start
    best = max(h["valid_acc"] for h in history)
    radii = np.concatenate([layer.weight.radius.ravel() for layer in model.layers])
    positive = float(np.mean(radii > 0))
    ok = len(train) == 600 and best >= 0.95 and elapsed < 60 and positive > 0.5
    criterion(6, "desk-scale training", ok,
              f"valid acc {best:.3f}, {elapsed:.1f} s, {positive:.0%} of weight radii positive")
    assert ok


# ---------------------------------------------------------------- 7


def test_rejection_improves_accuracy(criterion):
    rho = {m: [] for m in ("au", "eu", "tu")}
    for seed in SEEDS:
        noisy = with_label_noise(synth_blobs(3, 200, 2.0, seed=seed), 0.1, seed=seed)
        test = synth_blobs(3, 500, 2.0, seed=seed + 1000)
        train, valid = split(noisy, seed=seed)
        train, valid, test = standardize(train, valid, test)
        model, _ = trained(train, valid, seed)
        pi = intervals_on(model, test)
        correct = np.argmax(intersection_probability(pi).probs, axis=-1) == test.labels
        u = batch_uncertainty(pi)
        for m in rho:
            curve = ar_curve(u[m], correct)
            rho[m].append(spearmanr(curve.rejection_rate, curve.accuracy)[0])
    means = {m: float(np.mean(v)) for m, v in rho.items()}
    ok = all(v > 0.8 for v in means.values())
    criterion(7, "accuracy-rejection trend", ok,
              "Spearman " + ", ".join(f"{m.upper()} {v:.3f}" for m, v in means.items()))
    assert ok


# ---------------------------------------------------------------- 8 and 9


@functools.lru_cache(maxsize=None)
def ood_member(data_seed, model_seed):
    """Credal predictions of one blobs model on held-out ID and OOD inputs."""
    train, valid = split(synth_blobs(3, 240, 4.0, seed=data_seed), seed=data_seed)
    test = synth_blobs(3, 200, 4.0, seed=data_seed + 1000)
    ood = synth_ood(200, 10.0, seed=data_seed + 2000)
    train, valid, test, ood = standardize(train, valid, test, ood)
    model, _ = trained(train, valid, model_seed)
    return intervals_on(model, test), intervals_on(model, ood)


def eu_auroc(pi_id, pi_ood):
    return ood_detect(batch_uncertainty(pi_id)["eu"], batch_uncertainty(pi_ood)["eu"])[0]


def test_ood_separation(criterion):
    scores, oracle_gap = [], 0.0
    rng = np.random.default_rng(8)
    for seed in SEEDS:
        pi_id, pi_ood = ood_member(seed, seed)
        u_id, u_ood = batch_uncertainty(pi_id)["eu"], batch_uncertainty(pi_ood)["eu"]
        scores.append(ood_detect(u_id, u_ood)[0])
        a, b = rng.choice(u_id, 100, replace=False), rng.choice(u_ood, 100, replace=False)
        oracle_gap = max(oracle_gap, abs(auroc(a, b) - pairwise_auroc(a, b)))
    mean = float(np.mean(scores))
    ok = mean > 0.85 and mean - 0.5 >= 0.3 and oracle_gap == 0.0
    criterion(8, "OOD separation", ok,
              f"mean EU AUROC {mean:.3f} (per seed {np.round(scores, 3).tolist()}), "
              f"pairwise oracle gap {oracle_gap:.1e}")
    assert ok


def test_ensemble_properties(criterion):
    members = [ood_member(0, s) for s in SEEDS]
    ens_id = average_intervals([m[0] for m in members])
    ens_ood = average_intervals([m[1] for m in members])
    proper = bool(np.all(ens_id.is_proper()) and np.all(ens_ood.is_proper()))
    single = float(np.mean([eu_auroc(*m) for m in members]))
    ensemble = eu_auroc(ens_id, ens_ood)
    ok = proper and ensemble >= single
    criterion(9, "ensemble properties", ok,
              f"averaged intervals proper={proper}, ensemble EU AUROC {ensemble:.4f} vs member mean {single:.4f}")
    assert ok


# ---------------------------------------------------------------- 10


def test_interval_input_uncertainty_growth(criterion):
    u = {m: {pair: [] for pair in NOISE_PAIRS} for m in ("eu", "tu")}
    for seed in SEEDS:
        train, valid = split(synth_blobs(3, 200, 4.0, seed=seed), seed=seed)
        test = synth_blobs(3, 200, 4.0, seed=seed + 1000)
        train, valid, test = to_unit_box(train, valid, test)
        ref = make_interval_noise(train, *NOISE_PAIRS[0])
        itrain, ivalid = standardize(ref, ref, make_interval_noise(valid, *NOISE_PAIRS[0]))[1:]
        model, _ = trained(itrain, ivalid, seed)
        for pair in NOISE_PAIRS:
            (itest,) = standardize(ref, make_interval_noise(test, *pair))[1:]
            scores = batch_uncertainty(intervals_on(model, itest))
            for m in u:
                u[m][pair].append(scores[m])
    ratios = {m: relative_increase({p: np.array(v) for p, v in u[m].items()}, NOISE_PAIRS[0]).ratios
              for m in u}
    series = {m: [ratios[m][p] for p in NOISE_PAIRS] for m in u}
    ok = all(np.all(np.diff(s) >= 0) for s in series.values())
    criterion(10, "interval-input uncertainty growth", ok,
              "; ".join(f"{m.upper()} r " + " -> ".join(f"{r:.2f}" for r in s) for m, s in series.items()))
    assert ok


# ---------------------------------------------------------------- 11


def test_metric_worked_examples(criterion, tmp_path):
    curve = ar_curve([0.9, 0.1, 0.5], [0, 1, 1])
    ar_ok = curve.rejection_rate.tolist() == [0, 1 / 3, 2 / 3] and curve.accuracy.tolist() == [2 / 3, 1.0, 1.0]
    perfect = ood_detect([0.1, 0.2], [0.3, 0.4])
    roc_ok = perfect == (1.0, 1.0) and auroc([0.1, 0.4], [0.3, 0.5]) == 0.75 and auroc([0.5] * 4, [0.5] * 3) == 0.5
    rng = np.random.default_rng(11)
    images = rng.integers(0, 256, (10, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, 10).astype(np.uint8)
    save_idx(images, labels, tmp_path / "images.idx", tmp_path / "labels.idx")
    back = load_idx(tmp_path / "images.idx", tmp_path / "labels.idx")
    idx_ok = np.array_equal(np.round(back.inputs * 255).astype(np.uint8), images) and np.array_equal(back.labels, labels)
    ok = ar_ok and roc_ok and idx_ok
    criterion(11, "metric oracles", ok, f"ar_curve={ar_ok}, AUROC/AUPRC={roc_ok}, IDX round trip={idx_ok}")
    assert ok
