"""Top-level acceptance gate.

Ten numbered criteria, one test each, every test ending in a single
``criterion NN PASS`` line (a failed assertion leaves the criterion
marked FAILED by the runner instead). Tolerances are pinned in the
assertions themselves.
"""

import time

import numpy as np

from birddetect.audio import AudioClip
from birddetect.augment import (
    LabeledSample,
    adapt_test_mixing,
    augment_blocks,
    blocks_mix,
)
from birddetect.cache import read_feature_cache_entry, write_feature_cache
from birddetect.features import FeatureConfig, FeaturePair, extract_features
from birddetect.layers import (
    BatchNorm,
    BiGru,
    Conv2d,
    MaxoutSigmoidHead,
    MaxPool2d,
    Merge,
    TimeDense,
)
from birddetect.manifest import Manifest, ManifestEntry
from birddetect.metrics import SplitSpec, roc_auc, stratified_splits
from birddetect.model import (
    CbrnnConfig,
    CbrnnModel,
    load_checkpoint,
    save_checkpoint,
)
from birddetect.train import TrainConfig, score_samples, train

from conftest import make_pair, make_sample, tone

SR = 44100

SMALL = CbrnnConfig(
    time_steps=20,
    mbe_bands=10,
    domfreq_slots=3,
    n_filters=4,
    pool_time=(2, 2),
    pool_freq_mbe=(5, 2),
    pool_freq_domfreq=(3, 1),
    rnn_units=3,
    fc_units=4,
    dropout=0.0,
)


def _pass(num: int, detail: str) -> None:
    print(f"criterion {num:02d} PASS: {detail}")


def _fd_check(loss, arrays, tol, max_coords=48, h=1e-5):
    """Central finite differences on sampled coordinates; returns the
    worst relative error seen."""
    pick = np.random.default_rng(1000)
    worst = 0.0
    for name, (arr, analytic) in arrays.items():
        flat = arr.reshape(-1)
        grad = np.asarray(analytic).reshape(-1)
        if flat.size > max_coords:
            idx = pick.choice(flat.size, size=max_coords, replace=False)
        else:
            idx = np.arange(flat.size)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = loss()
            flat[i] = orig - h
            down = loss()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            rel = abs(fd - grad[i]) / max(1.0, abs(fd), abs(grad[i]))
            assert rel < tol, f"{name}[{i}]: fd {fd} vs {grad[i]} (rel {rel})"
            worst = max(worst, rel)
    return worst


def test_criterion_01_gradient_correctness():
    started = time.time()
    rng = np.random.default_rng(11)
    results = []

    conv = Conv2d(2, 3, rng)
    x = rng.normal(size=(2, 4, 5, 2))
    proj = rng.normal(size=(2, 4, 5, 3))
    conv.forward(x)
    conv.zero_grads()
    gx = conv.backward(proj)
    results.append(("conv2d", _fd_check(
        lambda: float(np.sum(conv.forward(x) * proj)),
        {"kernels": (conv.kernels, conv.g_kernels),
         "bias": (conv.bias, conv.g_bias), "input": (x, gx)}, 1e-6)))

    pool = MaxPool2d(2, 3)
    x = rng.normal(size=(2, 4, 6, 3))
    proj = rng.normal(size=(2, 2, 2, 3))
    pool.forward(x)
    gx = pool.backward(proj)
    results.append(("maxpool", _fd_check(
        lambda: float(np.sum(pool.forward(x) * proj)),
        {"input": (x, gx)}, 1e-6)))

    bn = BatchNorm(3)
    bn.gamma[...] = rng.normal(size=3) * 0.5 + 1.0
    bn.beta[...] = rng.normal(size=3)
    x = rng.normal(size=(3, 2, 2, 3))
    proj = rng.normal(size=(3, 2, 2, 3))
    bn.forward(x, train=True)
    bn.zero_grads()
    gx = bn.backward(proj)
    results.append(("batchnorm", _fd_check(
        lambda: float(np.sum(bn.forward(x, train=True) * proj)),
        {"gamma": (bn.gamma, bn.g_gamma), "beta": (bn.beta, bn.g_beta),
         "input": (x, gx)}, 1e-5)))

    bigru = BiGru(3, 4, rng)
    x = rng.normal(size=(2, 5, 3))
    proj = rng.normal(size=(2, 5, 8))
    bigru.forward(x)
    for g in bigru.grads().values():
        g[...] = 0.0
    gx = bigru.backward(proj)
    arrays = {"input": (x, gx)}
    grads = bigru.grads()
    for name, p in bigru.params().items():
        arrays[name] = (p, grads[name])
    results.append(("bigru", _fd_check(
        lambda: float(np.sum(bigru.forward(x) * proj)), arrays, 1e-5,
        max_coords=8)))

    dense = TimeDense(3, 4, rng)
    x = rng.normal(size=(2, 5, 3))
    proj = rng.normal(size=(2, 5, 4))
    dense.forward(x)
    dense.zero_grads()
    gx = dense.backward(proj)
    results.append(("dense", _fd_check(
        lambda: float(np.sum(dense.forward(x) * proj)),
        {"W": (dense.W, dense.g_W), "b": (dense.b, dense.g_b),
         "input": (x, gx)}, 1e-6)))

    head = MaxoutSigmoidHead(3, 2, rng)
    x = rng.normal(size=(4, 5, 3))
    proj = rng.normal(size=4)
    head.forward(x)
    head.zero_grads()
    gx = head.backward(proj)
    results.append(("maxout-head", _fd_check(
        lambda: float(np.sum(head.forward(x) * proj)),
        {"W": (head.W, head.g_W), "b": (head.b, head.g_b),
         "input": (x, gx)}, 1e-5)))

    merge = Merge()
    a = rng.normal(size=(2, 5, 1, 3))
    b = rng.normal(size=(2, 5, 1, 3))
    proj = rng.normal(size=(2, 5, 1, 3))
    merge.forward(a, b)
    ga, gb = merge.backward(proj)
    results.append(("merge", _fd_check(
        lambda: float(np.sum(merge.forward(a, b) * proj)),
        {"a": (a, ga), "b": (b, gb)}, 1e-7)))

    model = CbrnnModel(SMALL, seed=3)
    mbe = rng.normal(size=(2, 20, 10))
    domfreq = rng.normal(size=(2, 20, 3, 2))
    proj = rng.normal(size=2)

    def model_loss():
        return float(np.sum(model.forward(mbe=mbe, domfreq=domfreq,
                                          train=True) * proj))

    model_loss()
    model.zero_grads()
    model.backward(proj)
    params = model.parameters()
    grads = model.gradients()
    arrays = {name: (params[name], grads[name]) for name in params}
    results.append(("full-model", _fd_check(model_loss, arrays, 1e-4,
                                            max_coords=3)))

    elapsed = time.time() - started
    assert elapsed < 120.0, f"gradient suite took {elapsed:.1f}s"
    summary = ", ".join(f"{name} {err:.1e}" for name, err in results)
    _pass(1, f"worst relative errors: {summary} (in {elapsed:.1f}s)")


def test_criterion_02_parameter_count():
    model = CbrnnModel()
    cfg = model.config
    analytic = 0
    for name in cfg.feature_classes:
        cin = {"mbe": 1, "domfreq": 2}[name]
        for _ in range(cfg.n_cnn_layers):
            analytic += 9 * cin * cfg.n_filters + cfg.n_filters
            analytic += 2 * cfg.n_filters
            cin = cfg.n_filters
    u, d = cfg.rnn_units, cfg.n_filters
    analytic += 2 * 3 * (u * d + u * u + u)
    analytic += cfg.fc_units * 2 * u + cfg.fc_units
    analytic += cfg.maxout_pieces * (cfg.fc_units + 1)

    assert model.parameter_count == analytic
    assert 2300 <= model.parameter_count <= 2900
    _pass(2, f"default model has {model.parameter_count} parameters "
             f"(= analytic enumeration, within [2300, 2900])")


def test_criterion_03_shape_pipeline():
    clip = AudioClip(np.random.default_rng(0).normal(scale=0.05,
                                                     size=SR * 10), SR, "ten")
    pair = extract_features(clip)
    assert pair.mbe.shape == (500, 40)
    assert pair.domfreq.shape == (500, 3, 2)

    model = CbrnnModel(CbrnnConfig(dropout=0.0))
    rng = np.random.default_rng(1)
    out = model.forward(mbe=rng.normal(size=(2, 500, 40)),
                        domfreq=rng.normal(size=(2, 500, 3, 2)), train=True)
    assert model._merged_shape == (2, 5, 1, 8)
    assert out.shape == (2,)
    assert np.all((out > 0.0) & (out < 1.0))
    _pass(3, "10 s clip -> 500 frames; branch maps reduce to 5x1x8")


def test_criterion_04_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(404)
    grid = 2.0 ** -20
    worst = 0.0
    for trial in range(1000):
        n = int(rng.integers(2, 501))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        if trial % 2:
            scores = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=n)
        else:
            scores = np.floor(rng.uniform(size=n) / grid) * grid
        pos = scores[labels == 1][:, None]
        neg = scores[labels == 0][None, :]
        oracle = float(((pos > neg).sum() + 0.5 * (pos == neg).sum())
                       / (pos.shape[0] * neg.shape[1]))
        got = roc_auc(scores, labels)
        worst = max(worst, abs(got - oracle))
        assert abs(got - oracle) <= 1e-12
        # exact affine transform keeps order and ties, so AUC is unchanged
        assert abs(roc_auc(2.0 * scores + 1.0, labels) - got) <= 1e-12
    _pass(4, f"1000 instances (tie-heavy included) match the pairwise "
             f"oracle, worst gap {worst:.2e}; transform-invariant")


def test_criterion_05_dominant_frequency_recovery():
    cfg = FeatureConfig()
    for freq in (600.0, 3000.0, 7900.0):
        clip = AudioClip(tone(freq), SR, f"tone{int(freq)}")
        pair = extract_features(clip, cfg)
        top = pair.domfreq[:, 0, 0]
        assert np.all(np.abs(top - freq) <= 5.0), f"{freq} Hz missed"
        assert np.all(pair.domfreq[:, 1:, :] == 0.0)

    silence = AudioClip(np.zeros(SR * 10), SR, "silence")
    assert np.all(extract_features(silence, cfg).domfreq == 0.0)

    two = AudioClip(0.25 * np.sin(2 * np.pi * 1000.0 / SR * np.arange(SR * 10))
                    + 0.5 * np.sin(2 * np.pi * 4000.0 / SR * np.arange(SR * 10)),
                    SR, "two")
    peaks = extract_features(two, cfg).domfreq
    assert np.all(np.abs(peaks[:, 0, 0] - 4000.0) <= 5.0)
    assert np.all(np.abs(peaks[:, 1, 0] - 1000.0) <= 5.0)
    assert np.all(peaks[:, 0, 1] >= peaks[:, 1, 1])
    _pass(5, "600/3000/7900 Hz tones recovered within 5 Hz; silence all "
             "zeros; two-tone slots ordered by magnitude")


def test_criterion_06_augmentation_contracts():
    rng = np.random.default_rng(6)
    for la, lb, want in ((0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 1)):
        mixed = blocks_mix(make_sample(rng, "a", la), make_sample(rng, "b", lb))
        assert mixed.label == want

    train_set = [make_sample(rng, f"c{i}", i % 2) for i in range(25)]
    doubled = augment_blocks(train_set, np.random.default_rng(0))
    assert len(doubled) == 50
    assert doubled[:25] == train_set

    mixed_train = ([make_sample(rng, f"p{i}", 1) for i in range(60)]
                   + [make_sample(rng, f"n{i}", 0) for i in range(40)])
    adapted = adapt_test_mixing(mixed_train, [make_pair(rng) for _ in range(9)],
                                np.random.default_rng(1))
    assert len(adapted) == 160
    assert sum(s.label == 1 for s in adapted) == 120
    assert sum(s.label == 0 for s in adapted) == 40
    _pass(6, "blocks mixing doubles the set with OR labels; test mixing "
             "doubles exactly the positive class (60+40 -> 120+40)")


def _synth_clip(rng: np.random.Generator, positive: bool) -> AudioClip:
    """10 s of noise, with tone bursts added for positives."""
    n = SR * 10
    x = rng.normal(scale=0.05, size=n)
    if positive:
        for _ in range(int(rng.integers(3, 7))):
            freq = rng.uniform(2000.0, 6000.0)
            length = int(rng.uniform(0.5, 1.2) * SR)
            amp = rng.uniform(0.3, 0.5)
            start = int(rng.integers(0, n - length))
            t = np.arange(length) / SR
            x[start:start + length] += (amp * np.sin(2 * np.pi * freq * t)
                                        * np.hanning(length))
    return AudioClip(np.clip(x, -1.0, 1.0), SR, "synth")


def test_criterion_07_synthetic_end_to_end():
    rng = np.random.default_rng(2016)
    samples = {}
    entries = []
    for i in range(200):
        label = 1 if i < 100 else 0
        cid = f"clip{i:03d}"
        pair = extract_features(_synth_clip(rng, bool(label)))
        samples[cid] = LabeledSample(cid, pair, label)
        entries.append(ManifestEntry(cid, label, ""))

    folds = stratified_splits(Manifest(entries),
                              SplitSpec(ratios=(0.6, 0.2, 0.2), folds=5,
                                        seed=0))
    fold_seqs = np.random.SeedSequence(7).spawn(5)
    test_aucs = []
    for k, (parts, seq) in enumerate(zip(folds, fold_seqs), 1):
        train_ids, val_ids, test_ids = parts
        model_seq, train_seq = seq.spawn(2)
        model = CbrnnModel(seed=int(model_seq.generate_state(1)[0]))
        cfg = TrainConfig(max_epochs=100, patience=30, batch_size=32,
                          seed=int(train_seq.generate_state(1)[0]))
        fold_started = time.time()
        model, history = train(model, [samples[c] for c in train_ids],
                               [samples[c] for c in val_ids], cfg)
        fold_elapsed = time.time() - fold_started
        scores = score_samples(model, [samples[c] for c in test_ids])
        labels = np.array([samples[c].label for c in test_ids],
                          dtype=np.float64)
        auc = roc_auc(scores, labels)
        test_aucs.append(auc)
        print(f"  fold {k}: test AUC {auc:.4f} after {history.epochs_run} "
              f"epochs ({fold_elapsed:.0f}s)")
        assert history.epochs_run <= 100
        assert fold_elapsed <= 600.0, f"fold {k} took {fold_elapsed:.0f}s"

    mean_auc = float(np.mean(test_aucs))
    assert mean_auc >= 0.95, f"mean test AUC {mean_auc:.4f} < 0.95"
    _pass(7, f"mean held-out test AUC {mean_auc:.4f} over 5 folds of "
             f"200 synthetic clips (60/20/20)")


def test_criterion_08_early_stopping():
    assert TrainConfig().patience == 50

    captured = {}

    def metric(model, epoch):
        if epoch == 3:
            captured["state"] = model.state_dict()
        return {1: 0.5, 2: 0.6, 3: 0.9}.get(epoch, 0.7)

    rng = np.random.default_rng(8)
    train_set = [make_sample(rng, f"c{i}", i % 2) for i in range(8)]
    model = CbrnnModel(SMALL, seed=0)
    model, history = train(model, train_set, None,
                           TrainConfig(max_epochs=100, patience=5,
                                       batch_size=4, seed=0),
                           val_metric=metric)
    assert history.epochs_run == 8, "must stop exactly patience after best"
    assert history.best_epoch == 3
    assert history.best_val_auc == 0.9
    final = model.state_dict()
    for name, value in captured["state"].items():
        np.testing.assert_array_equal(final[name], value)
    _pass(8, "stopped at epoch 8 for a peak at 3 with patience 5, "
             "best snapshot restored; default patience is 50")


def test_criterion_09_determinism_and_persistence(tmp_path):
    rng = np.random.default_rng(9)
    train_set = [make_sample(rng, f"c{i}", i % 2) for i in range(8)]
    val_set = [make_sample(rng, f"v{i}", i % 2) for i in range(4)]

    states = []
    histories = []
    for _ in range(2):
        model = CbrnnModel(SMALL, seed=5)
        model, history = train(model, list(train_set), list(val_set),
                               TrainConfig(max_epochs=4, batch_size=4, seed=3))
        states.append(model.state_dict())
        histories.append(history)
    assert histories[0].train_loss == histories[1].train_loss
    assert histories[0].val_auc == histories[1].val_auc
    for name in states[0]:
        np.testing.assert_array_equal(states[0][name], states[1][name])

    model = CbrnnModel(SMALL, seed=5)
    model.load_state_dict(states[0])
    ckpt = tmp_path / "model.ckpt"
    save_checkpoint(model, ckpt)
    reloaded = load_checkpoint(ckpt)
    mbe = rng.normal(size=(3, 20, 10))
    domfreq = rng.normal(size=(3, 20, 3, 2))
    np.testing.assert_array_equal(
        reloaded.forward(mbe=mbe, domfreq=domfreq),
        model.forward(mbe=mbe, domfreq=domfreq))

    pair = make_pair(rng, t=50, bands=40)
    cache = tmp_path / "clip.bdfc"
    write_feature_cache(pair, cache, clip_id="clip")
    cid, loaded = read_feature_cache_entry(cache)
    assert cid == "clip"
    assert loaded.mbe.tobytes() == pair.mbe.tobytes()
    assert loaded.domfreq.tobytes() == pair.domfreq.tobytes()
    first_bytes = cache.read_bytes()
    write_feature_cache(loaded, cache, clip_id="clip")
    assert cache.read_bytes() == first_bytes
    _pass(9, "same-seed training is bit-identical; checkpoint and feature "
             "cache round-trips are exact")


def test_criterion_10_split_protocol():
    entries = [ManifestEntry(f"p{i}", 1, "") for i in range(7710)]
    entries += [ManifestEntry(f"n{i}", 0, "") for i in range(7980)]
    manifest = Manifest(entries)
    folds = stratified_splits(manifest, SplitSpec(ratios=(0.6, 0.2, 0.2),
                                                  folds=3, seed=0))
    all_ids = sorted(manifest.ids)
    for train_ids, val_ids, test_ids in folds:
        assert abs(len(val_ids) - 3138) <= 1
        ids = train_ids + val_ids + test_ids
        assert sorted(ids) == all_ids
        for part in (train_ids, val_ids, test_ids):
            n_pos = sum(cid.startswith("p") for cid in part)
            want = len(part) * 7710 / 15690
            assert abs(n_pos - want) <= 1.0
    _pass(10, f"validation part holds {len(folds[0][1])} of 15690 clips; "
              f"folds are disjoint covers with class imbalance <= 1")
