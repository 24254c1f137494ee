import numpy as np
import pytest

from quad import tensor as T
from quad import training
from quad.data import DatasetSpec, MultimodalDataset, Splits, generate_synthetic, prepare
from quad.model import VARIANTS, TrainConfig, build_model, load_model, run_prototype_stage, save_model
from quad.nfce import init_prototypes
from quad.training import (HISTORY_COLUMNS, TrainingDiverged, ablate, batch_loss, confusion_matrix, evaluate, fit,
                           metrics_from_predictions, roc_auc, train)

CFG = TrainConfig(k=2, hdim=4, proto_epochs=5, epochs=2, lr=1e-3, batch_size=8, seed=0)


@pytest.fixture(scope="module")
def splits():
    ds = generate_synthetic(DatasetSpec(2, 3, (3, 4), 90, (3.0, 3.0), 0))
    return prepare(ds, (0.6, 0.2, 0.2), 0)


@pytest.fixture(scope="module")
def bank(splits):
    return run_prototype_stage(splits.train, CFG)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(k=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0).validate()
    with pytest.raises(ValueError):
        TrainConfig(variant="wo-everything").validate()
    assert TrainConfig().digest() == TrainConfig().digest() != TrainConfig(seed=1).digest()


def test_disabled_terms_leave_plain_cross_entropy(splits, bank):
    cfg = CFG.replace(use_gain=False, use_sparsity=False)
    model = build_model(splits.train, cfg, bank)
    idx = np.arange(6)
    depths = model.depth_plan(splits.train)
    classes = model.quality_classes(splits.train)
    loss, parts = batch_loss(model, splits.train, idx, depths, classes)
    ce = []
    for i in idx:
        trace, _ = model.forward([x[i] for x in splits.train.modalities], depths[i], classes[i])
        ce.append(T.cross_entropy(trace.logits, int(splits.train.labels[i])).item())
    assert loss.item() == pytest.approx(np.mean(ce), abs=1e-12)
    assert parts[0] == pytest.approx(np.mean(ce), abs=1e-12)


def test_full_loss_combines_terms(splits, bank):
    model = build_model(splits.train, CFG, bank)
    loss, (task, gain, sparse) = batch_loss(model, splits.train, np.arange(5), model.depth_plan(splits.train),
                                            model.quality_classes(splits.train))
    assert loss.item() == pytest.approx(task - gain + sparse, abs=1e-12)


def test_single_sample_is_memorised(splits, bank):
    cfg = CFG.replace(use_gain=False, use_sparsity=False, epochs=150, lr=0.05, patience=1000)
    model = build_model(splits.train, cfg, bank)
    one = splits.train.subset([0])
    hist = train(model, Splits(one, one, one), cfg)
    assert hist.rows[-1]["loss_task"] < 1e-3
    assert training.accuracy(model, one) == 1.0


def test_prototype_stage_must_finish_first(splits):
    model = build_model(splits.train, CFG, init_prototypes(splits.train))
    with pytest.raises(RuntimeError):
        train(model, splits, CFG)


def test_history_and_best_checkpoint(splits, bank, tmp_path):
    model, hist = fit(splits, CFG.replace(epochs=3), bank)
    assert [r["epoch"] for r in hist.rows] == [0, 1, 2]
    assert hist.best_val_acc == max(r["val_acc"] for r in hist.rows)
    assert training.accuracy(model, splits.val) == pytest.approx(hist.best_val_acc)
    hist.write_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == ",".join(HISTORY_COLUMNS) and len(lines) == 4


def test_early_stopping(splits, bank):
    _, hist = fit(splits, CFG.replace(epochs=30, patience=2, lr=1e-9), bank)
    assert hist.stopped_early and len(hist.rows) < 30


def test_divergence_restores_last_good(splits, bank, monkeypatch):
    model = build_model(splits.train, CFG, bank)
    before = model.state_arrays()
    real = training.batch_loss
    calls = {"n": 0}

    def flaky(*args):
        calls["n"] += 1
        loss, parts = real(*args)
        if calls["n"] > 3:
            return T.scale(loss, float("nan")), parts
        return loss, parts

    monkeypatch.setattr(training, "batch_loss", flaky)
    with pytest.raises(TrainingDiverged) as err:
        train(model, splits, CFG.replace(epochs=5))
    assert err.value.model is model and len(err.value.history.rows) == 0
    # rolled back to the state before the diverging epoch (here: the initial one)
    assert all(np.array_equal(a, b) for a, b in zip(model.state_arrays(), before))


def test_training_is_reproducible(splits, bank):
    r1 = evaluate(fit(splits, CFG, bank)[0], splits.test).as_dict()
    r2 = evaluate(fit(splits, CFG, bank)[0], splits.test).as_dict()
    assert r1 == r2


def test_frozen_inference_does_not_touch_grads(splits, bank):
    model = build_model(splits.train, CFG, bank)
    model.predict(splits.test)
    assert all(p.requires_grad and p._grad is None for p in model.parameters())


# variants --------------------------------------------------------------------------

@pytest.mark.parametrize("tag", VARIANTS)
def test_every_variant_trains(splits, bank, tag):
    report, model = ablate(tag, splits, CFG.replace(epochs=1), bank)
    assert 0.0 <= report.acc <= 1.0
    assert model.config.variant == tag


def test_unknown_variant(splits, bank):
    with pytest.raises(ValueError):
        ablate("no-such", splits, CFG, bank)


def test_depth_shift_variants(splits, bank):
    base = build_model(splits.train, CFG.replace(k=3), bank).depth_plan(splits.test)
    minus = build_model(splits.train, CFG.replace(k=3, variant="depth-minus-1"), bank).depth_plan(splits.test)
    plus = build_model(splits.train, CFG.replace(k=3, variant="depth-plus-1"), bank).depth_plan(splits.test)
    fixed = build_model(splits.train, CFG.replace(k=3, variant="wo-gcnd"), bank).depth_plan(splits.test)
    assert np.array_equal(minus, np.maximum(base - 1, 1))
    assert np.array_equal(plus, base + 1)
    assert np.all(fixed == 3)


def test_fixed_depth_equals_full_at_k_one(splits, bank):
    cfg = CFG.replace(k=1)
    full, _ = fit(splits, cfg, bank)
    fixed, _ = fit(splits, cfg.replace(variant="wo-gcnd"), bank)
    assert [a.shape for a in full.state_arrays()] == [a.shape for a in fixed.state_arrays()]
    assert all(np.array_equal(a, b) for a, b in zip(full.state_arrays(), fixed.state_arrays()))


def test_static_variant_has_no_hypernetwork(splits, bank):
    full = build_model(splits.train, CFG, bank)
    static = build_model(splits.train, CFG.replace(variant="wo-lgp"), bank)
    assert static.n_parameters() != full.n_parameters()
    _, _, traces = static.run(splits.test.subset([0, 1]))
    assert traces[0][0].params[0][0] is static.static_blocks[0][0]


def test_quality_is_independent_of_downstream_training(splits, bank):
    a, _ = fit(splits, CFG, bank)
    b, _ = fit(splits, CFG.replace(seed=5, lr=1e-2), bank)
    assert a.quality(splits.test).tobytes() == b.quality(splits.test).tobytes()


# checkpoints -------------------------------------------------------------------------

@pytest.mark.parametrize("tag", ["full", "cls-confidence", "wo-lgp"])
def test_checkpoint_round_trip(splits, bank, tmp_path, tag):
    model, _ = fit(splits, CFG.replace(variant=tag, epochs=1), bank)
    save_model(model, tmp_path / "m.npz")
    back = load_model(tmp_path / "m.npz")
    assert back.config == model.config
    assert back.normalizer == model.normalizer
    assert np.array_equal(back.run(splits.test)[0], model.run(splits.test)[0])


def test_checkpoint_hash_mismatch(splits, bank, tmp_path):
    import json
    model = build_model(splits.train, CFG, bank)
    save_model(model, tmp_path / "m.npz")
    with np.load(tmp_path / "m.npz") as z:
        arrays = {k: z[k] for k in z.files}
    meta = json.loads(bytes(arrays["meta"]).decode())
    meta["config"]["seed"] = 99
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(tmp_path / "bad.npz", **arrays)
    with pytest.raises(ValueError, match="hash"):
        load_model(tmp_path / "bad.npz")


# metrics -------------------------------------------------------------------------------

def test_perfect_predictions():
    y = np.array([0, 1, 2, 2, 1])
    r = metrics_from_predictions(y, y, 3)
    assert r.acc == r.weighted_f1 == r.macro_f1 == 1.0


def test_binary_hand_computed_case():
    # TP=4, FN=1, FP=2, TN=3
    y = np.array([1] * 5 + [0] * 5)
    pred = np.array([1, 1, 1, 1, 0, 1, 1, 0, 0, 0])
    r = metrics_from_predictions(y, pred, 2)
    assert r.acc == pytest.approx(0.7)
    assert r.f1 == pytest.approx(8 / 11)
    assert r.confusion.tolist() == [[3, 2], [1, 4]]
    assert r.confusion.sum(axis=1).tolist() == [5, 5]


def test_weighted_equals_macro_on_balanced_support():
    rng = np.random.default_rng(0)
    y = np.repeat(np.arange(4), 25)
    pred = rng.integers(0, 4, 100)
    r = metrics_from_predictions(y, pred, 4)
    assert r.weighted_f1 == pytest.approx(r.macro_f1, abs=1e-12)


def test_auc_chance_and_ties():
    rng = np.random.default_rng(1)
    y = np.repeat([0, 1], 1000)
    assert abs(roc_auc(y, rng.uniform(size=2000)) - 0.5) <= 0.05
    assert roc_auc([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8]) == pytest.approx(0.75)
    assert roc_auc([0, 1], [0.5, 0.5]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        roc_auc([0, 2], [0.1, 0.2])


def test_auc_rejected_for_multiclass(splits, bank):
    model = build_model(splits.train, CFG, bank)
    with pytest.raises(ValueError):
        evaluate(model, splits.test, auc=True)


def test_binary_evaluation_reports_auc():
    ds = generate_synthetic(DatasetSpec(1, 2, (3,), 60, (3.0,), 0))
    sp = prepare(ds, (0.6, 0.2, 0.2), 0)
    cfg = CFG.replace(epochs=1)
    model, _ = fit(sp, cfg)
    r = evaluate(model, sp.test, auc=True)
    assert r.f1 is not None and 0.0 <= r.auc <= 1.0


def test_confusion_matrix_counts():
    cm = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 2], 3)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [0, 0, 1]]
