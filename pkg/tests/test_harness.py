import csv
import hashlib
import statistics
from dataclasses import replace

import numpy as np
import pytest

from csdasa import harness as H
from csdasa.harness import (
    SynthConfig,
    TrainingError,
    TransferConfig,
    accuracy,
    confusion_matrix,
    evaluate,
    format_table,
    population_mmd,
    pretrain_source,
    read_config,
    read_results_csv,
    results_csv,
    run_baselines,
    run_one_to_one,
    stratified_split,
    summarize,
    summary_csv,
    synth_subjects,
    transfer_adapt,
    write_config,
    write_results,
)
from csdasa.imaging import ConfigError, SubjectDomain
from csdasa.model import CSDASA, ModelConfig, forward_eval_merged, forward_source_merged
from csdasa.tensor import Tensor

MICRO = ModelConfig.micro(frames=3, grid=8, convlstm_channels=(4,), specific_channels=(8, 4),
                          classifier_kernels=2, fc_hidden=16)
FAST = TransferConfig(epochs_pretrain=15, epochs_adapt=5, lr=1e-3, batch=8, patience=5)


def synth(n_subjects=2, n=200, shift="medium", seed=0, **kw):
    return synth_subjects(n_subjects, n, shift, seed=seed, frames=3, grid=8, **kw)


def checksum(model):
    h = hashlib.sha256()
    for name, t in model.params.items():
        h.update(name.encode())
        h.update(t.data.tobytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def pretrained():
    doms = synth(2, 200, "medium", seed=1)
    train, test = stratified_split(doms[0], 0.2, 0)
    return doms, train, test, pretrain_source(train, FAST, MICRO)


# ---------------------------------------------------------------- synthetic data


def test_synth_is_deterministic_and_float32_exact():
    a, b = synth(seed=5), synth(seed=5)
    for x, y in zip(a, b):
        assert np.array_equal(x.images, y.images) and np.array_equal(x.labels, y.labels)
    assert np.array_equal(a[0].images.astype(np.float32).astype(np.float64), a[0].images)
    assert not np.array_equal(synth(seed=6)[0].images, a[0].images)


def test_synth_balanced_and_shaped():
    doms = synth(3, 100)
    assert [d.subject_id for d in doms] == ["S1", "S2", "S3"]
    for d in doms:
        assert d.images.shape == (100, 3, 3, 8, 8)
        assert np.bincount(d.labels).tolist() == [25, 25, 25, 25]


def test_zero_shift_subjects_share_class_means():
    doms = synth(3, 400, "none", seed=2)
    means = [[d.images[d.labels == k].mean(axis=0) for k in range(4)] for d in doms]
    between = max(np.abs(means[0][k] - means[i][k]).mean() for i in (1, 2) for k in range(4))
    shifted = synth(3, 400, "high", seed=2)
    shifted_means = [[d.images[d.labels == k].mean(axis=0) for k in range(4)] for d in shifted]
    gap = max(np.abs(shifted_means[0][k] - shifted_means[i][k]).mean() for i in (1, 2) for k in range(4))
    assert between < 0.15 < 0.5 < gap


def test_synth_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(n_subjects=1)
    with pytest.raises(ConfigError):
        SynthConfig(shift="huge")
    assert SynthConfig(shift="0.25").magnitude == 0.25


# ---------------------------------------------------------------- splits


def test_stratified_split_is_disjoint_seeded_and_balanced():
    dom = synth(2, 100)[0]
    tr, te = stratified_split(dom, 0.2, 3)
    assert len(tr) == 80 and len(te) == 20
    assert np.bincount(te.labels).tolist() == [5, 5, 5, 5]
    rows = {x.tobytes() for x in tr.images} | {x.tobytes() for x in te.images}
    assert len(rows) == 100
    tr2, te2 = stratified_split(dom, 0.2, 3)
    assert np.array_equal(te.images, te2.images)
    assert not np.array_equal(stratified_split(dom, 0.2, 4)[1].images, te.images)


# ---------------------------------------------------------------- pretraining


def test_pretrain_separable_two_class_task():
    rng = np.random.default_rng(0)
    labels = np.arange(80) % 2
    x = rng.normal(scale=0.5, size=(80, 3, 3, 8, 8))
    x[:, :, 0] += np.where(labels == 1, 2.0, -2.0)[:, None, None, None]
    dom = SubjectDomain("P", x, labels)
    cfg = replace(FAST, epochs_pretrain=50, patience=50)
    res = pretrain_source(dom, cfg, replace(MICRO, n_classes=2))
    assert res.train_accuracy >= 95.0
    assert res.epochs_run <= 50


def test_pretrain_is_deterministic(pretrained):
    doms, train, _, first = pretrained
    again = pretrain_source(train, FAST, MICRO)
    assert again.losses == first.losses
    assert checksum(again.model) == checksum(first.model)


def test_pretrain_result_and_branch_sync(pretrained):
    _, _, _, res = pretrained
    assert res.val_accuracy > 80 and res.train_accuracy > 80
    for j in range(2):
        assert np.array_equal(res.model.params[f"src.{j}.w"].data, res.model.params[f"tgt.{j}.w"].data)
    assert res.model.reference is not None


def test_identity_fallback_close_to_training_path(pretrained):
    _, train, _, res = pretrained
    model = res.model.copy()
    merged = model.encode(Tensor(train.images))
    paired = np.argmax(forward_source_merged(model, merged).logits.data, axis=1)
    model.reference = None
    with pytest.warns(RuntimeWarning):
        fallback = np.argmax(forward_eval_merged(model, merged, "src").data, axis=1)
    assert abs(accuracy(paired, train.labels) - accuracy(fallback, train.labels)) <= 5.0


def test_divergence_is_reported(pretrained):
    _, train, _, _ = pretrained
    with pytest.raises(TrainingError, match="pretrain epoch 0 step"):
        pretrain_source(train, replace(FAST, lr=1e300), MICRO)


# ---------------------------------------------------------------- adaptation


def test_adaptation_freezes_shared_and_logs(pretrained):
    doms, train, _, res = pretrained
    tgt_train, _ = stratified_split(doms[1], 0.2, 0)
    before = {n: res.model.params[n].data.copy() for n in res.model.names_in("shared")}
    out = transfer_adapt(res.model, train, tgt_train, FAST)
    for n, b in before.items():
        assert np.array_equal(out.model.params[n].data, b)
    assert len(out.ce) == len(out.mmd) == FAST.epochs_adapt + 1
    assert out.epochs_run == FAST.epochs_adapt
    assert out.mmd[-1] < out.mmd[0]
    changed = [n for n in out.model.params
               if not np.array_equal(out.model.params[n].data, res.model.params[n].data)]
    assert any(n.startswith("tgt.") for n in changed) and any(n.startswith("head.") for n in changed)


def test_same_domain_starts_aligned_and_keeps_accuracy(pretrained):
    _, train, test, res = pretrained
    out = transfer_adapt(res.model, train, train, FAST)
    assert out.mmd[0] <= 1e-6
    assert abs(evaluate(out.model, test) - evaluate(res.model, test)) <= 2.0


def test_no_target_label_leakage(pretrained):
    doms, train, _, res = pretrained
    tgt_train, _ = stratified_split(doms[1], 0.2, 0)
    flipped = SubjectDomain(tgt_train.subject_id, tgt_train.images, (tgt_train.labels + 1) % 4)
    a = transfer_adapt(res.model, train, tgt_train, FAST)
    b = transfer_adapt(res.model, train, flipped, FAST)
    assert checksum(a.model) == checksum(b.model)


def test_labeled_target_samples_are_used(pretrained):
    doms, train, _, res = pretrained
    tgt_train, _ = stratified_split(doms[1], 0.2, 0)
    cfg = replace(FAST, epochs_adapt=1, n_labeled=16)
    flipped = SubjectDomain(tgt_train.subject_id, tgt_train.images, (tgt_train.labels + 1) % 4)
    a = transfer_adapt(res.model, train, tgt_train, cfg)
    b = transfer_adapt(res.model, train, flipped, cfg)
    assert checksum(a.model) != checksum(b.model)
    with pytest.raises(ConfigError):
        transfer_adapt(res.model, train, tgt_train, replace(FAST, n_labeled=len(tgt_train) + 1))


def test_population_mmd_zero_for_identical_sets(pretrained):
    _, train, _, res = pretrained
    m = H.encode_all(res.model, train.images)
    assert population_mmd(res.model, m, m, FAST.kernel) == 0.0


# ---------------------------------------------------------------- evaluation


def test_random_model_is_at_chance():
    dom = synth(2, 200, seed=3)[1]
    accs = [evaluate(CSDASA.init(MICRO, seed=s), dom) for s in range(5)]
    assert abs(np.mean(accs) - 25.0) <= 5.0


def test_memorization_reaches_full_accuracy():
    dom = synth(2, 32, "none", seed=4, noise=0.1)[0]
    cfg = replace(FAST, epochs_pretrain=60, patience=60)
    res = pretrain_source(dom, cfg, MICRO)
    seen, _ = stratified_split(dom, cfg.test_fraction, cfg.seed)
    assert evaluate(res.model, seen, "src") == 100.0


def test_accuracy_matches_confusion_trace():
    rng = np.random.default_rng(0)
    for _ in range(20):
        labels = rng.integers(0, 4, size=37)
        pred = rng.integers(0, 4, size=37)
        cm = confusion_matrix(pred, labels, 4)
        assert cm.sum() == 37
        assert accuracy(pred, labels) == 100.0 * float(np.trace(cm) / cm.sum())


def test_zero_shift_transfer_matches_within_subject():
    doms = synth(2, 1000, "none", seed=1)
    train, test = stratified_split(doms[0], 0.2, 0)
    res = pretrain_source(train, FAST, MICRO)
    assert abs(evaluate(res.model, test, "src") - evaluate(res.model, doms[1])) <= 3.0


# ---------------------------------------------------------------- protocol


def tiny_setup(n_subjects):
    doms = synth_subjects(n_subjects, 16, "low", seed=0, frames=1, grid=4)
    mcfg = ModelConfig.micro(frames=1, grid=4, convlstm_channels=(1,), specific_channels=(2, 1),
                             classifier_kernels=1, fc_hidden=2)
    cfg = TransferConfig(epochs_pretrain=1, epochs_adapt=1, lr=1e-3, batch=4, test_fraction=0.25)
    return doms, mcfg, cfg


def test_thirteen_subjects_give_156_runs():
    doms, mcfg, cfg = tiny_setup(13)
    res = run_one_to_one(doms, cfg, mcfg)
    assert len(res.runs) == 156 and not res.failures
    summary = res.summary()
    assert len(summary) == 13 and all(n == 12 for *_, n in summary)
    assert {(r.source_id, r.target_id) for r in res.runs} == {
        (a.subject_id, b.subject_id) for a in doms for b in doms if a is not b}


def test_failed_pairs_are_flagged_and_excluded(monkeypatch):
    doms, mcfg, cfg = tiny_setup(3)
    real = H.transfer_adapt

    def flaky(model, source, target, config, log=None):
        if (source.subject_id, target.subject_id) == ("S1", "S2"):
            raise TrainingError("loss became nan at adapt epoch 1 step 0")
        return real(model, source, target, config, log)

    monkeypatch.setattr(H, "transfer_adapt", flaky)
    res = run_one_to_one(doms, cfg, mcfg)
    assert len(res.runs) == 5
    assert [f[:3] for f in res.failures] == [("S2", "S1", 0)]
    assert results_csv(res.runs).count("\n") == 1 + 5
    assert dict((t, n) for t, _, _, n in res.summary())["S2"] == 1


def test_csv_schema_and_spreadsheet_recomputation(tmp_path):
    doms, mcfg, cfg = tiny_setup(3)
    res = run_one_to_one(doms, cfg, mcfg)
    write_results(tmp_path, {"csdasa": res})
    runs = read_results_csv(tmp_path / "results_csdasa.csv")
    assert len(runs) == len(res.runs)
    with open(tmp_path / "summary_csdasa.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["target_id", "mean", "std", "n_runs"]
    for row in rows:
        accs = [r.accuracy for r in runs if r.target_id == row["target_id"]]
        assert float(row["mean"]) == statistics.fmean(accs)
        assert abs(float(row["std"]) - statistics.stdev(accs)) <= 1e-12
        assert int(row["n_runs"]) == len(accs)
    assert all(0 <= r.accuracy <= 100 for r in runs)
    assert summary_csv(runs) == (tmp_path / "summary_csdasa.csv").read_text()
    table = (tmp_path / "table.txt").read_text().splitlines()
    assert table[0].split() == ["Target", "csdasa"] and len(table) == 1 + 3 + 1


def test_summary_single_run_has_zero_std():
    r = H.RunRecord("S1", "S2", 0, 50.0, 1.0, 0.1, 3)
    assert summarize([r]) == [("S1", 50.0, 0.0, 1)]


def test_baselines_share_splits_and_source_models():
    doms, mcfg, cfg = tiny_setup(2)
    cache = {}
    main = run_one_to_one(doms, cfg, mcfg, "csdasa", pretrained=cache)
    base = run_baselines(doms, cfg, mcfg, pretrained=cache)
    assert set(base) == {"source_only", "nonatt"}
    assert all(r.epochs_run == 0 for r in base["source_only"].runs)
    assert len(cache) == 4  # two sources x (attention, no attention)
    assert [(r.target_id, r.source_id) for r in main.runs] == [(r.target_id, r.source_id)
                                                               for r in base["nonatt"].runs]
    assert "Mean" in format_table({"csdasa": main, **base})


def test_identical_subjects_transfer_symmetrically():
    one = synth(1 + 1, 200, "none", seed=8)[0]
    twins = [one, SubjectDomain("S2", one.images, one.labels)]
    res = run_one_to_one(twins, FAST, MICRO)
    a, b = (r.accuracy for r in res.runs)
    assert abs(a - b) <= 3.0


def test_run_is_deterministic():
    doms, mcfg, cfg = tiny_setup(2)
    assert results_csv(run_one_to_one(doms, cfg, mcfg).runs) == results_csv(run_one_to_one(doms, cfg, mcfg).runs)


def test_variant_names():
    with pytest.raises(ConfigError):
        H.variant_configs("ddc", MICRO, FAST)
    m, t = H.variant_configs("nonatt", MICRO, FAST)
    assert not m.attention and m.mmd_layers == "last"
    m, t = H.variant_configs("source_only", MICRO, FAST)
    assert t.gamma == 0 and t.epochs_adapt == 0


# ---------------------------------------------------------------- config file


def test_config_file_round_trip(tmp_path):
    path = tmp_path / "run.ini"
    tcfg = replace(FAST, gamma=0.5, bandwidth=2.0)
    write_config(path, tcfg, MICRO, SynthConfig(shift="high"))
    back = read_config(path)
    assert TransferConfig(**back["transfer"]) == tcfg
    assert ModelConfig(**back["model"]) == MICRO
    assert SynthConfig(**back["synth"]).shift == "high"


def test_config_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[transfer]\nlearning_rate = 0.1\n")
    with pytest.raises(ConfigError, match="learning_rate"):
        read_config(path)
    path.write_text("[optimizer]\nlr = 0.1\n")
    with pytest.raises(ConfigError):
        read_config(path)


def test_transfer_config_validation():
    with pytest.raises(ConfigError):
        TransferConfig(batch=1)
    assert TransferConfig(batch=1, gamma=0.0).batch == 1
    with pytest.raises(ConfigError):
        TransferConfig(lr=0.0)
    assert TransferConfig(bandwidth="1.5").bandwidth == 1.5


@pytest.mark.slow
def test_source_only_degrades_with_shift():
    levels = ("low", "medium", "high")
    means = []
    for level in levels:
        accs = []
        for seed in range(5):
            doms = synth(2, 200, level, seed=seed)
            cfg = replace(FAST, seed=seed)
            train, _ = stratified_split(doms[0], 0.2, seed)
            res = pretrain_source(train, cfg, MICRO)
            accs.append(evaluate(res.model, stratified_split(doms[1], 0.2, seed)[1]))
        means.append(np.mean(accs))
    assert means[0] >= means[1] >= means[2]
