"""Training, adaptation and the one-to-one transfer protocol."""

from __future__ import annotations

import configparser
import csv
import io
import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .imaging import ConfigError, DataError, SubjectDomain
from .losses import KernelConfig, cross_entropy, mmd_transfer_loss, total_loss
from .model import (
    CSDASA,
    ModelConfig,
    forward_eval_merged,
    forward_pair_merged,
    forward_source_merged,
)
from .optim import AdamState, adam_step
from .tensor import Tensor

SHIFT_LEVELS = {"none": 0.0, "low": 0.5, "medium": 1.0, "high": 1.5}
RESULT_COLUMNS = ("target_id", "source_id", "seed", "accuracy", "final_ce", "final_mmd", "epochs_run")
SUMMARY_COLUMNS = ("target_id", "mean", "std", "n_runs")
VARIANTS = ("csdasa", "nonatt", "source_only")


class TrainingError(RuntimeError):
    pass


@dataclass
class TransferConfig:
    source_id: str | None = None
    target_id: str | None = None
    epochs_pretrain: int = 100
    epochs_adapt: int = 50
    lr: float = 1e-4
    batch: int = 8
    gamma: float = 1.0
    bandwidth: float | str = "median"
    seed: int = 0
    n_labeled: int = 0
    patience: int = 10
    test_fraction: float = 0.2

    def __post_init__(self):
        if isinstance(self.bandwidth, str) and self.bandwidth != "median":
            self.bandwidth = float(self.bandwidth)
        if self.batch < 2 and self.gamma > 0:
            raise ConfigError("batch must be at least 2 when the MMD term is active")
        if self.batch < 1 or self.epochs_pretrain < 0 or self.epochs_adapt < 0 or self.patience < 1:
            raise ConfigError("batch, epochs and patience must be non-negative (batch, patience positive)")
        if not self.lr > 0 or self.gamma < 0 or self.n_labeled < 0:
            raise ConfigError("lr must be positive; gamma and n_labeled non-negative")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")

    @property
    def kernel(self) -> KernelConfig:
        return KernelConfig(self.bandwidth)


@dataclass
class SynthConfig:
    n_subjects: int = 4
    n_per_subject: int = 400
    shift: str = "medium"
    noise: float = 0.6

    def __post_init__(self):
        if self.shift not in SHIFT_LEVELS:
            try:
                self.shift = float(self.shift)
            except ValueError:
                raise ConfigError(f"shift must be one of {sorted(SHIFT_LEVELS)} or a number") from None
        if self.n_subjects < 2 or self.n_per_subject < 1:
            raise ConfigError("need at least 2 subjects with 1 sample each")

    @property
    def magnitude(self) -> float:
        return SHIFT_LEVELS[self.shift] if isinstance(self.shift, str) else float(self.shift)


# ---------------------------------------------------------------- config file


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        return tuple(int(v) for v in value.replace(",", " ").split())
    return value.strip()


SECTIONS = {"transfer": TransferConfig, "model": ModelConfig, "synth": SynthConfig}


def read_config(path) -> dict[str, dict]:
    """INI-style key = value file with [transfer], [model] and [synth] sections."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    out: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        defaults = {f.name: f.default for f in fields(SECTIONS[section])}
        values = {}
        for key, raw in parser[section].items():
            if key not in defaults:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            like = defaults[key]
            values[key] = raw.strip() if like is None else _coerce(raw, like)
        out[section] = values
    return out


def write_config(path, transfer: TransferConfig, model: ModelConfig, synth: SynthConfig | None = None) -> None:
    parser = configparser.ConfigParser()
    for name, obj in (("transfer", transfer), ("model", model), ("synth", synth)):
        if obj is None:
            continue
        parser[name] = {k: " ".join(map(str, v)) if isinstance(v, tuple) else str(v)
                        for k, v in asdict(obj).items() if v is not None}
    with open(path, "w") as fh:
        parser.write(fh)


# ---------------------------------------------------------------- synthetic subjects


def _rotate(points: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return points @ np.array([[c, s], [-s, c]])


def synth_subjects(n_subjects: int = 4, n_per_subject: int = 400, shift: str | float = "medium",
                   seed: int = 0, frames: int = 7, grid: int = 32, bands: int = 3,
                   n_classes: int = 4, noise: float = 0.6) -> list[SubjectDomain]:
    """Subjects sharing class-conditional topographies, each under its own covariate shift.

    Every class is a pair of Gaussian activation blobs on the scalp grid with its
    own band profile and temporal modulation. Each subject then sees per-band
    gains, a rotation of the grid by a subject angle and an additive band bias,
    all scaled by the shift magnitude. Values are rounded to float32 so a dataset
    survives the container round trip unchanged.
    """
    cfg = SynthConfig(n_subjects, n_per_subject, shift, noise)
    if n_classes < 2:
        raise ConfigError("need at least 2 classes")
    s = cfg.magnitude
    rng = np.random.default_rng([seed, 7919])
    axis = np.linspace(-1.0, 1.0, grid)
    pix = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    width = 0.35
    base_angle = rng.uniform(0, 2 * np.pi)
    centers = []
    for k in range(n_classes):
        a = base_angle + 2 * np.pi * k / n_classes
        centers.append(np.array([[0.55 * math.cos(a), 0.55 * math.sin(a)],
                                 [0.2 * math.cos(a + 2.0), 0.2 * math.sin(a + 2.0)]]))
    profiles = rng.uniform(0.5, 1.5, size=(n_classes, bands))
    phases = rng.uniform(0, 2 * np.pi, size=n_classes)
    tau = np.arange(frames) / max(frames - 1, 1)

    domains = []
    for subj in range(n_subjects):
        srng = np.random.default_rng([seed, subj, 104729])
        gain = np.exp(0.4 * s * srng.standard_normal(bands))
        angle = 0.35 * s * srng.uniform(-1, 1)
        bias = 0.6 * s * srng.standard_normal(bands)
        labels = np.arange(n_per_subject) % n_classes
        srng.shuffle(labels)
        images = np.empty((n_per_subject, frames, bands, grid, grid))
        for i, k in enumerate(labels):
            jitter = srng.normal(scale=0.08, size=(2, 2))
            pts = _rotate(centers[k] + jitter, angle)
            topo = sum(np.exp(-np.sum((pix - p) ** 2, axis=1) / (2 * width ** 2)) * wgt
                       for p, wgt in zip(pts, (1.0, 0.6))).reshape(grid, grid)
            amp = profiles[k] * srng.uniform(0.8, 1.2)
            mod = 1 + 0.3 * np.sin(2 * np.pi * tau + phases[k])
            clean = mod[:, None, None, None] * amp[None, :, None, None] * topo[None, None]
            x = gain[None, :, None, None] * clean + bias[None, :, None, None]
            images[i] = x + noise * srng.standard_normal(x.shape)
        images = images.astype(np.float32).astype(np.float64)
        domains.append(SubjectDomain(f"S{subj + 1}", images, labels))
    return domains


# ---------------------------------------------------------------- splits


def stratified_split(domain: SubjectDomain, test_fraction: float = 0.2,
                     seed: int = 0) -> tuple[SubjectDomain, SubjectDomain]:
    """Per-class seeded split; every class keeps at least one sample on each side when it can."""
    if domain.n_labeled != len(domain):
        raise DataError(f"subject {domain.subject_id}: splitting needs a fully labeled domain")
    rng = np.random.default_rng([seed, 31337])
    train, test = [], []
    for k in np.unique(domain.labels):
        idx = np.flatnonzero(domain.labels == k)
        rng.shuffle(idx)
        n_test = int(round(test_fraction * len(idx)))
        if len(idx) > 1:
            n_test = min(max(n_test, 1), len(idx) - 1)
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return domain.subset(np.sort(train)), domain.subset(np.sort(test))


# ---------------------------------------------------------------- training pieces


def encode_all(model: CSDASA, images: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Merged shared-encoder features for a whole domain, without recording a graph."""
    out = [model.encode(Tensor(images[i:i + chunk])).data for i in range(0, len(images), chunk)]
    return np.concatenate(out) if out else np.zeros((0,))


def _epoch_order(rng: np.random.Generator, n: int, length: int) -> np.ndarray:
    """Uniform without replacement, recycling fresh permutations until ``length`` indices."""
    parts, total = [], 0
    while total < length:
        parts.append(rng.permutation(n))
        total += n
    return np.concatenate(parts)[:length]


def _step(model: CSDASA, loss: Tensor, state: AdamState, lr: float, where: str) -> AdamState:
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingError(f"loss became {value} at {where}")
    names = model.trainable_names()
    grads = T.grad(loss, [model.params[n] for n in names])
    new, state = adam_step({n: model.params[n] for n in names}, dict(zip(names, grads)), state, lr=lr)
    model.update(new)
    return state


def population_mmd(model: CSDASA, m_S: np.ndarray, m_T: np.ndarray, kernel: KernelConfig,
                   chunk: int = 64) -> float:
    """l_MMD over every sample of both domains, from merged encoder features."""
    def feats(merged, which):
        per_chunk = [[f.data for f in model.branch(Tensor(merged[i:i + chunk]), which)]
                     for i in range(0, len(merged), chunk)]
        return [np.concatenate(layer) for layer in zip(*per_chunk)]

    pairs = list(zip(feats(m_S, "src"), feats(m_T, "tgt")))
    return mmd_transfer_loss(model.mmd_pairs([(Tensor(a), Tensor(b)) for a, b in pairs]), kernel).item()


def predict(model: CSDASA, images: np.ndarray, branch: str = "tgt", chunk: int = 64) -> np.ndarray:
    merged = encode_all(model, images, chunk)
    return predict_merged(model, merged, branch, chunk)


def predict_merged(model: CSDASA, merged: np.ndarray, branch: str = "tgt", chunk: int = 64) -> np.ndarray:
    preds = [np.argmax(forward_eval_merged(model, Tensor(merged[i:i + chunk]), branch).data, axis=1)
             for i in range(0, len(merged), chunk)]
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        raise DataError("cannot score an empty split")
    return 100.0 * float(np.mean(pred == labels))


def confusion_matrix(pred: np.ndarray, labels: np.ndarray, n_classes: int) -> np.ndarray:
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (labels, pred), 1)
    return m


def evaluate(model: CSDASA, domain: SubjectDomain, branch: str = "tgt") -> float:
    """Argmax accuracy in percent over the labeled samples of ``domain``."""
    lab = domain.subset(np.arange(domain.n_labeled))
    return accuracy(predict(model, lab.images, branch), lab.labels)


@dataclass
class PretrainResult:
    model: CSDASA
    train_accuracy: float
    val_accuracy: float
    final_loss: float
    epochs_run: int
    losses: list[float] = field(default_factory=list)


def pretrain_source(domain: SubjectDomain, config: TransferConfig, model_config: ModelConfig,
                    log: Callable[[str], None] | None = None) -> PretrainResult:
    """Source-only training of the whole network (gamma = 0) with plateau early stopping.

    An 80/20 stratified split of ``domain`` provides the validation set; the
    parameters of the best validation epoch are kept.
    """
    train, val = stratified_split(domain, config.test_fraction, config.seed)
    model = CSDASA.init(model_config, seed=config.seed)
    rng = np.random.default_rng([config.seed, 2])
    state = AdamState()
    best = (-1.0, None, None)
    stale, losses, epochs = 0, [], 0
    for epoch in range(config.epochs_pretrain):
        order = rng.permutation(len(train))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch):
            idx = order[start:start + config.batch]
            art = forward_source_merged(model, model.encode(Tensor(train.images[idx])))
            loss = cross_entropy(art.logits, train.labels[idx])
            state = _step(model, loss, state, config.lr, f"pretrain epoch {epoch} step {start // config.batch}")
            model.observe_reference(art.top_source)
            total += loss.item() * len(idx)
            count += len(idx)
        losses.append(total / count)
        epochs = epoch + 1
        val_acc = accuracy(predict(model, val.images, "src"), val.labels)
        if log:
            log(f"pretrain {domain.subject_id} epoch {epoch + 1}: ce={losses[-1]:.4f} val={val_acc:.1f}")
        if val_acc > best[0]:
            best, stale = (val_acc, model.copy(), epoch), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    if best[1] is not None:
        model = best[1]
    model.sync_target_branch()
    train_acc = accuracy(predict(model, train.images, "src"), train.labels)
    return PretrainResult(model, train_acc, max(best[0], 0.0), losses[-1] if losses else float("nan"),
                          epochs, losses)


@dataclass
class AdaptResult:
    model: CSDASA
    ce: list[float]
    mmd: list[float]

    @property
    def epochs_run(self) -> int:
        return len(self.ce) - 1


def transfer_adapt(model: CSDASA, source: SubjectDomain, target: SubjectDomain, config: TransferConfig,
                   log: Callable[[str], None] | None = None) -> AdaptResult:
    """Freeze the shared encoder and fit branches + head to the joint objective.

    Target labels are withheld beyond the first ``config.n_labeled`` samples
    before anything else touches the domain. Entry 0 of the logged curves is
    taken before any update. ``ce`` is the mean batch CE over an epoch; ``mmd``
    is l_MMD between the whole source and target sets at the end of the epoch.
    """
    if config.n_labeled > len(target):
        raise ConfigError(f"n_labeled={config.n_labeled} exceeds the {len(target)} target samples")
    target = target.hide_labels(min(config.n_labeled, target.n_labeled))
    if source.n_labeled != len(source):
        raise DataError(f"source {source.subject_id} must be fully labeled")
    model = model.copy()
    model.set_frozen("shared", True)
    shared_before = {n: model.params[n].data.copy() for n in model.names_in("shared")}
    # the encoder is frozen, so its outputs are fixed for the whole adaptation
    m_S, m_T = encode_all(model, source.images), encode_all(model, target.images)
    rng = np.random.default_rng([config.seed, 3])
    steps = math.ceil(max(len(source), len(target)) / config.batch)
    state = AdamState()
    ce_log, mmd_log = [], []
    for epoch in range(config.epochs_adapt + 1):
        src_order = _epoch_order(rng, len(source), steps * config.batch)
        tgt_order = _epoch_order(rng, len(target), steps * config.batch)
        lab_order = _epoch_order(rng, target.n_labeled, steps * config.batch) if target.n_labeled else None
        ce_sum = 0.0
        for k in range(steps):
            sl = slice(k * config.batch, (k + 1) * config.batch)
            si, ti = src_order[sl], tgt_order[sl]
            art = forward_pair_merged(model, Tensor(m_S[si]), Tensor(m_T[ti]))
            ce = cross_entropy(art.logits, source.labels[si])
            l_mmd = mmd_transfer_loss(model.mmd_pairs(art.layer_features), config.kernel)
            loss = total_loss(ce, l_mmd, config.gamma)
            if lab_order is not None:
                li = lab_order[sl]
                logits = forward_eval_merged(model, Tensor(m_T[li]), "tgt")
                loss = T.add(loss, cross_entropy(logits, target.labels[li]))
            ce_sum += ce.item()
            if epoch == 0:
                continue
            state = _step(model, loss, state, config.lr, f"adapt epoch {epoch} step {k}")
            model.observe_reference(art.top_source)
        ce_log.append(ce_sum / steps)
        mmd_log.append(population_mmd(model, m_S, m_T, config.kernel))
        if log:
            log(f"adapt {source.subject_id}->{target.subject_id} epoch {epoch}: "
                f"ce={ce_log[-1]:.4f} mmd={mmd_log[-1]:.5f}")
    for n, before in shared_before.items():
        if not np.array_equal(model.params[n].data, before):
            raise TrainingError(f"shared parameter {n} changed during adaptation")
    return AdaptResult(model, ce_log, mmd_log)


# ---------------------------------------------------------------- protocol


@dataclass
class RunRecord:
    target_id: str
    source_id: str
    seed: int
    accuracy: float
    final_ce: float
    final_mmd: float
    epochs_run: int
    first_mmd: float = float("nan")
    source_only_accuracy: float = float("nan")

    def row(self) -> list[str]:
        return [self.target_id, self.source_id, str(self.seed), repr(self.accuracy),
                repr(self.final_ce), repr(self.final_mmd), str(self.epochs_run)]


@dataclass
class ExperimentResult:
    variant: str
    runs: list[RunRecord] = field(default_factory=list)
    failures: list[tuple[str, str, int, str]] = field(default_factory=list)

    def summary(self) -> list[tuple[str, float, float, int]]:
        return summarize(self.runs)

    def mean_accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.runs])) if self.runs else float("nan")


def summarize(runs: list[RunRecord]) -> list[tuple[str, float, float, int]]:
    """Per-target mean and sample standard deviation (0 for a single run), in first-seen order."""
    targets: dict[str, list[float]] = {}
    for r in runs:
        targets.setdefault(r.target_id, []).append(r.accuracy)
    out = []
    for tid, accs in targets.items():
        std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        out.append((tid, float(np.mean(accs)), std, len(accs)))
    return out


def variant_configs(variant: str, model_config: ModelConfig,
                    config: TransferConfig) -> tuple[ModelConfig, TransferConfig]:
    if variant == "csdasa":
        return model_config, config
    if variant == "nonatt":
        return replace(model_config, attention=False, mmd_layers="last"), config
    if variant == "source_only":
        return model_config, replace(config, gamma=0.0, epochs_adapt=0)
    raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")


def run_one_to_one(domains: list[SubjectDomain], config: TransferConfig, model_config: ModelConfig,
                   variant: str = "csdasa", log: Callable[[str], None] | None = None,
                   pretrained: dict | None = None) -> ExperimentResult:
    """Transfer from every other subject into every target; one run per ordered pair.

    ``pretrained`` caches source models keyed by (variant model config, source id,
    seed) so baselines sharing a source network reuse it.
    """
    if len(domains) < 2:
        raise ConfigError("one-to-one transfer needs at least two subjects")
    mcfg, tcfg = variant_configs(variant, model_config, config)
    splits = {d.subject_id: stratified_split(d, tcfg.test_fraction, tcfg.seed) for d in domains}
    cache = {} if pretrained is None else pretrained
    result = ExperimentResult(variant)
    for tgt in domains:
        for src in domains:
            if src is tgt:
                continue
            sid, tid = src.subject_id, tgt.subject_id
            try:
                key = (repr(mcfg), sid, tcfg.seed, tcfg.epochs_pretrain, tcfg.lr, tcfg.batch)
                if key not in cache:
                    cache[key] = pretrain_source(splits[sid][0], tcfg, mcfg, log)
                base = cache[key].model
                tgt_train, tgt_test = splits[tid]
                with warnings.catch_warnings():
                    warnings.simplefilter("error", RuntimeWarning)
                    adapted = transfer_adapt(base, splits[sid][0], tgt_train, tcfg, log)
                    acc = evaluate(adapted.model, tgt_test)
                result.runs.append(RunRecord(tid, sid, tcfg.seed, acc, adapted.ce[-1], adapted.mmd[-1],
                                             adapted.epochs_run, first_mmd=adapted.mmd[0]))
            except (TrainingError, DataError, ConfigError, RuntimeWarning, FloatingPointError) as exc:
                result.failures.append((tid, sid, tcfg.seed, f"{type(exc).__name__}: {exc}"))
                if log:
                    log(f"pair {sid}->{tid} failed: {exc}")
    return result


def run_baselines(domains: list[SubjectDomain], config: TransferConfig, model_config: ModelConfig,
                  log: Callable[[str], None] | None = None,
                  pretrained: dict | None = None) -> dict[str, ExperimentResult]:
    cache = {} if pretrained is None else pretrained
    return {v: run_one_to_one(domains, config, model_config, v, log, cache)
            for v in ("source_only", "nonatt")}


def bench(seeds, config: TransferConfig, model_config: ModelConfig, synth: SynthConfig | None = None,
          dataset: list[SubjectDomain] | None = None, variants=VARIANTS,
          log: Callable[[str], None] | None = None) -> dict[str, ExperimentResult]:
    """One-to-one sweep for every variant and seed.

    Without ``dataset`` the synthetic subjects are regenerated from each seed.
    Variants sharing a source network reuse one pretraining per seed.
    """
    if dataset is None and synth is None:
        synth = SynthConfig()
    merged = {v: ExperimentResult(v) for v in variants}
    for seed in seeds:
        tcfg = replace(config, seed=seed)
        domains = dataset if dataset is not None else synth_subjects(
            synth.n_subjects, synth.n_per_subject, synth.shift, seed, model_config.frames,
            model_config.grid, model_config.in_channels, model_config.n_classes, synth.noise)
        cache: dict = {}
        for v in variants:
            res = run_one_to_one(domains, tcfg, model_config, v, log, cache)
            merged[v].runs.extend(res.runs)
            merged[v].failures.extend(res.failures)
            if log:
                log(f"seed {seed} {v}: mean {res.mean_accuracy():.2f} over {len(res.runs)} runs")
    return merged


# ---------------------------------------------------------------- persistence


def results_csv(runs: list[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in runs:
        w.writerow(r.row())
    return buf.getvalue()


def summary_csv(runs: list[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for tid, mean, std, n in summarize(runs):
        w.writerow([tid, repr(mean), repr(std), str(n)])
    return buf.getvalue()


def failures_csv(failures: list[tuple[str, str, int, str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("target_id", "source_id", "seed", "error"))
    w.writerows(failures)
    return buf.getvalue()


def read_results_csv(path) -> list[RunRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise DataError(f"{path}: columns {reader.fieldnames} do not match {RESULT_COLUMNS}")
        return [RunRecord(r["target_id"], r["source_id"], int(r["seed"]), float(r["accuracy"]),
                          float(r["final_ce"]), float(r["final_mmd"]), int(r["epochs_run"])) for r in reader]


def format_table(results: dict[str, ExperimentResult]) -> str:
    """Aligned text table: one row per target, one Mean/STD column per variant."""
    variants = list(results)
    per = {v: {tid: (m, s) for tid, m, s, _ in results[v].summary()} for v in variants}
    targets = []
    for v in variants:
        for tid in per[v]:
            if tid not in targets:
                targets.append(tid)
    rows = [["Target"] + variants]
    for tid in targets:
        rows.append([tid] + [f"{per[v][tid][0]:.2f}/{per[v][tid][1]:.2f}" if tid in per[v] else "failed"
                             for v in variants])
    rows.append(["Mean"] + [f"{results[v].mean_accuracy():.2f}" for v in variants])
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
                     for r in rows) + "\n"


def write_results(outdir, results: dict[str, ExperimentResult]) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for variant, res in results.items():
        for name, text in ((f"results_{variant}.csv", results_csv(res.runs)),
                           (f"summary_{variant}.csv", summary_csv(res.runs)),
                           (f"failures_{variant}.csv", failures_csv(res.failures))):
            (outdir / name).write_text(text)
            written.append(outdir / name)
    (outdir / "table.txt").write_text(format_table(results))
    written.append(outdir / "table.txt")
    return written
