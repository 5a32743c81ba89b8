"""Deterministic mini-batch training over frozen activation stacks.

One pseudo-random generator (PCG64, explicitly seeded) drives parameter
init and shuffle order, in a fixed draw sequence, so one seed gives one
bit-identical training trajectory.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus import OOV_INDEX, drop_welcome_samples, read_corpus
from .embx import read_activation, read_manifest
from .errors import ContractError, ValidationError
from .evaluation import (
    DEFAULT_ANSWER_ACTS,
    append_metrics,
    evaluate_split,
    metrics_record,
)
from .model import FusionParams, forward_batch

OPTIMIZERS = ("adam", "sgd")


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    weighted_loss: bool = False
    early_stop_patience: int = 5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        # 0 is allowed as a degenerate diagnostic (no-op steps)
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be non-negative")
        if self.epochs < 1:
            raise ValidationError("epochs must be at least 1")
        if self.early_stop_patience < 0:
            raise ValidationError("early_stop_patience must be non-negative")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"optimizer must be one of {OPTIMIZERS}")


class Adam:
    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = learning_rate
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.steps = 0
        self.slots = {}

    def step(self, named_params):
        self.steps += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in named_params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(np.float32, copy=False)
            if name not in self.slots:
                self.slots[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
            m, v = self.slots[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            m_hat = m / (1 - b1 ** self.steps)
            v_hat = v / (1 - b2 ** self.steps)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


class Sgd:
    def __init__(self, learning_rate):
        self.lr = learning_rate

    def step(self, named_params):
        for p in named_params.values():
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad.astype(np.float32, copy=False)


def make_optimizer(config):
    return Adam(config.learning_rate) if config.optimizer == "adam" else Sgd(config.learning_rate)


# -- dataset preparation ------------------------------------------------------------


@dataclass
class PreparedSample:
    """One decision with its frozen encoder inputs attached."""

    key: tuple  # (dialogue_id, turn_index)
    label: str
    target: int  # vocab index, OOV_INDEX when unseen in training
    request_slots: tuple
    text: object  # ActivationStack
    da_pred_position: int
    speech: object | None = None


@dataclass
class BatchArrays:
    """Padded dense arrays for one split, sliceable for mini-batching."""

    targets: np.ndarray
    features: np.ndarray | None = None
    text: np.ndarray | None = None
    text_mask: np.ndarray | None = None
    speech: np.ndarray | None = None
    speech_mask: np.ndarray | None = None

    @property
    def size(self):
        return self.targets.shape[0]

    def take(self, idx):
        pick = lambda a: None if a is None else a[idx]
        return BatchArrays(
            targets=self.targets[idx],
            features=pick(self.features),
            text=pick(self.text),
            text_mask=pick(self.text_mask),
            speech=pick(self.speech),
            speech_mask=pick(self.speech_mask),
        )

    def model_inputs(self):
        return {
            "features": self.features,
            "text": self.text,
            "text_mask": self.text_mask,
            "speech": self.speech,
            "speech_mask": self.speech_mask,
        }


def _pad_stacks(stacks):
    frames = max(s.values.shape[1] for s in stacks)
    layers, _, dim = stacks[0].values.shape
    values = np.zeros((len(stacks), layers, frames, dim), np.float32)
    mask = np.zeros((len(stacks), frames), bool)
    for i, stack in enumerate(stacks):
        t = stack.values.shape[1]
        values[i, :, :t] = stack.values
        mask[i, : stack.frames_valid] = True
    return values, mask


def build_batch_arrays(config, samples):
    """Dense arrays for the given architecture; activations stay constants."""
    if not samples:
        raise ContractError("cannot build batch arrays from zero samples")
    targets = np.array([s.target for s in samples], np.int64)
    if config.variant in ("A1", "A2"):
        from .model import build_features

        feats = [
            build_features(config, s.text, s.speech, s.da_pred_position) for s in samples
        ]
        return BatchArrays(targets=targets, features=np.stack(feats))
    text, text_mask = _pad_stacks([s.text for s in samples])
    if config.variant == "A3":
        return BatchArrays(targets=targets, text=text, text_mask=text_mask)
    missing = [s.key for s in samples if s.speech is None]
    if missing:
        raise ContractError(f"{config.variant} needs speech activations; missing for {missing[0]}")
    speech, speech_mask = _pad_stacks([s.speech for s in samples])
    return BatchArrays(
        targets=targets, text=text, text_mask=text_mask, speech=speech, speech_mask=speech_mask
    )


def load_prepared(corpus_path, manifest_path, vocab, root=None, with_speech=True):
    """Join corpus samples with their activation files.

    Returns {split: [PreparedSample]}. Record ids follow the
    "<dialogue_id>:<turn_index>:<modality>" convention; text records carry
    the decision-marker position.
    """
    root = root or os.path.dirname(os.path.abspath(manifest_path))
    records = {}
    for record in read_manifest(manifest_path):
        records[(record.dialogue_id, record.turn_index, record.modality)] = record

    def load(record):
        path = record.path if os.path.isabs(record.path) else os.path.join(root, record.path)
        return read_activation(path)

    splits = {}
    dialogues = read_corpus(corpus_path)
    for sample in drop_welcome_samples(dialogues):
        did, tidx = sample.key
        text_record = records.get((did, tidx, "text"))
        if text_record is None:
            raise ContractError(f"no text activation record for sample {sample.key}")
        if text_record.da_pred_position is None:
            raise ContractError(f"text record for {sample.key} lacks da_pred_position")
        speech_record = records.get((did, tidx, "speech")) if with_speech else None
        prepared = PreparedSample(
            key=sample.key,
            label=sample.label,
            target=vocab.lookup(sample.label),
            request_slots=sample.request_slots,
            text=load(text_record),
            da_pred_position=text_record.da_pred_position,
            speech=load(speech_record) if speech_record else None,
        )
        splits.setdefault(sample.dialogue.split, []).append(prepared)
    return splits


def class_weight_vector(targets, n_classes):
    """Inverse-frequency weights N/(C * count_c); classes absent from the
    split get weight 0, which the loss never touches."""
    live = targets[targets != OOV_INDEX]
    counts = np.bincount(live, minlength=n_classes).astype(np.float64)
    weights = np.zeros(n_classes, np.float32)
    seen = counts > 0
    weights[seen] = (live.size / (n_classes * counts[seen])).astype(np.float32)
    return weights


# -- the loop -----------------------------------------------------------------------


@dataclass
class TrainResult:
    params: FusionParams
    history: list  # per-epoch {epoch, train_loss, train_accuracy, train_urs, dev_*}
    best_epoch: int
    best_dev_score: float
    stopped_early: bool
    metrics: list = field(default_factory=list)


def _snapshot(named):
    return {name: p.data.copy() for name, p in named.items()}


def _restore(named, snapshot):
    for name, p in named.items():
        p.data = snapshot[name].copy()


def train(
    arch_config,
    vocab,
    train_samples,
    dev_samples,
    config,
    run_id="run",
    metrics_path=None,
    answer_acts=DEFAULT_ANSWER_ACTS,
):
    """Train FusionParams; returns the best-dev checkpoint and epoch history."""
    if not train_samples:
        raise ContractError("training split is empty")
    if not dev_samples:
        raise ContractError("dev split is empty")

    rng = np.random.Generator(np.random.PCG64(config.seed))
    params = FusionParams.init(arch_config, rng)
    named = params.named_parameters()

    fit_samples = [s for s in train_samples if s.target != OOV_INDEX]
    if not fit_samples:
        raise ContractError("no in-vocabulary training samples")
    fit_arrays = build_batch_arrays(arch_config, fit_samples)
    train_arrays = build_batch_arrays(arch_config, train_samples)
    dev_arrays = build_batch_arrays(arch_config, dev_samples)

    class_weights = (
        class_weight_vector(fit_arrays.targets, arch_config.n_classes)
        if config.weighted_loss
        else None
    )
    optimizer = make_optimizer(config)

    history = []
    metrics = []
    best = {"epoch": 0, "score": -np.inf, "snapshot": _snapshot(named)}
    patience_left = config.early_stop_patience
    stopped_early = False

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(fit_arrays.size)
        for start in range(0, fit_arrays.size, config.batch_size):
            batch = fit_arrays.take(order[start : start + config.batch_size])
            for p in named.values():
                p.grad = None
            probs = forward_batch(arch_config, params, **batch.model_inputs())
            loss = T.cross_entropy_mean(probs, batch.targets, class_weights)
            loss.backward()
            optimizer.step(named)

        train_eval = evaluate_split(
            arch_config, params, train_samples, train_arrays, vocab, answer_acts, class_weights
        )
        dev_eval = evaluate_split(
            arch_config, params, dev_samples, dev_arrays, vocab, answer_acts, class_weights
        )
        history.append(
            {
                "epoch": epoch,
                "train_loss": train_eval.loss,
                "train_accuracy": train_eval.accuracy,
                "train_urs": train_eval.urs.score,
                "dev_loss": dev_eval.loss,
                "dev_accuracy": dev_eval.accuracy,
                "dev_urs": dev_eval.urs.score,
            }
        )
        metrics.append(
            metrics_record(run_id, config.seed, epoch, "train",
                           train_eval.loss, train_eval.accuracy, train_eval.urs.score)
        )
        metrics.append(
            metrics_record(run_id, config.seed, epoch, "dev",
                           dev_eval.loss, dev_eval.accuracy, dev_eval.urs.score)
        )

        score = dev_eval.early_stop_score
        if score > best["score"]:
            best = {"epoch": epoch, "score": score, "snapshot": _snapshot(named)}
            patience_left = config.early_stop_patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                stopped_early = True
                break

    _restore(named, best["snapshot"])
    if metrics_path:
        append_metrics(metrics_path, metrics)
    return TrainResult(
        params=params,
        history=history,
        best_epoch=best["epoch"],
        best_dev_score=best["score"],
        stopped_early=stopped_early,
        metrics=metrics,
    )
