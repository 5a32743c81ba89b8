"""Evaluation: accuracy, User Request Score, multi-seed aggregation.

The request score asks: of the slots users requested, how many did the very
next system message answer? A predicted label answers slot s when it contains
an act a(s) whose type is in the configured answer set.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import OOV_INDEX
from .errors import ContractError, DomainError
from .model import forward_batch

DEFAULT_ANSWER_ACTS = frozenset({"inform", "offer"})


@dataclass
class UrsReport:
    requests_total: int
    requests_answered: int

    def __post_init__(self):
        if self.requests_answered > self.requests_total:
            raise ContractError("answered count exceeds total requests")

    @property
    def score(self):
        if self.requests_total == 0:
            return None
        return 100.0 * self.requests_answered / self.requests_total

    @property
    def formatted(self):
        return "n/a" if self.score is None else f"{self.score:.3f}"


def label_answers(label, slot, answer_acts=DEFAULT_ANSWER_ACTS):
    parts = label.split("+")
    return any(f"{act}({slot})" in parts for act in answer_acts)


def urs(samples, predictions, answer_acts=DEFAULT_ANSWER_ACTS):
    """Score predicted labels against the user requests they should answer.

    `samples` expose .key and .request_slots (corpus samples and prepared
    training samples both do); `predictions` maps sample key to a canonical
    label string and must cover every sample.
    """
    total = answered = 0
    for sample in samples:
        slots = sample.request_slots
        if not slots:
            continue
        if sample.key not in predictions:
            raise ContractError(f"no prediction for evaluated sample {sample.key}")
        predicted = predictions[sample.key]
        for slot in slots:
            total += 1
            if label_answers(predicted, slot, answer_acts):
                answered += 1
    return UrsReport(requests_total=total, requests_answered=answered)


def accuracy(samples, predictions):
    if not samples:
        raise ContractError("accuracy over an empty sample list")
    hits = 0
    for sample in samples:
        if sample.key not in predictions:
            raise ContractError(f"no prediction for evaluated sample {sample.key}")
        hits += predictions[sample.key] == sample.label
    return hits / len(samples)


def relative_improvement(candidate, baseline):
    if baseline <= 0:
        raise DomainError(f"relative improvement needs a positive baseline, got {baseline}")
    return 100.0 * (candidate - baseline) / baseline


def aggregate_runs(scores):
    """Mean and sample standard deviation (n-1 denominator; 0 for a single run)."""
    scores = list(scores)
    if not scores:
        raise ContractError("aggregate_runs over an empty score list")
    mean = sum(scores) / len(scores)
    if len(scores) == 1:
        return mean, 0.0
    var = sum((s - mean) ** 2 for s in scores) / (len(scores) - 1)
    return mean, math.sqrt(var)


def format_mean_std(mean, std):
    return f"{mean:.3f} ± {std:.3f}"


# -- model-in-the-loop evaluation --------------------------------------------------


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    urs: UrsReport
    predictions: dict

    @property
    def early_stop_score(self):
        # dev URS drives early stopping; accuracy stands in when the split
        # has no requests at all
        return self.urs.score if self.urs.score is not None else 100.0 * self.accuracy


def predict_labels(config, params, arrays, vocab, batch_size=256):
    """Argmax labels for every sample in the prepared arrays."""
    labels = []
    for start in range(0, arrays.size, batch_size):
        batch = arrays.take(np.arange(start, min(start + batch_size, arrays.size)))
        probs = forward_batch(config, params, **batch.model_inputs()).data
        labels.extend(vocab.label_for(int(i)) for i in np.argmax(probs, axis=1))
    return labels


def evaluate_split(config, params, samples, arrays, vocab, answer_acts=DEFAULT_ANSWER_ACTS,
                   class_weights=None, batch_size=256):
    """Loss (in-vocab samples only), accuracy, and request score for a split."""
    if len(samples) != arrays.size:
        raise ContractError(
            f"{len(samples)} samples but {arrays.size} prepared rows"
        )
    loss_num = 0.0
    loss_den = 0.0
    labels = []
    for start in range(0, arrays.size, batch_size):
        idx = np.arange(start, min(start + batch_size, arrays.size))
        batch = arrays.take(idx)
        probs = forward_batch(config, params, **batch.model_inputs())
        labels.extend(vocab.label_for(int(i)) for i in np.argmax(probs.data, axis=1))
        live = batch.targets != OOV_INDEX
        if live.any():
            sub = probs.data[live]
            loss = T.cross_entropy_mean(T.constant(sub), batch.targets[live], class_weights)
            weight = float(live.sum()) if class_weights is None else float(
                np.asarray(class_weights)[batch.targets[live]].sum()
            )
            loss_num += float(loss.data) * weight
            loss_den += weight
    predictions = {sample.key: label for sample, label in zip(samples, labels)}
    return EvalResult(
        loss=loss_num / loss_den if loss_den else float("nan"),
        accuracy=accuracy(samples, predictions),
        urs=urs(samples, predictions, answer_acts),
        predictions=predictions,
    )


# -- metrics records ---------------------------------------------------------------


def metrics_record(run_id, seed, epoch, split, loss, acc, urs_score):
    return {
        "run_id": run_id,
        "seed": seed,
        "epoch": epoch,
        "split": split,
        "loss": loss,
        "accuracy": acc,
        "urs": urs_score,
    }


def append_metrics(path, records):
    with open(path, "a", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_metrics(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
