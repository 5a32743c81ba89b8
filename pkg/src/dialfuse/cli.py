"""Command-line surface: synth, train, eval, gradcheck, inspect, summarize.

Configuration is plain `key = value` lines (# comments allowed); command-line
`key=value` overrides win over the file. All defaults in one place:

  synth     every SynthSpec field (train_dialogues 500, dev_dialogues 100,
            test_dialogues 100, turns_per_dialogue 10, n_slots 4,
            text_layers 3, speech_layers 3, speech_frames 8, text_tokens 12,
            dim 16, audio_info_bits 0.5, noise_std 0.1, seed 0)
  train     every TrainConfig field (epochs 50, batch_size 32,
            learning_rate 1e-4, optimizer adam, weighted_loss false,
            early_stop_patience 5, seed 0) plus heads 4 and
            selected_speech_layers last (A2 only)
  eval      split test, answer_acts inform,offer

Artifacts are timestamp-free, so rerunning a command with identical inputs
reproduces identical files.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import tensor as T
from .corpus import LabelVocab, read_corpus
from .embx import ActivationStack
from .errors import DialfuseError
from .evaluation import (
    DEFAULT_ANSWER_ACTS,
    aggregate_runs,
    evaluate_split,
    format_mean_std,
)
from .model import (
    ArchitectureConfig,
    FusionParams,
    forward,
    load_checkpoint,
    save_checkpoint,
)
from .synth import SynthSpec, generate
from .training import TrainConfig, build_batch_arrays, load_prepared, train

GRADCHECK_DIMS = {
    # (text_dim, heads, speech_frames, text_tokens, layers, classes)
    "small": (8, 2, 3, 4, 2, 3),
    "tiny": (4, 1, 2, 2, 1, 2),
}


class UsageError(Exception):
    pass


def parse_config_file(path):
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def parse_overrides(pairs):
    values = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"override {pair!r} is not of the form key=value")
        key, value = pair.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _coerce(raw, kind, key):
    if kind is bool:
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise UsageError(f"{key}: expected {kind.__name__}, got {raw!r}")


def build_dataclass(cls, values, extra=()):
    """Instantiate a config dataclass from string values, rejecting unknown
    keys so typos fail loudly."""
    fields = {f.name: f.type for f in dataclasses.fields(cls)}
    by_name = {"int": int, "float": float, "bool": bool, "str": str}
    kwargs = {}
    for key, raw in values.items():
        if key in extra:
            continue
        if key not in fields:
            raise UsageError(f"unknown configuration key {key!r} for {cls.__name__}")
        kind = fields[key]
        if isinstance(kind, str):
            kind = by_name.get(kind, str)
        kwargs[key] = raw if not isinstance(raw, str) else _coerce(raw, kind, key)
    return cls(**kwargs)


def gather_values(args, extra=()):
    values = {}
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    values.update(parse_overrides(getattr(args, "overrides", []) or []))
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    if getattr(args, "weighted_loss", False):
        values["weighted_loss"] = "true"
    return values


def parse_answer_acts(raw):
    acts = frozenset(a.strip() for a in raw.split(",") if a.strip())
    if not acts:
        raise UsageError("answer-acts must name at least one act type")
    return acts


# -- commands --------------------------------------------------------------------


def cmd_synth(args):
    spec = build_dataclass(SynthSpec, gather_values(args))
    result = generate(spec, args.out)
    print(f"corpus   {result['corpus']}")
    print(f"manifest {result['manifest']}")
    print(f"policy   {result['policy']}")
    for split in ("train", "dev", "test"):
        print(f"samples  {split} {result['samples'][split]}")
    print(f"labels   {' '.join(result['labels'])}")
    return 0


def _speech_layer_selection(raw, speech_layers):
    if raw == "last":
        return (speech_layers - 1,)
    return tuple(int(part) for part in raw.split(","))


def _arch_from_data(variant, sample, n_classes, heads, selection_raw):
    text_layers, _, text_dim = sample.text.values.shape
    kwargs = dict(
        variant=variant,
        n_classes=n_classes,
        text_layers=text_layers,
        text_dim=text_dim,
        heads=heads,
    )
    if variant in ("A2", "A4"):
        if sample.speech is None:
            raise UsageError(f"{variant} requires speech activations in the manifest")
        speech_layers, _, speech_dim = sample.speech.values.shape
        kwargs.update(speech_layers=speech_layers, speech_dim=speech_dim)
        if variant == "A2":
            kwargs["selected_speech_layers"] = _speech_layer_selection(
                selection_raw, speech_layers
            )
    return ArchitectureConfig(**kwargs)


def cmd_train(args):
    values = gather_values(args)
    heads = int(values.pop("heads", 4))
    selection_raw = values.pop("selected_speech_layers", "last")
    config = build_dataclass(TrainConfig, values)

    corpus_path = os.path.join(args.data, "corpus.jsonl")
    manifest_path = os.path.join(args.data, "manifest.jsonl")
    dialogues = read_corpus(corpus_path)
    vocab = LabelVocab.from_dialogues(dialogues)
    variant = args.arch.upper()
    with_speech = variant in ("A2", "A4")
    splits = load_prepared(corpus_path, manifest_path, vocab, with_speech=with_speech)
    if "train" not in splits or "dev" not in splits:
        raise UsageError("data must provide train and dev splits")

    arch = _arch_from_data(variant, splits["train"][0], vocab.size, heads, selection_raw)
    answer_acts = parse_answer_acts(args.answer_acts)
    run_id = args.run_id or f"{variant.lower()}-seed{config.seed}"

    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.jsonl")
    if os.path.exists(metrics_path):
        os.unlink(metrics_path)  # rerun reproduces, never appends

    result = train(
        arch,
        vocab,
        splits["train"],
        splits["dev"],
        config,
        run_id=run_id,
        metrics_path=metrics_path,
        answer_acts=answer_acts,
    )
    save_checkpoint(os.path.join(args.out, "model.ckpt"), arch, result.params)
    with open(os.path.join(args.out, "vocab.json"), "w", encoding="utf-8") as fh:
        fh.write(vocab.to_json() + "\n")
    run_meta = {
        "run_id": run_id,
        "variant": variant,
        "seed": config.seed,
        "source": os.path.basename(os.path.normpath(args.data)),
        "use_asr": bool(args.use_asr),
        "answer_acts": sorted(answer_acts),
        "train_config": dataclasses.asdict(config),
        "architecture": json.loads(arch.to_json()),
        "best_epoch": result.best_epoch,
        "best_dev_score": result.best_dev_score,
        "epochs_run": len(result.history),
        "stopped_early": result.stopped_early,
    }
    with open(os.path.join(args.out, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(run_meta, fh, sort_keys=True, indent=1)
        fh.write("\n")

    for h in result.history:
        dev_urs = "n/a" if h["dev_urs"] is None else f"{h['dev_urs']:.3f}"
        print(
            f"epoch {h['epoch']:3d} train_loss {h['train_loss']:.6f} "
            f"dev_acc {h['dev_accuracy']:.4f} dev_urs {dev_urs}"
        )
    print(f"best epoch {result.best_epoch} dev score {result.best_dev_score:.3f}")
    print(f"checkpoint {os.path.join(args.out, 'model.ckpt')}")
    return 0


def cmd_eval(args):
    ckpt_path = os.path.join(args.run, "model.ckpt")
    vocab_path = os.path.join(args.run, "vocab.json")
    arch, params = load_checkpoint(ckpt_path)
    with open(vocab_path, "r", encoding="utf-8") as fh:
        vocab = LabelVocab.from_json(fh.read())

    corpus_path = os.path.join(args.data, "corpus.jsonl")
    manifest_path = os.path.join(args.data, "manifest.jsonl")
    splits = load_prepared(
        corpus_path, manifest_path, vocab, with_speech=arch.uses_speech
    )
    if args.split not in splits:
        raise UsageError(f"split {args.split!r} not present in {corpus_path}")
    samples = splits[args.split]
    arrays = build_batch_arrays(arch, samples)
    answer_acts = parse_answer_acts(args.answer_acts)
    result = evaluate_split(arch, params, samples, arrays, vocab, answer_acts)

    run_meta = {}
    run_json = os.path.join(args.run, "run.json")
    if os.path.exists(run_json):
        with open(run_json, "r", encoding="utf-8") as fh:
            run_meta = json.load(fh)
    payload = {
        "run_id": run_meta.get("run_id", os.path.basename(os.path.normpath(args.run))),
        "variant": arch.variant,
        "seed": run_meta.get("seed"),
        "source": run_meta.get("source"),
        "split": args.split,
        "loss": result.loss,
        "accuracy": result.accuracy,
        "urs": result.urs.score,
        "requests_answered": result.urs.requests_answered,
        "requests_total": result.urs.requests_total,
    }
    out_path = os.path.join(args.run, f"eval_{args.split}.json")
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(
        f"{args.split}: loss {result.loss:.6f} accuracy {result.accuracy:.4f} "
        f"urs {result.urs.formatted} "
        f"({result.urs.requests_answered}/{result.urs.requests_total} requests)"
    )
    return 0


def cmd_gradcheck(args):
    text_dim, heads, t1, t2, layers, n_classes = GRADCHECK_DIMS[args.dims]
    arch = ArchitectureConfig(
        variant="A4",
        n_classes=n_classes,
        text_layers=layers,
        text_dim=text_dim,
        heads=heads,
        speech_layers=layers,
        speech_dim=text_dim,
    )
    rng = np.random.default_rng(args.seed or 0)
    params = FusionParams.init(arch, rng)
    text = ActivationStack(
        values=rng.standard_normal((layers, t2, text_dim)).astype(np.float32),
        frames_valid=t2,
    )
    speech = ActivationStack(
        values=rng.standard_normal((layers, t1, text_dim)).astype(np.float32),
        frames_valid=t1,
    )

    def loss_fn():
        probs = forward(arch, params, text, speech, da_pred_position=t2 - 1)
        return T.cross_entropy(probs, n_classes - 1)

    worst = T.grad_check(loss_fn, list(params.named_parameters().values()))
    passed = worst < 1e-3
    print(f"max relative error {worst:.3e} (threshold 1.0e-03): {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 1


def cmd_inspect(args):
    arch, params = load_checkpoint(os.path.join(args.run, "model.ckpt"))
    print(f"variant {arch.variant}  classes {arch.n_classes}  heads {arch.heads}")
    for modality, logits in (
        ("text", params.text_layer_logits),
        ("speech", params.speech_layer_logits),
    ):
        if logits is None:
            print(f"{modality} layer weights: none (not learned by {arch.variant})")
            continue
        weights = T.softmax(T.constant(logits.data), axis=-1).data
        rendered = " ".join(f"{w:.4f}" for w in weights)
        print(f"{modality} layer weights: {rendered}")
    if arch.variant == "A2":
        print(f"selected speech layers: {list(arch.selected_speech_layers)}")
    return 0


def cmd_summarize(args):
    rows = {}
    for dirpath, _, filenames in sorted(os.walk(args.runs)):
        for name in sorted(filenames):
            if not (name.startswith("eval_") and name.endswith(".json")):
                continue
            with open(os.path.join(dirpath, name), "r", encoding="utf-8") as fh:
                payload = json.load(fh)
            key = (payload["variant"], payload.get("source") or "-", payload["split"])
            rows.setdefault(key, {"urs": [], "accuracy": []})
            if payload["urs"] is not None:
                rows[key]["urs"].append(payload["urs"])
            rows[key]["accuracy"].append(payload["accuracy"])
    if not rows:
        print(f"no eval_*.json records under {args.runs}", file=sys.stderr)
        return 1
    print(f"{'arch':<6} {'source':<12} {'split':<6} {'runs':>4}  {'URS':<16} accuracy")
    for (variant, source, split), scores in sorted(rows.items()):
        n = len(scores["accuracy"])
        urs_cell = (
            format_mean_std(*aggregate_runs(scores["urs"])) if scores["urs"] else "n/a"
        )
        acc_cell = format_mean_std(*aggregate_runs([100 * a for a in scores["accuracy"]]))
        print(f"{variant:<6} {source:<12} {split:<6} {n:>4}  {urs_cell:<16} {acc_cell}")
    return 0


# -- wiring ----------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dialfuse",
        description="dialogue-policy training over frozen text/speech activations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the seed")

    p = sub.add_parser("synth", help="generate a planted-policy synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("overrides", nargs="*", help="key=value spec overrides")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one architecture on one dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory (corpus + manifest)")
    p.add_argument("--arch", required=True, choices=["a1", "a2", "a3", "a4"])
    p.add_argument("--out", required=True, help="run directory for artifacts")
    p.add_argument("--run-id", default=None)
    p.add_argument("--use-asr", action="store_true",
                   help="record that upstream text extraction used ASR transcripts")
    p.add_argument("--weighted-loss", action="store_true")
    p.add_argument("--answer-acts", default="inform,offer")
    p.add_argument("overrides", nargs="*", help="key=value training overrides")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained run on a split")
    p.add_argument("--run", required=True, help="run directory holding model.ckpt")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "dev", "test"])
    p.add_argument("--answer-acts", default="inform,offer")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify model gradients by finite differences")
    p.add_argument("--dims", default="small", choices=sorted(GRADCHECK_DIMS))
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="dump learned per-layer weights of a checkpoint")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("summarize", help="aggregate eval records into a summary table")
    p.add_argument("runs", help="directory tree containing run directories")
    p.set_defaults(func=cmd_summarize)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DialfuseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
