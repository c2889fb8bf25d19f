"""Command-line pipeline: prepare, train, eval, bench, inspect-attention.

Every command writes a run manifest (resolved arguments, seed, input hashes)
into its output directory; ``rerun`` replays a manifest and, with the same
seed, reproduces the outputs byte for byte.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import autograd as ag
from .attention import WindowConfig
from .audio import (
    apply_cmvn,
    cmvn_stats,
    log_mel,
    make_synthetic_corpus,
    read_manifest,
    read_wav,
    validate_manifest,
)
from .benchmark import (
    DEFAULT_LADDER,
    SWEEP_SIZES,
    run_scaling,
    sweep_summary_text,
    window_sweep,
    write_scaling_csv,
    write_sweep_csv,
)
from .errors import ConfigError, DataError, NumericError
from .evaluation import beam_decode, bleu, corpus_wer, greedy_decode, wer, write_report
from .model import ModelConfig, load_checkpoint
from .text import Vocabulary, build_vocab
from .training import load_dataset, save_config, train, train_preset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

OUTPUT_ROOT_ENV = "S2T_LONGFORMER_OUT"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors map to 1."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


_current_argv = None


def write_run_manifest(out_dir, command, args_dict, seed, input_paths):
    """Deterministic record of one run: command, resolved args, the literal
    argv for replay, the seed, and content hashes of every input file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "args": {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(args_dict.items())},
        "argv": list(_current_argv) if _current_argv else [],
        "seed": seed,
        "input_hashes": {str(p): _sha256(p) for p in sorted(map(str, input_paths))},
        "version": __version__,
    }
    path = out_dir / "run_manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


# ----------------------------------------------------------------- prepare


def cmd_prepare(args):
    if args.synthetic:
        out_dir = Path(args.out) if args.out else _output_root() / "corpus"
        manifests = make_synthetic_corpus(out_dir, args.utts, args.test_utts,
                                          alphabet=args.alphabet, seed=args.seed)
        rows = read_manifest(manifests["train"])
        vocab = build_vocab([r.transcript for r in rows] + [r.translation for r in rows])
        vocab.save(out_dir / "vocab.txt")
        for path in manifests.values():
            validate_manifest(path)
        write_run_manifest(out_dir, "prepare", {
            "synthetic": True, "utts": args.utts, "test_utts": args.test_utts,
            "alphabet": args.alphabet, "out": str(out_dir),
        }, args.seed, [])
        print(f"corpus ready: {out_dir} ({args.utts} train / {args.test_utts} test utterances, "
              f"vocab size {vocab.size})")
        return EXIT_OK
    if not args.manifest:
        raise _UsageError("prepare: either --synthetic or --manifest is required")
    rows = validate_manifest(args.manifest)
    print(f"{args.manifest}: {len(rows)} rows valid")
    return EXIT_OK


# ----------------------------------------------------------------- train


def _model_config(args, vocab_size):
    window = None if args.dense_encoder else WindowConfig(args.window, args.dilation)
    if args.preset == "desk":
        return ModelConfig(
            vocab_size=vocab_size, encoder_layers=args.encoder_layers or 2,
            decoder_layers=args.decoder_layers or 2, heads=4, embed_dim=args.embed_dim or 64,
            ffn_dim=args.ffn_dim or 256, dropout=args.dropout, window=window,
            post_encoder_conv=args.post_conv,
        )
    return ModelConfig(
        vocab_size=vocab_size, encoder_layers=args.encoder_layers or 12,
        decoder_layers=args.decoder_layers or 6, heads=4, embed_dim=args.embed_dim or 256,
        ffn_dim=args.ffn_dim or 2048, dropout=args.dropout, window=window,
        post_encoder_conv=args.post_conv,
    )


def cmd_train(args):
    data_dir = Path(args.data)
    train_manifest = data_dir / "train.tsv"
    valid_manifest = data_dir / "test.tsv"
    vocab_path = data_dir / "vocab.txt"
    for p in (train_manifest, vocab_path):
        if not p.exists():
            raise DataError(f"missing {p}; run prepare first")
    vocab = Vocabulary.load(vocab_path)
    model_cfg = _model_config(args, vocab.size)
    train_cfg = train_preset(args.preset, args.task)
    if args.max_updates is not None:
        train_cfg.max_updates = args.max_updates
    if args.seed is not None:
        train_cfg.seed = args.seed
    if args.task == "st" and args.init_encoder is None:
        print("note: ST training without --init-encoder skips the pretrained-encoder transfer",
              file=sys.stderr)
    out_dir = Path(args.out) if args.out else _output_root() / f"train_{args.task}"
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(out_dir / "config.ini", model_cfg, train_cfg, args.task)
    inputs = [train_manifest, vocab_path]
    if valid_manifest.exists():
        inputs.append(valid_manifest)
    else:
        valid_manifest = None
    if args.init_encoder:
        inputs.append(Path(args.init_encoder))
    write_run_manifest(out_dir, "train", {
        "task": args.task, "data": str(data_dir), "preset": args.preset,
        "window": args.window, "dilation": args.dilation, "post_conv": args.post_conv,
        "dense_encoder": args.dense_encoder, "init_encoder": args.init_encoder,
        "max_updates": train_cfg.max_updates, "out": str(out_dir),
        "encoder_layers": model_cfg.encoder_layers, "decoder_layers": model_cfg.decoder_layers,
        "embed_dim": model_cfg.embed_dim, "ffn_dim": model_cfg.ffn_dim,
        "dropout": model_cfg.dropout,
    }, train_cfg.seed, inputs)
    last, best = train(
        model_cfg, train_cfg, train_manifest, valid_manifest, vocab, args.task,
        out_dir, init_encoder_from=args.init_encoder, resume_from=args.resume,
        model_seed=train_cfg.seed,
    )
    print(f"training done: last={last} best={best}")
    return EXIT_OK


# ----------------------------------------------------------------- eval


def cmd_eval(args):
    manifest_path = Path(args.manifest)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    model, _ = load_checkpoint(ckpt)
    vocab_path = manifest_path.parent / "vocab.txt"
    if args.vocab:
        vocab_path = Path(args.vocab)
    if not vocab_path.exists():
        raise DataError(f"vocabulary not found: {vocab_path}")
    vocab = Vocabulary.load(vocab_path)
    task = "asr" if args.metric == "wer" else "st"
    if args.task:
        task = args.task
    dataset = load_dataset(manifest_path, vocab, task)
    out_dir = Path(args.out) if args.out else _output_root() / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    hyps, refs = [], []
    for utt in dataset:
        if args.beam == 1:
            hyp = greedy_decode(model, utt.features, max_len=args.max_len)
        else:
            hyp = beam_decode(model, utt.features, beam=args.beam, max_len=args.max_len)[0]
        text = vocab.decode(hyp.tokens)
        hyps.append(text)
        refs.append(utt.reference)
        rows.append((utt.utt_id, text, utt.reference,
                     wer(text, utt.reference) if args.metric == "wer" else 0.0))
    if args.metric == "wer":
        corpus_value = corpus_wer(hyps, refs)
    else:
        corpus_value = bleu(hyps, refs)
        rows = [(uid, h, r, bleu([h], [r], smooth_add_one=True)) for (uid, h, r, _) in rows]
    report_path = out_dir / f"report_{args.metric}.tsv"
    write_report(report_path, rows, args.metric, corpus_value)
    write_run_manifest(out_dir, "eval", {
        "checkpoint": str(ckpt), "manifest": str(manifest_path), "metric": args.metric,
        "beam": args.beam, "max_len": args.max_len, "out": str(out_dir), "task": task,
    }, 0, [ckpt, manifest_path, vocab_path])
    print(f"{args.metric} = {corpus_value:.4f} over {len(rows)} utterances -> {report_path}")
    return EXIT_OK


# ----------------------------------------------------------------- bench


def cmd_bench(args):
    out_dir = Path(args.out) if args.out else _output_root() / "bench"
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.sweep:
        data_dir = Path(args.data) if args.data else None
        if data_dir is None:
            raise _UsageError("bench --sweep needs --data pointing at a prepared corpus")
        rows = window_sweep(data_dir / "train.tsv", data_dir / "test.tsv",
                            sizes=tuple(args.sizes), updates=args.updates, seed=args.seed)
        write_sweep_csv(rows, out_dir / "window_sweep.csv")
        summary = sweep_summary_text(rows)
        (out_dir / "window_sweep.txt").write_text(summary, encoding="utf-8")
        write_run_manifest(out_dir, "bench", {
            "sweep": True, "sizes": list(args.sizes), "updates": args.updates,
            "data": str(data_dir), "out": str(out_dir),
        }, args.seed, [data_dir / "train.tsv", data_dir / "test.tsv"])
        print(summary, end="")
        return EXIT_OK
    report = run_scaling(patterns=tuple(args.patterns), n_ladder=tuple(args.ladder),
                         w=args.window, repeats=args.repeats, seed=args.seed)
    write_scaling_csv(report, out_dir / "scaling.csv")
    summary = report.summary_text()
    (out_dir / "scaling.txt").write_text(summary, encoding="utf-8")
    write_run_manifest(out_dir, "bench", {
        "sweep": False, "patterns": list(args.patterns), "ladder": list(args.ladder),
        "window": args.window, "repeats": args.repeats, "out": str(out_dir),
    }, args.seed, [])
    print(summary, end="")
    return EXIT_OK


# ----------------------------------------------------------------- inspect


def cmd_inspect_attention(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    model, _ = load_checkpoint(ckpt)
    cfg = model.cfg
    if args.component == "encoder" and not (0 <= args.layer < cfg.encoder_layers):
        raise _UsageError(f"encoder layer {args.layer} out of range [0, {cfg.encoder_layers})")
    if args.component == "decoder" and not (0 <= args.layer < cfg.decoder_layers):
        raise _UsageError(f"decoder layer {args.layer} out of range [0, {cfg.decoder_layers})")
    if not 0 <= args.head < cfg.heads:
        raise _UsageError(f"head {args.head} out of range [0, {cfg.heads})")
    samples = read_wav(args.wav)
    feats = log_mel(samples).frames
    mean, std = cmvn_stats([feats])
    feats = apply_cmvn(feats, mean, std)
    sink = {}
    out_dir = Path(args.out) if args.out else _output_root() / "inspect"
    out_dir.mkdir(parents=True, exist_ok=True)
    with ag.no_grad():
        enc = model.encode(feats, attn_sink=sink)
        if args.component == "decoder":
            if not args.text:
                raise _UsageError("decoder inspection needs --text for teacher forcing")
            vocab_path = Path(args.vocab) if args.vocab else None
            if vocab_path is None or not vocab_path.exists():
                raise DataError("decoder inspection needs --vocab pointing at vocab.txt")
            vocab = Vocabulary.load(vocab_path)
            model.decode_full(vocab.encode(args.text)[:-1], enc, attn_sink=sink)
    key = ("encoder", args.layer) if args.component == "encoder" else ("decoder_self", args.layer)
    weights = sink[key][args.head]  # encoder: [n, w+1]; decoder: [T, T]
    out_path = out_dir / f"attention_{args.component}_l{args.layer}_h{args.head}.csv"
    with open(out_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        for i, row in enumerate(weights):
            writer.writerow([i] + [repr(float(x)) for x in row])
    if args.component == "encoder" and cfg.window is not None:
        band = cfg.window.window_size + 1
        if weights.shape[1] != band:
            raise NumericError(f"banded dump has {weights.shape[1]} slots per row, expected {band}")
        sums = weights.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-5):
            raise NumericError("attention rows do not sum to 1")
    write_run_manifest(out_dir, "inspect-attention", {
        "checkpoint": str(ckpt), "wav": str(args.wav), "layer": args.layer,
        "head": args.head, "component": args.component, "out": str(out_dir),
    }, 0, [ckpt, Path(args.wav)])
    print(f"attention dump -> {out_path} ({weights.shape[0]} rows, {weights.shape[1]} slots/row)")
    return EXIT_OK


# ----------------------------------------------------------------- rerun


def cmd_rerun(args):
    with open(args.manifest, encoding="utf-8") as f:
        manifest = json.load(f)
    argv = list(manifest.get("argv", []))
    if not argv:
        raise DataError(f"{args.manifest}: manifest records no argv to replay")
    if args.out:
        if "--out" in argv:
            argv[argv.index("--out") + 1] = args.out
        else:
            argv.extend(["--out", args.out])
    return main(argv)


# ----------------------------------------------------------------- parser


def _int_list(text):
    return [int(x) for x in text.split(",") if x]


def build_parser():
    parser = _Parser(prog="s2t-longformer",
                     description="Sliding-window speech-to-text pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="generate the synthetic tone corpus or validate a manifest")
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--utts", type=int, default=200)
    p.add_argument("--test-utts", type=int, default=32)
    p.add_argument("--alphabet", default="abcdefgh")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", help="existing manifest to validate")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="train ASR or ST")
    p.add_argument("task", choices=["asr", "st"])
    p.add_argument("--data", required=True, help="corpus directory from prepare")
    p.add_argument("--preset", choices=["paper", "desk"], default="desk")
    p.add_argument("--window", type=int, default=8)
    p.add_argument("--dilation", type=int, default=1)
    p.add_argument("--dense-encoder", action="store_true")
    p.add_argument("--post-conv", action="store_true")
    p.add_argument("--init-encoder", help="ASR checkpoint whose encoder seeds this model")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--max-updates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--encoder-layers", type=int)
    p.add_argument("--decoder-layers", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--ffn-dim", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="decode a manifest and score it")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--metric", choices=["wer", "bleu"], default="wer")
    p.add_argument("--task", choices=["asr", "st"])
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-len", type=int, default=24)
    p.add_argument("--vocab")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="complexity ladder or window sweep")
    p.add_argument("--patterns", type=lambda s: s.split(","), default=["dense", "sliding"])
    p.add_argument("--ladder", type=_int_list, default=list(DEFAULT_LADDER))
    p.add_argument("--window", type=int, default=48)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sweep", action="store_true")
    p.add_argument("--sizes", type=_int_list, default=list(SWEEP_SIZES))
    p.add_argument("--updates", type=int, default=300)
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("inspect-attention", help="dump softmaxed attention weights as CSV")
    p.add_argument("checkpoint")
    p.add_argument("--wav", required=True)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--head", type=int, default=0)
    p.add_argument("--component", choices=["encoder", "decoder"], default="encoder")
    p.add_argument("--text", help="teacher-forcing text for decoder dumps")
    p.add_argument("--vocab")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_inspect_attention)

    p = sub.add_parser("rerun", help="replay a recorded run manifest")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_rerun)

    return parser


def main(argv=None):
    global _current_argv
    parser = build_parser()
    _current_argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        # window parity is checked before any compute
        if getattr(args, "window", None) is not None and not getattr(args, "dense_encoder", False):
            if getattr(args, "command", "") == "train" and args.window % 2 != 0:
                raise _UsageError(f"--window must be even, got {args.window}")
        return args.fn(args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
