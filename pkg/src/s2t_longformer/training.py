"""Training recipe: label-smoothed cross-entropy, Adam with an inverse
square-root schedule and linear warm-up, global-norm gradient clipping, and
token-budget batching with gradient accumulation.

Loss convention (documented because the accumulation-equivalence test relies
on it): each utterance contributes the mean loss over its non-pad target
positions, and an update applies the mean of those per-utterance means over
every utterance in the accumulation cycle. Gradients are therefore identical
whether the cycle is one big batch or ``update_freq`` micro-batches, bit for
bit, given the same utterance order.
"""

from __future__ import annotations

import configparser
import json
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autograd as ag
from .audio import load_features
from .autograd import cross_entropy_logits
from .errors import ConfigError, DataError, NumericError
from .model import Model, ModelConfig, load_checkpoint, save_checkpoint, transfer_encoder
from .text import PAD, Vocabulary


@dataclass
class TrainConfig:
    """Optimization settings. The defaults are the full-scale recipe; the
    desk preset shrinks the schedule for laptop-sized runs."""

    peak_lr: float = 1e-3
    warmup_updates: int = 10000
    clip_norm: float = 10.0
    label_smoothing: float = 0.1
    max_tokens_per_batch: int = 20000
    update_freq: int = 16
    max_updates: int = 100000
    seed: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    valid_interval: int = 1000


def train_preset(preset, task):
    """Named presets: 'paper' is the full-scale recipe (ASR peak 1e-3, ST
    2e-3); 'desk' scales the schedule down for toy corpora."""
    if task not in ("asr", "st"):
        raise ConfigError(f"task must be 'asr' or 'st', got {task!r}")
    peak = 1e-3 if task == "asr" else 2e-3
    if preset == "paper":
        return TrainConfig(peak_lr=peak)
    if preset == "desk":
        return TrainConfig(
            peak_lr=peak,
            warmup_updates=400,
            max_tokens_per_batch=2000,
            update_freq=1,
            max_updates=4000,
            valid_interval=200,
        )
    raise ConfigError(f"unknown preset {preset!r}")


# ----------------------------------------------------------------- pieces


def label_smoothed_ce(logits, targets, eps=0.1, pad_id=PAD):
    """Mean over non-pad positions of
    (1-eps) * (-log p_target) + eps * mean_v(-log p_v)."""
    return cross_entropy_logits(logits, targets, smoothing=eps, pad_id=pad_id)


def inv_sqrt_lr(step, peak, warmup):
    """Linear warm-up to ``peak`` at ``warmup`` updates, then decay with the
    inverse square root of the step."""
    if step < 1:
        raise ConfigError(f"schedule step must be >= 1, got {step}")
    if step <= warmup:
        return peak * step / warmup
    return peak * float(np.sqrt(warmup / step))


def clip_grad_norm(params, max_norm=10.0):
    """Scale all gradients so their global L2 norm is at most ``max_norm``;
    returns the pre-clip norm. NaN or inf in any gradient halts the step."""
    sq = 0.0
    for p in params:
        if p.grad is None:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise NumericError("non-finite gradient detected; halting the update")
        sq += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(sq))
    if norm > max_norm:
        scale = np.float32(max_norm / norm)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params):
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def adam_step(params, state, lr, beta1=0.9, beta2=0.98, eps=1e-9):
    """Standard bias-corrected Adam update over a name -> Tensor dict.
    Parameters without a gradient are left untouched."""
    state.t += 1
    b1t = np.float32(1.0 - beta1 ** state.t)
    b2t = np.float32(1.0 - beta2 ** state.t)
    for name, p in params.items():
        if p.grad is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= np.float32(beta1)
        m += np.float32(1.0 - beta1) * p.grad
        v *= np.float32(beta2)
        v += np.float32(1.0 - beta2) * (p.grad * p.grad)
        mhat = m / b1t
        vhat = v / b2t
        p.data -= np.float32(lr) * mhat / (np.sqrt(vhat) + np.float32(eps))


# ----------------------------------------------------------------- data


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray  # [n_frames, mel_bins]
    target_ids: np.ndarray  # BOS ... EOS
    reference: str

    @property
    def cost(self):
        # token budget counts source frames plus target tokens (EOS included)
        return self.features.shape[0] + (self.target_ids.size - 1)


def load_dataset(manifest_path, vocab, task):
    """Manifest -> list of Utterance with CMVN'd features and encoded targets.
    ASR targets the transcript column, ST the translation column."""
    if task not in ("asr", "st"):
        raise ConfigError(f"task must be 'asr' or 'st', got {task!r}")
    rows, feats = load_features(manifest_path)
    out = []
    for row, f in zip(rows, feats):
        text = row.transcript if task == "asr" else row.translation
        out.append(Utterance(row.utt_id, f, vocab.encode(text), text))
    return out


def make_batches(dataset, order, max_tokens):
    """Greedy token-budget packing in the given order; every batch holds at
    least one utterance even when it alone exceeds the budget."""
    batches, current, current_cost = [], [], 0
    for idx in order:
        c = dataset[idx].cost
        if current and current_cost + c > max_tokens:
            batches.append(current)
            current, current_cost = [], 0
        current.append(int(idx))
        current_cost += c
    if current:
        batches.append(current)
    return batches


# ----------------------------------------------------------------- trainer


class Trainer:
    """Owns one model plus its optimizer state and runs the update loop.

    Checkpoints carry the full training state (Adam moments, RNG, data
    cursor), so a resumed run continues bit-exactly. Update cycles never
    straddle an epoch boundary; the last cycle of an epoch may hold fewer
    than ``update_freq`` micro-batches.
    """

    def __init__(self, model, train_cfg, train_set, valid_set, out_dir, task):
        if not train_set:
            raise DataError("empty training set")
        self.model = model
        self.cfg = train_cfg
        self.train_set = train_set
        self.valid_set = valid_set
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.task = task
        self.step = 0
        self.epoch = 0
        self.cursor = 0
        self.best_valid = float("inf")
        self.rng = np.random.default_rng(train_cfg.seed)
        self.adam = AdamState(model.named_parameters())
        self.log_path = self.out_dir / "train_log.jsonl"
        self._log_file = None

    # -- checkpoint round-trip --------------------------------------------

    def _train_state(self):
        meta = {
            "step": self.step,
            "epoch": self.epoch,
            "cursor": self.cursor,
            "best_valid": self.best_valid,
            "adam_t": self.adam.t,
            "rng_state": self.rng.bit_generator.state,
            "task": self.task,
            "train_config": asdict(self.cfg),
        }
        tensors = {}
        for name in self.adam.m:
            tensors[f"adam.m/{name}"] = self.adam.m[name]
            tensors[f"adam.v/{name}"] = self.adam.v[name]
        return meta, tensors

    def _restore_train_state(self, meta, tensors):
        self.step = meta["step"]
        self.epoch = meta["epoch"]
        self.cursor = meta["cursor"]
        self.best_valid = meta["best_valid"]
        self.adam.t = meta["adam_t"]
        self.rng.bit_generator.state = meta["rng_state"]
        for name in self.adam.m:
            self.adam.m[name] = tensors[f"adam.m/{name}"].copy()
            self.adam.v[name] = tensors[f"adam.v/{name}"].copy()

    def resume(self, ckpt_path):
        model, train_state = load_checkpoint(ckpt_path)
        if train_state is None:
            raise ConfigError(f"{ckpt_path}: checkpoint has no training state to resume from")
        self.model.load_state(model.state_arrays())
        self._restore_train_state(*train_state)

    def save(self, name):
        save_checkpoint(self.out_dir / name, self.model, self._train_state())

    # -- loop ----------------------------------------------------------------

    def _epoch_order(self, epoch):
        return np.random.default_rng([self.cfg.seed, epoch]).permutation(len(self.train_set))

    def _utterance_loss(self, utt):
        enc = self.model.encode(utt.features)
        logits = self.model.decode_full(utt.target_ids[:-1], enc)
        return label_smoothed_ce(logits, utt.target_ids[1:], eps=self.cfg.label_smoothing)

    def _log(self, record):
        if self._log_file is None:
            self._log_file = open(self.log_path, "a", encoding="utf-8")
        self._log_file.write(json.dumps(record) + "\n")
        self._log_file.flush()

    def validate(self):
        """Mean validation loss under eval mode (dropout off, no recording)."""
        if not self.valid_set:
            return float("nan")
        self.model.eval()
        losses = []
        with ag.no_grad():
            for utt in self.valid_set:
                losses.append(self._utterance_loss(utt).item())
        self.model.train(self.rng)
        return float(np.mean(losses))

    def _run_update(self, micro_batches):
        t0 = time.perf_counter()
        self.model.zero_grad()
        losses = []
        n_utts = 0
        for batch in micro_batches:
            for idx in batch:
                loss = self._utterance_loss(self.train_set[idx])
                ag.backward(loss)
                losses.append(loss.item())
                n_utts += 1
        params = self.model.named_parameters()
        scale = np.float32(1.0 / n_utts)
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
        grad_norm = clip_grad_norm(list(params.values()), self.cfg.clip_norm)
        lr = inv_sqrt_lr(self.step + 1, self.cfg.peak_lr, self.cfg.warmup_updates)
        adam_step(params, self.adam, lr,
                  self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_eps)
        self.step += 1
        self._log({
            "step": self.step,
            "lr": lr,
            "loss": float(np.mean(losses)),
            "grad_norm": grad_norm,
            "wall_ms": (time.perf_counter() - t0) * 1000.0,
        })

    def run(self):
        """Train until ``max_updates``; returns the paths of the last and best
        checkpoints."""
        self.model.train(self.rng)
        last_validated = -1
        try:
            while self.step < self.cfg.max_updates:
                batches = make_batches(self.train_set, self._epoch_order(self.epoch),
                                       self.cfg.max_tokens_per_batch)
                while self.cursor < len(batches) and self.step < self.cfg.max_updates:
                    micro = batches[self.cursor:self.cursor + self.cfg.update_freq]
                    self.cursor += len(micro)
                    self._run_update(micro)
                    if self.step % self.cfg.valid_interval == 0:
                        self._validate_and_checkpoint()
                        last_validated = self.step
                if self.cursor >= len(batches):
                    self.epoch += 1
                    self.cursor = 0
            if last_validated != self.step:
                self._validate_and_checkpoint()
        except BaseException:
            ag.active_tape().clear()
            raise
        finally:
            if self._log_file is not None:
                self._log_file.close()
                self._log_file = None
        self.model.eval()
        return self.out_dir / "checkpoint_last.ckpt", self.out_dir / "checkpoint_best.ckpt"

    def _validate_and_checkpoint(self):
        valid_loss = self.validate()
        self._log({"step": self.step, "valid_loss": valid_loss})
        self.save("checkpoint_last.ckpt")
        if not self.valid_set or valid_loss <= self.best_valid:
            self.best_valid = valid_loss if self.valid_set else float("inf")
            self.save("checkpoint_best.ckpt")


def train(model_cfg, train_cfg, train_manifest, valid_manifest, vocab, task,
          out_dir, init_encoder_from=None, resume_from=None, model_seed=0):
    """End-to-end entry point: build the model, optionally seed its encoder
    from an ASR checkpoint, and run the trainer. Returns (last, best) paths."""
    model = Model(model_cfg, seed=model_seed)
    if init_encoder_from is not None:
        transfer_encoder(model, init_encoder_from)
    train_set = load_dataset(train_manifest, vocab, task)
    valid_set = load_dataset(valid_manifest, vocab, task) if valid_manifest else []
    trainer = Trainer(model, train_cfg, train_set, valid_set, out_dir, task)
    if resume_from is not None:
        trainer.resume(resume_from)
    return trainer.run()


# ----------------------------------------------------------------- config files


def save_config(path, model_cfg, train_cfg, task):
    """Write the resolved configuration as sectioned key=value text."""
    cp = configparser.ConfigParser()
    model_dict = model_cfg.to_dict()
    window = model_dict.pop("window")
    cp["model"] = {k: str(v) for k, v in model_dict.items()}
    cp["window"] = {"enabled": str(window is not None)}
    if window is not None:
        cp["window"].update({k: str(v) for k, v in window.items()})
    cp["train"] = {k: str(v) for k, v in asdict(train_cfg).items()}
    cp["run"] = {"task": task}
    with open(path, "w", encoding="utf-8") as f:
        cp.write(f)


def load_config(path):
    """Read a config file back into (ModelConfig, TrainConfig, task)."""
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise ConfigError(f"cannot read config file {path}")
    try:
        m = cp["model"]
        model_cfg = ModelConfig(
            vocab_size=m.getint("vocab_size"),
            encoder_layers=m.getint("encoder_layers"),
            decoder_layers=m.getint("decoder_layers"),
            heads=m.getint("heads"),
            embed_dim=m.getint("embed_dim"),
            ffn_dim=m.getint("ffn_dim"),
            dropout=m.getfloat("dropout"),
            window=(
                {"window_size": cp["window"].getint("window_size"),
                 "dilation": cp["window"].getint("dilation")}
                if cp["window"].getboolean("enabled") else None
            ),
            post_encoder_conv=m.getboolean("post_encoder_conv"),
            mel_bins=m.getint("mel_bins"),
            encoder_prenorm=m.getboolean("encoder_prenorm"),
        )
        t = cp["train"]
        train_cfg = TrainConfig(
            peak_lr=t.getfloat("peak_lr"),
            warmup_updates=t.getint("warmup_updates"),
            clip_norm=t.getfloat("clip_norm"),
            label_smoothing=t.getfloat("label_smoothing"),
            max_tokens_per_batch=t.getint("max_tokens_per_batch"),
            update_freq=t.getint("update_freq"),
            max_updates=t.getint("max_updates"),
            seed=t.getint("seed"),
            adam_beta1=t.getfloat("adam_beta1"),
            adam_beta2=t.getfloat("adam_beta2"),
            adam_eps=t.getfloat("adam_eps"),
            valid_interval=t.getint("valid_interval"),
        )
        task = cp["run"]["task"]
    except (KeyError, ValueError) as e:
        raise ConfigError(f"{path}: malformed config ({e})") from e
    return model_cfg, train_cfg, task
