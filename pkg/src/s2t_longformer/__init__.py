"""Speech-to-text transformer with sliding-window encoder attention.

A self-contained numpy implementation: reverse-mode autodiff core, windowed
(Longformer-style) and dense attention, a spectrogram-in/characters-out
encoder-decoder, the full training recipe, WER/BLEU evaluation, and
complexity benchmarks that verify the linear-attention claim empirically.
"""

__version__ = "0.1.0"

from .attention import (
    WindowConfig,
    count_score_evaluations,
    cross_attention,
    dense_attention,
    dilated_window_attention,
    sliding_window_attention,
)
from .autograd import Tensor, backward, no_grad, tracker
from .audio import MelSpectrogram, log_mel, make_synthetic_corpus
from .evaluation import Hypothesis, beam_decode, bleu, greedy_decode, wer
from .model import (
    EncoderOutput,
    Model,
    ModelConfig,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
    sinusoidal_pe,
)
from .text import Vocabulary, build_vocab
from .training import TrainConfig, Trainer, inv_sqrt_lr, label_smoothed_ce, train_preset

__all__ = [
    "EncoderOutput",
    "Hypothesis",
    "MelSpectrogram",
    "Model",
    "ModelConfig",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "Vocabulary",
    "WindowConfig",
    "backward",
    "beam_decode",
    "bleu",
    "build_vocab",
    "count_parameters",
    "count_score_evaluations",
    "cross_attention",
    "dense_attention",
    "dilated_window_attention",
    "greedy_decode",
    "inv_sqrt_lr",
    "label_smoothed_ce",
    "load_checkpoint",
    "log_mel",
    "make_synthetic_corpus",
    "no_grad",
    "save_checkpoint",
    "sinusoidal_pe",
    "sliding_window_attention",
    "tracker",
    "train_preset",
    "wer",
]
