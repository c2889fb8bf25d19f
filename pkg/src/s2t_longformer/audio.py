"""WAV input, log-mel spectrograms, and the synthetic tone-to-text corpus.

Framing is fixed at 25 ms Hann windows with a 10 ms hop over 16 kHz mono
PCM16, so n_frames = (samples - 400) // 160 + 1. The power spectrum goes
through 80 triangular mel filters spanning 0-8 kHz and a natural log with a
1e-10 floor. There is no resampling: a file at the wrong rate is a data
error, not something to fix silently.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

SAMPLE_RATE = 16000
FRAME_LENGTH = 400  # 25 ms
FRAME_SHIFT = 160  # 10 ms
N_FFT = 512
MEL_BINS = 80
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-10

MANIFEST_COLUMNS = ("id", "audio", "n_frames", "transcript", "translation")


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # [n_frames, mel_bins] float32
    frame_shift_ms: int = 10
    frame_length_ms: int = 25
    sample_rate_hz: int = SAMPLE_RATE

    @property
    def n_frames(self):
        return self.frames.shape[0]


def n_frames_for(samples):
    """Frame count for a sample count; requires at least one full window."""
    if samples < FRAME_LENGTH:
        raise DataError(f"audio of {samples} samples is shorter than one 25 ms frame")
    return (samples - FRAME_LENGTH) // FRAME_SHIFT + 1


def read_wav(path):
    """Read a RIFF PCM16 mono 16 kHz file into an int16 array."""
    try:
        with wave.open(str(path), "rb") as f:
            if f.getsampwidth() != 2:
                raise DataError(f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit")
            if f.getnchannels() != 1:
                raise DataError(f"{path}: expected mono, got {f.getnchannels()} channels")
            if f.getframerate() != SAMPLE_RATE:
                raise DataError(f"{path}: expected {SAMPLE_RATE} Hz, got {f.getframerate()} Hz")
            raw = f.readframes(f.getnframes())
    except wave.Error as e:
        raise DataError(f"{path}: not a readable WAV file ({e})") from e
    return np.frombuffer(raw, dtype="<i2").astype(np.int16)


def write_wav(path, samples):
    samples = np.asarray(samples, dtype="<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(SAMPLE_RATE)
        f.writeframes(samples.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (np.power(10.0, np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels=MEL_BINS, n_fft=N_FFT, sample_rate=SAMPLE_RATE, fmin=FMIN, fmax=FMAX):
    """Triangular mel filters over rfft bin centers: [n_mels, n_fft//2 + 1].

    Centers are equally spaced on the mel scale; each filter rises from the
    previous center to its own and falls to the next.
    """
    points = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bins_hz = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    fb = np.zeros((n_mels, bins_hz.size), dtype=np.float64)
    for m in range(n_mels):
        left, center, right = points[m], points[m + 1], points[m + 2]
        up = (bins_hz - left) / (center - left)
        down = (right - bins_hz) / (right - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb.astype(np.float32)


_FILTERBANK = None


def _filterbank():
    global _FILTERBANK
    if _FILTERBANK is None:
        _FILTERBANK = mel_filterbank()
    return _FILTERBANK


def log_mel(samples):
    """PCM16 mono 16 kHz samples -> MelSpectrogram.

    25 ms Hann frames, 10 ms hop, 512-point rfft power spectrum, 80 mel
    filters, natural log with a 1e-10 floor.
    """
    samples = np.asarray(samples)
    if samples.dtype != np.int16:
        raise DataError(f"expected int16 PCM samples, got dtype {samples.dtype}")
    n = n_frames_for(samples.size)
    x = samples.astype(np.float32) / 32768.0
    starts = np.arange(n) * FRAME_SHIFT
    idx = starts[:, None] + np.arange(FRAME_LENGTH)[None, :]
    window = np.hanning(FRAME_LENGTH + 1)[:-1].astype(np.float32)
    frames = x[idx] * window
    spec = np.fft.rfft(frames, n=N_FFT, axis=1)
    power = (spec.real ** 2 + spec.imag ** 2).astype(np.float32)
    mel = power @ _filterbank().T
    out = np.log(np.maximum(mel, LOG_FLOOR)).astype(np.float32)
    return MelSpectrogram(frames=out)


def cmvn_stats(frame_list):
    """Per-dimension mean and std over a whole corpus of feature matrices."""
    stacked = np.concatenate(frame_list, axis=0).astype(np.float64)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), 1e-8)
    return mean.astype(np.float32), std.astype(np.float32)


def apply_cmvn(frames, mean, std):
    return ((frames - mean) / std).astype(np.float32)


# ------------------------------------------------------------ synthetic corpus

TONE_MS = 100
TONE_SAMPLES = SAMPLE_RATE * TONE_MS // 1000
TONE_AMPLITUDE = 0.25
MIN_CHARS = 3
MAX_CHARS = 12


def tone_frequency(char_index):
    """Distinct pure-tone frequency per alphabet position, all below the mel
    band ceiling: 300 + 137 * i Hz."""
    return 300.0 + 137.0 * char_index


def synthesize_text(text, alphabet):
    """Deterministic audio for a string: one 100 ms tone per character with a
    short cosine ramp at both ends to avoid clicks."""
    lookup = {c: i for i, c in enumerate(alphabet)}
    t = np.arange(TONE_SAMPLES) / SAMPLE_RATE
    ramp_len = SAMPLE_RATE // 200  # 5 ms
    envelope = np.ones(TONE_SAMPLES)
    fade = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp_len) / ramp_len))
    envelope[:ramp_len] = fade
    envelope[-ramp_len:] = fade[::-1]
    pieces = []
    for c in text:
        if c not in lookup:
            raise DataError(f"character {c!r} not in the corpus alphabet")
        tone = TONE_AMPLITUDE * np.sin(2 * np.pi * tone_frequency(lookup[c]) * t) * envelope
        pieces.append(tone)
    audio = np.concatenate(pieces)
    return np.round(audio * 32767.0).astype(np.int16)


@dataclass
class ManifestRow:
    utt_id: str
    audio: str  # path relative to the manifest's directory
    n_frames: int
    transcript: str
    translation: str


def write_manifest(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(MANIFEST_COLUMNS) + "\n")
        for r in rows:
            f.write(f"{r.utt_id}\t{r.audio}\t{r.n_frames}\t{r.transcript}\t{r.translation}\n")


def read_manifest(path):
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split("\t")
        if tuple(header) != MANIFEST_COLUMNS:
            raise DataError(f"{path}: manifest header {header} != {list(MANIFEST_COLUMNS)}")
        for lineno, line in enumerate(f, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != len(MANIFEST_COLUMNS):
                raise DataError(f"{path}: row {lineno}: expected {len(MANIFEST_COLUMNS)} columns, got {len(parts)}")
            try:
                n_frames = int(parts[2])
            except ValueError:
                raise DataError(f"{path}: row {lineno}: n_frames {parts[2]!r} is not an integer") from None
            rows.append(ManifestRow(parts[0], parts[1], n_frames, parts[3], parts[4]))
    if not rows:
        raise DataError(f"{path}: manifest has no rows")
    return rows


def validate_manifest(path):
    """Re-read every referenced file and check it against its row; raises a
    DataError naming the first offending row."""
    path = Path(path)
    rows = read_manifest(path)
    for i, row in enumerate(rows, start=2):
        wav_path = path.parent / row.audio
        if not wav_path.exists():
            raise DataError(f"{path}: row {i}: audio file missing: {row.audio}")
        samples = read_wav(wav_path)
        actual = n_frames_for(samples.size)
        if actual != row.n_frames:
            raise DataError(f"{path}: row {i}: n_frames {row.n_frames} but audio has {actual}")
    return rows


def load_features(manifest_path, apply_normalization=True):
    """Log-mel features for every manifest row, with per-corpus CMVN.

    Returns (rows, features) where features[i] is [n_frames, 80] float32.
    """
    manifest_path = Path(manifest_path)
    rows = read_manifest(manifest_path)
    feats = []
    for row in rows:
        samples = read_wav(manifest_path.parent / row.audio)
        feats.append(log_mel(samples).frames)
    if apply_normalization:
        mean, std = cmvn_stats(feats)
        feats = [apply_cmvn(f, mean, std) for f in feats]
    return rows, feats


def make_synthetic_corpus(out_dir, n_train, n_test, alphabet="abcdefgh", seed=0):
    """Generate the tone corpus: WAVs plus train/test manifests.

    Transcripts are random strings of 3-12 alphabet characters; each character
    is a fixed 100 ms pure tone; the toy 'translation' is the reversed
    transcript. Identical seeds give byte-identical trees.
    """
    if len(alphabet) > 26:
        raise DataError(f"alphabet of {len(alphabet)} symbols exceeds the 26-symbol cap")
    if len(set(alphabet)) != len(alphabet):
        raise DataError("alphabet has repeated symbols")
    out_dir = Path(out_dir)
    (out_dir / "wavs").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifests = {}
    for split, count, id_base in (("train", n_train, 0), ("test", n_test, n_train)):
        rows = []
        for k in range(count):
            length = int(rng.integers(MIN_CHARS, MAX_CHARS + 1))
            text = "".join(alphabet[int(i)] for i in rng.integers(0, len(alphabet), size=length))
            utt_id = f"utt{id_base + k:05d}"
            audio_rel = f"wavs/{utt_id}.wav"
            samples = synthesize_text(text, alphabet)
            write_wav(out_dir / audio_rel, samples)
            rows.append(ManifestRow(utt_id, audio_rel, n_frames_for(samples.size), text, text[::-1]))
        manifest_path = out_dir / f"{split}.tsv"
        write_manifest(manifest_path, rows)
        manifests[split] = manifest_path
    return manifests
