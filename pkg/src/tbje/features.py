"""Feature front-ends: word tokenization with pretrained embeddings for the
linguistic modality, log-mel spectrograms for the acoustic modality, and the
padding/masking step that turns variable-length sequences into fixed-shape
batches. Visual features are ingested as-is, never computed here.
"""

from __future__ import annotations

import hashlib
import json
import re
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.signal.windows import hann

from .errors import ConfigError, ContractError, DataWarning

PAD_TOKEN = "pad"
UNK_TOKEN = "unk"
PAD_INDEX = 0
UNK_INDEX = 1
EMBEDDING_DIM = 300

# unicode letters and digits survive; punctuation, symbols and underscores
# act as separators
_WORD = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(utterance: str) -> list[str]:
    """Lowercase word tokens with punctuation and special characters stripped.

    An utterance with no tokens yields a single unk so downstream batches
    always have at least one valid row.
    """
    tokens = _WORD.findall(utterance.lower())
    if not tokens:
        warnings.warn("utterance produced no tokens; substituting unk",
                      DataWarning, stacklevel=2)
        return [UNK_TOKEN]
    return tokens


@dataclass
class Vocabulary:
    """Train-split token table plus its pretrained embedding rows.

    Index 0 is the padding token (all-zero row), index 1 the unknown token.
    ``fallback_count`` records how many train tokens were missing from the
    embedding file and received the zero-vector fallback.
    """

    tokens: list[str]
    embeddings: np.ndarray
    fallback_count: int = 0
    index_of: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.shape != (len(self.tokens), EMBEDDING_DIM):
            raise ConfigError(
                f"embedding matrix shape {self.embeddings.shape} does not "
                f"match {len(self.tokens)} tokens x {EMBEDDING_DIM}")
        if self.tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ConfigError("vocabulary must reserve indices 0/1 for pad/unk")
        self.index_of = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def lookup(self, token: str) -> int:
        return self.index_of.get(token, UNK_INDEX)

    def embed(self, tokens: list[str]) -> np.ndarray:
        """Embedding rows for a token sequence, (len, 300)."""
        return self.embeddings[[self.lookup(t) for t in tokens]]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.tokens, ensure_ascii=False).encode("utf-8"))
        h.update(b"\0")
        h.update(np.ascontiguousarray(self.embeddings).tobytes())
        return h.hexdigest()


def read_embedding_file(path, wanted: set[str]) -> dict[str, np.ndarray]:
    """Parse a text embedding file (token then 300 decimals per line),
    keeping only tokens in ``wanted``."""
    found: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts[0] not in wanted or parts[0] in found:
                continue
            if len(parts) != 1 + EMBEDDING_DIM:
                raise ConfigError(
                    f"{path}:{lineno}: expected {EMBEDDING_DIM} values for "
                    f"token {parts[0]!r}, got {len(parts) - 1}")
            found[parts[0]] = np.array([float(v) for v in parts[1:]])
    return found


def build_vocabulary(train_token_lists, embedding_path) -> Vocabulary:
    """Index every distinct training token (sorted for determinism) and pull
    its embedding row; missing tokens get the zero-vector fallback."""
    distinct = sorted({t for toks in train_token_lists for t in toks}
                      - {PAD_TOKEN, UNK_TOKEN})
    tokens = [PAD_TOKEN, UNK_TOKEN] + distinct
    rows = read_embedding_file(embedding_path, set(distinct))
    matrix = np.zeros((len(tokens), EMBEDDING_DIM))
    fallback = 0
    for i, tok in enumerate(tokens[2:], start=2):
        if tok in rows:
            matrix[i] = rows[tok]
        else:
            fallback += 1
    if fallback:
        warnings.warn(f"{fallback} train tokens missing from the embedding "
                      f"file use the zero-vector fallback", DataWarning,
                      stacklevel=2)
    return Vocabulary(tokens=tokens, embeddings=matrix, fallback_count=fallback)


# ---------------------------------------------------------------------------
# acoustic front-end
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 22050
    n_fft: int = 2048
    hop: int = 256
    window: int = 1024
    bands: int = 80
    stride: int = 16          # keep one STFT frame out of every `stride`
    floor: float = 1e-5       # log-compression floor

    def __post_init__(self):
        if self.bands < 1:
            raise ConfigError(f"mel band count must be >= 1, got {self.bands}")
        if self.stride < 1:
            raise ConfigError(f"temporal stride must be >= 1, got {self.stride}")
        if self.n_fft < self.window:
            raise ConfigError(
                f"FFT size {self.n_fft} must cover the window {self.window}")
        if self.hop < 1 or self.window < 1 or self.sample_rate < 1:
            raise ConfigError("sample rate, hop and window must be positive")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_bank(cfg: MelConfig) -> np.ndarray:
    """Triangular filters (bands x n_fft//2+1) with band edges equally spaced
    on the mel scale from 0 Hz to Nyquist."""
    n_bins = cfg.n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * cfg.sample_rate / cfg.n_fft
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2.0),
                                  cfg.bands + 2))
    bank = np.zeros((cfg.bands, n_bins))
    for b in range(cfg.bands):
        lo, center, hi = edges[b], edges[b + 1], edges[b + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        bank[b] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def stft_magnitudes(wave: np.ndarray, cfg: MelConfig) -> np.ndarray:
    """Hann-windowed magnitude spectra, one row per hop; no centering.

    A waveform shorter than one window is zero-padded to a single frame.
    """
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1 or wave.size == 0:
        raise ContractError("waveform must be a non-empty 1-d array")
    if wave.size < cfg.window:
        warnings.warn("waveform shorter than one analysis window; "
                      "zero-padding to a single frame", DataWarning,
                      stacklevel=2)
        wave = np.concatenate([wave, np.zeros(cfg.window - wave.size)])
    n_frames = 1 + (wave.size - cfg.window) // cfg.hop
    win = hann(cfg.window, sym=False)
    frames = np.zeros((n_frames, cfg.n_fft))
    for i in range(n_frames):
        frames[i, :cfg.window] = wave[i * cfg.hop:i * cfg.hop + cfg.window] * win
    return np.abs(np.fft.rfft(frames, axis=-1))


def mel_spectrogram(wave: np.ndarray, cfg: MelConfig | None = None) -> np.ndarray:
    """Log-mel frames after temporal reduction, (ceil(frames/stride), bands).

    Values are natural logs floored at cfg.floor; corpus-level normalization
    to [0, 1] happens at bundle-build time, not here.
    """
    cfg = cfg or MelConfig()
    spectra = stft_magnitudes(wave, cfg)
    mel = spectra @ mel_filter_bank(cfg).T
    logmel = np.log(np.maximum(mel, cfg.floor))
    return logmel[::cfg.stride]


def normalize_mel(frames: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Map log-mel values into [0, 1] using train-split extrema; out-of-range
    values from other splits are clipped."""
    if not hi > lo:
        raise ConfigError(f"normalization range [{lo}, {hi}] is empty")
    return np.clip((np.asarray(frames, dtype=np.float64) - lo) / (hi - lo),
                   0.0, 1.0)


def resample_linear(wave: np.ndarray, rate_in: int, rate_out: int) -> np.ndarray:
    """Linear-interpolation resampler; adequate for speech features, not for
    hi-fi use (no anti-aliasing filter)."""
    wave = np.asarray(wave, dtype=np.float64)
    if rate_in == rate_out:
        return wave
    if rate_in < 1 or rate_out < 1:
        raise ConfigError("sample rates must be positive")
    duration = wave.size / rate_in
    n_out = max(1, int(round(duration * rate_out)))
    t_out = np.arange(n_out) / rate_out
    t_in = np.arange(wave.size) / rate_in
    return np.interp(t_out, t_in, wave)


def load_waveform(path, target_rate: int) -> np.ndarray:
    """Read a mono WAV file, scale to [-1, 1], resample to the target rate."""
    rate, data = wavfile.read(path)
    stored = data.dtype
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if np.issubdtype(stored, np.integer):
        data = data / float(np.iinfo(stored).max)
    return resample_linear(data, rate, target_rate)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def pad_truncate(sequence: np.ndarray, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Fix a (t, w) sequence to exactly ``length`` rows.

    Longer sequences keep their first ``length`` rows; shorter ones get a
    zero-padded tail. The mask marks real rows.
    """
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ContractError(
            f"pad_truncate needs a (t>=1, width) array, got shape {seq.shape}")
    t = seq.shape[0]
    out = np.zeros((length, seq.shape[1]))
    mask = np.zeros(length, dtype=bool)
    kept = min(t, length)
    out[:kept] = seq[:kept]
    mask[:kept] = True
    return out, mask


@dataclass
class ModalityBatch:
    """Fixed-shape batch for one modality: (batch, N, width) features plus a
    validity mask; padded rows are zeros and every example keeps at least one
    valid row."""

    features: np.ndarray
    mask: np.ndarray
    modality: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.features.ndim != 3:
            raise ContractError(
                f"batch features must be (batch, N, width), got "
                f"{self.features.shape}")
        if self.mask.shape != self.features.shape[:2]:
            raise ContractError(
                f"mask shape {self.mask.shape} does not match features "
                f"{self.features.shape[:2]}")
        if not self.mask.any(axis=1).all():
            raise ContractError("every example needs at least one valid row")
        if np.any(self.features[~self.mask] != 0.0):
            raise ContractError("masked rows must hold zeros")

    def __len__(self):
        return self.features.shape[0]

    def take(self, indices) -> "ModalityBatch":
        idx = np.asarray(indices, dtype=np.int64)
        return ModalityBatch(self.features[idx], self.mask[idx],
                             self.modality)


def make_batch(sequences, length: int, modality: str) -> ModalityBatch:
    """Pad/truncate a list of (t, w) sequences into one ModalityBatch."""
    rows = [pad_truncate(s, length) for s in sequences]
    return ModalityBatch(np.stack([r[0] for r in rows]),
                         np.stack([r[1] for r in rows]), modality)
