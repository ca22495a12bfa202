"""Deterministic signal path from WAV files to log-mel features.

Covers loading/mono-mixing, polyphase resampling, 10 s duration
normalization, cross-correlation delay estimation and pair alignment, the
log-mel frontend, and the optional binary feature cache.
"""

import math
import os
import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .errors import AlignmentError, FeatureError, FormatError

PIPELINE_SR = 16000
TARGET_SECONDS = 10.0


@dataclass(frozen=True)
class Waveform:
    """Mono audio in [-1, 1]. ``n_valid`` marks the unpadded sample extent
    after duration normalization (None = all samples are real)."""

    samples: np.ndarray
    sample_rate: int
    n_valid: int | None = None

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise FormatError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise FormatError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureMatrix:
    """T x n_mels log-mel energies; valid_frames excludes frames wholly
    inside duration padding."""

    frames: np.ndarray
    frame_rate: float
    valid_frames: int


@dataclass(frozen=True)
class AlignedPair:
    deg: Waveform
    ref: Waveform
    lag_samples: int


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = PIPELINE_SR
    win_length: int = 400
    hop_length: int = 160
    n_fft: int = 512
    n_mels: int = 64
    fmin: float = 0.0
    fmax: float = 8000.0
    floor: float = 1e-6


def load_wav(path: str) -> Waveform:
    """Load a PCM WAV (16-bit int or 32-bit float, 1-2 channels) as mono.

    Stereo is mixed by per-sample channel mean; int16 is scaled by 1/32768.
    """
    try:
        sr, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except ValueError as e:
        raise FormatError(f"{path}: unsupported WAV encoding ({e})") from e
    except Exception as e:  # struct errors etc. from truncated containers
        raise OSError(f"{path}: truncated or unreadable WAV ({e})") from e

    if data.ndim == 2:
        if data.shape[1] > 2:
            raise FormatError(f"{path}: {data.shape[1]} channels, expected 1-2")
        data = data.mean(axis=1, dtype=np.float64)
    elif data.ndim != 1:
        raise FormatError(f"{path}: unexpected sample layout {data.shape}")

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise FormatError(
            f"{path}: unsupported sample encoding '{data.dtype}', "
            "expected 16-bit PCM or 32-bit float"
        )
    return Waveform(samples=samples, sample_rate=int(sr))


def _kaiser_polyphase_filter(up: int, down: int, taps_per_phase: int = 32,
                             beta: float = 5.0) -> np.ndarray:
    """Windowed-sinc FIR for polyphase resampling, unit passband gain before
    the up-gain that resample_poly applies internally."""
    max_rate = max(up, down)
    half_len = (taps_per_phase // 2) * max_rate
    return signal.firwin(2 * half_len + 1, 1.0 / max_rate,
                         window=("kaiser", beta))


def resample(wav: Waveform, target_sr: int) -> Waveform:
    """Band-limited polyphase resampling (Kaiser window, 32 taps per phase).

    Output length is ceil(N * target / source); equal rates return a copy.
    """
    if target_sr <= 0:
        raise FormatError(f"target sample rate must be positive, got {target_sr}")
    if target_sr == wav.sample_rate:
        return replace(wav, samples=wav.samples.copy())
    g = math.gcd(target_sr, wav.sample_rate)
    up, down = target_sr // g, wav.sample_rate // g
    h = _kaiser_polyphase_filter(up, down)
    out = signal.resample_poly(wav.samples, up, down, window=h)
    return Waveform(samples=out, sample_rate=target_sr)


def _crop_or_pad(x: np.ndarray, target_n: int, offset: int):
    n = len(x)
    if n > target_n:
        return x[offset:offset + target_n], target_n
    if n < target_n:
        return np.concatenate([x, np.zeros(target_n - n, dtype=x.dtype)]), n
    return x, n


def fix_duration(wav: Waveform, target_s: float = TARGET_SECONDS,
                 rng: np.random.Generator | None = None) -> Waveform:
    """Normalize to an exact target length: random crop if longer (offset
    drawn from rng), zero-pad at the end if shorter."""
    target_n = int(round(target_s * wav.sample_rate))
    n = len(wav.samples)
    offset = 0
    if n > target_n:
        if rng is None:
            raise FeatureError("fix_duration needs an rng to crop a longer clip")
        offset = int(rng.integers(0, n - target_n + 1))
    samples, n_valid = _crop_or_pad(wav.samples, target_n, offset)
    return Waveform(samples=samples, sample_rate=wav.sample_rate,
                    n_valid=None if n_valid == target_n else n_valid)


def _corr_at_lag(deg: np.ndarray, ref: np.ndarray, k: int) -> float:
    """Exact direct cross-correlation sum at one lag: sum_n deg[n]*ref[n-k]."""
    nd, nr = len(deg), len(ref)
    if k >= 0:
        length = min(nd - k, nr)
        if length <= 0:
            return 0.0
        return float(np.dot(deg[k:k + length], ref[:length]))
    length = min(nd, nr + k)
    if length <= 0:
        return 0.0
    return float(np.dot(deg[:length], ref[-k:-k + length]))


def _preferred_lag_order(max_lag: int):
    """0, -1, +1, -2, +2, ...: smaller |k| first, then negative before positive."""
    yield 0
    for a in range(1, max_lag + 1):
        yield -a
        yield a


def estimate_delay(deg: Waveform, ref: Waveform, max_lag: int | None = None) -> int:
    """Lag maximizing sum_n deg[n]*ref[n-k] over k in [-max_lag, max_lag].

    Ties break toward smaller |k|, then toward negative k. Computed by FFT
    correlation; every lag within a tiny relative band of the FFT peak is
    re-scored with the exact direct sum, so the result equals the brute-force
    argmax even when rounding would otherwise blur an exact tie.
    """
    if deg.sample_rate != ref.sample_rate:
        raise AlignmentError(
            f"sample rates differ: {deg.sample_rate} vs {ref.sample_rate}"
        )
    d, r = deg.samples, ref.samples
    if not np.any(d) or not np.any(r):
        raise AlignmentError("all-zero input: correlation peak undefined")
    if max_lag is None:
        max_lag = deg.sample_rate  # 1 s default search range
    if max_lag >= min(len(d), len(r)):
        raise AlignmentError(
            f"max_lag {max_lag} must be smaller than both signals "
            f"({len(d)}, {len(r)})"
        )

    full = signal.correlate(d, r, mode="full", method="fft")
    # full[(len(r) - 1) + k] == sum_n d[n] * r[n - k]
    center = len(r) - 1
    lags = np.arange(-max_lag, max_lag + 1)
    window = full[center - max_lag:center + max_lag + 1]

    peak = float(np.max(window))
    tol = 1e-6 * max(1e-300, float(np.max(np.abs(window))))
    candidates = lags[window >= peak - tol]

    exact = {int(k): _corr_at_lag(d, r, int(k)) for k in candidates}
    best_k, best_v = None, -math.inf
    cand_set = set(exact)
    for k in _preferred_lag_order(max_lag):
        if k in cand_set and exact[k] > best_v:
            best_k, best_v = k, exact[k]
    return int(best_k)


def align_pair(deg: Waveform, ref: Waveform, max_lag: int | None = None,
               target_s: float = TARGET_SECONDS,
               rng: np.random.Generator | None = None) -> AlignedPair:
    """Advance the later signal by the estimated lag, crop both to the
    overlap, then apply the same duration fix (shared crop offset) to both."""
    lag = estimate_delay(deg, ref, max_lag)
    d, r = deg.samples, ref.samples
    if lag >= 0:
        d = d[lag:]
    else:
        r = r[-lag:]
    overlap = min(len(d), len(r))
    sr = deg.sample_rate
    if overlap < 0.5 * sr:
        raise AlignmentError(
            f"aligned overlap {overlap / sr:.3f} s is shorter than 0.5 s"
        )
    d, r = d[:overlap], r[:overlap]

    target_n = int(round(target_s * sr))
    offset = 0
    if overlap > target_n:
        if rng is None:
            raise FeatureError("align_pair needs an rng to crop a long overlap")
        offset = int(rng.integers(0, overlap - target_n + 1))
    d, nd = _crop_or_pad(d, target_n, offset)
    r, nr = _crop_or_pad(r, target_n, offset)
    return AlignedPair(
        deg=Waveform(d, sr, n_valid=None if nd == target_n else nd),
        ref=Waveform(r, sr, n_valid=None if nr == target_n else nr),
        lag_samples=lag,
    )


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """(n_mels, n_fft//2 + 1) triangular filters on the mel scale."""
    n_bins = cfg.n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * cfg.sample_rate / cfg.n_fft
    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax),
                          cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((cfg.n_mels, n_bins))
    for i in range(cfg.n_mels):
        left, center, right = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        rise = (fft_freqs - left) / max(center - left, 1e-12)
        fall = (right - fft_freqs) / max(right - center, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(rise, fall))
    return fb


def frame_count(n_samples: int, cfg: MelConfig) -> int:
    return 1 + (n_samples - cfg.win_length) // cfg.hop_length


def log_mel(wav: Waveform, cfg: MelConfig = MelConfig()) -> FeatureMatrix:
    """Hann-window STFT power -> triangular mel energies -> ln(E + floor)."""
    if wav.sample_rate != cfg.sample_rate:
        raise FeatureError(
            f"waveform at {wav.sample_rate} Hz, mel config expects "
            f"{cfg.sample_rate} Hz"
        )
    x = wav.samples
    if len(x) < cfg.win_length:
        raise FeatureError(
            f"clip of {len(x)} samples shorter than one {cfg.win_length}-sample window"
        )
    T = frame_count(len(x), cfg)
    idx = (np.arange(T)[:, None] * cfg.hop_length + np.arange(cfg.win_length))
    frames = x[idx] * np.hanning(cfg.win_length)
    spec = np.fft.rfft(frames, n=cfg.n_fft, axis=1)
    power = np.abs(spec) ** 2
    mel_energy = power @ mel_filterbank(cfg).T
    feats = np.log(mel_energy + cfg.floor)

    n_valid = wav.n_valid if wav.n_valid is not None else len(x)
    valid_frames = min(T, math.ceil(n_valid / cfg.hop_length))
    return FeatureMatrix(frames=feats, frame_rate=cfg.sample_rate / cfg.hop_length,
                         valid_frames=valid_frames)


# Binary feature cache: 16-byte magic+version header, dimensions, then
# row-major little-endian float32 data.
_CACHE_MAGIC = b"SPEECHQA-FEAT\x00"  # 14 bytes
_CACHE_VERSION = 1


def save_features(path: str, fm: FeatureMatrix) -> None:
    rows, cols = fm.frames.shape
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<H", _CACHE_VERSION))
        fh.write(struct.pack("<IIIf", rows, cols, fm.valid_frames, fm.frame_rate))
        fh.write(np.ascontiguousarray(fm.frames, dtype="<f4").tobytes())


def load_features(path: str) -> FeatureMatrix:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:14] != _CACHE_MAGIC:
            raise FormatError(f"{path}: not a speechqa feature cache file")
        (version,) = struct.unpack("<H", head[14:16])
        if version != _CACHE_VERSION:
            raise FormatError(f"{path}: unsupported cache version {version}")
        meta = fh.read(16)
        if len(meta) != 16:
            raise FormatError(f"{path}: truncated cache header")
        rows, cols, valid, frame_rate = struct.unpack("<IIIf", meta)
        payload = fh.read(rows * cols * 4)
        if len(payload) != rows * cols * 4:
            raise FormatError(f"{path}: truncated cache payload")
        frames = np.frombuffer(payload, dtype="<f4").reshape(rows, cols)
    return FeatureMatrix(frames=frames.astype(np.float64),
                         frame_rate=float(frame_rate), valid_frames=int(valid))
