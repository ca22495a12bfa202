"""Corpus manifests: NISQA-style metadata ingestion, splits, and a fully
synthetic desk-scale corpus with proxy ground-truth scores.

Manifest files are UTF-8 delimiter-separated text with a header row. The
default column names are
``deg, ref, db, con, split, mos, noi, col, dis, loud, mos_std, noi_std,
col_std, dis_std, loud_std, delay`` and can be remapped via ``column_map``.
``deg``, ``split`` and the five score columns are required; everything else is
optional. ``clip_id`` is the stem of the degraded-file path.
"""

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .errors import ConfigError, DataError
from .seeding import rng_for

SCORE_FIELDS = ("mos", "noi", "col", "dis", "loud")
SPLITS = ("train", "val", "test")

DEFAULT_COLUMNS = {
    "deg": "deg",
    "ref": "ref",
    "db": "db",
    "con": "con",
    "split": "split",
    "mos": "mos",
    "noi": "noi",
    "col": "col",
    "dis": "dis",
    "loud": "loud",
    "mos_std": "mos_std",
    "noi_std": "noi_std",
    "col_std": "col_std",
    "dis_std": "dis_std",
    "loud_std": "loud_std",
    "delay": "delay",
}

_REQUIRED = ("deg", "split") + SCORE_FIELDS


@dataclass(frozen=True)
class ScoreSet:
    """Overall MOS plus the four perceptual dimension scores, each in [1, 5]."""

    mos: float
    noi: float
    col: float
    dis: float
    loud: float

    def __post_init__(self):
        for name in SCORE_FIELDS:
            v = getattr(self, name)
            if not (1.0 <= v <= 5.0):
                raise DataError(f"score '{name}'={v} outside [1, 5]")

    def get(self, name: str) -> float:
        if name not in SCORE_FIELDS:
            raise DataError(f"unknown score field '{name}'")
        return getattr(self, name)

    def as_tuple(self):
        return tuple(getattr(self, n) for n in SCORE_FIELDS)


@dataclass(frozen=True)
class ClipRecord:
    """One degraded clip with its metadata and listener scores."""

    clip_id: str
    deg_path: str
    ref_path: str | None
    split: str
    db_name: str
    condition: str | None
    scores: ScoreSet
    score_stds: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    delay_samples: int | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(
                f"clip '{self.clip_id}': unknown split tag '{self.split}'"
            )
        if len(self.score_stds) != 5 or any(s < 0 for s in self.score_stds):
            raise DataError(
                f"clip '{self.clip_id}': score_stds must be five non-negative reals"
            )


@dataclass(frozen=True)
class CorpusManifest:
    """An ordered, immutable collection of clip records."""

    records: tuple
    source: str = "external"
    seed: int = 0

    def __post_init__(self):
        ids = [r.clip_id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate clip_ids in manifest: {dup[:5]}")

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic degradation corpus."""

    n_clips: int = 500
    clip_duration_s: float = 10.0
    sample_rate: int = 16000
    snr_range_db: tuple = (0.0, 40.0)
    dropout_prob_range: tuple = (0.0, 0.3)
    gain_range_db: tuple = (-12.0, 12.0)
    lowpass_range_hz: tuple = (1000.0, 8000.0)
    split_fractions: tuple = (0.6, 0.2, 0.2)

    def __post_init__(self):
        for name in ("snr_range_db", "dropout_prob_range", "gain_range_db",
                     "lowpass_range_hz"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} not ordered: ({lo}, {hi})")
        if len(self.split_fractions) != 3:
            raise ConfigError("split_fractions must have three entries")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError(
                f"split_fractions sum to {sum(self.split_fractions)}, expected 1"
            )
        if self.n_clips < 0:
            raise ConfigError("n_clips must be non-negative")


def _parse_float(raw: str, row: int, column: str) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise DataError(
            f"row {row}: column '{column}' value {raw!r} is not numeric"
        ) from None


def load_manifest(path: str, column_map: dict | None = None,
                  delimiter: str = ",") -> CorpusManifest:
    """Read a delimiter-separated manifest into a CorpusManifest.

    Rows with any score outside [1, 5] are rejected with a DataError naming
    the offending row index (0-based over data rows).
    """
    colmap = dict(DEFAULT_COLUMNS)
    if column_map:
        colmap.update(column_map)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty manifest (no header row)") from None
        index = {name: i for i, name in enumerate(header)}
        for key in _REQUIRED:
            if colmap[key] not in index:
                raise ConfigError(
                    f"{path}: required column '{colmap[key]}' (for '{key}') missing"
                )

        def cell(row_vals, key):
            col = colmap.get(key)
            if col is None or col not in index:
                return None
            i = index[col]
            if i >= len(row_vals):
                return None
            v = row_vals[i].strip()
            return v if v != "" else None

        records = []
        for rownum, vals in enumerate(reader):
            if not vals or all(v.strip() == "" for v in vals):
                continue
            scores = {}
            for name in SCORE_FIELDS:
                raw = cell(vals, name)
                if raw is None:
                    raise DataError(f"row {rownum}: missing score '{name}'")
                v = _parse_float(raw, rownum, colmap[name])
                if not (1.0 <= v <= 5.0):
                    raise DataError(
                        f"row {rownum}: score '{name}'={v} outside [1, 5]"
                    )
                scores[name] = v
            stds = []
            for name in SCORE_FIELDS:
                raw = cell(vals, name + "_std")
                stds.append(0.0 if raw is None
                            else _parse_float(raw, rownum, colmap[name + "_std"]))
            deg = cell(vals, "deg")
            if deg is None:
                raise DataError(f"row {rownum}: empty degraded-file path")
            delay_raw = cell(vals, "delay")
            delay = None
            if delay_raw is not None:
                delay = int(_parse_float(delay_raw, rownum, colmap["delay"]))
            records.append(ClipRecord(
                clip_id=os.path.splitext(os.path.basename(deg))[0],
                deg_path=deg,
                ref_path=cell(vals, "ref"),
                split=cell(vals, "split") or "",
                db_name=cell(vals, "db") or "",
                condition=cell(vals, "con"),
                scores=ScoreSet(**scores),
                score_stds=tuple(stds),
                delay_samples=delay,
            ))
    return CorpusManifest(records=tuple(records), source="external")


def write_manifest(manifest: CorpusManifest, path: str,
                   delimiter: str = ",") -> None:
    """Write a manifest with the default column layout.

    Floats are written with ``repr`` so load_manifest round-trips exactly.
    """
    cols = ["deg", "ref", "db", "con", "split", "mos", "noi", "col", "dis",
            "loud", "mos_std", "noi_std", "col_std", "dis_std", "loud_std",
            "delay"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(cols)
        for r in manifest.records:
            row = [r.deg_path, r.ref_path or "", r.db_name, r.condition or "",
                   r.split]
            row += [repr(v) for v in r.scores.as_tuple()]
            row += [repr(float(s)) for s in r.score_stds]
            row.append("" if r.delay_samples is None else str(r.delay_samples))
            writer.writerow(row)


def split_manifest(manifest: CorpusManifest):
    """Partition a manifest into (train, val, test) by each record's tag."""
    buckets = {s: [] for s in SPLITS}
    for r in manifest.records:
        if r.split not in buckets:
            raise DataError(f"clip '{r.clip_id}': unknown split tag '{r.split}'")
        buckets[r.split].append(r)
    return tuple(
        replace(manifest, records=tuple(buckets[s])) for s in SPLITS
    )


def largest_remainder_counts(n: int, fractions) -> tuple:
    """Apportion n items over fractions, deterministic and exactly summing."""
    exact = [n * f for f in fractions]
    counts = [math.floor(e) for e in exact]
    short = n - sum(counts)
    order = sorted(range(len(fractions)),
                   key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return tuple(counts)


def _abs_param_range(lo: float, hi: float) -> tuple:
    """Range of |g| as g spans [lo, hi]."""
    if lo <= 0.0 <= hi:
        return 0.0, max(abs(lo), abs(hi))
    return min(abs(lo), abs(hi)), max(abs(lo), abs(hi))


def _unit(value: float, lo: float, hi: float) -> float:
    if hi <= lo:
        return 1.0  # degenerate range: the parameter cannot degrade anything
    return (value - lo) / (hi - lo)


def _affine_score(u: float) -> float:
    return float(np.clip(1.0 + 4.0 * u, 1.0, 5.0))


def proxy_scores(snr_db: float, dropout_frac: float, gain_db: float,
                 lowpass_hz: float, spec: SynthSpec) -> ScoreSet:
    """Deterministic monotone map from degradation parameters to scores.

    Each dimension is clamp(1 + 4*u, 1, 5) with u the min-max normalized
    controlling parameter (inverted where more of the parameter means worse
    quality); mos is the mean of the four dimensions.
    """
    u_noi = _unit(snr_db, *spec.snr_range_db)
    u_dis = 1.0 - _unit(dropout_frac, *spec.dropout_prob_range)
    u_loud = 1.0 - _unit(abs(gain_db), *_abs_param_range(*spec.gain_range_db))
    u_col = _unit(lowpass_hz, *spec.lowpass_range_hz)
    noi = _affine_score(u_noi)
    dis = _affine_score(u_dis)
    loud = _affine_score(u_loud)
    col = _affine_score(u_col)
    mos = float(np.clip((noi + dis + loud + col) / 4.0, 1.0, 5.0))
    return ScoreSet(mos=mos, noi=noi, col=col, dis=dis, loud=loud)


def _synth_reference(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    """Sum of 3-8 random sinusoids with slow random envelopes, peak 0.5."""
    t = np.arange(n) / sr
    n_sin = int(rng.integers(3, 9))
    x = np.zeros(n)
    f_hi = min(6000.0, 0.45 * sr)
    for _ in range(n_sin):
        f = rng.uniform(100.0, f_hi)
        amp = rng.uniform(0.2, 1.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        f_env = rng.uniform(0.1, 1.0)
        p_env = rng.uniform(0.0, 2.0 * np.pi)
        env = 0.3 + 0.7 * (0.5 + 0.5 * np.sin(2.0 * np.pi * f_env * t + p_env))
        x += amp * env * np.sin(2.0 * np.pi * f * t + phase)
    peak = np.max(np.abs(x))
    return 0.5 * x / max(peak, 1e-9)


def _single_pole_lowpass(x: np.ndarray, cutoff_hz: float, sr: int) -> np.ndarray:
    a = math.exp(-2.0 * math.pi * cutoff_hz / sr)
    return signal.lfilter([1.0 - a], [1.0, -a], x)


def _write_pcm16(path: str, x: np.ndarray, sr: int) -> None:
    pcm = np.round(np.clip(x, -1.0, 1.0) * 32767.0).astype(np.int16)
    wavfile.write(path, sr, pcm)


def synth_generate(spec: SynthSpec, seed: int, out_dir: str) -> CorpusManifest:
    """Generate the synthetic corpus: reference/degraded WAV pairs plus a
    manifest whose scores come from proxy_scores. Fully deterministic: the
    same (spec, seed) yields byte-identical files and manifest.

    The degraded file gets a known integer delay in [0, 0.5 s] prepended;
    the delay is recorded in the manifest's ``delay`` column.
    """
    sr = spec.sample_rate
    n_samples = int(round(spec.clip_duration_s * sr))
    ref_dir = os.path.join(out_dir, "ref")
    deg_dir = os.path.join(out_dir, "deg")
    if spec.n_clips > 0:
        os.makedirs(ref_dir, exist_ok=True)
        os.makedirs(deg_dir, exist_ok=True)
    else:
        os.makedirs(out_dir, exist_ok=True)

    counts = largest_remainder_counts(spec.n_clips, spec.split_fractions)
    split_of = []
    for s, c in zip(SPLITS, counts):
        split_of += [s] * c

    seg = max(1, int(round(0.05 * sr)))  # 50 ms dropout segments
    records = []
    for i in range(spec.n_clips):
        rng = rng_for(seed, "synth-clip", i)
        ref = _synth_reference(rng, n_samples, sr)

        snr_db = rng.uniform(*spec.snr_range_db)
        p_drop = rng.uniform(*spec.dropout_prob_range)
        gain_db = rng.uniform(*spec.gain_range_db)
        lowpass_hz = rng.uniform(*spec.lowpass_range_hz)
        delay = int(rng.integers(0, int(0.5 * sr) + 1))

        sig_power = float(np.mean(ref ** 2))
        noise_std = math.sqrt(sig_power / (10.0 ** (snr_db / 10.0)))
        deg = ref + rng.normal(0.0, noise_std, n_samples)
        drop_mask = rng.random(math.ceil(n_samples / seg)) < p_drop
        for k, dropped in enumerate(drop_mask):
            if dropped:
                deg[k * seg:(k + 1) * seg] = 0.0
        deg = deg * (10.0 ** (gain_db / 20.0))
        deg = _single_pole_lowpass(deg, lowpass_hz, sr)
        deg = np.concatenate([np.zeros(delay), deg])

        clip_id = f"clip_{i:05d}"
        ref_path = os.path.join(ref_dir, clip_id + ".wav")
        deg_path = os.path.join(deg_dir, clip_id + ".wav")
        try:
            _write_pcm16(ref_path, ref, sr)
            _write_pcm16(deg_path, deg, sr)
        except OSError as e:
            raise DataError(f"cannot write synthetic audio: {e}") from e

        records.append(ClipRecord(
            clip_id=clip_id,
            deg_path=deg_path,
            ref_path=ref_path,
            split=split_of[i],
            db_name="synthetic",
            condition=None,
            scores=proxy_scores(snr_db, p_drop, gain_db, lowpass_hz, spec),
            score_stds=(0.0,) * 5,
            delay_samples=delay,
        ))

    manifest = CorpusManifest(records=tuple(records), source="synthetic",
                              seed=seed)
    try:
        write_manifest(manifest, os.path.join(out_dir, "manifest.csv"))
    except OSError as e:
        raise DataError(f"cannot write manifest in {out_dir}: {e}") from e
    return manifest
