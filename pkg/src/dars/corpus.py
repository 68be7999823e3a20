"""Manifests, mel/alignment file I/O, training-strategy grouping and the toy corpus."""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SEVERITIES = ("Severe", "ModSev", "Moderate", "Mild", "Control")
DYSARTHRIC_SEVERITIES = SEVERITIES[:4]
# Column headers used when rendering reports.
SEVERITY_LABELS = {
    "Severe": "Severe",
    "ModSev": "Mod.-Sev.",
    "Moderate": "Moderate",
    "Mild": "Mild",
    "Control": "Control",
}
SPLITS = ("train", "valid", "eval")

# Speaker -> (severity, utterance count) for the eight TORGO dysarthric speakers.
TORGO_SPEAKERS = {
    "F01": ("Severe", 228),
    "M01": ("Severe", 739),
    "M02": ("Severe", 772),
    "M04": ("Severe", 659),
    "M05": ("ModSev", 610),
    "F03": ("Moderate", 1097),
    "F04": ("Mild", 675),
    "M03": ("Mild", 806),
}

MEL_MAGIC = b"MEL1"
_MEL_HEADER = struct.Struct("<4sIId")

PAD_ID = 0
BOUNDARY_ID = 1


class ManifestError(ValueError):
    """Raised for malformed or inconsistent manifests."""


class Strategy(str, enum.Enum):
    ASP = "ASp"
    SSP = "SSp"
    DSPG = "DSpG"

    @classmethod
    def parse(cls, value: "str | Strategy") -> "Strategy":
        if isinstance(value, Strategy):
            return value
        for member in cls:
            if member.value.lower() == str(value).lower():
                return member
        raise ValueError(f"unknown strategy {value!r}; expected one of asp, ssp, dspg")


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    speaker_id: str
    severity: str
    phonemes: tuple[int, ...]
    mel_path: Path
    alignment_path: Path
    split: str = "train"


@dataclass
class MelSpectrogram:
    """Frame-major log-mel matrix of shape (T, D)."""

    frames: np.ndarray
    frame_shift_s: float = 0.01

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError(f"mel must be a non-empty T x D matrix, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("mel contains non-finite values")
        self.frames = frames

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class TrainingGroup:
    strategy: Strategy
    group_key: str
    records: list[UtteranceRecord]


@dataclass(frozen=True)
class AlignmentToken:
    kind: str  # "P" or "SIL"
    token_id: int
    start: int
    end: int

    @property
    def n_frames(self) -> int:
        return self.end - self.start


# ---------------------------------------------------------------- file formats


def save_mel(path, mel: MelSpectrogram) -> None:
    frames = np.ascontiguousarray(mel.frames, dtype="<f4")
    t, d = frames.shape
    with open(path, "wb") as fh:
        fh.write(_MEL_HEADER.pack(MEL_MAGIC, t, d, float(mel.frame_shift_s)))
        fh.write(frames.tobytes())


def load_mel(path) -> MelSpectrogram:
    data = Path(path).read_bytes()
    if len(data) < _MEL_HEADER.size:
        raise ValueError(f"{path}: truncated MEL1 header")
    magic, t, d, shift = _MEL_HEADER.unpack_from(data)
    if magic != MEL_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = data[_MEL_HEADER.size:]
    if len(body) != 4 * t * d:
        raise ValueError(f"{path}: expected {t}x{d} float32 payload, got {len(body)} bytes")
    frames = np.frombuffer(body, dtype="<f4").reshape(t, d).astype(np.float32)
    return MelSpectrogram(frames, shift)


def format_alignment(tokens) -> str:
    return "".join(f"{tok.kind} {tok.token_id} {tok.start} {tok.end}\n" for tok in tokens)


def parse_alignment(text: str) -> list[AlignmentToken]:
    tokens = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] not in ("P", "SIL"):
            raise ValueError(f"alignment line {lineno}: expected 'P|SIL id start end', got {line!r}")
        try:
            token_id, start, end = (int(p) for p in parts[1:])
        except ValueError as exc:
            raise ValueError(f"alignment line {lineno}: non-integer field in {line!r}") from exc
        if end <= start or start < 0:
            raise ValueError(f"alignment line {lineno}: empty or negative span [{start}, {end})")
        tokens.append(AlignmentToken(parts[0], token_id, start, end))
    return tokens


def read_alignment(path) -> list[AlignmentToken]:
    return parse_alignment(Path(path).read_text(encoding="utf-8"))


def write_alignment(path, tokens) -> None:
    Path(path).write_text(format_alignment(tokens), encoding="utf-8")


def read_normal_table(path) -> dict[int, float]:
    table = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"normal table line {lineno}: expected 'phoneme_id mean_frames'")
        table[int(parts[0])] = float(parts[1])
    return table


def write_normal_table(path, table: dict[int, float]) -> None:
    lines = [f"{pid} {table[pid]:.6g}\n" for pid in sorted(table)]
    Path(path).write_text("".join(lines), encoding="utf-8")


# ---------------------------------------------------------------- manifests


def load_manifest(path) -> list[UtteranceRecord]:
    """Read a tab-separated manifest; relative paths resolve against its directory."""
    path = Path(path)
    root = path.parent
    records: list[UtteranceRecord] = []
    seen: set[str] = set()
    speaker_severity: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 7:
            raise ManifestError(f"{path}:{lineno}: expected 7 tab-separated fields, got {len(fields)}")
        utt_id, speaker, severity, phon, mel_path, ali_path, split = fields
        if severity not in SEVERITIES:
            raise ManifestError(f"{path}:{lineno}: unknown severity {severity!r}")
        if split not in SPLITS:
            raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
        try:
            phonemes = tuple(int(p) for p in phon.split())
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: phoneme ids must be integers") from None
        if not phonemes:
            raise ManifestError(f"{path}:{lineno}: empty phoneme sequence")
        if utt_id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate utt_id {utt_id!r}")
        if speaker_severity.setdefault(speaker, severity) != severity:
            raise ManifestError(
                f"{path}:{lineno}: speaker {speaker} has severity {severity} but was "
                f"{speaker_severity[speaker]} earlier"
            )
        seen.add(utt_id)
        records.append(
            UtteranceRecord(utt_id, speaker, severity, phonemes, root / mel_path, root / ali_path, split)
        )
    return records


def write_manifest(path, records, relative_to=None) -> None:
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent

    def rel(p):
        try:
            return str(Path(p).relative_to(base))
        except ValueError:
            return str(p)

    lines = []
    for r in records:
        phon = " ".join(str(p) for p in r.phonemes)
        lines.append(
            "\t".join([r.utt_id, r.speaker_id, r.severity, phon, rel(r.mel_path), rel(r.alignment_path), r.split])
            + "\n"
        )
    path.write_text("".join(lines), encoding="utf-8")


def group_records(records, strategy) -> list[TrainingGroup]:
    """Partition dysarthric records by training strategy. Control speakers are dropped."""
    strategy = Strategy.parse(strategy)
    records = list(records)
    if not records:
        raise ValueError("cannot group an empty record list")
    usable = [r for r in records if r.severity != "Control"]
    if not usable:
        raise ValueError("no dysarthric records to group (all speakers are controls)")
    if strategy is Strategy.ASP:
        return [TrainingGroup(strategy, "all", usable)]

    if strategy is Strategy.SSP:
        key = lambda r: r.speaker_id  # noqa: E731
    else:
        key = lambda r: r.severity  # noqa: E731
    buckets: dict[str, list[UtteranceRecord]] = {}
    for r in usable:
        buckets.setdefault(key(r), []).append(r)
    keys = list(buckets)
    if strategy is Strategy.DSPG:
        keys.sort(key=SEVERITIES.index)
    return [TrainingGroup(strategy, k, buckets[k]) for k in keys]


# ---------------------------------------------------------------- toy corpus


def _default_stretch():
    return {"Severe": 1.8, "ModSev": 1.6, "Moderate": 1.4, "Mild": 1.2, "Control": 1.0}


def _default_pause_prob():
    return {"Severe": 0.9, "ModSev": 0.85, "Moderate": 0.8, "Mild": 0.7, "Control": 0.0}


def _default_pause_range():
    # Seconds. Ranges sit inside the default class buckets (0.15 s, 0.40 s).
    return {
        "Severe": (0.42, 0.55),
        "ModSev": (0.22, 0.36),
        "Moderate": (0.17, 0.30),
        "Mild": (0.04, 0.13),
        "Control": (0.04, 0.10),
    }


def _default_tremor():
    return {"Severe": 0.5, "ModSev": 0.4, "Moderate": 0.3, "Mild": 0.2, "Control": 0.0}


@dataclass
class ToyCorpusConfig:
    n_mels: int = 80
    frame_shift_s: float = 0.01
    vocab_size: int = 24
    words_per_utt: tuple[int, int] = (2, 4)
    phonemes_per_word: tuple[int, int] = (2, 4)
    normal_frames: tuple[int, int] = (3, 7)
    boundary_frames: int = 2
    speakers: dict = field(default_factory=lambda: dict(TORGO_SPEAKERS))
    stretch: dict = field(default_factory=_default_stretch)
    duration_jitter: float = 0.15
    pause_prob: dict = field(default_factory=_default_pause_prob)
    pause_range_s: dict = field(default_factory=_default_pause_range)
    spurious_pause_prob: float = 0.03
    tremor_amp: dict = field(default_factory=_default_tremor)
    speaker_style_scale: float = 0.6
    utt_style_scale: float = 0.35
    noise_std: float = 0.05
    silence_level: float = -4.0
    valid_ratio: float = 0.15
    eval_ratio: float = 0.1
    split_seed: int | None = None  # defaults to the corpus seed
    longest_pause_threshold_s: float = 0.40

    @classmethod
    def from_dict(cls, values: dict) -> "ToyCorpusConfig":
        cfg = cls()
        for key, val in values.items():
            if not hasattr(cfg, key):
                raise KeyError(f"unknown toy corpus option {key!r}")
            if isinstance(getattr(cfg, key), tuple):
                val = tuple(val)
            elif isinstance(getattr(cfg, key), dict):
                merged = dict(getattr(cfg, key))
                merged.update({k: tuple(v) if isinstance(v, list) else v for k, v in val.items()})
                val = merged
            setattr(cfg, key, val)
        return cfg


@dataclass
class ToyCorpus:
    root: Path
    manifest_path: Path
    records: list[UtteranceRecord]
    normal_durations: dict[str, list[int]]
    normal_table_path: Path


# Phoneme spectral envelopes are a fixed function of phoneme id, independent of the corpus seed.
_ENVELOPE_SEED = 90210


def phoneme_envelope(phoneme_id: int, n_mels: int) -> np.ndarray:
    bins = np.arange(n_mels, dtype=np.float64)
    if phoneme_id == BOUNDARY_ID:
        return -2.5 + 0.8 * np.exp(-0.5 * ((bins - 0.3 * n_mels) / (0.15 * n_mels)) ** 2)
    rng = np.random.default_rng(_ENVELOPE_SEED + phoneme_id)
    env = np.full(n_mels, -2.0)
    for _ in range(3):
        amp = rng.uniform(1.5, 3.5)
        centre = rng.uniform(0.05, 0.95) * n_mels
        width = rng.uniform(0.04, 0.12) * n_mels
        env += amp * np.exp(-0.5 * ((bins - centre) / width) ** 2)
    return env


def _style_curve(coeffs, n_mels):
    bins = np.arange(n_mels, dtype=np.float64) / n_mels
    curve = np.zeros(n_mels)
    for k, c in enumerate(coeffs):
        curve += c * np.cos(np.pi * k * bins)
    return curve


def _allocate_counts(n_utts, speakers):
    names = list(speakers)
    weights = np.array([speakers[s][1] for s in names], dtype=np.float64)
    raw = n_utts * weights / weights.sum()
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    for idx in order[: n_utts - counts.sum()]:
        counts[idx] += 1
    return dict(zip(names, counts.tolist()))


def _sample_utterance(rng, cfg, severity, normal_table):
    n_words = int(rng.integers(cfg.words_per_utt[0], cfg.words_per_utt[1] + 1))
    phonemes: list[int] = []
    for w in range(n_words):
        if w:
            phonemes.append(BOUNDARY_ID)
        n_ph = int(rng.integers(cfg.phonemes_per_word[0], cfg.phonemes_per_word[1] + 1))
        phonemes.extend(int(p) for p in rng.integers(BOUNDARY_ID + 1, cfg.vocab_size, size=n_ph))

    stretch = cfg.stretch[severity]
    normal = [int(normal_table[p]) for p in phonemes]
    dys = []
    for base in normal:
        jitter = 1.0 + cfg.duration_jitter * rng.random()
        dys.append(max(base, int(round(base * stretch * jitter))))

    # Pause after position i in seconds; 0 means none. Final phoneme never pauses.
    lo, hi = cfg.pause_range_s[severity]
    pauses = [0.0] * len(phonemes)
    for i, p in enumerate(phonemes[:-1]):
        prob = cfg.pause_prob[severity] if p == BOUNDARY_ID else cfg.spurious_pause_prob
        if severity != "Control" and rng.random() < prob:
            pauses[i] = rng.uniform(lo, hi)
    if severity == "Severe" and max(pauses) <= cfg.longest_pause_threshold_s:
        first_boundary = phonemes.index(BOUNDARY_ID)
        pauses[first_boundary] = rng.uniform(max(lo, cfg.longest_pause_threshold_s + 0.01), max(hi, lo + 0.02))
    pause_frames = [int(round(s / cfg.frame_shift_s)) for s in pauses]
    return phonemes, normal, dys, pause_frames


def _render_mel(rng, cfg, phonemes, dys, pause_frames, speaker_curve, severity):
    tokens: list[AlignmentToken] = []
    segments = []
    t = 0
    for p, d, s in zip(phonemes, dys, pause_frames):
        tokens.append(AlignmentToken("P", p, t, t + d))
        segments.append((phoneme_envelope(p, cfg.n_mels), d, True))
        t += d
        if s > 0:
            tokens.append(AlignmentToken("SIL", 0, t, t + s))
            segments.append((np.full(cfg.n_mels, cfg.silence_level), s, False))
            t += s
    frames = np.concatenate([np.tile(env, (n, 1)) for env, n, _ in segments], axis=0)
    speech = np.concatenate([np.full(n, is_speech) for _, n, is_speech in segments])

    utt_curve = _style_curve(cfg.utt_style_scale * rng.standard_normal(3), cfg.n_mels)
    frames = frames + speaker_curve + utt_curve
    period = rng.uniform(20.0, 60.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    tremor = cfg.tremor_amp[severity] * np.sin(2 * np.pi * np.arange(t) / period + phase)
    frames = frames + (tremor * speech)[:, None]
    frames = frames + cfg.noise_std * rng.standard_normal(frames.shape)
    return frames.astype(np.float32), tokens


def toy_normal_table(cfg: ToyCorpusConfig) -> dict[int, float]:
    """Mean normal-speech frame count per phoneme id (fixed function of the vocabulary)."""
    rng = np.random.default_rng(_ENVELOPE_SEED)
    lo, hi = cfg.normal_frames
    table = {pid: float(rng.integers(lo, hi + 1)) for pid in range(BOUNDARY_ID + 1, cfg.vocab_size)}
    table[BOUNDARY_ID] = float(cfg.boundary_frames)
    return table


def generate_toy_corpus(seed: int, n_utts: int, config: ToyCorpusConfig | None = None, out_dir=None) -> ToyCorpus:
    """Write a deterministic pseudo-dysarthric corpus under ``out_dir``.

    Layout: ``manifest.tsv``, ``mels/<utt>.mel``, ``alignments/<utt>.ali``,
    ``normal_durations.tsv`` (per-utterance unstretched, pause-free frame
    counts) and ``normal_table.txt`` (``phoneme_id mean_frames``).
    """
    if n_utts < 1:
        raise ValueError("n_utts must be >= 1")
    if out_dir is None:
        raise ValueError("out_dir is required")
    cfg = config or ToyCorpusConfig()
    root = Path(out_dir)
    (root / "mels").mkdir(parents=True, exist_ok=True)
    (root / "alignments").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    split_rng = np.random.default_rng(seed if cfg.split_seed is None else cfg.split_seed)
    normal_table = toy_normal_table(cfg)
    counts = _allocate_counts(n_utts, cfg.speakers)

    records = []
    normal_durations = {}
    for speaker, (severity, _) in cfg.speakers.items():
        n = counts[speaker]
        if n == 0:
            continue
        speaker_curve = _style_curve(cfg.speaker_style_scale * rng.standard_normal(3), cfg.n_mels)
        splits = _assign_splits(split_rng, n, cfg.valid_ratio, cfg.eval_ratio)
        for k in range(n):
            utt_id = f"{speaker}_{k:04d}"
            phonemes, normal, dys, pause_frames = _sample_utterance(rng, cfg, severity, normal_table)
            frames, tokens = _render_mel(rng, cfg, phonemes, dys, pause_frames, speaker_curve, severity)
            mel_path = root / "mels" / f"{utt_id}.mel"
            ali_path = root / "alignments" / f"{utt_id}.ali"
            save_mel(mel_path, MelSpectrogram(frames, cfg.frame_shift_s))
            write_alignment(ali_path, tokens)
            normal_durations[utt_id] = normal
            records.append(
                UtteranceRecord(utt_id, speaker, severity, tuple(phonemes), mel_path, ali_path, splits[k])
            )

    manifest_path = root / "manifest.tsv"
    write_manifest(manifest_path, records)
    lines = [f"{u}\t{' '.join(map(str, d))}\n" for u, d in normal_durations.items()]
    (root / "normal_durations.tsv").write_text("".join(lines), encoding="utf-8")
    table_path = root / "normal_table.txt"
    write_normal_table(table_path, normal_table)
    return ToyCorpus(root, manifest_path, records, normal_durations, table_path)


def _assign_splits(rng, n, valid_ratio, eval_ratio):
    n_eval = int(round(eval_ratio * n))
    n_valid = int(round(valid_ratio * n))
    if n >= 3:
        n_valid = max(n_valid, 1)
    if n_eval + n_valid >= n:
        n_eval = max(0, min(n_eval, n - 1 - n_valid))
        n_valid = max(0, min(n_valid, n - 1 - n_eval))
    labels = ["eval"] * n_eval + ["valid"] * n_valid + ["train"] * (n - n_eval - n_valid)
    order = rng.permutation(n)
    out = [""] * n
    for slot, idx in enumerate(order):
        out[idx] = labels[slot]
    return out


def load_normal_durations(path) -> dict[str, list[int]]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            utt, durs = line.split("\t")
            out[utt] = [int(x) for x in durs.split()]
    return out


__all__ = [
    "AlignmentToken",
    "ManifestError",
    "MelSpectrogram",
    "Strategy",
    "ToyCorpus",
    "ToyCorpusConfig",
    "TrainingGroup",
    "UtteranceRecord",
    "generate_toy_corpus",
    "group_records",
    "load_manifest",
    "load_mel",
    "save_mel",
]
