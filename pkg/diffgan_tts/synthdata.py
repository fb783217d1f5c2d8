"""Deterministic synthetic multi-speaker corpus.

Each speaker has a smooth spectral envelope and a pitch offset; each
token has a spectral bump and a base pitch. An utterance repeats every
token's frame for its duration, shifts the bump with the token's pitch,
adds the speaker envelope and a little seeded noise. Mels are log
amplitudes clipped to [-4, 4] and rounded to float32, so saving and
loading is exact.

On disk a corpus is a directory holding ``manifest.jsonl`` (one record
per utterance) and ``mels.f32`` (all mels back to back, little-endian
float32; records carry byte offsets into it).
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CorpusError
from .models import Utterance

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
MELS_NAME = "mels.f32"
MEL_CLIP = 4.0
MAX_DURATION = 8
ENVELOPE_TERMS = 4


@dataclass(frozen=True)
class CorpusSpec:
    n_speakers: int = 4
    n_tokens: int = 24
    n_utterances: int = 64
    min_frames: int = 16
    max_frames: int = 48
    mel_bins: int = 16
    seed: int = 0
    noise: float = 0.05

    def __post_init__(self) -> None:
        for name in ("n_speakers", "n_tokens", "min_frames", "max_frames", "mel_bins"):
            if getattr(self, name) < 1:
                raise ValueError(f"CorpusSpec.{name} must be positive, got {getattr(self, name)}")
        if self.n_utterances < 0:
            raise ValueError(f"CorpusSpec.n_utterances must be >= 0, got {self.n_utterances}")
        if self.max_frames < self.min_frames:
            raise ValueError(f"max_frames ({self.max_frames}) < min_frames ({self.min_frames})")


@dataclass(frozen=True)
class _Inventory:
    envelopes: np.ndarray  # [speakers x bins]
    speaker_pitch: np.ndarray  # [speakers]
    centers: np.ndarray  # [tokens]
    widths: np.ndarray
    amplitudes: np.ndarray
    base_pitch: np.ndarray


def speaker_envelopes(spec: CorpusSpec) -> np.ndarray:
    return _inventory(spec).envelopes


def _inventory(spec: CorpusSpec) -> _Inventory:
    rng = np.random.default_rng([spec.seed, 0])
    bins = np.arange(spec.mel_bins)
    k = np.arange(ENVELOPE_TERMS)[:, None]
    basis = np.cos(np.pi * k * (bins[None, :] + 0.5) / spec.mel_bins)  # smooth cosine basis
    coeffs = rng.normal(0.0, 0.6, size=(spec.n_speakers, ENVELOPE_TERMS)) / (1.0 + np.arange(ENVELOPE_TERMS))
    envelopes = coeffs @ basis - 1.0
    speaker_pitch = rng.uniform(-0.3, 0.3, size=spec.n_speakers)
    centers = rng.uniform(0.0, spec.mel_bins - 1, size=spec.n_tokens)
    widths = rng.uniform(0.8, 2.5, size=spec.n_tokens)
    amplitudes = rng.uniform(1.0, 3.0, size=spec.n_tokens)
    base_pitch = rng.uniform(0.0, 1.0, size=spec.n_tokens)
    return _Inventory(envelopes, speaker_pitch, centers, widths, amplitudes, base_pitch)


def _durations(rng: np.random.Generator, frames: int) -> np.ndarray:
    out: List[int] = []
    total = 0
    while total < frames:
        d = min(int(rng.integers(1, MAX_DURATION + 1)), frames - total)
        out.append(d)
        total += d
    return np.asarray(out, dtype=np.int64)


def render_utterance(spec: CorpusSpec, tokens, durations, speaker: int, rng: np.random.Generator,
                     inv: Optional[_Inventory] = None, uid: str = "utt") -> Utterance:
    """Mel, pitch and energy for a given token/duration sequence spoken by ``speaker``."""
    inv = inv if inv is not None else _inventory(spec)
    tokens = np.asarray(tokens, dtype=np.int64)
    durations = np.asarray(durations, dtype=np.int64)
    if not 0 <= speaker < spec.n_speakers:
        raise ValueError(f"speaker {speaker} outside [0, {spec.n_speakers})")
    frames = int(durations.sum())
    pitch = inv.base_pitch[tokens] + inv.speaker_pitch[speaker] + rng.normal(0.0, 0.1, size=tokens.shape[0])
    bins = np.arange(spec.mel_bins)
    rows = []
    for y, d, p in zip(tokens, durations, pitch):
        center = inv.centers[y] + 2.0 * p
        bump = inv.amplitudes[y] * np.exp(-0.5 * ((bins - center) / inv.widths[y]) ** 2)
        rows.append(np.repeat((inv.envelopes[speaker] + bump)[None, :], d, axis=0))
    mel = np.concatenate(rows, axis=0) + rng.normal(0.0, spec.noise, size=(frames, spec.mel_bins))
    mel = np.clip(mel, -MEL_CLIP, MEL_CLIP).astype(np.float32).astype(np.float64)
    bounds = np.concatenate([[0], np.cumsum(durations)])
    energy = np.array([mel[a:b].mean() for a, b in zip(bounds[:-1], bounds[1:])])
    return Utterance(uid, tokens, speaker, mel, durations, pitch, energy)


def _utterance(spec: CorpusSpec, inv: _Inventory, index: int) -> Utterance:
    rng = np.random.default_rng([spec.seed, 1, index])
    speaker = int(rng.integers(spec.n_speakers))
    frames = int(rng.integers(spec.min_frames, spec.max_frames + 1))
    durations = _durations(rng, frames)
    tokens = rng.integers(spec.n_tokens, size=durations.shape[0])
    return render_utterance(spec, tokens, durations, speaker, rng, inv, f"utt{index:05d}")


def generate_corpus(spec: CorpusSpec) -> Tuple[List[Utterance], List[Dict]]:
    """Build the corpus and its manifest records (offsets as in ``save_corpus``)."""
    inv = _inventory(spec)
    utts = [_utterance(spec, inv, i) for i in range(spec.n_utterances)]
    logger.info("Generated %d utterances (%d speakers, %d mel bins)", len(utts), spec.n_speakers, spec.mel_bins)
    return utts, manifest_records(utts)


def manifest_records(utts: Sequence[Utterance]) -> List[Dict]:
    records = []
    offset = 0
    for u in utts:
        records.append(
            {
                "id": u.uid,
                "speaker": int(u.speaker),
                "tokens": u.tokens.tolist(),
                "durations": u.durations.tolist(),
                "pitch": u.pitch.tolist(),
                "energy": u.energy.tolist(),
                "frames": int(u.frames),
                "mel_bins": int(u.mel.shape[1]),
                "offset": offset,
            }
        )
        offset += u.mel.size * 4
    return records


def save_corpus(path, utts: Sequence[Utterance], spec: CorpusSpec | None = None) -> Path:
    directory = Path(path)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with (directory / MANIFEST_NAME).open("w", encoding="utf-8") as fh:
            for record in manifest_records(utts):
                fh.write(json.dumps(record) + "\n")
        with (directory / MELS_NAME).open("wb") as fh:
            for u in utts:
                fh.write(np.ascontiguousarray(u.mel, dtype="<f4").tobytes())
        if spec is not None:
            (directory / "corpus.json").write_text(json.dumps(asdict(spec), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot write corpus to {directory}: {exc}") from exc
    logger.info("Saved %d utterances to %s", len(utts), directory)
    return directory


_REQUIRED = ("id", "speaker", "tokens", "durations", "pitch", "energy", "frames", "mel_bins", "offset")


def load_corpus(path) -> List[Utterance]:
    directory = Path(path)
    manifest = directory / MANIFEST_NAME
    mels_path = directory / MELS_NAME
    if not manifest.is_file():
        raise CorpusError(f"no corpus manifest at {manifest}")
    try:
        blob = mels_path.read_bytes()
        lines = manifest.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {directory}: {exc}") from exc
    utts: List[Utterance] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            missing = [k for k in _REQUIRED if k not in record]
            if missing:
                raise ValueError(f"missing field(s) {', '.join(missing)}")
            frames, bins, offset = int(record["frames"]), int(record["mel_bins"]), int(record["offset"])
        except (ValueError, TypeError) as exc:
            raise CorpusError(f"{manifest}:{lineno}: corrupt manifest record: {exc}") from exc
        end = offset + frames * bins * 4
        if offset < 0 or end > len(blob):
            raise CorpusError(
                f"{mels_path}: truncated; record {record['id']} (line {lineno}) needs bytes "
                f"{offset}..{end} but the file has {len(blob)}"
            )
        mel = np.frombuffer(blob, dtype="<f4", count=frames * bins, offset=offset).astype(np.float64)
        try:
            utts.append(
                Utterance(record["id"], record["tokens"], int(record["speaker"]), mel.reshape(frames, bins),
                          record["durations"], record["pitch"], record["energy"])
            )
        except ValueError as exc:
            raise CorpusError(f"{manifest}:{lineno}: {exc}") from exc
    logger.info("Loaded %d utterances from %s", len(utts), directory)
    return utts


def split_corpus(utts: Sequence[Utterance], n_valid: int) -> Tuple[List[Utterance], List[Utterance]]:
    """Last ``n_valid`` utterances are held out."""
    n_valid = max(0, min(n_valid, len(utts)))
    cut = len(utts) - n_valid
    return list(utts[:cut]), list(utts[cut:])


__all__ = [
    "CorpusSpec",
    "speaker_envelopes",
    "render_utterance",
    "generate_corpus",
    "manifest_records",
    "save_corpus",
    "load_corpus",
    "split_corpus",
]
