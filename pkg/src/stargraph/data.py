"""Dataset files, subject-disjoint splits and the synthetic activity generator.

On-disk format is JSON lines: one header object
``{"format": "pcseq", "version": 1, "seq_len": N, "classes": m}`` followed by
one record per sequence ``{"label": int, "subject": int, "frames": [[[x, y, z], ...], ...]}``.
Paths ending in ``.gz`` are read and written gzip-compressed.
"""

from __future__ import annotations

import gzip
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import GraphSequence
from .pointcloud import PointSequence

log = logging.getLogger(__name__)

FORMAT_NAME = "pcseq"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class Dataset:
    seq_len: int
    classes: int
    sequences: list[PointSequence] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def subjects(self) -> list[int]:
        return sorted({s.subject_id for s in self.sequences})

    def validate(self) -> None:
        for i, s in enumerate(self.sequences):
            if len(s) != self.seq_len:
                raise ValueError(f"sequence {i} has {len(s)} frames, expected {self.seq_len}")
            if not 0 <= s.label < self.classes:
                raise ValueError(f"sequence {i} label {s.label} outside [0, {self.classes})")


def _open(path, mode: str):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def _write_lines(path, objects: Iterable[dict]) -> None:
    text = "".join(json.dumps(obj) + "\n" for obj in objects).encode("utf-8")
    path = Path(path)
    if path.suffix == ".gz":
        # fixed mtime and no embedded file name keep the bytes reproducible
        text = gzip.compress(text, mtime=0)
    path.write_bytes(text)


def _record(seq: PointSequence) -> dict:
    return {"label": seq.label, "subject": seq.subject_id,
            "frames": [[list(p) for p in f.points] for f in seq.frames]}


def save(dataset: Dataset, path, meta: dict | None = None) -> None:
    """Write ``dataset``; ``meta`` is stored under the header's "meta" key and ignored on load."""
    dataset.validate()
    header = {"format": FORMAT_NAME, "version": FORMAT_VERSION,
              "seq_len": dataset.seq_len, "classes": dataset.classes}
    if meta:
        header["meta"] = meta
    _write_lines(path, [header, *(_record(seq) for seq in dataset.sequences)])


def _parse_record(obj, lineno: int, seq_len: int, classes: int) -> PointSequence:
    if not isinstance(obj, dict) or not {"label", "subject", "frames"} <= obj.keys():
        raise DatasetFormatError(lineno, "record needs label, subject and frames")
    label, subject, frames = obj["label"], obj["subject"], obj["frames"]
    if not isinstance(label, int) or isinstance(label, bool) or not 0 <= label < classes:
        raise DatasetFormatError(lineno, f"label {label!r} outside [0, {classes})")
    if not isinstance(subject, int) or isinstance(subject, bool):
        raise DatasetFormatError(lineno, f"subject {subject!r} is not an integer")
    if not isinstance(frames, list) or len(frames) != seq_len:
        got = len(frames) if isinstance(frames, list) else type(frames).__name__
        raise DatasetFormatError(lineno, f"expected {seq_len} frames, got {got}")
    try:
        return PointSequence.from_arrays([np.asarray(f, dtype=np.float64).reshape(-1, 3) if f else np.zeros((0, 3))
                                          for f in frames], label, subject)
    except (ValueError, TypeError) as exc:
        raise DatasetFormatError(lineno, f"bad frame data: {exc}") from None


def load(path) -> Dataset:
    """Read and validate a dataset file; errors carry the offending line number."""
    with _open(path, "r") as fh:
        lines = iter(enumerate(fh, start=1))
        header = None
        for lineno, line in lines:
            if not line.strip():
                continue
            try:
                header = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(lineno, f"malformed JSON: {exc.msg}") from None
            break
        if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
            raise DatasetFormatError(1, f"missing {FORMAT_NAME!r} header")
        if header.get("version") != FORMAT_VERSION:
            raise DatasetFormatError(lineno, f"unsupported version {header.get('version')!r}")
        seq_len, classes = header.get("seq_len"), header.get("classes")
        if not isinstance(seq_len, int) or seq_len < 1 or not isinstance(classes, int) or classes < 1:
            raise DatasetFormatError(lineno, "header needs positive integer seq_len and classes")
        ds = Dataset(seq_len, classes)
        for lineno, line in lines:
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(lineno, f"malformed JSON: {exc.msg}") from None
            ds.sequences.append(_parse_record(obj, lineno, seq_len, classes))
    return ds


def split_by_subject(dataset: Dataset, train_subjects: Iterable[int], val_subjects: Iterable[int],
                     test_subjects: Iterable[int]) -> tuple[Dataset, Dataset, Dataset]:
    """Person-disjoint split; sequences from unlisted subjects are dropped with a warning."""
    groups = [set(train_subjects), set(val_subjects), set(test_subjects)]
    for name, g in zip(("train", "val", "test"), groups):
        if not g:
            raise ValueError(f"{name} subject set is empty")
    if (groups[0] & groups[1]) or (groups[0] & groups[2]) or (groups[1] & groups[2]):
        raise ValueError("subject sets must be disjoint")
    parts = [Dataset(dataset.seq_len, dataset.classes) for _ in groups]
    unknown = set()
    for seq in dataset.sequences:
        for g, part in zip(groups, parts):
            if seq.subject_id in g:
                part.sequences.append(seq)
                break
        else:
            unknown.add(seq.subject_id)
    if unknown:
        log.warning("subjects %s are in no split and were left out", sorted(unknown))
    return parts[0], parts[1], parts[2]


# -- synthetic generator -----------------------------------------------------------

@dataclass
class Trajectory:
    """Centroid path: offset + drift*t + amplitude*sin(2*pi*frequency*t + phase), per axis."""

    offset: tuple[float, float, float]
    amplitude: tuple[float, float, float] = (0.0, 0.0, 0.0)
    frequency: float = 1.0
    phase: tuple[float, float, float] = (0.0, 0.0, 0.0)
    drift: tuple[float, float, float] = (0.0, 0.0, 0.0)
    weight: float = 1.0

    def position(self, t: np.ndarray, freq_scale: float = 1.0) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)[..., None]
        arg = 2 * math.pi * self.frequency * freq_scale * t + np.asarray(self.phase)
        return np.asarray(self.offset) + np.asarray(self.drift) * t + np.asarray(self.amplitude) * np.sin(arg)


@dataclass
class ClassSpec:
    name: str
    centroids: list[Trajectory]


@dataclass
class SynthSpec:
    classes: list[ClassSpec]
    body: tuple[float, float, float] = (2.5, 3.0, 1.0)
    points_range: tuple[int, int] = (10, 50)
    sigma: float = 0.05
    fps: float = 15.0
    seq_len: int = 50
    subjects: int = 6
    subject_shift: float = 0.2
    subject_tempo: float = 0.1
    start_jitter: float = 1.0

    def validate(self) -> None:
        if len(self.classes) < 2:
            raise ValueError("synthetic spec needs at least two classes")
        lo, hi = self.points_range
        if not 0 <= lo <= hi:
            raise ValueError(f"bad points_range {self.points_range}")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not self.fps > 0 or self.seq_len < 1 or self.subjects < 1:
            raise ValueError("fps, seq_len and subjects must be positive")
        if not 0 <= self.subject_tempo < 1:
            raise ValueError("subject_tempo must be in [0, 1)")
        for c in self.classes:
            if not c.centroids:
                raise ValueError(f"class {c.name!r} has no centroids")
            for tr in c.centroids:
                if min(tr.amplitude) < 0 or not any(a > 0 for a in tr.amplitude):
                    raise ValueError(f"class {c.name!r}: amplitudes must be non-negative and not all zero")
                if not tr.frequency > 0 or not tr.weight > 0:
                    raise ValueError(f"class {c.name!r}: frequency and weight must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        d["classes"] = [ClassSpec(c["name"], [Trajectory(**tr) for tr in c["centroids"]]) for c in d["classes"]]
        for key in ("body", "points_range"):
            if key in d:
                d[key] = tuple(d[key])
        spec = cls(**d)
        spec.validate()
        return spec


def synth4_spec() -> SynthSpec:
    """Four activities, three moving centroids each, with distinct dominant frequencies."""
    torso = (0.0, 0.0, 0.0)
    return SynthSpec(classes=[
        ClassSpec("arms_vertical", [
            Trajectory(torso, (0.02, 0.02, 0.03), 0.4),
            Trajectory((-0.25, -0.25, 0.0), (0.02, 0.02, 0.5), 1.2),
            Trajectory((-0.25, 0.25, 0.0), (0.02, 0.02, 0.5), 1.2),
        ]),
        ClassSpec("arms_horizontal", [
            Trajectory(torso, (0.02, 0.02, 0.03), 0.4),
            Trajectory((0.0, -0.5, 0.4), (0.3, 0.1, 0.02), 0.7),
            Trajectory((0.0, 0.5, 0.4), (0.3, 0.1, 0.02), 0.7),
        ]),
        ClassSpec("walk_in_place", [
            Trajectory(torso, (0.02, 0.02, 0.06), 1.8),
            Trajectory((0.0, -0.12, -0.6), (0.05, 0.02, 0.2), 1.8),
            Trajectory((0.0, 0.12, -0.6), (0.05, 0.02, 0.2), 1.8, phase=(math.pi, 0.0, math.pi)),
        ]),
        ClassSpec("walk_back_forth", [
            Trajectory(torso, (0.9, 0.05, 0.03), 0.3),
            Trajectory((0.0, -0.15, -0.6), (0.9, 0.05, 0.12), 0.3, phase=(0.0, 0.0, 0.0)),
            Trajectory((0.0, 0.15, -0.6), (0.9, 0.05, 0.12), 0.3, phase=(0.0, 0.0, math.pi)),
        ]),
    ])


BUILTIN_SPECS = {"synth4": synth4_spec}
SYNTH4_SPLIT = ((1, 2, 3, 4), (5,), (6,))


def _subject_traits(seed: int, subject: int, spec: SynthSpec):
    rng = np.random.default_rng([seed, 0x5B, subject])
    shift = rng.uniform(-spec.subject_shift, spec.subject_shift, size=3) * np.array([1.0, 1.0, 0.25])
    tempo = 1.0 + rng.uniform(-spec.subject_tempo, spec.subject_tempo)
    return shift, tempo


def synth_sequence(spec: SynthSpec, label: int, subject: int, seed: int, index: int) -> PointSequence:
    """One noisy activity instance; depends only on (spec, label, subject, seed, index)."""
    rng = np.random.default_rng([seed, index])
    shift, tempo = _subject_traits(seed, subject, spec)
    cls = spec.classes[label]
    weights = np.array([c.weight for c in cls.centroids])
    weights /= weights.sum()
    t0 = rng.uniform(0.0, spec.start_jitter)
    times = t0 + np.arange(spec.seq_len) / spec.fps
    centres = np.stack([c.position(times, tempo) for c in cls.centroids], axis=1)
    centres += np.asarray(spec.body) + shift
    lo, hi = spec.points_range
    frames = []
    for n in range(spec.seq_len):
        count = int(rng.integers(lo, hi + 1))
        which = rng.choice(len(cls.centroids), size=count, p=weights)
        pts = centres[n, which] + rng.normal(0.0, spec.sigma, size=(count, 3))
        frames.append(pts)
    return PointSequence.from_arrays(frames, label, subject)


def synth_generate(spec: SynthSpec, n_per_class: int, seed: int) -> Dataset:
    """Class-major sequences; subjects are dealt round-robin over the global index."""
    spec.validate()
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    ds = Dataset(spec.seq_len, len(spec.classes))
    index = 0
    for label in range(len(spec.classes)):
        for _ in range(n_per_class):
            subject = index % spec.subjects + 1
            ds.sequences.append(synth_sequence(spec, label, subject, seed, index))
            index += 1
    return ds


# -- graph sequences for inspection ------------------------------------------------

def save_graphs(graph_seqs: Sequence[GraphSequence], path) -> None:
    """JSON lines, one graph sequence per line: nodes and neighbour sets per frame."""
    _write_lines(path, ({
        "label": gs.label,
        "subject": gs.subject_id,
        "graph": gs.spec.to_dict() if gs.spec is not None else None,
        "frames": [{"nodes": g.nodes.tolist(), "neighbors": [list(s) for s in g.neighbor_sets],
                    "has_center": g.has_center} for g in gs.graphs],
    } for gs in graph_seqs))
