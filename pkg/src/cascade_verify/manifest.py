"""Dataset manifest: the CSV that ties WAV files to speaker/gender/emotion/split metadata."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import MalformedWav
from .frontend import wav_info

GENDERS = ("male", "female")
PAPER_EMOTIONS = ("neutral", "anger", "sadness", "happiness", "disgust", "fear")
COLUMNS = ("path", "speaker_id", "gender", "emotion", "sentence_id", "repetition", "split", "role")


@dataclass(frozen=True)
class Entry:
    path: str
    speaker_id: str
    gender: str
    emotion: str
    sentence_id: int
    repetition: int
    split: str
    role: str

    @property
    def utt_id(self) -> str:
        return self.path


@dataclass
class DatasetManifest:
    entries: list[Entry]
    emotion_set: list[str] = field(default_factory=list)
    root: Path = Path(".")

    def __post_init__(self):
        if not self.emotion_set:
            seen: dict[str, None] = {}
            for e in self.entries:
                seen.setdefault(e.emotion, None)
            self.emotion_set = list(seen)

    def resolve(self, entry: Entry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def select(self, **criteria) -> list[Entry]:
        return [e for e in self.entries if all(getattr(e, k) == v for k, v in criteria.items())]

    @property
    def genders(self) -> list[str]:
        present = {e.gender for e in self.entries}
        return [g for g in GENDERS if g in present]

    def speakers(self, role: str | None = None, gender: str | None = None) -> list[str]:
        out: dict[str, None] = {}
        for e in self.entries:
            if (role is None or e.role == role) and (gender is None or e.gender == gender):
                out.setdefault(e.speaker_id, None)
        return list(out)

    def speaker_gender(self) -> dict[str, str]:
        return {e.speaker_id: e.gender for e in self.entries}

    def claimants(self) -> dict[str, str]:
        """claimant speaker_id -> gender, in manifest order."""
        return {e.speaker_id: e.gender for e in self.entries if e.role == "claimant"}


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: manifest lacks columns {sorted(missing)}")
        entries = [
            Entry(
                path=row["path"], speaker_id=row["speaker_id"], gender=row["gender"],
                emotion=row["emotion"], sentence_id=int(row["sentence_id"]),
                repetition=int(row["repetition"]), split=row["split"], role=row["role"],
            )
            for row in reader
        ]
    return DatasetManifest(entries, root=path.parent)


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for e in manifest.entries:
            w.writerow([getattr(e, f.name) for f in fields(Entry)])


def validate_manifest(m: DatasetManifest, check_files: bool = True,
                      expected_sample_rate: int | None = None) -> list[str]:
    """Return every rule violation found; an empty list means the manifest is usable."""
    problems: list[str] = []
    genders: dict[str, set] = defaultdict(set)
    roles: dict[str, set] = defaultdict(set)
    sentences: dict[tuple, set] = defaultdict(set)

    for e in m.entries:
        if e.gender not in GENDERS:
            problems.append(f"{e.path}: unknown gender {e.gender!r}")
        if e.split not in ("train", "test"):
            problems.append(f"{e.path}: unknown split {e.split!r}")
        if e.role not in ("claimant", "imposter"):
            problems.append(f"{e.path}: unknown role {e.role!r}")
        genders[e.speaker_id].add(e.gender)
        roles[e.speaker_id].add(e.role)
        sentences[(e.speaker_id, e.split)].add(e.sentence_id)

    for spk in genders:
        if len(genders[spk]) > 1:
            problems.append(f"inconsistent speaker metadata: {spk} has genders {sorted(genders[spk])}")
        if len(roles[spk]) > 1:
            problems.append(f"inconsistent speaker metadata: {spk} has roles {sorted(roles[spk])}")
        leak = sentences[(spk, "train")] & sentences[(spk, "test")]
        if leak:
            problems.append(f"text-dependence leak: {spk} uses sentences {sorted(leak)} in both splits")

    if not m.entries:
        return problems + ["manifest is empty"]
    if len(m.emotion_set) < 2:
        problems.append(f"need at least 2 emotions, found {m.emotion_set}")
    for g in GENDERS:
        if not m.select(gender=g, split="train"):
            problems.append(f"singleton class: no training data for gender {g}")
        for emo in m.emotion_set:
            if not m.select(gender=g, emotion=emo, split="train"):
                problems.append(f"singleton class: no training data for ({g}, {emo})")
    claimants = m.claimants()
    if not claimants:
        problems.append("no claimant speakers")
    for spk in claimants:
        have = {e.emotion for e in m.entries if e.speaker_id == spk and e.split == "train"}
        for emo in m.emotion_set:
            if emo not in have:
                problems.append(f"singleton class: claimant {spk} has no {emo} training data")

    if check_files:
        rates = set()
        for e in m.entries:
            p = m.resolve(e)
            if not p.exists():
                problems.append(f"missing file: {p}")
                continue
            try:
                rate, _ = wav_info(p)
            except MalformedWav as exc:
                problems.append(str(exc))
                continue
            rates.add(rate)
            if expected_sample_rate is not None and rate != expected_sample_rate:
                problems.append(f"sample-rate mismatch: {p} is {rate} Hz, expected {expected_sample_rate}")
        if expected_sample_rate is None and len(rates) > 1:
            problems.append(f"sample-rate mismatch: corpus mixes {sorted(rates)} Hz")
    return problems
