"""Dataset directories: records, manifest validation, loading and synthesis.

Layout of a dataset directory::

    manifest               JSON: format tag, version, candidate count, records
    vocab                  one token per line; line number = token id
    clips/<id>/rgb.bin     tensor file [n, H, W, 3], pixel values in [0, 1]
    clips/<id>/flow.bin    tensor file [n-1, H, W, 2], displacement (dx, dy)
    text/<id>.tok          subtitle lines: "<frame>\\t<space-separated ids>"
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigError, ValidationError
from .io import dumps_json, read_tensor, write_tensor
from .text import PAD, QueryPack, Vocab
from .video import VideoClip

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = "stqa-manifest"
MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")
QUESTION_TYPES = ("motion", "color", "text-only", "joint")
TEXT_SOLVABLE = ("text-only", "joint")
VISUAL_SOLVABLE = ("motion", "color", "joint")


@dataclass
class QARecord:
    id: str
    question: tuple
    answers: tuple
    correct: int
    subtitle: tuple = ()
    qtype: str = "unknown"
    split: str = "train"
    clip_path: Optional[Path] = None
    window: Optional[tuple] = None
    _clip: Optional[VideoClip] = field(default=None, repr=False, compare=False)

    @property
    def k(self) -> int:
        return len(self.answers)

    @property
    def pack(self) -> QueryPack:
        return QueryPack(self.question, self.answers, self.correct)

    def load_clip(self) -> VideoClip:
        """Read (once) and window the clip's RGB and flow tensors."""
        if self._clip is None:
            if self.clip_path is None:
                raise ValidationError(f"record {self.id}: no clip attached")
            rgb = read_tensor(self.clip_path / "rgb.bin")
            flow = read_tensor(self.clip_path / "flow.bin")
            try:
                clip = VideoClip(rgb, flow)
            except ValueError as exc:
                raise ValidationError(f"{self.clip_path}: {exc}") from None
            if self.window is not None:
                s, e = self.window
                if e >= clip.n:
                    raise ValidationError(
                        f"record {self.id}: window {list(self.window)} exceeds {clip.n} frames")
                clip = clip.window(s, e)
            self._clip = clip
        return self._clip


def read_subtitle(path) -> list[tuple[int, list[int]]]:
    lines = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            frame, ids = line.split("\t", 1) if "\t" in line else (line, "")
            lines.append((int(frame), [int(t) for t in ids.split()]))
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: malformed subtitle line") from None
    return lines


def write_subtitle(path, lines: Sequence[tuple[int, Sequence[int]]]) -> None:
    Path(path).write_text("".join(f"{f}\t{' '.join(map(str, ids))}\n" for f, ids in lines),
                          encoding="utf-8")


def window_subtitle(lines, window: Optional[tuple]) -> tuple:
    if window is not None:
        s, e = window
        lines = [(f, ids) for f, ids in lines if s <= f <= e]
    toks = tuple(t for _, ids in lines for t in ids)
    return toks if toks else (PAD,)


class Dataset:
    """Validated view of a dataset directory; iterating yields :class:`QARecord`."""

    def __init__(self, root: Path, manifest: dict, vocab: Vocab, records: list[QARecord]):
        self.root = root
        self.manifest = manifest
        self.vocab = vocab
        self.records = records

    @property
    def k(self) -> int:
        return int(self.manifest["candidates"])

    def __iter__(self) -> Iterator[QARecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def split(self, name: str, types: Optional[Sequence[str]] = None) -> list[QARecord]:
        return [r for r in self.records
                if r.split == name and (types is None or r.qtype in types)]

    def save_manifest(self, path) -> None:
        Path(path).write_text(dumps_json(self.manifest), encoding="utf-8")


def labels(records: Sequence[QARecord]) -> np.ndarray:
    return np.array([r.correct for r in records], dtype=np.int64)


def _fail(i: int, msg: str):
    raise ValidationError(f"record {i}: {msg}")


def load_dataset(path, require_video: bool = True) -> Dataset:
    """Parse and validate a dataset directory.

    With ``require_video=False`` clip files are not required to exist, so a
    text-only copy of a dataset can be trained and evaluated.
    """
    root = Path(path)
    mpath = root / "manifest"
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"{mpath}: manifest not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{mpath}: not valid JSON ({exc})") from None
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ValidationError(f"{mpath}: unknown format {manifest.get('format')!r}")
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValidationError(f"{mpath}: unsupported version {manifest.get('version')!r}")
    k = manifest.get("candidates")
    if not isinstance(k, int) or k < 2:
        raise ValidationError(f"{mpath}: candidate count must be an integer >= 2")
    vpath = root / manifest.get("vocab", "vocab")
    if not vpath.exists():
        raise ValidationError(f"{vpath}: vocab file missing")
    vocab = Vocab.load(vpath)
    v = len(vocab)

    records = []
    seen = set()
    for i, raw in enumerate(manifest.get("records", [])):
        rid = raw.get("id")
        if not isinstance(rid, str) or rid in seen:
            _fail(i, f"missing or duplicate id {rid!r}")
        seen.add(rid)
        answers = raw.get("answers", [])
        if len(answers) != k:
            _fail(i, f"{len(answers)} answers, expected {k}")
        correct = raw.get("correct")
        if not isinstance(correct, int) or not 0 <= correct < k:
            _fail(i, f"correct index {correct!r} outside [0, {k})")
        question = raw.get("question", [])
        for seq in [question, *answers]:
            if not seq:
                _fail(i, "empty token sequence")
            if any((not isinstance(t, int)) or t < 0 or t >= v for t in seq):
                _fail(i, f"token id outside vocabulary of size {v}")
        if raw.get("split") not in SPLITS:
            _fail(i, f"split {raw.get('split')!r} not in {SPLITS}")
        window = raw.get("timestamp")
        if window is not None:
            if len(window) != 2 or window[0] < 0 or window[1] < window[0]:
                _fail(i, f"bad timestamp window {window}")
            if window[1] - window[0] + 1 < 2:
                _fail(i, f"timestamp window {window} keeps fewer than 2 frames")
            window = (int(window[0]), int(window[1]))
        sub_path = root / raw.get("subtitle", "")
        if not raw.get("subtitle") or not sub_path.is_file():
            _fail(i, f"subtitle file {sub_path} missing")
        sub_lines = read_subtitle(sub_path)
        if any(t < 0 or t >= v for _, ids in sub_lines for t in ids):
            _fail(i, f"{sub_path}: token id outside vocabulary")
        clip_path = root / raw["clip"] if raw.get("clip") else None
        if require_video:
            if clip_path is None:
                _fail(i, "no clip path")
            for name in ("rgb.bin", "flow.bin"):
                if not (clip_path / name).is_file():
                    _fail(i, f"{clip_path / name} missing")
        records.append(QARecord(
            id=rid,
            question=tuple(question),
            answers=tuple(tuple(a) for a in answers),
            correct=correct,
            subtitle=window_subtitle(sub_lines, window),
            qtype=raw.get("type", "unknown"),
            split=raw["split"],
            clip_path=clip_path,
            window=window,
        ))
    return Dataset(root, manifest, vocab, records)


# --------------------------------------------------------------------------
# synthetic data

DIRECTIONS = ("left", "right", "up", "down", "still", "upleft", "upright", "downleft", "downright")
DISPLACEMENT = {
    "left": (-1, 0), "right": (1, 0), "up": (0, -1), "down": (0, 1), "still": (0, 0),
    "upleft": (-1, -1), "upright": (1, -1), "downleft": (-1, 1), "downright": (1, 1),
}
COLORS = ("red", "green", "blue", "yellow", "white", "cyan", "magenta", "orange", "purple")
RGB_OF = {
    "red": (1.0, 0.0, 0.0), "green": (0.0, 1.0, 0.0), "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0), "white": (1.0, 1.0, 1.0), "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0), "orange": (1.0, 0.5, 0.0), "purple": (0.5, 0.0, 1.0),
}
CODE_WORDS = tuple(f"code{i:02d}" for i in range(30))
QUESTION_TEXT = {
    "motion": "which way does the block move",
    "color": "what color is the block",
    "text-only": "what is the password",
    "joint": "what color is the block",
}
PLANT_TEXT = {"text-only": "the password is", "joint": "the block is"}


@dataclass(frozen=True)
class SynthConfig:
    n_questions: int = 500
    n_frames: int = 8
    spatial_size: int = 16
    n_candidates: int = 5
    n_filler: int = 40
    n_visual_classes: int = 5
    n_code_words: int = 10
    speed: int = 1
    subtitle_lines: int = 3
    line_length: int = 4
    question_types: tuple = QUESTION_TYPES
    split_fractions: tuple = (0.7, 0.15, 0.15)

    def __post_init__(self):
        if self.n_questions < 0 or self.n_frames < 2 or self.spatial_size < 4:
            raise ConfigError("need n_questions >= 0, n_frames >= 2, spatial_size >= 4")
        if not 2 <= self.n_candidates <= self.n_visual_classes <= len(DIRECTIONS):
            raise ConfigError(
                f"need 2 <= n_candidates <= n_visual_classes <= {len(DIRECTIONS)}")
        if not self.n_candidates <= self.n_code_words <= len(CODE_WORDS):
            raise ConfigError(f"need n_candidates <= n_code_words <= {len(CODE_WORDS)}")
        if not set(self.question_types) <= set(QUESTION_TYPES) or not self.question_types:
            raise ConfigError(f"question types must be drawn from {QUESTION_TYPES}")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or len(self.split_fractions) != 3:
            raise ConfigError("split_fractions must be three numbers summing to 1")
        travel = self.speed * (self.n_frames - 1)
        if travel + self.block_size > self.spatial_size:
            raise ConfigError("block cannot travel the whole clip inside the frame")

    @property
    def block_size(self) -> int:
        return max(2, self.spatial_size // 4)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["question_types"] = list(self.question_types)
        d["split_fractions"] = list(self.split_fractions)
        return d


def build_vocab(cfg: SynthConfig) -> Vocab:
    vocab = Vocab()
    for text in list(QUESTION_TEXT.values()) + list(PLANT_TEXT.values()):
        for tok in text.split():
            vocab.add(tok)
    for word in DIRECTIONS + COLORS + CODE_WORDS[:cfg.n_code_words]:
        vocab.add(word)
    for i in range(cfg.n_filler):
        vocab.add(f"w{i:03d}")
    return vocab


def render_clip(rng: np.random.Generator, cfg: SynthConfig, color: str, direction: str) -> VideoClip:
    """A static textured background with one solid block in rigid translation.

    The flow field is exact by construction: ``(dx, dy)`` on the block's
    footprint in frame ``t`` and zero elsewhere.
    """
    n, s, b = cfg.n_frames, cfg.spatial_size, cfg.block_size
    dx, dy = (cfg.speed * c for c in DISPLACEMENT[direction])
    background = rng.uniform(0.0, 0.15, size=(s, s, 3))

    def start_range(d):
        lo = max(0, -d * (n - 1))
        hi = min(s - b, s - b - d * (n - 1))
        return lo, hi

    (xlo, xhi), (ylo, yhi) = start_range(dx), start_range(dy)
    x0 = int(rng.integers(xlo, xhi + 1))
    y0 = int(rng.integers(ylo, yhi + 1))
    rgb = np.repeat(background[None], n, axis=0)
    flow = np.zeros((n - 1, s, s, 2))
    for t in range(n):
        x, y = x0 + t * dx, y0 + t * dy
        rgb[t, y:y + b, x:x + b] = RGB_OF[color]
        if t < n - 1:
            flow[t, y:y + b, x:x + b] = (dx, dy)
    return VideoClip(rgb, flow)


def _filler_line(rng, cfg: SynthConfig, vocab: Vocab) -> list[int]:
    return [vocab.stoi[f"w{int(i):03d}"] for i in rng.integers(0, cfg.n_filler, cfg.line_length)]


def generate_synthetic(out_dir, cfg: SynthConfig = SynthConfig(), seed: int = 0) -> Path:
    """Write a synthetic dataset whose answers are planted in video and/or subtitles.

    Block colour is tied to motion direction (``COLORS[i]`` moves
    ``DIRECTIONS[i]``), so colour and motion questions are answerable from
    either stream.  ``text-only`` answers appear verbatim in the subtitles;
    ``joint`` answers appear in both video and subtitles.
    """
    out = Path(out_dir)
    try:
        (out / "clips").mkdir(parents=True, exist_ok=True)
        (out / "text").mkdir(exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    rng = np.random.default_rng(seed)
    vocab = build_vocab(cfg)
    vocab.save(out / "vocab")

    nq, k = cfg.n_questions, cfg.n_candidates
    correct_slots = rng.permutation(np.arange(nq) % k)
    order = rng.permutation(nq)
    n_train = int(round(cfg.split_fractions[0] * nq))
    n_val = int(round(cfg.split_fractions[1] * nq))
    split_of = np.empty(nq, dtype=object)
    split_of[order[:n_train]] = "train"
    split_of[order[n_train:n_train + n_val]] = "val"
    split_of[order[n_train + n_val:]] = "test"

    classes = cfg.n_visual_classes
    records = []
    for q in range(nq):
        qtype = cfg.question_types[q % len(cfg.question_types)]
        cls = int(rng.integers(classes))
        direction, color = DIRECTIONS[cls], COLORS[cls]
        clip = render_clip(rng, cfg, color, direction)

        if qtype == "motion":
            pool, answer = DIRECTIONS[:classes], direction
        elif qtype in ("color", "joint"):
            pool, answer = COLORS[:classes], color
        else:
            pool = CODE_WORDS[:cfg.n_code_words]
            answer = pool[int(rng.integers(len(pool)))]
        distractors = [w for w in pool if w != answer]
        picks = rng.choice(len(distractors), size=k - 1, replace=False)
        words = [distractors[int(i)] for i in picks]
        slot = int(correct_slots[q])
        words.insert(slot, answer)

        frames = np.linspace(0, cfg.n_frames - 1, cfg.subtitle_lines).round().astype(int)
        lines = [(int(f), _filler_line(rng, cfg, vocab)) for f in frames]
        if qtype in PLANT_TEXT:
            where = int(rng.integers(len(lines)))
            planted = vocab.encode(PLANT_TEXT[qtype]) + [vocab.stoi[answer]]
            lines[where] = (lines[where][0], planted)

        rid = f"q{q:05d}"
        clip_dir = out / "clips" / rid
        clip_dir.mkdir(exist_ok=True)
        write_tensor(clip_dir / "rgb.bin", clip.rgb)
        write_tensor(clip_dir / "flow.bin", clip.flow)
        write_subtitle(out / "text" / f"{rid}.tok", lines)
        records.append({
            "id": rid,
            "clip": f"clips/{rid}",
            "subtitle": f"text/{rid}.tok",
            "question": vocab.encode(QUESTION_TEXT[qtype]),
            "answers": [[vocab.stoi[w]] for w in words],
            "correct": slot,
            "type": qtype,
            "split": str(split_of[q]),
            "timestamp": None,
        })

    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "candidates": k,
        "vocab": "vocab",
        "generator": {"config": cfg.to_dict(), "seed": int(seed)},
        "records": records,
    }
    (out / "manifest").write_text(dumps_json(manifest), encoding="utf-8")
    logger.info("wrote %d synthetic questions to %s", nq, out)
    return out


def bag_of_words_accuracy(records: Sequence[QARecord]) -> float:
    """Accuracy of the linear rule ``score_i = |answer_i tokens in subtitle|``.

    Independent of every learned component; used to certify that a split is
    solvable from subtitles alone.
    """
    if not records:
        return float("nan")
    hits = 0
    for r in records:
        bag = set(r.subtitle)
        scores = [sum(t in bag for t in a) for a in r.answers]
        hits += int(np.argmax(scores)) == r.correct
    return hits / len(records)
