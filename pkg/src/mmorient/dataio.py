"""On-disk dataset bundles: binary tensor format, validation, text cleaning,
and labeled synthetic bundles for desk-scale experiments.

A bundle directory holds ``manifest.jsonl`` (per-sample id, raw text, labels),
``tasks.json`` (ordered task specs), and six tensor files. Tensor files start
with magic ``MMOR``, a u32 format version, u32 rank, rank x u64 dims, then the
payload: little-endian float64, except ``sentiment.bin`` which stores u8
codes. Any deviation is a load error naming the offending file.
"""

from __future__ import annotations

import json
import os
import re
import shutil
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

FORMAT_MAGIC = b"MMOR"
FORMAT_VERSION = 1

MANIFEST_FILE = "manifest.jsonl"
TASKS_FILE = "tasks.json"
JOINT_TXT_FILE = "joint_txt.bin"
JOINT_IMG_FILE = "joint_img.bin"
TOKEN_FILE = "token_feats.bin"
REGION_FILE = "region_feats.bin"
TOXICITY_FILE = "toxicity.bin"
SENTIMENT_FILE = "sentiment.bin"

SENTIMENT_LEVELS = 5  # codes 0..4, very negative .. very positive

ABSENT = -1  # label value for a task the sample is not annotated for


@dataclass(frozen=True)
class TaskSpec:
    name: str
    class_count: int

    def __post_init__(self):
        if not self.name:
            raise DataError("task name must be non-empty")
        if self.class_count < 2:
            raise DataError(f"task {self.name!r}: class_count must be >= 2")


DEFAULT_TASKS = (
    TaskSpec("sentiment", 3),
    TaskSpec("humor", 4),
    TaskSpec("sarcasm", 4),
    TaskSpec("offensiveness", 4),
    TaskSpec("motivational", 2),
)


@dataclass
class SampleRecord:
    id: str
    raw_text: str
    cleaned_text: str
    labels: dict[str, int]  # present tasks only


@dataclass
class DatasetBundle:
    task_specs: tuple[TaskSpec, ...]
    records: list[SampleRecord]
    joint_txt: np.ndarray    # N x D
    joint_img: np.ndarray    # N x D
    token_feats: np.ndarray  # N x L_txt x token_width
    region_feats: np.ndarray  # N x L_img x region_width
    toxicity: np.ndarray     # N x toxicity_width
    sentiment_codes: np.ndarray  # N, u8 in [0, 4]
    labels: np.ndarray = field(init=False)  # N x T int64, ABSENT where missing

    def __post_init__(self):
        self.labels = label_matrix(self.records, self.task_specs)
        validate_bundle(self)

    @property
    def n(self):
        return len(self.records)


# ---------------------------------------------------------------------------
# text cleaning

_URL_RE = re.compile(r"(?:\S+://\S+|(?<!\S)www\.\S+)", re.IGNORECASE)
_USER_RE = re.compile(r"(?<!\S)@\w+")
_KEEP_PUNCT = frozenset(".,!?;:'")


def _clean_pass(text):
    text = _URL_RE.sub(" ", text)
    text = _USER_RE.sub(" ", text)
    text = text.lower()
    text = "".join(c if (c.isalnum() or c in _KEEP_PUNCT) else " " for c in text)
    return " ".join(text.split())


def clean_text(raw):
    """Strip URLs and @usernames, drop symbols other than sentence punctuation,
    collapse whitespace, lowercase.

    Runs to a fixpoint so the result is idempotent even when symbol removal
    uncovers a new URL-shaped token.
    """
    text = _clean_pass(raw)
    prev = None
    while text != prev:
        prev = text
        text = _clean_pass(text)
    return text


# ---------------------------------------------------------------------------
# validation

def label_matrix(records, task_specs):
    """N x T int64 matrix of class indices, ABSENT for unannotated tasks."""
    out = np.full((len(records), len(task_specs)), ABSENT, dtype=np.int64)
    for i, rec in enumerate(records):
        for t, spec in enumerate(task_specs):
            if spec.name in rec.labels:
                out[i, t] = rec.labels[spec.name]
    return out


def validate_bundle(bundle):
    specs = bundle.task_specs
    if len(specs) == 0:
        raise DataError("bundle has no tasks")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise DataError("duplicate task names")
    n = len(bundle.records)
    if n < 1:
        raise DataError("bundle is empty (no samples)")

    ids = [r.id for r in bundle.records]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate sample ids in manifest")
    by_name = {s.name: s for s in specs}
    for i, rec in enumerate(bundle.records):
        for task, value in rec.labels.items():
            if task not in by_name:
                raise DataError(f"sample {rec.id!r} (index {i}): unknown task {task!r}")
            if not 0 <= value < by_name[task].class_count:
                raise DataError(
                    f"sample {rec.id!r} (index {i}): label {value} out of range "
                    f"for task {task!r} with {by_name[task].class_count} classes")

    tensors = [
        (JOINT_TXT_FILE, bundle.joint_txt, 2),
        (JOINT_IMG_FILE, bundle.joint_img, 2),
        (TOKEN_FILE, bundle.token_feats, 3),
        (REGION_FILE, bundle.region_feats, 3),
        (TOXICITY_FILE, bundle.toxicity, 2),
    ]
    for fname, arr, rank in tensors:
        if arr.ndim != rank:
            raise DataError(f"{fname}: expected rank {rank}, got {arr.ndim}")
        if arr.shape[0] != n:
            raise DataError(f"{fname}: leading dimension {arr.shape[0]} != manifest N={n}")
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr).ravel())[0])
            raise DataError(f"{fname}: non-finite value at flat index {bad}")
    codes = bundle.sentiment_codes
    if codes.ndim != 1 or codes.shape[0] != n:
        raise DataError(f"{SENTIMENT_FILE}: expected shape ({n},), got {codes.shape}")
    if codes.size and (int(codes.min()) < 0 or int(codes.max()) >= SENTIMENT_LEVELS):
        bad = int(np.flatnonzero((codes < 0) | (codes >= SENTIMENT_LEVELS))[0])
        raise DataError(
            f"{SENTIMENT_FILE}: code {int(codes[bad])} at index {bad} outside [0, {SENTIMENT_LEVELS - 1}]")


# ---------------------------------------------------------------------------
# tensor file i/o

def _pack_tensor(arr, dtype):
    arr = np.ascontiguousarray(arr.astype(dtype, copy=False))
    header = FORMAT_MAGIC + struct.pack("<II", FORMAT_VERSION, arr.ndim)
    header += b"".join(struct.pack("<Q", d) for d in arr.shape)
    return header + arr.tobytes(order="C")


def _unpack_tensor(data, dtype, expected_rank, fname):
    fixed = len(FORMAT_MAGIC) + 8
    if len(data) < fixed:
        raise DataError(f"{fname}: truncated header")
    if data[:4] != FORMAT_MAGIC:
        raise DataError(f"{fname}: bad magic {data[:4]!r}, expected {FORMAT_MAGIC!r}")
    version, rank = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{fname}: format version {version}, expected {FORMAT_VERSION}")
    if rank != expected_rank:
        raise DataError(f"{fname}: rank {rank}, expected {expected_rank}")
    if len(data) < fixed + 8 * rank:
        raise DataError(f"{fname}: truncated dimension list")
    dims = struct.unpack_from(f"<{rank}Q", data, fixed)
    payload = data[fixed + 8 * rank:]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    itemsize = np.dtype(dtype).itemsize
    if len(payload) != count * itemsize:
        raise DataError(
            f"{fname}: payload holds {len(payload)} bytes, dims {tuple(dims)} require {count * itemsize}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.copy()  # decouple from the file buffer, make writable


def atomic_write_bytes(path, data):
    """Write via a sibling temp file and rename, so failures leave no partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


# ---------------------------------------------------------------------------
# bundle read / write

def _manifest_lines(bundle):
    lines = []
    for rec in bundle.records:
        labels = {s.name: rec.labels.get(s.name) for s in bundle.task_specs}
        obj = {"id": rec.id, "raw_text": rec.raw_text, "labels": labels}
        lines.append(json.dumps(obj, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def write_bundle(bundle, directory, force=False):
    """Write the bundle directory atomically (staged next to the target, renamed in)."""
    directory = Path(directory)
    if directory.exists():
        if not force:
            raise DataError(f"refusing to overwrite existing dataset at {directory}")
        shutil.rmtree(directory)
    directory.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=directory.name + ".tmp.", dir=directory.parent))
    try:
        (staging / MANIFEST_FILE).write_text(_manifest_lines(bundle), encoding="utf-8")
        tasks = [{"name": s.name, "class_count": s.class_count} for s in bundle.task_specs]
        (staging / TASKS_FILE).write_text(json.dumps(tasks, separators=(",", ":")) + "\n", encoding="utf-8")
        for fname, arr, dtype in (
            (JOINT_TXT_FILE, bundle.joint_txt, "<f8"),
            (JOINT_IMG_FILE, bundle.joint_img, "<f8"),
            (TOKEN_FILE, bundle.token_feats, "<f8"),
            (REGION_FILE, bundle.region_feats, "<f8"),
            (TOXICITY_FILE, bundle.toxicity, "<f8"),
            (SENTIMENT_FILE, bundle.sentiment_codes, np.uint8),
        ):
            (staging / fname).write_bytes(_pack_tensor(arr, dtype))
        os.rename(staging, directory)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return directory


def _read_file(directory, fname):
    path = Path(directory) / fname
    if not path.is_file():
        raise DataError(f"missing file {fname} in dataset {directory}")
    return path.read_bytes()


def load_bundle(directory):
    """Load and fully validate a bundle directory; every failure names its file."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory not found: {directory}")

    try:
        raw_tasks = json.loads(_read_file(directory, TASKS_FILE).decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"{TASKS_FILE}: invalid JSON ({exc})") from exc
    if not isinstance(raw_tasks, list) or not raw_tasks:
        raise DataError(f"{TASKS_FILE}: expected a non-empty list of tasks")
    specs = []
    for entry in raw_tasks:
        try:
            specs.append(TaskSpec(str(entry["name"]), int(entry["class_count"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{TASKS_FILE}: bad task entry {entry!r}") from exc
    specs = tuple(specs)

    records = []
    manifest = _read_file(directory, MANIFEST_FILE).decode("utf-8")
    for lineno, line in enumerate(manifest.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{MANIFEST_FILE}:{lineno}: invalid JSON ({exc})") from exc
        try:
            sample_id = str(obj["id"])
            raw_text = str(obj["raw_text"])
            raw_labels = obj.get("labels") or {}
        except (KeyError, TypeError) as exc:
            raise DataError(f"{MANIFEST_FILE}:{lineno}: bad record") from exc
        labels = {}
        for task, value in raw_labels.items():
            if value is None:
                continue
            if not isinstance(value, int) or isinstance(value, bool):
                raise DataError(f"{MANIFEST_FILE}:{lineno}: label for {task!r} must be an integer")
            labels[task] = value
        records.append(SampleRecord(sample_id, raw_text, clean_text(raw_text), labels))

    tensors = {}
    for fname, dtype, rank in (
        (JOINT_TXT_FILE, "<f8", 2),
        (JOINT_IMG_FILE, "<f8", 2),
        (TOKEN_FILE, "<f8", 3),
        (REGION_FILE, "<f8", 3),
        (TOXICITY_FILE, "<f8", 2),
        (SENTIMENT_FILE, np.uint8, 1),
    ):
        tensors[fname] = _unpack_tensor(_read_file(directory, fname), dtype, rank, fname)

    return DatasetBundle(
        task_specs=specs,
        records=records,
        joint_txt=tensors[JOINT_TXT_FILE],
        joint_img=tensors[JOINT_IMG_FILE],
        token_feats=tensors[TOKEN_FILE],
        region_feats=tensors[REGION_FILE],
        toxicity=tensors[TOXICITY_FILE],
        sentiment_codes=tensors[SENTIMENT_FILE],
    )


# ---------------------------------------------------------------------------
# synthetic bundles

@dataclass
class SynthConfig:
    n: int
    l_txt: int = 6
    l_img: int = 5
    token_width: int = 8
    region_width: int = 12
    joint_width: int = 8
    toxicity_width: int = 8
    task_specs: tuple[TaskSpec, ...] = DEFAULT_TASKS
    cluster_separation: float = 4.0


_NEUTRAL_WORDS = (
    "the", "a", "and", "with", "about", "over", "today", "again", "really",
    "just", "people", "thing", "meme", "picture", "caption", "story", "week",
    "moment", "everyone", "nobody",
)


def _signal_words(count=12):
    # drawn from the packaged emotion lexicon so synthetic text has nonzero counts
    from .taskfeat import load_default_lexicon

    words = sorted(load_default_lexicon().words())
    return tuple(words[:count])


def _class_codes(class_count, separation):
    """Cluster-mean codebook for one task: class_count x block_width.

    Small tasks use one centered lattice coordinate (step = separation).
    Tasks with four or more classes use Gray-coded +-separation/2 bits, which
    keeps the minimum inter-class distance at ``separation`` while holding the
    per-coordinate spread down (large lattices would leak noise into every
    other task's nearest-centroid geometry).
    """
    if class_count <= 3:
        codes = (np.arange(class_count) - (class_count - 1) / 2.0)[:, None]
        return separation * codes
    bits = max(1, int(np.ceil(np.log2(class_count))))
    codes = np.empty((class_count, bits))
    for c in range(class_count):
        gray = c ^ (c >> 1)
        codes[c] = [1.0 if gray >> k & 1 else -1.0 for k in range(bits)]
    return 0.5 * separation * codes


def _signal_width(specs):
    return sum(_class_codes(s.class_count, 1.0).shape[1] for s in specs)


def generate_synthetic(config, seed):
    """Deterministic labeled bundle with class-conditional Gaussian clusters.

    Each task owns a disjoint block of coordinates in every float tensor
    family; class means live on the task's codebook (see ``_class_codes``) on
    top of unit Gaussian noise, so every task is learnable independently and a
    nearest-centroid probe recovers the labels once separation is a few noise
    standard deviations. Label columns are exactly class-balanced and shuffled
    independently per task.
    """
    specs = tuple(config.task_specs)
    n_tasks = len(specs)
    if n_tasks == 0:
        raise DataError("synthetic config needs at least one task")
    if config.n < max(s.class_count for s in specs):
        raise DataError("n must be at least the largest class count")
    signal_width = _signal_width(specs)
    for name, width in (
        ("token_width", config.token_width),
        ("region_width", config.region_width),
        ("joint_width", config.joint_width),
        ("toxicity_width", config.toxicity_width),
    ):
        if width < signal_width:
            raise DataError(
                f"{name}={width} too small: the task suite needs {signal_width} signal coordinates")
    if config.l_txt < 1 or config.l_img < 1:
        raise DataError("l_txt and l_img must be >= 1")

    rng = np.random.default_rng(seed)
    n = config.n

    labels = np.empty((n, n_tasks), dtype=np.int64)
    for t, spec in enumerate(specs):
        balanced = np.tile(np.arange(spec.class_count), n // spec.class_count + 1)[:n]
        labels[:, t] = balanced[rng.permutation(n)]
    blocks = []
    for t, spec in enumerate(specs):
        codes = _class_codes(spec.class_count, config.cluster_separation)
        blocks.append(codes[labels[:, t]])
    offsets = np.concatenate(blocks, axis=1)  # n x signal_width

    def matrix_family(width):
        out = rng.standard_normal((n, width))
        out[:, :signal_width] += offsets
        return out

    def stacked_family(length, width):
        out = rng.standard_normal((n, length, width))
        out[:, :, :signal_width] += offsets[:, None, :]
        return out

    joint_txt = matrix_family(config.joint_width)
    joint_img = matrix_family(config.joint_width)
    token_feats = stacked_family(config.l_txt, config.token_width)
    region_feats = stacked_family(config.l_img, config.region_width)
    toxicity = matrix_family(config.toxicity_width)
    sentiment_codes = rng.integers(0, SENTIMENT_LEVELS, size=n).astype(np.uint8)

    signal_words = _signal_words()
    records = []
    for i in range(n):
        words = [str(rng.choice(signal_words)) for _ in range(int(rng.integers(1, 3)))]
        words += [str(rng.choice(_NEUTRAL_WORDS)) for _ in range(int(rng.integers(2, 6)))]
        order = rng.permutation(len(words))
        words = [words[j] for j in order]
        if rng.random() < 0.2:
            j = int(rng.integers(0, len(words)))
            words[j] = words[j].upper()
        if rng.random() < 0.2:
            words.append("http://example.com/m")
        if rng.random() < 0.2:
            words.append("@someone")
        raw = " ".join(words)
        rec_labels = {spec.name: int(labels[i, t]) for t, spec in enumerate(specs)}
        records.append(SampleRecord(f"synth-{i:05d}", raw, clean_text(raw), rec_labels))

    return DatasetBundle(
        task_specs=specs,
        records=records,
        joint_txt=joint_txt,
        joint_img=joint_img,
        token_feats=token_feats,
        region_feats=region_feats,
        toxicity=toxicity,
        sentiment_codes=sentiment_codes,
    )
