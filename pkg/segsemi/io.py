"""
On-disk dataset format.

Feature file (``.segf``): b"SEGF", u32 version, u32 T, u32 D, then T·D float32,
row-major. Label file (``.segl``): b"SEGL", u32 T, then T u32 class ids. All
integers little-endian. A JSON index (``index.json``) lists every video with
its files, split, activity and allowed-action set.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from .config import get_settings
from .data import Dataset, VideoRecord
from .errors import DatasetError, ManifestError, ParseError
from .logging_config import get_logger
from .schemas import DatasetManifest, ManifestEntry

logger = get_logger("segsemi.io")

FEATURE_MAGIC = b"SEGF"
LABEL_MAGIC = b"SEGL"
FEATURE_VERSION = 1
INDEX_NAME = "index.json"

_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")


def write_features(path: Path, features: np.ndarray) -> None:
    features = np.ascontiguousarray(features, dtype=_F32)
    if features.ndim != 2:
        raise DatasetError("Features must be T×D", path=str(path), shape=features.shape)
    header = np.array([FEATURE_VERSION, *features.shape], dtype=_U32)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(FEATURE_MAGIC + header.tobytes() + features.tobytes())


def read_features(path: Path) -> np.ndarray:
    raw = _read(path)
    _expect_magic(raw, FEATURE_MAGIC, path)
    version, n_frames, dim = _header(raw, 3, path)
    if version != FEATURE_VERSION:
        raise ParseError("Unsupported feature file version", path=str(path), offset=4, version=version)
    body = raw[16:]
    expected = n_frames * dim * _F32.itemsize
    if len(body) != expected:
        raise ParseError("Feature payload size does not match the header", path=str(path), offset=16,
                         expected_bytes=expected, found_bytes=len(body))
    if n_frames < 1 or dim < 1:
        raise ParseError("Empty feature matrix", path=str(path), offset=8, frames=n_frames, dim=dim)
    return np.frombuffer(body, dtype=_F32).reshape(n_frames, dim).astype(np.float32)


def write_labels(path: Path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 1 or (labels.size and labels.min() < 0):
        raise DatasetError("Labels must be a vector of class ids", path=str(path), shape=labels.shape)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(LABEL_MAGIC + np.array([labels.size], dtype=_U32).tobytes() + labels.astype(_U32).tobytes())


def read_labels(path: Path) -> np.ndarray:
    raw = _read(path)
    _expect_magic(raw, LABEL_MAGIC, path)
    (n_frames,) = _header(raw, 1, path)
    body = raw[8:]
    if len(body) != n_frames * _U32.itemsize:
        raise ParseError("Label payload size does not match the header", path=str(path), offset=8,
                         expected_bytes=n_frames * _U32.itemsize, found_bytes=len(body))
    return np.frombuffer(body, dtype=_U32).astype(np.int64)


def _read(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise DatasetError("Cannot read file", path=str(path), reason=str(e)) from e


def _expect_magic(raw: bytes, magic: bytes, path: Path) -> None:
    if raw[:4] != magic:
        raise ParseError("Bad magic bytes", path=str(path), offset=0, expected=magic.decode(),
                         found=raw[:4].decode("latin-1"))


def _header(raw: bytes, count: int, path: Path) -> Tuple[int, ...]:
    end = 4 + 4 * count
    if len(raw) < end:
        raise ParseError("Truncated header", path=str(path), offset=len(raw), expected_bytes=end)
    return tuple(int(x) for x in np.frombuffer(raw[4:end], dtype=_U32))


# Manifest

def read_manifest(path: Path) -> DatasetManifest:
    try:
        text = path.read_text()
    except OSError as e:
        raise DatasetError("Cannot read dataset index", path=str(path), reason=str(e)) from e
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError("Malformed dataset index", path=str(path), line=e.lineno, column=e.colno,
                         offset=e.pos) from e
    try:
        return DatasetManifest.model_validate(payload)
    except ValidationError as e:
        raise ManifestError("Invalid dataset index", path=str(path),
                            errors=[f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors()]) from e


def _index_path(path: Path) -> Path:
    return path / INDEX_NAME if path.is_dir() else path


def save_dataset(dataset: Dataset, directory: Path) -> Path:
    """Write feature/label files and the index; returns the index path"""
    directory.mkdir(parents=True, exist_ok=True)
    entries: List[ManifestEntry] = []
    for split_name, record in dataset.records():
        features = f"features/{record.id}.segf"
        write_features(directory / features, record.features)
        labels = heldout = None
        if record.labels is not None:
            labels = f"labels/{record.id}.segl"
            write_labels(directory / labels, record.labels)
        if record.heldout_labels is not None:
            heldout = f"heldout/{record.id}.segl"
            write_labels(directory / heldout, record.heldout_labels)
        entries.append(ManifestEntry(
            id=record.id, split=split_name, activity=record.activity, frames=record.frames,
            features=features, labels=labels, heldout_labels=heldout,
            heuristics=sorted(record.heuristics) if record.heuristics is not None else None,
        ))
    manifest = DatasetManifest(class_names=dataset.class_names, feature_dim=dataset.feature_dim,
                               background_id=dataset.background_id, annotated_fraction=dataset.annotated_fraction,
                               seed=dataset.seed, videos=entries)
    index = directory / INDEX_NAME
    index.write_text(manifest.model_dump_json(indent=2) + "\n")
    logger.info("Saved dataset", extra={"extra_fields": {"path": str(index), "videos": len(entries)}})
    return index


def _load_entry(root: Path, entry: ManifestEntry, reveal_heldout: bool) -> VideoRecord:
    features = read_features(root / entry.features)
    if features.shape[0] != entry.frames:
        raise ManifestError("Feature file frame count differs from the index", video=entry.id,
                            index_frames=entry.frames, file_frames=features.shape[0])
    labels = read_labels(root / entry.labels) if entry.labels else None
    heldout = read_labels(root / entry.heldout_labels) if (reveal_heldout and entry.heldout_labels) else None
    return VideoRecord(id=entry.id, features=features, labels=labels, activity=entry.activity,
                       heuristics=frozenset(entry.heuristics) if entry.heuristics is not None else None,
                       heldout_labels=heldout)


def load_dataset(path: Union[str, Path], reveal_heldout: bool = False, threads: Optional[int] = None) -> Dataset:
    """
    Read a dataset directory (or its index file). The withheld labels of
    unannotated videos stay on disk unless ``reveal_heldout`` is set.

    Args:
        path (Union[str, Path]): Dataset directory or index file
        reveal_heldout (bool): Also read the withheld labels
        threads (Optional[int]): Reader threads, the configured count if None

    Returns:
        Dataset: All splits with their features loaded

    Raises:
        ParseError: If a file is malformed
        ManifestError: If the index is invalid or disagrees with a feature file
        DatasetError: If a file cannot be read
    """
    index = _index_path(Path(path))
    manifest = read_manifest(index)
    root = index.parent
    workers = max(1, threads or get_settings().threads)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        records = list(pool.map(lambda e: _load_entry(root, e, reveal_heldout), manifest.videos))

    splits: Dict[str, List[VideoRecord]] = {"annotated": [], "unannotated": [], "test": []}
    for entry, record in zip(manifest.videos, records):
        splits[entry.split].append(record)
    return Dataset(class_names=manifest.class_names, feature_dim=manifest.feature_dim,
                   background_id=manifest.background_id, annotated_fraction=manifest.annotated_fraction,
                   seed=manifest.seed, **splits)


def save_predictions(predictions: Dict[str, np.ndarray], directory: Path) -> None:
    for video_id, labels in predictions.items():
        write_labels(directory / f"{video_id}.segl", labels)


def load_predictions(directory: Path, video_ids: Iterable[str]) -> Dict[str, np.ndarray]:
    result = {}
    for video_id in video_ids:
        path = directory / f"{video_id}.segl"
        if not path.exists():
            raise DatasetError("Missing prediction file", video=video_id, path=str(path))
        result[video_id] = read_labels(path)
    return result
