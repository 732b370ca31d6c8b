"""
Dataset model, annotated/unannotated split and the synthetic activity generator.
"""

from dataclasses import dataclass, field, replace
from typing import FrozenSet, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DatasetError, DurationFitError, SplitError
from .logging_config import get_logger, log_performance
from .schemas import ActionStep, ActivityGrammar, GrammarConfig
from .transcriber import Transcript, labels_to_transcript

logger = get_logger("segsemi.data")


@dataclass
class VideoRecord:
    id: str
    features: np.ndarray
    labels: Optional[np.ndarray] = None
    heuristics: Optional[FrozenSet[int]] = None
    activity: str = ""
    heldout_labels: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DatasetError("Features must be a non-empty T×D matrix", video=self.id, shape=self.features.shape)
        for name in ("labels", "heldout_labels"):
            value = getattr(self, name)
            if value is not None and value.shape != (self.frames,):
                raise DatasetError(f"{name} length does not match the features", video=self.id,
                                   frames=self.frames, found=value.shape)

    @property
    def frames(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def is_annotated(self) -> bool:
        return self.labels is not None

    @property
    def transcript(self) -> Optional[Transcript]:
        return labels_to_transcript(self.labels) if self.labels is not None else None

    def withheld(self) -> "VideoRecord":
        """Copy whose labels move to the hidden field"""
        hidden = self.labels if self.labels is not None else self.heldout_labels
        return replace(self, labels=None, heldout_labels=hidden)

    def revealed(self) -> "VideoRecord":
        """Copy whose hidden labels are visible again"""
        labels = self.labels if self.labels is not None else self.heldout_labels
        if labels is None:
            raise DatasetError("Video has no labels to reveal", video=self.id)
        return replace(self, labels=labels, heldout_labels=None)


@dataclass
class Dataset:
    class_names: List[str]
    feature_dim: int
    annotated: List[VideoRecord] = field(default_factory=list)
    unannotated: List[VideoRecord] = field(default_factory=list)
    test: List[VideoRecord] = field(default_factory=list)
    background_id: Optional[int] = None
    annotated_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def train(self) -> List[VideoRecord]:
        return self.annotated + self.unannotated

    def records(self) -> Iterator[Tuple[str, VideoRecord]]:
        for split_name in ("annotated", "unannotated", "test"):
            for record in getattr(self, split_name):
                yield split_name, record

    def validate(self) -> None:
        seen = set()
        for split_name, record in self.records():
            if record.id in seen:
                raise DatasetError("Video id appears twice", video=record.id)
            seen.add(record.id)
            if record.dim != self.feature_dim:
                raise DatasetError("Feature width differs from the dataset", video=record.id,
                                   expected=self.feature_dim, found=record.dim)
            if split_name == "unannotated" and record.labels is not None:
                raise DatasetError("Unannotated video exposes labels", video=record.id)
            if split_name != "unannotated" and record.labels is None:
                raise DatasetError("Video has no labels", video=record.id, split=split_name)
            for labels in (record.labels, record.heldout_labels):
                if labels is not None and (labels.min() < 0 or labels.max() >= self.n_classes):
                    raise DatasetError("Label outside the vocabulary", video=record.id, classes=self.n_classes)

    def baseline(self) -> "Dataset":
        """Annotated videos only"""
        return replace(self, annotated=list(self.annotated), unannotated=[], test=list(self.test))

    def fully_supervised(self) -> "Dataset":
        """Every training video annotated, using the withheld labels"""
        return replace(self, annotated=self.annotated + [r.revealed() for r in self.unannotated],
                       unannotated=[], test=list(self.test), annotated_fraction=1.0)

    def without_heldout(self) -> "Dataset":
        """Copy with the hidden labels of unannotated videos dropped"""
        return replace(self, annotated=list(self.annotated),
                       unannotated=[replace(r, heldout_labels=None) for r in self.unannotated],
                       test=list(self.test))


def split(dataset: Dataset, annotated_fraction: float, seed: int) -> Dataset:
    """
    Shuffle the training videos deterministically and annotate the first
    round(fraction·n); the rest keep their labels only in the hidden field.

    Args:
        dataset (Dataset): Dataset whose training videos are all annotated
        annotated_fraction (float): Share of annotated videos, in (0, 1]
        seed (int): Shuffle seed

    Returns:
        Dataset: Same test set, training videos split in two

    Raises:
        SplitError: If the fraction is out of range
    """
    if not 0.0 < annotated_fraction <= 1.0:
        raise SplitError("annotated_fraction must lie in (0, 1]", fraction=annotated_fraction)
    pool = sorted((r.revealed() for r in dataset.train), key=lambda r: r.id)
    n_annotated = int(round(annotated_fraction * len(pool)))
    if n_annotated < 1:
        raise SplitError("The annotated set would be empty", fraction=annotated_fraction, videos=len(pool))
    order = np.random.default_rng(seed).permutation(len(pool))
    shuffled = [pool[i] for i in order]
    result = replace(dataset, annotated=shuffled[:n_annotated],
                     unannotated=[r.withheld() for r in shuffled[n_annotated:]],
                     test=list(dataset.test), annotated_fraction=annotated_fraction, seed=seed)
    logger.info("Split training videos", extra={"extra_fields": {
        "annotated": len(result.annotated), "unannotated": len(result.unannotated), "seed": seed}})
    return result


# Synthetic generator

def default_grammar(seed: int = 0) -> GrammarConfig:
    """Three kitchen activities over eight actions"""
    def step(action: int, probability: float = 1.0) -> ActionStep:
        return ActionStep(action=action, optional=probability < 1.0, probability=probability)

    return GrammarConfig(
        class_names=["take_cup", "pour_coffee", "pour_milk", "add_sugar",
                     "stir", "add_teabag", "pour_water", "take_bowl"],
        activities=[
            ActivityGrammar(name="coffee", steps=[step(0), step(1), step(2, 0.5), step(3, 0.5), step(4)]),
            ActivityGrammar(name="tea", steps=[step(0), step(5), step(6), step(3, 0.5), step(4, 0.7)]),
            ActivityGrammar(name="cereal", steps=[step(7), step(2), step(3, 0.4), step(4, 0.6)]),
        ],
        seed=seed,
    )


def sample_transcript(activity: ActivityGrammar, rng: np.random.Generator) -> Transcript:
    steps = [s.action for s in activity.steps if not s.optional or rng.random() < s.probability]
    return Transcript.of(steps)


def sample_durations(transcript: Transcript, grammar: GrammarConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Integer segment lengths summing to a video length drawn from the frame
    range; draws that would leave a segment shorter than min_duration are retried.
    """
    for _ in range(grammar.max_resamples):
        total = int(rng.integers(grammar.min_frames, grammar.max_frames + 1))
        raw = np.array([max(rng.normal(grammar.duration(a).mean, grammar.duration(a).std), 1.0)
                        for a in transcript.steps])
        scaled = raw * total / raw.sum()
        lengths = np.floor(scaled).astype(np.int64)
        remainder = total - int(lengths.sum())
        lengths[np.argsort(-(scaled - lengths), kind="stable")[:remainder]] += 1
        if lengths.min() >= grammar.min_duration:
            return lengths
    raise DurationFitError("Could not fit segment durations", steps=len(transcript),
                           min_duration=grammar.min_duration, attempts=grammar.max_resamples)


def smooth(features: np.ndarray, window: int) -> np.ndarray:
    """Centred moving average along time, edges padded by replication"""
    if window <= 1:
        return features
    left = (window - 1) // 2
    padded = np.pad(features, ((left, window - 1 - left), (0, 0)), mode="edge")
    cumulative = np.cumsum(np.vstack([np.zeros((1, features.shape[1])), padded]), axis=0)
    return (cumulative[window:] - cumulative[:-window]) / window


def generate_video(video_id: str, activity: ActivityGrammar, prototypes: np.ndarray, grammar: GrammarConfig,
                   rng: np.random.Generator) -> VideoRecord:
    transcript = sample_transcript(activity, rng)
    lengths = sample_durations(transcript, grammar, rng)
    labels = np.repeat(np.asarray(transcript.steps, dtype=np.int64), lengths)
    noise = rng.normal(0.0, 1.0, size=(labels.size, grammar.feature_dim)) * grammar.noise_scale
    features = smooth(prototypes[labels] + noise, grammar.smoothing_window).astype(np.float32)
    return VideoRecord(id=video_id, features=features, labels=labels,
                       heuristics=frozenset(activity.action_pool), activity=activity.name)


@log_performance
def generate_synthetic(grammar: GrammarConfig, counts: Sequence[int] = (90, 30),
                       seed: Optional[int] = None) -> Dataset:
    """
    Videos of ``counts[0]`` training and ``counts[1]`` test samples, all
    annotated; ``split`` decides which training labels are withheld.
    """
    seed = grammar.seed if seed is None else seed
    n_train, n_test = counts
    rng = np.random.default_rng(seed)
    prototypes = rng.normal(0.0, grammar.prototype_scale, size=(grammar.n_classes, grammar.feature_dim))

    def batch(prefix: str, n: int) -> List[VideoRecord]:
        videos = []
        for index in range(n):
            activity = grammar.activities[int(rng.integers(len(grammar.activities)))]
            videos.append(generate_video(f"{prefix}_{activity.name}_{index:04d}", activity, prototypes, grammar, rng))
        return videos

    train = batch("train", n_train)
    test = batch("test", n_test)
    logger.info("Generated synthetic videos", extra={"extra_fields": {
        "train": n_train, "test": n_test, "classes": grammar.n_classes, "seed": seed}})
    return Dataset(class_names=list(grammar.class_names), feature_dim=grammar.feature_dim,
                   annotated=train, test=test, background_id=grammar.background_id, seed=seed)


def respects_order(transcript: Transcript, activity: ActivityGrammar) -> bool:
    """True when the transcript is a subsequence of the activity script containing every required step"""
    script = [s.action for s in activity.steps]
    required = {s.action for s in activity.steps if not s.optional}
    positions = [script.index(a) for a in transcript.steps if a in script]
    return (len(positions) == len(transcript)
            and positions == sorted(positions)
            and len(set(positions)) == len(positions)
            and required <= set(transcript.steps))
