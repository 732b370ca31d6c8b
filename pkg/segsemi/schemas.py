"""
Pydantic schemas for grammar files, dataset manifests and metric reports
"""

from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# Synthetic grammar
class ActionStep(BaseModel):
    """One position of an activity script"""
    model_config = ConfigDict(extra="forbid")

    action: int = Field(..., ge=0)
    optional: bool = False
    probability: float = Field(1.0, gt=0.0, le=1.0, description="Inclusion probability of an optional step")


class ActivityGrammar(BaseModel):
    """Ordered action script of one activity"""
    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1, max_length=64)
    steps: List[ActionStep] = Field(..., min_length=1)

    @model_validator(mode="after")
    def validate_steps(self) -> "ActivityGrammar":
        actions = [s.action for s in self.steps]
        if len(set(actions)) != len(actions):
            raise ValueError(f"activity {self.name!r} repeats an action")
        if all(s.optional for s in self.steps):
            raise ValueError(f"activity {self.name!r} needs at least one required step")
        return self

    @property
    def action_pool(self) -> List[int]:
        return sorted(s.action for s in self.steps)


class DurationModel(BaseModel):
    """Normal segment-length distribution in frames"""
    mean: float = Field(60.0, gt=0)
    std: float = Field(15.0, ge=0)


class GrammarConfig(BaseModel):
    """Everything the synthetic generator needs"""
    model_config = ConfigDict(extra="forbid")

    class_names: List[str] = Field(..., min_length=1)
    activities: List[ActivityGrammar] = Field(..., min_length=1)
    durations: Dict[int, DurationModel] = Field(default_factory=dict, description="Per-action overrides")
    default_duration: DurationModel = Field(default_factory=DurationModel)
    feature_dim: int = Field(16, ge=1)
    prototype_scale: float = Field(1.0, gt=0)
    noise_scale: float = Field(0.6, ge=0)
    smoothing_window: int = Field(5, ge=1)
    min_frames: int = Field(200, ge=1)
    max_frames: int = Field(500, ge=1)
    min_duration: int = Field(5, ge=1)
    max_resamples: int = Field(100, ge=1)
    background_id: Optional[int] = None
    seed: int = 0

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def duration(self, action: int) -> DurationModel:
        return self.durations.get(action, self.default_duration)

    @model_validator(mode="after")
    def validate_grammar(self) -> "GrammarConfig":
        for activity in self.activities:
            for step in activity.steps:
                if step.action >= self.n_classes:
                    raise ValueError(f"activity {activity.name!r} uses unknown action {step.action}")
        if self.min_frames > self.max_frames:
            raise ValueError("min_frames must not exceed max_frames")
        if self.min_duration < self.smoothing_window:
            raise ValueError("min_duration must be at least the smoothing window")
        if self.background_id is not None and not 0 <= self.background_id < self.n_classes:
            raise ValueError("background_id outside the class range")
        longest = max(len(a.steps) for a in self.activities)
        if longest * self.min_duration > self.max_frames:
            raise ValueError("max_frames cannot hold the longest activity at min_duration")
        return self


# Dataset manifest
Split = Literal["annotated", "unannotated", "test"]


class ManifestEntry(BaseModel):
    """One video in the JSON index"""
    model_config = ConfigDict(extra="forbid")

    id: str = Field(..., min_length=1)
    split: Split
    activity: str = ""
    frames: int = Field(..., ge=1)
    features: str
    labels: Optional[str] = None
    heldout_labels: Optional[str] = Field(None, description="Withheld labels of an unannotated video")
    heuristics: Optional[List[int]] = None

    @model_validator(mode="after")
    def validate_labels(self) -> "ManifestEntry":
        if self.split == "unannotated" and self.labels is not None:
            raise ValueError(f"unannotated video {self.id!r} must not list labels")
        if self.split != "unannotated" and self.labels is None:
            raise ValueError(f"{self.split} video {self.id!r} has no labels")
        return self


class DatasetManifest(BaseModel):
    """JSON index file of a dataset directory"""
    model_config = ConfigDict(extra="forbid")

    format_version: int = 1
    class_names: List[str] = Field(..., min_length=1)
    feature_dim: int = Field(..., ge=1)
    background_id: Optional[int] = None
    annotated_fraction: float = Field(1.0, gt=0.0, le=1.0)
    seed: int = 0
    videos: List[ManifestEntry] = Field(default_factory=list)

    @field_validator("format_version")
    @classmethod
    def validate_format_version(cls, v: int) -> int:
        if v != 1:
            raise ValueError(f"unsupported manifest version {v}")
        return v

    @model_validator(mode="after")
    def validate_videos(self) -> "DatasetManifest":
        ids = [v.id for v in self.videos]
        if len(set(ids)) != len(ids):
            raise ValueError("video ids must be unique")
        for video in self.videos:
            for action in video.heuristics or []:
                if not 0 <= action < len(self.class_names):
                    raise ValueError(f"video {video.id!r} allows unknown action {action}")
        return self


# Reports
class MetricReport(BaseModel):
    """Aggregated scores of one evaluation mode, all in percent"""
    mode: str
    videos: int = Field(..., ge=0)
    mof: float
    mof_bg: Optional[float] = None
    edit: float
    f1_10: float
    f1_25: float
    f1_50: float
    iod: Optional[float] = None

    def as_row(self) -> Dict[str, object]:
        return self.model_dump()
