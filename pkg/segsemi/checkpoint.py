"""
Checkpoint format: a numpy ``.npz`` archive with the parameter tensors, the
Adam moments and the step counter, next to a JSON sidecar holding the
hyperparameters, the action vocabulary and the sampling RNG state.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from .errors import CheckpointError, VocabularyMismatchError
from .logging_config import get_logger
from .nn.module import Module
from .nn.optim import AdamState

logger = get_logger("segsemi.checkpoint")

CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    step: int
    parameters: Dict[str, np.ndarray]
    adam_step: int
    adam_m: Dict[str, np.ndarray]
    adam_v: Dict[str, np.ndarray]
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def class_names(self) -> List[str]:
        return list(self.meta.get("class_names", []))

    def check_vocabulary(self, class_names: List[str], feature_dim: int) -> None:
        if self.class_names != list(class_names):
            raise VocabularyMismatchError("Checkpoint and dataset use different action vocabularies",
                                          checkpoint=self.class_names, dataset=list(class_names))
        if self.meta.get("feature_dim") != feature_dim:
            raise VocabularyMismatchError("Checkpoint and dataset use different feature widths",
                                          checkpoint=self.meta.get("feature_dim"), dataset=feature_dim)


def sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_checkpoint(path: Path, model: Module, adam: AdamState, step: int, meta: Dict[str, Any]) -> Path:
    path = Path(path).with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: Dict[str, np.ndarray] = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "step": np.array(step),
        "adam_step": np.array(adam.step),
    }
    for name, value in model.state_dict().items():
        arrays[f"param/{name}"] = value
        arrays[f"adam_m/{name}"] = adam.m[name]
        arrays[f"adam_v/{name}"] = adam.v[name]
    np.savez(path, **arrays)
    sidecar = {"format_version": CHECKPOINT_VERSION, "step": step, **meta}
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    logger.info("Saved checkpoint", extra={"extra_fields": {"path": str(path), "step": step}})
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    try:
        meta = json.loads(sidecar_path(path).read_text())
        with np.load(path.with_suffix(".npz")) as archive:
            arrays = {k: archive[k] for k in archive.files}
    except (OSError, ValueError) as e:
        raise CheckpointError("Cannot read checkpoint", path=str(path), reason=str(e)) from e

    version = int(arrays.get("format_version", -1))
    if version != CHECKPOINT_VERSION or meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError("Unsupported checkpoint version", path=str(path), version=version)

    def group(prefix: str) -> Dict[str, np.ndarray]:
        return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

    return Checkpoint(step=int(arrays["step"]), parameters=group("param/"), adam_step=int(arrays["adam_step"]),
                      adam_m=group("adam_m/"), adam_v=group("adam_v/"), meta=meta)


def restore_optimizer(checkpoint: Checkpoint, adam: AdamState) -> None:
    if set(checkpoint.adam_m) != set(adam.m):
        raise CheckpointError("Optimizer state does not match the model parameters")
    adam.step = checkpoint.adam_step
    for name in adam.m:
        adam.m[name] = checkpoint.adam_m[name].astype(adam.m[name].dtype, copy=True)
        adam.v[name] = checkpoint.adam_v[name].astype(adam.v[name].dtype, copy=True)
