"""
One MS-TCN++ segmentation stream and its frame-level losses.

A stream is a prediction-generation stage built from dual dilated layers,
followed by single-dilation refinement stages that each re-read the previous
stage's class probabilities. Every stage emits a T×C matrix of log-probabilities.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import LabelRangeError, ShapeError
from .nn import functional as F
from .nn.module import Conv1d, Linear, Module
from .nn.tensor import Tensor, default_dtype

DEFAULT_TAU = 4.0
DEFAULT_BETA = 0.15


@dataclass
class FeatureSequence:
    """Per-frame embeddings of one video (T×D)"""
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ShapeError("Features must be a non-empty T×D matrix", shape=self.data.shape)
        if not np.all(np.isfinite(self.data)):
            raise ShapeError("Features contain non-finite values", shape=self.data.shape)

    @property
    def frames(self) -> int:
        return int(self.data.shape[0])

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    def as_tensor(self) -> Tensor:
        return Tensor(self.data, dtype=default_dtype())


def check_labels(labels: np.ndarray, n_classes: int, n_frames: Optional[int] = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.size == 0:
        raise ShapeError("Frame labels must be a non-empty vector", shape=labels.shape)
    if n_frames is not None and labels.shape[0] != n_frames:
        raise ShapeError("Frame labels do not match the frame count", labels=labels.shape[0], frames=n_frames)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LabelRangeError("Frame label outside the class range", classes=n_classes,
                              low=int(labels.min()), high=int(labels.max()))
    return labels


class DualDilatedLayer(Module):
    """Two parallel dilated convolutions (2^(L−1−i) and 2^i) merged by a 1×1 conv"""

    def __init__(self, index: int, n_layers: int, channels: int, rng: np.random.Generator):
        self.conv_wide = Conv1d(channels, channels, rng, dilation=2 ** (n_layers - 1 - index))
        self.conv_narrow = Conv1d(channels, channels, rng, dilation=2 ** index)
        self.fusion = Linear(2 * channels, channels, rng)

    def __call__(self, x: Tensor) -> Tensor:
        merged = F.concat([self.conv_wide(x), self.conv_narrow(x)], axis=1)
        return F.add(F.relu(self.fusion(merged)), x)


class DilatedResidualLayer(Module):
    def __init__(self, dilation: int, channels: int, rng: np.random.Generator):
        self.conv_dilated = Conv1d(channels, channels, rng, dilation=dilation)
        self.pointwise = Linear(channels, channels, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return F.add(x, self.pointwise(F.relu(self.conv_dilated(x))))


class GenerationStage(Module):
    def __init__(self, input_dim: int, n_layers: int, channels: int, n_classes: int, rng: np.random.Generator):
        self.project_in = Linear(input_dim, channels, rng)
        self.layers = [DualDilatedLayer(i, n_layers, channels, rng) for i in range(n_layers)]
        self.project_out = Linear(channels, n_classes, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.project_in(x)
        for layer in self.layers:
            h = layer(h)
        return self.project_out(h)


class RefinementStage(Module):
    def __init__(self, n_layers: int, channels: int, n_classes: int, rng: np.random.Generator):
        self.project_in = Linear(n_classes, channels, rng)
        self.layers = [DilatedResidualLayer(2 ** i, channels, rng) for i in range(n_layers)]
        self.project_out = Linear(channels, n_classes, rng)

    def __call__(self, probs: Tensor) -> Tensor:
        h = self.project_in(probs)
        for layer in self.layers:
            h = layer(h)
        return self.project_out(h)


class StreamParams(Module):
    """Weights of one MS-TCN++ stream"""

    def __init__(self, input_dim: int, n_classes: int, rng: np.random.Generator,
                 generation_layers: int = 11, refinement_stages: int = 3,
                 refinement_layers: int = 10, channels: int = 64):
        self.input_dim = input_dim
        self.n_classes = n_classes
        self.generation = GenerationStage(input_dim, generation_layers, channels, n_classes, rng)
        self.refinements = [RefinementStage(refinement_layers, channels, n_classes, rng)
                            for _ in range(refinement_stages)]

    @property
    def n_stages(self) -> int:
        return 1 + len(self.refinements)

    def __call__(self, x: Tensor) -> List[Tensor]:
        return forward_stream(x, self)


def forward_stream(features: Tensor, params: StreamParams) -> List[Tensor]:
    """
    Run one stream over a video

    The generation stage maps features to logits; each refinement stage
    reads the softmax of the previous stage's logits.

    Args:
        features (Tensor): T×D frame features
        params (StreamParams): Stage weights of the stream

    Returns:
        List[Tensor]: T×C log-probabilities per stage, the last one is the
        stream's prediction

    Raises:
        ShapeError: If the feature width does not match the stream input
    """
    if features.ndim != 2 or features.shape[1] != params.input_dim:
        raise ShapeError("Stream input width mismatch", op="forward_stream",
                         expected=params.input_dim, shape=features.shape)
    logits = params.generation(features)
    outputs = [F.log_softmax(logits, axis=1)]
    for stage in params.refinements:
        logits = stage(F.softmax(logits, axis=1))
        outputs.append(F.log_softmax(logits, axis=1))
    return outputs


def smoothing_term(logp: Tensor, tau: float = DEFAULT_TAU) -> Tensor:
    """
    Truncated squared difference of adjacent frames' log-probabilities,
    (1/(T·C)) Σ_{t≥2} min(τ, |logp[t] − logp[t−1]|)².
    """
    n_frames, n_classes = logp.shape
    if n_frames < 2:
        return F.scale(F.sum_all(logp), 0.0)
    delta = F.sub(F.slice_axis(logp, 1, n_frames), F.slice_axis(logp, 0, n_frames - 1))
    clamped = F.clamp_max(F.absolute(delta), tau)
    return F.scale(F.sum_all(F.mul(clamped, clamped)), 1.0 / (n_frames * n_classes))


def frame_loss_supervised(logp: Tensor, labels: np.ndarray, beta: float = DEFAULT_BETA,
                          tau: float = DEFAULT_TAU) -> Tensor:
    """
    Cross entropy against ground truth plus the weighted smoothing term

    Args:
        logp (Tensor): T×C log-probabilities of one stage
        labels (np.ndarray): T ground-truth class ids
        beta (float): Weight of the smoothing term
        tau (float): Truncation of the adjacent-frame log difference

    Returns:
        Tensor: Scalar loss
    """
    labels = check_labels(labels, logp.shape[1], logp.shape[0])
    return F.add(F.nll(logp, labels), F.scale(smoothing_term(logp, tau), beta))


def frame_loss_unsupervised(logp: Tensor, pseudo_labels: np.ndarray, alpha: float = 0.3,
                            beta: float = DEFAULT_BETA, tau: float = DEFAULT_TAU) -> Tensor:
    """Same as the supervised loss, with the cross entropy on pseudo labels scaled by ``alpha``"""
    pseudo_labels = check_labels(pseudo_labels, logp.shape[1], logp.shape[0])
    return F.add(F.scale(F.nll(logp, pseudo_labels), alpha), F.scale(smoothing_term(logp, tau), beta))


def stage_losses(stage_outputs: List[Tensor], labels: np.ndarray, alpha: Optional[float] = None,
                 beta: float = DEFAULT_BETA, tau: float = DEFAULT_TAU) -> Tensor:
    """
    Frame loss summed over every stage of a stream. ``alpha=None`` selects the
    supervised form, otherwise the weighted pseudo-label form.
    """
    if alpha is None:
        terms = [frame_loss_supervised(out, labels, beta, tau) for out in stage_outputs]
    else:
        terms = [frame_loss_unsupervised(out, labels, alpha, beta, tau) for out in stage_outputs]
    return F.add_scalars(terms)
