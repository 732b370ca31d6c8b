"""
Chained segmentation streams with distillation and collection.

Stream 1 reads the raw features. Every later stream reads the features
concatenated with the previous stream's final class probabilities (detached),
and its first stage is pulled towards that prediction by the distillation loss.
The collected prediction is the renormalised geometric mean of all streams.
"""

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .backbone import DEFAULT_TAU, StreamParams, forward_stream
from .config import Hyperparams
from .errors import ShapeError
from .nn import functional as F
from .nn.module import Module
from .nn.tensor import Tensor


class MultiStreamParams(Module):
    def __init__(self, input_dim: int, n_classes: int, rng: np.random.Generator, streams: int = 4,
                 generation_layers: int = 11, refinement_stages: int = 3,
                 refinement_layers: int = 10, channels: int = 64):
        if streams < 1:
            raise ShapeError("At least one stream is required", streams=streams)
        self.input_dim = input_dim
        self.n_classes = n_classes
        self.streams = [
            StreamParams(input_dim if index == 0 else input_dim + n_classes, n_classes, rng,
                         generation_layers=generation_layers, refinement_stages=refinement_stages,
                         refinement_layers=refinement_layers, channels=channels)
            for index in range(streams)
        ]

    @classmethod
    def from_hyperparams(cls, input_dim: int, n_classes: int, hyper: Hyperparams,
                         rng: np.random.Generator) -> "MultiStreamParams":
        return cls(input_dim, n_classes, rng, streams=hyper.streams,
                   generation_layers=hyper.generation_layers, refinement_stages=hyper.refinement_stages,
                   refinement_layers=hyper.refinement_layers, channels=hyper.channels)

    @property
    def n_streams(self) -> int:
        return len(self.streams)


@dataclass
class StreamOutputs:
    stages: List[List[Tensor]]  # [stream][stage] -> T×C log-probabilities
    collected: Tensor

    @property
    def finals(self) -> List[Tensor]:
        return [stream[-1] for stream in self.stages]

    @property
    def n_streams(self) -> int:
        return len(self.stages)


def forward_multistream(features: Tensor, params: MultiStreamParams) -> StreamOutputs:
    """
    Run all streams in order

    Every stream after the first reads the features concatenated with the
    detached probabilities of the previous stream's final stage, so no
    gradient flows back into earlier streams through their inputs.

    Args:
        features (Tensor): T×D frame features
        params (MultiStreamParams): Weights of every stream

    Returns:
        StreamOutputs: Per-stream stage outputs and the collected prediction

    Raises:
        ShapeError: If the feature width does not match the model
    """
    if features.ndim != 2 or features.shape[1] != params.input_dim:
        raise ShapeError("Feature width mismatch", op="forward_multistream",
                         expected=params.input_dim, shape=features.shape)
    stages: List[List[Tensor]] = []
    for index, stream in enumerate(params.streams):
        if index == 0:
            stream_input = features
        else:
            previous = F.exp(F.detach(stages[-1][-1]))
            stream_input = F.concat([features, previous], axis=1)
        stages.append(forward_stream(stream_input, stream))
    return StreamOutputs(stages=stages, collected=collect([s[-1] for s in stages]))


def collect(finals: Sequence[Tensor]) -> Tensor:
    """Mean of the streams' log-probabilities, renormalised per frame"""
    if not finals:
        raise ShapeError("collect needs at least one stream", op="collect")
    if len(finals) == 1:
        return finals[0]
    shape = finals[0].shape
    for f in finals[1:]:
        if f.shape != shape:
            raise ShapeError("Stream predictions differ in shape", op="collect", shapes=[x.shape for x in finals])
    mean = F.scale(F.add_scalars(list(finals)), 1.0 / len(finals))
    return F.log_softmax(mean, axis=1)


def distill_loss(outputs: StreamOutputs, tau: float = DEFAULT_TAU) -> Tensor:
    """
    Σ_{l≥2} (1/(T·C)) Σ min(τ, |first_stage_l − final_{l−1}|), the previous
    stream's final prediction acting as a fixed target.
    """
    if outputs.n_streams < 2:
        return Tensor(0.0)
    terms = []
    for index in range(1, outputs.n_streams):
        student = outputs.stages[index][0]
        teacher = F.detach(outputs.stages[index - 1][-1])
        gap = F.clamp_max(F.absolute(F.sub(student, teacher)), tau)
        terms.append(F.mean_all(gap))
    return F.add_scalars(terms)


def final_stream_prediction(outputs: StreamOutputs) -> Tensor:
    """Last stream's final stage, for inference without the other streams"""
    return outputs.finals[-1]


def select_prediction(outputs: StreamOutputs, use_collection: bool = True) -> Tensor:
    """
    Prediction used for decoding, pseudo labels and evaluation

    Args:
        outputs (StreamOutputs): Result of ``forward_multistream``
        use_collection (bool): Collected prediction if True, otherwise the last stream's

    Returns:
        Tensor: T×C log-probabilities
    """
    return outputs.collected if use_collection else final_stream_prediction(outputs)
