"""
Semi-supervised training loop.

Each step samples a batch from the union of annotated and unannotated
videos. Annotated videos contribute frame and transcript losses against their
labels. After warm-up, unannotated videos are decoded into candidate
transcripts, the best candidate is aligned to the frame probabilities, and the
resulting pseudo labels drive the α-weighted losses. The distillation loss
between consecutive streams is active from the first step.
"""

import contextvars
import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backbone import stage_losses
from .checkpoint import Checkpoint, load_checkpoint, restore_optimizer, save_checkpoint
from .config import Hyperparams, get_settings
from .data import Dataset, VideoRecord
from .errors import DatasetError, NoFeasibleCandidate, NonFiniteGradientError, TranscriptTooLongError
from .logging_config import (LoggerMixin, log_evaluation, log_performance, log_pseudo_label,
                             log_training_step, set_step)
from .matcher import PseudoLabelRecord, best_match
from .metrics import score_videos
from .multistream import MultiStreamParams, StreamOutputs, distill_loss, forward_multistream, select_prediction
from .nn import functional as F
from .nn.module import Module
from .nn.optim import Adam
from .nn.tensor import Tensor, backward, no_grad
from .schemas import MetricReport
from .transcriber import (Candidate, CandidateSet, Transcript, TranscriberParams, beam_decode,
                          labels_to_transcript, pool_probabilities, teacher_forced, transcript_loss)

TranscriptOracle = Callable[[VideoRecord], Optional[Transcript]]

MODES = ("collected", "final_stream")
LOSS_COLUMNS = ["Ls_f", "Lu_f", "Ls_g", "Lu_g", "Ld", "total"]
EVAL_COLUMNS = ["mof", "edit", "f1_10", "f1_25", "f1_50"]


class SegmentationModel(Module):
    """Multi-stream segmenter plus transcript decoder"""

    def __init__(self, input_dim: int, n_classes: int, hyper: Hyperparams, rng: np.random.Generator):
        self.segmenter = MultiStreamParams.from_hyperparams(input_dim, n_classes, hyper, rng)
        self.transcriber = TranscriberParams.from_hyperparams(n_classes, hyper, rng)

    @property
    def n_classes(self) -> int:
        return self.segmenter.n_classes

    @property
    def input_dim(self) -> int:
        return self.segmenter.input_dim


@dataclass
class BatchTerms:
    """Scalar loss terms; the unannotated ones already carry α"""
    sup_frame: Tensor = field(default_factory=lambda: Tensor(0.0))
    unsup_frame: Tensor = field(default_factory=lambda: Tensor(0.0))
    sup_transcript: Tensor = field(default_factory=lambda: Tensor(0.0))
    unsup_transcript: Tensor = field(default_factory=lambda: Tensor(0.0))
    distill: Tensor = field(default_factory=lambda: Tensor(0.0))

    def values(self) -> Dict[str, float]:
        return {"Ls_f": self.sup_frame.item(), "Lu_f": self.unsup_frame.item(),
                "Ls_g": self.sup_transcript.item(), "Lu_g": self.unsup_transcript.item(),
                "Ld": self.distill.item()}


def total_loss(terms: BatchTerms, hyper: Hyperparams) -> Tensor:
    """L = (L_s^f + L_s^g) + (L_u^f + L_u^g) + β_distill · L_d"""
    weight = hyper.beta_distill if hyper.use_distillation else 0.0
    return F.add_scalars([terms.sup_frame, terms.sup_transcript, terms.unsup_frame,
                          terms.unsup_transcript, F.scale(terms.distill, weight)])


@dataclass
class TrainState:
    model: SegmentationModel
    optimizer: Adam
    hyper: Hyperparams
    class_names: List[str]
    rng: np.random.Generator
    step: int = 0
    pseudo_labels: Dict[str, Tuple[int, PseudoLabelRecord]] = field(default_factory=dict)
    history: List[Dict[str, object]] = field(default_factory=list)
    infeasible: int = 0

    @classmethod
    def create(cls, input_dim: int, class_names: Sequence[str], hyper: Hyperparams) -> "TrainState":
        init_seq, sample_seq = np.random.SeedSequence(hyper.seed).spawn(2)
        model = SegmentationModel(input_dim, len(class_names), hyper, np.random.default_rng(init_seq))
        optimizer = Adam(model.parameters(), lr=hyper.lr, beta1=hyper.adam_beta1,
                         beta2=hyper.adam_beta2, eps=hyper.adam_eps)
        return cls(model=model, optimizer=optimizer, hyper=hyper, class_names=list(class_names),
                   rng=np.random.default_rng(sample_seq))

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, hyper: Optional[Hyperparams] = None) -> "TrainState":
        hyper = hyper or Hyperparams.build(checkpoint.meta["hyperparams"])
        state = cls.create(int(checkpoint.meta["feature_dim"]), checkpoint.class_names, hyper)
        state.model.load_state_dict(checkpoint.parameters)
        restore_optimizer(checkpoint, state.optimizer.state)
        state.step = checkpoint.step
        state.infeasible = int(checkpoint.meta.get("infeasible", 0))
        if "rng_state" in checkpoint.meta:
            state.rng.bit_generator.state = checkpoint.meta["rng_state"]
        return state

    def save(self, path: Path) -> Path:
        meta = {
            "hyperparams": self.hyper.model_dump(),
            "class_names": self.class_names,
            "feature_dim": self.model.input_dim,
            "rng_state": self.rng.bit_generator.state,
            "infeasible": self.infeasible,
        }
        return save_checkpoint(path, self.model, self.optimizer.state, self.step, meta)


def candidates_for(record: VideoRecord, prediction: Tensor, model: SegmentationModel, hyper: Hyperparams,
                   transcript_oracle: Optional[TranscriptOracle] = None) -> CandidateSet:
    if transcript_oracle is not None:
        transcript = transcript_oracle(record)
        if transcript is not None:
            return CandidateSet([Candidate(transcript, 0.0, 0.0, True)])
    heuristics = record.heuristics if hyper.use_heuristics else None
    return beam_decode(prediction, model.transcriber, hyper.beam_width, heuristics)


def pseudo_label(record: VideoRecord, prediction: Tensor, model: SegmentationModel, hyper: Hyperparams,
                 transcript_oracle: Optional[TranscriptOracle] = None) -> PseudoLabelRecord:
    """Decode candidates for one unannotated video and keep the best-aligned one"""
    candidates = candidates_for(record, prediction, model, hyper, transcript_oracle)
    try:
        result = best_match(np.exp(prediction.data), candidates)
    except NoFeasibleCandidate as e:
        log_pseudo_label(record.id, len(candidates), error=str(e))
        raise
    log_pseudo_label(record.id, len(candidates), cost=result.cost, transcript_len=len(result.transcript))
    return result


def frame_terms(outputs: StreamOutputs, labels: np.ndarray, hyper: Hyperparams,
                pseudo: bool) -> Tensor:
    """Frame loss summed over stages; with pseudo labels the first stream is left out unless it is the only one"""
    alpha = hyper.alpha if pseudo else None
    first = 1 if pseudo and outputs.n_streams > 1 else 0
    terms = [stage_losses(stages, labels, alpha, hyper.beta_smooth, hyper.tau) for stages in outputs.stages[first:]]
    return F.add_scalars(terms)


def sample_terms(record: VideoRecord, model: SegmentationModel, hyper: Hyperparams, step: int,
                 pseudo: Optional[PseudoLabelRecord] = None,
                 transcript_oracle: Optional[TranscriptOracle] = None) -> Tuple[BatchTerms, Optional[PseudoLabelRecord], bool]:
    """
    Loss terms of one video. For an unannotated video past warm-up the pseudo
    labels are computed here unless ``pseudo`` is passed in. The flag is set
    when no candidate transcript fits, leaving only the distillation term.
    """
    outputs = forward_multistream(Tensor(record.features), model.segmenter)
    terms = BatchTerms()
    if hyper.use_distillation:
        terms.distill = distill_loss(outputs, hyper.tau)
    prediction = select_prediction(outputs, hyper.use_collection)
    pooled = pool_probabilities(prediction, model.transcriber.pool_k)

    if record.labels is not None:
        target = labels_to_transcript(record.labels)
        terms.sup_frame = frame_terms(outputs, record.labels, hyper, pseudo=False)
        terms.sup_transcript = transcript_loss(teacher_forced(model.transcriber, pooled, target), target)
        return terms, None, False

    if step < hyper.warmup_steps:
        return terms, None, False

    if pseudo is None:
        try:
            pseudo = pseudo_label(record, prediction, model, hyper, transcript_oracle)
        except NoFeasibleCandidate:
            return terms, None, True
    terms.unsup_frame = frame_terms(outputs, pseudo.labels, hyper, pseudo=True)
    try:
        decoded = teacher_forced(model.transcriber, pooled, pseudo.transcript)
        terms.unsup_transcript = transcript_loss(decoded, pseudo.transcript, hyper.alpha, is_pseudo=True)
    except TranscriptTooLongError:
        pass
    return terms, pseudo, False


def check_transcript_lengths(dataset: Dataset, hyper: Hyperparams) -> None:
    longest = max((len(r.transcript) for r in dataset.annotated), default=0)
    if longest + 1 > hyper.max_decode_length:
        raise DatasetError("Annotated transcripts exceed max_decode_length", longest=longest,
                           max_decode_length=hyper.max_decode_length)


def predict_labels(model: SegmentationModel, record: VideoRecord, modes: Sequence[str] = MODES) -> Dict[str, np.ndarray]:
    """Arg-max frame labels of each requested mode from one forward pass"""
    with no_grad():
        outputs = forward_multistream(Tensor(record.features), model.segmenter)
    return {mode: np.argmax(select_prediction(outputs, mode == "collected").data, axis=1) for mode in modes}


def predict_many(model: SegmentationModel, records: Sequence[VideoRecord], modes: Sequence[str] = MODES,
                 threads: Optional[int] = None) -> List[Dict[str, np.ndarray]]:
    """Predictions for many videos, in parallel across videos"""
    workers = max(1, threads or get_settings().threads)
    if workers == 1 or len(records) < 2:
        return [predict_labels(model, r, modes) for r in records]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(contextvars.copy_context().run, predict_labels, model, r, modes) for r in records]
        return [f.result() for f in futures]


def evaluate_modes(model: SegmentationModel, records: Sequence[VideoRecord], background_id: Optional[int] = None,
                   modes: Sequence[str] = MODES, threads: Optional[int] = None) -> Dict[str, MetricReport]:
    predictions = predict_many(model, records, modes, threads)
    truths = [r.labels for r in records]
    reports = {}
    for mode in modes:
        report = score_videos([p[mode] for p in predictions], truths, mode=mode, background_id=background_id)
        log_evaluation(mode, {k: v for k, v in report.as_row().items() if isinstance(v, float)}, report.videos)
        reports[mode] = report
    return reports


def evaluate(state: TrainState, test_set: Sequence[VideoRecord], mode: str = "collected",
             background_id: Optional[int] = None) -> MetricReport:
    """
    Score a trained model on held-out videos

    Args:
        state (TrainState): Model and optimiser state
        test_set (Sequence[VideoRecord]): Annotated videos
        mode (str): One of ``MODES``
        background_id (Optional[int]): Class left out of the segment metrics

    Returns:
        MetricReport: MoF, edit score, F1 at each threshold and IoD

    Raises:
        ValueError: If ``mode`` is unknown
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    return evaluate_modes(state.model, test_set, background_id, modes=(mode,))[mode]


class Trainer(LoggerMixin):
    """Runs the optimisation loop and writes metrics.csv and checkpoints"""

    def __init__(self, dataset: Dataset, hyper: Hyperparams, output_dir: Optional[Path] = None,
                 transcript_oracle: Optional[TranscriptOracle] = None, state: Optional[TrainState] = None,
                 eval_set: Optional[Sequence[VideoRecord]] = None):
        if not dataset.annotated:
            raise DatasetError("Training needs at least one annotated video")
        check_transcript_lengths(dataset, hyper)
        self.dataset = dataset.without_heldout()
        self.hyper = hyper
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.transcript_oracle = transcript_oracle
        self.state = state or TrainState.create(dataset.feature_dim, dataset.class_names, hyper)
        if self.state.model.input_dim != dataset.feature_dim or self.state.class_names != dataset.class_names:
            raise DatasetError("Model and dataset disagree on vocabulary or feature width")
        self.eval_set = list(dataset.test if eval_set is None else eval_set)
        self.pool = self.dataset.annotated + self.dataset.unannotated
        self._sums = {k: 0.0 for k in LOSS_COLUMNS}
        self._updates = 0
        self._skipped = 0

    @property
    def eval_mode(self) -> str:
        return "collected" if self.hyper.use_collection else "final_stream"

    @property
    def metrics_path(self) -> Optional[Path]:
        return self.output_dir / "metrics.csv" if self.output_dir is not None else None

    def sample_batch(self) -> List[VideoRecord]:
        size = min(self.hyper.batch_size, len(self.pool))
        indices = self.state.rng.choice(len(self.pool), size=size, replace=False)
        return [self.pool[int(i)] for i in indices]

    def _cached_pseudo(self, record: VideoRecord) -> Optional[PseudoLabelRecord]:
        cached = self.state.pseudo_labels.get(record.id)
        if cached is None or self.state.step - cached[0] >= self.hyper.pseudo_refresh_interval:
            return None
        return cached[1]

    def train_step(self) -> Dict[str, float]:
        """One Adam update on a freshly sampled batch; returns the mean loss terms"""
        step = self.state.step
        set_step(step)
        started = time.perf_counter()
        batch = self.sample_batch()
        totals: List[Tensor] = []
        values = {k: 0.0 for k in LOSS_COLUMNS}
        skipped = 0

        for record in batch:
            cached = self._cached_pseudo(record)
            terms, pseudo, infeasible = sample_terms(record, self.state.model, self.hyper, step,
                                                     cached, self.transcript_oracle)
            skipped += int(infeasible)
            if pseudo is not None and pseudo is not cached:
                self.state.pseudo_labels[record.id] = (step, pseudo)
            loss = total_loss(terms, self.hyper)
            totals.append(loss)
            for k, v in terms.values().items():
                values[k] += v / len(batch)
            values["total"] += loss.item() / len(batch)

        if not all(np.isfinite(v) for v in values.values()):
            self.logger.error("Non-finite loss", extra={"extra_fields": {"step": step, **values}})
            raise NonFiniteGradientError("Non-finite loss", step=step, **values)

        batch_loss = F.scale(F.add_scalars(totals), 1.0 / len(batch))
        self.state.optimizer.zero_grad()
        backward(batch_loss, self.state.optimizer.params)
        self.state.optimizer.step()
        self.state.step += 1
        self.state.infeasible += skipped

        for k, v in values.items():
            self._sums[k] += v
        self._updates += 1
        self._skipped += skipped
        log_training_step(step, values, (time.perf_counter() - started) * 1000, skipped)
        return values

    def evaluation_row(self) -> Dict[str, object]:
        row: Dict[str, object] = {"step": self.state.step, "updates": self._updates, "skipped": self._skipped}
        for k in LOSS_COLUMNS:
            row[k] = self._sums[k] / self._updates if self._updates else 0.0
        if self.eval_set:
            report = evaluate_modes(self.state.model, self.eval_set, self.dataset.background_id,
                                    modes=(self.eval_mode,))[self.eval_mode]
            scores = report.as_row()
            row.update({k: scores[k] for k in EVAL_COLUMNS})
        else:
            row.update({k: "" for k in EVAL_COLUMNS})
        self._sums = {k: 0.0 for k in LOSS_COLUMNS}
        self._updates = 0
        self._skipped = 0
        self.state.history.append(row)
        self._write_row(row)
        return row

    def _write_row(self, row: Dict[str, object]) -> None:
        path = self.metrics_path
        if path is None:
            return
        columns = ["step", "updates", *LOSS_COLUMNS, "skipped", *EVAL_COLUMNS]
        fresh = not path.exists()
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=columns)
            if fresh:
                writer.writeheader()
            writer.writerow({k: _format(row[k]) for k in columns})

    def checkpoint(self, name: Optional[str] = None) -> Optional[Path]:
        if self.output_dir is None:
            return None
        name = name or f"step_{self.state.step:06d}"
        return self.state.save(self.output_dir / "checkpoints" / f"{name}.npz")

    @log_performance
    def run(self) -> TrainState:
        hyper = self.hyper
        self.logger.info("Training started", extra={"extra_fields": {
            "annotated": len(self.dataset.annotated), "unannotated": len(self.dataset.unannotated),
            "parameters": self.state.model.count_parameters(), "start_step": self.state.step,
            "total_steps": hyper.total_steps}})
        if self.state.step == 0:
            self.evaluation_row()
        while self.state.step < hyper.total_steps:
            self.train_step()
            step = self.state.step
            if step % hyper.eval_interval == 0 or step == hyper.total_steps:
                self.evaluation_row()
            if step % hyper.checkpoint_interval == 0 and step < hyper.total_steps:
                self.checkpoint()
        self.checkpoint("final")
        if self.state.infeasible:
            self.logger.warning("Videos skipped for lack of a feasible transcript",
                                extra={"extra_fields": {"count": self.state.infeasible}})
        self.logger.info("Training finished", extra={"extra_fields": {"steps": self.state.step}})
        return self.state


def _format(value: object) -> object:
    return f"{value:.6f}" if isinstance(value, float) else value


def train(dataset: Dataset, hyper: Hyperparams, output_dir: Optional[Path] = None,
          transcript_oracle: Optional[TranscriptOracle] = None, resume: Optional[Path] = None) -> TrainState:
    """
    Train a segmentation model from scratch or from a checkpoint

    Args:
        dataset (Dataset): Annotated and unannotated training videos
        hyper (Hyperparams): Optimisation and model settings
        output_dir (Optional[Path]): Where metrics.csv and checkpoints go
        transcript_oracle (Optional[TranscriptOracle]): Known transcripts of unannotated videos
        resume (Optional[Path]): Checkpoint to continue from

    Returns:
        TrainState: Final model, optimiser state and history
    """
    state = None
    if resume is not None:
        checkpoint = load_checkpoint(resume)
        checkpoint.check_vocabulary(dataset.class_names, dataset.feature_dim)
        state = TrainState.from_checkpoint(checkpoint, hyper)
    return Trainer(dataset, hyper, output_dir, transcript_oracle, state).run()
