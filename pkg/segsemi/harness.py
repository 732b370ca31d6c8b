"""
Experiment conditions: baseline, semi-supervised, full supervision, mixed
supervision, stream-count, distill/collect, α, beam-width and label-fraction
variations. Every condition trains on a copy of one dataset and reports the
test-set scores of both prediction modes; repeated seeds are summarised by
their median.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np

from .config import Hyperparams
from .data import Dataset, split
from .errors import ConfigError, DatasetError
from .logging_config import get_logger, set_run_context
from .metrics import REPORT_COLUMNS, format_cell
from .schemas import MetricReport
from .trainer import MODES, TranscriptOracle, Trainer, evaluate_modes
from .transcriber import Transcript, labels_to_transcript

logger = get_logger("segsemi.harness")

Supervision = Literal["baseline", "semi", "full", "mixed"]


@dataclass(frozen=True)
class Condition:
    name: str
    supervision: Supervision = "semi"
    overrides: Dict[str, Any] = field(default_factory=dict)
    annotated_fraction: Optional[float] = None


def _conditions() -> Dict[str, Condition]:
    table = [
        Condition("baseline", "baseline"),
        Condition("semi", "semi"),
        Condition("full", "full"),
        Condition("mixed", "mixed"),
        Condition("heuristics", "semi", {"use_heuristics": True}),
        Condition("only_distill", "semi", {"use_collection": False}),
        Condition("only_collect", "semi", {"use_distillation": False}),
        Condition("full_single_stream", "full", {"streams": 1}),
    ]
    table += [Condition(f"streams_{n}", "semi", {"streams": n}) for n in (1, 2, 4)]
    table += [Condition(f"alpha_{a}", "semi", {"alpha": a}) for a in (0.1, 0.3, 0.5, 1.0)]
    table += [Condition(f"beam_{m}", "semi", {"beam_width": m}) for m in (1, 5)]
    table += [Condition(f"fraction_{f}", "semi", annotated_fraction=f) for f in (0.2, 0.35, 0.45, 1.0)]
    return {c.name: c for c in table}


CONDITIONS: Dict[str, Condition] = _conditions()


def get_condition(name: str) -> Condition:
    try:
        return CONDITIONS[name]
    except KeyError:
        raise ConfigError(f"Unknown condition {name!r}", known=sorted(CONDITIONS)) from None


def ground_truth_oracle(dataset: Dataset) -> TranscriptOracle:
    """Transcripts of the withheld labels, looked up by video id"""
    transcripts: Dict[str, Transcript] = {}
    for record in dataset.unannotated:
        if record.heldout_labels is None:
            raise DatasetError("Mixed supervision needs the withheld labels", video=record.id)
        transcripts[record.id] = labels_to_transcript(record.heldout_labels)
    return lambda record: transcripts.get(record.id)


def prepare(dataset: Dataset, condition: Condition) -> Tuple[Dataset, Optional[TranscriptOracle]]:
    """Training data (and transcript hook) of one condition"""
    if condition.annotated_fraction is not None:
        dataset = split(dataset, condition.annotated_fraction, dataset.seed)
    if condition.supervision == "baseline":
        return dataset.baseline(), None
    if condition.supervision == "full":
        return dataset.fully_supervised(), None
    if condition.supervision == "mixed":
        return dataset, ground_truth_oracle(dataset)
    return dataset, None


def run_condition(dataset: Dataset, condition: Condition, hyper: Hyperparams, seed: int,
                  output_dir: Optional[Path] = None) -> Dict[str, MetricReport]:
    hyper = hyper.with_overrides(seed=seed, **condition.overrides)
    train_set, oracle = prepare(dataset, condition)
    set_run_context(run_id=f"{condition.name}-s{seed}")
    logger.info("Running condition", extra={"extra_fields": {
        "condition": condition.name, "seed": seed, "annotated": len(train_set.annotated),
        "unannotated": len(train_set.unannotated)}})
    run_dir = output_dir / f"{condition.name}_seed{seed}" if output_dir is not None else None
    state = Trainer(train_set, hyper, run_dir, transcript_oracle=oracle).run()
    return evaluate_modes(state.model, dataset.test, dataset.background_id)


def median_report(reports: Sequence[MetricReport]) -> MetricReport:
    """Per-metric median over repeated runs"""
    def median(values: Iterable[Optional[float]]) -> Optional[float]:
        present = [v for v in values if v is not None]
        return float(np.median(present)) if present else None

    first = reports[0]
    fields = ["mof", "mof_bg", "edit", "f1_10", "f1_25", "f1_50", "iod"]
    return MetricReport(mode=first.mode, videos=first.videos,
                        **{f: median(getattr(r, f) for r in reports) for f in fields})


@dataclass
class AblationRow:
    condition: str
    seed: str
    report: MetricReport

    def as_dict(self) -> Dict[str, object]:
        return {"condition": self.condition, "seed": self.seed, **self.report.as_row()}


def run_ablation(dataset: Dataset, names: Sequence[str], hyper: Hyperparams, seeds: Sequence[int],
                 output_dir: Optional[Path] = None) -> List[AblationRow]:
    """Every condition × seed, followed by the per-condition medians"""
    conditions = [get_condition(n) for n in names]
    rows: List[AblationRow] = []
    for condition in conditions:
        per_mode: Dict[str, List[MetricReport]] = {m: [] for m in MODES}
        for seed in seeds:
            reports = run_condition(dataset, condition, hyper, seed, output_dir)
            for mode, report in reports.items():
                per_mode[mode].append(report)
                rows.append(AblationRow(condition.name, str(seed), report))
        for mode in MODES:
            rows.append(AblationRow(condition.name, "median", median_report(per_mode[mode])))
    return rows


def medians(rows: Sequence[AblationRow], mode: str = "collected") -> Dict[str, MetricReport]:
    return {r.condition: r.report for r in rows if r.seed == "median" and r.report.mode == mode}


def write_ablation_csv(rows: Sequence[AblationRow], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = ["condition", "seed", *REPORT_COLUMNS]
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            values = row.as_dict()
            writer.writerow({k: format_cell(values.get(k)) for k in columns})
