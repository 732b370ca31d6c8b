"""
Pseudo labels from candidate transcripts.

Each candidate is aligned to the frame probabilities by dynamic time warping
over monotone, surjective step assignments (every step covers at least one
contiguous run of frames). The cheapest candidate supplies the frame labels.
"""

from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .errors import NoFeasibleCandidate, NoValidAlignment, ShapeError
from .transcriber import Candidate, Transcript, labels_to_transcript


@dataclass(frozen=True)
class Alignment:
    """step_index[t] is the transcript position frame t is assigned to"""
    step_index: np.ndarray

    @property
    def frames(self) -> int:
        return int(self.step_index.size)

    def is_valid(self, n_steps: int) -> bool:
        s = self.step_index
        if s.size == 0 or s[0] != 0 or s[-1] != n_steps - 1:
            return False
        jumps = np.diff(s)
        return bool(np.all((jumps == 0) | (jumps == 1)))

    def labels(self, transcript: Transcript) -> np.ndarray:
        return np.asarray(transcript.steps, dtype=np.int64)[self.step_index]


@dataclass(frozen=True)
class PseudoLabelRecord:
    labels: np.ndarray
    transcript: Transcript
    cost: float
    score: float = 0.0

    def __post_init__(self) -> None:
        if labels_to_transcript(self.labels) != self.transcript:
            raise ShapeError("Pseudo labels do not collapse to their transcript",
                             transcript=list(self.transcript.steps))


def build_cost(probs: np.ndarray, transcript: Transcript) -> np.ndarray:
    """T×N cost, entry (t, n) = 1 − probs[t, transcript[n]]"""
    probs = np.asarray(probs)
    if probs.ndim != 2:
        raise ShapeError("Probabilities must be T×C", op="build_cost", shape=probs.shape)
    steps = np.asarray(transcript.steps, dtype=np.int64)
    if steps.max() >= probs.shape[1]:
        raise ShapeError("Transcript step outside the class range", op="build_cost",
                         classes=probs.shape[1], step=int(steps.max()))
    return 1.0 - probs[:, steps]


def dtw_align(cost: np.ndarray) -> Tuple[Alignment, float]:
    """
    Minimum-cost monotone alignment of T frames onto N ordered steps.

    acc[t, n] = cost[t, n] + min(acc[t−1, n], acc[t−1, n−1]). On ties the
    backtrack prefers the advance move, so every transition lands as late as
    possible.

    Args:
        cost (np.ndarray): T×N frame-to-step cost

    Returns:
        Tuple[Alignment, float]: Step index of every frame and the total cost

    Raises:
        NoValidAlignment: If there are fewer frames than steps
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ShapeError("Cost must be T×N", op="dtw_align", shape=cost.shape)
    n_frames, n_steps = cost.shape
    if n_steps < 1 or n_frames < n_steps:
        raise NoValidAlignment("Fewer frames than transcript steps", frames=n_frames, steps=n_steps)

    acc = np.full((n_frames, n_steps), np.inf)
    acc[0, 0] = cost[0, 0]
    for t in range(1, n_frames):
        stay = acc[t - 1]
        advance = np.concatenate(([np.inf], acc[t - 1, :-1]))
        acc[t] = cost[t] + np.minimum(stay, advance)

    step_index = np.empty(n_frames, dtype=np.int64)
    n = n_steps - 1
    step_index[-1] = n
    for t in range(n_frames - 1, 0, -1):
        # stay is impossible once n steps have to fit into t frames
        if n > 0 and (n == t or acc[t - 1, n - 1] <= acc[t - 1, n]):
            n -= 1
        step_index[t - 1] = n
    return Alignment(step_index), float(acc[-1, -1])


def alignment_cost(cost: np.ndarray, alignment: Alignment) -> float:
    total = 0.0
    for t, n in enumerate(alignment.step_index):
        total += float(cost[t, n])
    return total


def _candidate_order(entry: Tuple[float, float, int, int]) -> Tuple[float, float, int, int]:
    cost, score, length, position = entry
    return (cost, -score, length, position)


def best_match(probs: np.ndarray, candidates: Iterable[Candidate]) -> PseudoLabelRecord:
    """
    Align every feasible candidate and keep the cheapest. Ties go to the
    higher decoder score, then the shorter transcript. Candidates are
    run-collapsed first; those longer than the video are skipped.

    Args:
        probs (np.ndarray): T×C frame probabilities of the current model
        candidates (Iterable[Candidate]): Decoded transcripts with scores

    Returns:
        PseudoLabelRecord: Winning transcript, its alignment and frame labels

    Raises:
        NoFeasibleCandidate: If no candidate fits into the video
    """
    probs = np.asarray(probs)
    n_frames = probs.shape[0]
    ranked: List[Tuple[Tuple[float, float, int, int], Transcript, Alignment]] = []
    skipped = 0
    for position, candidate in enumerate(candidates):
        transcript = candidate.transcript.collapsed()
        if len(transcript) > n_frames:
            skipped += 1
            continue
        alignment, total = dtw_align(build_cost(probs, transcript))
        ranked.append(((total, candidate.score, len(transcript), position), transcript, alignment))

    if not ranked:
        raise NoFeasibleCandidate("No candidate transcript fits the video", frames=n_frames, skipped=skipped)

    key, transcript, alignment = min(ranked, key=lambda r: _candidate_order(r[0]))
    return PseudoLabelRecord(labels=alignment.labels(transcript), transcript=transcript,
                             cost=key[0], score=key[1])


def match_transcript(probs: np.ndarray, transcript: Transcript, score: Optional[float] = None) -> PseudoLabelRecord:
    """Pseudo labels for one known transcript"""
    candidate = Candidate(transcript=transcript, score=0.0 if score is None else score,
                          log_prob=0.0, ended_with_eos=True)
    return best_match(probs, [candidate])
