"""
Transcript generation: frame probabilities → ordered action list.

The T×C probability matrix is max-pooled into K temporal segments, encoded by a
bidirectional LSTM, and decoded by an LSTM with additive attention that emits
one action (or EOS) per step. Beam search returns M ranked candidates.
"""

from dataclasses import dataclass, field
from typing import Collection, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .config import Hyperparams
from .errors import EmptyBeamError, ShapeError, TranscriptTooLongError
from .nn import functional as F
from .nn.module import Embedding, Linear, LSTMCell, Module
from .nn.tensor import Tensor, no_grad

State = Tuple[Tensor, Tensor]


@dataclass(frozen=True)
class Transcript:
    """Ordered action steps, EOS not stored"""
    steps: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.steps) < 1:
            raise ShapeError("A transcript holds at least one step")

    @classmethod
    def of(cls, steps: Sequence[int]) -> "Transcript":
        return cls(tuple(int(s) for s in steps))

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self) -> Iterator[int]:
        return iter(self.steps)

    def __getitem__(self, index: int) -> int:
        return self.steps[index]

    def collapsed(self) -> "Transcript":
        return labels_to_transcript(np.asarray(self.steps))


@dataclass(frozen=True)
class ActionVocab:
    """Class ids 0..C−1; EOS = C (decoder output); SOS = C+1 (decoder input only)"""
    n_classes: int
    background_id: Optional[int] = None

    @property
    def eos(self) -> int:
        return self.n_classes

    @property
    def sos(self) -> int:
        return self.n_classes + 1

    @property
    def output_size(self) -> int:
        return self.n_classes + 1

    @property
    def input_size(self) -> int:
        return self.n_classes + 2


@dataclass(frozen=True)
class Candidate:
    transcript: Transcript
    score: float          # length-normalised log-probability
    log_prob: float       # unnormalised sum
    ended_with_eos: bool

    @property
    def decode_length(self) -> int:
        return len(self.transcript) + (1 if self.ended_with_eos else 0)


@dataclass
class CandidateSet:
    candidates: List[Candidate] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self) -> Iterator[Candidate]:
        return iter(self.candidates)

    @property
    def best(self) -> Candidate:
        return self.candidates[0]

    @property
    def transcripts(self) -> List[Transcript]:
        return [c.transcript for c in self.candidates]


def labels_to_transcript(frame_labels: Sequence[int]) -> Transcript:
    """Run-length collapse, order preserved"""
    labels = np.asarray(frame_labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise ShapeError("Cannot build a transcript from empty labels")
    keep = np.ones(labels.size, dtype=bool)
    keep[1:] = labels[1:] != labels[:-1]
    return Transcript.of(labels[keep].tolist())


def segment_bounds(n_frames: int, k: int) -> List[Tuple[int, int]]:
    """K contiguous near-equal windows, the first T mod K one frame longer; T windows when T < K"""
    if n_frames < 1 or k < 1:
        raise ShapeError("segment_bounds needs T ≥ 1 and K ≥ 1", frames=n_frames, k=k)
    k = min(k, n_frames)
    base, extra = divmod(n_frames, k)
    bounds = []
    start = 0
    for index in range(k):
        stop = start + base + (1 if index < extra else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


def segment_pool(probs: Tensor, k: int) -> Tensor:
    """Per-segment, per-class max of the probability matrix"""
    return F.segment_max(probs, segment_bounds(probs.shape[0], k))


@dataclass
class EncodedVideo:
    outputs: Tensor   # K×2H encoder states
    keys: Tensor      # K×A attention keys
    state: State      # initial decoder state


class TranscriberParams(Module):
    def __init__(self, n_classes: int, rng: np.random.Generator, pool_k: int = 32, encoder_hidden: int = 64,
                 decoder_hidden: int = 64, attention_hidden: int = 64, embedding_dim: int = 16,
                 max_decode_length: int = 20):
        self.vocab = ActionVocab(n_classes)
        self.pool_k = pool_k
        self.max_decode_length = max_decode_length
        self.encoder_forward = LSTMCell(n_classes, encoder_hidden, rng)
        self.encoder_backward = LSTMCell(n_classes, encoder_hidden, rng)
        self.bridge = Linear(2 * encoder_hidden, decoder_hidden, rng)
        self.embedding = Embedding(self.vocab.input_size, embedding_dim, rng)
        self.decoder = LSTMCell(embedding_dim + 2 * encoder_hidden, decoder_hidden, rng)
        self.attention_keys = Linear(2 * encoder_hidden, attention_hidden, rng)
        self.attention_query = Linear(decoder_hidden, attention_hidden, rng)
        self.attention_score = Linear(attention_hidden, 1, rng)
        self.output = Linear(decoder_hidden + 2 * encoder_hidden, self.vocab.output_size, rng)

    @classmethod
    def from_hyperparams(cls, n_classes: int, hyper: Hyperparams, rng: np.random.Generator) -> "TranscriberParams":
        return cls(n_classes, rng, pool_k=hyper.pool_k, encoder_hidden=hyper.encoder_hidden,
                   decoder_hidden=hyper.decoder_hidden, attention_hidden=hyper.attention_hidden,
                   embedding_dim=hyper.embedding_dim, max_decode_length=hyper.max_decode_length)

    @property
    def n_classes(self) -> int:
        return self.vocab.n_classes


def encode(params: TranscriberParams, pooled: Tensor) -> EncodedVideo:
    if pooled.ndim != 2 or pooled.shape[1] != params.n_classes:
        raise ShapeError("Encoder input must be K×C", op="encode", shape=pooled.shape, classes=params.n_classes)
    n_steps = pooled.shape[0]
    rows = [F.slice_axis(pooled, k, k + 1) for k in range(n_steps)]

    forward_states: List[Tensor] = []
    state = None
    for row in rows:
        state = params.encoder_forward(row, state)
        forward_states.append(state[0])

    backward_states: List[Tensor] = [rows[0]] * n_steps
    state = None
    for k in reversed(range(n_steps)):
        state = params.encoder_backward(rows[k], state)
        backward_states[k] = state[0]

    outputs = F.concat([F.concat([f, b], axis=1) for f, b in zip(forward_states, backward_states)], axis=0)
    summary = F.concat([forward_states[-1], backward_states[0]], axis=1)
    h0 = F.tanh(params.bridge(summary))
    _, c0 = params.decoder.initial_state()
    return EncodedVideo(outputs=outputs, keys=params.attention_keys(outputs), state=(h0, c0))


def decoder_step(params: TranscriberParams, encoded: EncodedVideo, previous_token: int,
                 state: State) -> Tuple[Tensor, State]:
    """One decode position: 1×(C+1) log-probabilities and the next state"""
    h, _ = state
    energy = F.tanh(F.add(encoded.keys, params.attention_query(h)))
    weights = F.softmax(F.transpose(params.attention_score(energy)), axis=1)
    context = F.matmul(weights, encoded.outputs)
    embedded = params.embedding([previous_token])
    state = params.decoder(F.concat([embedded, context], axis=1), state)
    logits = params.output(F.concat([state[0], context], axis=1))
    return F.log_softmax(logits, axis=1), state


def pool_probabilities(logp: Tensor, k: int) -> Tensor:
    """Detached class probabilities pooled into K segments"""
    return segment_pool(F.exp(F.detach(logp)), k)


def teacher_forced(params: TranscriberParams, pooled: Tensor, target: Transcript) -> Tensor:
    """(N+1)×(C+1) decoder log-probabilities, fed SOS then the target steps"""
    if len(target) + 1 > params.max_decode_length:
        raise TranscriptTooLongError("Target transcript exceeds the decode length",
                                     steps=len(target), max_length=params.max_decode_length)
    encoded = encode(params, pooled)
    state = encoded.state
    rows = []
    for token in (params.vocab.sos, *target.steps):
        logp, state = decoder_step(params, encoded, token, state)
        rows.append(logp)
    return F.concat(rows, axis=0)


def transcript_loss(decoder_logp: Tensor, target: Transcript, alpha: float = 0.3,
                    is_pseudo: bool = False) -> Tensor:
    """Mean cross-entropy over the N steps plus EOS; weighted by α for estimated transcripts"""
    eos = decoder_logp.shape[1] - 1
    expected = np.asarray([*target.steps, eos], dtype=np.int64)
    if decoder_logp.shape[0] != expected.size:
        raise ShapeError("Decoder positions do not match target + EOS", op="transcript_loss",
                         positions=decoder_logp.shape[0], expected=expected.size)
    loss = F.nll(decoder_logp, expected)
    return F.scale(loss, alpha) if is_pseudo else loss


def _allowed_mask(params: TranscriberParams, heuristics: Optional[Collection[int]]) -> np.ndarray:
    allowed = np.ones(params.vocab.output_size, dtype=bool)
    if heuristics is not None:
        allowed[: params.n_classes] = False
        for action in heuristics:
            if 0 <= int(action) < params.n_classes:
                allowed[int(action)] = True
    return allowed


@dataclass
class _Beam:
    tokens: Tuple[int, ...]
    log_prob: float
    state: State


def _rank_key(score: float, is_eos: bool, tokens: Tuple[int, ...]) -> Tuple[float, int, Tuple[int, ...]]:
    return (-score, 0 if is_eos else 1, tokens)


def beam_decode(logp: Tensor, params: TranscriberParams, beam_width: int,
                heuristics: Optional[Collection[int]] = None) -> CandidateSet:
    """
    Length-normalised beam search. Expansions of all live beams are ranked by
    (sum of log-probs)/(decoded length); the top ``beam_width`` survive, those
    ending in EOS leave the beam. Actions outside ``heuristics`` are masked
    before ranking, and EOS is masked at the first position.

    Args:
        logp (Tensor): T×C segmenter log-probabilities, pooled before encoding
        params (TranscriberParams): Encoder and decoder weights
        beam_width (int): Number of hypotheses kept and returned
        heuristics (Optional[Collection[int]]): Actions allowed in the output, all if None

    Returns:
        CandidateSet: Up to ``beam_width`` finished transcripts, best first

    Raises:
        ShapeError: If ``beam_width`` is not positive
        EmptyBeamError: If the heuristics mask out every action
    """
    if beam_width < 1:
        raise ShapeError("Beam width must be positive", beam_width=beam_width)
    allowed = _allowed_mask(params, heuristics)
    if not allowed[: params.n_classes].any():
        raise EmptyBeamError("Every action is masked", heuristics=sorted(heuristics or []))
    eos = params.vocab.eos

    with no_grad():
        encoded = encode(params, pool_probabilities(logp, params.pool_k))
        live = [_Beam(tokens=(), log_prob=0.0, state=encoded.state)]
        finished: List[Candidate] = []

        for position in range(params.max_decode_length):
            expansions = []
            for beam in live:
                previous = beam.tokens[-1] if beam.tokens else params.vocab.sos
                step_logp, state = decoder_step(params, encoded, previous, beam.state)
                row = step_logp.data[0]
                for token in np.flatnonzero(allowed):
                    token = int(token)
                    if token == eos and position == 0:
                        continue
                    total = beam.log_prob + float(row[token])
                    score = total / (len(beam.tokens) + 1)
                    expansions.append((score, token == eos, beam.tokens + (token,), total, state))

            expansions.sort(key=lambda e: _rank_key(e[0], e[1], e[2]))
            live = []
            for score, is_eos, tokens, total, state in expansions[:beam_width]:
                if is_eos:
                    finished.append(Candidate(Transcript(tokens[:-1]), score, total, True))
                else:
                    live.append(_Beam(tokens=tokens, log_prob=total, state=state))
            if not live:
                break

        for beam in live:
            finished.append(Candidate(Transcript(beam.tokens), beam.log_prob / len(beam.tokens), beam.log_prob, False))

    return CandidateSet(_rank_candidates(finished)[:beam_width])


def _rank_candidates(candidates: Sequence[Candidate]) -> List[Candidate]:
    """Best score first; ties to the earlier EOS, then the lexicographically smaller transcript"""
    unique: Dict[Tuple[int, ...], Candidate] = {}
    for c in candidates:
        kept = unique.get(c.transcript.steps)
        if kept is None or c.score > kept.score:
            unique[c.transcript.steps] = c
    return sorted(unique.values(), key=lambda c: (-c.score, c.decode_length, c.transcript.steps))


def greedy_decode(logp: Tensor, params: TranscriberParams,
                  heuristics: Optional[Collection[int]] = None) -> Candidate:
    """Arg-max token at every position until EOS or the length limit"""
    allowed = _allowed_mask(params, heuristics)
    if not allowed[: params.n_classes].any():
        raise EmptyBeamError("Every action is masked", heuristics=sorted(heuristics or []))
    eos = params.vocab.eos

    with no_grad():
        encoded = encode(params, pool_probabilities(logp, params.pool_k))
        state = encoded.state
        tokens: List[int] = []
        total = 0.0
        for position in range(params.max_decode_length):
            step_logp, state = decoder_step(params, encoded, tokens[-1] if tokens else params.vocab.sos, state)
            row = np.where(allowed, step_logp.data[0], -np.inf)
            if position == 0:
                row[eos] = -np.inf
            token = int(np.argmax(row))
            total += float(row[token])
            if token == eos:
                return Candidate(Transcript.of(tokens), total / (len(tokens) + 1), total, True)
            tokens.append(token)
    return Candidate(Transcript.of(tokens), total / len(tokens), total, False)


def score_sequence(params: TranscriberParams, pooled: Tensor, steps: Sequence[int], ended_with_eos: bool) -> float:
    """Length-normalised score the decoder assigns to one complete sequence"""
    eos = params.vocab.eos
    with no_grad():
        encoded = encode(params, pooled)
        state = encoded.state
        total = 0.0
        previous = params.vocab.sos
        for token in [*steps, eos] if ended_with_eos else list(steps):
            step_logp, state = decoder_step(params, encoded, previous, state)
            total += float(step_logp.data[0][token])
            previous = token
    return total / (len(steps) + (1 if ended_with_eos else 0))
