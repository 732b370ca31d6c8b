"""
Tests of the transcript decoder, its losses and beam search
"""

import itertools

import numpy as np
import pytest

from segsemi.errors import EmptyBeamError, ShapeError, TranscriptTooLongError
from segsemi.nn import functional as F
from segsemi.nn.gradcheck import check_gradients
from segsemi.nn.tensor import Tensor
from segsemi.transcriber import (ActionVocab, Candidate, Transcript, TranscriberParams, beam_decode,
                                 greedy_decode, labels_to_transcript, pool_probabilities, score_sequence,
                                 segment_bounds, segment_pool, teacher_forced, transcript_loss)


def small_transcriber(seed=0, n_classes=3, max_decode_length=5, pool_k=4):
    return TranscriberParams(n_classes, np.random.default_rng(seed), pool_k=pool_k, encoder_hidden=4,
                             decoder_hidden=4, attention_hidden=3, embedding_dim=3,
                             max_decode_length=max_decode_length)


def random_logp(rng, n_frames=12, n_classes=3):
    return F.log_softmax(Tensor(rng.normal(scale=2.0, size=(n_frames, n_classes))), axis=1)


def all_sequences(n_classes, max_decode_length):
    """Every complete decode: actions then EOS, or actions filling the length limit"""
    for n in range(1, max_decode_length + 1):
        for steps in itertools.product(range(n_classes), repeat=n):
            if n + 1 <= max_decode_length:
                yield steps, True
            if n == max_decode_length:
                yield steps, False


@pytest.mark.unit
class TestTranscript:
    """Transcript values and run-length collapse"""

    def test_labels_to_transcript(self):
        """Test that runs collapse in order"""
        assert labels_to_transcript([1, 1, 2, 2, 2, 1]).steps == (1, 2, 1)
        assert labels_to_transcript([4]).steps == (4,)

    def test_empty_transcript_rejected(self):
        """Test that a transcript holds at least one step"""
        with pytest.raises(ShapeError):
            Transcript.of([])
        with pytest.raises(ShapeError):
            labels_to_transcript([])

    def test_collapsed(self):
        """Test removal of consecutive repeats"""
        assert Transcript.of([0, 0, 1, 1, 0]).collapsed() == Transcript.of([0, 1, 0])

    def test_vocab_layout(self):
        """Test that EOS follows the classes and SOS follows EOS"""
        vocab = ActionVocab(5)
        assert (vocab.eos, vocab.sos, vocab.output_size, vocab.input_size) == (5, 6, 6, 7)

    def test_candidate_decode_length(self):
        """Test that EOS counts as one decoded position"""
        t = Transcript.of([0, 1])
        assert Candidate(t, -1.0, -3.0, True).decode_length == 3
        assert Candidate(t, -1.0, -2.0, False).decode_length == 2


@pytest.mark.unit
class TestPooling:
    """K-segment max pooling"""

    def test_bounds_cover_every_frame(self):
        """Test near-equal windows with the remainder in front"""
        assert segment_bounds(10, 4) == [(0, 3), (3, 6), (6, 8), (8, 10)]

    def test_short_video_uses_one_window_per_frame(self):
        """Test T < K"""
        assert segment_bounds(3, 5) == [(0, 1), (1, 2), (2, 3)]

    def test_pool_values(self):
        """Test the per-window class maxima"""
        probs = Tensor(np.array([[0.9, 0.1], [0.6, 0.4], [0.2, 0.8], [0.3, 0.7]]))
        np.testing.assert_allclose(segment_pool(probs, 2).data, [[0.9, 0.4], [0.3, 0.8]])

    def test_pool_monotone_in_probabilities(self, rng):
        """Test that raising frame scores pointwise never lowers a pooled value"""
        for _ in range(100):
            n_frames, k = int(rng.integers(1, 30)), int(rng.integers(1, 8))
            scores = rng.uniform(size=(n_frames, 3))
            raised = scores + rng.uniform(0.0, 0.5, size=scores.shape) * (rng.uniform(size=scores.shape) < 0.5)
            assert np.all(segment_pool(Tensor(scores), k).data <= segment_pool(Tensor(raised), k).data)

    def test_pool_probabilities_is_detached(self, rng):
        """Test that the decoder input carries no graph back to the segmenter"""
        logits = Tensor(rng.normal(size=(8, 3)), requires_grad=True)
        pooled = pool_probabilities(F.log_softmax(logits, axis=1), 4)
        assert pooled.shape == (4, 3)
        assert not pooled.requires_grad


@pytest.mark.unit
class TestTranscriptLoss:
    """Teacher-forced cross-entropy"""

    def test_uniform_decoder_costs_log_c_plus_one(self, rng):
        """Test the loss of a decoder whose output layer is zeroed"""
        params = small_transcriber()
        params.output.fill_(0.0)
        pooled = pool_probabilities(random_logp(rng), params.pool_k)
        target = Transcript.of([2, 0, 1])
        decoded = teacher_forced(params, pooled, target)
        assert decoded.shape == (4, 4)
        assert transcript_loss(decoded, target).item() == pytest.approx(np.log(4.0))
        assert transcript_loss(decoded, target, alpha=0.3, is_pseudo=True).item() == pytest.approx(0.3 * np.log(4.0))

    def test_too_long_target(self, rng):
        """Test that N + 1 positions must fit the decode length"""
        params = small_transcriber(max_decode_length=3)
        pooled = pool_probabilities(random_logp(rng), params.pool_k)
        teacher_forced(params, pooled, Transcript.of([0, 1]))
        with pytest.raises(TranscriptTooLongError):
            teacher_forced(params, pooled, Transcript.of([0, 1, 2]))

    def test_position_count_must_match(self, rng):
        """Test the target + EOS shape check"""
        params = small_transcriber()
        pooled = pool_probabilities(random_logp(rng), params.pool_k)
        decoded = teacher_forced(params, pooled, Transcript.of([0, 1]))
        with pytest.raises(ShapeError):
            transcript_loss(decoded, Transcript.of([0]))

    def test_gradient(self, rng):
        """Test the loss gradient of the attention and output weights by finite differences"""
        params = small_transcriber(seed=3)
        pooled = pool_probabilities(random_logp(rng), params.pool_k)
        target = Transcript.of([1, 2, 1])
        names = ["attention_score.weight", "output.weight", "embedding.weight", "encoder_forward.w_input"]
        subset = {n: params.parameters()[n] for n in names}
        errors = check_gradients(lambda: transcript_loss(teacher_forced(params, pooled, target), target), subset)
        assert max(errors.values()) <= 1e-4, errors


@pytest.mark.unit
class TestBeamDecode:
    """Length-normalised beam search"""

    def test_candidates_are_ranked(self, rng):
        """Test at most M candidates, best score first"""
        params = small_transcriber()
        candidates = beam_decode(random_logp(rng), params, beam_width=4)
        assert 1 <= len(candidates) <= 4
        scores = [c.score for c in candidates]
        assert scores == sorted(scores, reverse=True)
        assert candidates.best is candidates.candidates[0]
        assert all(1 <= len(c.transcript) <= params.max_decode_length for c in candidates)

    def test_scores_match_the_decoder(self, rng):
        """Test that each reported score is the normalised log-probability of its sequence"""
        params = small_transcriber(seed=5)
        logp = random_logp(rng)
        pooled = pool_probabilities(logp, params.pool_k)
        for c in beam_decode(logp, params, beam_width=3):
            expected = score_sequence(params, pooled, c.transcript.steps, c.ended_with_eos)
            assert c.score == pytest.approx(expected, abs=1e-12)
            assert c.log_prob == pytest.approx(expected * c.decode_length, abs=1e-12)

    @pytest.mark.parametrize("seed", range(100))
    def test_beam_of_one_is_greedy(self, seed):
        """Test M = 1 against arg-max decoding"""
        params = small_transcriber(seed=seed)
        logp = random_logp(np.random.default_rng(100 + seed))
        beam = beam_decode(logp, params, beam_width=1)
        greedy = greedy_decode(logp, params)
        assert len(beam) == 1
        assert beam.best.transcript == greedy.transcript
        assert beam.best.score == pytest.approx(greedy.score, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_wide_beam_matches_exhaustive_search(self, seed):
        """Test that a beam wider than every expansion returns all sequences, best first"""
        n_classes, limit = 2, 3
        params = small_transcriber(seed=seed, n_classes=n_classes, max_decode_length=limit)
        logp = random_logp(np.random.default_rng(seed), n_classes=n_classes)
        pooled = pool_probabilities(logp, params.pool_k)
        oracle = {steps: score_sequence(params, pooled, steps, eos) for steps, eos in all_sequences(n_classes, limit)}

        candidates = beam_decode(logp, params, beam_width=len(oracle) + 6)
        assert {c.transcript.steps for c in candidates} == set(oracle)
        assert candidates.best.score == pytest.approx(max(oracle.values()), abs=1e-12)
        for c in candidates:
            assert c.score == pytest.approx(oracle[c.transcript.steps], abs=1e-12)

    def test_heuristics_restrict_actions(self, rng):
        """Test that masked actions never appear"""
        params = small_transcriber()
        candidates = beam_decode(random_logp(rng), params, beam_width=5, heuristics={0, 2})
        assert all(set(c.transcript.steps) <= {0, 2} for c in candidates)

    def test_everything_masked(self, rng):
        """Test EmptyBeamError when no action is allowed"""
        params = small_transcriber()
        with pytest.raises(EmptyBeamError):
            beam_decode(random_logp(rng), params, beam_width=3, heuristics=set())
        with pytest.raises(EmptyBeamError):
            greedy_decode(random_logp(rng), params, heuristics={7})

    def test_eos_never_first(self, rng):
        """Test that every candidate holds at least one action"""
        params = small_transcriber(seed=11)
        params.output.fill_(0.0)
        params.output.bias.data[params.vocab.eos] = 10.0
        candidates = beam_decode(random_logp(rng), params, beam_width=3)
        assert all(len(c.transcript) >= 1 for c in candidates)
        assert candidates.best.ended_with_eos
        assert len(candidates.best.transcript) == 1

    def test_deterministic(self, rng):
        """Test identical candidates for identical inputs"""
        params = small_transcriber()
        logp = random_logp(rng)
        first = beam_decode(logp, params, beam_width=3)
        second = beam_decode(logp, params, beam_width=3)
        assert first.transcripts == second.transcripts
        assert [c.score for c in first] == [c.score for c in second]
