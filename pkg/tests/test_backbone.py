"""
Tests of one segmentation stream and its frame losses
"""

import numpy as np
import pytest

from segsemi.backbone import (DualDilatedLayer, FeatureSequence, StreamParams, check_labels, forward_stream,
                              frame_loss_supervised, frame_loss_unsupervised, smoothing_term, stage_losses)
from segsemi.errors import LabelRangeError, ShapeError
from segsemi.nn.gradcheck import check_gradients
from segsemi.nn.tensor import Tensor, backward


def small_stream(rng, input_dim=4, n_classes=3, **kwargs):
    options = {"generation_layers": 3, "refinement_stages": 2, "refinement_layers": 2, "channels": 5}
    options.update(kwargs)
    return StreamParams(input_dim, n_classes, rng, **options)


def constant_logp(n_frames, row):
    return Tensor(np.tile(np.log(np.asarray(row)), (n_frames, 1)), requires_grad=True)


@pytest.mark.unit
class TestFeatureSequence:
    """Feature matrix validation"""

    def test_valid_sequence(self, rng):
        """Test frame and width accessors"""
        seq = FeatureSequence(rng.normal(size=(12, 4)))
        assert seq.frames == 12
        assert seq.dim == 4
        assert seq.as_tensor().shape == (12, 4)

    def test_empty_sequence_is_rejected(self):
        """Test that T ≥ 1 is required"""
        with pytest.raises(ShapeError):
            FeatureSequence(np.zeros((0, 4)))

    def test_non_finite_features_are_rejected(self):
        """Test that NaN features fail validation"""
        data = np.zeros((3, 2))
        data[1, 1] = np.nan
        with pytest.raises(ShapeError):
            FeatureSequence(data)

    def test_labels_must_match_frames_and_classes(self):
        """Test label length and range checks"""
        with pytest.raises(ShapeError):
            check_labels(np.array([0, 1]), n_classes=3, n_frames=3)
        with pytest.raises(LabelRangeError):
            check_labels(np.array([0, 3, 1]), n_classes=3, n_frames=3)


@pytest.mark.unit
class TestForwardStream:
    """Stage outputs of a stream"""

    def test_one_output_per_stage(self, rng):
        """Test generation stage plus refinement stages, each T×C"""
        stream = small_stream(rng)
        outputs = forward_stream(Tensor(rng.normal(size=(17, 4))), stream)
        assert len(outputs) == stream.n_stages == 3
        for logp in outputs:
            assert logp.shape == (17, 3)
            np.testing.assert_allclose(np.exp(logp.data).sum(axis=1), 1.0, atol=1e-6)

    def test_single_frame_video(self, rng):
        """Test that T = 1 still yields one row per stage"""
        outputs = forward_stream(Tensor(rng.normal(size=(1, 4))), small_stream(rng))
        assert all(o.shape == (1, 3) for o in outputs)

    def test_width_mismatch(self, rng):
        """Test that the feature width must match the stream input"""
        with pytest.raises(ShapeError):
            forward_stream(Tensor(rng.normal(size=(5, 6))), small_stream(rng))

    def test_dual_dilations(self, rng):
        """Test that layer i pairs dilations 2^(L−1−i) and 2^i"""
        layer = DualDilatedLayer(1, 4, 3, rng)
        assert layer.conv_wide.dilation == 4
        assert layer.conv_narrow.dilation == 2

    def test_zeroed_weights_give_uniform_output(self, rng):
        """Test log(1/C) on every frame of every stage when all weights and biases are zero"""
        stream = small_stream(rng)
        stream.fill_(0.0)
        for logp in forward_stream(Tensor(rng.normal(size=(9, 4))), stream):
            np.testing.assert_allclose(logp.data, np.log(1 / 3), atol=1e-12)

    def test_without_refinement(self, rng):
        """Test a generation-only stream"""
        outputs = forward_stream(Tensor(rng.normal(size=(6, 4))), small_stream(rng, refinement_stages=0))
        assert len(outputs) == 1


@pytest.mark.unit
class TestFrameLosses:
    """Cross-entropy and truncated smoothing"""

    def test_perfect_prediction_has_zero_loss(self):
        """Test a one-hot-like constant prediction on matching labels"""
        logp = Tensor(np.log(np.tile([1.0 - 2e-12, 1e-12, 1e-12], (6, 1))))
        loss = frame_loss_supervised(logp, np.zeros(6, dtype=int))
        assert loss.item() == pytest.approx(0.0, abs=1e-9)

    def test_uniform_prediction(self):
        """Test that uniform log-probabilities cost log C with zero smoothing"""
        logp = constant_logp(8, [0.25] * 4)
        loss = frame_loss_supervised(logp, np.arange(8) % 4)
        assert loss.item() == pytest.approx(np.log(4.0))

    def test_unsupervised_weighting(self):
        """Test that α scales only the cross-entropy term"""
        logp = constant_logp(5, [0.5, 0.25, 0.25])
        labels = np.array([0, 0, 1, 1, 2])
        full = frame_loss_supervised(logp, labels).item()
        weighted = frame_loss_unsupervised(logp, labels, alpha=0.3).item()
        assert weighted == pytest.approx(0.3 * full)

    def test_smoothing_is_truncated(self):
        """Test the τ cap on adjacent log-probability jumps"""
        logp = Tensor(np.array([[0.0, -100.0], [-100.0, 0.0]]))
        assert smoothing_term(logp, tau=4.0).item() == pytest.approx(2 * 16.0 / 4)

    def test_smoothing_class_permutation_invariance(self, rng):
        """Test that reordering the class columns leaves the smoothing term unchanged"""
        logp = np.log(rng.dirichlet(np.ones(4), size=12))
        expected = smoothing_term(Tensor(logp)).item()
        for _ in range(10):
            permuted = logp[:, rng.permutation(4)]
            assert smoothing_term(Tensor(permuted)).item() == pytest.approx(expected, rel=1e-12)

    def test_smoothing_single_frame_is_zero(self):
        """Test that one frame has nothing to smooth"""
        assert smoothing_term(constant_logp(1, [0.5, 0.5])).item() == 0.0

    def test_stage_losses_sum_over_stages(self, rng):
        """Test that the stream loss is the sum of the per-stage losses"""
        stream = small_stream(rng)
        outputs = forward_stream(Tensor(rng.normal(size=(9, 4))), stream)
        labels = rng.integers(0, 3, size=9)
        total = stage_losses(outputs, labels).item()
        assert total == pytest.approx(sum(frame_loss_supervised(o, labels).item() for o in outputs))

    def test_stream_gradient(self, rng):
        """Test the stream loss gradient by finite differences on a few parameters"""
        stream = small_stream(rng, input_dim=3, n_classes=3, generation_layers=2, refinement_stages=1,
                             refinement_layers=1, channels=3)
        features = Tensor(rng.normal(size=(7, 3)))
        labels = rng.integers(0, 3, size=7)
        params = stream.parameters()
        subset = {name: params[name] for name in list(params)[:2] + list(params)[-2:]}
        errors = check_gradients(lambda: stage_losses(forward_stream(features, stream), labels, tau=50.0), subset)
        assert max(errors.values()) <= 1e-4, errors

    def test_pseudo_label_gradient(self, rng):
        """Test the weighted pseudo-label loss gradient by finite differences"""
        stream = small_stream(rng, input_dim=3, n_classes=3, generation_layers=2, refinement_stages=1,
                             refinement_layers=1, channels=3)
        features = Tensor(rng.normal(size=(6, 3)))
        pseudo = rng.integers(0, 3, size=6)
        params = stream.parameters()
        subset = {name: params[name] for name in list(params)[-2:]}
        errors = check_gradients(
            lambda: stage_losses(forward_stream(features, stream), pseudo, alpha=0.3, tau=50.0), subset)
        assert max(errors.values()) <= 1e-4, errors

    def test_backward_reaches_every_parameter(self, rng):
        """Test that every stream weight receives a gradient"""
        stream = small_stream(rng)
        loss = stage_losses(forward_stream(Tensor(rng.normal(size=(10, 4))), stream), rng.integers(0, 3, size=10))
        backward(loss)
        assert all(p.grad is not None for p in stream.parameters().values())
