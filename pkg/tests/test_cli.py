"""
Command line tests
"""

import csv
import json

import pytest

from segsemi.cli import build_parser, main
from segsemi.io import INDEX_NAME, load_dataset

TINY_FLAGS = [
    "--streams", "2", "--generation-layers", "2", "--refinement-stages", "1", "--refinement-layers", "2",
    "--channels", "6", "--pool-k", "4", "--encoder-hidden", "4", "--decoder-hidden", "4",
    "--attention-hidden", "3", "--embedding-dim", "3", "--max-decode-length", "8", "--beam-width", "2",
    "--batch-size", "2", "--total-steps", "3", "--warmup-steps", "1", "--eval-interval", "2",
    "--checkpoint-interval", "2",
]


@pytest.fixture
def trained_run(dataset_dir, tmp_path):
    """A three-step training run on the tiny dataset"""
    output = tmp_path / "run"
    assert main(["train", "--dataset", str(dataset_dir), "--output", str(output), *TINY_FLAGS]) == 0
    return output


@pytest.mark.unit
class TestParser:
    """Argument parsing"""

    def test_hyperparameter_flags(self):
        """Test one flag per hyperparameter, booleans with a --no- form"""
        args = build_parser().parse_args(["train", "--dataset", "d", "--output", "o", "--alpha", "0.5",
                                          "--no-use-collection", "--streams", "2"])
        assert args.alpha == 0.5
        assert args.use_collection is False
        assert args.streams == 2
        assert args.beam_width is None

    def test_no_command(self, capsys):
        """Test usage and exit code 2 without a command"""
        assert main([]) == 2


@pytest.mark.integration
class TestCommands:
    """End-to-end command runs"""

    def test_gen_data(self, tmp_path):
        """Test the generated directory and its split"""
        output = tmp_path / "data"
        code = main(["gen-data", "--output", str(output), "--train", "9", "--test", "3", "--seed", "2"])
        assert code == 0
        assert (output / INDEX_NAME).exists()
        dataset = load_dataset(output)
        assert len(dataset.annotated) == 3
        assert len(dataset.unannotated) == 6
        assert len(dataset.test) == 3

    def test_gen_data_with_grammar_file(self, tmp_path, tiny_grammar):
        """Test a user-supplied grammar"""
        grammar = tmp_path / "grammar.json"
        grammar.write_text(tiny_grammar.model_dump_json())
        output = tmp_path / "data"
        assert main(["gen-data", "--output", str(output), "--grammar", str(grammar),
                     "--train", "3", "--test", "1", "--annotated-fraction", "1.0"]) == 0
        assert load_dataset(output).class_names == tiny_grammar.class_names

    def test_bad_grammar_file(self, tmp_path):
        """Test exit code 2 for an invalid grammar"""
        grammar = tmp_path / "grammar.json"
        grammar.write_text('{"class_names": []}')
        assert main(["gen-data", "--output", str(tmp_path / "d"), "--grammar", str(grammar)]) == 2

    def test_train(self, trained_run):
        """Test metrics, hyperparameters and checkpoints of a run"""
        with (trained_run / "metrics.csv").open() as handle:
            rows = list(csv.DictReader(handle))
        assert [int(r["step"]) for r in rows] == [0, 2, 3]
        assert json.loads((trained_run / "hyperparams.json").read_text())["streams"] == 2
        assert (trained_run / "checkpoints" / "final.npz").exists()
        assert (trained_run / "checkpoints" / "final.json").exists()

    def test_eval(self, dataset_dir, trained_run, tmp_path):
        """Test both report modes and dumped predictions"""
        output = tmp_path / "eval"
        code = main(["eval", "--dataset", str(dataset_dir), "--checkpoint",
                     str(trained_run / "checkpoints" / "final.npz"), "--output", str(output),
                     "--dump-predictions"])
        assert code == 0
        with (output / "report.csv").open() as handle:
            modes = [r["mode"] for r in csv.DictReader(handle)]
        assert modes == ["collected", "final_stream"]
        assert (output / "report.txt").exists()
        assert len(list((output / "predictions" / "collected").glob("*.segl"))) == 3

    def test_predict_then_score(self, dataset_dir, trained_run, tmp_path):
        """Test that scored predictions reproduce the eval report"""
        checkpoint = str(trained_run / "checkpoints" / "final.npz")
        predictions = tmp_path / "pred"
        assert main(["predict", "--dataset", str(dataset_dir), "--checkpoint", checkpoint,
                     "--output", str(predictions), "--mode", "final_stream"]) == 0
        report = tmp_path / "score.csv"
        assert main(["score", "--dataset", str(dataset_dir), "--predictions", str(predictions),
                     "--output", str(report), "--mode", "final_stream"]) == 0
        main(["eval", "--dataset", str(dataset_dir), "--checkpoint", checkpoint, "--output", str(tmp_path / "ev")])
        with report.open() as handle:
            scored = next(csv.DictReader(handle))
        with (tmp_path / "ev" / "report.csv").open() as handle:
            evaluated = [r for r in csv.DictReader(handle) if r["mode"] == "final_stream"][0]
        assert scored == evaluated

    def test_vocabulary_mismatch(self, trained_run, tmp_path, tiny_grammar):
        """Test exit code 2 when the checkpoint and dataset disagree"""
        other = tiny_grammar.model_copy(update={"class_names": ["a", "b", "c", "d"]})
        grammar = tmp_path / "other.json"
        grammar.write_text(other.model_dump_json())
        data = tmp_path / "other"
        assert main(["gen-data", "--output", str(data), "--grammar", str(grammar), "--train", "3", "--test", "1"]) == 0
        code = main(["eval", "--dataset", str(data), "--checkpoint", str(trained_run / "checkpoints" / "final.npz"),
                     "--output", str(tmp_path / "ev")])
        assert code == 2

    def test_missing_dataset(self, tmp_path):
        """Test exit code 2 for an unreadable dataset"""
        assert main(["train", "--dataset", str(tmp_path / "nowhere"), "--output", str(tmp_path / "o")]) == 2

    def test_invalid_hyperparameter(self, dataset_dir, tmp_path):
        """Test exit code 2 for an out-of-range flag"""
        code = main(["train", "--dataset", str(dataset_dir), "--output", str(tmp_path / "o"), "--alpha", "3"])
        assert code == 2

    def test_unknown_condition(self, dataset_dir, tmp_path):
        """Test exit code 2 for an unknown ablation condition"""
        code = main(["ablate", "--dataset", str(dataset_dir), "--output", str(tmp_path / "a"),
                     "--conditions", "nonsense"])
        assert code == 2
