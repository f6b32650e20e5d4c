from __future__ import annotations

from pathlib import Path

import pytest

from dujad.cli import main
from dujad.core.exporters import checkpoint_path, read_results_csv, summary_path_for

TINY_CONFIG = """\
N=6
M=2
R_P=4
R_D=3
P_a=0.5
AREA_SIDE=150
ETF_ITERATIONS=20
P_SWEEP=2
TRIALS=2
METHODS=baseline1,baseline4_10it
FBS_PILOT_MAX_ITER=30
TRAIN_N_TRAIN=2
TRAIN_N_VAL=1
TRAIN_BATCH_SIZE=2
TRAIN_EPOCHS=1
TRAIN_NUM_LAYERS=2
TRAIN_GRADIENT=fd
TRAIN_AUD_STEPS=3
"""


@pytest.fixture
def config_file(tmp_path: Path) -> Path:
    path = tmp_path / "tiny.env"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return path


def test_verify_prints_one_line_per_check(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["verify", "--checks", "metrics,alpha_bounds"]) == 0

    lines = capsys.readouterr().out.splitlines()
    assert [line.split()[:2] for line in lines] == [["PASS", "metrics:"], ["PASS", "alpha_bounds:"]]


def test_verify_rejects_unknown_checks() -> None:
    with pytest.raises(SystemExit) as excinfo:
        main(["verify", "--checks", "bogus"])

    assert excinfo.value.code == 2


@pytest.mark.parametrize("command", ["eval", "train", "gen"])
def test_commands_other_than_verify_require_a_config(command: str) -> None:
    with pytest.raises(SystemExit) as excinfo:
        main([command])

    assert excinfo.value.code == 2


def test_invalid_configuration_exits_with_usage_status(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = tmp_path / "bad.env"
    path.write_text("P_a=2\n", encoding="utf-8")

    assert main(["eval", "--config", str(path)]) == 2
    assert "scenario" in capsys.readouterr().err


def test_eval_writes_results_and_summary(config_file: Path, tmp_path: Path) -> None:
    out = tmp_path / "results" / "tiny.csv"

    assert main(["eval", "--config", str(config_file), "--out", str(out), "--trials", "1"]) == 0

    frame = read_results_csv(out)
    assert len(frame) == 2
    assert summary_path_for(out).is_file()


def test_eval_without_output_prints_the_summary(config_file: Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["eval", "--config", str(config_file), "--trials", "1", "--methods", "baseline1"]) == 0

    assert "uder_mean" in capsys.readouterr().out


def test_eval_of_untrained_detector_is_a_configuration_error(config_file: Path, tmp_path: Path) -> None:
    status = main(
        ["eval", "--config", str(config_file), "--methods", "dujad", "--checkpoint", str(tmp_path / "none")]
    )

    assert status == 2


def test_gen_requires_an_output_directory(config_file: Path) -> None:
    with pytest.raises(SystemExit) as excinfo:
        main(["gen", "--config", str(config_file)])

    assert excinfo.value.code == 2


def test_gen_writes_one_dataset_per_ap_count(config_file: Path, tmp_path: Path) -> None:
    assert main(["gen", "--config", str(config_file), "--out", str(tmp_path / "data")]) == 0

    assert (tmp_path / "data" / "dataset_P2.npz").is_file()


def test_train_then_evaluate_the_trained_detector(config_file: Path, tmp_path: Path) -> None:
    checkpoints = tmp_path / "checkpoints"
    out = tmp_path / "results.csv"

    assert main(["train", "--config", str(config_file), "--checkpoint", str(checkpoints)]) == 0
    assert checkpoint_path(checkpoints, 2).is_file()

    status = main(
        [
            "eval",
            "--config",
            str(config_file),
            "--checkpoint",
            str(checkpoints),
            "--methods",
            "baseline4_10it,dujad",
            "--out",
            str(out),
        ]
    )

    assert status == 0
    assert set(read_results_csv(out)["method"]) == {"baseline4_10it", "dujad"}


def test_script_entry_point_delegates_to_the_cli(monkeypatch: pytest.MonkeyPatch) -> None:
    import app

    loaded = []
    monkeypatch.setattr(app, "load_dotenv", lambda: loaded.append(True))

    assert app.main(["verify", "--checks", "metrics"]) == 0
    assert loaded == [True]
