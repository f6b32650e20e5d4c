from __future__ import annotations

from pathlib import Path

import pytest

from dujad.core.config import (
    ConfigurationError,
    build_experiment_config,
    load_experiment_config,
    worker_count,
)

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "experiment.env"
    path.write_text(text, encoding="utf-8")
    return path


def test_desk_profile_loads() -> None:
    cfg = load_experiment_config(CONFIG_DIR / "desk.env")

    assert cfg.scenario.num_ues == 50
    assert cfg.scenario.activity_prob == 0.2
    assert cfg.p_sweep == [4, 8, 12]
    assert cfg.methods == ["baseline1", "baseline4_200it", "baseline4_10it", "dujad"]
    assert cfg.objective.max_iter == 200
    assert cfg.training.seed == 1
    assert cfg.checkpoint == Path("checkpoints/desk")
    assert cfg.training.step_normalisation == "spectral"
    assert cfg.scenario.pilot_refine_iterations == 600


def test_full_profile_loads() -> None:
    cfg = load_experiment_config(CONFIG_DIR / "full.env")

    assert cfg.scenario.activity_prob == 0.2
    assert cfg.training.num_layers == 10


def test_sections_are_split_by_prefix(tmp_path: Path) -> None:
    path = _write(
        tmp_path,
        "N=12\nR_P=4\nR_D=6\nFBS_MU_H=0.7\nFBS_STEP_RULE=fixed\nTRAIN_EPOCHS=3\nP_SWEEP=2,3\nTRIALS=9\n",
    )

    cfg = load_experiment_config(path)

    assert (cfg.scenario.num_ues, cfg.scenario.pilot_length, cfg.scenario.data_length) == (12, 4, 6)
    assert cfg.objective.mu_h == 0.7
    assert cfg.objective.step_rule == "fixed"
    assert cfg.training.epochs == 3
    assert cfg.p_sweep == [2, 3]
    assert cfg.trials == 9


def test_trace_directory_and_pilot_keys_are_read(tmp_path: Path) -> None:
    path = _write(tmp_path, "TRACE_DIR=traces\nPILOT_REFINE_ITERATIONS=0\nTRAIN_STEP_NORMALISATION=none\n")

    cfg = load_experiment_config(path)

    assert cfg.trace_dir == Path("traces")
    assert cfg.scenario.pilot_refine_iterations == 0
    assert cfg.training.step_normalisation == "none"


def test_overrides_win_and_none_is_ignored(tmp_path: Path) -> None:
    path = _write(tmp_path, "TRIALS=9\nSEED=1\n")

    cfg = load_experiment_config(path, overrides={"trials": 2, "seed": None, "output": tmp_path / "out.csv"})

    assert cfg.trials == 2
    assert cfg.seed == 1
    assert cfg.output == tmp_path / "out.csv"


@pytest.mark.parametrize(
    ("values", "section"),
    [
        ({"P_a": "1.5"}, "scenario"),
        ({"FBS_MAX_ITER": "0"}, "fbs"),
        ({"FBS_UNKNOWN": "1"}, "fbs"),
        ({"TRAIN_GRADIENT": "adam"}, "train"),
        ({"TRAIN_STEP_NORMALISATION": "learned"}, "train"),
        ({"METHODS": "baseline2"}, "experiment"),
    ],
)
def test_invalid_values_name_their_section(values: dict, section: str) -> None:
    with pytest.raises(ConfigurationError, match=section):
        build_experiment_config(values)


def test_missing_file_is_reported(tmp_path: Path) -> None:
    with pytest.raises(ConfigurationError, match="not found"):
        load_experiment_config(tmp_path / "missing.env")


def test_worker_count_reads_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("DUJAD_WORKERS", raising=False)
    assert worker_count() == 1

    monkeypatch.setenv("DUJAD_WORKERS", "3")
    assert worker_count() == 3


@pytest.mark.parametrize("raw", ["0", "many"])
def test_worker_count_rejects_invalid_values(monkeypatch: pytest.MonkeyPatch, raw: str) -> None:
    monkeypatch.setenv("DUJAD_WORKERS", raw)

    with pytest.raises(ConfigurationError):
        worker_count()
