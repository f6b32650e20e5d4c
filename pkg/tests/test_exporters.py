from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from dujad.core.exporters import (
    ExportError,
    checkpoint_path,
    export_csv,
    load_checkpoint,
    load_dataset,
    read_results_csv,
    results_frame,
    save_checkpoint,
    save_dataset,
    summary_path_for,
    write_solver_trace,
)
from dujad.core.fbs import TraceRecord
from dujad.core.scenario import design_pilots, generate_trial, trial_rng
from dujad.schemas import (
    RESULT_COLUMNS,
    AudParams,
    Checkpoint,
    LayerParams,
    ResultRow,
    ScenarioConfig,
    UnfoldedParams,
)


def _rows() -> list[ResultRow]:
    return [
        ResultRow(method="baseline1", P=4, trial=0, uder=0.1, aser=1 / 3, iterations=12),
        ResultRow(method="dujad", P=4, trial=0, uder=0.0, aser=0.0, iterations=10, wall_time=0.25),
    ]


def _checkpoint(num_aps: int = 4) -> Checkpoint:
    return Checkpoint(
        num_aps=num_aps,
        scenario=ScenarioConfig(num_aps=num_aps),
        network=UnfoldedParams(layers=[LayerParams(tau_h=0.1, tau_x=0.2, lam=0.9, nu=0.3)] * 2),
        aud=AudParams(omega_h=1.5, omega_x=0.2, t_th=3.0, l_bar=0.5),
        validation_loss_fbs=1.25,
    )


def test_results_csv_has_fixed_header_and_nine_digits(tmp_path: Path) -> None:
    path = export_csv(_rows(), tmp_path / "nested" / "results.csv")

    lines = path.read_text(encoding="utf-8").splitlines()

    assert lines[0] == ",".join(RESULT_COLUMNS)
    assert lines[1] == "baseline1,4,0,0.1,0.333333333,12,0"
    assert lines[2] == "dujad,4,0,0,0,10,0.25"


def test_results_csv_can_be_read_back(tmp_path: Path) -> None:
    path = export_csv(results_frame(_rows()), tmp_path / "results.csv")

    frame = read_results_csv(path)

    assert list(frame["method"]) == ["baseline1", "dujad"]
    assert frame.loc[0, "aser"] == pytest.approx(1 / 3, rel=1e-8)


def test_results_csv_requires_all_columns(tmp_path: Path) -> None:
    with pytest.raises(ValueError, match="wall_time"):
        export_csv(pd.DataFrame({"method": ["dujad"], "P": [4]}), tmp_path / "results.csv")


def test_reading_a_foreign_table_fails(tmp_path: Path) -> None:
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n", encoding="utf-8")

    with pytest.raises(ExportError) as excinfo:
        read_results_csv(path)

    assert excinfo.value.path == path


def test_unwritable_destination_raises_export_error(tmp_path: Path) -> None:
    blocker = tmp_path / "blocker"
    blocker.write_text("", encoding="utf-8")

    with pytest.raises(ExportError):
        export_csv(_rows(), blocker / "results.csv")


def test_summary_path_sits_next_to_results() -> None:
    assert summary_path_for(Path("out/desk.csv")) == Path("out/desk.summary.csv")


def test_solver_trace_columns(tmp_path: Path) -> None:
    path = write_solver_trace([TraceRecord(1, 2.5, 0.5, 0.01), TraceRecord(2, 2.0, 0.4, 0.02)], tmp_path / "trace.csv")

    assert path.read_text(encoding="utf-8").splitlines() == ["iteration,f,g,step", "1,2.5,0.5,0.01", "2,2,0.4,0.02"]


def test_checkpoint_round_trip(tmp_path: Path) -> None:
    checkpoint = _checkpoint()

    path = save_checkpoint(checkpoint, tmp_path)

    assert path == checkpoint_path(tmp_path, 4)
    assert load_checkpoint(tmp_path, 4) == checkpoint


def test_missing_or_mismatched_checkpoints_are_rejected(tmp_path: Path) -> None:
    with pytest.raises(ExportError, match="not found"):
        load_checkpoint(tmp_path, 8)

    save_checkpoint(_checkpoint(4), tmp_path)
    checkpoint_path(tmp_path, 4).rename(checkpoint_path(tmp_path, 8))
    with pytest.raises(ExportError, match="P=4"):
        load_checkpoint(tmp_path, 8)


def test_malformed_checkpoint_is_rejected(tmp_path: Path) -> None:
    checkpoint_path(tmp_path, 4).write_text('{"num_aps": 4}', encoding="utf-8")

    with pytest.raises(ExportError, match="malformed"):
        load_checkpoint(tmp_path, 4)


def test_dataset_round_trip_preserves_instances(tmp_path: Path) -> None:
    cfg = ScenarioConfig(num_ues=6, num_aps=2, antennas_per_ap=2, pilot_length=4, data_length=3, etf_iterations=10)
    pilots = design_pilots(cfg)
    instances = [generate_trial(cfg, pilots, trial_rng(0, 2, trial)) for trial in range(3)]

    loaded = load_dataset(save_dataset(instances, tmp_path / "dataset.npz"))

    assert len(loaded) == 3
    for original, restored in zip(instances, loaded):
        np.testing.assert_array_equal(restored.Y, original.Y)
        np.testing.assert_array_equal(restored.X_D, original.X_D)
        np.testing.assert_array_equal(restored.xi, original.xi)
        assert restored.antennas_per_ap == 2
        assert restored.qpsk_amplitude == pytest.approx(math.sqrt(0.5))


def test_dataset_layout_is_little_endian_complex(tmp_path: Path) -> None:
    cfg = ScenarioConfig(num_ues=6, num_aps=2, antennas_per_ap=2, pilot_length=4, data_length=3, etf_iterations=10)
    inst = generate_trial(cfg, design_pilots(cfg), trial_rng(0, 2, 0))

    path = save_dataset([inst], tmp_path / "dataset.npz")

    with np.load(path) as archive:
        assert archive["dims"].tolist() == [1, 6, 4, 2, 4, 3]
        assert archive["Y"].dtype == np.dtype("<c16")
        assert archive["xi"].dtype == np.dtype("<i8")


def test_empty_dataset_is_rejected(tmp_path: Path) -> None:
    with pytest.raises(ValueError):
        save_dataset([], tmp_path / "dataset.npz")
