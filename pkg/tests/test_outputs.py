import json
import math
from dataclasses import replace

import pytest

from aeborda.campaigns import NormFunctionRecord, PlotRow, TrialRecord, run_campaign
from aeborda.config import ExperimentConfig
from aeborda.errors import OutputError
from aeborda.outputs import (
    campaign_metadata,
    emit_outputs,
    plot_rows_from_results,
    read_metadata,
    read_table,
    write_table,
)

RECORDS = [
    TrialRecord(0, "ae-borda", 25, 0.1 + 0.2, 1e-17, math.nan, 0.0),
    TrialRecord(1, "ucb-borda", 50, 2.0 / 3.0, 0.0, -1.5, 0.0),
]


class TestTables:
    def test_round_trip_is_exact(self, tmp_path):
        path = write_table(tmp_path / "r.csv", TrialRecord, RECORDS)
        back = read_table(path, TrialRecord)
        assert [repr(r) for r in back] == [repr(r) for r in RECORDS]

    def test_header_only_when_empty(self, tmp_path):
        path = write_table(tmp_path / "r.csv", TrialRecord, [])
        assert path.read_text() == "seed,strategy,t,max_suboptimality,median_suboptimality,acquisition,wall_time\n"
        assert read_table(path, TrialRecord) == []

    def test_wrong_header(self, tmp_path):
        path = write_table(tmp_path / "r.csv", PlotRow, [])
        with pytest.raises(OutputError):
            read_table(path, TrialRecord)

    def test_unwritable(self, tmp_path):
        with pytest.raises(OutputError):
            write_table(tmp_path / "missing" / "r.csv", TrialRecord, RECORDS)


class TestPlotRows:
    def test_long_format(self):
        rows = plot_rows_from_results("simulate", RECORDS)
        assert rows[0] == PlotRow(25, "max_suboptimality", "ae-borda", 0, RECORDS[0].max_suboptimality)
        assert rows[1].metric == "median_suboptimality" and len(rows) == 4

    def test_unknown_experiment(self):
        with pytest.raises(ValueError):
            plot_rows_from_results("norm-study", [])


@pytest.fixture(scope="module")
def result():
    config = ExperimentConfig(seeds=[0], n0=3, T=8, eval_every=5, context_grid_points=5,
                              action_grid_points=5, reward_features=16, info_gain_probes=8,
                              strategies=["ae-borda"]).validate()
    return run_campaign(config)


class TestEmit:
    def test_files(self, result, tmp_path):
        written = emit_outputs(result, tmp_path / "out")
        assert sorted(p.name for p in written.values()) == [
            "diagnostics.csv", "metadata.json", "plot_data.csv", "results.csv"]

    def test_metadata_schema(self, result, tmp_path):
        emit_outputs(result, tmp_path)
        meta = read_metadata(tmp_path / "metadata.json")
        assert set(meta) == {"experiment", "library_version", "seeds", "config", "columns", "tables",
                             "partial", "failures"}
        assert meta["experiment"] == "simulate" and meta["seeds"] == [0]
        assert meta["columns"][0] == "seed" and meta["partial"] is False
        assert meta["config"] == result.config.to_dict()
        assert meta == campaign_metadata(result)

    def test_rerun_is_byte_identical(self, result, tmp_path):
        emit_outputs(result, tmp_path / "a")
        emit_outputs(run_campaign(result.config), tmp_path / "b")
        for name in ("results.csv", "diagnostics.csv", "plot_data.csv", "metadata.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_non_finite_metadata(self, result):
        failed = replace(result, failures=[{"seed": 0, "strategy": "x", "error": "e", "value": math.inf}])
        text = json.dumps(campaign_metadata(failed), allow_nan=False)
        assert '"inf"' in text

    def test_bad_metadata(self, tmp_path):
        (tmp_path / "metadata.json").write_text("{")
        with pytest.raises(OutputError):
            read_metadata(tmp_path / "metadata.json")
        with pytest.raises(OutputError):
            read_metadata(tmp_path / "absent.json")


def test_function_table_round_trip(tmp_path):
    rows = [NormFunctionRecord(0, 1, 1, 0, 123, 4.5, 3.25)]
    assert read_table(write_table(tmp_path / "f.csv", NormFunctionRecord, rows), NormFunctionRecord) == rows
