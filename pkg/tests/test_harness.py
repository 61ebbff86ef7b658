import csv
import io
import json

import pytest

from emskv.config import CompressionConfig
from emskv.harness import CSV_COLUMNS, SCHEMA_VERSION, emit_report, report_to_csv, report_to_json, run_experiment
from emskv.policies import EMSPolicy, FullPolicy, H2OPolicy, make_policy
from emskv.synth import gen_synthetic
from emskv.trace import load_trace

from data.regen_golden import golden_report


@pytest.fixture(scope="module")
def trace():
    return gen_synthetic("random", 21, 48, heads=2, dim=8, decode_steps=12)


CFG = CompressionConfig(n_budget=16, l_win=4)


class TestRunExperiment:
    def test_full_policy_has_zero_error(self, trace):
        r = run_experiment(trace, [FullPolicy()], CFG)
        for h in r.policy("full").heads:
            assert h.l2_error == [0.0] * 12 and h.cos_error == [0.0] * 12
            assert all(h.argmax_match) and all(h.ref_argmax_retained)

    def test_errors_nonnegative_and_series_lengths(self, trace):
        r = run_experiment(trace, [make_policy(p) for p in ("streaming", "h2o", "snapkv", "ems")], CFG)
        for p in r.policies:
            for h in p.heads:
                assert min(h.l2_error) >= 0 and min(h.cos_error) >= 0
                assert len(h.stored_entries) == len(h.bytes_stored) == 13

    def test_bytes_reproducible_from_state(self, trace):
        r = run_experiment(trace, [EMSPolicy()], CFG)
        h = r.policy("ems").heads[0]
        # 16 stored entries with head_dim 8; the LUT term is what remains
        for stored, nbytes in zip(h.stored_entries, h.bytes_stored):
            lut = nbytes // 4 - (2 * stored * 8 + 4 * stored)
            assert stored == 16 and 0 <= lut <= CFG.lut_capacity

    def test_config_and_meta_echoed(self, trace):
        r = run_experiment(trace, [], CFG, meta={"seed": 21})
        d = r.to_dict()
        assert d["schema_version"] == SCHEMA_VERSION
        assert d["config"] == CFG.to_dict() and d["meta"] == {"seed": 21}

    def test_empty_policy_list(self, trace, tmp_path):
        r = run_experiment(trace, [], CFG)
        emit_report(r, tmp_path / "r.json")
        emit_report(r, tmp_path / "r.csv", "csv")
        assert json.loads((tmp_path / "r.json").read_text())["policies"] == []
        assert (tmp_path / "r.csv").read_text().strip() == ",".join(CSV_COLUMNS)

    def test_deterministic(self, trace):
        ps = [EMSPolicy(), H2OPolicy()]
        assert report_to_json(run_experiment(trace, ps, CFG)) == report_to_json(run_experiment(trace, ps, CFG))

    def test_override_changing_window_reruns_prefill(self, trace):
        r = run_experiment(trace, [EMSPolicy(overrides={"l_win": 8}, label="wide")], CFG)
        assert r.policy("wide").heads[0].stored_entries[0] == 16

    def test_full_cache_retains_needle(self):
        t = gen_synthetic("needle", 4, 512, dim=32, decode_steps=4)
        r = run_experiment(t, [FullPolicy()], CompressionConfig(n_budget=16, l_win=4), analyze=False)
        assert r.policy("full").aggregate()["needle_retained"] is True


class TestEmit:
    def test_json_and_csv_agree(self, trace):
        r = run_experiment(trace, [EMSPolicy(), H2OPolicy()], CFG)
        doc = json.loads(report_to_json(r))
        rows = list(csv.DictReader(io.StringIO(report_to_csv(r))))
        assert list(rows[0]) == CSV_COLUMNS
        by_key = {(row["policy"], row["head"]): row for row in rows}
        for p in doc["policies"]:
            for h in p["heads"]:
                row = by_key[(p["policy"], str(h["head"]))]
                for col in ("mean_l2_error", "max_l2_error", "mean_cos_error", "argmax_match_rate"):
                    assert float(row[col]) == pytest.approx(h["summary"][col], rel=1e-15)
                assert int(row["final_bytes"]) == h["summary"]["final_bytes"]
            assert float(by_key[(p["policy"], "all")]["mean_l2_error"]) == pytest.approx(p["aggregate"]["mean_l2_error"])

    def test_unknown_format(self, trace, tmp_path):
        with pytest.raises(ValueError):
            emit_report(run_experiment(trace, [], CFG), tmp_path / "x", "xml")

    def test_io_error_surfaces(self, trace, tmp_path):
        with pytest.raises(OSError):
            emit_report(run_experiment(trace, [], CFG), tmp_path / "missing" / "r.json")

    def test_golden_report_is_frozen(self, data_dir):
        expected = (data_dir / "golden_report.json").read_text()
        assert report_to_json(golden_report(load_trace(data_dir / "golden.kvtr"))) == expected
