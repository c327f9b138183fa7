import csv
import io
import json

import pytest

from picospice.bench import reference_rows, reference_values
from picospice.cli import main, parse_vdd_list, UsageError

PUBLISHED = {
    # (table, vdd): printed values, transcribed by hand
    ("table1", 3.3): {"power_uW": "500.727", "delay_ps": "14.466", "min_high_V": "2.05", "max_low_V": "0.084"},
    ("table1", 1.8): {"power_uW": "89.931", "delay_ps": "23.050", "min_high_V": "0.92", "max_low_V": "0.03400"},
    ("table1", 2.4): {"power_uW": "218.996", "delay_ps": "18.165", "min_high_V": "1.41", "max_low_V": "0.05418"},
    ("table2", 3.3): {"power_uW": "1104.8", "min_high_V": "2.5", "max_low_V": "0.69"},
    ("table2", 1.8): {"power_uW": "127.02", "min_high_V": "1.30", "max_low_V": "0.455"},
    ("table3", 3.3): {"power_uW": "581.542", "sum_delay_ps": "15.1311", "cout_delay_ps": "3.372",
                      "sum_min_high_V": "1.97", "sum_max_low_V": "0.24", "cout_min_high_V": "3.2",
                      "cout_max_low_V": "0.32"},
}


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_reference_data_golden():
    for (table, vdd), values in PUBLISHED.items():
        assert reference_values(table)[vdd] == values
    counts = {}
    for row in reference_rows():
        counts[row["table"]] = counts.get(row["table"], 0) + 1
    assert counts == {"table1": 28, "table2": 21, "table3": 7}


@pytest.mark.parametrize("text, expected", [
    ("3.3", [3.3]), ("3.3,2.4,1.8", [3.3, 2.4, 1.8]),
    ("1.8:3.3:0.3", [1.8, 2.1, 2.4, 2.7, 3.0, 3.3]), ("3.3:1.8:0.5", [3.3, 2.8, 2.3, 1.8]),
])
def test_vdd_lists(text, expected):
    assert parse_vdd_list(text) == expected


@pytest.mark.parametrize("text", ["1.8:3.3:0", "1.8:3.3", "abc", "0.5", "1.8:6:1"])
def test_vdd_list_errors(text):
    with pytest.raises(UsageError):
        parse_vdd_list(text)


def test_run_xnor3t(capsys):
    assert main(["run", "--cell", "xnor3t", "--vdd", "3.3"]) == 0
    out = capsys.readouterr().out
    for word in ("average power", "worst delay", "min high level", "max low level", "logic PASS"):
        assert word in out


def test_run_adder_reports_sum_and_carry(capsys):
    code = main(["run", "--cell", "adder8t", "--vdd", "3.3", "--format", "json"])
    report = json.loads(capsys.readouterr().out)
    assert report["schema"] == 1
    assert set(report["outputs"]) == {"sum", "cout"}
    for out in report["outputs"].values():
        assert {"worst_prop_delay_s", "min_high_V", "max_low_V"} <= set(out)
    assert code == (0 if report["logic"]["passed"] else 1)


def test_run_broken_deck_exit_3(tmp_path, capsys):
    deck = tmp_path / "broken.sp"
    deck.write_text("broken\nvdd vdd 0 3.3\nm1 out a\n.end\n")
    assert main(["run", "--deck", str(deck)]) == 3
    assert "line 3" in capsys.readouterr().err


def test_run_user_deck_with_own_sources(tmp_path, capsys):
    deck = tmp_path / "inv.sp"
    deck.write_text("inv\nvdd vdd 0 3.3\nva a 0 pulse(0 3.3 1n 100p 100p 2n 4n)\n"
                    "m1 out a vdd vdd p w=2u l=0.35u\nm2 out a 0 0 n w=1u l=0.35u\nc1 out 0 10f\n"
                    ".model n nmos\n.model p pmos\n.end\n")
    wave = tmp_path / "wave.csv"
    assert main(["run", "--deck", str(deck), "--tstop", "8n", "--waveform", str(wave)]) == 0
    header = wave.read_text().splitlines()[0]
    assert header == "time,vdd,a,out,i(vdd),i(va)"


def test_run_deck_driven_by_cell_stimulus(tmp_path, capsys):
    from picospice.cells import deck_text
    deck = tmp_path / "x.sp"
    deck.write_text(deck_text("xnor3t"))
    assert main(["run", "--deck", str(deck), "--cell", "xnor3t", "--vdd", "2.4", "--format", "csv"]) == 0
    from_deck = _rows(capsys.readouterr().out)
    assert main(["run", "--cell", "xnor3t", "--vdd", "2.4", "--format", "csv"]) == 0
    assert _rows(capsys.readouterr().out) == from_deck


def test_usage_errors_exit_3(capsys):
    assert main(["run"]) == 3
    assert main(["run", "--cell", "nope"]) == 3
    assert main(["sweep", "--cell", "xnor3t", "--vdd", "1:2:0"]) == 3
    assert main(["diag", "--cell", "xnor3t", "--pattern", "101"]) == 3
    assert main(["frobnicate"]) == 3


def test_convergence_failure_exit_2(tmp_path, capsys):
    deck = tmp_path / "short.sp"
    deck.write_text("short\nv1 a 0 1\nv2 a 0 2\nc1 a 0 1p\nvp p 0 pwl(0 0 1n 1)\n.end\n")
    assert main(["run", "--deck", str(deck)]) == 2


def test_sweep_with_reference(capsys):
    assert main(["sweep", "--cell", "xnor3t", "--vdd", "1.8:3.3:0.3", "--reference", "table1"]) == 0
    captured = capsys.readouterr()
    rows = _rows(captured.out)
    assert [r["vdd"] for r in rows] == ["3.3", "3", "2.7", "2.4", "2.1", "1.8"]
    assert list(rows[0])[:5] == ["vdd", "power_uW", "delay_ps", "min_high_V", "max_low_V"]
    assert rows[0]["ref_power_uW"] == "500.727"
    assert "power strictly decreasing" in captured.err


def test_sweep_xnorxor_reference_table2(capsys):
    assert main(["sweep", "--cell", "xnorxor5t", "--vdd", "3.3", "--reference", "auto"]) == 0
    (row,) = _rows(capsys.readouterr().out)
    assert (row["ref_power_uW"], row["ref_min_high_V"], row["ref_max_low_V"]) == ("1104.8", "2.5", "0.69")
    assert {"xnor_delay_ps", "xor_min_high_V"} <= set(row)


def test_sweep_single_point_has_no_trend(capsys):
    main(["sweep", "--cell", "xnor3t", "--vdd", "2.4"])
    captured = capsys.readouterr()
    assert len(_rows(captured.out)) == 1
    assert "trend" not in captured.err + captured.out


def test_sweep_row_equals_run_row(capsys):
    main(["sweep", "--cell", "xnor3t", "--vdd", "3.0,2.1"])
    sweep = {r["vdd"]: r for r in _rows(capsys.readouterr().out)}
    main(["run", "--cell", "xnor3t", "--vdd", "2.1", "--format", "csv"])
    (run,) = _rows(capsys.readouterr().out)
    assert sweep["2.1"] == run


def test_sweep_parallel_orders_by_vdd(capsys):
    main(["sweep", "--cell", "xnor3t", "--vdd", "1.8,3.3,2.4", "--jobs", "3"])
    par = _rows(capsys.readouterr().out)
    main(["sweep", "--cell", "xnor3t", "--vdd", "3.3,2.4,1.8"])
    assert par == _rows(capsys.readouterr().out)
    assert [r["vdd"] for r in par] == ["3.3", "2.4", "1.8"]


def test_sweep_json_and_out_file(tmp_path, capsys):
    out = tmp_path / "sweep.json"
    main(["sweep", "--cell", "xnor3t", "--vdd", "3.3,1.8", "--format", "json", "--out", str(out)])
    payload = json.loads(out.read_text())
    assert payload["schema"] == 1 and len(payload["rows"]) == 2
    assert payload["trend"] == {"power": "strictly decreasing", "delay": "strictly increasing"}


def test_env_var_defaults_and_flag_precedence(monkeypatch, capsys):
    monkeypatch.setenv("PICOSPICE_CELL", "xnor3t")
    monkeypatch.setenv("PICOSPICE_VDD", "2.4")
    monkeypatch.setenv("PICOSPICE_FORMAT", "csv")
    main(["run"])
    (row,) = _rows(capsys.readouterr().out)
    assert row["vdd"] == "2.4"
    main(["run", "--vdd", "3.3"])
    (row,) = _rows(capsys.readouterr().out)
    assert row["vdd"] == "3.3"


def test_verify_inverter_passes(capsys):
    assert main(["verify", "--cell", "inverter", "--vdd", "3.3"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_verify_threshold_override_forces_failure(capsys):
    assert main(["verify", "--cell", "xnor3t", "--vdd", "3.3", "--voh", "0.99"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_verify_adder_grades_every_pattern(capsys):
    code = main(["verify", "--cell", "adder8t", "--vdd", "3.3,2.4,1.8", "--format", "json"])
    payload = json.loads(capsys.readouterr().out)
    assert len(payload["patterns"]) == 8 * 3
    assert {p["inputs"] for p in payload["patterns"]} == {f"{i:03b}" for i in range(8)}
    failed = any(not o["pass"] for p in payload["patterns"] for k, o in p.items() if k in ("sum", "cout"))
    assert code == (1 if failed else 0)


def _diag(capsys, pattern):
    assert main(["diag", "--cell", "xnor3t", "--vdd", "3.3", "--pattern", pattern, "--format", "csv"]) == 0
    return {r["label"]: r for r in _rows(capsys.readouterr().out)}


def test_diag_ratioed_state(capsys):
    rows = _diag(capsys, "10")
    assert rows["P1"]["region"] in ("triode", "saturation") and float(rows["P1"]["id_A"]) > 0
    assert rows["N1"]["region"] == "triode" and rows["N1"]["ron_ohm"]
    assert rows["N2"]["region"] == "cutoff"


def test_diag_both_low(capsys):
    rows = _diag(capsys, "00")
    assert rows["N1"]["region"] == rows["N2"]["region"] == "cutoff"
    assert rows["P1"]["region"] != "cutoff"
    assert rows["N1"]["ron_ohm"] == "" and rows["N2"]["ron_ohm"] == ""
