"""
Cell testbench: build a cell, drive it with the standard stimulus, simulate
and measure. Also holds the bundled published reference values and the
sweep-table layout shared by the CLI and the test suite.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from importlib import resources

from .cells import OUTPUTS, CellSpec, build_cell, standard_stimulus
from .engine import SimConfig, Waveform, transient
from .measure import VOH_FRAC, VOL_FRAC, MeasurementReport, fmt, measure

BASE_COLUMNS = ("vdd", "power_uW", "delay_ps", "min_high_V", "max_low_V")
REFERENCE_TABLES = {"table1": "xnor3t", "table2": "xnorxor5t", "table3": "adder8t"}


@dataclass
class BenchResult:
    spec: CellSpec
    waveform: Waveform
    plan: object
    report: MeasurementReport


def simulate_cell(spec: CellSpec, period: float = 10e-9, rise: float = 100e-12,
                  config: SimConfig | None = None, voh_frac: float = VOH_FRAC,
                  vol_frac: float = VOL_FRAC) -> BenchResult:
    """Transient run of a built-in cell over two tours of the standard stimulus."""
    sources, plan = standard_stimulus(spec.name, spec.vdd, period=period, rise=rise)
    net = build_cell(spec, sources)
    cfg = replace(config or SimConfig(), tstop=plan.tstop)
    wf = transient(net, cfg)
    report = measure(wf, plan, ("vdd",), voh_frac, vol_frac, model_card=spec.card)
    return BenchResult(spec, wf, plan, report)


# ---------------------------------------------------------------------------
# published reference values

def reference_rows() -> list[dict]:
    """Rows of the bundled reference table, values kept as printed strings."""
    text = resources.files("picospice").joinpath("data/reference.csv").read_text()
    return list(csv.DictReader(io.StringIO(text)))


def reference_values(table: str) -> dict[float, dict[str, str]]:
    """{vdd: {quantity: printed value}} for one of table1/table2/table3."""
    if table not in REFERENCE_TABLES:
        raise KeyError(f"unknown reference table {table!r}; choose from {', '.join(REFERENCE_TABLES)}")
    out: dict[float, dict[str, str]] = {}
    for row in reference_rows():
        if row["table"] == table:
            out.setdefault(float(row["vdd"]), {})[row["quantity"]] = row["value"]
    return out


def reference_quantities(table: str) -> list[str]:
    seen = []
    for row in reference_rows():
        if row["table"] == table and row["quantity"] not in seen:
            seen.append(row["quantity"])
    return seen


# ---------------------------------------------------------------------------
# sweep table

def sweep_columns(cell: str, reference: str | None = None) -> list[str]:
    """Column names of a sweep table.

    The base columns summarize all outputs (worst delay, lowest high, highest
    low). Cells with more than one output get per-output column triples.
    """
    cols = list(BASE_COLUMNS)
    outs = OUTPUTS[cell]
    if len(outs) > 1:
        for out in outs:
            cols += [f"{out}_delay_ps", f"{out}_min_high_V", f"{out}_max_low_V"]
    cols.append("logic_pass")
    if reference:
        cols += [f"ref_{q}" for q in reference_quantities(reference)]
    return cols


def _worst(values, pick):
    values = [v for v in values if v is not None]
    return pick(values) if values else None


def sweep_row(report: MeasurementReport, reference: str | None = None) -> dict[str, str]:
    """One formatted table row; absent quantities are empty strings."""
    outs = list(report.outputs.values())
    row = {
        "vdd": f"{report.vdd:g}",
        "power_uW": fmt(report.avg_power, 1e6, 7),
        "delay_ps": fmt(_worst([o.worst_prop_delay for o in outs], max), 1e12, 7),
        "min_high_V": fmt(_worst([o.min_high_level for o in outs], min), 1, 6),
        "max_low_V": fmt(_worst([o.max_low_level for o in outs], max), 1, 6),
    }
    if len(outs) > 1:
        for o in outs:
            row[f"{o.node}_delay_ps"] = fmt(o.worst_prop_delay, 1e12, 7)
            row[f"{o.node}_min_high_V"] = fmt(o.min_high_level, 1, 6)
            row[f"{o.node}_max_low_V"] = fmt(o.max_low_level, 1, 6)
    row["logic_pass"] = "yes" if report.passed else "no"
    if reference:
        ref = reference_values(reference)
        vals = next((v for k, v in ref.items() if abs(k - report.vdd) < 1e-9), {})
        for q in reference_quantities(reference):
            row[f"ref_{q}"] = vals.get(q, "")
    return row


def failed_row(cell: str, vdd: float, reason: str, reference: str | None = None) -> dict[str, str]:
    row = {c: "" for c in sweep_columns(cell, reference)}
    row["vdd"] = f"{vdd:g}"
    row["logic_pass"] = f"error: {reason}"
    if reference:
        vals = next((v for k, v in reference_values(reference).items() if abs(k - vdd) < 1e-9), {})
        for q, v in vals.items():
            row[f"ref_{q}"] = v
    return row


def trend(vdds, powers, delays) -> dict | None:
    """Monotonicity of power and delay as vdd decreases; None for fewer than 2 points."""
    pts = sorted(zip(vdds, powers, delays), reverse=True)
    if len(pts) < 2:
        return None

    def direction(values):
        if any(v is None for v in values):
            return "incomplete"
        pairs = list(zip(values, values[1:]))
        if all(b < a for a, b in pairs):
            return "strictly decreasing"
        if all(b > a for a, b in pairs):
            return "strictly increasing"
        return "not monotone"

    return {"power": direction([p[1] for p in pts]), "delay": direction([p[2] for p in pts])}


def worst_delay(report: MeasurementReport):
    return _worst([o.worst_prop_delay for o in report.outputs.values()], max)
