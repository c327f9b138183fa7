"""
Waveform measurements: average supply power, 50% propagation delay,
steady-state output levels, noise margin and logic grading.

All readers take the plan built by :func:`picospice.cells.standard_stimulus`
(or any object with the same attributes). Levels are read at the end of each
pattern interval, by linear interpolation on the waveform samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import Waveform, supply_current

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

VOH_FRAC = 0.55
VOL_FRAC = 0.15


class MeasurementError(ValueError):
    pass


def average_power(waveform: Waveform, sources, window=None) -> float:
    """Mean of sum(V_src * I_delivered) over ``window``, trapezoidal rule.

    ``window`` defaults to the full waveform span. Samples inside the window
    are used as-is; the window edges are interpolated.
    """
    if isinstance(sources, str):
        sources = [sources]
    t = waveform.times
    t0, t1 = window if window is not None else (t[0], t[-1])
    if not t1 > t0:
        raise MeasurementError(f"empty power window [{t0}, {t1}]")
    if t0 < t[0] - 1e-18 or t1 > t[-1] * (1 + 1e-12):
        raise MeasurementError("power window extends past the waveform")
    p = np.zeros_like(t)
    for src in sources:
        p = p + waveform.source_voltage(src) * supply_current(waveform, src)
    inside = (t > t0) & (t < t1)
    ts = np.concatenate([[t0], t[inside], [t1]])
    ps = np.concatenate([[np.interp(t0, t, p)], p[inside], [np.interp(t1, t, p)]])
    return float(_trapezoid(ps, ts) / (t1 - t0))


def _crossings(t, y, level, t_from, t_to, rising):
    """Times where y crosses ``level`` in the given direction within [t_from, t_to]."""
    lo = max(np.searchsorted(t, t_from, side="right") - 1, 0)
    hi = min(np.searchsorted(t, t_to, side="right"), len(t) - 1)
    out = []
    for k in range(lo, hi):
        y0, y1 = y[k], y[k + 1]
        if rising and y0 < level <= y1 or not rising and y0 > level >= y1:
            tc = t[k] + (level - y0) * (t[k + 1] - t[k]) / (y1 - y0)
            if t_from <= tc <= t_to:
                out.append(tc)
    return out


@dataclass
class EdgeDelay:
    interval: int
    input: str
    output: str
    direction: str  # rise | fall (output)
    delay: float | None  # None = output never crossed 50%


def propagation_delay(waveform: Waveform, input_node: str, output_node: str, plan):
    """Delays from ``input_node`` edges to the output transitions they cause.

    Returns ``(worst, edges)``; ``worst`` is the largest measured delay or
    None when no transition was caused by this input. Edges where the output
    never crosses 50% of vdd are listed with ``delay=None``.
    """
    t = waveform.times
    vin = waveform.v(input_node)
    vout = waveform.v(output_node)
    half = 0.5 * plan.vdd
    edges = []
    ivs = plan.intervals
    for prev, iv in zip(ivs, ivs[1:]):
        if input_node not in iv.changed:
            continue
        before, after = prev.expected[output_node], iv.expected[output_node]
        if before == after:
            continue
        in_rising = iv.inputs[plan.input_nodes.index(input_node)] == 1
        tin = _crossings(t, vin, half, iv.t_start, iv.t_end, in_rising)
        tout = _crossings(t, vout, half, iv.t_start, iv.t_end, after == 1)
        delay = tout[0] - tin[0] if tin and tout else None
        edges.append(EdgeDelay(iv.index, input_node, output_node, "rise" if after else "fall", delay))
    measured = [e.delay for e in edges if e.delay is not None]
    return (max(measured) if measured else None), edges


def _read(waveform: Waveform, node: str, time: float) -> float:
    return float(np.interp(time, waveform.times, waveform.v(node)))


def read_point(plan, interval) -> float:
    return interval.t_end


def output_levels(waveform: Waveform, output_node: str, plan):
    """(min_high, max_low) over expected-high / expected-low intervals.

    Either value is None when the plan has no interval of that kind.
    """
    highs, lows = [], []
    for iv in plan.intervals:
        v = _read(waveform, output_node, read_point(plan, iv))
        (highs if iv.expected[output_node] else lows).append(v)
    return (min(highs) if highs else None), (max(lows) if lows else None)


def noise_margins(min_high: float, max_low: float, vdd: float | None = None) -> float:
    """Separation between the worst delivered high and the worst delivered low."""
    return min_high - max_low


@dataclass
class GradeFailure:
    interval: int
    output: str
    inputs: tuple
    expected: int
    voltage: float
    time: float


@dataclass
class Grade:
    passed: bool
    checked: int
    failures: list = field(default_factory=list)
    patterns: list = field(default_factory=list)  # (interval, inputs, {out: (expected, V, ok)})


def grade_logic(waveform: Waveform, plan, voh_frac: float = VOH_FRAC, vol_frac: float = VOL_FRAC) -> Grade:
    """Check every interval's read point against the logic thresholds."""
    vhi, vlo = voh_frac * plan.vdd, vol_frac * plan.vdd
    failures, rows = [], []
    checked = 0
    for iv in plan.intervals:
        tr = read_point(plan, iv)
        row = {}
        for out, bit in iv.expected.items():
            v = _read(waveform, out, tr)
            ok = v >= vhi if bit else v <= vlo
            checked += 1
            row[out] = (bit, v, ok)
            if not ok:
                failures.append(GradeFailure(iv.index, out, iv.inputs, bit, v, tr))
        rows.append((iv.index, iv.inputs, row))
    return Grade(not failures, checked, failures, rows)


# ---------------------------------------------------------------------------
# report

@dataclass
class OutputReport:
    node: str
    worst_prop_delay: float | None
    min_high_level: float | None
    max_low_level: float | None
    noise_margin: float | None
    edges: list = field(default_factory=list)


@dataclass
class MeasurementReport:
    cell: str
    vdd: float
    avg_power: float
    outputs: dict
    grade: Grade
    stimulus: dict
    window: tuple
    model_card: str = "generic035"

    @property
    def passed(self) -> bool:
        return self.grade.passed

    def to_dict(self) -> dict:
        outs = {}
        for name, o in self.outputs.items():
            outs[name] = {
                "worst_prop_delay_s": o.worst_prop_delay,
                "min_high_V": o.min_high_level,
                "max_low_V": o.max_low_level,
                "noise_margin_V": o.noise_margin,
                "edges": [asdict(e) for e in o.edges],
            }
        return {
            "schema": 1,
            "cell": self.cell,
            "vdd": self.vdd,
            "model_card": self.model_card,
            "avg_power_W": self.avg_power,
            "power_window_s": list(self.window),
            "stimulus": self.stimulus,
            "outputs": outs,
            "logic": {
                "passed": self.grade.passed,
                "checked": self.grade.checked,
                "failures": [asdict(f) for f in self.grade.failures],
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_jsonable)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(type(x))


def measure(waveform: Waveform, plan, supplies=("vdd",), voh_frac=VOH_FRAC, vol_frac=VOL_FRAC,
            model_card="generic035") -> MeasurementReport:
    """Full report for one simulated cell."""
    window = plan.power_window()
    power = average_power(waveform, list(supplies), window)
    outputs = {}
    for out in plan.output_nodes:
        edges, worst = [], None
        for inp in plan.input_nodes:
            w, e = propagation_delay(waveform, inp, out, plan)
            edges.extend(e)
            if w is not None:
                worst = w if worst is None else max(worst, w)
        hi, lo = output_levels(waveform, out, plan)
        nm = noise_margins(hi, lo, plan.vdd) if hi is not None and lo is not None else None
        outputs[out] = OutputReport(out, worst, hi, lo, nm, edges)
    grade = grade_logic(waveform, plan, voh_frac, vol_frac)
    return MeasurementReport(plan.cell, plan.vdd, power, outputs, grade, plan.describe(), window, model_card)


def fmt(x, scale=1.0, digits=4):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x * scale:.{digits}g}"
