"""
Command line front end.

    picospice run    --cell xnor3t --vdd 3.3
    picospice sweep  --cell xnor3t --vdd 1.8:3.3:0.3 --reference table1
    picospice verify --cell adder8t --vdd 3.3,2.4,1.8
    picospice diag   --cell xnor3t --vdd 3.3 --pattern 10

Every flag can also be given as an environment variable ``PICOSPICE_<FLAG>``
(dashes become underscores, e.g. ``PICOSPICE_VDD=2.4``); flags on the command
line win.

Exit codes: 0 success, 1 logic grading failure, 2 convergence failure,
3 usage or deck error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from decimal import Decimal, InvalidOperation

from . import device
from .bench import (REFERENCE_TABLES, failed_row, reference_values, simulate_cell, sweep_columns,
                    sweep_row, trend, worst_delay)
from .cells import (CELL_NAMES, INPUTS, XNOR3T_LABELS, CellError, CellSpec, build_cell,
                    standard_stimulus)
from .engine import ConvergenceError, SimConfig, SimulationError, dc_operating_point, transient
from .measure import VOH_FRAC, VOL_FRAC, average_power, fmt, measure
from .netlist import GROUND, NetlistError, VSource, flatten, parse, parse_value, validate

EXIT_OK, EXIT_LOGIC, EXIT_CONVERGENCE, EXIT_USAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# argument helpers


def _number(text):
    """Float with optional SPICE suffix, so ``--period 10n`` works."""
    try:
        return parse_value(text)
    except (ValueError, NetlistError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None

def parse_vdd_list(text: str) -> list[float]:
    """``3.3``, ``3.3,2.4,1.8`` or ``start:stop:step`` (inclusive, either order)."""
    text = text.strip()
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise UsageError(f"vdd range must be start:stop:step, got {text!r}")
            start, stop, step = (Decimal(p) for p in parts)
            if step <= 0:
                raise UsageError("vdd step must be > 0")
            lo, hi = min(start, stop), max(start, stop)
            values, v = [], lo
            while v <= hi:
                values.append(float(v))
                v += step
            if start > stop:
                values.reverse()
        else:
            values = [float(Decimal(p)) for p in text.split(",") if p.strip()]
    except InvalidOperation:
        raise UsageError(f"bad vdd value in {text!r}") from None
    if not values:
        raise UsageError("no vdd values given")
    for v in values:
        if not 1.0 <= v <= 5.0:
            raise UsageError(f"vdd {v} outside [1.0, 5.0] V")
    return values


def parse_pattern(text: str, cell: str) -> tuple[int, ...]:
    bits = text.replace(",", "").replace(" ", "")
    if set(bits) - {"0", "1"} or len(bits) != len(INPUTS[cell]):
        raise UsageError(f"pattern for {cell} needs {len(INPUTS[cell])} bits "
                         f"({', '.join(INPUTS[cell])}), got {text!r}")
    return tuple(int(b) for b in bits)


def _env(name, default=None):
    return os.environ.get("PICOSPICE_" + name.upper().replace("-", "_"), default)


def _env_float(name, default=None):
    value = _env(name)
    if value is None:
        return default
    try:
        return parse_value(value)
    except (ValueError, NetlistError):
        raise UsageError(f"PICOSPICE_{name.upper()} must be a number, got {value!r}") from None


def _add_common(p: argparse.ArgumentParser, *, deck=False, reference=False, fmt_default="text"):
    p.add_argument("--cell", choices=CELL_NAMES, default=_env("cell"), help="built-in cell")
    if deck:
        p.add_argument("--deck", default=_env("deck"), help="netlist deck file")
    p.add_argument("--vdd", default=_env("vdd", "3.3"),
                   help="supply: value, comma list or start:stop:step (default 3.3)")
    p.add_argument("--card", choices=sorted(device.CARDS), default=_env("card", "generic035"))
    p.add_argument("--period", type=_number, default=_env_float("period", 10e-9),
                   help="seconds per input pattern (default 10e-9)")
    p.add_argument("--rise", type=_number, default=_env_float("rise", 100e-12),
                   help="input rise/fall time in seconds (default 100e-12)")
    p.add_argument("--tstep", type=_number, default=_env_float("tstep"), help="transient step (s)")
    p.add_argument("--integrator", choices=("trapezoidal", "backward_euler"),
                   default=_env("integrator", "trapezoidal"))
    p.add_argument("--out", default=_env("out"), help="output file (default stdout)")
    formats = ("text", "csv", "json")
    p.add_argument("--format", choices=formats, default=_env("format", fmt_default))
    p.add_argument("--voh", type=float, default=_env_float("voh", VOH_FRAC),
                   help="high threshold as a fraction of vdd")
    p.add_argument("--vol", type=float, default=_env_float("vol", VOL_FRAC),
                   help="low threshold as a fraction of vdd")
    if reference:
        p.add_argument("--reference", choices=(*REFERENCE_TABLES, "auto"), default=_env("reference"),
                       help="append published values as ref_* columns")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="picospice", description="Transistor-level simulator for pass-transistor XNOR cells.")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="simulate one cell or deck at one vdd")
    _add_common(p, deck=True)
    p.add_argument("--waveform", default=_env("waveform"), help="write the waveform CSV here")
    p.add_argument("--tstop", type=_number, default=_env_float("tstop"),
                   help="end time for decks run without --cell")

    p = sub.add_parser("sweep", help="run a cell over a list of supply voltages")
    _add_common(p, reference=True, fmt_default="csv")
    p.add_argument("--jobs", type=int, default=int(_env("jobs", "1")), help="parallel sweep points")

    p = sub.add_parser("verify", help="grade logic levels at each vdd")
    _add_common(p)

    p = sub.add_parser("diag", help="DC operating point with per-device regions")
    _add_common(p)
    p.add_argument("--pattern", default=_env("pattern"), help="input bits, e.g. 10 for a=1 b=0")
    return parser


def _config(args) -> SimConfig:
    return SimConfig(tstep=args.tstep, integrator=args.integrator)


def _spec(args, vdd) -> CellSpec:
    if args.cell is None:
        raise UsageError("--cell is required")
    return CellSpec(args.cell, vdd=vdd, card=args.card)


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _single_vdd(args) -> float:
    vdds = parse_vdd_list(args.vdd)
    if len(vdds) != 1:
        raise UsageError(f"{args.verb} takes a single --vdd value")
    return vdds[0]


# ---------------------------------------------------------------------------
# run

def _report_text(report) -> str:
    lines = [f"cell {report.cell}  vdd {report.vdd:g} V  card {report.model_card}",
             f"average power      {fmt(report.avg_power, 1e6, 6)} uW "
             f"(window {report.window[0] * 1e9:g}-{report.window[1] * 1e9:g} ns)"]
    for out in report.outputs.values():
        lines += [f"output {out.node}",
                  f"  worst delay      {fmt(out.worst_prop_delay, 1e12, 6)} ps",
                  f"  min high level   {fmt(out.min_high_level, 1, 5)} V",
                  f"  max low level    {fmt(out.max_low_level, 1, 5)} V",
                  f"  noise margin     {fmt(out.noise_margin, 1, 5)} V"]
    g = report.grade
    lines.append(f"logic {'PASS' if g.passed else 'FAIL'} ({g.checked - len(g.failures)}/{g.checked} checks)")
    for f in g.failures[:20]:
        lines.append(f"  interval {f.interval} inputs {''.join(map(str, f.inputs))}: {f.output} "
                     f"expected {f.expected}, got {f.voltage:.4f} V")
    if len(g.failures) > 20:
        lines.append(f"  ... {len(g.failures) - 20} more")
    return "\n".join(lines) + "\n"


def _format_report(report, fmt_name: str) -> str:
    if fmt_name == "json":
        return report.to_json() + "\n"
    if fmt_name == "csv":
        return _csv(sweep_columns(report.cell), [sweep_row(report)])
    return _report_text(report)


def _deck_with_stimulus(deck_net, spec: CellSpec, args):
    """Swap the deck's input sources for the standard stimulus and set vdd."""
    sources, plan = standard_stimulus(spec.name, spec.vdd, period=args.period, rise=args.rise)
    by_name = {s.name: s for s in sources}
    have = {d.name for d in deck_net.sources()}
    missing = [n for n in [*by_name, "vdd"] if n not in have]
    if missing:
        raise UsageError(f"deck lacks source(s) {', '.join(missing)} needed to drive cell {spec.name}")
    devices = []
    for dev in deck_net.devices:
        if isinstance(dev, VSource) and dev.name in by_name:
            dev = by_name[dev.name]
        elif isinstance(dev, VSource) and dev.name == "vdd":
            dev = replace(dev, dc=spec.vdd, wave=None)
        devices.append(dev)
    return replace(deck_net, devices=devices), plan


def _read_deck(path: str, card: str):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read deck {path}: {exc.strerror}") from None
    net = flatten(parse(text, card=card))
    problems = validate(net)
    for d in problems:
        print(f"warning: {d}", file=sys.stderr)
    return net


def cmd_run(args) -> int:
    vdd = _single_vdd(args)
    cfg = _config(args)
    if args.deck is None:
        res = simulate_cell(_spec(args, vdd), args.period, args.rise, cfg, args.voh, args.vol)
        wf, report = res.waveform, res.report
    else:
        net = _read_deck(args.deck, args.card)
        if args.cell is not None:
            net, plan = _deck_with_stimulus(net, _spec(args, vdd), args)
            wf = transient(net, replace(cfg, tstop=plan.tstop))
            report = measure(wf, plan, ("vdd",), args.voh, args.vol, model_card=args.card)
        else:
            tstop = args.tstop or _deck_tstop(net)
            if tstop is None:
                raise UsageError("deck has no time-varying sources; give --tstop")
            wf = transient(net, replace(cfg, tstop=tstop))
            report = None
    if args.waveform:
        _emit(wf.to_csv(), args.waveform)
    if report is None:
        sources = [s.name for s in net.sources()]
        supplies = [s for s in sources if s == "vdd"] or sources
        p = average_power(wf, supplies)
        summary = {"schema": 1, "deck": args.deck, "tstop_s": float(wf.times[-1]), "samples": len(wf.times),
                   "avg_power_W": p, "supplies": supplies}
        text = json.dumps(summary, indent=2) + "\n" if args.format == "json" else (
            f"deck {args.deck}: {len(wf.times)} samples to {wf.times[-1]:.6g} s, "
            f"average power of {', '.join(supplies)} {fmt(p, 1e6, 6)} uW\n")
        _emit(text, args.out)
        return EXIT_OK
    _emit(_format_report(report, args.format), args.out)
    return EXIT_OK if report.passed else EXIT_LOGIC


def _deck_tstop(net):
    ends = []
    for src in net.sources():
        if src.wave is None:
            continue
        if hasattr(src.wave, "points"):
            ends.append(src.wave.points[-1][0])
        else:
            w = src.wave
            ends.append(w.delay + (w.period if w.period > 0 else w.rise + w.width + w.fall) * 2)
    return max(ends) if ends else None


# ---------------------------------------------------------------------------
# sweep

def _sweep_point(args, vdd, reference):
    try:
        res = simulate_cell(_spec(args, vdd), args.period, args.rise, _config(args), args.voh, args.vol)
    except ConvergenceError as exc:
        return failed_row(args.cell, vdd, f"convergence ({exc})", reference), None, EXIT_CONVERGENCE
    return sweep_row(res.report, reference), res.report, EXIT_OK if res.report.passed else EXIT_LOGIC


def cmd_sweep(args) -> int:
    if args.cell is None:
        raise UsageError("sweep needs --cell")
    vdds = parse_vdd_list(args.vdd)
    reference = args.reference
    if reference == "auto":
        reference = next((t for t, c in REFERENCE_TABLES.items() if c == args.cell), None)
    jobs = max(1, args.jobs)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(lambda v: _sweep_point(args, v, reference), vdds))
    else:
        results = [_sweep_point(args, v, reference) for v in vdds]
    # rows by descending vdd, like the published tables, regardless of completion order
    order = sorted(range(len(vdds)), key=lambda k: -vdds[k])
    rows = [results[k][0] for k in order]
    reports = [results[k][1] for k in order]
    codes = [r[2] for r in results]
    ok = [r for r in reports if r is not None]
    tr = trend([vdds[k] for k in order],
               [r.avg_power if r else None for r in reports],
               [worst_delay(r) if r else None for r in reports])
    columns = sweep_columns(args.cell, reference)
    if args.format == "json":
        payload = {"schema": 1, "cell": args.cell, "card": args.card, "reference": reference,
                   "columns": columns, "rows": rows, "trend": tr,
                   "reports": [r.to_dict() for r in ok]}
        text = json.dumps(payload, indent=2) + "\n"
    elif args.format == "csv":
        text = _csv(columns, rows)
    else:
        text = _table(columns, rows)
    _emit(text, args.out)
    if tr is not None:
        print(f"# trend as vdd decreases: power {tr['power']}, delay {tr['delay']}",
              file=sys.stdout if args.out else sys.stderr)
    return max(codes)


def _table(columns, rows) -> str:
    widths = [max(len(c), *(len(str(r.get(c, ""))) for r in rows)) for c in columns]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    for r in rows:
        lines.append("  ".join(str(r.get(c, "")).rjust(w) for c, w in zip(columns, widths)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# verify

def pattern_summary(report, plan) -> list[dict]:
    """Worst reading per distinct input pattern and output."""
    by_pattern: dict[tuple, dict] = {}
    for _, inputs, outs in report.grade.patterns:
        entry = by_pattern.setdefault(tuple(inputs), {})
        for out, (bit, v, ok) in outs.items():
            prev = entry.get(out)
            worse = prev is None or (v < prev[1] if bit else v > prev[1])
            entry[out] = (bit, v if worse else prev[1], ok and (prev is None or prev[2]))
    rows = []
    for inputs in sorted(by_pattern):
        row = {"vdd": plan.vdd, "inputs": "".join(map(str, inputs))}
        for out, (bit, v, ok) in by_pattern[inputs].items():
            row[out] = {"expected": bit, "worst_V": v, "pass": ok}
        rows.append(row)
    return rows


def cmd_verify(args) -> int:
    if args.cell is None:
        raise UsageError("verify needs --cell")
    vdds = parse_vdd_list(args.vdd)
    all_rows, code = [], EXIT_OK
    summary = []
    for vdd in vdds:
        try:
            res = simulate_cell(_spec(args, vdd), args.period, args.rise, _config(args), args.voh, args.vol)
        except ConvergenceError as exc:
            summary.append((vdd, f"convergence failure: {exc}"))
            code = max(code, EXIT_CONVERGENCE)
            continue
        rows = pattern_summary(res.report, res.plan)
        all_rows += rows
        g = res.report.grade
        summary.append((vdd, f"{'PASS' if g.passed else 'FAIL'} {g.checked - len(g.failures)}/{g.checked}"))
        if not g.passed:
            code = max(code, EXIT_LOGIC)
    outs = list(res.plan.output_nodes) if all_rows else []
    if args.format == "json":
        text = json.dumps({"schema": 1, "cell": args.cell, "voh_frac": args.voh, "vol_frac": args.vol,
                           "patterns": all_rows,
                           "summary": [{"vdd": v, "result": s} for v, s in summary]}, indent=2) + "\n"
    else:
        cols = ["vdd", "inputs"] + [f"{o}_{k}" for o in outs for k in ("expected", "worst_V", "pass")]
        flat = []
        for r in all_rows:
            row = {"vdd": f"{r['vdd']:g}", "inputs": r["inputs"]}
            for o in outs:
                row[f"{o}_expected"] = r[o]["expected"]
                row[f"{o}_worst_V"] = f"{r[o]['worst_V']:.4f}"
                row[f"{o}_pass"] = "yes" if r[o]["pass"] else "no"
            flat.append(row)
        if args.format == "csv":
            text = _csv(cols, flat)
        else:
            text = (_table(cols, flat) if flat else "") + "".join(
                f"vdd {v:g} V: {s}\n" for v, s in summary)
    _emit(text, args.out)
    return code


# ---------------------------------------------------------------------------
# diag

DIAG_COLUMNS = ("device", "label", "type", "region", "vgs_V", "vds_V", "vsb_V", "vt_V", "id_A", "ron_ohm")


def device_table(net, solution: dict[str, float], labels=None) -> list[dict]:
    """Region and bias of every MOSFET at a DC solution, NMOS-normalized."""
    labels = labels or {}
    rows = []
    for m in net.mosfets():
        model = net.models[m.model]
        v = {t: solution.get(getattr(m, t), 0.0) for t in ("gate", "drain", "source", "body")}
        bias, swapped = device.normalize_bias(m.polarity, v["gate"], v["drain"], v["source"], v["body"])
        row = {"device": m.name, "label": labels.get(m.name, ""),
               "type": "pmos" if m.polarity == "p" else "nmos",
               "vgs_V": bias.vgs, "vds_V": bias.vds, "vsb_V": bias.vsb,
               "vt_V": None, "region": "", "id_A": None, "ron_ohm": None}
        try:
            vt = device.threshold_voltage(model, m.w, m.l, bias.vsb, bias.vds)
        except device.DomainError:
            rows.append(row)
            continue
        region = device.region(model, m.w, m.l, bias)
        ids = device.drain_current(model, m.w, m.l, bias)
        row.update(vt_V=vt, region=region, id_A=ids)
        try:
            if region == "triode":
                row["ron_ohm"] = device.ron_triode(model, m.w, m.l, bias)
            elif region == "saturation":
                vds_sat = bias.vgs - vt
                dl = device.channel_length_change(model, bias.vds, vds_sat)
                row["ron_ohm"] = device.ron_saturation(model, m.w, m.l, bias, dl, ids, vds_sat)
        except device.DomainError:
            pass  # outside the formula's window: left empty
        rows.append(row)
    return rows


def _volts(x: float) -> str:
    return f"{round(x, 4) + 0.0:.4f}"  # no "-0.0000"


def cmd_diag(args) -> int:
    if args.cell is None:
        raise UsageError("diag needs --cell")
    if args.pattern is None:
        raise UsageError("diag needs --pattern")
    vdd = _single_vdd(args)
    spec = _spec(args, vdd)
    bits = parse_pattern(args.pattern, spec.name)
    sources = [VSource(f"v{node}", node, GROUND, b * vdd) for node, b in zip(spec.inputs, bits)]
    net = build_cell(spec, sources)
    sol = dc_operating_point(net, _config(args))
    labels = XNOR3T_LABELS if spec.name == "xnor3t" else {}
    rows = device_table(net, sol, labels)
    nodes = {k: v for k, v in sol.items() if not k.startswith("i(") and k != GROUND}
    supply = -sol["i(vdd)"]
    if args.format == "json":
        text = json.dumps({"schema": 1, "cell": spec.name, "vdd": vdd, "pattern": "".join(map(str, bits)),
                           "nodes": nodes, "supply_current_A": supply, "devices": rows}, indent=2) + "\n"
    else:
        shown = []
        for r in rows:
            shown.append({
                "device": r["device"], "label": r["label"], "type": r["type"], "region": r["region"],
                "vgs_V": _volts(r["vgs_V"]), "vds_V": _volts(r["vds_V"]), "vsb_V": _volts(r["vsb_V"]),
                "vt_V": fmt(r["vt_V"], 1, 5), "id_A": fmt(r["id_A"], 1, 5), "ron_ohm": fmt(r["ron_ohm"], 1, 5),
            })
        if args.format == "csv":
            text = _csv(DIAG_COLUMNS, shown)
        else:
            text = (f"{spec.name} at vdd {vdd:g} V, inputs "
                    + " ".join(f"{n}={b}" for n, b in zip(spec.inputs, bits)) + "\n"
                    + "nodes: " + ", ".join(f"{k}={v:.4f}" for k, v in nodes.items()) + "\n"
                    + f"supply current {supply:.5g} A\n" + _table(DIAG_COLUMNS, shown))
    _emit(text, args.out)
    return EXIT_OK


VERBS = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "diag": cmd_diag}


def main(argv=None) -> int:
    try:
        parser = build_parser()
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return exc.code if isinstance(exc.code, int) else EXIT_USAGE
        if not (0 < args.vol < args.voh <= 1):
            raise UsageError("thresholds need 0 < vol < voh <= 1")
        if not (args.period > 0 and 0 < args.rise < args.period):
            raise UsageError("need period > 0 and 0 < rise < period")
        return VERBS[args.verb](args)
    except NetlistError as exc:
        print(f"deck error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, CellError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        where = f" at node {exc.node}" if exc.node else ""
        print(f"convergence failure{where}: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except SimulationError as exc:
        print(f"simulation failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
