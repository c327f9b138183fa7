"""
Built-in cells, their boolean oracle and the exhaustive stimulus generator.

Cells (all L = 0.35 um):

- ``xnor3t``: P1 (W=2u) source vdd, gate b, drain out; N1 (W=5u) gate a,
  channel b<->out; N2 (W=1u) gate b, channel out<->a.
- ``xnorxor5t``: xnor3t followed by an inverter P2 (2u) / N3 (1u); outputs
  ``xnor`` and ``xor``.
- ``adder8t``: two xnor3t stages, ``h = XNOR(a, b)`` and
  ``sum = XNOR(h, cin)`` (h on the gate-only input), plus a 2-transistor
  carry mux selected by ``h``:
  NMOS (1u) passes ``a`` when h is high, PMOS (2u) passes ``cin`` when h is
  low.
- ``inverter`` and ``cmos_xnor_ref`` (12T static CMOS XNOR with input
  inverters) are engine baselines, not part of the published designs.

The xnor3t wiring is a table (:data:`XNOR3T_WIRING`) and can be replaced,
e.g. by :data:`XNOR3T_WIRING_GROUNDED_N2` which returns N2 to ground.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from importlib import resources

from .. import device
from ..netlist import (GROUND, Capacitor, Mosfet, Netlist, Pwl, Subckt, SubcktCall,
                       VSource, flatten, parse)

L_DEFAULT = 0.35e-6

CELL_NAMES = ("xnor3t", "xnorxor5t", "adder8t", "inverter", "cmos_xnor_ref")

# device -> (polarity, drain, gate, source, body, W) over ports a, b, out
XNOR3T_WIRING = {
    "m1": ("p", "out", "b", "vdd", "vdd", 2e-6),
    "m2": ("n", "out", "a", "b", GROUND, 5e-6),
    "m3": ("n", "out", "b", "a", GROUND, 1e-6),
}
XNOR3T_WIRING_GROUNDED_N2 = dict(XNOR3T_WIRING, m3=("n", "out", "b", GROUND, GROUND, 1e-6))

# conventional device labels (P1, N1, ...), for reports
XNOR3T_LABELS = {"m1": "P1", "m2": "N1", "m3": "N2"}

INPUTS = {
    "xnor3t": ("a", "b"),
    "xnorxor5t": ("a", "b"),
    "adder8t": ("a", "b", "cin"),
    "inverter": ("a",),
    "cmos_xnor_ref": ("a", "b"),
}
OUTPUTS = {
    "xnor3t": ("out",),
    "xnorxor5t": ("xnor", "xor"),
    "adder8t": ("sum", "cout"),
    "inverter": ("out",),
    "cmos_xnor_ref": ("out",),
}
TITLES = {
    "xnor3t": "xnor3t: 3-transistor pass-transistor XNOR",
    "xnorxor5t": "xnorxor5t: 3T XNOR with restoring inverter (XNOR/XOR)",
    "adder8t": "adder8t: 8-transistor full adder (two 3T XNORs + 2T carry mux)",
    "inverter": "inverter: static CMOS inverter (baseline)",
    "cmos_xnor_ref": "cmos_xnor_ref: 12T static CMOS XNOR (baseline, not a published cell)",
}


class CellError(ValueError):
    pass


@dataclass(frozen=True)
class CellSpec:
    name: str
    vdd: float = 3.3
    load_cap: float = 10e-15
    sizing: dict = field(default_factory=dict)  # device name -> (W, L) override
    card: str = "generic035"
    conventional_body_effect: bool | None = None
    wiring: dict | None = None

    def __post_init__(self):
        if self.name not in CELL_NAMES:
            raise CellError(f"unknown cell {self.name!r}; choose from {', '.join(CELL_NAMES)}")
        if not 1.0 <= self.vdd <= 5.0:
            raise CellError(f"vdd {self.vdd} outside [1.0, 5.0] V")
        if self.load_cap < 0:
            raise CellError("load_cap must be >= 0")
        for dev, (w, l) in self.sizing.items():
            if w <= 0 or l <= 0:
                raise CellError(f"sizing for {dev} must be positive")

    @property
    def inputs(self):
        return INPUTS[self.name]

    @property
    def outputs(self):
        return OUTPUTS[self.name]


# ---------------------------------------------------------------------------
# boolean oracle

def oracle(inputs, cell: str) -> tuple[int, ...]:
    """Expected output bits, ordered as ``OUTPUTS[cell]``."""
    bits = tuple(int(bool(b)) for b in inputs)
    arity = len(INPUTS.get(cell, ()))
    if cell not in INPUTS:
        raise CellError(f"unknown cell {cell!r}")
    if len(bits) != arity:
        raise CellError(f"{cell} takes {arity} inputs, got {len(bits)}")
    if cell == "inverter":
        return (1 - bits[0],)
    if cell in ("xnor3t", "cmos_xnor_ref"):
        return (1 - (bits[0] ^ bits[1]),)
    if cell == "xnorxor5t":
        x = bits[0] ^ bits[1]
        return (1 - x, x)
    a, b, cin = bits
    s, cout = full_adder(a, b, cin)
    s2, cout2 = full_adder_decomposed(a, b, cin)
    if (s, cout) != (s2, cout2):  # pragma: no cover - algebraic identity
        raise AssertionError(f"decomposition mismatch for {bits}")
    return (s, cout)


def full_adder(a: int, b: int, cin: int) -> tuple[int, int]:
    """Sum = (a xor b) xor cin, Cout = a.b + cin.(a xor b)."""
    return (a ^ b) ^ cin, (a & b) | (cin & (a ^ b))


def full_adder_decomposed(a: int, b: int, cin: int) -> tuple[int, int]:
    """Same outputs through the half sum H = a xor b and its complement."""
    h = a ^ b
    hn = 1 - h
    s = (h & (1 - cin)) | (hn & cin)
    cout = (a & hn) | (cin & h)
    return s, cout


# ---------------------------------------------------------------------------
# netlist builders

def _models(spec: CellSpec) -> dict:
    nch = device.default_model("n", spec.card, name="nch")
    pch = device.default_model("p", spec.card, name="pch")
    if spec.conventional_body_effect is not None:
        nch = nch.with_params(conventional_body_effect=spec.conventional_body_effect)
        pch = pch.with_params(conventional_body_effect=spec.conventional_body_effect)
    return {"nch": nch, "pch": pch}


def _mos(name, pol, d, g, s, b, w, spec: CellSpec, l=L_DEFAULT):
    w, l = spec.sizing.get(name, (w, l))
    return Mosfet(name, d, g, s, b, "nch" if pol == "n" else "pch", w, l, pol)


def _xnor3t_devices(spec: CellSpec, a="a", b="b", out="out", prefix=""):
    wiring = spec.wiring or XNOR3T_WIRING
    ports = {"a": a, "b": b, "out": out, "vdd": "vdd", GROUND: GROUND}
    devs = []
    for name, (pol, d, g, s, body, w) in wiring.items():
        devs.append(_mos(prefix + name, pol, ports[d], ports[g], ports[s], ports[body], w, spec))
    return devs


def _inverter_devices(spec, inp, out, p_name, n_name):
    return [
        _mos(p_name, "p", out, inp, "vdd", "vdd", 2e-6, spec),
        _mos(n_name, "n", out, inp, GROUND, GROUND, 1e-6, spec),
    ]


def _dc_inputs(spec: CellSpec):
    return [VSource(f"v{node}", node, GROUND, 0.0) for node in spec.inputs]


def _loads(spec: CellSpec):
    return [Capacitor(f"cl{k + 1}", out, GROUND, spec.load_cap) for k, out in enumerate(spec.outputs)]


def build_hierarchical(spec: CellSpec, sources=None) -> Netlist:
    """Deck as written in the bundled ``.sp`` files (adder uses subcircuits)."""
    sources = list(_dc_inputs(spec) if sources is None else sources)
    supply = VSource("vdd", "vdd", GROUND, spec.vdd)
    net = Netlist(title=TITLES[spec.name], models=_models(spec))
    name = spec.name
    if name == "xnor3t":
        devs = _xnor3t_devices(spec)
    elif name == "xnorxor5t":
        devs = _xnor3t_devices(spec, out="xnor") + _inverter_devices(spec, "xnor", "xor", "m4", "m5")
    elif name == "inverter":
        devs = _inverter_devices(spec, "a", "out", "m1", "m2")
    elif name == "cmos_xnor_ref":
        devs = (_inverter_devices(spec, "a", "an", "m1", "m2")
                + _inverter_devices(spec, "b", "bn", "m3", "m4")
                + [
                    # pull-up: (a | bn) in series with (an | b)
                    _mos("m5", "p", "pu", "a", "vdd", "vdd", 4e-6, spec),
                    _mos("m6", "p", "pu", "bn", "vdd", "vdd", 4e-6, spec),
                    _mos("m7", "p", "out", "an", "pu", "vdd", 4e-6, spec),
                    _mos("m8", "p", "out", "b", "pu", "vdd", 4e-6, spec),
                    # pull-down: a.bn parallel an.b
                    _mos("m9", "n", "out", "a", "pd1", GROUND, 2e-6, spec),
                    _mos("m10", "n", "pd1", "bn", GROUND, GROUND, 2e-6, spec),
                    _mos("m11", "n", "out", "an", "pd2", GROUND, 2e-6, spec),
                    _mos("m12", "n", "pd2", "b", GROUND, GROUND, 2e-6, spec),
                ])
    else:  # adder8t
        net.globals = ("vdd",)
        net.subcircuits["xnor3t"] = Subckt("xnor3t", ("a", "b", "out"), _xnor3t_devices(spec))
        devs = [
            SubcktCall("x1", ("a", "b", "h"), "xnor3t"),
            SubcktCall("x2", ("h", "cin", "sum"), "xnor3t"),
            _mos("m1", "n", "cout", "h", "a", GROUND, 1e-6, spec),
            _mos("m2", "p", "cout", "h", "cin", "vdd", 2e-6, spec),
        ]
    net.devices = [supply, *sources, *devs, *_loads(spec)]
    return net


def build_cell(spec: CellSpec, sources=None) -> Netlist:
    """Flattened, simulatable netlist for a cell.

    ``sources`` replaces the default DC 0 V input sources (see
    :func:`standard_stimulus`).
    """
    return flatten(build_hierarchical(spec, sources))


def deck_text(name: str) -> str:
    """Text of the bundled ``.sp`` deck for a cell."""
    return resources.files(__package__).joinpath(f"{name}.sp").read_text()


def parse_deck(name: str, **kw) -> Netlist:
    return flatten(parse(deck_text(name), **kw))


def transistor_count(net: Netlist) -> int:
    return len(net.mosfets())


# ---------------------------------------------------------------------------
# stimulus

@dataclass(frozen=True)
class Interval:
    index: int
    t_start: float
    t_end: float
    inputs: tuple[int, ...]
    expected: dict
    changed: tuple[str, ...] = ()  # inputs that toggled at t_start


@dataclass
class StimulusPlan:
    cell: str
    vdd: float
    input_nodes: tuple[str, ...]
    output_nodes: tuple[str, ...]
    intervals: list[Interval]
    sources: list[VSource]
    period: float
    rise: float
    cycle: float  # duration of one tour
    cycles: int = 2
    settle_fraction: float = 0.5

    @property
    def tstop(self) -> float:
        return self.cycle * self.cycles

    def power_window(self) -> tuple[float, float]:
        """Second tour: skips the start-up tour."""
        if self.cycles < 2:
            return 0.0, self.cycle
        return self.cycle, 2 * self.cycle

    def input_edge_time(self, interval: Interval) -> float:
        return interval.t_start + 0.5 * self.rise

    def describe(self) -> dict:
        return {"period_s": self.period, "rise_s": self.rise, "patterns_per_tour": len(self.intervals) // self.cycles,
                "tours": self.cycles, "settle_fraction": self.settle_fraction}


def gray_code(n: int) -> list[tuple[int, ...]]:
    codes = [i ^ (i >> 1) for i in range(2 ** n)]
    return [tuple((c >> (n - 1 - k)) & 1 for k in range(n)) for c in codes]


def pattern_tour(n: int) -> list[tuple[int, ...]]:
    """Cyclic pattern sequence traversing every single-bit transition once.

    The Gray-code cycle is followed by the same cycle in reverse; for n >= 3
    the cube edges off the Gray cycle are spliced in as out-and-back visits,
    so every directed single-bit transition appears exactly once.
    """
    gray = gray_code(n)
    if n == 1:
        return gray
    tour = gray + [gray[0]] + gray[:0:-1]
    used = set()
    cyc = tour + [tour[0]]
    for u, v in zip(cyc, cyc[1:]):
        used.add((u, v))
    missing = []
    for u in itertools.product((0, 1), repeat=n):
        for k in range(n):
            v = tuple(b ^ (1 if i == k else 0) for i, b in enumerate(u))
            if (u, v) not in used and (v, u) not in used and u < v:
                missing.append((u, v))
    for u, v in missing:
        at = tour.index(u)
        tour[at + 1:at + 1] = [v, u]
    return _drop_repeats(tour)


def _drop_repeats(tour):
    out = []
    for p in tour:
        if not out or out[-1] != p:
            out.append(p)
    if len(out) > 1 and out[-1] == out[0]:
        out.pop()
    return out


def standard_stimulus(cell: str, vdd: float, period: float = 10e-9, rise: float = 100e-12,
                      cycles: int = 2):
    """PWL input sources and the annotated plan for an exhaustive tour.

    The tour is repeated ``cycles`` times; the default of 2 leaves the second
    tour free of start-up effects for power measurement.
    """
    if cell not in INPUTS:
        raise CellError(f"unknown cell {cell!r}")
    if not (0 < rise < period):
        raise CellError("rise must lie in (0, period)")
    nodes = INPUTS[cell]
    outs = OUTPUTS[cell]
    tour = pattern_tour(len(nodes))
    seq = tour * cycles
    intervals = []
    prev = None
    for k, bits in enumerate(seq):
        expected = dict(zip(outs, oracle(bits, cell)))
        changed = () if prev is None else tuple(n for n, x, y in zip(nodes, prev, bits) if x != y)
        intervals.append(Interval(k, k * period, (k + 1) * period, bits, expected, changed))
        prev = bits
    sources = []
    for i, node in enumerate(nodes):
        pts = [(0.0, seq[0][i] * vdd)]
        for k in range(1, len(seq)):
            if seq[k][i] != seq[k - 1][i]:
                t = k * period
                pts.append((t, seq[k - 1][i] * vdd))
                pts.append((t + rise, seq[k][i] * vdd))
        pts.append((len(seq) * period, seq[-1][i] * vdd))
        sources.append(VSource(f"v{node}", node, GROUND, seq[0][i] * vdd, Pwl(tuple(pts))))
    plan = StimulusPlan(cell, vdd, nodes, outs, intervals, sources, period, rise,
                        cycle=len(tour) * period, cycles=cycles)
    return sources, plan
