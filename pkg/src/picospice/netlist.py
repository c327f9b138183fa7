"""
Netlist data model, parser, serializer and subcircuit flattening.

Accepted deck grammar (a strict subset of classic SPICE)::

    deck      := title-line { card } ".end"
    card      := mosfet | capacitor | vsource | instance | directive
    mosfet    := M<name> drain gate source body model W=<value> L=<value>
    capacitor := C<name> node node <value>
    vsource   := V<name> node node [DC] <value>
               | V<name> node node [[DC] <value>] PULSE(v1 v2 td tr tf pw per)
               | V<name> node node [[DC] <value>] PWL(t1 v1 t2 v2 ...)
    instance  := X<name> node... subckt-name
    directive := .model <name> nmos|pmos [(] {key=value} [)]
               | .subckt <name> port... / .ends [<name>]
               | .global node...
               | .end

Lines starting with ``*`` are comments, lines starting with ``+`` continue
the previous card. Keywords, device names and node names are
case-insensitive and stored lower case; ``gnd`` is an alias of ``0``.
Values accept the suffixes f p n u m k meg g t (``meg`` before ``m``);
trailing unit letters are ignored, so ``10fF`` and ``2um`` are fine.

``R`` cards are accepted as a convenience for engine self-tests only.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Union

from . import device
from .device import MosModel

GROUND = "0"

# decimal exponents, so "10f" parses to exactly float("10e-15")
_SUFFIX = {"t": 12, "g": 9, "meg": 6, "k": 3, "m": -3, "u": -6, "n": -9, "p": -12, "f": -15}
_NUMBER = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?)(meg|[tgkmunpf])?([a-z]*)$")


class NetlistError(ValueError):
    """Deck or netlist problem, with the source line when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", col {column}"
            where += ": "
        super().__init__(where + message)


def parse_value(token: str) -> float:
    """Resolve a SPICE number with optional scale suffix to SI."""
    m = _NUMBER.match(token.strip().lower())
    if m is None:
        raise ValueError(f"bad numeric value {token!r}")
    number, suffix, _units = m.groups()
    if not suffix:
        return float(number)
    return float(Decimal(number).scaleb(_SUFFIX[suffix]))


def canon_node(name: str) -> str:
    name = name.lower()
    return GROUND if name == "gnd" else name


# ---------------------------------------------------------------------------
# data model

@dataclass(frozen=True)
class Pulse:
    v1: float
    v2: float
    delay: float
    rise: float
    fall: float
    width: float
    period: float

    def __post_init__(self):
        if not (self.rise > 0 and self.fall > 0):
            raise ValueError("PULSE rise and fall must be > 0")

    def value(self, t: float) -> float:
        if t < self.delay:
            return self.v1
        tp = t - self.delay
        if self.period > 0:
            tp = tp % self.period
        if tp < self.rise:
            return self.v1 + (self.v2 - self.v1) * tp / self.rise
        tp -= self.rise
        if tp <= self.width:
            return self.v2
        tp -= self.width
        if tp < self.fall:
            return self.v2 + (self.v1 - self.v2) * tp / self.fall
        return self.v1

    def breakpoints(self, tstop: float) -> list[float]:
        pts = []
        start = self.delay
        while start <= tstop:
            edges = (0.0, self.rise, self.rise + self.width, self.rise + self.width + self.fall)
            pts.extend(start + e for e in edges)
            if self.period <= 0:
                break
            start += self.period
        return [p for p in pts if p <= tstop]


@dataclass(frozen=True)
class Pwl:
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        times = [t for t, _ in self.points]
        if not times or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("PWL times must be strictly increasing")

    def value(self, t: float) -> float:
        pts = self.points
        if t <= pts[0][0]:
            return pts[0][1]
        for (t0, v0), (t1, v1) in zip(pts, pts[1:]):
            if t <= t1:
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        return pts[-1][1]

    def breakpoints(self, tstop: float) -> list[float]:
        return [t for t, _ in self.points if t <= tstop]


Wave = Union[Pulse, Pwl]


@dataclass(frozen=True)
class Mosfet:
    name: str
    drain: str
    gate: str
    source: str
    body: str
    model: str
    w: float
    l: float
    polarity: str = "n"

    kind = "MOSFET"

    @property
    def terminals(self):
        return (self.drain, self.gate, self.source, self.body)


@dataclass(frozen=True)
class Capacitor:
    name: str
    a: str
    b: str
    value: float

    kind = "CAPACITOR"

    @property
    def terminals(self):
        return (self.a, self.b)


@dataclass(frozen=True)
class Resistor:
    """Linear resistor, used only by engine self-tests."""

    name: str
    a: str
    b: str
    value: float

    kind = "RESISTOR"

    @property
    def terminals(self):
        return (self.a, self.b)


@dataclass(frozen=True)
class VSource:
    name: str
    pos: str
    neg: str
    dc: float = 0.0
    wave: Wave | None = None

    kind = "VSOURCE"

    @property
    def terminals(self):
        return (self.pos, self.neg)

    def value(self, t: float) -> float:
        return self.dc if self.wave is None else self.wave.value(t)


@dataclass(frozen=True)
class SubcktCall:
    name: str
    nodes: tuple[str, ...]
    subckt: str

    kind = "SUBCKT"

    @property
    def terminals(self):
        return self.nodes


Device = Union[Mosfet, Capacitor, Resistor, VSource, SubcktCall]


@dataclass
class Subckt:
    name: str
    ports: tuple[str, ...]
    devices: list = field(default_factory=list)


@dataclass
class Netlist:
    title: str = ""
    devices: list = field(default_factory=list)
    models: dict[str, MosModel] = field(default_factory=dict)
    subcircuits: dict[str, Subckt] = field(default_factory=dict)
    globals: tuple[str, ...] = ()

    @property
    def nodes(self) -> set[str]:
        out = {GROUND}
        for dev in self.devices:
            out.update(dev.terminals)
        return out

    def mosfets(self) -> list[Mosfet]:
        return [d for d in self.devices if isinstance(d, Mosfet)]

    def sources(self) -> list[VSource]:
        return [d for d in self.devices if isinstance(d, VSource)]

    def device(self, name: str):
        name = name.lower()
        for dev in self.devices:
            if dev.name == name:
                return dev
        raise KeyError(name)

    def is_flat(self) -> bool:
        return not any(isinstance(d, SubcktCall) for d in self.devices)


# ---------------------------------------------------------------------------
# parser

@dataclass
class _Line:
    number: int
    tokens: list[str]


def _logical_lines(text: str):
    lines: list[_Line] = []
    raw = text.splitlines()
    if not raw:
        raise NetlistError("empty deck", 1)
    title = raw[0].strip()
    for number, line in enumerate(raw[1:], start=2):
        stripped = line.strip()
        if not stripped or stripped.startswith("*"):
            continue
        if stripped.startswith("+"):
            if not lines:
                raise NetlistError("continuation line with nothing to continue", number, 1)
            lines[-1].tokens.extend(_tokenize(stripped[1:]))
            continue
        lines.append(_Line(number, _tokenize(stripped)))
    return title, lines


def _tokenize(text: str) -> list[str]:
    text = re.sub(r"\s*=\s*", "=", text)
    return text.replace("(", " ( ").replace(")", " ) ").replace(",", " ").split()


def _value(token: str, line: int) -> float:
    try:
        return parse_value(token)
    except ValueError:
        raise NetlistError(f"bad numeric value {token!r}", line) from None


def _keyvals(tokens: list[str], line: int) -> dict[str, float]:
    out = {}
    for tok in tokens:
        if tok in ("(", ")"):
            continue
        if "=" not in tok:
            raise NetlistError(f"expected key=value, got {tok!r}", line)
        key, _, val = tok.partition("=")
        out[key.lower()] = _value(val, line)
    return out


def _parse_source(tokens: list[str], line: int) -> VSource:
    if len(tokens) < 4:
        raise NetlistError("voltage source needs two nodes and a value", line)
    name, pos, neg = tokens[0].lower(), canon_node(tokens[1]), canon_node(tokens[2])
    rest = tokens[3:]
    dc = 0.0
    wave = None
    i = 0
    while i < len(rest):
        tok = rest[i].lower()
        if tok == "dc":
            if i + 1 >= len(rest):
                raise NetlistError("DC keyword without value", line)
            dc = _value(rest[i + 1], line)
            i += 2
        elif tok in ("pulse", "pwl"):
            args = rest[i + 1:]
            if not args or args[0] != "(" or ")" not in args:
                raise NetlistError(f"{tok.upper()} needs a parenthesized argument list", line)
            close = args.index(")")
            values = [_value(a, line) for a in args[1:close]]
            try:
                if tok == "pulse":
                    if len(values) != 7:
                        raise NetlistError("PULSE takes 7 values: v1 v2 td tr tf pw per", line)
                    wave = Pulse(*values)
                else:
                    if len(values) < 2 or len(values) % 2:
                        raise NetlistError("PWL takes time/value pairs", line)
                    wave = Pwl(tuple(zip(values[::2], values[1::2])))
            except ValueError as exc:
                if isinstance(exc, NetlistError):
                    raise
                raise NetlistError(str(exc), line) from None
            i += close + 2
        else:
            dc = _value(rest[i], line)
            i += 1
    return VSource(name, pos, neg, dc, wave)


def parse(text: str, card: str = "generic035", conventional_body_effect: bool | None = None) -> Netlist:
    """Parse deck text into a (possibly hierarchical) Netlist.

    ``.model`` parameters not given on the card take their values from the
    bundled model ``card``; ``conventional_body_effect`` overrides that
    card's threshold form when not None.
    """
    title, lines = _logical_lines(text)
    net = Netlist(title=title)
    target = net.devices
    current: Subckt | None = None
    seen_names: set[str] = set()
    pending: list[tuple[Mosfet, int]] = []
    globals_: list[str] = []
    ended = False

    for ln in lines:
        toks = ln.tokens
        head = toks[0].lower()
        n = ln.number
        if ended:
            raise NetlistError("content after .end", n, 1)
        if head.startswith("."):
            if head == ".end":
                ended = True
            elif head == ".model":
                if len(toks) < 3:
                    raise NetlistError(".model needs a name and a type", n)
                mname, mtype = toks[1].lower(), toks[2].lower()
                if mtype not in ("nmos", "pmos"):
                    raise NetlistError(f"unsupported model type {toks[2]!r}", n)
                if mname in net.models:
                    raise NetlistError(f"duplicate model {mname!r}", n)
                params = _keyvals(toks[3:], n)
                try:
                    model = device.model_from_card(mname, mtype[0], params, card)
                except (KeyError, ValueError) as exc:
                    raise NetlistError(str(exc).strip("'\""), n) from None
                if conventional_body_effect is not None:
                    model = replace(model, conventional_body_effect=conventional_body_effect)
                net.models[mname] = model
            elif head == ".subckt":
                if current is not None:
                    raise NetlistError("nested .subckt definitions are not supported", n)
                if len(toks) < 3:
                    raise NetlistError(".subckt needs a name and ports", n)
                current = Subckt(toks[1].lower(), tuple(canon_node(t) for t in toks[2:]))
                if current.name in net.subcircuits:
                    raise NetlistError(f"duplicate subcircuit {current.name!r}", n)
                target = current.devices
            elif head == ".ends":
                if current is None:
                    raise NetlistError(".ends without .subckt", n)
                net.subcircuits[current.name] = current
                current = None
                target = net.devices
            elif head == ".global":
                globals_.extend(canon_node(t) for t in toks[1:])
            else:
                raise NetlistError(f"unknown directive {toks[0]!r}", n, 1)
            continue

        name = head
        scope = (current.name + "/" if current else "") + name
        if scope in seen_names:
            raise NetlistError(f"duplicate device name {toks[0]!r}", n, 1)
        seen_names.add(scope)
        letter = name[0]
        if letter == "m":
            if len(toks) < 6:
                raise NetlistError("MOSFET card: M<name> d g s b model W=.. L=..", n)
            kv = _keyvals(toks[6:], n)
            unknown = set(kv) - {"w", "l"}
            if unknown:
                raise NetlistError(f"unknown MOSFET parameter(s) {sorted(unknown)}", n)
            if "w" not in kv or "l" not in kv:
                raise NetlistError("MOSFET needs W= and L=", n)
            if kv["w"] <= 0 or kv["l"] <= 0:
                raise NetlistError("MOSFET W and L must be positive", n)
            d, g, s, b = (canon_node(t) for t in toks[1:5])
            mos = Mosfet(name, d, g, s, b, toks[5].lower(), kv["w"], kv["l"])
            target.append(mos)
            pending.append((mos, n))
        elif letter in ("c", "r"):
            if len(toks) != 4:
                raise NetlistError(f"{letter.upper()} card takes two nodes and a value", n)
            value = _value(toks[3], n)
            if value < 0 or (letter == "r" and value == 0):
                raise NetlistError(f"invalid element value {toks[3]!r}", n)
            cls = Capacitor if letter == "c" else Resistor
            target.append(cls(name, canon_node(toks[1]), canon_node(toks[2]), value))
        elif letter == "v":
            target.append(_parse_source(toks, n))
        elif letter == "x":
            if len(toks) < 3:
                raise NetlistError("instance needs nodes and a subcircuit name", n)
            target.append(SubcktCall(name, tuple(canon_node(t) for t in toks[1:-1]), toks[-1].lower()))
        else:
            raise NetlistError(f"unsupported device card {toks[0]!r}", n, 1)

    if current is not None:
        raise NetlistError(f"unterminated .subckt {current.name!r}")
    if not ended:
        raise NetlistError("missing .end", len(text.splitlines()))

    net.globals = tuple(dict.fromkeys(globals_))
    # resolve polarity now that all models are known
    resolved = {}
    for mos, n in pending:
        model = net.models.get(mos.model)
        if model is None:
            raise NetlistError(f"undefined model {mos.model!r} on {mos.name}", n)
        resolved[id(mos)] = replace(mos, polarity=model.polarity)

    def fix(devs):
        return [resolved.get(id(d), d) for d in devs]

    net.devices = fix(net.devices)
    for sub in net.subcircuits.values():
        sub.devices = fix(sub.devices)
    for call in _calls(net):
        if call.subckt not in net.subcircuits:
            raise NetlistError(f"undefined subcircuit {call.subckt!r} in {call.name}")
    return net


def _calls(net: Netlist):
    yield from (d for d in net.devices if isinstance(d, SubcktCall))
    for sub in net.subcircuits.values():
        yield from (d for d in sub.devices if isinstance(d, SubcktCall))


# ---------------------------------------------------------------------------
# serializer

def _num(x: float) -> str:
    return repr(float(x))


def _card(dev) -> str:
    if isinstance(dev, Mosfet):
        return (f"{dev.name} {dev.drain} {dev.gate} {dev.source} {dev.body} {dev.model} "
                f"W={_num(dev.w)} L={_num(dev.l)}")
    if isinstance(dev, (Capacitor, Resistor)):
        return f"{dev.name} {dev.a} {dev.b} {_num(dev.value)}"
    if isinstance(dev, VSource):
        text = f"{dev.name} {dev.pos} {dev.neg} DC {_num(dev.dc)}"
        if isinstance(dev.wave, Pulse):
            w = dev.wave
            args = (w.v1, w.v2, w.delay, w.rise, w.fall, w.width, w.period)
            text += " PULSE(" + " ".join(_num(a) for a in args) + ")"
        elif isinstance(dev.wave, Pwl):
            pairs = [f"{_num(t)} {_num(v)}" for t, v in dev.wave.points]
            text += "\n+ PWL(" + "\n+ ".join(pairs) + ")"
        return text
    if isinstance(dev, SubcktCall):
        return f"{dev.name} {' '.join(dev.nodes)} {dev.subckt}"
    raise TypeError(f"cannot serialize {dev!r}")


def to_text(net: Netlist) -> str:
    """Serialize a Netlist to deck text that parses back to an equal Netlist."""
    out = [net.title]
    if net.globals:
        out.append(".global " + " ".join(net.globals))
    for model in net.models.values():
        params = " ".join(f"{k}={_num(v)}" for k, v in device.card_param_values(model).items())
        out.append(f".model {model.name} {model.polarity}mos ({params})")
    for sub in net.subcircuits.values():
        out.append(f".subckt {sub.name} {' '.join(sub.ports)}")
        out.extend(_card(d) for d in sub.devices)
        out.append(f".ends {sub.name}")
    out.extend(_card(d) for d in net.devices)
    out.append(".end")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# flattening

def flatten(net: Netlist) -> Netlist:
    """Expand subcircuit instances into a flat device list.

    Internal nodes and device names of an instance become ``<inst>.<name>``;
    ground and ``.global`` nodes keep their names.
    """
    keep = {GROUND, *net.globals}

    def expand(devices, mapping, prefix, stack):
        flat = []
        for dev in devices:
            if isinstance(dev, SubcktCall):
                sub = net.subcircuits.get(dev.subckt)
                if sub is None:
                    raise NetlistError(f"undefined subcircuit {dev.subckt!r} in {dev.name}")
                if dev.subckt in stack:
                    raise NetlistError(f"recursive subcircuit {' -> '.join(stack + (dev.subckt,))}")
                if len(dev.nodes) != len(sub.ports):
                    raise NetlistError(
                        f"{dev.name}: {len(dev.nodes)} nodes given, {sub.name} has {len(sub.ports)} ports")
                inst = prefix + dev.name
                outer = [mapping(n) for n in dev.nodes]
                ports = dict(zip(sub.ports, outer))

                def inner(node, ports=ports, inst=inst):
                    if node in ports:
                        return ports[node]
                    if node in keep:
                        return node
                    return f"{inst}.{node}"

                flat.extend(expand(sub.devices, inner, inst + ".", stack + (dev.subckt,)))
            else:
                flat.append(_rename(dev, mapping, prefix))
        return flat

    devices = expand(net.devices, lambda n: n, "", ())
    names = [d.name for d in devices]
    if len(names) != len(set(names)):
        raise NetlistError("flattening produced duplicate device names")
    return Netlist(net.title, devices, dict(net.models), {}, net.globals)


def _rename(dev, mapping, prefix):
    name = prefix + dev.name
    if isinstance(dev, Mosfet):
        return replace(dev, name=name, drain=mapping(dev.drain), gate=mapping(dev.gate),
                       source=mapping(dev.source), body=mapping(dev.body))
    if isinstance(dev, (Capacitor, Resistor)):
        return replace(dev, name=name, a=mapping(dev.a), b=mapping(dev.b))
    if isinstance(dev, VSource):
        return replace(dev, name=name, pos=mapping(dev.pos), neg=mapping(dev.neg))
    raise TypeError(dev)


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Diagnostic:
    kind: str  # floating | undriven-gate | dangling | geometry | model
    subject: str
    message: str

    def __str__(self):
        return f"{self.kind}: {self.message}"


def validate(net: Netlist) -> list[Diagnostic]:
    """Structural checks on a flattened netlist; an empty list means simulatable."""
    diags: list[Diagnostic] = []
    if not net.is_flat():
        diags.append(Diagnostic("hierarchy", net.title, "netlist still contains subcircuit instances"))

    touches: dict[str, int] = {}
    gate_nodes: set[str] = set()
    # DC connectivity: source branches, resistors and MOSFET channels
    parent = {}

    def find(x):
        parent.setdefault(x, x)
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        parent[find(a)] = find(b)

    for dev in net.devices:
        for node in dev.terminals:
            touches[node] = touches.get(node, 0) + 1
            find(node)
        if isinstance(dev, Mosfet):
            gate_nodes.add(dev.gate)
            union(dev.drain, dev.source)
            if not (dev.w > 0 and dev.l > 0):
                diags.append(Diagnostic("geometry", dev.name, f"{dev.name} has non-positive W or L"))
            if dev.model not in net.models:
                diags.append(Diagnostic("model", dev.name, f"{dev.name} uses undefined model {dev.model}"))
        elif isinstance(dev, (VSource, Resistor)):
            union(*dev.terminals)

    ground = find(GROUND)
    for node in sorted(touches):
        if node == GROUND:
            continue
        if find(node) != ground:
            if node in gate_nodes:
                diags.append(Diagnostic("undriven-gate", node, f"gate node {node!r} is driven by nothing"))
            else:
                diags.append(Diagnostic("floating", node, f"node {node!r} has no DC path to ground"))
        elif touches[node] == 1:
            diags.append(Diagnostic("dangling", node, f"node {node!r} is touched by a single terminal"))
    return diags
