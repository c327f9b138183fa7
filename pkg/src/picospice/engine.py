"""
DC operating point and transient analysis by Modified Nodal Analysis.

Unknowns are the non-ground node voltages followed by one branch current per
voltage source (SPICE convention: positive current flows into the ``+``
terminal, through the source, out of ``-``). The system is dense and solved
with LU; circuits here have a few dozen unknowns at most.

Capacitors (explicit ones, the lumped MOSFET capacitances and ``cmin`` on
every node) are collected into one constant capacitance matrix, so the
companion model of a step is a single matrix term:

    backward Euler:  i_C(n+1) = C (v(n+1) - v(n)) / h
    trapezoidal:     i_C(n+1) = 2C (v(n+1) - v(n)) / h - i_C(n)
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import device
from ._jit import njit
from .netlist import GROUND, Capacitor, Mosfet, Netlist, Resistor, VSource

log = logging.getLogger(__name__)

MAX_STEP_V = 0.3  # Newton damping: largest node update per iteration


class SimulationError(RuntimeError):
    pass


class ConvergenceError(SimulationError):
    def __init__(self, message, node=None, residual=None, time=None):
        super().__init__(message)
        self.node = node
        self.residual = residual
        self.time = time


class SingularMatrixError(SimulationError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class StepUnderflowError(ConvergenceError):
    pass


@dataclass(frozen=True)
class SimConfig:
    abstol: float = 1e-12
    reltol: float = 1e-4
    vntol: float = 1e-6
    gmin: float = 1e-12
    max_newton: int = 200
    tstep: float | None = None
    tstop: float | None = None
    integrator: str = "trapezoidal"
    cmin: float = 1e-18
    max_halvings: int = 8

    def __post_init__(self):
        for name in ("abstol", "reltol", "vntol", "gmin"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.integrator not in ("trapezoidal", "backward_euler"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.tstop is not None and not self.tstop > 0:
            raise ValueError("tstop must be > 0")
        if self.tstep is not None and not (0 < self.tstep <= (self.tstop or math.inf)):
            raise ValueError("tstep must lie in (0, tstop]")


@dataclass
class Waveform:
    times: np.ndarray
    nodes: list[str]
    voltages: np.ndarray  # (len(times), len(nodes))
    sources: list[str]
    currents: np.ndarray  # (len(times), len(sources)), SPICE branch convention
    source_values: np.ndarray  # (len(times), len(sources))
    meta: dict = field(default_factory=dict)

    def v(self, node: str) -> np.ndarray:
        node = node.lower()
        if node in (GROUND, "gnd"):
            return np.zeros_like(self.times)
        try:
            return self.voltages[:, self.nodes.index(node)]
        except ValueError:
            raise KeyError(f"no node {node!r} in waveform") from None

    def i(self, source: str) -> np.ndarray:
        return self.currents[:, self._src(source)]

    def source_voltage(self, source: str) -> np.ndarray:
        return self.source_values[:, self._src(source)]

    def _src(self, source: str) -> int:
        try:
            return self.sources.index(source.lower())
        except ValueError:
            raise KeyError(f"unknown source {source!r}") from None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["time", *self.nodes, *(f"i({s})" for s in self.sources)])
        for k, t in enumerate(self.times):
            row = [t, *self.voltages[k], *self.currents[k]]
            writer.writerow([f"{x:.9g}" for x in row])
        return buf.getvalue()


def supply_current(waveform: Waveform, source_name: str) -> np.ndarray:
    """Current delivered by a source into the circuit (positive = sourcing)."""
    return -waveform.i(source_name)


# ---------------------------------------------------------------------------
# MOSFET stamping kernel

# parameter columns of Circuit.mos_params
_P_SIGN, _P_VT0, _P_GAMMA, _P_PHI0, _P_TOX, _P_AL, _P_AV, _P_AW, _P_KP, _P_LAM, _P_W, _P_L, _P_CONV = range(13)


@njit(cache=True)
def _stamp_mosfets(v, nodes, params, jac, res, scale):
    """Add MOSFET channel currents and their Jacobian to (jac, res).

    ``v`` holds node voltages with ground at index 0; row ``k`` of the
    system is node ``k + 1``. ``scale`` accumulates the largest current
    magnitude touching each node.
    """
    for k in range(nodes.shape[0]):
        p = params[k, _P_SIGN]
        nd = nodes[k, 0]
        ng = nodes[k, 1]
        ns = nodes[k, 2]
        nb = nodes[k, 3]
        if p * (v[nd] - v[ns]) < 0.0:
            nd, ns = ns, nd
        vgs = p * (v[ng] - v[ns])
        vds = p * (v[nd] - v[ns])
        vsb = p * (v[ns] - v[nb])
        phi0 = params[k, _P_PHI0]
        clamped = False
        # forward-biased source junction: hold Vt at its value for vsb = -phi0/2
        if vsb < -0.5 * phi0:
            vsb = -0.5 * phi0
            clamped = True
        ids, gm, gds, gmb, vt = device._level1(
            vgs, vds, vsb, params[k, _P_VT0], params[k, _P_GAMMA], phi0,
            params[k, _P_TOX], params[k, _P_AL], params[k, _P_AV], params[k, _P_AW],
            params[k, _P_KP], params[k, _P_LAM], params[k, _P_W], params[k, _P_L],
            params[k, _P_CONV] != 0.0)
        if clamped:
            gmb = 0.0
        current = p * ids  # flows from nd to ns through the channel
        # partials of `current` w.r.t. absolute terminal voltages
        dg = gm
        dd = gds
        ds = -gm - gds + gmb
        db = -gmb
        a = abs(current)
        if nd > 0:
            r = nd - 1
            res[r] += current
            if a > scale[r]:
                scale[r] = a
            if ng > 0:
                jac[r, ng - 1] += dg
            jac[r, nd - 1] += dd
            if ns > 0:
                jac[r, ns - 1] += ds
            if nb > 0:
                jac[r, nb - 1] += db
        if ns > 0:
            r = ns - 1
            res[r] -= current
            if a > scale[r]:
                scale[r] = a
            if ng > 0:
                jac[r, ng - 1] -= dg
            if nd > 0:
                jac[r, nd - 1] -= dd
            jac[r, ns - 1] -= ds
            if nb > 0:
                jac[r, nb - 1] -= db


# ---------------------------------------------------------------------------
# circuit compilation

class Circuit:
    """Flattened netlist compiled to index arrays and constant matrices."""

    def __init__(self, netlist: Netlist, cmin: float = 1e-18):
        if not netlist.is_flat():
            raise ValueError("flatten the netlist before simulating it")
        order = []
        for dev in netlist.devices:
            for node in dev.terminals:
                if node != GROUND and node not in order:
                    order.append(node)
        self.netlist = netlist
        self.node_names: list[str] = order
        self.index = {name: k + 1 for k, name in enumerate(order)}
        self.index[GROUND] = 0
        n = len(order)
        self.n = n

        self.sources: list[VSource] = netlist.sources()
        self.source_names = [s.name for s in self.sources]
        self.size = n + len(self.sources)

        mos = netlist.mosfets()
        self.mosfets = mos
        self.mos_nodes = np.zeros((len(mos), 4), dtype=np.int64)
        self.mos_params = np.zeros((len(mos), 13))
        cap = np.zeros((n + 1, n + 1))

        def add_cap(a, b, c):
            cap[a, a] += c
            cap[b, b] += c
            cap[a, b] -= c
            cap[b, a] -= c

        for k, m in enumerate(mos):
            model = netlist.models[m.model]
            idx = [self.index[t] for t in m.terminals]
            self.mos_nodes[k] = idx
            self.mos_params[k] = (
                model.sign, model.vt0, model.gamma, model.phi0, model.tox,
                model.alpha_l, model.alpha_v, model.alpha_w, model.kprime, model.lam,
                m.w, m.l, float(model.conventional_body_effect))
            cgs, cgd, cdb, csb = device.device_capacitances(model, m.w, m.l)
            d, g, s, b = idx
            add_cap(g, s, cgs)
            add_cap(g, d, cgd)
            add_cap(d, b, cdb)
            add_cap(s, b, csb)

        gconst = np.zeros((n + 1, n + 1))
        for dev in netlist.devices:
            if isinstance(dev, Capacitor):
                add_cap(self.index[dev.a], self.index[dev.b], dev.value)
            elif isinstance(dev, Resistor):
                a, b = self.index[dev.a], self.index[dev.b]
                g = 1.0 / dev.value
                gconst[a, a] += g
                gconst[b, b] += g
                gconst[a, b] -= g
                gconst[b, a] -= g

        self.cmat = cap[1:, 1:] + cmin * np.eye(n)
        self.gres = gconst[1:, 1:]

        # voltage source incidence
        inc = np.zeros((n, len(self.sources)))
        for k, src in enumerate(self.sources):
            if self.index[src.pos]:
                inc[self.index[src.pos] - 1, k] += 1.0
            if self.index[src.neg]:
                inc[self.index[src.neg] - 1, k] -= 1.0
        self.incidence = inc

    def source_values(self, t: float, scale: float = 1.0) -> np.ndarray:
        return np.array([scale * s.value(t) for s in self.sources])

    def base_matrix(self, gmin: float) -> np.ndarray:
        """Linear part of the Jacobian: gmin, resistors, source stamps."""
        n, size = self.n, self.size
        a = np.zeros((size, size))
        a[:n, :n] = self.gres + gmin * np.eye(n)
        a[:n, n:] = self.incidence
        a[n:, :n] = self.incidence.T
        return a

    def breakpoints(self, tstop: float) -> list[float]:
        pts = set()
        for s in self.sources:
            if s.wave is not None:
                pts.update(s.wave.breakpoints(tstop))
        return sorted(p for p in pts if 0 < p < tstop)

    def node_label(self, row: int) -> str:
        if row < self.n:
            return self.node_names[row]
        return f"i({self.source_names[row - self.n]})"


# ---------------------------------------------------------------------------
# Newton-Raphson

@njit(cache=True)
def _newton_kernel(x0, jac_lin, dyn_rhs, srcvals, n, nodes, params,
                   abstol, reltol, vntol, max_iter, max_step):
    """Damped Newton on F(x) = 0.

    Returns (x, iterations, status, worst_row, worst_residual) with status
    0 = converged, 1 = iteration cap, 2 = non-finite update.
    """
    x = x0.copy()
    size = x.shape[0]
    vfull = np.zeros(n + 1)
    prev_step_ok = False
    worst_row = -1
    worst_res = np.inf
    for it in range(1, max_iter + 1):
        jac = jac_lin.copy()
        res = jac_lin @ x
        for k in range(n, size):
            res[k] -= srcvals[k - n]
        for k in range(n):
            res[k] += dyn_rhs[k]
            vfull[k + 1] = x[k]
        scale = np.zeros(n)
        _stamp_mosfets(vfull, nodes, params, jac, res, scale)
        kcl_ok = True
        worst_excess = -np.inf
        for k in range(n):
            excess = abs(res[k]) - (abstol + reltol * scale[k])
            if excess > 0.0:
                kcl_ok = False
            if excess > worst_excess:
                worst_excess = excess
                worst_row = k
                worst_res = abs(res[k])
        if kcl_ok and prev_step_ok:
            return x, it, 0, worst_row, worst_res
        dx = np.linalg.solve(jac, -res)
        step_ok = True
        for k in range(size):
            if not np.isfinite(dx[k]):
                return x, it, 2, worst_row, worst_res
        for k in range(n):
            d = dx[k]
            if d > max_step:
                d = max_step
            elif d < -max_step:
                d = -max_step
            x[k] += d
            if abs(d) > reltol * abs(x[k]) + vntol:
                step_ok = False
        for k in range(n, size):
            x[k] += dx[k]
        prev_step_ok = step_ok
    return x, max_iter, 1, worst_row, worst_res


_ZERO = np.zeros(0)


def _newton(ckt: Circuit, x0, base, dyn_g, dyn_rhs, srcvals, cfg: SimConfig, max_iter=None):
    """Solve F(x) = 0 from x0. Returns (x, iterations) or raises."""
    jac_lin = base if dyn_g is None else base + dyn_g
    if dyn_rhs is None:
        dyn_rhs = np.zeros(ckt.n)
    max_iter = max_iter or cfg.max_newton
    try:
        x, it, status, row, resid = _newton_kernel(
            np.asarray(x0, dtype=float), jac_lin, dyn_rhs, np.asarray(srcvals, dtype=float),
            ckt.n, ckt.mos_nodes, ckt.mos_params, cfg.abstol, cfg.reltol, cfg.vntol,
            max_iter, MAX_STEP_V)
    except np.linalg.LinAlgError:
        node = _singular_row(ckt, jac_lin)
        raise SingularMatrixError(f"singular MNA matrix near {node}", node=node) from None
    if status == 0:
        return x, it
    node = ckt.node_label(row) if row >= 0 else None
    if status == 2:
        raise ConvergenceError("non-finite Newton update", node=node, residual=resid)
    raise ConvergenceError(
        f"Newton did not converge in {max_iter} iterations; worst KCL residual "
        f"{resid:.3g} A at node {node}", node=node, residual=resid)


def _singular_row(ckt, jac):
    for r in range(jac.shape[0]):
        if not np.any(jac[r]):
            return ckt.node_label(r)
    return "unknown"


def _as_circuit(netlist_or_circuit, cfg):
    if isinstance(netlist_or_circuit, Circuit):
        return netlist_or_circuit
    return Circuit(netlist_or_circuit, cmin=cfg.cmin)


def _dc_solve(ckt: Circuit, cfg: SimConfig, t: float = 0.0, source_scale: float = 1.0, x0=None):
    x0 = np.zeros(ckt.size) if x0 is None else np.asarray(x0, dtype=float)
    srcvals = ckt.source_values(t, source_scale)
    try:
        return _newton(ckt, x0, ckt.base_matrix(cfg.gmin), None, None, srcvals, cfg)[0]
    except ConvergenceError as exc:
        first = exc
        log.info("plain Newton failed (%s); trying gmin stepping", exc)

    # gmin stepping: start 1e6 above the floor, decay by decades
    x = x0.copy()
    try:
        for decade in range(6, -1, -1):
            g = cfg.gmin * 10.0 ** decade
            x, _ = _newton(ckt, x, ckt.base_matrix(g), None, None, srcvals, cfg)
        return x
    except ConvergenceError as exc:
        log.info("gmin stepping failed (%s); trying source stepping", exc)

    x = np.zeros(ckt.size)
    try:
        base = ckt.base_matrix(cfg.gmin)
        for step in range(1, 11):
            x, _ = _newton(ckt, x, base, None, None, ckt.source_values(t, source_scale * step / 10), cfg)
        return x
    except ConvergenceError:
        raise first from None


def dc_operating_point(netlist, config: SimConfig | None = None, source_scale: float = 1.0,
                       time: float = 0.0) -> dict[str, float]:
    """Node voltages (and source branch currents as ``i(name)``) at DC."""
    cfg = config or SimConfig()
    if not 0.0 <= source_scale <= 1.0:
        raise ValueError("source_scale must lie in [0, 1]")
    ckt = _as_circuit(netlist, cfg)
    x = _dc_solve(ckt, cfg, time, source_scale)
    out = {GROUND: 0.0}
    out.update({name: float(x[k]) for k, name in enumerate(ckt.node_names)})
    out.update({f"i({s})": float(x[ckt.n + k]) for k, s in enumerate(ckt.source_names)})
    return out


def kcl_residuals(netlist, solution: dict[str, float], config: SimConfig | None = None):
    """Per-node (residual, largest branch current) at a DC solution, for checking."""
    cfg = config or SimConfig()
    ckt = _as_circuit(netlist, cfg)
    x = np.array([solution[nm] for nm in ckt.node_names] +
                 [solution[f"i({s})"] for s in ckt.source_names])
    base = ckt.base_matrix(cfg.gmin)
    jac = base.copy()
    res = base @ x
    res[ckt.n:] -= ckt.source_values(0.0)
    scale = np.zeros(ckt.n)
    vfull = np.concatenate([[0.0], x[:ckt.n]])
    _stamp_mosfets(vfull, ckt.mos_nodes, ckt.mos_params, jac, res, scale)
    for k, src in enumerate(ckt.sources):
        for node in (src.pos, src.neg):
            r = ckt.index[node] - 1
            if r >= 0:
                scale[r] = max(scale[r], abs(x[ckt.n + k]))
    return {name: (float(res[k]), float(scale[k])) for k, name in enumerate(ckt.node_names)}


# ---------------------------------------------------------------------------
# transient

def default_tstep(netlist: Netlist) -> float | None:
    """1/200 of the shortest pulse width (PULSE width or PWL plateau)."""
    widths = []
    for src in netlist.sources():
        w = src.wave
        if w is None:
            continue
        if hasattr(w, "width"):
            if w.width > 0:
                widths.append(w.width)
        else:
            pts = w.points
            widths.extend(t1 - t0 for (t0, v0), (t1, v1) in zip(pts, pts[1:]) if v0 == v1)
    return min(widths) / 200 if widths else None


def transient(netlist, config: SimConfig) -> Waveform:
    """Fixed-step transient from the t=0 DC solution to ``config.tstop``."""
    cfg = config
    if cfg.tstop is None:
        raise ValueError("transient needs tstop")
    ckt = _as_circuit(netlist, cfg)
    tstep = cfg.tstep or default_tstep(ckt.netlist) or cfg.tstop / 1000
    tstep = min(tstep, cfg.tstop)
    n = ckt.n
    cmat = ckt.cmat
    base = ckt.base_matrix(cfg.gmin)
    stops = ckt.breakpoints(cfg.tstop) + [cfg.tstop]

    x = _dc_solve(ckt, cfg, 0.0)
    ic = np.zeros(n)
    times = [0.0]
    states = [x.copy()]
    srcs = [ckt.source_values(0.0)]

    t = 0.0
    first_after_break = True
    stop_idx = 0
    min_h = tstep / 2 ** cfg.max_halvings
    while t < cfg.tstop:
        while stops[stop_idx] <= t * (1 + 1e-12) + 1e-24:
            stop_idx += 1
        target = stops[stop_idx]
        h = tstep
        while True:
            t_new = t + h
            hit = t_new >= target * (1 - 1e-9)
            if hit:
                t_new = target
            hh = t_new - t
            use_be = cfg.integrator == "backward_euler" or first_after_break
            if use_be:
                g = cmat / hh
                rhs = -(g @ x[:n])
            else:
                g = 2.0 * cmat / hh
                rhs = -(g @ x[:n]) - ic
            srcvals = ckt.source_values(t_new)
            try:
                x_new, _ = _newton(ckt, x, base, _pad(g, ckt.size), rhs, srcvals, cfg)
                break
            except ConvergenceError as exc:
                h = hh / 2
                if h < min_h:
                    raise StepUnderflowError(
                        f"timestep underflow at t={t:.6g}s: {exc}", node=exc.node,
                        residual=exc.residual, time=t) from None
        ic = g @ x_new[:n] + rhs
        x = x_new
        t = t_new
        first_after_break = hit
        times.append(t)
        states.append(x.copy())
        srcs.append(srcvals)

    states = np.array(states)
    return Waveform(
        times=np.array(times),
        nodes=list(ckt.node_names),
        voltages=states[:, :n],
        sources=list(ckt.source_names),
        currents=states[:, n:],
        source_values=np.array(srcs).reshape(len(times), len(ckt.sources)),
        meta={"tstep": tstep, "integrator": cfg.integrator},
    )


def _pad(g, size):
    n = g.shape[0]
    if n == size:
        return g
    out = np.zeros((size, size))
    out[:n, :n] = g
    return out


def with_overrides(config: SimConfig, **kw) -> SimConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
