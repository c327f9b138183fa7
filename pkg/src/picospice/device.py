"""
MOSFET model evaluation.

Level-1 (square law) drain current with a geometry-corrected threshold:

    Vt = vt0 + gamma*sqrt(vsb + phi0)
             - alpha_l*(tox/L)*(vsb + phi0)
             - alpha_v*(tox/L)*vds
             + alpha_w*(tox/W)*(vsb + phi0)

The body term is used exactly as written above by default. Setting
``conventional_body_effect`` on the model replaces it with the textbook
``gamma*(sqrt(vsb + phi0) - sqrt(phi0))``, which is zero at vsb = 0.

All evaluators work in the NMOS convention. PMOS devices are handled by
mirroring terminal voltages (see :func:`normalize_bias`).

Regions, with vov = vgs - Vt and vds >= 0:

- cutoff, vov <= 0: Id = 0 (no subthreshold conduction)
- triode, vds < vov: Id = beta*(vov*vds - vds**2/2)*(1 + lambda*vds)
- saturation: Id = beta/2*vov**2*(1 + lambda*vds)

where beta = kp*W/L.  The (1 + lambda*vds) factor multiplies both branches,
which keeps Id and its vds derivative continuous at vds = vov.

The two on-resistance helpers, :func:`ron_triode` and
:func:`ron_saturation`, are reporting diagnostics only; the simulator never
stamps them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import NamedTuple

from ._jit import njit

Q_ELECTRON = 1.602176634e-19
EPS_SI = 11.7 * 8.8541878128e-12


class DomainError(ValueError):
    """Raised when a model equation is evaluated outside its validity window."""


@dataclass(frozen=True)
class MosModel:
    """Parameter set of one MOSFET model card.

    ``vt0`` is a positive magnitude for both polarities. ``kprime`` is used as
    the current factor and as K in the triode on-resistance.
    """

    name: str = "nmos"
    polarity: str = "n"
    vt0: float = 0.5
    gamma: float = 0.58
    phi0: float = 0.84
    tox: float = 7.6e-9
    alpha_l: float = 0.0
    alpha_v: float = 0.0
    alpha_w: float = 0.0
    kprime: float = 170e-6
    lam: float = 0.06
    nb: float = 1.7e23
    eps_si: float = EPS_SI
    q: float = Q_ELECTRON
    cox_area: float = 4.5e-3
    cj: float = 3e-10
    conventional_body_effect: bool = False

    def __post_init__(self):
        if self.polarity not in ("n", "p"):
            raise ValueError(f"polarity must be 'n' or 'p', got {self.polarity!r}")
        for attr in ("vt0", "phi0", "tox", "kprime"):
            if not getattr(self, attr) > 0:
                raise ValueError(f"model {self.name}: {attr} must be > 0")
        for attr in ("lam", "cox_area", "cj"):
            if getattr(self, attr) < 0:
                raise ValueError(f"model {self.name}: {attr} must be >= 0")

    @property
    def sign(self) -> int:
        return 1 if self.polarity == "n" else -1

    def with_params(self, **params) -> "MosModel":
        return replace(self, **params)


# .model card keyword -> MosModel field
CARD_PARAMS = {
    "vt0": "vt0",
    "gamma": "gamma",
    "phi0": "phi0",
    "tox": "tox",
    "alphal": "alpha_l",
    "alphav": "alpha_v",
    "alphaw": "alpha_w",
    "kp": "kprime",
    "lambda": "lam",
    "nb": "nb",
    "cox": "cox_area",
    "cj": "cj",
}

_N035 = MosModel(name="nmos", polarity="n", conventional_body_effect=True)
_P035 = MosModel(name="pmos", polarity="p", vt0=0.65, kprime=58e-6, lam=0.09,
                 conventional_body_effect=True)

# Public textbook-class 0.35 um values, not a foundry card. vt0 is a zero-bias
# threshold, so these cards use the conventional body term.
CARDS = {
    "generic035": {"n": _N035, "p": _P035},
    # threshold exactly as written, with nonzero geometry corrections
    "eq5demo": {
        "n": _N035.with_params(alpha_l=5.0, alpha_v=3.0, alpha_w=10.0, conventional_body_effect=False),
        "p": _P035.with_params(alpha_l=5.0, alpha_v=3.0, alpha_w=10.0, conventional_body_effect=False),
    },
}


def default_model(polarity: str, card: str = "generic035", name: str | None = None) -> MosModel:
    try:
        base = CARDS[card][polarity]
    except KeyError:
        raise KeyError(f"unknown model card {card!r} / polarity {polarity!r}") from None
    return base if name is None else replace(base, name=name)


def card_models(card: str = "generic035", conventional_body_effect: bool = False):
    """Return the (nmos, pmos) pair of a bundled card."""
    return tuple(
        replace(default_model(pol, card), conventional_body_effect=conventional_body_effect)
        for pol in ("n", "p")
    )


def model_from_card(name: str, polarity: str, params: dict[str, float],
                    card: str = "generic035") -> MosModel:
    """Build a model from ``.model`` keyword parameters over the card defaults."""
    kwargs = {}
    for key, value in params.items():
        try:
            kwargs[CARD_PARAMS[key.lower()]] = float(value)
        except KeyError:
            raise KeyError(f"unknown .model parameter {key!r} for model {name}") from None
    return replace(default_model(polarity, card), name=name, **kwargs)


def card_param_values(model: MosModel) -> dict[str, float]:
    return {key: getattr(model, attr) for key, attr in CARD_PARAMS.items()}


class BiasPoint(NamedTuple):
    """Terminal voltage differences in the NMOS convention."""

    vgs: float
    vds: float
    vsb: float


class Conductances(NamedTuple):
    gm: float
    gds: float
    gmb: float
    id: float


def normalize_bias(polarity: str, vg: float, vd: float, vs: float, vb: float):
    """Map absolute terminal voltages to an NMOS-convention bias.

    Returns ``(bias, swapped)``. When the channel is reverse biased the roles
    of drain and source are exchanged so that ``bias.vds >= 0``; the caller
    negates the resulting current when ``swapped`` is true. PMOS voltages are
    mirrored, and the caller negates once more for the polarity.
    """
    p = 1.0 if polarity == "n" else -1.0
    swapped = p * (vd - vs) < 0
    if swapped:
        vd, vs = vs, vd
    return BiasPoint(p * (vg - vs), p * (vd - vs), p * (vs - vb)), swapped


# ---------------------------------------------------------------------------
# scalar kernels (jit-compiled when numba is available)

@njit(cache=True)
def _vt(vsb, vds, vt0, gamma, phi0, tox, al, av, aw, w, l, conventional):
    """Threshold and its partials with respect to vsb and vds."""
    s = vsb + phi0
    root = math.sqrt(s)
    vt = vt0 + gamma * root - al * (tox / l) * s - av * (tox / l) * vds + aw * (tox / w) * s
    if conventional:
        vt -= gamma * math.sqrt(phi0)
    dvt_dvsb = 0.5 * gamma / root - al * tox / l + aw * tox / w
    dvt_dvds = -av * tox / l
    return vt, dvt_dvsb, dvt_dvds


@njit(cache=True)
def _level1(vgs, vds, vsb, vt0, gamma, phi0, tox, al, av, aw, kp, lam, w, l, conventional):
    """Id and (gm, gds, gmb) for vds >= 0. Returns (id, gm, gds, gmb, vt)."""
    vt, dvt_dvsb, dvt_dvds = _vt(vsb, vds, vt0, gamma, phi0, tox, al, av, aw, w, l, conventional)
    vov = vgs - vt
    if vov <= 0.0:
        return 0.0, 0.0, 0.0, 0.0, vt
    beta = kp * w / l
    clm = 1.0 + lam * vds
    if vds < vov:
        core = beta * (vov * vds - 0.5 * vds * vds)
        dcore_dvov = beta * vds
        dcore_dvds = beta * (vov - vds)
    else:
        core = 0.5 * beta * vov * vov
        dcore_dvov = beta * vov
        dcore_dvds = 0.0
    ids = core * clm
    gm = dcore_dvov * clm
    # vov depends on vds and vsb through Vt
    gds = (dcore_dvds - dcore_dvov * dvt_dvds) * clm + core * lam
    gmb = -dcore_dvov * dvt_dvsb * clm
    return ids, gm, gds, gmb, vt


def _args(model: MosModel, w: float, l: float):
    return (model.vt0, model.gamma, model.phi0, model.tox, model.alpha_l,
            model.alpha_v, model.alpha_w, model.kprime, model.lam, w, l,
            model.conventional_body_effect)


def _check_geometry(w, l):
    if not (w > 0 and l > 0):
        raise DomainError(f"W and L must be positive (W={w}, L={l})")


# ---------------------------------------------------------------------------
# public evaluators

def threshold_voltage(model: MosModel, w: float, l: float, vsb: float, vds: float = 0.0) -> float:
    """Threshold voltage (NMOS convention magnitude) at the given bias."""
    _check_geometry(w, l)
    if vsb + model.phi0 <= 0:
        raise DomainError(f"vsb + phi0 must be positive (vsb={vsb}, phi0={model.phi0})")
    return _vt(vsb, vds, model.vt0, model.gamma, model.phi0, model.tox, model.alpha_l,
               model.alpha_v, model.alpha_w, w, l, model.conventional_body_effect)[0]


def _normalized(bias: BiasPoint):
    vgs, vds, vsb = bias
    if vds < 0:
        # drain and source exchange roles
        return BiasPoint(vgs - vds, -vds, vsb + vds), -1.0
    return BiasPoint(vgs, vds, vsb), 1.0


def drain_current(model: MosModel, w: float, l: float, bias: BiasPoint) -> float:
    """Channel current from drain to source, NMOS convention."""
    _check_geometry(w, l)
    nb, sign = _normalized(BiasPoint(*bias))
    return sign * _level1(nb.vgs, nb.vds, nb.vsb, *_args(model, w, l))[0]


def conductances(model: MosModel, w: float, l: float, bias: BiasPoint) -> Conductances:
    """Analytic partials of :func:`drain_current` with respect to vgs, vds, vsb.

    Only defined for ``bias.vds >= 0``; callers normalize first.
    """
    _check_geometry(w, l)
    vgs, vds, vsb = bias
    if vds < 0:
        raise DomainError("conductances expect a normalized bias with vds >= 0")
    ids, gm, gds, gmb, _ = _level1(vgs, vds, vsb, *_args(model, w, l))
    return Conductances(gm, gds, gmb, ids)


def region(model: MosModel, w: float, l: float, bias: BiasPoint) -> str:
    nb, _ = _normalized(BiasPoint(*bias))
    vt = threshold_voltage(model, w, l, nb.vsb, nb.vds)
    vov = nb.vgs - vt
    if vov <= 0:
        return "cutoff"
    return "triode" if nb.vds < vov else "saturation"


def ron_triode(model: MosModel, w: float, l: float, bias: BiasPoint) -> float:
    """Channel resistance L / (K*W*(vgs - Vt - vds)) inside the triode window."""
    vgs, vds, vsb = bias
    vt = threshold_voltage(model, w, l, vsb, vds)
    if not (0 < vds < vgs - vt):
        raise DomainError(f"ron_triode needs 0 < vds < vgs - Vt (vds={vds:g}, vgs-Vt={vgs - vt:g})")
    excess = vgs - vt - vds
    if excess <= 0:
        raise DomainError("ron_triode undefined for vgs - Vt - vds <= 0")
    return l / (model.kprime * w * excess)


def ron_saturation(model: MosModel, w: float, l: float, bias: BiasPoint,
                   delta_l: float, id: float, vds_sat: float) -> float:
    """Saturation output resistance, evaluated term for term:

        (2L / (1 - dL/L)) * (1/Id) * sqrt(q*Nb/(2*eps_si) * (Vds - Vds,sat))
    """
    _check_geometry(w, l)
    vds = bias[1]
    if vds < vds_sat:
        raise DomainError(f"ron_saturation needs vds >= vds_sat ({vds:g} < {vds_sat:g})")
    if id <= 0:
        raise DomainError("ron_saturation needs id > 0")
    if not delta_l < l:
        raise DomainError("ron_saturation needs delta_l < L")
    root = math.sqrt(model.q * model.nb / (2 * model.eps_si) * (vds - vds_sat))
    return 2 * l / (1 - delta_l / l) / id * root


def channel_length_change(model: MosModel, vds: float, vds_sat: float) -> float:
    """Pinch-off shortening sqrt(2*eps_si*(Vds - Vds,sat)/(q*Nb))."""
    return math.sqrt(2 * model.eps_si * max(vds - vds_sat, 0.0) / (model.q * model.nb))


def device_capacitances(model: MosModel, w: float, l: float):
    """Bias-independent lumped (cgs, cgd, cdb, csb)."""
    _check_geometry(w, l)
    cgate = 0.5 * model.cox_area * w * l
    cjunc = model.cj * w
    return cgate, cgate, cjunc, cjunc


def model_fields() -> list[str]:
    return [f.name for f in fields(MosModel)]
