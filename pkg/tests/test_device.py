import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from picospice import device
from picospice.device import BiasPoint, DomainError, MosModel

# oracle values computed with mpmath at 30 digits, independently of the package
VT_PRINTED = 0.834664010613630219  # 0.5 + 0.4*sqrt(0.7)
RSAT_ORACLE = 682156.2372388005  # 2L/(1-dL/L)/Id*sqrt(q*Nb/(2*eps)*1)


def plain(**kw):
    """Square-law device with every threshold correction switched off."""
    base = dict(vt0=0.5, gamma=0.0, phi0=0.7, alpha_l=0.0, alpha_v=0.0, alpha_w=0.0,
                kprime=100e-6, lam=0.0)
    base.update(kw)
    return MosModel(**base)


def test_threshold_all_corrections_off():
    m = plain()
    for w, l, vsb, vds in [(1e-6, 1e-6, 0.0, 0.0), (5e-6, 0.35e-6, 1.2, 2.0), (0.5e-6, 2e-6, 3.0, 0.1)]:
        assert device.threshold_voltage(m, w, l, vsb, vds) == 0.5


def test_threshold_body_term_as_printed():
    m = plain(gamma=0.4, phi0=0.7)
    vt = device.threshold_voltage(m, 1e-6, 1e-6, vsb=0.0)
    assert vt == pytest.approx(VT_PRINTED, rel=1e-9)


def test_threshold_conventional_body_term_is_zero_at_zero_bias():
    m = plain(gamma=0.4, phi0=0.7, conventional_body_effect=True)
    assert device.threshold_voltage(m, 1e-6, 1e-6, 0.0) == pytest.approx(0.5, rel=1e-12)
    expected = 0.5 + 0.4 * (math.sqrt(1.7) - math.sqrt(0.7))
    assert device.threshold_voltage(m, 1e-6, 1e-6, 1.0) == pytest.approx(expected, rel=1e-12)


def test_threshold_width_term_direction():
    # with alpha_w > 0 the alpha_w*tox/W term shrinks as W grows, so Vt falls
    m = plain(alpha_w=10.0, tox=7.6e-9)
    w0, vsb, phi0 = 1e-6, 0.3, 0.7
    v1 = device.threshold_voltage(m, w0, 0.35e-6, vsb)
    v2 = device.threshold_voltage(m, 2 * w0, 0.35e-6, vsb)
    assert v2 < v1
    assert v1 - v2 == pytest.approx(10.0 * 7.6e-9 * (vsb + phi0) * (1 / w0 - 1 / (2 * w0)), rel=1e-9)


def test_threshold_length_and_vds_terms():
    m = plain(alpha_l=5.0, alpha_v=3.0, tox=7.6e-9)
    l = 0.35e-6
    vt = device.threshold_voltage(m, 1e-6, l, vsb=0.2, vds=1.0)
    assert vt == pytest.approx(0.5 - 5.0 * 7.6e-9 / l * 0.9 - 3.0 * 7.6e-9 / l * 1.0, rel=1e-12)


def test_threshold_domain():
    m = plain(phi0=0.7)
    with pytest.raises(DomainError):
        device.threshold_voltage(m, 1e-6, 1e-6, vsb=-0.7)
    with pytest.raises(DomainError):
        device.threshold_voltage(m, 0.0, 1e-6, vsb=0.0)


def test_drain_current_examples():
    m = plain()
    assert device.drain_current(m, 1e-6, 1e-6, BiasPoint(0.3, 1.0, 0.0)) == 0.0
    assert device.drain_current(m, 1e-6, 1e-6, BiasPoint(1.5, 0.1, 0.0)) == pytest.approx(9.5e-6, rel=1e-9)
    assert device.drain_current(m, 1e-6, 1e-6, BiasPoint(1.5, 2.0, 0.0)) == pytest.approx(5.0e-5, rel=1e-9)


def test_drain_current_source_drain_swap():
    m = plain(gamma=0.3, lam=0.05)
    # reversed channel: drain at 0, source at 0.4 V relative to the original source
    fwd = device.drain_current(m, 2e-6, 1e-6, BiasPoint(1.5, 0.4, 0.0))
    rev = device.drain_current(m, 2e-6, 1e-6, BiasPoint(1.1, -0.4, 0.4))
    assert rev == pytest.approx(-fwd, rel=1e-12)


def test_saturation_closed_form_conductances():
    m = plain()
    c = device.conductances(m, 1e-6, 1e-6, BiasPoint(1.5, 2.0, 0.0))
    assert c.gds == 0.0
    assert c.gm == pytest.approx(100e-6 * 1.0, rel=1e-12)
    assert device.conductances(m, 1e-6, 1e-6, BiasPoint(0.2, 1.0, 0.0)) == (0.0, 0.0, 0.0, 0.0)


def _bias_strategy():
    return st.tuples(st.floats(-1.0, 5.0), st.floats(0.0, 5.0), st.floats(0.0, 3.0))


@settings(max_examples=200, deadline=None)
@given(bias=_bias_strategy(), kp=st.floats(10e-6, 500e-6), lam=st.floats(0.0, 0.2),
       gamma=st.floats(0.0, 1.0), conv=st.booleans())
def test_current_continuous_at_saturation_boundary(bias, kp, lam, gamma, conv):
    m = plain(kprime=kp, lam=lam, gamma=gamma, conventional_body_effect=conv)
    vgs, _, vsb = bias
    vt = device.threshold_voltage(m, 2e-6, 1e-6, vsb)
    vov = vgs - vt
    if vov <= 1e-3:
        return
    below = device.drain_current(m, 2e-6, 1e-6, BiasPoint(vgs, vov * (1 - 1e-12), vsb))
    above = device.drain_current(m, 2e-6, 1e-6, BiasPoint(vgs, vov, vsb))
    assert below == pytest.approx(above, rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(vds=st.floats(0.0, 5.0), vsb=st.floats(0.0, 3.0), vgs=st.lists(st.floats(-1, 5), min_size=2, max_size=2))
def test_current_monotone_in_vgs(vds, vsb, vgs):
    m = device.default_model("n")
    lo, hi = sorted(vgs)
    assert device.drain_current(m, 1e-6, 0.35e-6, BiasPoint(lo, vds, vsb)) <= \
        device.drain_current(m, 1e-6, 0.35e-6, BiasPoint(hi, vds, vsb))


@settings(max_examples=100, deadline=None)
@given(v=st.tuples(st.floats(0, 3.3), st.floats(0, 3.3), st.floats(0, 3.3)))
def test_pmos_is_mirrored_nmos(v):
    vg, vd, vs = v
    vb = 3.3
    pmos = device.default_model("p")
    nmos_twin = device.default_model("p").with_params(polarity="n")
    bias_p, swap_p = device.normalize_bias("p", vg, vd, vs, vb)
    bias_n, swap_n = device.normalize_bias("n", -vg, -vd, -vs, -vb)
    assert bias_p == bias_n and swap_p == swap_n
    assert device.drain_current(pmos, 2e-6, 0.35e-6, bias_p) == device.drain_current(nmos_twin, 2e-6, 0.35e-6, bias_n)


def test_conductances_match_finite_differences():
    rng = np.random.default_rng(7)
    h = 1e-7
    cards = [device.default_model("n"), device.default_model("p"), device.default_model("n", "eq5demo")]
    checked = 0
    while checked < 100:
        m = cards[checked % len(cards)]
        w, l = rng.uniform(0.5e-6, 10e-6), rng.uniform(0.35e-6, 2e-6)
        bias = BiasPoint(rng.uniform(-0.5, 3.3), rng.uniform(0.0, 3.3), rng.uniform(0.0, 2.0))
        c = device.conductances(m, w, l, bias)
        if bias.vds < h:
            continue

        def fd(k):
            up, dn = list(bias), list(bias)
            up[k] += h
            dn[k] -= h
            return (device.drain_current(m, w, l, BiasPoint(*up))
                    - device.drain_current(m, w, l, BiasPoint(*dn))) / (2 * h)

        assert c.id == device.drain_current(m, w, l, bias)
        for analytic, k in ((c.gm, 0), (c.gds, 1), (c.gmb, 2)):
            assert abs(fd(k) - analytic) <= 1e-6 * abs(analytic) + 1e-15, (bias, k)
        checked += 1


def test_ron_triode_examples():
    assert device.ron_triode(plain(vt0=0.5, kprime=1.0), 1e-6, 1e-6, BiasPoint(2.0, 0.5, 0.0)) == pytest.approx(1.0)
    r = device.ron_triode(plain(), 10e-6, 1e-6, BiasPoint(1.5, 0.5, 0.0))
    assert r == pytest.approx(2000.0, rel=1e-9)
    assert device.ron_triode(plain(), 20e-6, 1e-6, BiasPoint(1.5, 0.5, 0.0)) == pytest.approx(r / 2, rel=1e-12)


def test_ron_triode_decreases_with_width():
    m = device.default_model("n")
    widths = np.linspace(0.5e-6, 10e-6, 40)
    r = [device.ron_triode(m, w, 0.35e-6, BiasPoint(3.3, 0.2, 0.0)) for w in widths]
    assert all(b < a for a, b in zip(r, r[1:]))


def test_ron_triode_outside_window():
    m = plain()
    for bias in (BiasPoint(1.5, 0.0, 0.0), BiasPoint(1.5, 1.2, 0.0), BiasPoint(0.2, 0.1, 0.0)):
        with pytest.raises(DomainError):
            device.ron_triode(m, 1e-6, 1e-6, bias)


def _rsat_model():
    return plain(q=1.6e-19, nb=1e23, eps_si=1.04e-10)


def test_ron_saturation_oracle():
    r = device.ron_saturation(_rsat_model(), 1e-6, 0.35e-6, BiasPoint(2.0, 2.5, 0.0),
                              delta_l=0.035e-6, id=1e-5, vds_sat=1.5)
    assert r == pytest.approx(RSAT_ORACLE, rel=1e-9)


def test_ron_saturation_boundary_and_monotone():
    m = _rsat_model()
    assert device.ron_saturation(m, 1e-6, 0.35e-6, BiasPoint(2.0, 1.5, 0.0), 0.0, 1e-5, 1.5) == 0.0
    vals = [device.ron_saturation(m, 1e-6, 0.35e-6, BiasPoint(2.0, v, 0.0), 0.01e-6, 1e-5, 1.5)
            for v in np.linspace(1.6, 3.3, 10)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_ron_saturation_domain():
    m = _rsat_model()
    with pytest.raises(DomainError):
        device.ron_saturation(m, 1e-6, 0.35e-6, BiasPoint(2.0, 1.0, 0.0), 0.0, 1e-5, 1.5)
    with pytest.raises(DomainError):
        device.ron_saturation(m, 1e-6, 0.35e-6, BiasPoint(2.0, 2.0, 0.0), 0.0, 0.0, 1.5)


def test_device_capacitances():
    m = plain(cox_area=0.0, cj=0.0)
    assert device.device_capacitances(m, 1e-6, 1e-6) == (0.0, 0.0, 0.0, 0.0)
    m = plain(cox_area=4.6e-3)
    cgs, cgd, cdb, csb = device.device_capacitances(m, 5e-6, 0.35e-6)
    assert cgs == pytest.approx(4.025e-15, rel=1e-9) and cgd == cgs
    assert cdb == csb == pytest.approx(m.cj * 5e-6)
    doubled = device.device_capacitances(m, 10e-6, 0.35e-6)
    assert doubled == pytest.approx(tuple(2 * c for c in (cgs, cgd, cdb, csb)), rel=1e-12)


def test_model_validation():
    with pytest.raises(ValueError):
        MosModel(vt0=0.0)
    with pytest.raises(ValueError):
        MosModel(lam=-0.1)
    with pytest.raises(ValueError):
        MosModel(polarity="x")


def test_card_parameters():
    m = device.model_from_card("nx", "n", {"vt0": 0.6, "KP": 200e-6, "lambda": 0.0})
    assert (m.vt0, m.kprime, m.lam) == (0.6, 200e-6, 0.0)
    with pytest.raises(KeyError):
        device.model_from_card("nx", "n", {"vto": 0.6})
    n = device.default_model("n")
    assert (n.vt0, n.kprime, n.lam, n.gamma, n.phi0) == (0.5, 170e-6, 0.06, 0.58, 0.84)
    p = device.default_model("p")
    assert (p.vt0, p.kprime, p.lam) == (0.65, 58e-6, 0.09)
    assert n.alpha_l == n.alpha_v == n.alpha_w == 0.0
