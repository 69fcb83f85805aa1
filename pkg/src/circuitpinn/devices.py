"""Closed-form device equations.

Every function here is written with the dispatching primitives from
:mod:`circuitpinn.autodiff`, so the same code evaluates on floats, arrays of
collocation points, tape variables and duals.  Both solvers and the network
loss therefore share one implementation of each device.
"""

from __future__ import annotations

import math

from . import autodiff as ad
from .netlist import FeCapParams, MosfetParams

VOV_FLOOR = 1e-12


def resistor_current(vp, vn, r: float):
    """Current from ``p`` to ``n`` through a resistor."""
    return (vp - vn) / r


def capacitor_current(dvp_dt, dvn_dt, c: float):
    return c * (dvp_dt - dvn_dt)


def _nmos_forward(vd, vg, vs, p: MosfetParams):
    # valid for vds >= 0
    vds = vd - vs
    vov = p.s * ad.softplus((vg - vs - p.vth) / p.s)
    vov = ad.clamp_min(vov, VOV_FLOOR)
    i = (0.5 * p.k) * ad.square(vov) * ad.tanh(2.0 * vds / vov)
    if p.lam:
        i = i * (1.0 + p.lam * vds)
    return i


def _nmos(vd, vg, vs, p: MosfetParams):
    forward = ad.primal(vd) - ad.primal(vs) >= 0.0
    if ad._is_array(forward):
        if forward.all():
            return _nmos_forward(vd, vg, vs, p)
        if not forward.any():
            return -_nmos_forward(vs, vg, vd, p)
        return ad.select(forward, _nmos_forward(vd, vg, vs, p), -_nmos_forward(vs, vg, vd, p))
    if forward:
        return _nmos_forward(vd, vg, vs, p)
    return -_nmos_forward(vs, vg, vd, p)


def mosfet_current(vd, vg, vs, p: MosfetParams):
    """Drain current (drain to source positive for NMOS).

    One smooth expression covers cutoff, triode and saturation: a softplus
    overdrive ``Vov = s ln(1 + exp((vgs - vth)/s))`` and
    ``Id = K/2 Vov^2 tanh(2 vds / Vov) (1 + lambda vds)``.  Negative ``vds``
    swaps the drain and source roles, so ``Id(vd, vg, vs) = -Id(vs, vg, vd)``.
    A PMOS is the NMOS expression on negated voltages, negated.
    """
    if p.polarity == "pmos":
        return -_nmos(-vd, -vg, -vs, p)
    return _nmos(vd, vg, vs, p)


def lk_internal_field(pol, p: FeCapParams):
    """``dF/dP`` for ``F = alpha P^2 + beta P^4 + gamma P^6``, in V/m."""
    p2 = ad.square(pol)
    inner = 2.0 * p.alpha + 4.0 * p.beta * p2
    if p.gamma:
        inner = inner + 6.0 * p.gamma * ad.square(p2)
    return pol * inner


def remanent_polarization(p: FeCapParams) -> float:
    """Positive zero of ``dF/dP`` (the free-energy minimum at zero field)."""
    if p.gamma == 0.0:
        return math.sqrt(-p.alpha / (2.0 * p.beta))
    # 6 gamma x^2 + 4 beta x + 2 alpha = 0 in x = P^2
    x = (-4.0 * p.beta + math.sqrt(16.0 * p.beta**2 - 48.0 * p.alpha * p.gamma)) / (12.0 * p.gamma)
    return math.sqrt(x)


def coercive_field(p: FeCapParams) -> float:
    """Magnitude of the extremum of ``dF/dP`` between the wells.

    Closed form ``(4|alpha|/3) sqrt(-alpha/(6 beta))`` when ``gamma == 0``;
    otherwise the extremum at the smaller positive root of ``d2F/dP2 = 0``.
    """
    if p.gamma == 0.0:
        return 4.0 * abs(p.alpha) / 3.0 * math.sqrt(-p.alpha / (6.0 * p.beta))
    # 30 gamma x^2 + 12 beta x + 2 alpha = 0 in x = P^2
    x = (-12.0 * p.beta + math.sqrt(144.0 * p.beta**2 - 240.0 * p.alpha * p.gamma)) / (60.0 * p.gamma)
    return abs(lk_internal_field(math.sqrt(x), p))


def fecap_residual_and_current(v_p, v_n, dv_p_dt, dv_n_dt, pol, dpol_dt, p: FeCapParams):
    """Landau-Khalatnikov residual (V/m) and branch current p to n (A)."""
    e_applied = (v_p - v_n) / p.thickness
    lk = p.rho * dpol_dt - (e_applied - lk_internal_field(pol, p))
    current = p.area * dpol_dt
    if p.cbg:
        current = current + p.cbg * (dv_p_dt - dv_n_dt)
    return lk, current
