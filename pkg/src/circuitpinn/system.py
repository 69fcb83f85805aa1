"""Assemble a circuit into a square DAE ``r(u, du/dt, t) = 0``.

Unknowns are ordered as: non-ground node voltages (netlist order), one
branch current per voltage source, one polarization per ferroelectric
capacitor.  Equations follow the same order: KCL per node, the source
constraint per voltage source, the Landau-Khalatnikov equation per
ferroelectric capacitor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import devices
from .errors import StructureError
from .netlist import GROUND, Circuit, eval_source, source_peak

KCL_FLOOR = 1e-12


@dataclass(frozen=True)
class UnknownDesc:
    name: str
    kind: str  # "voltage", "current" or "polarization"
    scale: float


@dataclass(frozen=True)
class _Stamp:
    kind: str
    idx: tuple[int, ...]  # unknown index per terminal, -1 for ground
    row: int = -1  # branch/state unknown (and equation) index
    comp: object = None


@dataclass(frozen=True, eq=False)
class DaeSystem:
    """Immutable DAE built from a circuit; see :func:`build_system`."""

    circuit: Circuit
    unknowns: tuple[UnknownDesc, ...]
    eq_names: tuple[str, ...]
    eq_scales: np.ndarray
    u0: np.ndarray
    held: np.ndarray  # True where u0 comes from an explicit .ic / ic= / p0=
    t_stop: float
    _stamps: tuple[_Stamp, ...] = field(repr=False, default=())

    @property
    def n(self) -> int:
        return len(self.unknowns)

    @property
    def names(self) -> list[str]:
        return [u.name for u in self.unknowns]

    @property
    def scales(self) -> np.ndarray:
        return np.array([u.scale for u in self.unknowns])

    def raw_residual(self, u, du_dt, t) -> list:
        """Unscaled residual rows; elements may be floats, arrays, Vars or Duals."""
        rows: list = [None] * self.n

        def add(i, x):
            if i >= 0:
                rows[i] = x if rows[i] is None else rows[i] + x

        def sub(i, x):
            if i >= 0:
                rows[i] = -x if rows[i] is None else rows[i] - x

        def val(i):
            return 0.0 if i < 0 else u[i]

        def der(i):
            return 0.0 if i < 0 else du_dt[i]

        for st in self._stamps:
            c = st.comp
            if st.kind == "R":
                a, b = st.idx
                i = devices.resistor_current(val(a), val(b), c.value)
                add(a, i)
                sub(b, i)
            elif st.kind == "C":
                a, b = st.idx
                i = devices.capacitor_current(der(a), der(b), c.value)
                add(a, i)
                sub(b, i)
            elif st.kind == "M":
                d, g, s = st.idx
                i = devices.mosfet_current(val(d), val(g), val(s), c.mos)
                add(d, i)
                sub(s, i)
            elif st.kind == "V":
                a, b = st.idx
                i = u[st.row]
                add(a, i)
                sub(b, i)
                rows[st.row] = val(a) - val(b) - eval_source(c.source, t)
            else:
                a, b = st.idx
                lk, i = devices.fecap_residual_and_current(
                    val(a), val(b), der(a), der(b), u[st.row], du_dt[st.row], c.fe
                )
                add(a, i)
                sub(b, i)
                rows[st.row] = lk
        return [0.0 if r is None else r for r in rows]

    def residual(self, u, du_dt, t) -> list:
        """Residual rows divided by :attr:`eq_scales`."""
        raw = self.raw_residual(u, du_dt, t)
        return [r * (1.0 / s) for r, s in zip(raw, self.eq_scales)]

    def source_pinned(self) -> np.ndarray:
        """True for node voltages tied to ground through voltage sources alone."""
        pinned = {GROUND}
        vsrcs = [comp.terminals for comp in self.circuit.components if comp.kind == "V"]
        grown = True
        while grown:
            grown = False
            for a, b in vsrcs:
                if (a in pinned) != (b in pinned):
                    pinned |= {a, b}
                    grown = True
        return np.array([u.kind == "voltage" and u.name[2:-1] in pinned for u in self.unknowns])

    def residual_vector(self, u: np.ndarray, du_dt: np.ndarray, t: float) -> np.ndarray:
        """Plain-float convenience wrapper returning an ndarray."""
        return np.array([float(r) for r in self.residual(list(u), list(du_dt), t)])


def residual(sys: DaeSystem, u, du_dt, t):
    return sys.residual(u, du_dt, t)


def _node_kcl_scales(c: Circuit) -> dict[str, float]:
    scale = {n: KCL_FLOOR for n in c.signal_nodes}

    def bump(node, x):
        if node != GROUND:
            scale[node] = max(scale[node], x)

    for comp in c.components:
        if comp.kind == "R":
            x = 1.0 / comp.value
        elif comp.kind == "C":
            x = comp.value / c.t_stop
        elif comp.kind == "M":
            x = 0.5 * comp.mos.k
        elif comp.kind == "F":
            x = comp.fe.area * devices.remanent_polarization(comp.fe) / c.t_stop
            x = max(x, comp.fe.cbg / c.t_stop)
        else:
            continue
        for node in comp.terminals:
            bump(node, x)
    return scale


def _peak_voltage(c: Circuit) -> float:
    peaks = [source_peak(comp.source) for comp in c.components if comp.kind == "V"]
    return max(peaks, default=0.0)


def equation_scales(c: Circuit) -> np.ndarray:
    """Per-equation divisors that bring every residual row to order one.

    KCL rows use the largest characteristic current of the devices at the
    node (``1V/R``, ``C 1V/t_stop``, ``K 1V^2/2``, ``area Pr/t_stop``);
    source rows use the source's peak voltage (at least 1 V); LK rows use
    the largest applied field a source could produce, floored at
    ``|alpha| Pr``.
    """
    kcl = _node_kcl_scales(c)
    out = [kcl[n] for n in c.signal_nodes]
    out += [max(source_peak(comp.source), 1.0) for comp in c.components if comp.kind == "V"]
    vpeak = _peak_voltage(c)
    for comp in c.components:
        if comp.kind == "F":
            p = comp.fe
            out.append(max(vpeak / p.thickness, abs(p.alpha) * devices.remanent_polarization(p)))
    return np.array(out, dtype=np.float64)


def _check_dc_paths(c: Circuit) -> None:
    parent = {n: n for n in c.nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for comp in c.components:
        if comp.kind in "RV":
            a, b = comp.terminals
        elif comp.kind == "M":
            a, _, b = comp.terminals
        else:
            continue
        parent[find(a)] = find(b)
    anchored = {find(GROUND)} | {find(n) for n in c.ics}
    floating = [n for n in c.signal_nodes if find(n) not in anchored]
    if floating:
        raise StructureError(
            "no DC path to ground and no .ic for node(s) " + ", ".join(repr(n) for n in floating)
        )


def build_system(c: Circuit) -> DaeSystem:
    """Build the DAE for circuit ``c``.

    Raises :class:`StructureError` when a node is only reachable through
    capacitive elements and carries no initial condition.
    """
    _check_dc_paths(c)
    nodes = c.signal_nodes
    index = {n: i for i, n in enumerate(nodes)}
    index[GROUND] = -1
    vsrcs = [comp for comp in c.components if comp.kind == "V"]
    fecaps = [comp for comp in c.components if comp.kind == "F"]

    kcl = _node_kcl_scales(c)
    vscale = max(1.0, _peak_voltage(c), *(abs(v) for v in c.ics.values()))
    unknowns = [UnknownDesc(f"v({n})", "voltage", vscale) for n in nodes]
    eq_names = [f"kcl({n})" for n in nodes]
    for comp in vsrcs:
        iscale = max((kcl[n] for n in comp.terminals if n != GROUND), default=KCL_FLOOR)
        unknowns.append(UnknownDesc(f"i({comp.name})", "current", iscale))
        eq_names.append(f"src({comp.name})")
    for comp in fecaps:
        unknowns.append(UnknownDesc(f"p({comp.name})", "polarization", devices.remanent_polarization(comp.fe)))
        eq_names.append(f"lk({comp.name})")

    n = len(unknowns)
    u0 = np.zeros(n)
    held = np.zeros(n, dtype=bool)
    for node, v in c.ics.items():
        u0[index[node]] = v
        held[index[node]] = True

    stamps = []
    branch = len(nodes)
    state = len(nodes) + len(vsrcs)
    for comp in c.components:
        idx = tuple(index[t] for t in comp.terminals)
        if comp.kind == "V":
            stamps.append(_Stamp("V", idx, branch, comp))
            branch += 1
        elif comp.kind == "F":
            if comp.name in c.fe_ics:
                u0[state] = c.fe_ics[comp.name]
                held[state] = True
            stamps.append(_Stamp("F", idx, state, comp))
            state += 1
        else:
            stamps.append(_Stamp(comp.kind, idx, -1, comp))

    return DaeSystem(
        circuit=c,
        unknowns=tuple(unknowns),
        eq_names=tuple(eq_names),
        eq_scales=equation_scales(c),
        u0=u0,
        held=held,
        t_stop=c.t_stop,
        _stamps=tuple(stamps),
    )
