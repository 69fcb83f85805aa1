"""Minimal SPICE-style netlist front end.

Grammar, one statement per line::

    R<name> n+ n- <ohms>
    C<name> n+ n- <farads> [ic=<volts>]
    V<name> n+ n- DC <v> | SIN(<off> <amp> <freq>) | PULSE(<v1> <v2> <td> <tr> <tf> <pw> <per>)
                         | TRI(<vlo> <vhi> <per>)
    M<name> nd ng ns type=<nmos|pmos> k=<A/V^2> vth=<V> [lambda=<1/V>] [s=<V>]
    F<name> n+ n- alpha= beta= gamma= rho= area= thick= [cbg=] [p0=]
    .tran <tstop> [<npoints>]
    .ic v(<node>)=<volts> ...
    * comment

Names and nodes are case-insensitive and stored lower case; ``gnd`` is an
alias of ground ``0``.  Numbers accept the usual engineering suffixes.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

from .errors import NetlistSyntaxError, ValidationError

GROUND = "0"
DEFAULT_N_POINTS = 201

_SUFFIX = {"t": 12, "g": 9, "meg": 6, "k": 3, "m": -3, "u": -6, "n": -9, "p": -12, "f": -15}
_NUMBER = re.compile(
    r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?)(meg|[tgkmunpf])?[a-z]*$"
)
_NODE = re.compile(r"^[a-z0-9_][a-z0-9_\-\.\[\]#]*$")
_NAME = re.compile(r"^[rcvmf][a-z0-9_\-\.\[\]#]*$")


def parse_value(token: str) -> float:
    """Convert ``'1k'``, ``'2.2u'``, ``'1meg'``, ``'1e-9'`` ... to a float.

    Raises ``ValueError`` on anything else, including non-finite results.
    """
    m = _NUMBER.match(token.strip().lower())
    if not m:
        raise ValueError(f"not a number: {token!r}")
    # scale in decimal so "10u" is exactly the double nearest 1e-5
    value = float(Decimal(m.group(1)).scaleb(_SUFFIX.get(m.group(2), 0)))
    if not math.isfinite(value):
        raise ValueError(f"number out of range: {token!r}")
    return value


# --- sources ------------------------------------------------------------------


@dataclass(frozen=True)
class DC:
    v0: float


@dataclass(frozen=True)
class Sin:
    offset: float
    amplitude: float
    freq: float


@dataclass(frozen=True)
class Pulse:
    v1: float
    v2: float
    t_delay: float
    t_rise: float
    t_fall: float
    t_width: float
    period: float


@dataclass(frozen=True)
class Tri:
    """Symmetric triangle between ``v_low`` and ``v_high``.

    Starts at the midpoint at t = 0 and rises first, so a quarter period
    reaches ``v_high`` and three quarters reach ``v_low``.
    """

    v_low: float
    v_high: float
    period: float


SourceSpec = DC | Sin | Pulse | Tri


def source_peak(spec: SourceSpec) -> float:
    """Largest magnitude the source reaches."""
    if isinstance(spec, DC):
        return abs(spec.v0)
    if isinstance(spec, Sin):
        return abs(spec.offset) + abs(spec.amplitude)
    if isinstance(spec, Pulse):
        return max(abs(spec.v1), abs(spec.v2))
    return max(abs(spec.v_low), abs(spec.v_high))


def source_excursion(spec: SourceSpec) -> float:
    """Largest departure of the source from its value at ``t = 0``."""
    if isinstance(spec, DC):
        return 0.0
    if isinstance(spec, Sin):
        return abs(spec.amplitude)
    if isinstance(spec, Pulse):
        return abs(spec.v2 - spec.v1)
    return 0.5 * abs(spec.v_high - spec.v_low)


def eval_source(spec: SourceSpec, t):
    """Source voltage at time ``t`` (float or array of seconds)."""
    scalar = np.ndim(t) == 0
    t = np.asarray(t, dtype=np.float64)
    if isinstance(spec, DC):
        v = np.full_like(t, spec.v0)
    elif isinstance(spec, Sin):
        v = spec.offset + spec.amplitude * np.sin(2.0 * np.pi * spec.freq * t)
    elif isinstance(spec, Pulse):
        v = _pulse(spec, t)
    elif isinstance(spec, Tri):
        phase = np.mod(t / spec.period, 1.0)
        shape = np.where(
            phase < 0.25, 4.0 * phase, np.where(phase < 0.75, 2.0 - 4.0 * phase, 4.0 * phase - 4.0)
        )
        mid = 0.5 * (spec.v_high + spec.v_low)
        amp = 0.5 * (spec.v_high - spec.v_low)
        v = mid + amp * shape
    else:
        raise TypeError(f"unknown source spec {spec!r}")
    return float(v) if scalar else v


def _pulse(p: Pulse, t: np.ndarray) -> np.ndarray:
    tl = t - p.t_delay
    if p.period > 0:
        tl = np.where(tl > 0, np.mod(tl, p.period), tl)
    dv = p.v2 - p.v1
    rise_end = p.t_rise
    top_end = rise_end + p.t_width
    fall_end = top_end + p.t_fall
    with np.errstate(divide="ignore", invalid="ignore"):
        up = p.v1 + dv * (tl / p.t_rise) if p.t_rise > 0 else np.full_like(tl, p.v2)
        down = p.v2 - dv * ((tl - top_end) / p.t_fall) if p.t_fall > 0 else np.full_like(tl, p.v1)
    return np.select(
        [tl <= 0, tl < rise_end, tl <= top_end, tl < fall_end],
        [np.full_like(tl, p.v1), up, np.full_like(tl, p.v2), down],
        default=p.v1,
    )


# --- circuit ------------------------------------------------------------------


@dataclass(frozen=True)
class MosfetParams:
    """Square-law style MOSFET parameters.

    ``vth`` is expressed in the device's own polarity frame, so an
    enhancement PMOS also has a positive ``vth``.
    """

    polarity: str
    k: float
    vth: float
    lam: float = 0.0
    s: float = 0.05


@dataclass(frozen=True)
class FeCapParams:
    alpha: float
    beta: float
    gamma: float
    rho: float
    area: float
    thickness: float
    cbg: float = 0.0


@dataclass(frozen=True)
class Component:
    kind: str  # "R", "C", "V", "M" or "F"
    name: str
    terminals: tuple[str, ...]
    value: float = 0.0  # ohms or farads
    source: SourceSpec | None = None
    mos: MosfetParams | None = None
    fe: FeCapParams | None = None


@dataclass
class Circuit:
    components: list[Component]
    nodes: list[str]  # ordered, includes ground
    t_stop: float
    n_points: int = DEFAULT_N_POINTS
    ics: dict[str, float] = field(default_factory=dict)
    fe_ics: dict[str, float] = field(default_factory=dict)

    def component(self, name: str) -> Component:
        name = name.lower()
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def signal_nodes(self) -> list[str]:
        return [n for n in self.nodes if n != GROUND]


# --- parser -------------------------------------------------------------------


def _node(token: str, line: int) -> str:
    n = token.lower()
    if n == "gnd":
        return GROUND
    if not _NODE.match(n):
        raise NetlistSyntaxError(f"bad node name {token!r}", line)
    return n


def _num(token: str, line: int, what: str) -> float:
    try:
        return parse_value(token)
    except ValueError:
        raise NetlistSyntaxError(f"bad {what} value {token!r}", line) from None


def _keywords(tokens: list[str], line: int, allowed: set[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for tok in tokens:
        key, eq, val = tok.partition("=")
        key = key.lower()
        if not eq or not val:
            raise NetlistSyntaxError(f"expected key=value, got {tok!r}", line)
        if key not in allowed:
            raise NetlistSyntaxError(f"unknown parameter {key!r}", line)
        if key in out:
            raise NetlistSyntaxError(f"duplicate parameter {key!r}", line)
        out[key] = val
    return out


def _split_keywords(text: str) -> list[str]:
    # tolerate spaces around '=' ("k = 1m")
    return re.sub(r"\s*=\s*", "=", text).split()


_FUNC = re.compile(r"^(sin|pulse|tri)\s*\((.*)\)$")


def _parse_source(text: str, line: int) -> SourceSpec:
    body = text.strip().lower()
    m = _FUNC.match(body)
    if m:
        kind = m.group(1)
        args = [_num(a, line, kind) for a in m.group(2).replace(",", " ").split()]
        want = {"sin": 3, "pulse": 7, "tri": 3}[kind]
        if len(args) != want:
            raise NetlistSyntaxError(f"{kind.upper()} takes {want} arguments, got {len(args)}", line)
        if kind == "sin":
            return Sin(*args)
        if kind == "pulse":
            return Pulse(*args)
        return Tri(*args)
    toks = body.split()
    if len(toks) == 2 and toks[0] == "dc":
        return DC(_num(toks[1], line, "DC"))
    if len(toks) == 1:
        return DC(_num(toks[0], line, "DC"))
    raise NetlistSyntaxError(f"cannot parse source specification {text.strip()!r}", line)


def _validate_source(spec: SourceSpec, line: int) -> None:
    if isinstance(spec, Sin) and spec.freq <= 0:
        raise ValidationError("SIN frequency must be > 0", line)
    if isinstance(spec, Tri) and spec.period <= 0:
        raise ValidationError("TRI period must be > 0", line)
    if isinstance(spec, Pulse):
        if min(spec.t_rise, spec.t_fall, spec.t_width, spec.t_delay) < 0 or spec.period < 0:
            raise ValidationError("PULSE times must be >= 0", line)


def _parse_element(tokens: list[str], raw: str, line: int):
    """Return ``(component, node_ic, p0)``; the last two are ``None`` when absent."""
    name = tokens[0].lower()
    if not _NAME.match(name):
        raise NetlistSyntaxError(f"bad element name {tokens[0]!r}", line)
    kind = name[0].upper()
    if kind == "M":
        if len(tokens) < 4:
            raise NetlistSyntaxError("MOSFET needs three nodes", line)
        nodes = tuple(_node(t, line) for t in tokens[1:4])
        kw = _keywords(_split_keywords(" ".join(tokens[4:])), line, {"type", "k", "vth", "lambda", "s"})
        for req in ("type", "k", "vth"):
            if req not in kw:
                raise NetlistSyntaxError(f"MOSFET missing {req}=", line)
        pol = kw["type"].lower()
        if pol not in ("nmos", "pmos"):
            raise ValidationError(f"MOSFET type must be nmos or pmos, got {kw['type']!r}", line)
        p = MosfetParams(
            pol,
            _num(kw["k"], line, "k"),
            _num(kw["vth"], line, "vth"),
            _num(kw["lambda"], line, "lambda") if "lambda" in kw else 0.0,
            _num(kw["s"], line, "s") if "s" in kw else 0.05,
        )
        if p.k <= 0:
            raise ValidationError("MOSFET k must be > 0", line)
        if p.s <= 0:
            raise ValidationError("MOSFET s must be > 0", line)
        return Component("M", name, nodes, mos=p), None, None

    if len(tokens) < 3:
        raise NetlistSyntaxError("element needs two nodes", line)
    nodes = (_node(tokens[1], line), _node(tokens[2], line))
    rest = tokens[3:]
    if kind == "R":
        if len(rest) != 1:
            raise NetlistSyntaxError("resistor takes exactly one value", line)
        r = _num(rest[0], line, "resistance")
        if r <= 0:
            raise ValidationError(f"resistance must be > 0, got {r!r}", line)
        return Component("R", name, nodes, value=r), None, None
    if kind == "C":
        if not rest:
            raise NetlistSyntaxError("capacitor needs a value", line)
        c = _num(rest[0], line, "capacitance")
        if c <= 0:
            raise ValidationError(f"capacitance must be > 0, got {c!r}", line)
        kw = _keywords(_split_keywords(" ".join(rest[1:])), line, {"ic"})
        node_ic = None
        if "ic" in kw:
            if nodes[1] != GROUND:
                raise ValidationError("ic= needs the capacitor's second node on ground", line)
            node_ic = (nodes[0], _num(kw["ic"], line, "ic"))
        return Component("C", name, nodes, value=c), node_ic, None
    if kind == "V":
        if not rest:
            raise NetlistSyntaxError("voltage source needs a specification", line)
        # source text is everything after the two node tokens
        m = re.match(r"^\s*\S+\s+\S+\s+\S+\s+(.*)$", raw)
        spec = _parse_source(m.group(1) if m else " ".join(rest), line)
        _validate_source(spec, line)
        return Component("V", name, nodes, source=spec), None, None
    if kind == "F":
        kw = _keywords(
            _split_keywords(" ".join(rest)),
            line,
            {"alpha", "beta", "gamma", "rho", "area", "thick", "cbg", "p0"},
        )
        for req in ("alpha", "beta", "gamma", "rho", "area", "thick"):
            if req not in kw:
                raise NetlistSyntaxError(f"ferroelectric capacitor missing {req}=", line)
        v = {k: _num(val, line, k) for k, val in kw.items()}
        p = FeCapParams(
            v["alpha"], v["beta"], v["gamma"], v["rho"], v["area"], v["thick"], v.get("cbg", 0.0)
        )
        if not p.alpha < 0:
            raise ValidationError("alpha must be < 0 (double-well free energy)", line)
        if not p.beta > 0:
            raise ValidationError("beta must be > 0", line)
        if p.gamma < 0:
            raise ValidationError("gamma must be >= 0", line)
        if p.rho <= 0 or p.area <= 0 or p.thickness <= 0:
            raise ValidationError("rho, area and thick must be > 0", line)
        if p.cbg < 0:
            raise ValidationError("cbg must be >= 0", line)
        return Component("F", name, nodes, fe=p), None, v.get("p0")
    raise NetlistSyntaxError(f"unknown element type {tokens[0][0]!r}", line)


_IC = re.compile(r"^v\(\s*([^()\s]+)\s*\)=(.+)$")


def parse(text: str | bytes) -> Circuit:
    """Parse netlist text into a validated :class:`Circuit`.

    Raises :class:`NetlistSyntaxError` for malformed statements and
    :class:`ValidationError` for invariant violations.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise NetlistSyntaxError(f"input is not valid UTF-8 ({exc.reason})") from None

    components: list[Component] = []
    first_line: dict[str, int] = {}
    ics: dict[str, float] = {}
    ic_lines: dict[str, int] = {}
    fe_ics: dict[str, float] = {}
    tran: tuple[float, int] | None = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("*"):
            continue
        tokens = stripped.split()
        head = tokens[0].lower()
        if head == ".end":
            break
        if head == ".tran":
            if tran is not None:
                raise NetlistSyntaxError("duplicate .tran", lineno)
            if len(tokens) not in (2, 3):
                raise NetlistSyntaxError(".tran takes <tstop> [<npoints>]", lineno)
            t_stop = _num(tokens[1], lineno, "tstop")
            n_points = DEFAULT_N_POINTS
            if len(tokens) == 3:
                if not re.fullmatch(r"\d+", tokens[2]):
                    raise NetlistSyntaxError(f"npoints must be an integer, got {tokens[2]!r}", lineno)
                n_points = int(tokens[2])
            if t_stop <= 0:
                raise ValidationError("tstop must be > 0", lineno)
            if n_points < 2:
                raise ValidationError("npoints must be >= 2", lineno)
            tran = (t_stop, n_points)
            continue
        if head == ".ic":
            body = re.sub(r"\s*=\s*", "=", stripped[3:].strip().lower())
            entries = re.findall(r"v\(\s*[^()\s]+\s*\)=\S+", body)
            if not entries or "".join(entries) != body.replace(" ", ""):
                raise NetlistSyntaxError("expected .ic v(<node>)=<volts> ...", lineno)
            for entry in entries:
                m = _IC.match(entry)
                node = _node(m.group(1), lineno)
                if node == GROUND:
                    raise ValidationError("cannot set an initial condition on ground", lineno)
                ics[node] = _num(m.group(2), lineno, "ic")
                ic_lines[node] = lineno
            continue
        if head.startswith("."):
            raise NetlistSyntaxError(f"unsupported directive {tokens[0]!r}", lineno)

        comp, node_ic, p0 = _parse_element(tokens, stripped, lineno)
        if node_ic is not None:
            ics[node_ic[0]] = node_ic[1]
            ic_lines[node_ic[0]] = lineno
        if p0 is not None:
            fe_ics[comp.name] = p0
        if comp.name in first_line:
            raise ValidationError(
                f"duplicate component name {comp.name!r} (first on line {first_line[comp.name]})",
                lineno,
            )
        first_line[comp.name] = lineno
        if comp.kind in "RCVF" and comp.terminals[0] == comp.terminals[1]:
            raise ValidationError(f"{comp.name} has both terminals on node {comp.terminals[0]!r}", lineno)
        components.append(comp)

    if tran is None:
        raise ValidationError("missing .tran directive")
    if not components:
        raise ValidationError("netlist has no components")

    nodes: list[str] = []
    count: dict[str, int] = {}
    for comp in components:
        for n in comp.terminals:
            if n not in count:
                nodes.append(n)
                count[n] = 0
            count[n] += 1
    if GROUND not in count:
        raise ValidationError("no component connects to ground node '0'")
    for comp in components:
        for n in comp.terminals:
            if count[n] < 2 and n != GROUND:
                raise ValidationError(
                    f"node {n!r} is dangling (only {comp.name} connects to it)", first_line[comp.name]
                )
    for node in ics:
        if node not in count:
            raise ValidationError(f"initial condition on unknown node {node!r}", ic_lines.get(node, 0))

    return Circuit(components, nodes, tran[0], tran[1], ics, fe_ics)


def format_circuit(c: Circuit) -> str:
    """Render a circuit back to netlist text that :func:`parse` reads identically."""
    out: list[str] = []
    for comp in c.components:
        n = " ".join(comp.terminals)
        if comp.kind in "RC":
            out.append(f"{comp.name} {n} {comp.value!r}")
        elif comp.kind == "V":
            out.append(f"{comp.name} {n} {_format_source(comp.source)}")
        elif comp.kind == "M":
            p = comp.mos
            out.append(
                f"{comp.name} {n} type={p.polarity} k={p.k!r} vth={p.vth!r} lambda={p.lam!r} s={p.s!r}"
            )
        else:
            p = comp.fe
            line = (
                f"{comp.name} {n} alpha={p.alpha!r} beta={p.beta!r} gamma={p.gamma!r} rho={p.rho!r}"
                f" area={p.area!r} thick={p.thickness!r} cbg={p.cbg!r}"
            )
            if comp.name in c.fe_ics:
                line += f" p0={c.fe_ics[comp.name]!r}"
            out.append(line)
    for node, v in c.ics.items():
        out.append(f".ic v({node})={v!r}")
    out.append(f".tran {c.t_stop!r} {c.n_points}")
    return "\n".join(out) + "\n"


def _format_source(s: SourceSpec) -> str:
    if isinstance(s, DC):
        return f"DC {s.v0!r}"
    if isinstance(s, Sin):
        return f"SIN({s.offset!r} {s.amplitude!r} {s.freq!r})"
    if isinstance(s, Pulse):
        return "PULSE(" + " ".join(repr(x) for x in (s.v1, s.v2, s.t_delay, s.t_rise, s.t_fall, s.t_width, s.period)) + ")"
    return f"TRI({s.v_low!r} {s.v_high!r} {s.period!r})"
