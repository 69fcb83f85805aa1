"""Waveform network and its residual-driven training loop.

The network maps scaled time ``tau = t / t_stop`` to scaled unknowns.  Time
derivatives of the outputs are exact: they are propagated alongside the
activations (forward mode) and the whole construction is then
differentiated with respect to the weights (reverse mode).

Two evaluation routes exist:

* :func:`forward_with_time_derivative` / :func:`loss` build everything on a
  scalar :class:`~circuitpinn.autodiff.Tape` with one variable per weight.
  Exact but slow; used for small networks and as the reference in tests.
* :func:`loss_and_grad` (used by :func:`train`) evaluates the network for all
  collocation points at once with numpy and applies the same
  forward-over-reverse rules layer by layer; the circuit residual still goes
  through the tape, with each unknown an array over collocation points.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NonFiniteError
from .system import DaeSystem
from .waveform import Waveform

log = logging.getLogger(__name__)

# Epochs and learning rates per bundled case.
TABLE_I = {
    "amplifier": {"epochs": 25000, "lr": 5e-3},
    "ringosc5": {"epochs": 20000, "lr": 5e-3},
    "feram": {"epochs": 60000, "lr": 2e-4},
}

# Bundled cases pin their initial state exactly; soft remains the default.
CASE_IC_MODE = {"amplifier": "hard", "ringosc5": "hard", "feram": "hard"}


@dataclass
class MlpParams:
    """Weights ``(fan_in, fan_out)`` and biases of a tanh MLP, plus output scaling."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    t_stop: float = 1.0
    scales: np.ndarray | None = None
    u_init: np.ndarray | None = None
    ic_mode: str = "soft"

    @property
    def layers(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "MlpParams":
        return replace(
            self,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def out_scales(self) -> np.ndarray:
        return np.ones(self.n_outputs) if self.scales is None else self.scales

    def init_state(self) -> np.ndarray:
        return np.zeros(self.n_outputs) if self.u_init is None else self.u_init


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5000
    lr: float = 5e-3
    n_collocation: int = 2001
    ic_weight: float = 100.0
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64, 64)
    adam: tuple[float, float, float] = (0.9, 0.999, 1e-8)
    resample: str = "fixed_grid"  # or "uniform_random"
    ic_mode: str = "soft"  # or "hard"
    causal: float = 0.0  # residual weight exp(-causal * earlier residual); 0 is uniform

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.n_collocation < 2:
            raise ConfigError("n_collocation must be >= 2")
        if not self.ic_weight >= 0:
            raise ConfigError("ic_weight must be >= 0")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden widths must be >= 1, got {self.hidden}")
        if self.resample not in ("fixed_grid", "uniform_random"):
            raise ConfigError(f"unknown resample mode {self.resample!r}")
        if not self.causal >= 0:
            raise ConfigError("causal must be >= 0")
        if self.ic_mode not in ("soft", "hard"):
            raise ConfigError(f"unknown ic_mode {self.ic_mode!r}")
        b1, b2, eps = self.adam
        if not (0 <= b1 < 1 and 0 <= b2 < 1 and eps > 0):
            raise ConfigError(f"bad Adam constants {self.adam}")


def case_config(name: str, **overrides) -> "TrainConfig":
    """Training configuration for a bundled case, with optional overrides."""
    preset = {**TABLE_I[name], "ic_mode": CASE_IC_MODE[name]}
    return TrainConfig(**{**preset, **overrides})


def init_network(layers, seed: int) -> MlpParams:
    """Xavier-uniform weights and zero biases, reproducible per seed."""
    layers = [int(x) for x in layers]
    if len(layers) < 2 or any(x < 1 for x in layers):
        raise ConfigError(f"layer sizes must all be >= 1, got {layers}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layers[:-1], layers[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


# Floor on an output scale, as a fraction of the static scale, for unknowns
# the sources barely move.
SWING_FLOOR = 1e-2


def output_scales(sys: DaeSystem, u_init: np.ndarray) -> np.ndarray:
    """Per-unknown output scale: the expected excursion about ``u_init``.

    Each unknown takes its small-signal swing under the time-varying
    sources, floored at ``SWING_FLOOR`` of its static scale.  With no
    time-varying source the swing is unknown a priori: nodes pinned by
    sources keep the floor and everything else its static scale.  A network
    output of order one then spans the signal rather than the bias, and
    source-pinned rails contribute little noise to the rows they enter.
    """
    from .refsolver import small_signal_swing

    static = sys.scales
    swing = small_signal_swing(sys, u_init)
    if not np.any(swing > 0):
        swing = np.where(sys.source_pinned(), 0.0, static)
    return np.maximum(swing, SWING_FLOOR * static)


def attach_system(params: MlpParams, sys: DaeSystem, u_init: np.ndarray, ic_mode: str,
                  scales: np.ndarray | None = None) -> MlpParams:
    """Copy of ``params`` carrying the output scaling and initial state for ``sys``."""
    scales = sys.scales if scales is None else scales
    return replace(params, t_stop=sys.t_stop, scales=np.asarray(scales, float).copy(),
                   u_init=np.asarray(u_init, float).copy(), ic_mode=ic_mode)


# The network sees x = 2 tau - 1 rather than tau: with zero biases and inputs
# confined to [0, 1], every first-layer unit starts as a near-linear function
# of time and oscillatory targets are not reachable in practical epoch counts.
INPUT_SLOPE = 2.0


def _centre(tau):
    return tau * INPUT_SLOPE - 1.0


# --- scalar tape route --------------------------------------------------------


def param_leaves(params: MlpParams, tape: ad.Tape):
    """Register every weight and bias as a tape leaf.

    Returns ``(weights, biases, flat)`` where the first two mirror the array
    shapes as nested lists of ``Var`` and ``flat`` lists the leaves in
    :meth:`MlpParams.arrays` order (row-major within each array).
    """
    weights = [[[tape.var(x) for x in row] for row in w] for w in params.weights]
    biases = [[tape.var(x) for x in b] for b in params.biases]
    flat = [v for w in weights for row in w for v in row] + [v for b in biases for v in b]
    return weights, biases, flat


def forward_with_time_derivative(params: MlpParams, sys: DaeSystem, t: float, leaves=None, tape=None):
    """Unknowns and their exact time derivatives at ``t`` as tape variables.

    ``leaves`` is the result of :func:`param_leaves`; when omitted a new tape
    is created.  Returns ``(u, du_dt, leaves)``.
    """
    if leaves is None:
        tape = ad.Tape() if tape is None else tape
        leaves = param_leaves(params, tape)
    weights, biases, _ = leaves
    t_stop = sys.t_stop
    tau = t / t_stop
    a = [ad.seed_input(tau) * INPUT_SLOPE - 1.0]
    n_layers = len(weights)
    for li, (w, b) in enumerate(zip(weights, biases)):
        z = []
        for j in range(len(b)):
            acc = b[j]
            for i in range(len(a)):
                acc = a[i] * w[i][j] + acc
            z.append(acc)
        a = z if li == n_layers - 1 else [ad.tanh(x) for x in z]
    scales = params.out_scales()
    u0 = params.init_state()
    u, du = [], []
    for i, o in enumerate(a):
        if params.ic_mode == "hard":
            u.append(u0[i] + tau * scales[i] * o.value)
            du.append((scales[i] / t_stop) * (o.value + tau * o.tangent))
        else:
            u.append(u0[i] + scales[i] * o.value)
            du.append((scales[i] / t_stop) * o.tangent)
    return u, du, leaves


def loss(params: MlpParams, sys: DaeSystem, times, cfg: TrainConfig, tape: ad.Tape | None = None):
    """Collocation loss as a scalar tape variable.

    Mean squared scaled residual over ``times`` and equations, plus
    ``ic_weight`` times the mean squared scaled initial-condition error
    (soft mode only).  Returns ``(root, leaves)``.
    """
    tape = ad.Tape() if tape is None else tape
    leaves = param_leaves(params, tape)
    times = np.asarray(times, dtype=np.float64)
    n = sys.n
    per_time = []
    for t in times:
        u, du, _ = forward_with_time_derivative(params, sys, float(t), leaves)
        per_time.append([ad.square(r) for r in sys.residual(u, du, float(t))])
    weights = causal_weights(list(zip(*per_time)), times.size, cfg.causal, squared=True)
    acc = 0.0
    for k, squares in enumerate(per_time):
        w = 1.0 if weights is None else float(weights[k])
        for sq in squares:
            acc = acc + sq * w
    total = acc * (1.0 / (times.size * n))
    if params.ic_mode == "soft" and cfg.ic_weight > 0:
        u, _, _ = forward_with_time_derivative(params, sys, 0.0, leaves)
        target = params.init_state()
        scales = params.out_scales()
        ic = 0.0
        for i in range(n):
            ic = ic + ad.square((u[i] - target[i]) * (1.0 / scales[i]))
        total = total + ic * (cfg.ic_weight / n)
    if not isinstance(total, ad.Var):
        total = tape.var(total)
    return total, leaves


# --- batched route ------------------------------------------------------------


class _Buffers:
    """Reusable scratch arrays; training reuses one set across epochs."""

    def __init__(self) -> None:
        self._arrays: dict = {}

    def __call__(self, key, shape) -> np.ndarray:
        a = self._arrays.get(key)
        if a is None or a.shape != shape:
            a = self._arrays[key] = np.empty(shape)
        return a


def _forward(params: MlpParams, tau: np.ndarray, tangents: bool = True, buf: _Buffers | None = None):
    """Outputs, their tau-derivatives and the cache needed by :func:`_backward`.

    Hidden activations and their tangents are stacked as ``[h; dh]`` so each
    layer is one matmul.  Returned arrays may live in ``buf`` and are
    overwritten by the next call that uses the same buffers.
    """
    buf = _Buffers() if buf is None else buf
    n_pts = tau.size
    rows = 2 * n_pts if tangents else n_pts
    ws, bs = params.weights, params.biases
    if not ws:
        raise ConfigError("network has no layers")
    x = _centre(tau)[:, None]
    acts = []  # per hidden layer: stacked [h; dh] and (sech2, dz)
    a = None
    for li, (w, b) in enumerate(zip(ws, bs)):
        width = w.shape[1]
        z = buf(("z", li), (rows, width))
        if li == 0:
            np.multiply(x, w, out=z[:n_pts])
            if tangents:
                z[n_pts:] = INPUT_SLOPE * w
        else:
            np.matmul(a, w, out=z)
        z[:n_pts] += b
        if li == len(ws) - 1:
            return z[:n_pts], (z[n_pts:] if tangents else None), (x, acts, n_pts)
        a = buf(("a", li), (rows, width))
        h = np.tanh(z[:n_pts], out=a[:n_pts])
        sech2 = None
        if tangents:
            sech2 = buf(("s", li), (n_pts, width))
            np.multiply(h, h, out=sech2)
            np.subtract(1.0, sech2, out=sech2)
            np.multiply(sech2, z[n_pts:], out=a[n_pts:])
        acts.append((a, sech2, z[n_pts:] if tangents else None))


def _backward(params: MlpParams, cache, g_o: np.ndarray, g_do: np.ndarray | None,
              buf: _Buffers | None = None) -> list[np.ndarray]:
    """Parameter gradients from adjoints of the outputs and of their tangents."""
    buf = _Buffers() if buf is None else buf
    x, acts, n_pts = cache
    ws = params.weights
    gw: list = [None] * len(ws)
    gb: list = [None] * len(ws)
    both = g_do is not None
    rows = 2 * n_pts if both else n_pts
    g = buf(("g", len(ws) - 1), (rows, ws[-1].shape[1]))
    g[:n_pts] = g_o
    if both:
        g[n_pts:] = g_do
    for li in range(len(ws) - 1, -1, -1):
        gb[li] = g[:n_pts].sum(axis=0)
        if li == 0:
            gw[0] = x.T @ g[:n_pts]
            if both:
                gw[0] += INPUT_SLOPE * g[n_pts:].sum(axis=0)[None, :]
            break
        a, sech2, dz = acts[li - 1]
        gw[li] = a[:rows].T @ g
        g_a = buf(("g", li - 1), (rows, a.shape[1]))
        np.matmul(g, ws[li].T, out=g_a)
        h = a[:n_pts]
        if sech2 is None:
            sech2 = 1.0 - h * h
        # a = tanh(z), da = (1 - a^2) dz
        if both:
            tmp = buf(("tmp", li), h.shape)
            np.multiply(h, dz, out=tmp)
            tmp *= g_a[n_pts:]
            tmp *= 2.0
            g_a[:n_pts] -= tmp
            g_a[n_pts:] *= sech2
        g_a[:n_pts] *= sech2
        g = g_a
    return gw + gb


def _map_outputs(params: MlpParams, tau: np.ndarray, o: np.ndarray, do: np.ndarray | None):
    scales = params.out_scales()
    t_stop = params.t_stop
    if params.ic_mode == "hard":
        u = params.init_state() + tau[:, None] * scales * o
        du = (scales / t_stop) * (o + tau[:, None] * do) if do is not None else None
    else:
        u = params.init_state() + scales * o
        du = (scales / t_stop) * do if do is not None else None
    return u, du


def causal_weights(rows, n_pts: int, causal: float, squared: bool = False):
    """Per-point weights ``exp(-causal * mean_{k<i} l_k)`` or ``None`` when off.

    ``l_k`` is the squared scaled residual at point ``k`` summed over
    equations (``rows`` holds residual rows, or squared rows when
    ``squared``) and the mean runs over all points, so the weights do not
    depend on the grid density.  They are constants for the gradient.
    """
    if causal == 0.0:
        return None
    per_point = np.zeros(n_pts)
    for r in rows:
        if isinstance(r, (tuple, list)):
            r = [ad.primal(x) for x in r]
        x = np.broadcast_to(np.asarray(ad.primal(r), dtype=np.float64), (n_pts,))
        per_point += x if squared else x * x
    before = np.concatenate([[0.0], np.cumsum(per_point)[:-1]]) / n_pts
    return np.exp(-causal * before)


def loss_and_grad(params: MlpParams, sys: DaeSystem, times: np.ndarray, cfg: TrainConfig,
                  buf: _Buffers | None = None):
    """Loss value and gradients (in :meth:`MlpParams.arrays` order), vectorised.

    Also returns ``u`` at ``times`` (the forward primals of this evaluation).
    """
    times = np.asarray(times, dtype=np.float64)
    tau = times / params.t_stop
    n_pts = times.size
    o, do, cache = _forward(params, tau, buf=buf)
    u, du = _map_outputs(params, tau, o, do)
    n = sys.n

    tape = ad.Tape()
    uv = [tape.var(u[:, i]) for i in range(n)]
    dv = [tape.var(du[:, i]) for i in range(n)]
    rows = sys.residual(uv, dv, times)
    weights = causal_weights(rows, n_pts, cfg.causal)
    acc = 0.0
    for r in rows:
        sq = ad.square(r)
        acc = acc + ad.total(sq if weights is None else sq * weights)
    inv = 1.0 / (n_pts * n)
    if isinstance(acc, ad.Var):
        grads = tape.backward(acc, seed=inv, check_finite=False)
        grads.check_finite(uv + dv)
        g_u = np.stack([grads[v] for v in uv], axis=1)
        g_du = np.stack([grads[v] for v in dv], axis=1)
        value = acc.value * inv
    else:
        g_u = np.zeros_like(u)
        g_du = np.zeros_like(du)
        value = float(acc) * inv

    scales = params.out_scales()
    if params.ic_mode == "hard":
        g_o = g_u * tau[:, None] * scales + g_du * (scales / params.t_stop)
        g_do = g_du * tau[:, None] * (scales / params.t_stop)
    else:
        g_o = g_u * scales
        g_do = g_du * (scales / params.t_stop)
    grad = _backward(params, cache, g_o, g_do, buf)

    if params.ic_mode == "soft" and cfg.ic_weight > 0:
        o0, _, cache0 = _forward(params, np.zeros(1), tangents=False)
        err = o0[0]  # (u(0) - u_init) / scale
        value += cfg.ic_weight * float(np.mean(err * err))
        g0 = (2.0 * cfg.ic_weight / n) * err[None, :]
        grad0 = _backward(params, cache0, g0, None)
        grad = [g + h for g, h in zip(grad, grad0)]
    return float(value), grad, u


class Adam:
    """Full-batch Adam with bias correction."""

    def __init__(self, arrays: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        step = self.lr / bc1
        for p, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= step * m / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainResult:
    params: MlpParams
    history: list[float]
    best_loss: float
    best_epoch: int
    seconds: float
    last_u: np.ndarray | None = field(default=None, repr=False)

    def __iter__(self):
        # allows ``params, history = train(...)``
        return iter((self.params, self.history))


def collocation_times(sys: DaeSystem, cfg: TrainConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    if cfg.resample == "uniform_random" and rng is not None:
        pts = rng.uniform(0.0, sys.t_stop, cfg.n_collocation - 1)
        return np.concatenate([[0.0], np.sort(pts)])
    return np.linspace(0.0, sys.t_stop, cfg.n_collocation)


def train(sys: DaeSystem, cfg: TrainConfig, u_init: np.ndarray | None = None,
          params: MlpParams | None = None, progress=None) -> TrainResult:
    """Minimise the collocation loss with full-batch Adam.

    ``u_init`` is the initial state the IC term (or hard constraint) pins;
    it defaults to the DC operating point with explicit initial conditions
    held.  Returns the best iterate seen, not the last one.  ``progress`` is
    called as ``progress(epoch, loss)`` after every epoch.
    """
    cfg.validate()
    if u_init is None:
        from .refsolver import dc_operating_point

        u_init = dc_operating_point(sys)
    if params is None:
        params = init_network([1, *cfg.hidden, sys.n], cfg.seed)
    elif params.n_outputs != sys.n:
        raise ConfigError(f"network has {params.n_outputs} outputs, system has {sys.n} unknowns")
    params = attach_system(params.copy(), sys, u_init, cfg.ic_mode, output_scales(sys, u_init))

    rng = np.random.default_rng(cfg.seed + 1)
    fixed = collocation_times(sys, cfg)
    b1, b2, eps = cfg.adam
    arrays = params.arrays()
    opt = Adam(arrays, cfg.lr, b1, b2, eps)
    history: list[float] = []
    best_loss, best_epoch, best = np.inf, -1, params.copy()
    last_u = None
    buf = _Buffers()
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        times = fixed if cfg.resample == "fixed_grid" else collocation_times(sys, cfg, rng)
        try:
            value, grad, last_u = loss_and_grad(params, sys, times, cfg, buf)
        except NonFiniteError as exc:
            raise NonFiniteError(f"epoch {epoch}: {exc}", node=exc.node, epoch=epoch,
                                 best_params=best) from None
        if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grad):
            raise NonFiniteError(f"non-finite loss or gradient at epoch {epoch}", epoch=epoch,
                                 best_params=best)
        history.append(value)
        if value < best_loss:
            best_loss, best_epoch = value, epoch
            best = params.copy()
        opt.step(arrays, grad)
        if progress is not None:
            progress(epoch, value)
    return TrainResult(best, history, float(best_loss), best_epoch,
                       time.perf_counter() - start, last_u)


def infer(params: MlpParams, sys: DaeSystem, times) -> Waveform:
    """Evaluate every unknown at ``times`` (no tape, no tangents)."""
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    names = sys.names
    if times.size == 0:
        return Waveform(times, {name: np.empty(0) for name in names})
    tau = times / params.t_stop
    o, _, _ = _forward(params, tau, tangents=False)
    u, _ = _map_outputs(params, tau, o, None)
    return Waveform(times, {name: u[:, i].copy() for i, name in enumerate(names)})
