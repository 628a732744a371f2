"""Bi-temporal L1 change scan: discretization, forward, backward, gradcheck.

The recurrence per token t (diagonal per-channel dynamics, state size N):

    u_t = | Bbar'_t x'_t - Bbar_t x_t |        elementwise over (D, N)
    h_t = Abar_t * h_{t-1} + u_t               h_0 = 0
    y_t[d]  = sum_n c_t[n]  h_t[d, n]
    y'_t[d] = sum_n c'_t[n] h_t[d, n]

Abar = exp(delta_bar * A) with A = -exp(a_log) (so 0 < Abar < 1), where
delta_bar blends the two streams' step sizes ("mean" default). The input
coefficient uses the Euler simplification delta*b by default; the exact
zero-order-hold coefficient expm1(delta*A)/A * b sits behind method="zoh".

All math is float64. The fast path computes u elementwise, then evaluates the
remaining first-order linear recurrence with a chunked associative scan; the
backward recomputes the forward and reuses the same scan machinery in reverse.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import numpy as np

from ._scan_numba import fused_chunked_scan_euler, fused_chunked_scan_u

A_DELTA_MODES = ("mean", "pre", "post")
DISCRETIZATION_METHODS = ("euler", "zoh")


@dataclass(frozen=True)
class ScanDims:
    batch: int
    length: int
    channels: int
    state: int

    def __post_init__(self):
        if min(self.batch, self.length, self.channels, self.state) < 1:
            raise ValueError(f"all dims must be >= 1, got {self}")


@dataclass
class ScanParams:
    """Input-dependent scan parameters.

    a_log: (D, N); delta, delta_prime: (B, L, D) positive;
    b, b_prime, c, c_prime: (B, L, N).
    """

    a_log: np.ndarray
    delta: np.ndarray
    delta_prime: np.ndarray
    b: np.ndarray
    b_prime: np.ndarray
    c: np.ndarray
    c_prime: np.ndarray

    def __post_init__(self):
        if self.a_log.ndim != 2:
            raise ValueError("a_log must be (D, N)")
        if not np.all(np.isfinite(self.a_log)):
            raise ValueError("a_log must be finite")
        bsz, length, d = self.delta.shape
        n = self.a_log.shape[1]
        if self.a_log.shape[0] != d:
            raise ValueError("a_log channel dim mismatch")
        for name in ("delta", "delta_prime"):
            arr = getattr(self, name)
            if arr.shape != (bsz, length, d):
                raise ValueError(f"{name} must be (B, L, D)")
            if np.any(arr <= 0):
                raise ValueError(f"{name} must be positive everywhere")
        for name in ("b", "b_prime", "c", "c_prime"):
            arr = getattr(self, name)
            if arr.shape != (bsz, length, n):
                raise ValueError(f"{name} must be (B, L, N)")

    @property
    def dims(self) -> ScanDims:
        bsz, length, d = self.delta.shape
        return ScanDims(bsz, length, d, self.a_log.shape[1])


@dataclass
class StreamPair:
    """Pre/post token streams, both (B, L, D)."""

    x: np.ndarray
    x_prime: np.ndarray

    def __post_init__(self):
        if self.x.shape != self.x_prime.shape or self.x.ndim != 3:
            raise ValueError("x and x_prime must share shape (B, L, D)")


@dataclass
class ScanOutput:
    y: np.ndarray        # (B, L, D)
    y_prime: np.ndarray  # (B, L, D)
    h_last: np.ndarray   # (B, D, N)


@dataclass
class ScanGrads:
    x: np.ndarray
    x_prime: np.ndarray
    b: np.ndarray
    b_prime: np.ndarray
    c: np.ndarray
    c_prime: np.ndarray
    delta: np.ndarray
    delta_prime: np.ndarray
    a_log: np.ndarray

    def groups(self) -> dict[str, np.ndarray]:
        return {
            "x": self.x, "x_prime": self.x_prime,
            "b": self.b, "b_prime": self.b_prime,
            "c": self.c, "c_prime": self.c_prime,
            "delta": self.delta, "delta_prime": self.delta_prime,
            "a_log": self.a_log,
        }


def default_a_log(channels: int, state: int) -> np.ndarray:
    """a_log such that A[d, n] = -(n + 1): dynamics span -1 .. -N per state index."""
    return np.tile(np.log(np.arange(1, state + 1, dtype=np.float64)), (channels, 1))


def zoh_discretize(a_log: np.ndarray, delta: np.ndarray, b: np.ndarray,
                   method: str = "euler"):
    """Discretize diagonal dynamics for one stream.

    Returns (a_bar, b_bar), both (B, L, D, N):
      a_bar = exp(delta * A)
      b_bar = delta * b                  (method="euler")
      b_bar = expm1(delta * A) / A * b   (method="zoh")
    so the input contribution is b_bar * x[..., None].
    """
    if np.any(delta <= 0):
        raise ValueError("delta must be positive")
    if method not in DISCRETIZATION_METHODS:
        raise ValueError(f"unknown discretization method {method!r}")
    a = -np.exp(a_log)  # (D, N)
    da = delta[..., None] * a  # (B, L, D, N)
    a_bar = np.exp(da)
    if method == "euler":
        b_bar = delta[..., None] * b[:, :, None, :]
    else:
        b_bar = (np.expm1(da) / a) * b[:, :, None, :]
    return a_bar, b_bar


def _blend_delta(params: ScanParams, a_delta_mode: str) -> np.ndarray:
    if a_delta_mode == "mean":
        return 0.5 * (params.delta + params.delta_prime)
    if a_delta_mode == "pre":
        return params.delta
    if a_delta_mode == "post":
        return params.delta_prime
    raise ValueError(f"unknown a_delta_mode {a_delta_mode!r}")


def _precompute(pair: StreamPair, params: ScanParams, method: str, a_delta_mode: str):
    """Elementwise tensors feeding the recurrence: (a_bar, v, u)."""
    a = -np.exp(params.a_log)  # (D, N)
    delta_bar = _blend_delta(params, a_delta_mode)
    a_bar = np.exp(delta_bar[..., None] * a)
    if method == "euler":
        p_pre = (params.delta * pair.x)[..., None] * params.b[:, :, None, :]
        p_post = (params.delta_prime * pair.x_prime)[..., None] * params.b_prime[:, :, None, :]
    elif method == "zoh":
        w_pre = np.expm1(params.delta[..., None] * a) / a
        w_post = np.expm1(params.delta_prime[..., None] * a) / a
        p_pre = w_pre * pair.x[..., None] * params.b[:, :, None, :]
        p_post = w_post * pair.x_prime[..., None] * params.b_prime[:, :, None, :]
    else:
        raise ValueError(f"unknown discretization method {method!r}")
    v = p_post - p_pre
    return a_bar, v, np.abs(v)


def change_scan_ref(pair: StreamPair, params: ScanParams, method: str = "euler",
                    a_delta_mode: str = "mean") -> ScanOutput:
    """Sequential reference: the recurrence evaluated token by token."""
    dims = params.dims
    if pair.x.shape != (dims.batch, dims.length, dims.channels):
        raise ValueError("stream shape does not match params")
    a = -np.exp(params.a_log)
    delta_bar = _blend_delta(params, a_delta_mode)
    bsz, length, d, n = dims.batch, dims.length, dims.channels, dims.state
    h = np.zeros((bsz, d, n))
    y = np.empty((bsz, length, d))
    y_prime = np.empty((bsz, length, d))
    for t in range(length):
        a_bar_t = np.exp(delta_bar[:, t, :, None] * a)  # (B, D, N)
        if method == "euler":
            p_pre = (params.delta[:, t] * pair.x[:, t])[..., None] * params.b[:, t, None, :]
            p_post = (params.delta_prime[:, t] * pair.x_prime[:, t])[..., None] \
                * params.b_prime[:, t, None, :]
        else:
            w_pre = np.expm1(params.delta[:, t, :, None] * a) / a
            w_post = np.expm1(params.delta_prime[:, t, :, None] * a) / a
            p_pre = w_pre * pair.x[:, t, :, None] * params.b[:, t, None, :]
            p_post = w_post * pair.x_prime[:, t, :, None] * params.b_prime[:, t, None, :]
        u_t = np.abs(p_post - p_pre)
        h = a_bar_t * h + u_t
        y[:, t] = np.einsum("bdn,bn->bd", h, params.c[:, t])
        y_prime[:, t] = np.einsum("bdn,bn->bd", h, params.c_prime[:, t])
    return ScanOutput(y=y, y_prime=y_prime, h_last=h)


def combine(p, q):
    """Associative combiner for the first-order recurrence h -> a*h + u.

    p applies first, then q: (a1, u1) o (a2, u2) = (a1*a2, a2*u1 + u2).
    """
    a1, u1 = p
    a2, u2 = q
    return a1 * a2, a2 * u1 + u2


def linear_scan_chunked(a: np.ndarray, u: np.ndarray, chunk: int = 64) -> np.ndarray:
    """All prefix states of h_t = a_t * h_{t-1} + u_t (h_0 = 0) along axis 1.

    The sequence is split into chunks; local prefixes are computed with the
    associative combiner stepping inside the chunk but vectorized across all
    chunks, entry states are carried chunk-to-chunk, and one broadcast pass
    folds them in. Identity padding (a=1, u=0) makes any length work.
    """
    bsz, length = a.shape[0], a.shape[1]
    tail = a.shape[2:]
    k = min(chunk, length)
    pad = (-length) % k
    if pad:
        ones = np.ones((bsz, pad) + tail, dtype=a.dtype)
        zeros = np.zeros((bsz, pad) + tail, dtype=u.dtype)
        a = np.concatenate([a, ones], axis=1)
        u = np.concatenate([u, zeros], axis=1)
    n_chunks = a.shape[1] // k
    # Position-leading layout keeps each step's slice contiguous. The copies
    # are mandatory: the in-place updates below must never alias the inputs.
    aa = np.moveaxis(a.reshape(bsz, n_chunks, k, *tail), 2, 0).copy()
    uu = np.moveaxis(u.reshape(bsz, n_chunks, k, *tail), 2, 0).copy()

    # Local prefixes of every chunk at once: (a, u) at position t becomes the
    # composition over [chunk start .. t].
    for t in range(1, k):
        uu[t] += aa[t] * uu[t - 1]
        aa[t] *= aa[t - 1]

    # Entry state per chunk from the previous chunk's full composition.
    if n_chunks > 1:
        entry = np.zeros((n_chunks, bsz) + tail, dtype=u.dtype)
        a_full = np.moveaxis(aa[-1], 1, 0)  # (n_chunks, B, *tail)
        u_full = np.moveaxis(uu[-1], 1, 0)
        for j in range(1, n_chunks):
            entry[j] = a_full[j - 1] * entry[j - 1] + u_full[j - 1]
        uu += aa * np.moveaxis(entry, 1, 0)[None]

    h = np.moveaxis(uu, 0, 2).reshape(bsz, n_chunks * k, *tail)
    return h[:, :length]


_WORKSPACE = threading.local()


def _ws(name: str, shape: tuple) -> np.ndarray:
    """Per-thread scratch buffer; reuse avoids page-fault churn on big calls."""
    pool = getattr(_WORKSPACE, "pool", None)
    if pool is None:
        pool = _WORKSPACE.pool = {}
    buf = pool.get(name)
    if buf is None or buf.shape != shape:
        buf = pool[name] = np.empty(shape)
    return buf


def _a_bar_channel_major(params: ScanParams, a: np.ndarray, a_delta_mode: str) -> np.ndarray:
    """exp(delta_bar * A) in (B, D, L, N) layout, staged through the workspace."""
    bsz, length, d = params.delta.shape
    n = a.shape[1]
    a_bar = _ws("a_bar", (bsz, d, length, n))
    db_t = _ws("db_t", (bsz, d, length))
    np.copyto(db_t, _blend_delta(params, a_delta_mode).transpose(0, 2, 1))
    np.multiply(db_t[..., None], a[None, :, None, :], out=a_bar)
    np.exp(a_bar, out=a_bar)
    return a_bar


def _u_channel_major_zoh(pair: StreamPair, params: ScanParams, a: np.ndarray) -> np.ndarray:
    """|Bbar' x' - Bbar x| with exact-ZOH factors, (B, D, L, N) layout."""
    bsz, length, d = params.delta.shape
    n = a.shape[1]
    big = (bsz, d, length, n)
    u = _ws("u", big)
    scratch = _ws("scratch", big)
    dx_t = _ws("dx_t", (bsz, d, length))
    for buf, delta, x, bvec in ((u, params.delta_prime, pair.x_prime, params.b_prime),
                                (scratch, params.delta, pair.x, params.b)):
        np.copyto(dx_t, delta.transpose(0, 2, 1))
        np.multiply(dx_t[..., None], a[None, :, None, :], out=buf)
        np.expm1(buf, out=buf)
        np.divide(buf, a[None, :, None, :], out=buf)
        np.copyto(dx_t, x.transpose(0, 2, 1))
        np.multiply(buf, dx_t[..., None], out=buf)
        np.multiply(buf, bvec[:, None, :, :], out=buf)
    np.subtract(u, scratch, out=u)
    np.abs(u, out=u)
    return u


def change_scan_fast(pair: StreamPair, params: ScanParams, method: str = "euler",
                     a_delta_mode: str = "mean", chunk: int = 64,
                     backend: str = "auto") -> ScanOutput:
    """Vectorized forward: elementwise precompute + chunked associative scan.

    backend "numba" runs the chunk-parallel fused kernels; "numpy" runs the
    portable vectorized-across-chunks path; "auto" prefers numba when present.
    L = 1 needs no recombination and delegates to the reference.
    """
    dims = params.dims
    if pair.x.shape != (dims.batch, dims.length, dims.channels):
        raise ValueError("stream shape does not match params")
    if dims.length == 1:
        return change_scan_ref(pair, params, method=method, a_delta_mode=a_delta_mode)
    if backend == "auto":
        backend = "numba" if fused_chunked_scan_u is not None else "numpy"
    if backend == "numba":
        if fused_chunked_scan_u is None:
            raise RuntimeError("numba backend requested but numba is unavailable")
        a = -np.exp(params.a_log)
        a_bar = _a_bar_channel_major(params, a, a_delta_mode)
        c = np.ascontiguousarray(params.c)
        c_prime = np.ascontiguousarray(params.c_prime)
        if method == "euler":
            bsz, length, d = params.delta.shape
            sx_t = _ws("sx_t", (bsz, d, length))
            sxp_t = _ws("sxp_t", (bsz, d, length))
            np.copyto(sx_t, (params.delta * pair.x).transpose(0, 2, 1))
            np.copyto(sxp_t, (params.delta_prime * pair.x_prime).transpose(0, 2, 1))
            y, y_prime, h_last = fused_chunked_scan_euler(
                a_bar, sx_t, sxp_t,
                np.ascontiguousarray(params.b), np.ascontiguousarray(params.b_prime),
                c, c_prime, chunk)
        else:
            u = _u_channel_major_zoh(pair, params, a)
            y, y_prime, h_last = fused_chunked_scan_u(a_bar, u, c, c_prime, chunk)
        return ScanOutput(y=y, y_prime=y_prime, h_last=h_last)
    if backend != "numpy":
        raise ValueError(f"unknown backend {backend!r}")
    a_bar, _, u = _precompute(pair, params, method, a_delta_mode)
    h = linear_scan_chunked(a_bar, u, chunk=chunk)
    y = np.einsum("bldn,bln->bld", h, params.c)
    y_prime = np.einsum("bldn,bln->bld", h, params.c_prime)
    return ScanOutput(y=y, y_prime=y_prime, h_last=h[:, -1])


def _reverse_scan(a: np.ndarray, q: np.ndarray, chunk: int = 64) -> np.ndarray:
    """g_t = q_t + a_{t+1} * g_{t+1} (g_L = q_L), evaluated with the fast scan."""
    a_rev = np.concatenate([np.ones_like(a[:, :1]), a[:, :0:-1]], axis=1)
    g_rev = linear_scan_chunked(a_rev, q[:, ::-1], chunk=chunk)
    return g_rev[:, ::-1]


def change_scan_backward(pair: StreamPair, params: ScanParams,
                         grad_y: np.ndarray, grad_y_prime: np.ndarray,
                         method: str = "euler", a_delta_mode: str = "mean",
                         chunk: int = 64) -> ScanGrads:
    """Analytic gradients for all inputs of the change scan.

    Recomputes forward intermediates, runs the reverse-time recurrence
    g_t = c_t*gy_t + c'_t*gy'_t + Abar_{t+1} * g_{t+1}, then chains through
    u = |v| (sign(0) := 0) and the discretization Jacobians.
    """
    a = -np.exp(params.a_log)  # (D, N)
    a_bar, v, u = _precompute(pair, params, method, a_delta_mode)
    h = linear_scan_chunked(a_bar, u, chunk=chunk)
    h_prev = np.concatenate([np.zeros_like(h[:, :1]), h[:, :-1]], axis=1)

    # Direct state gradient from both readouts, then the reverse recurrence.
    q = grad_y[..., None] * params.c[:, :, None, :] \
        + grad_y_prime[..., None] * params.c_prime[:, :, None, :]
    g = _reverse_scan(a_bar, q, chunk=chunk)

    grad_c = np.einsum("bld,bldn->bln", grad_y, h)
    grad_c_prime = np.einsum("bld,bldn->bln", grad_y_prime, h)

    grad_a_bar = g * h_prev
    grad_delta_bar = np.einsum("bldn,dn->bld", grad_a_bar * a_bar, a)
    grad_a = np.einsum("bldn,bld->dn", grad_a_bar * a_bar, _blend_delta(params, a_delta_mode))

    gv = np.sign(v) * g  # sign(0) = 0 by np.sign

    if method == "euler":
        sx = params.delta * pair.x
        sx_prime = params.delta_prime * pair.x_prime
        grad_sx_prime = np.einsum("bldn,bln->bld", gv, params.b_prime)
        grad_b_prime = np.einsum("bldn,bld->bln", gv, sx_prime)
        grad_sx = -np.einsum("bldn,bln->bld", gv, params.b)
        grad_b = -np.einsum("bldn,bld->bln", gv, sx)
        grad_x = grad_sx * params.delta
        grad_x_prime = grad_sx_prime * params.delta_prime
        grad_delta = grad_sx * pair.x
        grad_delta_prime = grad_sx_prime * pair.x_prime
    else:
        da_pre = params.delta[..., None] * a
        da_post = params.delta_prime[..., None] * a
        w_pre = np.expm1(da_pre) / a
        w_post = np.expm1(da_post) / a
        gw_pre = -gv * pair.x[..., None] * params.b[:, :, None, :]
        gw_post = gv * pair.x_prime[..., None] * params.b_prime[:, :, None, :]
        grad_x = -np.einsum("bldn,bldn->bld", gv, w_pre * params.b[:, :, None, :])
        grad_x_prime = np.einsum("bldn,bldn->bld", gv, w_post * params.b_prime[:, :, None, :])
        grad_b = -np.einsum("bldn,bldn->bln", gv, w_pre * pair.x[..., None])
        grad_b_prime = np.einsum("bldn,bldn->bln", gv, w_post * pair.x_prime[..., None])
        grad_delta = np.einsum("bldn,bldn->bld", gw_pre, np.exp(da_pre))
        grad_delta_prime = np.einsum("bldn,bldn->bld", gw_post, np.exp(da_post))
        # dw/dA = (delta * exp(delta*A) - w) / A
        grad_a = grad_a \
            + np.einsum("bldn->dn", gw_pre * (params.delta[..., None] * np.exp(da_pre) - w_pre) / a) \
            + np.einsum("bldn->dn", gw_post * (params.delta_prime[..., None] * np.exp(da_post) - w_post) / a)

    if a_delta_mode == "mean":
        grad_delta = grad_delta + 0.5 * grad_delta_bar
        grad_delta_prime = grad_delta_prime + 0.5 * grad_delta_bar
    elif a_delta_mode == "pre":
        grad_delta = grad_delta + grad_delta_bar
    else:
        grad_delta_prime = grad_delta_prime + grad_delta_bar

    grad_a_log = grad_a * a  # dA/da_log = -exp(a_log) = A
    return ScanGrads(
        x=grad_x, x_prime=grad_x_prime,
        b=grad_b, b_prime=grad_b_prime,
        c=grad_c, c_prime=grad_c_prime,
        delta=grad_delta, delta_prime=grad_delta_prime,
        a_log=grad_a_log,
    )


# ---------------------------------------------------------------------------
# Gradient verification against central finite differences
# ---------------------------------------------------------------------------


def draw_scan_case(dims: ScanDims, rng: np.random.Generator,
                   margin: float = 1e-3, max_tries: int = 1000,
                   method: str = "euler"):
    """Random (pair, params) with every |v_t| above ``margin``.

    The margin keeps finite differences away from the |.| kink.
    """
    for _ in range(max_tries):
        b_, l_, d_, n_ = dims.batch, dims.length, dims.channels, dims.state
        params = ScanParams(
            a_log=np.log(rng.uniform(0.5, 3.0, size=(d_, n_))),
            delta=rng.uniform(0.5, 1.5, size=(b_, l_, d_)),
            delta_prime=rng.uniform(0.5, 1.5, size=(b_, l_, d_)),
            b=rng.standard_normal((b_, l_, n_)),
            b_prime=rng.standard_normal((b_, l_, n_)),
            c=rng.standard_normal((b_, l_, n_)),
            c_prime=rng.standard_normal((b_, l_, n_)),
        )
        pair = StreamPair(x=rng.standard_normal((b_, l_, d_)),
                          x_prime=rng.standard_normal((b_, l_, d_)))
        _, v, _ = _precompute(pair, params, method, "mean")
        if np.min(np.abs(v)) > margin:
            return pair, params
    raise RuntimeError(f"could not satisfy |v| > {margin} in {max_tries} draws")


GRADCHECK_GROUPS = ("x", "x_prime", "b", "b_prime", "c", "c_prime",
                    "delta", "delta_prime", "a_log")


def gradcheck(dims: ScanDims = ScanDims(1, 8, 3, 4), seed: int = 0,
              step: float = 1e-5, threshold: float = 1e-4,
              method: str = "euler", a_delta_mode: str = "mean",
              margin: float = 1e-3, _inject: dict | None = None) -> dict:
    """Compare analytic scan gradients with central finite differences.

    The objective is a fixed random linear functional of (y, y'). Per group the
    reported relative error is max|analytic - fd| / max(1e-12, max|fd|).
    ``_inject`` multiplies named analytic gradient groups (fault injection for
    testing the checker itself).
    """
    rng = np.random.default_rng(seed)
    pair, params = draw_scan_case(dims, rng, margin=margin, method=method)
    w_y = rng.standard_normal(pair.x.shape)
    w_yp = rng.standard_normal(pair.x.shape)

    def objective(pair_, params_) -> float:
        out = change_scan_ref(pair_, params_, method=method, a_delta_mode=a_delta_mode)
        return float(np.sum(w_y * out.y) + np.sum(w_yp * out.y_prime))

    grads = change_scan_backward(pair, params, w_y, w_yp,
                                 method=method, a_delta_mode=a_delta_mode)
    analytic = grads.groups()
    if _inject:
        for name, factor in _inject.items():
            analytic[name] = analytic[name] * factor

    tensors = {
        "x": pair.x, "x_prime": pair.x_prime,
        "b": params.b, "b_prime": params.b_prime,
        "c": params.c, "c_prime": params.c_prime,
        "delta": params.delta, "delta_prime": params.delta_prime,
        "a_log": params.a_log,
    }
    report: dict = {"dims": dims.__dict__, "seed": seed, "method": method,
                    "a_delta_mode": a_delta_mode, "step": step,
                    "threshold": threshold, "groups": {}, "all_pass": True}
    for name in GRADCHECK_GROUPS:
        arr = tensors[name]
        fd = np.empty_like(arr)
        flat = arr.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = objective(pair, params)
            flat[i] = orig - step
            lo = objective(pair, params)
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2 * step)
        scale = max(1e-12, float(np.max(np.abs(fd))))
        rel = float(np.max(np.abs(analytic[name] - fd)) / scale)
        ok = rel <= threshold
        report["groups"][name] = {"max_rel_err": rel, "pass": ok}
        report["all_pass"] = report["all_pass"] and ok
    return report


def scan_benchmark(dims: ScanDims, seed: int = 0, repeats: int = 3,
                   chunk: int = 64, method: str = "euler") -> dict:
    """Tokens/second for the reference loop vs the chunked fast path."""
    rng = np.random.default_rng(seed)
    pair, params = draw_scan_case(dims, rng, margin=0.0, max_tries=1, method=method)

    def best(fn):
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        return min(times)

    backend = "numba" if fused_chunked_scan_u is not None else "numpy"
    change_scan_fast(pair, params, method=method, chunk=chunk, backend=backend)  # warm JIT
    ref = best(lambda: change_scan_ref(pair, params, method=method))
    fast = best(lambda: change_scan_fast(pair, params, method=method, chunk=chunk,
                                         backend=backend))
    out_ref = change_scan_ref(pair, params, method=method)
    out_fast = change_scan_fast(pair, params, method=method, chunk=chunk, backend=backend)
    scale = max(1e-300, float(np.max(np.abs(out_ref.y))), float(np.max(np.abs(out_ref.y_prime))))
    rel = max(float(np.max(np.abs(out_ref.y - out_fast.y))),
              float(np.max(np.abs(out_ref.y_prime - out_fast.y_prime)))) / scale
    tokens = dims.batch * dims.length
    return {
        "dims": dims.__dict__,
        "chunk": chunk,
        "backend": backend,
        "ref_seconds": ref,
        "fast_seconds": fast,
        "ref_tokens_per_s": tokens / ref,
        "fast_tokens_per_s": tokens / fast,
        "speedup": ref / fast,
        "max_rel_diff": rel,
    }
