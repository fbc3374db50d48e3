"""SCRank: joint celebrity/spammer scoring on the unreciprocated arc set.

One iteration is two phases separated by a barrier::

    c_new[v] = F_c( sum over arcs (u, v) of 1 - s[u] )
    s_new[v] = F_s( sum over arcs (v, u) of 1 - c_new[u] )

Each phase writes disjoint output slots from a read-only input vector, so the
node range is split across worker threads. Every node's sum is accumulated by
one thread in sorted neighbor order, so results do not depend on the number
of workers.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numba
import numpy as np

from .graph import ArcSet
from .transfer import NormalCDF, UpdateFunction

DEFAULT_MU = 100.0
DEFAULT_SIGMA = 25.0


@numba.njit(nogil=True, cache=True)
def _complement_sums(ptr, idx, x, lo, hi, out):
    for v in range(lo, hi):
        acc = 0.0
        for k in range(ptr[v], ptr[v + 1]):
            acc += 1.0 - x[idx[k]]
        out[v] = acc


def neighbor_sums(ptr: np.ndarray, idx: np.ndarray, x: np.ndarray,
                  workers: int = 1, pool: ThreadPoolExecutor | None = None) -> np.ndarray:
    """``out[v] = sum(1 - x[u] for u in idx[ptr[v]:ptr[v+1]])``."""
    n = len(ptr) - 1
    out = np.empty(n)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if workers <= 1 or n < 2 * workers:
        _complement_sums(ptr, idx, x, 0, n, out)
        return out
    # split by arc count so threads get equal work
    cuts = np.searchsorted(ptr, np.linspace(0, ptr[-1], workers + 1)[1:-1])
    bounds = [0, *cuts.tolist(), n]
    own = pool is None
    if own:
        pool = ThreadPoolExecutor(workers)
    try:
        futs = [pool.submit(_complement_sums, ptr, idx, x, a, b, out)
                for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        for f in futs:
            f.result()
    finally:
        if own:
            pool.shutdown()
    return out


def follower_sums(a: ArcSet, s: np.ndarray, **kw) -> np.ndarray:
    """Per node, the summed non-spammer score of its unreciprocated followers."""
    return neighbor_sums(a.in_ptr, a.in_idx, s, **kw)


def followee_sums(a: ArcSet, c: np.ndarray, **kw) -> np.ndarray:
    """Per node, the summed non-celebrity score of its unreciprocated followees."""
    return neighbor_sums(a.out_ptr, a.out_idx, c, **kw)


def _check_len(a: ArcSet, x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (a.n,):
        raise ValueError(f"{name} has shape {x.shape}, graph has {a.n} nodes")
    return x


def celebrity_update(a: ArcSet, s, f_c: UpdateFunction, **kw) -> np.ndarray:
    s = _check_len(a, s, "s")
    return np.asarray(f_c(follower_sums(a, s, **kw)), dtype=np.float64)


def spammer_update(a: ArcSet, c, f_s: UpdateFunction, **kw) -> np.ndarray:
    c = _check_len(a, c, "c")
    return np.asarray(f_s(followee_sums(a, c, **kw)), dtype=np.float64)


def default_transfers(mu_c=DEFAULT_MU, sigma_c=DEFAULT_SIGMA,
                      mu_s=DEFAULT_MU, sigma_s=DEFAULT_SIGMA) -> tuple[NormalCDF, NormalCDF]:
    return (NormalCDF(mu_c, sigma_c, kind="celebrity"),
            NormalCDF(mu_s, sigma_s, kind="spammer"))


# --- state, config, trace -------------------------------------------------

Init = Union[float, str]


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def hashed_uniform(keys: np.ndarray, seed: int) -> np.ndarray:
    """Uniform [0, 1) values that depend only on ``(seed, key)``."""
    base = _splitmix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]
    h = _splitmix64(np.asarray(keys, dtype=np.uint64) ^ base)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


@dataclass(frozen=True)
class IterationConfig:
    """Stopping rule and starting point.

    ``init`` is a constant in [0, 1] (``0`` and ``1`` are the all-zero and
    all-one starts) or ``"random"`` for seeded per-node uniform values.
    """

    epsilon: float = 1e-6
    max_iterations: int = 50
    init: Init = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        parse_init(self.init)

    def initial_state(self, n: int) -> "ScoreState":
        init = parse_init(self.init)
        if init == "random":
            ids = np.arange(n, dtype=np.uint64)
            c = hashed_uniform(2 * ids, self.seed)
            s = hashed_uniform(2 * ids + np.uint64(1), self.seed)
        else:
            c = np.full(n, init)
            s = np.full(n, init)
        return ScoreState(c, s, 0)


def parse_init(init: Init) -> float | str:
    if isinstance(init, str):
        key = init.strip().lower()
        if key in ("rand", "random"):
            return "random"
        try:
            init = float(key)
        except ValueError:
            raise ValueError(f"unknown init {init!r}") from None
    init = float(init)
    if not 0.0 <= init <= 1.0:
        raise ValueError(f"constant init {init} outside [0, 1]")
    return init


def init_label(init: Init) -> str:
    v = parse_init(init)
    return "rand" if v == "random" else f"{v:g}"


@dataclass(frozen=True, eq=False)
class ScoreState:
    c: np.ndarray
    s: np.ndarray
    iteration_count: int = 0

    def __post_init__(self):
        c = np.array(self.c, dtype=np.float64)
        s = np.array(self.s, dtype=np.float64)
        if c.shape != s.shape or c.ndim != 1:
            raise ValueError("c and s must be 1-d vectors of equal length")
        if not (np.all((c >= 0) & (c <= 1)) and np.all((s >= 0) & (s <= 1))):
            raise ValueError("scores must lie in [0, 1]")
        c.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "s", s)

    @property
    def n(self) -> int:
        return len(self.c)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    delta_inf: float
    l1_c: float
    l1_s: float
    potential: float
    # P(before) - P(after), summed from per-node terms that stay accurate
    # when the absolute potential is too large to resolve the change
    potential_drop: float
    millis: float


@dataclass
class IterationTrace:
    records: list[TraceRecord] = field(default_factory=list)
    converged: bool = False

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


TRACE_COLUMNS = ("iteration", "delta_inf", "l1_c", "l1_s", "potential", "millis")


def write_trace_csv(trace: IterationTrace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for r in trace.records:
            fh.write(f"{r.iteration},{r.delta_inf:.17g},{r.l1_c:.17g},{r.l1_s:.17g},"
                     f"{r.potential:.17g},{r.millis:.3f}\n")


def write_scores_tsv(a, state: ScoreState, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("node_label\tcelebrity_score\tspammer_score\n")
        for lab, c, s in zip(a.labels, state.c.tolist(), state.s.tolist()):
            fh.write(f"{lab}\t{c:.17g}\t{s:.17g}\n")


def read_scores_tsv(path) -> tuple[list[str], ScoreState]:
    labels, cs, ss = [], [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["node_label", "celebrity_score", "spammer_score"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns")
            labels.append(parts[0])
            cs.append(float(parts[1]))
            ss.append(float(parts[2]))
    return labels, ScoreState(np.array(cs), np.array(ss))


# --- potential --------------------------------------------------------------

def potential(a: ArcSet, state: ScoreState, f_c: UpdateFunction, f_s: UpdateFunction) -> float:
    """``sum_A (1 - s_u)(1 - c_v) + sum_v G_c(c_v) + sum_v G_s(s_v)``."""
    L = follower_sums(a, state.s)
    arc_term = math.fsum((L * (1.0 - state.c)).tolist())
    gc = math.fsum(np.broadcast_to(f_c.inverse_integral(state.c), (a.n,)).tolist())
    gs = math.fsum(np.broadcast_to(f_s.inverse_integral(state.s), (a.n,)).tolist())
    return arc_term + gc + gs


def phase_drop(f: UpdateFunction, old: np.ndarray, new: np.ndarray, inputs: np.ndarray) -> float:
    """Potential decrease of one phase: ``old -> new`` with summed inputs
    ``inputs`` held fixed (each term is non-negative when ``new = f(inputs)``)."""
    if len(old) == 0:
        return 0.0
    return math.fsum(np.broadcast_to(f.drop(old, new, inputs), old.shape).tolist())


# --- iteration ----------------------------------------------------------------

class _Stepper:
    """One two-phase sweep at a time, reusing a thread pool."""

    def __init__(self, a: ArcSet, f_c, f_s, workers: int = 1):
        self.a, self.f_c, self.f_s = a, f_c, f_s
        self.workers = max(1, int(workers))
        self.pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def sweep(self, c, s):
        kw = dict(workers=self.workers, pool=self.pool)
        L = follower_sums(self.a, s, **kw)
        c_new = np.asarray(self.f_c(L), dtype=np.float64)
        M = followee_sums(self.a, c_new, **kw)
        s_new = np.asarray(self.f_s(M), dtype=np.float64)
        return c_new, s_new, L, M


def sweep(a: ArcSet, state: ScoreState, f_c, f_s, workers: int = 1) -> ScoreState:
    """One full iteration: all celebrity scores, then all spammer scores."""
    with _Stepper(a, f_c, f_s, workers) as st:
        c, s, _, _ = st.sweep(state.c, state.s)
    return ScoreState(c, s, state.iteration_count + 1)


def iterate(a: ArcSet, f_c: UpdateFunction | None = None, f_s: UpdateFunction | None = None,
            cfg: IterationConfig | None = None, *, start: ScoreState | None = None,
            workers: int = 1, track_potential: bool = True) -> tuple[ScoreState, IterationTrace]:
    """Run SCRank until the largest score change drops below ``epsilon``.

    The loop counter follows the reference loop exactly: it stops once
    ``delta < epsilon`` or once the counter exceeds ``max_iterations``, so at
    most ``max_iterations + 1`` sweeps run. ``trace.converged`` is False when
    the cap was hit.
    """
    if f_c is None or f_s is None:
        dc, ds = default_transfers()
        f_c = f_c or dc
        f_s = f_s or ds
    cfg = cfg or IterationConfig()
    state = start if start is not None else cfg.initial_state(a.n)
    c, s = state.c, state.s
    trace = IterationTrace()
    k = 0
    with _Stepper(a, f_c, f_s, workers) as st:
        while True:
            t0 = time.perf_counter()
            c_new, s_new, L, M = st.sweep(c, s)
            millis = (time.perf_counter() - t0) * 1e3
            dc = np.abs(c - c_new)
            ds = np.abs(s - s_new)
            delta = max(float(dc.max(initial=0.0)), float(ds.max(initial=0.0)))
            if track_potential:
                drop = phase_drop(f_c, c, c_new, L) + phase_drop(f_s, s, s_new, M)
                pot = potential(a, ScoreState(c_new, s_new), f_c, f_s)
            else:
                drop = pot = float("nan")
            k += 1
            trace.records.append(TraceRecord(k, delta, float(dc.sum()), float(ds.sum()),
                                             pot, drop, millis))
            c, s = c_new, s_new
            if delta < cfg.epsilon:
                trace.converged = True
                break
            if k > cfg.max_iterations:
                break
    return ScoreState(c, s, k), trace


# --- fixed-point checks ----------------------------------------------------------

class FixedPointCheck(NamedTuple):
    ok: bool
    residual: float
    node: int          # -1 on an empty graph
    which: str         # "c" or "s"


def residuals(a: ArcSet, state: ScoreState, f_c, f_s) -> tuple[np.ndarray, np.ndarray]:
    rc = np.abs(state.c - np.asarray(f_c(follower_sums(a, state.s)), dtype=float))
    rs = np.abs(state.s - np.asarray(f_s(followee_sums(a, state.c)), dtype=float))
    return rc, rs


def is_eps_fixed_point(a: ArcSet, state: ScoreState, f_c, f_s, eps: float) -> FixedPointCheck:
    """Check both score equations at every vertex to within ``eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if a.n == 0:
        return FixedPointCheck(True, 0.0, -1, "c")
    rc, rs = residuals(a, state, f_c, f_s)
    ic, is_ = int(rc.argmax()), int(rs.argmax())
    if rc[ic] >= rs[is_]:
        worst, node, which = float(rc[ic]), ic, "c"
    else:
        worst, node, which = float(rs[is_]), is_, "s"
    return FixedPointCheck(worst <= eps, worst, node, which)


def fixed_point_tolerance(a: ArcSet, f_c, f_s, eps: float) -> float:
    """Residual bound for a state where the last sweep moved nothing by ``eps``.

    The celebrity scores were computed from the spammer scores of the
    previous sweep, which can differ by up to ``eps`` at each of up to
    ``max degree`` followers, each moving the input at slope at most alpha.
    """
    alpha = max(f_c.lipschitz, f_s.lipschitz)
    deg = max(int(a.indeg.max(initial=0)), int(a.outdeg.max(initial=0)))
    return eps * (1.0 + alpha * deg)


def lipschitz_bound(f: UpdateFunction) -> float:
    return f.lipschitz
