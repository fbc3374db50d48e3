"""Monotonic updates on symmetric linear combinations.

A system has bounded variables ``x_i in [a_i, b_i]``, a symmetric weight
matrix ``W`` with zero diagonal, and per-variable strictly increasing update
functions. Activating variable ``i`` sets ``x_i <- F_i((W x)_i)``. The
potential

    P(x) = sum_i G_i(x_i) - x^T W x / 2,   G_i(z) = integral of F_i^-1 up to z

never increases under any activation order, which is what guarantees
convergence. The engine here is single-threaded and updates one variable per
step.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .core import hashed_uniform
from .graph import ArcSet
from .transfer import Logistic, NormalCDF, UpdateFunction

SYMMETRY_TOL = 1e-12


class SymmetryError(ValueError):
    pass


def _as_csr(weights, n: int | None) -> sp.csr_matrix:
    if sp.issparse(weights):
        W = sp.csr_matrix(weights, dtype=float)
    else:
        W = sp.csr_matrix(np.asarray(weights, dtype=float))
    if W.shape[0] != W.shape[1] or (n is not None and W.shape[0] != n):
        raise ValueError(f"weight matrix has shape {W.shape}")
    W.sum_duplicates()
    W.sort_indices()
    return W


def check_weights(W: sp.csr_matrix, tol: float = SYMMETRY_TOL) -> None:
    diff = (W - W.T).tocoo()
    if diff.nnz and np.abs(diff.data).max() > tol:
        k = int(np.abs(diff.data).argmax())
        i, j = int(diff.row[k]), int(diff.col[k])
        raise SymmetryError(f"W[{i},{j}]={W[i, j]} but W[{j},{i}]={W[j, i]}")
    if np.any(W.diagonal() != 0):
        i = int(np.flatnonzero(W.diagonal())[0])
        raise SymmetryError(f"W[{i},{i}]={W[i, i]}: diagonal must be zero")


@dataclass(frozen=True)
class StepResult:
    index: int
    value: float
    change: float
    potential_delta: float   # P(after) - P(before), never positive


class MuesliSystem:
    """Mutable state plus the fixed ``(bounds, W, F)`` definition."""

    def __init__(self, weights, functions: Sequence[UpdateFunction] | UpdateFunction,
                 lower, upper, x0=None):
        n = len(functions) if isinstance(functions, Sequence) else None
        if n is None:
            n = np.shape(weights)[0]
            functions = [functions] * n
        self.W = _as_csr(weights, n)
        check_weights(self.W)
        self.n = n
        self.functions = list(functions)
        self.lower = np.broadcast_to(np.asarray(lower, dtype=float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(upper, dtype=float), (n,)).copy()
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound above upper bound")
        if x0 is None:
            x0 = np.clip(0.0, self.lower, self.upper)
        x = np.broadcast_to(np.asarray(x0, dtype=float), (n,)).copy()
        if np.any(x < self.lower) or np.any(x > self.upper):
            raise ValueError("initial state out of bounds")
        self.x = x
        self.names: list[str] | None = None

    # --- evaluation -------------------------------------------------------

    def input(self, i: int) -> float:
        W = self.W
        lo, hi = W.indptr[i], W.indptr[i + 1]
        return math.fsum((W.data[lo:hi] * self.x[W.indices[lo:hi]]).tolist())

    def alpha(self) -> np.ndarray:
        return np.array([f.lipschitz for f in self.functions])

    def potential(self, x=None) -> float:
        """``sum_i G_i(x_i) - x^T W x / 2``, summed exactly."""
        x = self.x if x is None else np.asarray(x, dtype=float)
        g = [float(f.inverse_integral(v)) for f, v in zip(self.functions, x.tolist())]
        quad = self.W.multiply(np.outer(x, x)) if self.n < 2000 else None
        if quad is not None:
            q = math.fsum(np.asarray(quad.data).tolist())
        else:
            q = math.fsum((x * (self.W @ x)).tolist())
        return math.fsum(g) - 0.5 * q

    def step(self, i: int) -> StepResult:
        if not 0 <= i < self.n:
            raise IndexError(f"variable {i} out of range [0, {self.n})")
        f = self.functions[i]
        inp = self.input(i)
        old = float(self.x[i])
        new = float(np.clip(f(inp), self.lower[i], self.upper[i]))
        delta = -float(f.drop(old, new, inp))
        self.x[i] = new
        return StepResult(i, new, new - old, delta)

    def sweep(self) -> list[StepResult]:
        return [self.step(i) for i in range(self.n)]

    def check_bounds(self, samples: int = 100, seed: int = 0) -> bool:
        """Sample in-bounds states and confirm every update stays in bounds."""
        rng = np.random.default_rng(seed)
        for _ in range(samples):
            x = rng.uniform(self.lower, self.upper)
            y = self.W @ x
            for i, f in enumerate(self.functions):
                v = f(y[i])
                if not self.lower[i] <= v <= self.upper[i]:
                    return False
        return True

    def run(self, activation: "ActivationSequence", eps: float,
            max_steps: int, record: bool = False) -> "RunResult":
        return run(self, activation, eps, max_steps, record=record)


# --- activation sequences ------------------------------------------------

class ActivationSequence:
    """A total map from step number to variable index."""

    n: int
    round_robin = False

    def __call__(self, t: int) -> int:
        raise NotImplementedError


@dataclass(frozen=True)
class RoundRobin(ActivationSequence):
    n: int
    round_robin = True

    def __call__(self, t: int) -> int:
        return t % self.n


@dataclass(frozen=True)
class Cycle(ActivationSequence):
    order: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.order)

    def __call__(self, t: int) -> int:
        return self.order[t % len(self.order)]


@dataclass(frozen=True)
class SeededRandom(ActivationSequence):
    n: int
    seed: int = 0

    def __call__(self, t: int) -> int:
        u = hashed_uniform(np.array([t], dtype=np.uint64), self.seed)[0]
        return min(int(u * self.n), self.n - 1)


@dataclass(frozen=True)
class Repeating(ActivationSequence):
    """Activate each variable ``repeat`` times in a row before moving on."""

    n: int
    repeat: int = 5

    def __call__(self, t: int) -> int:
        return (t // self.repeat) % self.n


def activation_from_name(name: str, n: int, seed: int = 0) -> ActivationSequence:
    if name in ("round-robin", "rr"):
        return RoundRobin(n)
    if name == "random":
        return SeededRandom(n, seed)
    if name in ("adversarial", "repeat"):
        return Repeating(n, 5)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class RunResult:
    x: np.ndarray
    potentials: list[float]
    steps: int
    converged: bool
    records: list[StepResult] = field(default_factory=list)


def run(sys_: MuesliSystem, activation: ActivationSequence | Callable[[int], int],
        eps: float, max_steps: int, record: bool = False) -> RunResult:
    """Step until every variable has been activated since the last move
    larger than ``eps`` (each was quiet when activated), or ``max_steps`` is
    reached. Under round-robin this is ``n`` consecutive quiet steps.

    ``potentials[0]`` is the starting potential; entry ``t + 1`` is tracked
    incrementally from the exact per-step decrease.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    pot = sys_.potential()
    potentials = [pot]
    records = []
    seen = np.zeros(sys_.n, dtype=bool)
    quiet = 0               # distinct variables activated quietly since the last move
    t = 0
    converged = sys_.n == 0
    while not converged and t < max_steps:
        r = sys_.step(activation(t))
        t += 1
        pot += r.potential_delta
        potentials.append(pot)
        if record:
            records.append(r)
        if abs(r.change) > eps:
            seen[:] = False
            quiet = 0
        elif not seen[r.index]:
            seen[r.index] = True
            quiet += 1
            converged = quiet == sys_.n
    return RunResult(sys_.x.copy(), potentials, t, converged, records)


def write_run_csv(result: RunResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,variable,new_value,potential\n")
        for t, r in enumerate(result.records, 1):
            fh.write(f"{t},{r.index},{r.value:.17g},{result.potentials[t]:.17g}\n")


# --- instantiations -----------------------------------------------------

def embed_scrank(a: ArcSet, f_c: NormalCDF, f_s: NormalCDF, state=None) -> MuesliSystem:
    """Variables ``c_0..c_{n-1}, s_0..s_{n-1}``; ``W = -1`` between ``s_u``
    and ``c_v`` for every unreciprocated arc ``(u, v)``.

    The input to ``c_v`` is ``-sum s_u``, so its update function is
    ``F_c(indeg(v) + input)``: a normal CDF with mean shifted by the in-degree.
    """
    n = a.n
    src, dst = a.arcs()
    rows = np.concatenate([dst, n + src])
    cols = np.concatenate([n + src, dst])
    W = sp.csr_matrix((-np.ones(len(rows)), (rows, cols)), shape=(2 * n, 2 * n))
    funcs: list[UpdateFunction] = []
    mu_c = np.broadcast_to(f_c.mu, (n,))
    sd_c = np.broadcast_to(f_c.sigma, (n,))
    mu_s = np.broadcast_to(f_s.mu, (n,))
    sd_s = np.broadcast_to(f_s.sigma, (n,))
    for v, d in enumerate(a.indeg.tolist()):
        funcs.append(NormalCDF(float(mu_c[v]) - d, float(sd_c[v])))
    for u, d in enumerate(a.outdeg.tolist()):
        funcs.append(NormalCDF(float(mu_s[u]) - d, float(sd_s[u])))
    x0 = None if state is None else np.concatenate([state.c, state.s])
    sys_ = MuesliSystem(W, funcs, 0.0, 1.0, x0=x0)
    sys_.names = [f"c{v}" for v in range(n)] + [f"s{v}" for v in range(n)]
    return sys_


def make_connectivity(adjacency, origin: int, steepness: float = 20.0,
                      threshold: float = 0.5) -> MuesliSystem:
    """Reachability from ``origin`` in an undirected graph.

    Each node follows a sigmoid of its neighbors' summed values, switching on
    between input 0 and input 1. The origin's sigmoid is shifted so far left
    that it returns 1 to within 1e-12 for any non-negative input.
    """
    A = _as_csr(adjacency, None)
    n = A.shape[0]
    if not 0 <= origin < n:
        raise IndexError(f"origin {origin} out of range")
    funcs: list[UpdateFunction] = [Logistic(threshold, steepness)] * n
    funcs[origin] = Logistic(-40.0 / steepness, steepness)
    x0 = np.zeros(n)
    x0[origin] = 1.0
    return MuesliSystem(A, funcs, 0.0, 1.0, x0=x0)


def make_party_affiliation(weights, steepness: float = 10.0, x0=None) -> MuesliSystem:
    """Softened party-affiliation game: strategies in [-1, 1], each player
    leans toward ``sign((W x)_i)``; positive weights are friends."""
    W = _as_csr(weights, None)
    n = W.shape[0]
    return MuesliSystem(W, [Logistic(0.0, steepness, -1.0, 1.0)] * n, -1.0, 1.0, x0=x0)


def make_tech_diffusion(minutes, free_limit: float, steepness: float = 1.0,
                        x0=None) -> MuesliSystem:
    """Two-provider choice in [0, 1]; ``minutes[i, j]`` is expected call time.

    A user moves to provider 1 once the expected minutes to provider-1 users
    passes ``free_limit``.
    """
    W = _as_csr(minutes, None)
    if W.nnz and W.data.min() < 0:
        raise ValueError("minutes must be non-negative")
    if free_limit < 0:
        raise ValueError("free_limit must be non-negative")
    n = W.shape[0]
    return MuesliSystem(W, [Logistic(free_limit, steepness)] * n, 0.0, 1.0, x0=x0)


# --- system files --------------------------------------------------------

_SPEC = re.compile(r"(\w+)=(\S+)")


def parse_function(tokens: Iterable[str]) -> UpdateFunction:
    tokens = list(tokens)
    kind, kv = tokens[0], dict(_SPEC.fullmatch(t).groups() for t in tokens[1:])
    lo, hi = float(kv.get("lo", 0.0)), float(kv.get("hi", 1.0))
    if kind == "normal":
        return NormalCDF(float(kv["mu"]), float(kv["sigma"]), lo, hi)
    if kind == "logistic":
        return Logistic(float(kv["center"]), float(kv["steepness"]), lo, hi)
    raise ValueError(f"unknown update function {kind!r}")


def load_system(path) -> MuesliSystem:
    """Read a system definition.

    Format (``#`` starts a comment)::

        n 3
        [bounds]          # optional; "default lo hi" or "i lo hi"
        default 0 1
        [weights]         # one line per undirected pair: i j w
        0 1 1.0
        [functions]       # "default <spec>" or "i <spec>"
        default logistic center=0.5 steepness=20
        2 normal mu=0 sigma=1 lo=0 hi=1
        [init]            # optional: i value
        0 1.0

    Weight pairs are mirrored; listing both ``i j`` and ``j i`` with different
    weights is a symmetry violation.
    """
    n = None
    section = None
    bounds: dict = {}
    pairs: dict[tuple[int, int], float] = {}
    funcs: dict = {}
    init: dict[int, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            if line.startswith("["):
                section = line.strip("[]").strip()
                continue
            tok = line.split()
            try:
                if section is None:
                    if tok[0] != "n" or len(tok) != 2:
                        raise ValueError("expected 'n <count>' before any section")
                    n = int(tok[1])
                elif section == "bounds":
                    key = "default" if tok[0] == "default" else int(tok[0])
                    bounds[key] = (float(tok[1]), float(tok[2]))
                elif section == "weights":
                    i, j, w = int(tok[0]), int(tok[1]), float(tok[2])
                    if i == j:
                        raise SymmetryError(f"{where}: diagonal weight W[{i},{i}]")
                    key = (min(i, j), max(i, j))
                    if key in pairs and abs(pairs[key] - w) > SYMMETRY_TOL:
                        raise SymmetryError(
                            f"{where}: W[{i},{j}]={w} but W[{j},{i}]={pairs[key]}")
                    pairs[key] = w
                elif section == "functions":
                    key = "default" if tok[0] == "default" else int(tok[0])
                    funcs[key] = parse_function(tok[1:])
                elif section == "init":
                    init[int(tok[0])] = float(tok[1])
                else:
                    raise ValueError(f"unknown section [{section}]")
            except SymmetryError:
                raise
            except (ValueError, KeyError, IndexError, AttributeError) as e:
                raise ValueError(f"{where}: {e}") from None
    if n is None:
        raise ValueError(f"{path}: missing 'n <count>'")
    lo = np.full(n, bounds.get("default", (0.0, 1.0))[0])
    hi = np.full(n, bounds.get("default", (0.0, 1.0))[1])
    for k, (a, b) in bounds.items():
        if k != "default":
            lo[k], hi[k] = a, b
    functions = []
    for i in range(n):
        f = funcs.get(i, funcs.get("default"))
        if f is None:
            raise ValueError(f"{path}: no update function for variable {i}")
        functions.append(f)
    if pairs:
        ij = np.array(list(pairs), dtype=np.int64)
        w = np.array(list(pairs.values()))
        W = sp.csr_matrix((np.concatenate([w, w]),
                           (np.concatenate([ij[:, 0], ij[:, 1]]),
                            np.concatenate([ij[:, 1], ij[:, 0]]))), shape=(n, n))
    else:
        W = sp.csr_matrix((n, n))
    x0 = np.clip(0.0, lo, hi)
    for i, v in init.items():
        x0[i] = v
    return MuesliSystem(W, functions, lo, hi, x0=x0)
