"""Random directed graphs with planted celebrities and spammers.

An undirected friendship graph H is drawn first (Chung-Lu expected-degree
power law, or Erdos-Renyi). Each H edge becomes a reciprocated pair with
probability ``1 - p`` and a single arc in a random direction otherwise.
Every spammer then links to each other node with probability ``p_s`` and
every node links to each celebrity with probability ``p_c``.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import DirectedGraph, reciprocated_pairs, write_edge_list

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ErdosRenyi:
    edge_prob: float

    name = "erdos-renyi"


@dataclass(frozen=True)
class ChungLu:
    exponent: float = 0.5
    avg_degree: float = 100.0

    name = "chung-lu"


@dataclass(frozen=True)
class GeneratorParams:
    n: int
    n_c: int
    n_s: int
    p: float
    p_c: float
    p_s: float
    h_model: ErdosRenyi | ChungLu = field(default_factory=ChungLu)
    seed: int = 0

    def __post_init__(self):
        if self.n < 0 or self.n_c < 0 or self.n_s < 0:
            raise ValueError("counts must be non-negative")
        if self.n_c + self.n_s > self.n:
            raise ValueError(f"n_c + n_s = {self.n_c + self.n_s} exceeds N = {self.n}")
        for name in ("p", "p_c", "p_s"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        h = self.h_model
        if isinstance(h, ErdosRenyi) and not 0.0 <= h.edge_prob <= 1.0:
            raise ValueError("edge_prob outside [0, 1]")
        if isinstance(h, ChungLu) and (h.avg_degree < 0 or h.avg_degree > max(self.n - 1, 0)):
            raise ValueError(f"average degree {h.avg_degree} infeasible for N={self.n}")

    def replace(self, **kw) -> "GeneratorParams":
        return dataclasses.replace(self, **kw)

    def describe(self) -> dict:
        d = {k: getattr(self, k) for k in ("n", "n_c", "n_s", "p", "p_c", "p_s", "seed")}
        d["h_model"] = self.h_model.name
        d.update(dataclasses.asdict(self.h_model))
        return d


PRESETS = {
    "paper-2M": GeneratorParams(n=2_000_000, n_c=1000, n_s=5000, p=0.2,
                                p_c=0.00025, p_s=0.00025, h_model=ChungLu(0.5, 100.0)),
    # N scaled down by 100 with p_s * N and p_c * N held at 500
    "desk": GeneratorParams(n=20_000, n_c=100, n_s=250, p=0.2,
                            p_c=0.025, p_s=0.025, h_model=ChungLu(0.5, 100.0)),
}


@dataclass(frozen=True)
class GroundTruth:
    celebrities: np.ndarray
    spammers: np.ndarray

    def __post_init__(self):
        c = np.unique(np.asarray(self.celebrities, dtype=np.int64))
        s = np.unique(np.asarray(self.spammers, dtype=np.int64))
        if np.intersect1d(c, s).size:
            raise ValueError("celebrity and spammer sets overlap")
        object.__setattr__(self, "celebrities", c)
        object.__setattr__(self, "spammers", s)


@dataclass(frozen=True)
class InstanceStats:
    h_edges: int
    reciprocated_h_pairs: int   # H edges emitted in both directions
    spam_arcs: int              # distinct arcs drawn by the spammer mechanism
    celebrity_arcs: int         # distinct arcs drawn by the celebrity mechanism
    arcs: int                   # arcs in the final graph after collapsing overlaps
    reciprocated_pairs: int     # reciprocated pairs in the final graph


@dataclass(frozen=True, eq=False)
class PlantedInstance:
    graph: DirectedGraph
    truth: GroundTruth
    params: GeneratorParams
    stats: InstanceStats


@dataclass(frozen=True)
class UndirectedEdges:
    n: int
    u: np.ndarray   # u < v
    v: np.ndarray

    @property
    def m(self) -> int:
        return len(self.u)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.u, minlength=self.n) + np.bincount(self.v, minlength=self.n)


def _rngs(seed: int):
    h_ss, plant_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(h_ss), np.random.default_rng(plant_ss)


def chung_lu_weights(n: int, exponent: float, avg_degree: float) -> np.ndarray:
    """Weights ``w_i ~ i^-exponent`` (i = 1..n), scaled to mean ``avg_degree``.

    Non-increasing in the node index.
    """
    if n == 0:
        return np.zeros(0)
    w = np.arange(1, n + 1, dtype=float) ** (-exponent)
    return w * (avg_degree / w.mean())


def _erdos_renyi(n: int, prob: float, rng: np.random.Generator) -> UndirectedEdges:
    pairs = n * (n - 1) // 2
    m = int(rng.binomial(pairs, prob)) if pairs else 0
    k = np.sort(rng.choice(pairs, size=m, replace=False)) if m else np.zeros(0, np.int64)
    i_ = np.arange(n, dtype=np.int64)
    offsets = i_ * (2 * n - i_ - 1) // 2        # linear index of pair (i, i+1)
    u = np.searchsorted(offsets, k, side="right") - 1
    v = k - offsets[u] + u + 1
    return UndirectedEdges(n, u.astype(np.int64), v.astype(np.int64))


def _chung_lu(n: int, w: np.ndarray, rng: np.random.Generator) -> UndirectedEdges:
    # Row i, columns j > i. Connection probabilities are non-increasing in j,
    # so draw candidates at the row's largest rate with geometric skips and
    # thin each to its own probability.
    total = w.sum()
    us, vs = [], []
    for i in range(n - 1):
        q = min(1.0, w[i] * w[i + 1] / total)
        if q <= 0.0:
            break
        span = n - i - 1
        expect = q * span
        pos = np.empty(0, dtype=np.int64)
        last = i
        while True:
            draw = int(expect - (last - i) * q + 5.0 * math.sqrt(expect) + 16)
            steps = rng.geometric(q, size=max(draw, 16))
            more = last + np.cumsum(steps)
            pos = np.concatenate([pos, more])
            last = int(more[-1])
            if last >= n:
                break
        pos = pos[pos < n]
        if pos.size == 0:
            continue
        keep = rng.random(pos.size) * q < np.minimum(1.0, w[i] * w[pos] / total)
        pos = pos[keep]
        us.append(np.full(pos.size, i, dtype=np.int64))
        vs.append(pos)
    if not us:
        return UndirectedEdges(n, np.zeros(0, np.int64), np.zeros(0, np.int64))
    return UndirectedEdges(n, np.concatenate(us), np.concatenate(vs))


def generate_h(params: GeneratorParams, rng: np.random.Generator | None = None) -> UndirectedEdges:
    """Draw the undirected friendship graph."""
    if rng is None:
        rng = _rngs(params.seed)[0]
    h = params.h_model
    if isinstance(h, ErdosRenyi):
        return _erdos_renyi(params.n, h.edge_prob, rng)
    return _chung_lu(params.n, chung_lu_weights(params.n, h.exponent, h.avg_degree), rng)


def _random_partners(anchor: int, n: int, prob: float, rng) -> np.ndarray:
    """Independent coin flips over all other nodes, drawn as a binomial count
    followed by a uniform choice without replacement."""
    k = int(rng.binomial(n - 1, prob)) if n > 1 else 0
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    t = rng.choice(n - 1, size=k, replace=False).astype(np.int64)
    t += t >= anchor
    return np.sort(t)


def plant(h: UndirectedEdges, params: GeneratorParams,
          rng: np.random.Generator | None = None) -> PlantedInstance:
    if rng is None:
        rng = _rngs(params.seed)[1]
    n = params.n
    if h.n != n:
        raise ValueError(f"H has {h.n} nodes, params say {n}")
    perm = rng.permutation(n)
    truth = GroundTruth(perm[:params.n_c], perm[params.n_c:params.n_c + params.n_s])

    both = rng.random(h.m) < 1.0 - params.p
    forward = rng.random(h.m) < 0.5
    single = ~both
    src = [h.u[both], h.v[both],
           np.where(forward, h.u, h.v)[single]]
    dst = [h.v[both], h.u[both],
           np.where(forward, h.v, h.u)[single]]

    spam_arcs = 0
    for u in truth.spammers.tolist():
        t = _random_partners(u, n, params.p_s, rng)
        src.append(np.full(t.size, u, dtype=np.int64))
        dst.append(t)
        spam_arcs += t.size
    celeb_arcs = 0
    for v in truth.celebrities.tolist():
        t = _random_partners(v, n, params.p_c, rng)
        src.append(t)
        dst.append(np.full(t.size, v, dtype=np.int64))
        celeb_arcs += t.size

    g = DirectedGraph.from_arcs(np.concatenate(src), np.concatenate(dst), n)
    stats = InstanceStats(
        h_edges=h.m,
        reciprocated_h_pairs=int(both.sum()),
        spam_arcs=spam_arcs,
        celebrity_arcs=celeb_arcs,
        arcs=g.m,
        reciprocated_pairs=reciprocated_pairs(g),
    )
    return PlantedInstance(g, truth, params, stats)


def generate(params: GeneratorParams) -> PlantedInstance:
    """Draw H and plant the ground truth; fully determined by ``params.seed``."""
    h_rng, plant_rng = _rngs(params.seed)
    return plant(generate_h(params, h_rng), params, plant_rng)


@dataclass(frozen=True)
class ExpectedStats:
    h_edges: float
    h_edges_sd: float
    reciprocated_h_pairs: float
    reciprocated_h_pairs_sd: float
    spam_arcs: float
    spam_arcs_sd: float
    celebrity_arcs: float
    celebrity_arcs_sd: float

    @property
    def arcs_upper(self) -> float:
        """Expected arcs before overlaps collapse."""
        single = self.h_edges - self.reciprocated_h_pairs
        return 2 * self.reciprocated_h_pairs + single + self.spam_arcs + self.celebrity_arcs


def _chung_lu_moments(w: np.ndarray) -> tuple[float, float]:
    """Exact sums over pairs i < j of ``p_ij`` and ``p_ij (1 - p_ij)`` with
    ``p_ij = min(1, w_i w_j / S)``, for non-increasing ``w``."""
    n = len(w)
    if n < 2:
        return 0.0, 0.0
    total = w.sum()
    suf1 = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
    suf2 = np.concatenate([np.cumsum((w ** 2)[::-1])[::-1], [0.0]])
    i = np.arange(n)
    # j < cap[i] have w_i w_j >= S (w non-increasing, so a prefix)
    cap = np.searchsorted(-w, -(total / np.where(w > 0, w, np.inf)), side="right")
    start = np.maximum(cap, i + 1)
    n_capped = np.maximum(cap - (i + 1), 0)
    a = w / total
    s1 = n_capped + a * suf1[start]
    s2 = a * suf1[start] - a * a * suf2[start]
    return float(s1.sum()), float(s2.sum())


def expected_stats(params: GeneratorParams) -> ExpectedStats:
    n, p = params.n, params.p
    h = params.h_model
    if isinstance(h, ErdosRenyi):
        pairs = n * (n - 1) / 2
        eh, vh = pairs * h.edge_prob, pairs * h.edge_prob * (1 - h.edge_prob)
    else:
        eh, vh = _chung_lu_moments(chung_lu_weights(n, h.exponent, h.avg_degree))
    er = eh * (1 - p)
    vr = eh * p * (1 - p) + (1 - p) ** 2 * vh
    trials = max(n - 1, 0)
    es = params.n_s * trials * params.p_s
    vs = es * (1 - params.p_s)
    ec = params.n_c * trials * params.p_c
    vc = ec * (1 - params.p_c)
    return ExpectedStats(eh, math.sqrt(vh), er, math.sqrt(vr), es, math.sqrt(vs), ec, math.sqrt(vc))


def memory_estimate(params: GeneratorParams) -> int:
    """Rough peak bytes to generate and score an instance."""
    ex = expected_stats(params)
    # arc arrays during construction (src, dst, keys, sort scratch) and
    # both CSR directions afterwards, 8 bytes per entry
    return int(ex.arcs_upper * 8 * 8 + params.n * 8 * 12)


def bipartite_regular(n_left: int, degree: int) -> DirectedGraph:
    """Circulant ``degree``-regular bipartite digraph, all arcs left to right.

    Left node ``i`` points at right nodes ``i, i+1, ..., i+degree-1`` (mod
    ``n_left``); with ``n_left == degree`` it is the complete bipartite graph.
    """
    if degree > n_left:
        raise ValueError("degree cannot exceed the part size")
    left = np.repeat(np.arange(n_left, dtype=np.int64), degree)
    right = n_left + (left + np.tile(np.arange(degree, dtype=np.int64), n_left)) % n_left
    labels = [f"L{i}" for i in range(n_left)] + [f"R{i}" for i in range(n_left)]
    return DirectedGraph.from_arcs(left, right, 2 * n_left, labels)


def write_instance(inst: PlantedInstance, graph_path, truth_path) -> None:
    header = [f"{k}={v}" for k, v in inst.params.describe().items()]
    write_edge_list(inst.graph, graph_path, header=header)
    lab = inst.graph.labels
    with open(truth_path, "w", encoding="utf-8") as fh:
        for h in header:
            fh.write(f"# {h}\n")
        for v in inst.truth.celebrities.tolist():
            fh.write(f"C {lab[v]}\n")
        for v in inst.truth.spammers.tolist():
            fh.write(f"S {lab[v]}\n")


def read_truth(path, label_index: dict[str, int]) -> GroundTruth:
    """Read ``C <label>`` / ``S <label>`` lines against a graph's labels."""
    c, s = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if len(tok) != 2 or tok[0] not in ("C", "S"):
                raise ValueError(f"{path}:{lineno}: expected 'C <label>' or 'S <label>'")
            if tok[1] not in label_index:
                raise KeyError(f"{path}:{lineno}: label {tok[1]!r} not in the graph")
            (c if tok[0] == "C" else s).append(label_index[tok[1]])
    return GroundTruth(np.array(c, dtype=np.int64), np.array(s, dtype=np.int64))

