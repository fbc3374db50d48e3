"""Experiment harness: convergence speed, cross-initialization uniqueness,
score distributions and precision/recall against planted ground truth.

Reports are plain dataclasses; the ``write_*`` helpers emit CSV with log10
columns precomputed so any plotting tool can draw the log-scale views.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (IterationConfig, ScoreState, _Stepper, default_transfers, init_label,
                   iterate)
from .graph import ArcSet, unreciprocated
from .synthgen import GroundTruth, PlantedInstance

NA = "NA"
BURN_IN = 2


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return NA
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _log10(v: float):
    return math.log10(v) if v > 0 else None


# --- geometric decay ----------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    rate: float | None      # per-iteration contraction factor
    intercept: float | None
    residual: float | None  # sum of squared log10 residuals
    points: int


def fit_geometric_decay(values: Sequence[float], burn_in: int = BURN_IN,
                        window: int | None = None) -> DecayFit:
    """Least squares fit of ``log(values[t]) = log(a) + t log(r)``.

    The first ``burn_in`` entries are skipped and zero entries (exact
    convergence) are excluded. ``window`` caps the number of points used.
    """
    v = np.asarray(values, dtype=float)
    t = np.arange(len(v))[burn_in:]
    v = v[burn_in:]
    if window is not None:
        t, v = t[:window], v[:window]
    keep = v > 0
    t, v = t[keep], v[keep]
    if len(v) < 2:
        return DecayFit(None, None, None, len(v))
    y = np.log10(v)
    slope, icept = np.polyfit(t, y, 1)
    res = float(((y - (slope * t + icept)) ** 2).sum())
    return DecayFit(float(10.0 ** slope), float(10.0 ** icept), res, len(v))


# --- convergence ---------------------------------------------------------

@dataclass
class ConvergenceReport:
    init: str
    l1_c: np.ndarray
    l1_s: np.ndarray
    fit_c: DecayFit
    fit_s: DecayFit
    converged: bool
    state: ScoreState | None = field(default=None, repr=False)

    def successive_ratios(self, burn_in: int = BURN_IN) -> tuple[np.ndarray, np.ndarray]:
        def ratios(x):
            x = x[burn_in:]
            with np.errstate(divide="ignore", invalid="ignore"):
                return x[1:] / x[:-1]
        return ratios(self.l1_c), ratios(self.l1_s)


def convergence_experiment(a: ArcSet, f_c=None, f_s=None, inits: Iterable = (0, 1, 0.5, "random"),
                           eps: float = 1e-6, max_iterations: int = 50, seed: int = 0,
                           burn_in: int = BURN_IN, window: int | None = None,
                           workers: int = 1) -> list[ConvergenceReport]:
    inits = list(inits)
    if not inits:
        raise ValueError("need at least one initialization")
    if f_c is None or f_s is None:
        f_c, f_s = default_transfers()
    out = []
    for init in inits:
        cfg = IterationConfig(eps, max_iterations, init, seed)
        state, trace = iterate(a, f_c, f_s, cfg, workers=workers, track_potential=False)
        l1c, l1s = trace.column("l1_c"), trace.column("l1_s")
        out.append(ConvergenceReport(init_label(init), l1c, l1s,
                                     fit_geometric_decay(l1c, burn_in, window),
                                     fit_geometric_decay(l1s, burn_in, window),
                                     trace.converged, state))
    return out


def write_convergence_csv(reports: Sequence[ConvergenceReport], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("init,iteration,l1_c,l1_s,log10_l1_c,log10_l1_s\n")
        for r in reports:
            for t, (c, s) in enumerate(zip(r.l1_c.tolist(), r.l1_s.tolist()), 1):
                fh.write(",".join([r.init, str(t), _fmt(c), _fmt(s),
                                   _fmt(_log10(c)), _fmt(_log10(s))]) + "\n")


# --- uniqueness ------------------------------------------------------------

@dataclass
class UniquenessReport:
    pair: str
    l1_c: np.ndarray        # entry t: distance after iteration t + 1
    l1_s: np.ndarray
    linf_final: float
    states: tuple[ScoreState, ScoreState] | None = field(default=None, repr=False)


def uniqueness_experiment(a: ArcSet, f_c=None, f_s=None,
                          init_pairs: Iterable[tuple] = ((0, 1), (0, 0.5)),
                          eps: float = 1e-6, max_iterations: int = 50, seed: int = 0,
                          workers: int = 1) -> list[UniquenessReport]:
    """Run two initializations side by side and record their distance.

    Both runs advance together until both have met the stopping rule (a run
    that has stopped is held fixed) or the iteration cap is passed.
    """
    if f_c is None or f_s is None:
        f_c, f_s = default_transfers()
    reports = []
    with _Stepper(a, f_c, f_s, workers) as st:
        for ia, ib in init_pairs:
            A = IterationConfig(eps, max_iterations, ia, seed).initial_state(a.n)
            B = IterationConfig(eps, max_iterations, ib, seed).initial_state(a.n)
            (ca, sa), (cb, sb) = (A.c, A.s), (B.c, B.s)
            done_a = done_b = False
            dc, ds = [], []
            k = 0
            while True:
                k += 1
                if not done_a:
                    c2, s2, _, _ = st.sweep(ca, sa)
                    done_a = max(np.abs(c2 - ca).max(initial=0), np.abs(s2 - sa).max(initial=0)) < eps
                    ca, sa = c2, s2
                if not done_b:
                    c2, s2, _, _ = st.sweep(cb, sb)
                    done_b = max(np.abs(c2 - cb).max(initial=0), np.abs(s2 - sb).max(initial=0)) < eps
                    cb, sb = c2, s2
                dc.append(float(np.abs(ca - cb).sum()))
                ds.append(float(np.abs(sa - sb).sum()))
                if (done_a and done_b) or k > max_iterations:
                    break
            linf = max(float(np.abs(ca - cb).max(initial=0)), float(np.abs(sa - sb).max(initial=0)))
            label = f"{init_label(ia)}-vs-{init_label(ib)}"
            reports.append(UniquenessReport(label, np.array(dc), np.array(ds), linf,
                                            (ScoreState(ca, sa, k), ScoreState(cb, sb, k))))
    return reports


def write_uniqueness_csv(reports: Sequence[UniquenessReport], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("pair,iteration,l1_c,l1_s,log10_l1_c,log10_l1_s\n")
        for r in reports:
            for t, (c, s) in enumerate(zip(r.l1_c.tolist(), r.l1_s.tolist()), 1):
                fh.write(",".join([r.pair, str(t), _fmt(c), _fmt(s),
                                   _fmt(_log10(c)), _fmt(_log10(s))]) + "\n")


# --- precision / recall --------------------------------------------------

@dataclass(frozen=True)
class ClassPR:
    precision: float | None   # None when nothing scores above the threshold
    recall: float
    true_positives: int
    predicted: int
    actual: int


@dataclass(frozen=True)
class PrecisionRecall:
    threshold: float
    celebrity: ClassPR
    spammer: ClassPR


def class_pr(scores: np.ndarray, members: np.ndarray, threshold: float) -> ClassPR:
    members = np.asarray(members, dtype=np.int64)
    if members.size == 0:
        raise ValueError("empty ground-truth set")
    hit = np.asarray(scores) > threshold
    predicted = int(hit.sum())
    tp = int(hit[members].sum())
    precision = tp / predicted if predicted else None
    return ClassPR(precision, tp / members.size, tp, predicted, int(members.size))


def precision_recall(state: ScoreState, truth: GroundTruth, threshold: float = 0.5) -> PrecisionRecall:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return PrecisionRecall(threshold,
                           class_pr(state.c, truth.celebrities, threshold),
                           class_pr(state.s, truth.spammers, threshold))


@dataclass(frozen=True)
class PRPoint:
    params: Mapping[str, float]
    instance: int
    pr: PrecisionRecall


def pr_sweep(instances: Sequence[PlantedInstance], grid: Sequence[Mapping[str, float]],
             eps: float = 1e-6, max_iterations: int = 50, init=0,
             threshold: float = 0.5, workers: int = 1, jobs: int = 1) -> list[PRPoint]:
    """Score every instance under every transfer setting in ``grid``.

    Grid entries may set any of ``mu_c, sigma_c, mu_s, sigma_s``; the rest
    keep their defaults. ``jobs`` runs that many (setting, instance) pairs
    at once; output order is grid-major either way.
    """
    if not grid:
        raise ValueError("empty parameter grid")
    arcs = [unreciprocated(inst.graph) for inst in instances]
    cfg = IterationConfig(eps, max_iterations, init)

    def one(task):
        params, k = task
        f_c, f_s = default_transfers(**params)
        state, _ = iterate(arcs[k], f_c, f_s, cfg, workers=workers, track_potential=False)
        return PRPoint(dict(params), k, precision_recall(state, instances[k].truth, threshold))

    tasks = [(params, k) for params in grid for k in range(len(instances))]
    if jobs <= 1:
        return [one(t) for t in tasks]
    with ThreadPoolExecutor(jobs) as pool:
        return list(pool.map(one, tasks))


def write_pr_csv(points: Sequence[PRPoint], path) -> None:
    keys = sorted({k for p in points for k in p.params})
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join([*keys, "instance", "threshold", "precision_c", "recall_c",
                           "precision_s", "recall_s"]) + "\n")
        for p in points:
            row = [_fmt(p.params.get(k)) for k in keys]
            row += [str(p.instance), _fmt(p.pr.threshold),
                    _fmt(p.pr.celebrity.precision), _fmt(p.pr.celebrity.recall),
                    _fmt(p.pr.spammer.precision), _fmt(p.pr.spammer.recall)]
            fh.write(",".join(row) + "\n")


# --- histograms --------------------------------------------------------------

@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    all_counts: np.ndarray
    planted_counts: np.ndarray

    @staticmethod
    def _density(counts):
        total = counts.sum()
        width = 1.0 / len(counts)
        return counts / (total * width) if total else np.zeros(len(counts))

    def density(self) -> tuple[np.ndarray, np.ndarray]:
        return self._density(self.all_counts), self._density(self.planted_counts)

    def log10_density(self) -> tuple[list, list]:
        da, dp = self.density()
        return [_log10(v) for v in da.tolist()], [_log10(v) for v in dp.tolist()]


def score_histograms(state: ScoreState, truth: GroundTruth, bins: int = 20) -> dict[str, Histogram]:
    if bins < 2:
        raise ValueError("need at least 2 bins")
    edges = np.linspace(0.0, 1.0, bins + 1)
    out = {}
    for name, scores, members in (("celebrity", state.c, truth.celebrities),
                                  ("spammer", state.s, truth.spammers)):
        all_counts, _ = np.histogram(scores, edges)
        planted, _ = np.histogram(scores[members], edges)
        out[name] = Histogram(edges, all_counts, planted)
    return out


def write_hist_csv(hists: Mapping[str, Histogram], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("score,bin_lo,bin_hi,all_count,planted_count,"
                 "log10_density_all,log10_density_planted\n")
        for name, h in hists.items():
            la, lp = h.log10_density()
            for k in range(len(h.all_counts)):
                fh.write(",".join([name, _fmt(float(h.edges[k])), _fmt(float(h.edges[k + 1])),
                                   str(int(h.all_counts[k])), str(int(h.planted_counts[k])),
                                   _fmt(la[k]), _fmt(lp[k])]) + "\n")
