"""Command-line entry point: ``scrank {generate,rank,eval,muesli}``.

Parameters come from built-in defaults, then an optional ``key=value``
config file, then command-line flags (flags win). Every run writes a
``manifest.json`` next to its outputs with the resolved parameters and
SHA-256 digests of its inputs.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from collections import deque
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import __version__, core, evaluation, muesli, synthgen
from .graph import load_edge_list, summary, unreciprocated, write_edge_list

log = logging.getLogger("scrank")

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_INVALID_INPUT = 2
EXIT_IO_ERROR = 3

LARGE_INSTANCE_BYTES = 2 * 2**30


class InvalidInput(Exception):
    pass


# --- config -----------------------------------------------------------------

SCORE_KEYS = {
    "mu_c": float, "sigma_c": float, "mu_s": float, "sigma_s": float,
    "epsilon": float, "max_iters": int, "init": str, "seed": int, "workers": int,
}
SCORE_DEFAULTS = {
    "mu_c": core.DEFAULT_MU, "sigma_c": core.DEFAULT_SIGMA,
    "mu_s": core.DEFAULT_MU, "sigma_s": core.DEFAULT_SIGMA,
    "epsilon": 1e-6, "max_iters": 50, "init": "0", "seed": 0, "workers": 1,
}
GEN_KEYS = {
    "preset": str, "kind": str, "n": int, "n_c": int, "n_s": int, "p": float,
    "p_c": float, "p_s": float, "h_model": str, "exponent": float,
    "avg_degree": float, "edge_prob": float, "degree": int, "seed": int,
}
MUESLI_KEYS = {
    "activation": str, "eps": float, "max_steps": int, "seed": int,
    "nodes": int, "edge_prob": float, "steepness": float, "origin": int,
}


def read_config(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInput(f"{path}:{lineno}: expected key=value")
            k, v = (t.strip() for t in line.split("=", 1))
            out[k] = v
    return out


def resolve(args, keys: dict, defaults: dict) -> dict:
    cfg = dict(defaults)
    if getattr(args, "config", None):
        for k, v in read_config(args.config).items():
            if k not in keys:
                raise InvalidInput(f"{args.config}: unknown key {k!r}")
            try:
                cfg[k] = keys[k](v)
            except ValueError:
                raise InvalidInput(f"{args.config}: bad value for {k}: {v!r}") from None
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _add_keys(p: argparse.ArgumentParser, keys: dict, skip=()):
    for k, typ in keys.items():
        if k not in skip:
            p.add_argument(f"--{k}", type=typ, default=None)


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, params: dict, inputs=(), outputs=()):
    data = {
        "command": command,
        "version": __version__,
        "params": params,
        "inputs": {str(p): _digest(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _transfers(cfg):
    return core.default_transfers(cfg["mu_c"], cfg["sigma_c"], cfg["mu_s"], cfg["sigma_s"])


def _iter_cfg(cfg) -> core.IterationConfig:
    try:
        return core.IterationConfig(cfg["epsilon"], cfg["max_iters"], cfg["init"], cfg["seed"])
    except ValueError as e:
        raise InvalidInput(str(e)) from None


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- generate -----------------------------------------------------------------

def _gen_params(cfg) -> synthgen.GeneratorParams:
    base = synthgen.PRESETS.get(cfg.get("preset") or "desk")
    if base is None:
        raise InvalidInput(f"unknown preset {cfg['preset']!r}; have {sorted(synthgen.PRESETS)}")
    over = {k: cfg[k] for k in ("n", "n_c", "n_s", "p", "p_c", "p_s", "seed") if cfg.get(k) is not None}
    h = base.h_model
    model = cfg.get("h_model") or h.name
    if model == "erdos-renyi":
        prob = cfg.get("edge_prob")
        if prob is None:
            raise InvalidInput("erdos-renyi needs edge_prob")
        over["h_model"] = synthgen.ErdosRenyi(prob)
    elif model == "chung-lu":
        over["h_model"] = synthgen.ChungLu(
            cfg["exponent"] if cfg.get("exponent") is not None else getattr(h, "exponent", 0.5),
            cfg["avg_degree"] if cfg.get("avg_degree") is not None else getattr(h, "avg_degree", 100.0))
    else:
        raise InvalidInput(f"unknown h_model {model!r}")
    try:
        return base.replace(**over)
    except ValueError as e:
        raise InvalidInput(str(e)) from None


def cmd_generate(args) -> int:
    cfg = resolve(args, GEN_KEYS, {"seed": 0, "kind": "planted"})
    out = Path(args.out)
    graph_path, truth_path = out / "graph.txt", out / "truth.txt"
    if cfg["kind"] == "bipartite":
        degree = cfg.get("degree") or 500
        n_left = cfg.get("n") or degree
        try:
            g = synthgen.bipartite_regular(n_left, degree)
        except ValueError as e:
            raise InvalidInput(str(e)) from None
        _out_dir(out)
        write_edge_list(g, graph_path, header=[f"bipartite n_left={n_left} degree={degree}"])
        print(summary(g))
        write_manifest(out, "generate", cfg, outputs=[graph_path])
        return EXIT_OK
    if cfg["kind"] != "planted":
        raise InvalidInput(f"unknown kind {cfg['kind']!r}")
    params = _gen_params(cfg)
    expected = synthgen.expected_stats(params)
    need = synthgen.memory_estimate(params)
    avail = os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    print(f"expected: H edges {expected.h_edges:.0f}, spam arcs {expected.spam_arcs:.0f}, "
          f"celebrity arcs {expected.celebrity_arcs:.0f}; memory estimate {need / 2**30:.2f} GiB")
    if need > avail / 2:
        log.warning("memory estimate %.1f GiB exceeds half of physical memory (%.1f GiB)",
                    need / 2**30, avail / 2**30)
    elif need > LARGE_INSTANCE_BYTES:
        log.warning("memory estimate %.1f GiB; this instance is meant for a large machine",
                    need / 2**30)
    if args.dry_run:
        return EXIT_OK
    inst = synthgen.generate(params)
    _out_dir(out)
    synthgen.write_instance(inst, graph_path, truth_path)
    st = inst.stats
    print(f"realized: H edges {st.h_edges}, reciprocated H pairs {st.reciprocated_h_pairs} "
          f"(expected {expected.reciprocated_h_pairs:.0f}), spam arcs {st.spam_arcs}, "
          f"celebrity arcs {st.celebrity_arcs}")
    print(summary(inst.graph))
    write_manifest(out, "generate", params.describe(), outputs=[graph_path, truth_path])
    return EXIT_OK


# --- rank -----------------------------------------------------------------------

def cmd_rank(args) -> int:
    cfg = resolve(args, SCORE_KEYS, SCORE_DEFAULTS)
    icfg = _iter_cfg(cfg)
    g = load_edge_list(args.graph)
    a = unreciprocated(g)
    f_c, f_s = _transfers(cfg)
    state, trace = core.iterate(a, f_c, f_s, icfg, workers=cfg["workers"])
    out = _out_dir(args.out)
    scores, tr = out / "scores.tsv", out / "trace.csv"
    core.write_scores_tsv(a, state, scores)
    core.write_trace_csv(trace, tr)
    check = core.is_eps_fixed_point(a, state, f_c, f_s,
                                    core.fixed_point_tolerance(a, f_c, f_s, icfg.epsilon))
    print(summary(g, a))
    print(f"iterations={len(trace)} converged={trace.converged} "
          f"worst_residual={check.residual:.3g}")
    write_manifest(out, "rank", cfg, inputs=[args.graph], outputs=[scores, tr])
    return EXIT_OK if trace.converged else EXIT_NOT_CONVERGED


# --- eval -------------------------------------------------------------------------

def _parse_inits(text: str) -> list:
    return [core.parse_init(t) for t in text.split(",") if t]


def _parse_pairs(text: str) -> list[tuple]:
    out = []
    for item in text.split(","):
        a, _, b = item.partition(":")
        out.append((core.parse_init(a), core.parse_init(b)))
    return out


def _parse_grid(text: str) -> list[dict]:
    """``mu_s=50,100;sigma_s=25`` -> cartesian product of the listed values."""
    axes = []
    for part in text.split(";"):
        k, _, vals = part.partition("=")
        k = k.strip()
        if k not in ("mu_c", "sigma_c", "mu_s", "sigma_s"):
            raise InvalidInput(f"grid key {k!r} not a transfer parameter")
        axes.append([(k, float(v)) for v in vals.split(",")])
    grid = [{}]
    for ax in axes:
        grid = [{**g, k: v} for g in grid for k, v in ax]
    return grid


def _scores_against_truth(args):
    if not args.scores or not args.truth:
        raise InvalidInput("this experiment needs --scores and --truth")
    labels, state = core.read_scores_tsv(args.scores)
    index = {lab: i for i, lab in enumerate(labels)}
    try:
        truth = synthgen.read_truth(args.truth, index)
    except KeyError as e:
        raise InvalidInput(f"label mismatch between scores and truth: {e.args[0]}") from None
    return state, truth


def cmd_eval(args) -> int:
    cfg = resolve(args, SCORE_KEYS, SCORE_DEFAULTS)
    icfg = _iter_cfg(cfg)
    out = _out_dir(args.out)
    f_c, f_s = _transfers(cfg)
    exp = args.experiment
    inputs = [p for p in (args.graph, args.scores, args.truth) if p]
    outputs = []
    if exp in ("convergence", "uniqueness", "sweep"):
        if not args.graph:
            raise InvalidInput(f"{exp} needs --graph")
        g = load_edge_list(args.graph)
        a = unreciprocated(g)
    if exp == "convergence":
        reports = evaluation.convergence_experiment(
            a, f_c, f_s, _parse_inits(args.inits), icfg.epsilon, icfg.max_iterations,
            icfg.seed, workers=cfg["workers"])
        path = out / "convergence.csv"
        evaluation.write_convergence_csv(reports, path)
        for r in reports:
            print(f"init {r.init}: {len(r.l1_c)} iterations, decay rate c={r.fit_c.rate} "
                  f"s={r.fit_s.rate}")
    elif exp == "uniqueness":
        reports = evaluation.uniqueness_experiment(
            a, f_c, f_s, _parse_pairs(args.pairs), icfg.epsilon, icfg.max_iterations,
            icfg.seed, workers=cfg["workers"])
        path = out / "uniqueness.csv"
        evaluation.write_uniqueness_csv(reports, path)
        for r in reports:
            print(f"{r.pair}: final l_inf distance {r.linf_final:.6g}")
    elif exp == "pr":
        state, truth = _scores_against_truth(args)
        pr = evaluation.precision_recall(state, truth, args.threshold)
        path = out / "pr.csv"
        evaluation.write_pr_csv([evaluation.PRPoint(
            {k: cfg[k] for k in ("mu_c", "sigma_c", "mu_s", "sigma_s")}, 0, pr)], path)
    elif exp == "hist":
        state, truth = _scores_against_truth(args)
        path = out / "hist.csv"
        evaluation.write_hist_csv(evaluation.score_histograms(state, truth, args.bins), path)
    elif exp == "sweep":
        if not args.truth:
            raise InvalidInput("sweep needs --truth")
        try:
            truth = synthgen.read_truth(args.truth, g.label_index)
        except KeyError as e:
            raise InvalidInput(f"label mismatch between graph and truth: {e.args[0]}") from None
        inst = synthgen.PlantedInstance(g, truth, None, None)
        grid = _parse_grid(args.grid)
        points = evaluation.pr_sweep([inst], grid, icfg.epsilon, icfg.max_iterations,
                                     icfg.init, args.threshold, cfg["workers"], args.jobs)
        path = out / "pr.csv"
        evaluation.write_pr_csv(points, path)
    else:  # argparse restricts choices
        raise InvalidInput(f"unknown experiment {exp!r}")
    outputs.append(path)
    write_manifest(out, f"eval {exp}", cfg, inputs=inputs, outputs=outputs)
    return EXIT_OK


# --- muesli -------------------------------------------------------------------------

def bfs_reachable(adj: sp.csr_matrix, origin: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[origin] = True
    queue = deque([origin])
    while queue:
        u = queue.popleft()
        for v in adj.indices[adj.indptr[u]:adj.indptr[u + 1]].tolist():
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return seen


def random_undirected(n: int, prob: float, seed: int) -> sp.csr_matrix:
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < prob, 1)
    A = (upper | upper.T).astype(float)
    return sp.csr_matrix(A)


def _builtin_system(cfg, args):
    name = args.builtin
    if name == "connectivity":
        if args.graph:
            g = load_edge_list(args.graph)
            src, dst = g.arcs()
            A = sp.csr_matrix((np.ones(len(src)), (src, dst)), shape=(g.n, g.n))
            A = ((A + A.T) > 0).astype(float)
        else:
            A = random_undirected(cfg.get("nodes") or 100, cfg.get("edge_prob") or 0.02,
                                  cfg.get("seed") or 0)
        origin = cfg.get("origin") or 0
        sys_ = muesli.make_connectivity(A, origin, cfg.get("steepness") or 20.0)
        return sys_, bfs_reachable(sp.csr_matrix(A), origin)
    if name in ("party", "party-enemies"):
        w = 1.0 if name == "party" else -1.0
        W = np.array([[0.0, w], [w, 0.0]])
        return muesli.make_party_affiliation(W, cfg.get("steepness") or 10.0,
                                             x0=[1.0, -1.0]), None
    if name == "techdiff":
        k = 5
        M = np.zeros((2 * k, 2 * k))
        M[:k, :k] = 100.0
        M[k:, k:] = 100.0
        np.fill_diagonal(M, 0.0)
        x0 = np.r_[np.zeros(k), np.ones(k)]
        return muesli.make_tech_diffusion(M, 150.0, cfg.get("steepness") or 0.2, x0=x0), None
    raise InvalidInput(f"unknown builtin {name!r}")


def cmd_muesli(args) -> int:
    cfg = resolve(args, MUESLI_KEYS, {"activation": "round-robin", "eps": 1e-9,
                                      "max_steps": 100_000, "seed": 0})
    expected = None
    try:
        if args.system:
            sys_ = muesli.load_system(args.system)
        elif args.builtin:
            sys_, expected = _builtin_system(cfg, args)
        else:
            raise InvalidInput("give --system FILE or --builtin NAME")
        act = muesli.activation_from_name(cfg["activation"], sys_.n, cfg["seed"])
    except ValueError as e:
        raise InvalidInput(str(e)) from None
    result = muesli.run(sys_, act, cfg["eps"], cfg["max_steps"], record=True)
    pots = np.asarray(result.potentials)
    rises = np.diff(pots)
    if rises.size and rises.max() > 1e-12:
        raise AssertionError(f"potential increased by {rises.max():.3g}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    muesli.write_run_csv(result, out)
    print(f"steps={result.steps} converged={result.converged} "
          f"potential {pots[0]:.12g} -> {pots[-1]:.12g}")
    print("final state: " + " ".join(f"{v:.6g}" for v in result.x[:20])
          + (" ..." if sys_.n > 20 else ""))
    if expected is not None:
        match = bool(np.array_equal(result.x > 0.5, expected))
        print(f"matches BFS reachability: {match}")
    write_manifest(out.parent, "muesli", {**cfg, "builtin": args.builtin},
                   inputs=[p for p in (args.system, args.graph) if p], outputs=[out])
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


# --- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scrank", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw a planted-truth instance")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--dry-run", action="store_true",
                   help="print expected statistics and memory estimate only")
    _add_keys(g, GEN_KEYS)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("rank", help="score an edge list")
    r.add_argument("graph")
    r.add_argument("--config")
    r.add_argument("--out", required=True)
    _add_keys(r, SCORE_KEYS)
    r.set_defaults(func=cmd_rank)

    e = sub.add_parser("eval", help="run an experiment")
    e.add_argument("--experiment", required=True,
                   choices=["convergence", "uniqueness", "pr", "hist", "sweep"])
    e.add_argument("--graph")
    e.add_argument("--scores")
    e.add_argument("--truth")
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    e.add_argument("--inits", default="0,1,0.5,rand")
    e.add_argument("--pairs", default="0:1,0:0.5")
    e.add_argument("--grid", default="mu_s=50,100,200,400")
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--bins", type=int, default=20)
    e.add_argument("--jobs", type=int, default=1, help="grid points scored concurrently")
    _add_keys(e, SCORE_KEYS)
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("muesli", help="run a monotone-update system")
    src = m.add_mutually_exclusive_group(required=True)
    src.add_argument("--system")
    src.add_argument("--builtin", choices=["connectivity", "party", "party-enemies", "techdiff"])
    m.add_argument("--graph", help="edge list for the connectivity builtin")
    m.add_argument("--config")
    m.add_argument("--out", required=True)
    _add_keys(m, MUESLI_KEYS)
    m.set_defaults(func=cmd_muesli)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidInput, ValueError) as e:   # includes parse and symmetry errors
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO_ERROR


if __name__ == "__main__":
    sys.exit(main())
