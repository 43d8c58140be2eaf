"""Command-line entry point: ``rankloc <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data/format error. Errors go to
stderr prefixed ``error:<category>:``.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .descriptor import profile
from .features import FormatError, load_features, read_sidecar
from .index import CapacityError, InvertedIndex
from .landmarks import load_landmarks, save_landmarks, select_landmarks
from .localizer import METHODS, Localizer, anr, ground_truth
from .nbv import ExperienceDB, MDPConfig, evaluate, train
from .pfilter import ParticleFilter, belief_rank, entropy
from .pipeline import build_map
from .routesim import RouteEnv, WorldParams, generate, load_domain, parse_config, write_world

log = logging.getLogger("rankloc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().strip()}")


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _write_csv(path, args, header, rows) -> None:
    """CSV with a leading ``#`` line recording the invocation."""
    out = io.StringIO()
    out.write("# " + _config_line(args) + "\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(out.getvalue())


def _config_line(args) -> str:
    items = sorted((k, v) for k, v in vars(args).items() if k not in ("func", "workers"))
    return "rankloc " + " ".join(f"{k}={v}" for k, v in items)


def _fmt(x: float) -> str:
    return f"{x:.10g}"


# -- subcommands --------------------------------------------------------------

def cmd_simulate(args):
    params = WorldParams()
    if args.config:
        parse_config(Path(args.config).read_text(), params)
    for kv in args.param or []:
        if "=" not in kv:
            raise UsageError(f"--param expects key=value, got {kv!r}")
        params.set(*(s.strip() for s in kv.split("=", 1)))
    world = generate(args.seed, params)
    write_world(world, args.out_dir)
    log.info("wrote world with %d viewpoints to %s", params.n_viewpoints, args.out_dir)


def cmd_select_landmarks(args):
    coll = load_features(args.features, args.viewpoints, args.normalize)
    lms = select_landmarks(coll, args.r, stride=args.stride)
    save_landmarks(lms, args.out)


def _load_map_collection(args):
    return load_features(args.features, args.viewpoints, args.normalize)


def _landmarks(path, r=None):
    lms = load_landmarks(path)
    return lms.head(r) if r else lms


def cmd_build_index(args):
    coll = _load_map_collection(args)
    model = build_map(coll, _landmarks(args.landmarks, args.r), args.h)
    model.index.save(args.out)


def _localizer(args, map_features=None):
    index = InvertedIndex.load(args.map)
    lms = _landmarks(args.landmarks, index.r)
    return Localizer(lms, index, map_features, query_limit=args.query_limit)


def cmd_query(args):
    map_feats = None
    if args.method == "brute_force":
        if not args.map_features:
            raise UsageError("--method brute_force requires --map-features")
        map_feats = load_features(args.map_features, normalize=args.normalize).features
    loc = _localizer(args, map_feats)
    queries = load_features(args.features, args.viewpoints, args.normalize)
    rows = []
    for qid, q in enumerate(queries.features):
        res = loc.localize(q, args.method)
        n = len(res) if args.top is None else min(args.top, len(res))
        for k in range(n):
            rows.append([qid, k + 1, int(res.image_ids[k]), _fmt(res.scores[k])])
    _write_csv(args.out, args, ["query_id", "rank", "image_id", "score"], rows)


def cmd_eval_anr(args):
    map_coll = load_features(args.map_features, args.map_viewpoints, args.normalize)
    queries = load_features(args.features, args.viewpoints, args.normalize)
    all_lms = load_landmarks(args.landmarks)
    methods = list(METHODS) if args.method == "all" else [args.method]
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}")
    truth = ground_truth(queries.arclengths, map_coll.arclengths, args.tau)
    rows = []
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        for r in args.r:
            lms = all_lms.head(r)
            qprof = profile(queries.features, lms)
            for h in args.h:
                model = build_map(map_coll, lms, h)
                loc = model.localizer
                for method in methods:
                    if method == "brute_force":
                        results = list(pool.map(lambda q: loc.localize(q, method),
                                                queries.features))
                    else:
                        results = list(pool.map(lambda p: loc.localize_profile(p, method),
                                                qprof))
                    rows.append([method, r, h, _fmt(anr(results, truth, len(map_coll)))])
    _write_csv(args.out, args, ["method", "r", "h", "anr_percent"], rows)


def _read_actions(path):
    acts = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            acts.append(float(line))
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: not a number") from None
    return acts


def cmd_localize_seq(args):
    loc = _localizer(args)
    map_arcs = _map_arclengths(args.map_viewpoints, loc.n_map)
    queries = load_features(args.queries, args.query_viewpoints, args.normalize)
    env = RouteEnv(queries)
    actions = _read_actions(args.actions)
    pf = ParticleFilter(map_arcs, np.random.default_rng(args.seed), args.particles,
                        args.motion_sigma)
    pos = float(np.clip(args.start, env.start, env.end))
    rows = []
    for step in range(len(actions) + 1):
        vp, feat = env.observe(pos)
        pf.update(loc.localize(feat, "rrf"))
        b = pf.belief()
        gt = int(pf.nearest([pos])[0])
        rows.append([step, _fmt(pos), _fmt(entropy(b)), belief_rank(b, gt)])
        if step < len(actions):
            pos = float(np.clip(pos + actions[step], env.start, env.end))
            pf.predict(actions[step])
    _write_csv(args.out, args, ["step", "position_m", "entropy", "gt_belief_rank"], rows)


def _map_arclengths(path, n_expected):
    arcs, _ = read_sidecar(path)
    if len(arcs) != n_expected:
        raise FormatError(f"{path}: {len(arcs)} viewpoints but the map has {n_expected} images")
    return arcs


def _mdp_config(args) -> MDPConfig:
    return MDPConfig(episodes=args.episodes, k_nn=args.k, n_particles=args.particles,
                     motion_sigma=args.motion_sigma)


def _nbv_setup(args):
    loc = _localizer(args)
    map_arcs = _map_arclengths(args.map_viewpoints, loc.n_map)
    env = RouteEnv(load_domain(args.env, "test"))
    return loc, map_arcs, env


def cmd_train_nbv(args):
    loc, map_arcs, env = _nbv_setup(args)
    cfg = _mdp_config(args)
    step = max(1, cfg.episodes // 10)
    db = train(loc, env, map_arcs, cfg, args.seed,
               progress=lambda ep: (ep + 1) % step == 0 and log.info("episode %d/%d", ep + 1, cfg.episodes))
    db.save(args.out)


def cmd_eval_nbv(args):
    loc, map_arcs, env = _nbv_setup(args)
    cfg = _mdp_config(args)
    db = None
    if args.policy == "learned":
        if not args.q:
            raise UsageError("--policy learned requires --q")
        db = ExperienceDB.load(args.q)
    frames = evaluate(loc, env, map_arcs, cfg, args.policy, args.episodes, args.seed, db)
    n_map = loc.n_map
    totals = {}
    for f in frames:
        totals[f.episode] = totals.get(f.episode, 0.0) + f.reward
    rows = [[f.episode, f.frame, _fmt(f.position), "" if f.action is None else _fmt(f.action),
             _fmt(f.reward), _fmt(totals[f.episode]), _fmt(100.0 * f.gt_rank / n_map)]
            for f in frames]
    _write_csv(args.out, args, ["episode", "frame", "position_m", "action_m", "reward",
                                "episode_reward", "frame_anr_percent"], rows)


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rankloc", description="Landmark-ranking place recognition and "
                                           "next-best-view planning.")
    p.add_argument("--version", action="version", version=f"rankloc {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--workers", type=int, default=1,
                        help="worker threads; never changes results (default 1)")
        return sp

    def feature_args(sp, required=True):
        sp.add_argument("--features", required=required, help="feature file (FVEC1)")
        sp.add_argument("--viewpoints", help="viewpoint sidecar CSV")
        sp.add_argument("--normalize", action="store_true",
                        help="L2-normalize embeddings at load")

    def map_args(sp):
        sp.add_argument("--map", required=True, help="index file (SLIX1)")
        sp.add_argument("--landmarks", required=True, help="landmark file from select-landmarks")
        sp.add_argument("--query-limit", type=int, default=None,
                        help="query-side RRF ranks (default: all r landmarks)")

    sp = add("simulate", cmd_simulate, "generate a synthetic three-domain route world")
    sp.add_argument("--seed", type=int, required=True, help="world seed")
    sp.add_argument("--out-dir", required=True, help="output directory")
    sp.add_argument("--config", help="key=value world configuration file")
    sp.add_argument("--param", action="append", metavar="KEY=VALUE",
                    help="override one world parameter (repeatable), e.g. test_noise=1.0")

    sp = add("select-landmarks", cmd_select_landmarks,
             "pick r prototype landmarks by nearest-neighbor dissimilarity")
    feature_args(sp)
    sp.add_argument("--r", type=int, default=500, help="number of landmarks (default 500)")
    sp.add_argument("--stride", type=int, default=1, help="candidate subsampling stride")
    sp.add_argument("--out", required=True, help="landmark file; a .csv id map is written beside it")

    sp = add("build-index", cmd_build_index, "describe map images and build the inverted index")
    feature_args(sp)
    sp.add_argument("--landmarks", required=True, help="landmark file")
    sp.add_argument("--r", type=int, default=None, help="use only the first r landmarks")
    sp.add_argument("--h", type=int, default=4, help="descriptor length (default 4)")
    sp.add_argument("--out", required=True, help="index file")

    sp = add("query", cmd_query, "rank map images for each query feature")
    map_args(sp)
    feature_args(sp)
    sp.add_argument("--method", choices=METHODS, default="rrf")
    sp.add_argument("--map-features", help="map feature file (brute_force only)")
    sp.add_argument("--top", type=int, default=None, help="rows per query (default all)")
    sp.add_argument("--out", required=True, help="ranking CSV")

    sp = add("eval-anr", cmd_eval_anr, "ANR of single-view recognition per method, r and h")
    sp.add_argument("--landmarks", required=True, help="landmark file (prefixes give smaller r)")
    sp.add_argument("--map-features", required=True)
    sp.add_argument("--map-viewpoints", required=True)
    feature_args(sp)
    sp.add_argument("--method", default="all", help=f"one of {', '.join(METHODS)} or all")
    sp.add_argument("--r", type=_csv_list(int), default=[50], help="comma list of r values")
    sp.add_argument("--h", type=_csv_list(int), default=[4], help="comma list of h values")
    sp.add_argument("--tau", type=float, default=10.0,
                    help="ground-truth radius in meters (default 10)")
    sp.add_argument("--out", required=True, help="CSV method,r,h,anr_percent")

    def seq_args(sp):
        sp.add_argument("--map-viewpoints", required=True, help="map viewpoint sidecar")
        sp.add_argument("--seed", type=int, required=True)
        sp.add_argument("--particles", type=int, default=1000)
        sp.add_argument("--motion-sigma", type=float, default=0.5)
        sp.add_argument("--normalize", action="store_true")

    sp = add("localize-seq", cmd_localize_seq, "particle-filter localization along an action sequence")
    map_args(sp)
    seq_args(sp)
    sp.add_argument("--queries", required=True, help="test-domain feature file")
    sp.add_argument("--query-viewpoints", required=True)
    sp.add_argument("--actions", required=True, help="text file, one forward move (m) per line")
    sp.add_argument("--start", type=float, default=0.0, help="start position (m)")
    sp.add_argument("--out", required=True, help="CSV step,position_m,entropy,gt_belief_rank")

    def nbv_args(sp, episodes):
        map_args(sp)
        seq_args(sp)
        sp.add_argument("--env", required=True, help="world directory holding test.fvec/test.csv")
        sp.add_argument("--episodes", type=int, default=episodes)
        sp.add_argument("--k", type=int, default=4, help="nearest neighbors (default 4)")

    sp = add("train-nbv", cmd_train_nbv, "train the experience database by NN Q-learning")
    nbv_args(sp, 10_000)
    sp.add_argument("--out", required=True, help="experience file (QEXP1)")

    sp = add("eval-nbv", cmd_eval_nbv, "evaluate a viewpoint policy")
    nbv_args(sp, 500)
    sp.add_argument("--policy", default="learned", help="learned, random or fixed:A")
    sp.add_argument("--q", help="experience file for --policy learned")
    sp.add_argument("--out", required=True, help="per-frame CSV")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv:
            raise UsageError(parser.format_help().strip())
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        func = args.func
        del args.verbose
        func(args)
    except UsageError as exc:
        print(f"error:usage: {exc}", file=sys.stderr)
        return 1
    except (FormatError, CapacityError) as exc:
        print(f"error:format: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"error:data: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
