"""Command line: encode, simulate, multirobot, bench-hash, verify.

Exit codes: 0 success, 2 invalid input, 3 mission failure (or a failed
verification suite).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time

import numpy as np

from . import features as F
from . import hashing as H
from . import _accel
from .geometry import Pose2D
from .hashing import HashingConfig, HashingError
from .localizer import SearchBudget, search, spiral_offsets
from .map_encoder import CollisionError, GraphFormatError, LandmarkError, parse_graph, serialize_graph
from .mission import MissionConfig, ControlParams, run_mission
from .stats import summarize
from .verify import reference_scans
from .world import (
    OdometryModel, compile_world, load_world, navigable_edges, qr_reference_world, reference_world,
)

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 2, 3


class UsageError(Exception):
    pass


def _fail(msg):
    raise UsageError(msg)


def _echo(cfg: dict):
    print("config " + json.dumps(cfg, sort_keys=True))


def _world(args):
    if args.world:
        try:
            return load_world(args.world)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            _fail(f"cannot read world {args.world}: {exc}")
    return qr_reference_world() if args.reference == "qr" else reference_world()


def _hash_cfg(args):
    try:
        return HashingConfig(delta=args.delta, angle_bins=args.bins, area_quantum=args.area_quantum)
    except HashingError as exc:
        _fail(str(exc))


def _add_world_args(p, delta=0.1):
    p.add_argument("--world", help="world JSON file (default: a built-in world)")
    p.add_argument("--reference", choices=("building", "qr"), default="building",
                   help="built-in world when --world is not given")
    p.add_argument("--delta", type=float, default=delta, help="grid resolution in metres")
    p.add_argument("--bins", type=int, default=16, help="angle bins K")
    p.add_argument("--area-quantum", type=float, default=0.25, help="room area quantum in m^2")


# -- encode ---------------------------------------------------------------

def cmd_encode(args):
    w = _world(args)
    cfg = _hash_cfg(args)
    _echo({"cmd": "encode", "world": args.world or args.reference, "delta": cfg.delta,
           "bins": cfg.angle_bins, "area_quantum": cfg.area_quantum, "edges": args.edges})
    if args.edges == "world":
        edges = w.edges
    elif args.edges == "navigable":
        edges = navigable_edges(w.walls, w.landmarks, cfg)
    else:
        edges = []
    try:
        g = compile_world(w, cfg, edges)
    except CollisionError as exc:
        print(f"error: collision: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except LandmarkError as exc:
        _fail(str(exc))
    data = serialize_graph(g)
    with open(args.out, "wb") as f:
        f.write(data)
    print(f"nodes {g.n} edges {len(g.edges())} collisions none -> {args.out}")
    return EXIT_OK


# -- simulate -------------------------------------------------------------

def summary_from_csv(text):
    """Summary statistics recomputed from a mission CSV."""
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        _fail("empty mission log")

    def col(name):
        return [float(r[name]) if r[name] != "" else None for r in rows]

    tx, ty = np.array(col("true_x")), np.array(col("true_y"))
    err = {k: np.hypot(np.array(col(k + "_x")) - tx, np.array(col(k + "_y")) - ty).tolist()
           for k in ("odom", "hash")}
    return summarize({
        "odometry_error_m": err["odom"], "hash_error_m": err["hash"],
        "feature_ms": col("feat_ms"), "search_ms": col("search_ms"), "trials": col("trials"),
    })


def cmd_simulate(args):
    w = _world(args)
    cfg = _hash_cfg(args)
    if args.graph:
        try:
            with open(args.graph, "rb") as f:
                g = parse_graph(f.read())
        except (OSError, GraphFormatError) as exc:
            _fail(f"cannot read graph {args.graph}: {exc}")
        if abs(g.cfg.delta - cfg.delta) > 1e-12:
            _fail(f"graph grid {g.cfg.delta} differs from --delta {cfg.delta}")
        cfg = g.cfg
    else:
        g = compile_world(w, cfg)
    if not args.duration > 0:
        _fail("duration must be > 0")
    os.makedirs(args.out_dir, exist_ok=True)
    status = EXIT_OK
    for seed in args.seed:
        try:
            mc = MissionConfig(
                duration=args.duration, sensing=args.sensing,
                odometry=OdometryModel(args.sigma_t, args.sigma_r, correlation=args.correlation,
                                       seed=seed),
                control=ControlParams(tolerance=args.R), seed=seed)
        except ValueError as exc:
            _fail(str(exc))
        config = {"cmd": "simulate", "world": args.world or args.reference, "graph": args.graph,
                  "delta": cfg.delta, "bins": cfg.angle_bins, "area_quantum": cfg.area_quantum,
                  "R": args.R, "sigma_t": args.sigma_t, "sigma_r": args.sigma_r,
                  "correlation": args.correlation, "sensing": args.sensing,
                  "duration": args.duration, "seed": seed, "timing": args.timing,
                  "backend": _accel.backend_name()}
        _echo(config)
        log = run_mission(w, g, mc)
        text = log.to_csv(timing=args.timing)
        base = os.path.join(args.out_dir, f"mission_seed{seed}")
        with open(base + ".csv", "w", newline="") as f:
            f.write(text)
        summary = {"config": config, "done": log.done, "aborted": log.aborted,
                   "matched_nodes": log.matched_nodes(), "match_events": len(log.matches),
                   "post_match_error_max_m": max(log.post_match_errors(), default=None),
                   "stats": summary_from_csv(text)}
        with open(base + ".json", "w") as f:
            json.dump(summary, f, indent=1, sort_keys=True)
            f.write("\n")
        med = summary["stats"]
        print(f"seed {seed}: matched {len(log.matched_nodes())}/{g.n} nodes, "
              f"median error odometry {med['odometry_error_m']['median']:.3f} m "
              f"hash {med['hash_error_m']['median']:.3f} m"
              + (" ABORTED: start never matched" if log.aborted else ""))
        if log.aborted:
            status = EXIT_FAILED
    return status


# -- multirobot -----------------------------------------------------------

def _parse_attack(text):
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise argparse.ArgumentTypeError("attack must be kind:robot:step[:lag]")
    try:
        a = {"type": parts[0], "robot": parts[1], "step": int(parts[2])}
        if len(parts) == 4:
            a["lag"] = int(parts[3])
    except ValueError:
        raise argparse.ArgumentTypeError("step and lag must be integers") from None
    return a


def cmd_multirobot(args):
    from . import multi_robot as M
    if args.scenario:
        try:
            with open(args.scenario) as f:
                obj = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            _fail(f"cannot read scenario {args.scenario}: {exc}")
    else:
        obj = M.inspection_scenario(drop=args.drop, attacks=args.attack or [], timed=args.timed)
    obj = dict(obj, seed=args.seed)
    try:
        result = M.run_scenario(obj)
    except (M.ScenarioError, ValueError, TypeError) as exc:
        _fail(f"malformed scenario: {exc}")
    config = {"cmd": "multirobot", "scenario": obj}
    _echo(config)
    text = result.transcript_csv()
    if args.out:
        with open(args.out, "w", newline="") as f:
            f.write(text)
    verdict = {"config": config, "verdict": str(result.verdict), "robot": result.verdict.robot,
               "rounds": result.rounds, "envelopes": result.envelopes,
               "transmissions": len(result.transcript), "false_decodes": result.false_decodes}
    if args.verdict_out:
        with open(args.verdict_out, "w") as f:
            json.dump(verdict, f, indent=1, sort_keys=True)
            f.write("\n")
    who = f" ({result.verdict.robot})" if result.verdict.robot else ""
    print(f"verdict {result.verdict}{who} after {result.rounds} rounds, "
          f"{result.envelopes} envelopes, {result.false_decodes} false decodes")
    return EXIT_OK if result.verdict.status == "completed" else EXIT_FAILED


# -- bench-hash -----------------------------------------------------------

def _median_ns(fn, count, warmup=100):
    for _ in range(warmup):
        fn()
    ts = np.empty(count)
    for i in range(count):
        t0 = time.perf_counter_ns()
        fn()
        ts[i] = time.perf_counter_ns() - t0
    return ts


def bench_hash(deltas, R=0.5, count=20000, scans=20, seed=0):
    """Digest latency and search/extraction timing per grid size."""
    pre = H.landmark_preimage("doorway", (12.3, 4.5, 0.0), 3, HashingConfig())
    digest = _median_ns(lambda: H.hash256(pre), count)
    w, frames = reference_scans(scans, seed)
    feat_ms, obs = [], []
    for pose, scan in frames:
        t0 = time.perf_counter()
        _, o = F.observe(scan)
        feat_ms.append((time.perf_counter() - t0) * 1e3)
        obs.append((pose, o))
    rng = np.random.default_rng(seed + 1)
    rows = []
    for d in deltas:
        cfg = HashingConfig(delta=d)
        g = compile_world(w, cfg)
        budget = SearchBudget(R, d)
        per_scan, trials = [], []
        for pose, o in obs:
            est = Pose2D(pose.x + rng.uniform(-0.2, 0.2), pose.y + rng.uniform(-0.2, 0.2), pose.theta)
            t0 = time.perf_counter()
            n = 0
            for ob in o:
                n += search(ob, est, g, budget)[1]
            per_scan.append((time.perf_counter() - t0) * 1e3)
            trials.append(n)
        # worst case: a whole window with nothing to find
        far = F.Observation("doorway", np.array([1.0, 0.0]), orientation=0.0)
        empty = Pose2D(-50.0, -50.0, 0.0)
        full = _median_ns(lambda: search(far, empty, g, budget), max(5, min(200, count // 100)), 2)
        rows.append({"delta": d, "window_trials": len(spiral_offsets(R, d)),
                     "full_window_ms": float(np.median(full)) / 1e6,
                     "search_ms_per_scan": float(np.median(per_scan)),
                     "trials_per_scan": float(np.median(trials)),
                     "feature_ms_per_scan": float(np.median(feat_ms))})
    return {"digest_ns_median": float(np.median(digest)),
            "digest_ns_q1": float(np.percentile(digest, 25)),
            "digest_ns_q3": float(np.percentile(digest, 75)),
            "R": R, "grids": rows}


def cmd_bench_hash(args):
    if not args.deltas or any(d <= 0 for d in args.deltas):
        _fail("grid sizes must be > 0")
    _echo({"cmd": "bench-hash", "deltas": args.deltas, "R": args.R, "count": args.count,
           "scans": args.scans, "seed": args.seed, "backend": _accel.backend_name()})
    rep = bench_hash(args.deltas, args.R, args.count, args.scans, args.seed)
    print(f"sha3-256 digest: median {rep['digest_ns_median']:.0f} ns "
          f"(q1 {rep['digest_ns_q1']:.0f}, q3 {rep['digest_ns_q3']:.0f})")
    print(f"{'delta':>7}{'trials':>8}{'full ms':>10}{'search ms':>11}{'extract ms':>12}{'ratio':>8}")
    for r in rep["grids"]:
        ratio = r["search_ms_per_scan"] / r["feature_ms_per_scan"]
        print(f"{r['delta']:>7}{r['window_trials']:>8}{r['full_window_ms']:>10.3f}"
              f"{r['search_ms_per_scan']:>11.3f}{r['feature_ms_per_scan']:>12.3f}{ratio:>8.3f}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump(rep, f, indent=1)
            f.write("\n")
    return EXIT_OK


# -- verify ---------------------------------------------------------------

def cmd_verify(args):
    from .verify import run_all
    if not 0 < args.scale <= 1:
        _fail("scale must be in (0, 1]")
    _echo({"cmd": "verify", "scale": args.scale, "seed": args.seed})
    ok = True
    for name, passed, detail in run_all(args.scale, args.seed):
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        ok &= passed
    return EXIT_OK if ok else EXIT_FAILED


# -- entry ----------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="hashnav", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("encode", help="compile a world into an encoded graph file")
    _add_world_args(p)
    p.add_argument("--edges", choices=("world", "navigable", "none"), default="world")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("simulate", help="run missions and write logs and summaries")
    _add_world_args(p)
    p.add_argument("--graph", help="encoded graph file (default: compile the world)")
    p.add_argument("--seed", type=int, nargs="+", required=True)
    p.add_argument("--duration", type=float, default=150.0)
    p.add_argument("--sigma-t", type=float, default=0.03)
    p.add_argument("--sigma-r", type=float, default=0.05)
    p.add_argument("--correlation", type=float, default=1.0)
    p.add_argument("--R", type=float, default=0.5, help="search tolerance in metres")
    p.add_argument("--sensing", choices=("lidar", "qr"), default="lidar")
    p.add_argument("--timing", action="store_true", help="include wall-clock columns")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("multirobot", help="run a two-robot mutual validation scenario")
    p.add_argument("--scenario", help="scenario JSON (default: built-in inspection)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--drop", type=float, default=0.0, help="built-in scenario only")
    p.add_argument("--timed", action="store_true", help="built-in scenario only")
    p.add_argument("--attack", type=_parse_attack, action="append",
                   help="built-in scenario only: kind:robot:step[:lag]")
    p.add_argument("--out", help="transcript CSV")
    p.add_argument("--verdict-out", help="verdict JSON")
    p.set_defaults(func=cmd_multirobot)

    p = sub.add_parser("bench-hash", help="hash and search timing per grid size")
    p.add_argument("--deltas", type=float, nargs="+", default=[0.4, 0.2, 0.1, 0.05, 0.025])
    p.add_argument("--R", type=float, default=0.5)
    p.add_argument("--count", type=int, default=20000)
    p.add_argument("--scans", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench_hash)

    p = sub.add_parser("verify", help="run the oracle suites")
    p.add_argument("--scale", type=float, default=1.0, help="fraction of the full counts")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    raise SystemExit(main())
