"""Command-line pipeline over the library: fit, probe, cluster, serve.

Every command takes an explicit --seed (no wall-clock seeding), resolves all
parameters up front, and writes a resolved-config.json that reproduces the run
exactly. Exit codes: 2 for parse problems (arguments or input files), 3 for
parameter/invariant violations, 4 for an unknown token surface, 5 for a busy
port.
"""

from __future__ import annotations

import argparse
import difflib
import json
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import (
    assign_clusters,
    cosine_ranking,
    diff_table_to_csv,
    direction_stats,
    euclidean_ranking,
    rank_diff_table,
    ranking_records,
    ranking_to_csv,
    threshold_components,
    wordcloud_export,
)
from .core import CounterRng, PointCloud
from .fieldio import (
    FieldFormatError,
    read_scalar_field,
    write_convergence_csv,
    write_field,
    write_resolved_config,
)
from .ingest import (
    ParseError,
    load_points_3d,
    load_word2vec_text,
    normalize_to_unit_cube,
    pca_project,
    save_points_3d,
)
from .mcpm import McpmParams, fit_trace
from .probe import ProbeParams, mcpm_similarity

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INVARIANT = 3
EXIT_UNKNOWN_TOKEN = 4
EXIT_PORT_BUSY = 5

TRACE_FILE = "trace.field"
DEPOSIT_FILE = "deposit.field"
TOKENS_FILE = "tokens.tsv"
LABELS_FILE = "labels.field"
CONFIG_FILE = "resolved-config.json"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _out_dir(args) -> Path:
    # flag wins; TRACENET_OUT is the only environment override
    out = args.out or os.environ.get("TRACENET_OUT") or "tracenet-out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_cloud(args) -> tuple[PointCloud, Optional[str]]:
    """Returns the normalized cloud plus the embeddings path when the input
    was an N-D embedding file."""
    if args.points:
        cloud = load_points_3d(args.points)
        source = None
    else:
        if not args.pca:
            raise CliError(
                EXIT_PARSE, "embeddings input is N-dimensional; pass --pca to project it"
            )
        emb = load_word2vec_text(args.embeddings)
        cloud = pca_project(emb)
        source = str(args.embeddings)
    return normalize_to_unit_cube(cloud, margin=args.margin), source


def _mcpm_params(args) -> McpmParams:
    grid = tuple(args.grid)
    if len(grid) == 1:
        grid = (grid[0], grid[0], grid[0])
    return McpmParams(
        n_agents=args.agents,
        n_steps=args.steps,
        grid_res=grid,
        sense_distance=args.sense_distance,
        sense_angle=args.sense_angle,
        move_distance=args.move_distance,
        data_deposit=args.data_deposit,
        agent_deposit=args.agent_deposit,
        decay=args.decay,
        diffusion_passes=args.diffusion_passes,
        sharpness=args.sharpness,
        trace_window=args.trace_window,
        spawn_uniform=args.spawn_uniform,
    )


def _probe_params(args) -> ProbeParams:
    return ProbeParams(
        n_probes=args.probes,
        n_steps=args.probe_steps,
        sense_distance=args.probe_sense_distance,
        sense_angle=args.probe_sense_angle,
        move_distance=args.probe_move_distance,
        discovery_radius=args.discovery_radius,
        count_once_per_agent=args.count_once_per_agent,
        snap_seed_to_trace=args.snap_seed,
    )


def _set_threads(args) -> None:
    if args.threads:
        import numba

        numba.set_num_threads(args.threads)


def _recorded_fit_input(artifacts: Path) -> Optional[dict]:
    """The fit's input block, surviving later commands that write their own
    resolved-config.json into the same directory."""
    config_path = artifacts / CONFIG_FILE
    if not config_path.exists():
        return None
    recorded = json.loads(config_path.read_text(encoding="utf-8"))
    if recorded.get("command") == "fit":
        return recorded.get("input")
    return recorded.get("fit_input")


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    _set_threads(args)
    cloud, embeddings_path = _load_cloud(args)
    params = _mcpm_params(args)
    out = _out_dir(args)

    result = fit_trace(cloud, params, CounterRng(args.seed))

    write_field(out / TRACE_FILE, result.trace, meta={"kind": "trace", "seed": args.seed})
    write_field(out / DEPOSIT_FILE, result.deposit, meta={"kind": "deposit", "seed": args.seed})
    write_convergence_csv(out / "convergence.csv", result.convergence_series)
    save_points_3d(cloud, out / TOKENS_FILE)
    write_resolved_config(
        out / CONFIG_FILE,
        {
            "command": "fit",
            "seed": args.seed,
            "input": {
                "points": str(args.points) if args.points else None,
                "embeddings": embeddings_path,
                "margin": args.margin,
            },
            "mcpm": asdict(params),
            "tokens": len(cloud),
        },
    )
    print(f"fit: {len(cloud)} tokens, {params.n_steps} steps -> {out / TRACE_FILE}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# probe
# ---------------------------------------------------------------------------


def _resolve_query(cloud: PointCloud, args) -> tuple[Optional[int], Optional[np.ndarray]]:
    if args.token is not None:
        index = cloud.surface_index()
        if args.token not in index:
            surfaces = [t.surface for t in cloud.tokens]
            near = difflib.get_close_matches(args.token, surfaces, n=5, cutoff=0.4)
            if not near:
                near = sorted(surfaces)[:5]
            raise CliError(
                EXIT_UNKNOWN_TOKEN,
                f"unknown token {args.token!r}; nearest matches: {', '.join(near)}",
            )
        return index[args.token], None
    try:
        x, y, z = (float(v) for v in args.pos.split(","))
    except ValueError:
        raise CliError(EXIT_PARSE, f"--pos wants x,y,z, got {args.pos!r}") from None
    return None, np.array([x, y, z])


def _write_trajectories(path, trajectories) -> None:
    """All repeats' polylines, f32, behind a one-line JSON header."""
    arr = np.stack([t.polylines for t in trajectories]).astype("<f4")
    header = {
        "dtype": "f32le",
        "shape": list(arr.shape),
        "layout": "repeat,probe,vertex,xyz",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(arr.tobytes())


def cmd_probe(args) -> int:
    _set_threads(args)
    artifacts = Path(args.artifacts) if args.artifacts else _out_dir(args)
    trace, _ = read_scalar_field(artifacts / TRACE_FILE)
    cloud = load_points_3d(artifacts / TOKENS_FILE)
    params = _probe_params(args)
    out = _out_dir(args)

    query, seed_point = _resolve_query(cloud, args)
    ranking, trajectories = mcpm_similarity(
        trace,
        cloud,
        query,
        params,
        CounterRng(args.seed),
        n_repeats=args.repeats,
        seed_point=seed_point,
        with_trajectories=True,
    )

    (out / "ranking-mcpm.csv").write_text(ranking_to_csv(ranking, cloud), encoding="utf-8")
    with open(out / "ranking-mcpm.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(ranking_records(ranking, cloud), fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(out / "wordcloud-mcpm.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(wordcloud_export(ranking, cloud), fh, sort_keys=True, indent=2)
        fh.write("\n")

    # vector-space baselines need the original embedding vectors; the fit
    # records where they came from
    wrote_baselines = False
    fit_input = _recorded_fit_input(artifacts)
    if query is not None and fit_input:
        emb_path = fit_input.get("embeddings")
        if emb_path and Path(emb_path).exists():
            emb = load_word2vec_text(emb_path)
            if len(emb) == len(cloud):
                euclid = euclidean_ranking(emb, query)
                cosine = cosine_ranking(emb, query)
                (out / "ranking-euclidean.csv").write_text(
                    ranking_to_csv(euclid, cloud), encoding="utf-8"
                )
                (out / "ranking-cosine.csv").write_text(
                    ranking_to_csv(cosine, cloud), encoding="utf-8"
                )
                surfaces = {t.id: t.surface for t in cloud.tokens}
                table = rank_diff_table(ranking, euclid, cosine, top_k=30, surfaces=surfaces)
                (out / "rank-diff.csv").write_text(
                    diff_table_to_csv(table, names=("mcpm_rank", "euclidean_rank", "cosine_rank")),
                    encoding="utf-8",
                )
                wrote_baselines = True

    stats = direction_stats(trajectories[0])
    with open(out / "direction-stats.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(
            {
                "histogram": [float(v) for v in stats.histogram],
                "bimodality": stats.bimodality,
                "circular_variance": stats.circular_variance,
                "n_modes": stats.n_modes,
            },
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    _write_trajectories(out / "trajectories.bin", trajectories)

    write_resolved_config(
        out / CONFIG_FILE,
        {
            "command": "probe",
            "seed": args.seed,
            "artifacts": str(artifacts),
            "query": {"token": args.token, "pos": args.pos},
            "probe": asdict(params),
            "repeats": args.repeats,
            "baselines": wrote_baselines,
            "fit_input": fit_input,
        },
    )
    top = ranking.entries[0] if ranking.entries else None
    print(f"probe: {len(ranking.entries)} discovered, top={top} -> {out / 'ranking-mcpm.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# cluster
# ---------------------------------------------------------------------------


def cmd_cluster(args) -> int:
    artifacts = Path(args.artifacts) if args.artifacts else _out_dir(args)
    trace, _ = read_scalar_field(artifacts / TRACE_FILE)
    cloud = load_points_3d(artifacts / TOKENS_FILE)
    out = _out_dir(args)

    if args.tau == "auto":
        tau = "auto"
    else:
        try:
            tau = float(args.tau)
        except ValueError:
            raise CliError(EXIT_PARSE, f"--tau wants a number or 'auto', got {args.tau!r}") from None
    thresholded = threshold_components(trace, tau)
    if thresholded.n_components == 0:
        print("warning: threshold keeps no voxels; zero components", file=sys.stderr)
    labeling = assign_clusters(cloud, thresholded, assign_radius=args.assign_radius)

    write_field(
        out / LABELS_FILE,
        thresholded.voxel_labels.astype(np.uint32),
        dtype="u32le",
        meta={"kind": "labels", "tau": thresholded.tau, "n_components": thresholded.n_components},
    )
    with open(out / "token_clusters.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("surface\tcluster\n")
        for tok in cloud.tokens:
            lab = labeling.token_labels[tok.id]
            fh.write(f"{tok.surface}\t{lab if lab is not None else 'unassigned'}\n")
    with open(out / "clusters.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(
            {
                "n_components": thresholded.n_components,
                "tau": thresholded.tau,
                "component_mass": {str(k): v for k, v in thresholded.component_mass.items()},
                "token_labels": {str(k): v for k, v in labeling.token_labels.items()},
            },
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    write_resolved_config(
        out / CONFIG_FILE,
        {
            "command": "cluster",
            "seed": args.seed,
            "artifacts": str(artifacts),
            "tau": args.tau,
            "resolved_tau": thresholded.tau if math.isfinite(thresholded.tau) else None,
            "assign_radius": args.assign_radius,
            "fit_input": _recorded_fit_input(artifacts),
        },
    )
    print(f"cluster: {thresholded.n_components} components at tau={thresholded.tau:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------


def cmd_serve(args) -> int:
    import socket

    artifacts = Path(args.artifacts) if args.artifacts else _out_dir(args)
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((args.host, args.port))
    except OSError:
        print(f"port {args.port} is already in use", file=sys.stderr)
        return EXIT_PORT_BUSY
    finally:
        probe.close()

    import uvicorn

    from .server import create_app

    app = create_app(artifacts, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, required=True, help="RNG seed (mandatory; no wall-clock seeding)")
    p.add_argument("--out", help="output directory (or set TRACENET_OUT)")
    p.add_argument("--threads", type=int, help="worker thread count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tracenet",
        description="Fit an agent-swarm transport network over an embedded "
        "token cloud, then explore it with probe walks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit the trace field over a token cloud")
    _add_common(fit)
    src = fit.add_mutually_exclusive_group(required=True)
    src.add_argument("--points", help="3D token TSV (surface, x, y, z[, meta])")
    src.add_argument("--embeddings", help="word2vec-format text embeddings")
    fit.add_argument("--pca", action="store_true", help="project embeddings to 3D")
    fit.add_argument("--margin", type=float, default=0.05, help="normalization margin")
    fit.add_argument("--agents", type=int, default=McpmParams.n_agents)
    fit.add_argument("--steps", type=int, default=McpmParams.n_steps)
    fit.add_argument("--grid", type=int, nargs="+", default=[256], metavar="N",
                     help="grid resolution (one value or three)")
    fit.add_argument("--sense-distance", type=float, default=McpmParams.sense_distance)
    fit.add_argument("--sense-angle", type=float, default=McpmParams.sense_angle)
    fit.add_argument("--move-distance", type=float, default=McpmParams.move_distance)
    fit.add_argument("--data-deposit", type=float, default=McpmParams.data_deposit)
    fit.add_argument("--agent-deposit", type=float, default=McpmParams.agent_deposit)
    fit.add_argument("--decay", type=float, default=McpmParams.decay)
    fit.add_argument("--diffusion-passes", type=int, default=McpmParams.diffusion_passes)
    fit.add_argument("--sharpness", type=float, default=McpmParams.sharpness)
    fit.add_argument("--trace-window", type=int, default=McpmParams.trace_window)
    fit.add_argument("--spawn-uniform", action="store_true",
                     help="spawn and respawn anywhere instead of at data points")
    fit.set_defaults(func=cmd_fit)

    probe = sub.add_parser("probe", help="walk probes from a token and rank discoveries")
    _add_common(probe)
    probe.add_argument("--artifacts", help="directory holding trace.field + tokens.tsv "
                       "(defaults to the output directory)")
    tgt = probe.add_mutually_exclusive_group(required=True)
    tgt.add_argument("--token", help="query token surface")
    tgt.add_argument("--pos", help="explicit seed position x,y,z")
    probe.add_argument("--probes", type=int, default=ProbeParams.n_probes)
    probe.add_argument("--probe-steps", type=int, default=ProbeParams.n_steps)
    probe.add_argument("--probe-sense-distance", type=float, default=ProbeParams.sense_distance)
    probe.add_argument("--probe-sense-angle", type=float, default=ProbeParams.sense_angle)
    probe.add_argument("--probe-move-distance", type=float, default=ProbeParams.move_distance)
    probe.add_argument("--discovery-radius", type=float, default=ProbeParams.discovery_radius)
    probe.add_argument("--repeats", type=int, default=1)
    probe.add_argument("--count-once-per-agent", action="store_true")
    probe.add_argument("--snap-seed", action="store_true",
                       help="move the seed to the strongest nearby trace voxel")
    probe.set_defaults(func=cmd_probe)

    cluster = sub.add_parser("cluster", help="threshold the trace into components")
    _add_common(cluster)
    cluster.add_argument("--artifacts", help="directory holding trace.field + tokens.tsv")
    cluster.add_argument("--tau", default="auto",
                         help="threshold value, or 'auto' for the top-mass quantile")
    cluster.add_argument("--assign-radius", type=float, default=2.0,
                         help="token assignment reach in voxels")
    cluster.set_defaults(func=cmd_cluster)

    serve = sub.add_parser("serve", help="serve the fitted artifacts over HTTP")
    _add_common(serve)
    serve.add_argument("--artifacts", help="directory holding fitted artifacts")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8765)
    serve.add_argument("--ui", help="static directory to mount at /")
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ParseError, FieldFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


def console() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console()
