"""HTTP service over fitted artifacts.

Read-only queries (tokens, clusters, field slices) answer from the artifacts
directory; POST /probe runs real probe walks on a bounded worker pool so a
burst of clients cannot pile up unbounded compute. Everything is exposed twice,
under /api/v1 and the /api alias.
"""

from __future__ import annotations

import difflib
import json
import math
import threading
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import APIRouter, FastAPI, HTTPException, Query, Response
from pydantic import BaseModel, Field

from .analysis import cosine_ranking, direction_stats, euclidean_ranking
from .core import CounterRng, PointCloud, ScalarField
from .fieldio import read_scalar_field
from .ingest import load_points_3d, load_word2vec_text
from .probe import ProbeParams, Ranking, mcpm_similarity

MAX_WIRE_POLYLINES = 200
MAX_WIRE_VERTICES = 101
PROBE_WORKERS = 2

_AXES = {"x": 2, "y": 1, "z": 0}  # grid() is (nz, ny, nx)


class ProbeRequest(BaseModel):
    token: Optional[str] = None
    pos: Optional[list[float]] = Field(default=None, min_length=3, max_length=3)
    seed: int
    repeats: int = 1
    params: dict[str, float | int | bool] = Field(default_factory=dict)


class _Artifacts:
    """Lazy view of one fitted run directory."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.trace: ScalarField = read_scalar_field(self.root / "trace.field")[0]
        self.cloud: PointCloud = load_points_3d(self.root / "tokens.tsv")
        self.row_of = {t.id: i for i, t in enumerate(self.cloud.tokens)}
        self._embeddings = None
        self._embeddings_checked = False

    def token_record(self, row: int) -> dict:
        tok = self.cloud.tokens[row]
        return {
            "id": tok.id,
            "surface": tok.surface,
            "pos": [float(v) for v in self.cloud.positions[row]],
            "meta": tok.meta,
        }

    def embeddings(self):
        """Original N-D vectors, when the fit recorded their source."""
        if self._embeddings_checked:
            return self._embeddings
        self._embeddings_checked = True
        config = self.root / "resolved-config.json"
        if config.exists():
            recorded = json.loads(config.read_text(encoding="utf-8"))
            block = recorded.get("input") if recorded.get("command") == "fit" else recorded.get("fit_input")
            path = (block or {}).get("embeddings")
            if path and Path(path).exists():
                emb = load_word2vec_text(path)
                if len(emb) == len(self.cloud):
                    self._embeddings = emb
        return self._embeddings


def _ranking_payload(ranking: Ranking, art: _Artifacts) -> list[dict]:
    rows = []
    for rank, (tid, score) in enumerate(ranking.entries, start=1):
        surface = art.cloud.tokens[art.row_of[tid]].surface
        rows.append({"rank": rank, "id": tid, "surface": surface, "score": float(score)})
    return rows


def _decimate(polylines: np.ndarray) -> list[list[list[float]]]:
    n, verts, _ = polylines.shape
    probe_stride = max(1, math.ceil(n / MAX_WIRE_POLYLINES))
    vert_stride = max(1, math.ceil(verts / MAX_WIRE_VERTICES))
    sample = polylines[::probe_stride, ::vert_stride]
    return np.round(sample, 6).tolist()


def create_app(artifacts_dir, ui_dir=None) -> FastAPI:
    art = _Artifacts(Path(artifacts_dir))
    probe_gate = threading.Semaphore(PROBE_WORKERS)
    app = FastAPI(title="tracenet", version="1")
    api = APIRouter()

    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def _resolve_token(surface: str) -> int:
        index = art.cloud.surface_index()
        if surface not in index:
            surfaces = [t.surface for t in art.cloud.tokens]
            near = difflib.get_close_matches(surface, surfaces, n=5, cutoff=0.4)
            raise HTTPException(
                status_code=404,
                detail={"error": f"unknown token {surface!r}", "nearest": near},
            )
        return index[surface]

    @api.get("/tokens")
    def tokens(
        limit: int = Query(50, ge=1, le=1000),
        offset: int = Query(0, ge=0),
        q: Optional[str] = None,
    ):
        rows = range(len(art.cloud))
        if q:
            needle = q.lower()
            rows = [i for i in rows if needle in art.cloud.tokens[i].surface.lower()]
        else:
            rows = list(rows)
        page = rows[offset : offset + limit]
        return {
            "total": len(rows),
            "offset": offset,
            "tokens": [art.token_record(i) for i in page],
        }

    @api.get("/token/{token_id}")
    def token(token_id: int):
        row = art.row_of.get(token_id)
        if row is None:
            raise HTTPException(status_code=404, detail=f"no token with id {token_id}")
        return art.token_record(row)

    @api.get("/clusters")
    def clusters():
        path = art.root / "clusters.json"
        if not path.exists():
            raise HTTPException(
                status_code=404, detail="no clustering artifact; run the cluster command first"
            )
        return json.loads(path.read_text(encoding="utf-8"))

    @api.get("/field/meta")
    def field_meta():
        nx, ny, nz = art.trace.dims
        values = art.trace.values
        return {
            "dims": [nx, ny, nz],
            "order": "x-fastest",
            "dtype": "f32le",
            "extent": [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]],
            "tokens": len(art.cloud),
            "stats": {
                "min": float(values.min()),
                "max": float(values.max()),
                "mean": float(values.mean()),
            },
        }

    @api.get("/field/slice")
    def field_slice(axis: str, index: int):
        if axis not in _AXES:
            raise HTTPException(status_code=400, detail=f"axis must be one of x, y, z, got {axis!r}")
        grid = art.trace.grid()
        size = grid.shape[_AXES[axis]]
        if not 0 <= index < size:
            raise HTTPException(
                status_code=400, detail=f"index {index} out of range [0, {size}) for axis {axis}"
            )
        plane = np.take(grid, index, axis=_AXES[axis])
        payload = np.ascontiguousarray(plane, dtype="<f4").tobytes()
        # dims header names the remaining axes fastest-first
        ny, nx = plane.shape
        return Response(
            content=payload,
            media_type="application/octet-stream",
            headers={
                "X-Dims": f"{nx},{ny}",
                "X-Axis": axis,
                "X-Index": str(index),
                "X-Dtype": "f32le",
            },
        )

    @api.get("/rankings")
    def rankings(token: str, metric: str = "euclidean", seed: int = 0):
        query = _resolve_token(token)
        if metric == "euclidean":
            ranking = euclidean_ranking(art.cloud, query)
        elif metric == "cosine":
            emb = art.embeddings()
            if emb is None:
                raise HTTPException(
                    status_code=409,
                    detail="cosine needs the original embedding vectors; "
                    "this fit was made from a plain 3D point file",
                )
            ranking = cosine_ranking(emb, query)
        elif metric == "mcpm":
            with probe_gate:
                ranking = mcpm_similarity(
                    art.trace, art.cloud, query, ProbeParams(), CounterRng(seed)
                )
        else:
            raise HTTPException(
                status_code=400, detail=f"metric must be mcpm, euclidean or cosine, got {metric!r}"
            )
        return {
            "query": token,
            "metric": metric,
            "ranking": _ranking_payload(ranking, art),
        }

    @api.post("/probe")
    def probe(req: ProbeRequest):
        if (req.token is None) == (req.pos is None):
            raise HTTPException(status_code=400, detail="pass exactly one of token or pos")
        allowed = set(ProbeParams.__dataclass_fields__)
        unknown = set(req.params) - allowed
        if unknown:
            raise HTTPException(
                status_code=400,
                detail=f"unknown probe params: {sorted(unknown)}; allowed: {sorted(allowed)}",
            )
        try:
            params = ProbeParams(**req.params)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None

        query = _resolve_token(req.token) if req.token is not None else None
        seed_point = np.array(req.pos, dtype=np.float64) if req.pos is not None else None
        try:
            with probe_gate:
                ranking, trajectories = mcpm_similarity(
                    art.trace,
                    art.cloud,
                    query,
                    params,
                    CounterRng(req.seed),
                    n_repeats=req.repeats,
                    seed_point=seed_point,
                    with_trajectories=True,
                )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None

        stats = direction_stats(trajectories[0])
        return {
            "query": {"token": req.token, "id": query, "pos": req.pos},
            "seed": req.seed,
            "ranking": _ranking_payload(ranking, art),
            "discovered": [tid for tid, _ in ranking.entries],
            "trajectories": _decimate(trajectories[0].polylines),
            "direction_stats": {
                "histogram": [float(v) for v in stats.histogram],
                "bimodality": stats.bimodality,
                "circular_variance": stats.circular_variance,
                "n_modes": stats.n_modes,
            },
        }

    app.include_router(api, prefix="/api/v1")
    app.include_router(api, prefix="/api")

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
