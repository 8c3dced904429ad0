"""Dataset loading and projection: word2vec text embeddings, pre-projected 3D
point lists, PCA to 3D, and normalization into the unit cube.

UMAP projection is deliberately out of scope; externally projected data comes
in through load_points_3d.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import PointCloud, Token, _tight_bbox


class ParseError(ValueError):
    """Malformed input file; carries the offending path and line number."""

    def __init__(self, path, line_no: int, message: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


@dataclass
class EmbeddingSet:
    """Tokens with native high-dimensional vectors (e.g. 300 or 768 wide)."""

    tokens: list[Token]
    vectors: np.ndarray  # (N, D) float64

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError(f"vectors must be 2D, got shape {self.vectors.shape}")
        n, d = self.vectors.shape
        if n < 1 or d < 1:
            raise ValueError(f"need N >= 1 and D >= 1, got {self.vectors.shape}")
        if len(self.tokens) != n:
            raise ValueError(f"{len(self.tokens)} tokens but {n} vector rows")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)


def load_word2vec_text(path) -> EmbeddingSet:
    """Read the word2vec text format: a "N D" header line, then N rows of
    "surface v_1 ... v_D". Surfaces are kept verbatim (POS suffixes included).
    Token id equals source row index."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise ParseError(path, 1, f"expected header 'N D', got {header.strip()!r}")
        try:
            n, d = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(path, 1, f"non-integer header fields: {header.strip()!r}") from None
        if n < 1 or d < 1:
            raise ParseError(path, 1, f"need N >= 1 and D >= 1, got N={n} D={d}")

        tokens: list[Token] = []
        vectors = np.empty((n, d), dtype=np.float64)
        row = 0
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            if row >= n:
                raise ParseError(path, line_no, f"more than the declared {n} rows")
            fields = line.split()
            if len(fields) != d + 1:
                raise ParseError(
                    path, line_no, f"{len(fields) - 1} components, expected {d}"
                )
            try:
                vectors[row] = [float(v) for v in fields[1:]]
            except ValueError:
                raise ParseError(path, line_no, "non-numeric vector component") from None
            tokens.append(Token(id=row, surface=fields[0]))
            row += 1
        if row != n:
            raise ParseError(path, line_no if row else 1, f"declared {n} rows, found {row}")
    return EmbeddingSet(tokens, vectors)


_POINT_COLUMNS = ("surface", "x", "y", "z")


def load_points_3d(path) -> PointCloud:
    """Read a 3D token list: TSV with header columns surface, x, y, z and an
    optional meta column. Positions are taken as-is (not normalized)."""
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        header = fh.readline().rstrip("\n").rstrip("\r")
        cols = header.split("\t")
        col_idx = {c: i for i, c in enumerate(cols)}
        for want in _POINT_COLUMNS:
            if want not in col_idx:
                raise ParseError(path, 1, f"missing column {want!r} in header {cols!r}")
        meta_i = col_idx.get("meta")

        tokens: list[Token] = []
        positions: list[tuple[float, float, float]] = []
        for line_no, line in enumerate(fh, start=2):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) < len(cols):
                raise ParseError(path, line_no, f"{len(fields)} fields, expected {len(cols)}")
            try:
                xyz = tuple(float(fields[col_idx[c]]) for c in ("x", "y", "z"))
            except ValueError:
                raise ParseError(path, line_no, "non-numeric coordinate") from None
            if not all(np.isfinite(xyz)):
                raise ParseError(path, line_no, f"non-finite coordinate {xyz}")
            meta = fields[meta_i] if meta_i is not None and fields[meta_i] else None
            tokens.append(Token(id=len(tokens), surface=fields[col_idx["surface"]], meta=meta))
            positions.append(xyz)
    if not tokens:
        raise ParseError(path, 1, "no data rows")
    return PointCloud(tokens, np.array(positions, dtype=np.float64))


def save_points_3d(cloud: PointCloud, path) -> None:
    """Write a PointCloud in the TSV layout load_points_3d reads back."""
    has_meta = any(t.meta is not None for t in cloud.tokens)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("surface\tx\ty\tz" + ("\tmeta" if has_meta else "") + "\n")
        for tok, p in zip(cloud.tokens, cloud.positions):
            row = f"{tok.surface}\t{p[0]:.9g}\t{p[1]:.9g}\t{p[2]:.9g}"
            if has_meta:
                row += "\t" + (tok.meta or "")
            fh.write(row + "\n")


class DegenerateRankWarning(UserWarning):
    """Input covariance has fewer nonzero directions than requested."""


def pca_project(emb: EmbeddingSet, out_dim: int = 3) -> PointCloud:
    """Project embeddings onto their top principal directions.

    Components are ordered by non-increasing explained variance; each
    direction's sign is fixed so its largest-magnitude entry is positive.
    Rank-deficient input proceeds with zero trailing components and a
    DegenerateRankWarning.
    """
    n = len(emb)
    if n <= out_dim:
        raise ValueError(f"need more than {out_dim} points, got {n}")
    centered = emb.vectors - emb.vectors.mean(axis=0)
    cov = (centered.T @ centered) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)  # ascending
    order = np.argsort(evals)[::-1][:out_dim]
    variances = np.maximum(evals[order], 0.0)
    directions = evecs[:, order]

    scale = float(np.max(np.abs(evals))) if evals.size else 0.0
    rank_tol = scale * 1e-10
    degenerate = variances <= rank_tol
    if degenerate.any():
        warnings.warn(
            f"covariance rank {int((~degenerate).sum())} < out_dim {out_dim}; "
            "trailing components zeroed",
            DegenerateRankWarning,
            stacklevel=2,
        )
        directions[:, degenerate] = 0.0

    # deterministic sign: largest-|entry| of each direction made positive
    for c in range(out_dim):
        col = directions[:, c]
        if col.any() and col[np.argmax(np.abs(col))] < 0:
            directions[:, c] = -col

    positions = centered @ directions
    return PointCloud(list(emb.tokens), positions)


def normalize_to_unit_cube(cloud: PointCloud, margin: float = 0.05) -> PointCloud:
    """Map positions into [margin, 1-margin]^3 with a single isotropic scale,
    centering the shorter axes. Pairwise distance ratios are preserved.
    Records the pre-normalization bounds in bbox_original."""
    if not 0.0 <= margin < 0.5:
        raise ValueError(f"margin must be in [0, 0.5), got {margin}")
    bbox = _tight_bbox(cloud.positions)
    extent = bbox[1] - bbox[0]
    longest = float(extent.max())
    if longest <= 0.0:
        raise ValueError("all points coincident; cannot normalize")
    inner = 1.0 - 2.0 * margin
    scale = inner / longest
    offset = margin + 0.5 * (inner - extent * scale)
    positions = (cloud.positions - bbox[0]) * scale + offset
    # guard against float drift at the boundary
    np.clip(positions, margin, 1.0 - margin, out=positions)
    return PointCloud(list(cloud.tokens), positions, bbox_original=bbox)
