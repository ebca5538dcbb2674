"""Average and worst-case distortion of an embedding against its tree.

Embedded distances are compared with ``scale * d_T``. ``scale`` defaults to
1 (raw edge counts); pass the embedding's edge length tau to measure a
constructive embedding in its own unit, so that realising every tree
distance up to that uniform factor scores 0 / 1.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .embedders import EmbeddingResult
from .errors import DegenerateEmbedding, NodeMismatch
from .geometry import WORK
from .hierarchy import Hierarchy, all_pairs_distances

# working-set bound for one batch of pairwise coordinate differences
_BATCH_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class DistortionReport:
    d_avg: float
    d_wc: float
    num_pairs: int
    max_stretch: float
    min_stretch: float
    batch_rows: int
    wall_time: float
    scale: float = 1.0
    strategy: str | None = None
    dimension: int | None = None
    tau: float | None = None
    seed: int | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def default_batch_rows(num_nodes: int, dimension: int) -> int:
    return max(1, _BATCH_ELEMENTS // max(1, num_nodes * dimension))


def _aligned_coords(emb: EmbeddingResult, h: Hierarchy) -> np.ndarray:
    if len(emb.nodes) != len(h) or set(emb.nodes) != set(h.nodes):
        missing = sorted(set(h.nodes) - set(emb.nodes))[:5]
        extra = sorted(set(emb.nodes) - set(h.nodes))[:5]
        raise NodeMismatch(f"embedding/tree node sets differ; missing={missing} extra={extra}")
    return np.asarray(emb.reordered(h.nodes), dtype=WORK)


def _hyperbolic_rows(block: np.ndarray, block_sq: np.ndarray, coords: np.ndarray,
                     sq: np.ndarray) -> np.ndarray:
    diff = block[:, None, :] - coords[None, :, :]
    num = np.sum(diff * diff, axis=-1)
    den = (1 - block_sq[:, None]) * (1 - sq[None, :])
    return 2 * np.arcsinh(np.sqrt(num / den))


def evaluate(emb: EmbeddingResult, h: Hierarchy, batch_rows: int | None = None,
             scale: float | None = None) -> DistortionReport:
    """Both distortion metrics in one streamed pass over distance-row batches.

    Each row's relative errors are summed with ``math.fsum`` (exactly rounded)
    and the row sums are combined the same way, so the result does not depend
    on ``batch_rows``.
    """
    started = time.perf_counter()
    if len(h) < 2:
        raise ValueError("distortion needs at least two nodes")
    coords = _aligned_coords(emb, h)
    scale = 1.0 if scale is None else float(scale)
    if not scale > 0:
        raise ValueError("scale must be positive")
    if batch_rows is None:
        batch_rows = default_batch_rows(len(h), coords.shape[1])
    sq = np.sum(coords * coords, axis=1)
    row_sums: list[float] = []
    hi = -math.inf
    lo = math.inf
    for batch in all_pairs_distances(h, batch_rows):
        stop = batch.start + len(batch.nodes)
        hyp = _hyperbolic_rows(coords[batch.start:stop], sq[batch.start:stop], coords, sq)
        target = batch.rows.astype(WORK) * WORK(scale)
        off = batch.rows > 0
        ratio = np.where(off, hyp / np.where(off, target, 1), np.nan)
        rel = np.abs(ratio - 1).astype(np.float64)
        for r in range(rel.shape[0]):
            row = rel[r][off[r]]
            row_sums.append(math.fsum(row.tolist()))
        masked = ratio[off]
        hi = max(hi, float(masked.max()))
        lo = min(lo, float(masked.min()))
    n = len(h)
    if lo <= 0:
        raise DegenerateEmbedding("two distinct nodes share a point (zero minimum stretch)")
    return DistortionReport(
        d_avg=math.fsum(row_sums) / (n * (n - 1)),
        d_wc=hi / lo,
        num_pairs=n * (n - 1),
        max_stretch=hi,
        min_stretch=lo,
        batch_rows=batch_rows,
        wall_time=time.perf_counter() - started,
        scale=scale,
        strategy=emb.strategy,
        dimension=emb.config.dimension,
        tau=emb.config.tau,
        seed=emb.seed,
    )


def avg_distortion(emb: EmbeddingResult, h: Hierarchy, batch_rows: int | None = None,
                   scale: float | None = None) -> float:
    return evaluate(emb, h, batch_rows, scale).d_avg


def worst_case_distortion(emb: EmbeddingResult, h: Hierarchy, batch_rows: int | None = None,
                          scale: float | None = None) -> float:
    return evaluate(emb, h, batch_rows, scale).d_wc
