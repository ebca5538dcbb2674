"""Constructive tree embeddings in the Poincaré ball.

The root sits at the origin. For every placed node ``v`` the ball is
gyro-translated so that ``v`` is at the origin, the unit direction back to
``v``'s parent is reserved, children are put at Euclidean radius
``tanh(tau/2)`` (hyperbolic distance ``tau``) along the remaining directions,
and the ball is translated back. The two strategies differ only in how the
directions are chosen: rows of a Sylvester Hadamard matrix, or a point set
spread over the sphere by projected gradient descent on the Riesz energy.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import DegreeExceedsCapacity
from .geometry import WORK, EmbeddingConfig, hadamard_capacity, mobius_add
from .hierarchy import Hierarchy

Strategy = Literal["hadamard", "uniform"]
STRATEGIES: tuple[str, ...] = ("hadamard", "uniform")

UNIFORM_ITERATIONS = 450
UNIFORM_LR = 0.01
UNIFORM_DECAY_EVERY = 150
UNIFORM_DECAY = 0.1


@dataclass(frozen=True)
class DirectionSet:
    directions: np.ndarray  # (k, n) unit rows

    def __post_init__(self):
        d = np.asarray(self.directions)
        if d.ndim != 2 or d.shape[0] < 1:
            raise ValueError("need a non-empty (k, n) array of directions")
        norms = np.linalg.norm(d.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1) > 1e-9):
            raise ValueError("directions must have unit length")

    def __len__(self):
        return self.directions.shape[0]


def sylvester_hadamard(order: int) -> np.ndarray:
    if order < 1 or order & (order - 1):
        raise ValueError("Sylvester construction needs a power of two")
    h = np.ones((1, 1), dtype=np.int64)
    while h.shape[0] < order:
        h = np.block([[h, h], [h, -h]])
    return h


def hadamard_directions(n: int, k: int) -> DirectionSet:
    """First ``k`` rows of the order-``2^floor(log2 n)`` Hadamard matrix."""
    m = hadamard_capacity(n)
    if k > m:
        raise DegreeExceedsCapacity(
            f"{k} directions requested but dimension {n} only holds {m} Hadamard codes")
    out = np.zeros((k, n), dtype=WORK)
    out[:, :m] = sylvester_hadamard(m)[:k]
    out /= np.sqrt(WORK(m))
    return DirectionSet(out)


def _riesz_step_directions(points: np.ndarray, others: np.ndarray, k: int) -> np.ndarray:
    diff = points[:, None, :] - others[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    dist[np.arange(k), np.arange(k)] = np.inf
    grad = -(diff / dist[..., None] ** 3).sum(axis=1)
    # tangent part only; a step then moves each point a fixed arc length
    grad -= np.sum(grad * points, axis=1, keepdims=True) * points
    norm = np.linalg.norm(grad, axis=1, keepdims=True)
    return grad / np.where(norm > 0, norm, 1)


def optimize_uniform_directions(n: int, k: int, anchor: np.ndarray | None = None,
                                seed: int = 0) -> DirectionSet:
    """Spread ``k`` unit vectors over the sphere in R^n.

    Minimises the Riesz energy sum(1/|x_i - x_j|) by projected gradient
    descent: 450 steps, learning rate 0.01 divided by 10 every 150 steps.
    Each step moves a point along its normalised tangent gradient, so the
    learning rate is an arc length. A given ``anchor`` repels but stays fixed
    and is not returned.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((k, n))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    fixed = None
    if anchor is not None:
        fixed = np.asarray(anchor, dtype=np.float64).reshape(1, n)
        if abs(np.linalg.norm(fixed) - 1) > 1e-9:
            raise ValueError("anchor must be a unit vector")
    for step in range(UNIFORM_ITERATIONS):
        lr = UNIFORM_LR * UNIFORM_DECAY ** (step // UNIFORM_DECAY_EVERY)
        others = x if fixed is None else np.vstack([x, fixed])
        x = x - lr * _riesz_step_directions(x, others, k)
        x /= np.linalg.norm(x, axis=1, keepdims=True)
    return DirectionSet(x)


@lru_cache(maxsize=512)
def _anchored_uniform(n: int, k: int, seed: int) -> np.ndarray:
    e1 = np.zeros(n)
    e1[0] = 1.0
    d = optimize_uniform_directions(n, k, anchor=e1, seed=seed).directions
    d = d.astype(WORK)
    return d / np.sqrt(np.sum(d * d, axis=1, keepdims=True))


@lru_cache(maxsize=512)
def _free_uniform(n: int, k: int, seed: int) -> np.ndarray:
    d = optimize_uniform_directions(n, k, seed=seed).directions.astype(WORK)
    return d / np.sqrt(np.sum(d * d, axis=1, keepdims=True))


def householder_align(dirs: np.ndarray, source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Reflect ``dirs`` by the Householder map sending unit ``source`` to unit ``target``."""
    v = source - target
    vv = np.sum(v * v)
    if vv < WORK(1e-30):
        return dirs
    return dirs - (2 / vv) * np.outer(dirs @ v, v)


def check_capacity(h: Hierarchy, dimension: int) -> None:
    m = hadamard_capacity(dimension)
    for node in h.nodes:
        k = len(h.children[node])
        need = k if node == h.root else k + 1
        if need > m:
            raise DegreeExceedsCapacity(
                f"node {node!r} needs {need} directions; dimension {dimension} has capacity {m}")


@dataclass(frozen=True)
class EmbeddingResult:
    nodes: tuple[str, ...]
    coords: np.ndarray  # (N, n) in WORK precision, row i belongs to nodes[i]
    config: EmbeddingConfig
    strategy: str
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def assignment(self) -> dict[str, np.ndarray]:
        return {n: self.coords[i] for i, n in enumerate(self.nodes)}

    def point(self, node: str) -> np.ndarray:
        return self.coords[self.nodes.index(node)]

    def reordered(self, order) -> np.ndarray:
        pos = {n: i for i, n in enumerate(self.nodes)}
        return self.coords[[pos[n] for n in order]]


def _child_directions(strategy: str, n: int, k: int, seed: int,
                      back: np.ndarray | None) -> np.ndarray:
    if strategy == "hadamard":
        if back is None:
            return hadamard_directions(n, k).directions
        codes = hadamard_directions(n, k + 1).directions
        return householder_align(codes, codes[0], back)[1:]
    if back is None:
        return _free_uniform(n, k, seed)
    e1 = np.zeros(n, dtype=WORK)
    e1[0] = 1
    return householder_align(_anchored_uniform(n, k, seed), e1, back)


def embed(h: Hierarchy, config: EmbeddingConfig, strategy: str = "hadamard",
          seed: int = 0) -> EmbeddingResult:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    check_capacity(h, config.dimension)
    n = config.dimension
    eps = config.epsilon
    radius = np.tanh(WORK(config.tau) / 2)
    idx = h.index
    coords = np.zeros((len(h), n), dtype=WORK)
    for node in h.nodes:
        kids = h.children[node]
        if not kids:
            continue
        here = coords[idx[node]]
        par = h.parent[node]
        back = None
        if par is not None:
            toward = mobius_add(-here, coords[idx[par]], eps)
            back = toward / np.sqrt(np.sum(toward * toward))
        dirs = _child_directions(strategy, n, len(kids), seed, back)
        local = radius * dirs
        placed = mobius_add(here, local, eps) if par is not None else local
        coords[[idx[c] for c in kids]] = placed
    return EmbeddingResult(h.nodes, coords, config, strategy, seed)


# -- embedding file -----------------------------------------------------------

EMBEDDING_FORMAT = "hyperarbor-embedding/1"


def _fmt(x) -> str:
    return np.format_float_scientific(WORK(x), precision=20, unique=False)


def write_embedding(emb: EmbeddingResult, path: str | Path, extra: dict | None = None) -> None:
    """One tab-separated record per node after a JSON header comment.

    Coordinates carry 21 significant digits: exact for the working precision
    and well beyond the 17 needed for doubles.
    """
    header = {
        "format": EMBEDDING_FORMAT,
        "dimension": emb.config.dimension,
        "tau": emb.config.tau,
        "epsilon": emb.config.epsilon,
        "max_path_length": emb.config.max_path_length,
        "strategy": emb.strategy,
        "seed": emb.seed,
        "num_nodes": len(emb.nodes),
    }
    header.update(emb.meta)
    header.update(extra or {})
    lines = ["# " + json.dumps(header, sort_keys=True)]
    for node, row in zip(emb.nodes, emb.coords):
        if "\t" in node or "\n" in node:
            raise ValueError(f"node id {node!r} cannot be written to a TSV record")
        lines.append("\t".join([node, *(_fmt(c) for c in row)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_embedding(path: str | Path) -> EmbeddingResult:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ValueError(f"{path}: missing embedding header")
    header = json.loads(lines[0][2:])
    if header.get("format") != EMBEDDING_FORMAT:
        raise ValueError(f"{path}: unsupported format {header.get('format')!r}")
    nodes = []
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        node, *vals = line.split("\t")
        if len(vals) != header["dimension"]:
            raise ValueError(f"{path}: record for {node!r} has {len(vals)} coordinates")
        nodes.append(node)
        rows.append([WORK(v) for v in vals])
    config = EmbeddingConfig(header["dimension"], header["tau"], header["epsilon"],
                             header["max_path_length"])
    known = {"format", "dimension", "tau", "epsilon", "max_path_length", "strategy",
             "seed", "num_nodes"}
    meta = {k: v for k, v in header.items() if k not in known}
    coords = np.array(rows, dtype=WORK).reshape(len(nodes), header["dimension"])
    return EmbeddingResult(tuple(nodes), coords, config, header["strategy"],
                           header["seed"], meta)
