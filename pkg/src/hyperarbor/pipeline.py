"""End-to-end helpers shared by the command line and by library users."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .embedders import STRATEGIES, EmbeddingResult, embed
from .errors import ExhaustedAttempts, MultipleParents, ValidationFailed
from .geometry import DOUBLE_EPS, EmbeddingConfig, compute_tau, select_dimension
from .hierarchy import (
    Hierarchy,
    MultiParentGraph,
    compute_properties,
    parse_graph_dict,
    parse_text,
    serialize_text,
)
from .metrics import DistortionReport, evaluate
from .restructure import (
    ABLATION_SUBSETS,
    RecommendationSet,
    heuristic_restructure,
    structural_diff,
    validate_candidate,
)


def load_hierarchy(path: str | Path, allow_multi_parent: bool = False
                   ) -> Hierarchy | MultiParentGraph:
    """Read a ``.json`` graph dictionary or an indented text file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() != ".json":
        return parse_text(text)
    doc = json.loads(text)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: expected an object mapping node -> children")
    try:
        return parse_graph_dict(doc)
    except MultipleParents:
        if not allow_multi_parent:
            raise
        return MultiParentGraph.from_children(doc)


def auto_config(h: Hierarchy, dimension: int | None = None, epsilon: float = DOUBLE_EPS
                ) -> EmbeddingConfig:
    p = compute_properties(h)
    return EmbeddingConfig.auto(p.max_degree, p.depth, epsilon, dimension)


def embed_and_evaluate(h: Hierarchy, config: EmbeddingConfig, strategy: str, seed: int = 0,
                       batch_rows: int | None = None) -> tuple[EmbeddingResult, DistortionReport]:
    """Embed ``h`` and score it in the embedding's own unit (edge length tau)."""
    emb = embed(h, config, strategy, seed)
    return emb, evaluate(emb, h, batch_rows, scale=config.tau)


def _row(variant: str, h: Hierarchy, config: EmbeddingConfig, strategy: str, seed: int,
         batch_rows: int | None) -> dict:
    _, rep = embed_and_evaluate(h, config, strategy, seed, batch_rows)
    return {
        "variant": variant,
        "strategy": strategy,
        "d_avg": rep.d_avg,
        "d_wc": rep.d_wc,
        "dimension": config.dimension,
        "tau": config.tau,
        "epsilon": config.epsilon,
        "max_path_length": config.max_path_length,
        "seed": seed,
        "properties": compute_properties(h).as_dict(),
    }


def compare_pair(original: Hierarchy, restructured: Hierarchy,
                 strategies=STRATEGIES, seed: int = 0, shared_tau: bool = False,
                 epsilon: float = DOUBLE_EPS, batch_rows: int | None = None) -> dict:
    """Embed and score both trees at one shared dimension.

    The dimension follows the larger maximum degree of the two. Each tree
    gets the edge length tau of its own depth unless ``shared_tau`` is set,
    in which case both use the tau of the deeper tree.
    """
    report = validate_candidate(original, serialize_text(restructured))
    if not report.passed():
        failed = ", ".join(str(k) for k, _ in report.failures())
        raise ValidationFailed(f"restructured hierarchy fails criteria {failed}", report)
    po = compute_properties(original)
    pr = compute_properties(restructured)
    dim = select_dimension(max(po.max_degree, pr.max_degree, 1))
    cfg_o = EmbeddingConfig.auto(po.max_degree, po.depth, epsilon, dim)
    cfg_r = EmbeddingConfig.auto(pr.max_degree, pr.depth, epsilon, dim)
    if shared_tau:
        ell = max(cfg_o.max_path_length, cfg_r.max_path_length)
        cfg_o = cfg_r = EmbeddingConfig(dim, compute_tau(ell, epsilon), epsilon, ell)
    rows = []
    for strategy in strategies:
        rows.append(_row("original", original, cfg_o, strategy, seed, batch_rows))
        rows.append(_row("restructured", restructured, cfg_r, strategy, seed, batch_rows))
    return {
        "dimension": dim,
        "shared_tau": shared_tau,
        "rows": rows,
        "diff": structural_diff(original, restructured).as_dict(),
        "validation": report.as_dict(),
    }


def baseline_row(h: Hierarchy, strategy: str, seed: int = 0, epsilon: float = DOUBLE_EPS,
                 batch_rows: int | None = None) -> dict:
    return _row("baseline", h, auto_config(h, epsilon=epsilon), strategy, seed, batch_rows)


def restructure_with(engine: str, h: Hierarchy | MultiParentGraph, recs: RecommendationSet,
                     llm_config=None, transcript=None):
    """Run one engine; returns ``(candidate or None, report, explanation, extra)``."""
    if engine == "heuristic":
        original = h
        if isinstance(h, MultiParentGraph):
            from .hierarchy import resolve_multi_parent
            original = resolve_multi_parent(h)
        cand, explanation = heuristic_restructure(h, recs)
        report = validate_candidate(original, serialize_text(cand))
        return (cand if report.passed() else None), report, explanation, {}
    if engine == "llm":
        from .llm import LlmConfig, SessionTranscript, restructure_session
        if isinstance(h, MultiParentGraph):
            raise ValueError("the llm engine needs a tree; resolve multiple parents first")
        cfg = llm_config or LlmConfig.from_env()
        transcript = transcript if transcript is not None else SessionTranscript()
        try:
            out = restructure_session(cfg, h, recs, transcript)
        except ExhaustedAttempts as exc:
            return None, exc.report, "", {"follow_ups": None, "restarts": None,
                                          "exhausted": True}
        return out.candidate, out.validation, out.explanation, {
            "follow_ups": out.follow_ups, "restarts": out.restarts}
    raise ValueError(f"unknown engine {engine!r}; use heuristic or llm")


@dataclass
class AblationRow:
    subset: str
    strategy: str
    status: str  # baseline | restructured | no transformation | validation failed
    d_avg: float
    d_wc: float
    dimension: int
    tau: float
    properties: dict


def ablation_grid(h: Hierarchy, engine: str = "heuristic", strategies=STRATEGIES,
                  seed: int = 0, epsilon: float = DOUBLE_EPS, llm_config=None,
                  batch_rows: int | None = None, subsets=ABLATION_SUBSETS) -> list[AblationRow]:
    """Baseline plus one row per recommendation subset, for every strategy.

    Subsets whose candidate fails validation keep the original tree and are
    flagged; for the heuristic engine an unchanged tree is reported as
    ``no transformation``.
    """
    candidates = []
    for recs in subsets:
        cand, report, _, _ = restructure_with(engine, h, recs, llm_config)
        if cand is not None:
            candidates.append((recs.label, cand, "restructured"))
        elif not report.structurally_different and report.leaves_retained:
            candidates.append((recs.label, None, "no transformation"))
        else:
            candidates.append((recs.label, None, "validation failed"))
    rows = []
    for strategy in strategies:
        base = baseline_row(h, strategy, seed, epsilon, batch_rows)
        rows.append(AblationRow("baseline", strategy, "baseline", base["d_avg"], base["d_wc"],
                                base["dimension"], base["tau"], base["properties"]))
        for label, cand, status in candidates:
            if cand is None:
                rows.append(AblationRow(label, strategy, status, base["d_avg"], base["d_wc"],
                                        base["dimension"], base["tau"], base["properties"]))
                continue
            cmp = compare_pair(h, cand, (strategy,), seed, epsilon=epsilon,
                               batch_rows=batch_rows)
            r = cmp["rows"][1]
            rows.append(AblationRow(label, strategy, status, r["d_avg"], r["d_wc"],
                                    r["dimension"], r["tau"], r["properties"]))
    return rows
