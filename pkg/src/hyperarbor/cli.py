"""``hyperarbor`` command line.

Exit codes: 0 success, 1 validation failure, 2 input error,
3 external-service failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .embedders import STRATEGIES, embed, read_embedding, write_embedding
from .errors import (
    DegenerateEmbedding,
    DegreeExceedsCapacity,
    EmptyRecommendationSet,
    ExhaustedAttempts,
    GatewayError,
    HierarchyError,
    NodeMismatch,
    NumericOverflow,
    ValidationFailed,
)
from .geometry import DOUBLE_EPS, EmbeddingConfig
from .hierarchy import (
    Hierarchy,
    MultiParentGraph,
    compute_properties,
    resolve_multi_parent,
    serialize_text,
)
from .metrics import evaluate
from .pipeline import (
    ablation_grid,
    auto_config,
    compare_pair,
    load_hierarchy,
    restructure_with,
)
from .restructure import RecommendationSet, structural_diff, validate_candidate

EXIT_OK, EXIT_VALIDATION, EXIT_INPUT, EXIT_SERVICE = 0, 1, 2, 3


class RunManifest:
    """Collects what one command read, used and wrote."""

    def __init__(self, command: str, argv: list[str]):
        self.doc = {
            "command": command,
            "argv": argv,
            "version": __version__,
            "inputs": [],
            "config": {},
            "outputs": [],
            "started": datetime.now(timezone.utc).isoformat(),
        }

    @property
    def filename(self) -> str:
        return f"{self.doc['command']}.manifest.json"

    def add_input(self, path) -> None:
        self.doc["inputs"].append(str(path))

    def write_json(self, out_dir: Path, name: str, payload: dict) -> Path:
        path = out_dir / name
        payload = {"manifest": self.filename, **payload}
        path.write_text(json.dumps(payload, indent=2, default=_jsonable) + "\n", encoding="utf-8")
        self.doc["outputs"].append(str(path))
        return path

    def write_text(self, out_dir: Path, name: str, text: str) -> Path:
        path = out_dir / name
        path.write_text(text, encoding="utf-8")
        self.doc["outputs"].append(str(path))
        return path

    def record(self, path: Path) -> None:
        self.doc["outputs"].append(str(path))

    def save(self, out_dir: Path | None) -> None:
        if out_dir is None:
            return
        self.doc["finished"] = datetime.now(timezone.utc).isoformat()
        (out_dir / self.filename).write_text(
            json.dumps(self.doc, indent=2, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(obj):
    if hasattr(obj, "as_dict"):
        return obj.as_dict()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    if isinstance(obj, (set, tuple)):
        return list(obj)
    return float(obj)


def _out_dir(args) -> Path | None:
    if getattr(args, "out", None) is None:
        return None
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _emit(doc: dict) -> None:
    print(json.dumps(doc, indent=2, default=_jsonable))


def _tree(path, manifest: RunManifest) -> Hierarchy:
    manifest.add_input(path)
    h = load_hierarchy(path)
    if isinstance(h, MultiParentGraph):
        raise HierarchyError(f"{path}: node with several parents; restructure with r4 first")
    return h


def _strategies(value: str) -> tuple[str, ...]:
    return STRATEGIES if value == "both" else (value,)


# -- commands -----------------------------------------------------------------


def cmd_analyze(args, manifest: RunManifest) -> int:
    h = _tree(args.input, manifest)
    doc = compute_properties(h).as_dict()
    out = _out_dir(args)
    if out is not None:
        manifest.write_json(out, Path(args.input).stem + ".properties.json", doc)
    _emit(doc)
    manifest.save(out)
    return EXIT_OK


def cmd_embed(args, manifest: RunManifest) -> int:
    h = _tree(args.input, manifest)
    dim = None if args.dim == "auto" else int(args.dim)
    config = auto_config(h, dim, args.epsilon)
    manifest.doc["config"] = {**asdict(config), "strategy": args.strategy, "seed": args.seed}
    emb = embed(h, config, args.strategy, args.seed)
    out = _out_dir(args)
    path = out / f"{Path(args.input).stem}.{args.strategy}.emb.tsv"
    write_embedding(emb, path, {"manifest": manifest.filename})
    manifest.record(path)
    _emit({"embedding": str(path), **manifest.doc["config"]})
    manifest.save(out)
    return EXIT_OK


def cmd_evaluate(args, manifest: RunManifest) -> int:
    h = _tree(args.tree, manifest)
    manifest.add_input(args.embedding)
    emb = read_embedding(args.embedding)
    scale = emb.config.tau if args.scale == "tau" else float(args.scale)
    manifest.doc["config"] = {**asdict(emb.config), "strategy": emb.strategy, "seed": emb.seed,
                              "batch_rows": args.batch_rows, "scale": scale}
    rep = evaluate(emb, h, args.batch_rows, scale=scale)
    doc = rep.as_dict()
    out = _out_dir(args)
    if out is not None:
        manifest.write_json(out, Path(args.embedding).name + ".report.json", doc)
    _emit(doc)
    manifest.save(out)
    return EXIT_OK


def _llm_config(args):
    from .llm import LlmConfig
    return LlmConfig.from_env(timeout=args.timeout, max_follow_ups=args.max_follow_ups,
                              max_restarts=args.max_restarts)


def cmd_restructure(args, manifest: RunManifest) -> int:
    manifest.add_input(args.input)
    src = load_hierarchy(args.input, allow_multi_parent=True)
    recs = RecommendationSet.parse(args.recs)
    out = _out_dir(args)
    stem = Path(args.input).stem
    transcript = None
    llm_cfg = None
    if args.engine == "llm":
        from .llm import SessionTranscript
        transcript = SessionTranscript()
        llm_cfg = _llm_config(args)
        manifest.doc["config"]["llm"] = llm_cfg.snapshot()
    manifest.doc["config"].update(engine=args.engine, recommendations=recs.label)
    original = resolve_multi_parent(src) if isinstance(src, MultiParentGraph) else src
    try:
        cand, report, explanation, extra = restructure_with(args.engine, src, recs, llm_cfg,
                                                            transcript)
    finally:
        if transcript is not None and transcript.turns:
            transcript.save(out / f"{stem}.transcript.json")
            manifest.record(out / f"{stem}.transcript.json")
    manifest.write_json(out, f"{stem}.validation.json", {**report.as_dict(), **extra})
    if cand is None:
        print(f"restructuring failed validation: {report.failures()}", file=sys.stderr)
        manifest.save(out)
        return EXIT_VALIDATION
    manifest.write_text(out, f"{stem}.restructured.txt", serialize_text(cand))
    manifest.write_text(out, f"{stem}.explanation.txt", explanation)
    manifest.write_json(out, f"{stem}.diff.json", structural_diff(original, cand).as_dict())
    _emit({"outputs": manifest.doc["outputs"], **extra})
    manifest.save(out)
    return EXIT_OK


def cmd_validate(args, manifest: RunManifest) -> int:
    h = _tree(args.original, manifest)
    manifest.add_input(args.candidate)
    report = validate_candidate(h, Path(args.candidate).read_text(encoding="utf-8"))
    out = _out_dir(args)
    if out is not None:
        manifest.write_json(out, Path(args.candidate).stem + ".validation.json", report.as_dict())
    _emit(report.as_dict())
    manifest.save(out)
    return EXIT_OK if report.passed() else EXIT_VALIDATION


def cmd_compare(args, manifest: RunManifest) -> int:
    orig = _tree(args.original, manifest)
    restr = _tree(args.restructured, manifest)
    manifest.doc["config"] = {"strategy": args.strategy, "seed": args.seed,
                              "epsilon": args.epsilon, "shared_tau": args.shared_tau}
    doc = compare_pair(orig, restr, _strategies(args.strategy), args.seed, args.shared_tau,
                       args.epsilon, args.batch_rows)
    out = _out_dir(args)
    if out is not None:
        manifest.write_json(out, f"{Path(args.original).stem}.comparison.json", doc)
    _emit(doc)
    manifest.save(out)
    return EXIT_OK


def cmd_ablate(args, manifest: RunManifest) -> int:
    h = _tree(args.input, manifest)
    if args.grid != "table2":
        raise ValueError(f"unknown grid {args.grid!r}")
    llm_cfg = _llm_config(args) if args.engine == "llm" else None
    manifest.doc["config"] = {"engine": args.engine, "grid": args.grid,
                              "strategy": args.strategy, "seed": args.seed,
                              "epsilon": args.epsilon}
    rows = ablation_grid(h, args.engine, _strategies(args.strategy), args.seed, args.epsilon,
                         llm_cfg, args.batch_rows)
    doc = {"rows": [asdict(r) for r in rows]}
    out = _out_dir(args)
    if out is not None:
        manifest.write_json(out, f"{Path(args.input).stem}.ablation.json", doc)
    _emit(doc)
    manifest.save(out)
    return EXIT_OK


def to_dot(h: Hierarchy) -> str:
    q = json.dumps  # DOT and JSON share the quoted-string escapes we need
    lines = ["digraph hierarchy {"]
    lines += [f"  {q(n)} [label={q(h.labels[n])}];" for n in h.nodes]
    lines += [f"  {q(p)} -> {q(c)};" for p, c in h.edges]
    lines.append("}")
    return "\n".join(lines) + "\n"


def cmd_export_viz(args, manifest: RunManifest) -> int:
    h = _tree(args.tree, manifest)
    dot = to_dot(h)
    out = _out_dir(args)
    if out is not None:
        manifest.write_text(out, Path(args.tree).stem + ".dot", dot)
    else:
        sys.stdout.write(dot)
    manifest.save(out)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperarbor",
                                description="Hierarchy restructuring and hyperbolic embedding")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        return sp

    def embedding_opts(sp, strategy_choices):
        sp.add_argument("--strategy", choices=strategy_choices, default=strategy_choices[0])
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--epsilon", type=float, default=DOUBLE_EPS)

    def llm_opts(sp):
        sp.add_argument("--timeout", type=float, default=None)
        sp.add_argument("--max-follow-ups", type=int, default=None)
        sp.add_argument("--max-restarts", type=int, default=None)

    sp = add("analyze", cmd_analyze, "tree properties")
    sp.add_argument("input")
    sp.add_argument("--out")

    sp = add("embed", cmd_embed, "embed a tree in the Poincare ball")
    sp.add_argument("input")
    embedding_opts(sp, list(STRATEGIES))
    sp.add_argument("--dim", default="auto", help="auto or an integer dimension")
    sp.add_argument("--out", required=True)

    sp = add("evaluate", cmd_evaluate, "distortion of an embedding")
    sp.add_argument("tree")
    sp.add_argument("embedding")
    sp.add_argument("--batch-rows", type=int, default=None)
    sp.add_argument("--scale", default="tau",
                    help="unit for tree distances: tau (edge length, default) or a number")
    sp.add_argument("--out")

    sp = add("restructure", cmd_restructure, "restructure a hierarchy")
    sp.add_argument("input")
    sp.add_argument("--engine", choices=["heuristic", "llm"], default="heuristic")
    sp.add_argument("--recs", default="all", help="e.g. r1,r2 or all")
    llm_opts(sp)
    sp.add_argument("--out", required=True)

    sp = add("validate", cmd_validate, "check a candidate against the original")
    sp.add_argument("original")
    sp.add_argument("candidate")
    sp.add_argument("--out")

    sp = add("compare", cmd_compare, "embed and score original and restructured trees")
    sp.add_argument("original")
    sp.add_argument("restructured")
    embedding_opts(sp, ["both", *STRATEGIES])
    sp.add_argument("--shared-tau", action="store_true",
                    help="use the deeper tree's tau for both trees")
    sp.add_argument("--batch-rows", type=int, default=None)
    sp.add_argument("--out")

    sp = add("ablate", cmd_ablate, "recommendation-subset grid")
    sp.add_argument("input")
    sp.add_argument("--engine", choices=["heuristic", "llm"], default="heuristic")
    sp.add_argument("--grid", default="table2", choices=["table2"])
    embedding_opts(sp, ["both", *STRATEGIES])
    sp.add_argument("--batch-rows", type=int, default=None)
    llm_opts(sp)
    sp.add_argument("--out")

    sp = add("export-viz", cmd_export_viz, "Graphviz DOT export")
    sp.add_argument("tree")
    sp.add_argument("--out")
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    manifest = RunManifest(args.command, argv)
    try:
        return args.func(args, manifest)
    except (ValidationFailed, ExhaustedAttempts) as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except GatewayError as exc:
        print(f"service error: {exc}", file=sys.stderr)
        return EXIT_SERVICE
    except (HierarchyError, DegreeExceedsCapacity, NodeMismatch, NumericOverflow,
            DegenerateEmbedding, EmptyRecommendationSet, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
