"""Prompt assembly, the four-criterion validation gate, a deterministic
chain-collapse restructurer and before/after structural comparison."""
from __future__ import annotations

import csv
import statistics
from dataclasses import asdict, dataclass, field
from importlib import resources

from .errors import DegenerateVariance, EmptyRecommendationSet, ParseError
from .hierarchy import (
    INDENT,
    Hierarchy,
    MultiParentGraph,
    compute_properties,
    parse_text,
    resolve_multi_parent,
)

REC_FIELDS = ("r1_width", "r2_balance", "r3_size", "r4_single_inheritance")


@dataclass(frozen=True)
class RecommendationSet:
    r1_width: bool = False
    r2_balance: bool = False
    r3_size: bool = False
    r4_single_inheritance: bool = False

    @classmethod
    def all(cls) -> "RecommendationSet":
        return cls(True, True, True, True)

    @classmethod
    def parse(cls, spec: str) -> "RecommendationSet":
        """``"r1,r3"`` / ``"R1R3"`` / ``"all"`` -> flags."""
        spec = spec.strip().lower()
        if spec == "all":
            return cls.all()
        flags = [False] * 4
        tokens = spec.replace(",", " ").replace("r", " r").split()
        for tok in tokens:
            if tok not in ("r1", "r2", "r3", "r4"):
                raise ValueError(f"unknown recommendation {tok!r}; use r1..r4")
            flags[int(tok[1]) - 1] = True
        return cls(*flags)

    @property
    def flags(self) -> tuple[bool, bool, bool, bool]:
        return tuple(getattr(self, f) for f in REC_FIELDS)

    def any(self) -> bool:
        return any(self.flags)

    @property
    def label(self) -> str:
        return "".join(f"R{i + 1}" for i, on in enumerate(self.flags) if on) or "baseline"


# subsets compared in the prompt ablation, in table order
ABLATION_SUBSETS: tuple[RecommendationSet, ...] = (
    RecommendationSet(True, False, False, False),
    RecommendationSet(False, True, False, False),
    RecommendationSet(False, False, True, False),
    RecommendationSet(True, True, True, False),
    RecommendationSet(False, True, True, True),
    RecommendationSet(True, True, True, True),
)


# -- prompt -------------------------------------------------------------------


def load_prompt_template() -> dict[str, str]:
    text = resources.files("hyperarbor").joinpath("data/prompt_template.txt").read_text("utf-8")
    sections: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        if line.startswith("%% "):
            current = line[3:].strip()
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
    return {k: "\n".join(v).strip("\n") for k, v in sections.items()}


def assemble_prompt(h_text: str, recs: RecommendationSet) -> str:
    if not recs.any():
        raise EmptyRecommendationSet("select at least one recommendation")
    parse_text(h_text)
    tpl = load_prompt_template()
    blocks = [tpl[name] for name, on in zip(REC_FIELDS, recs.flags) if on]
    body = h_text if h_text.endswith("\n") else h_text + "\n"
    return "\n\n".join([tpl["preamble"], *blocks, tpl["hierarchy_header"]]) + "\n" + body


# -- validation gate ----------------------------------------------------------

CRITERIA = {
    1: "structurally different from the input",
    2: "all original leaf nodes retained",
    3: "no hallucinated nodes or structure",
    4: "same format as the input",
}


@dataclass
class ValidationReport:
    structurally_different: bool
    leaves_retained: bool
    no_hallucination: bool
    format_ok: bool
    details: dict = field(default_factory=dict)

    def passed(self) -> bool:
        return (self.structurally_different and self.leaves_retained
                and self.no_hallucination and self.format_ok)

    def failures(self) -> list[tuple[int, str]]:
        """``(criterion number, evidence)`` for each failed criterion."""
        d = self.details
        out = []
        if not self.structurally_different:
            out.append((1, "the hierarchy is unchanged; restructure it"))
        if not self.leaves_retained:
            out.append((2, "missing original leaf nodes: " + ", ".join(d.get("missing_leaves", []))))
        if not self.no_hallucination:
            parts = []
            if d.get("invented_nodes"):
                parts.append("nodes not in the original: " + ", ".join(d["invented_nodes"]))
            if d.get("duplicate_nodes"):
                parts.append("nodes listed more than once: " + ", ".join(d["duplicate_nodes"]))
            if d.get("root_count", 1) != 1:
                parts.append(f"{d.get('root_count')} top-level nodes instead of one root")
            out.append((3, "; ".join(parts) or "structure could not be read"))
        if not self.format_ok:
            out.append((4, d.get("parse_error") or "output is not in the input format"))
        return out

    def as_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed()
        return out


def _loose_structure(text: str) -> tuple[list[str], set[tuple[str, str]], list[str]]:
    """Read an indented outline without enforcing the strict grammar.

    Any indentation width is accepted; a line's parent is the closest
    preceding line with smaller indentation.
    """
    labels: list[str] = []
    edges: set[tuple[str, str]] = set()
    roots: list[str] = []
    stack: list[tuple[int, str]] = []
    for raw in text.split("\n"):
        raw = raw.rstrip().replace("\t", INDENT)
        name = raw.strip()
        if not name or name.startswith("```"):
            continue
        indent = len(raw) - len(raw.lstrip(" "))
        while stack and stack[-1][0] >= indent:
            stack.pop()
        if stack:
            edges.add((stack[-1][1], name))
        else:
            roots.append(name)
        labels.append(name)
        stack.append((indent, name))
    return labels, edges, roots


def validate_candidate(original: Hierarchy, candidate_text: str) -> ValidationReport:
    details: dict = {}
    format_ok = True
    try:
        strict = parse_text(candidate_text)
    except ParseError as exc:
        format_ok = False
        details["parse_error"] = str(exc)
        labels, edges, roots = _loose_structure(candidate_text)
    else:
        labels = [strict.labels[n] for n in strict.nodes]
        edges = {(strict.labels[p], strict.labels[c]) for p, c in strict.edges}
        roots = [strict.labels[strict.root]]

    orig_labels = {original.labels[n] for n in original.nodes}
    orig_edges = {(original.labels[p], original.labels[c]) for p, c in original.edges}
    orig_leaves = [original.labels[n] for n in original.leaves]
    present = set(labels)

    missing = [leaf for leaf in orig_leaves if leaf not in present]
    invented = sorted(present - orig_labels)
    seen: set[str] = set()
    dupes = sorted({x for x in labels if x in seen or seen.add(x)})
    details.update(missing_leaves=missing, invented_nodes=invented,
                   duplicate_nodes=dupes, root_count=len(roots))
    return ValidationReport(
        structurally_different=bool(labels) and edges != orig_edges,
        leaves_retained=not missing,
        no_hallucination=bool(labels) and not invented and not dupes and len(roots) == 1,
        format_ok=format_ok,
        details=details,
    )


# -- deterministic restructuring ----------------------------------------------


def collapse_chains(h: Hierarchy) -> tuple[Hierarchy, list[str]]:
    """Remove every non-root node that has exactly one child.

    The child takes the removed node's place among its parent's children,
    so a chain ``p -> a -> b -> c`` (a, b single-child) becomes ``p -> c``.
    """
    log: list[str] = []
    kids: dict[str, list[str]] = {}
    stack = [h.root]
    while stack:
        node = stack.pop()
        new = []
        for c in h.children[node]:
            removed = []
            while len(h.children[c]) == 1:
                removed.append(c)
                c = h.children[c][0]
            if removed:
                log.append(f"chain removal: removed {', '.join(removed)} "
                           f"(single-child intermediates); promoted {c} under {node}")
            new.append(c)
        kids[node] = new
        stack.extend(reversed(new))
    return Hierarchy(h.root, kids), log


def heuristic_restructure(h: Hierarchy | MultiParentGraph,
                          recs: RecommendationSet) -> tuple[Hierarchy, str]:
    """LLM-free restructuring. R1 collapses chains; R4 resolves multiple
    inheritance; R2 and R3 only permit, so they change nothing."""
    notes: list[str] = []
    if isinstance(h, MultiParentGraph):
        tree = resolve_multi_parent(h)
        if h.has_multiple_inheritance:
            multi = [n for n, ps in h.parents.items() if len(ps) > 1]
            for n in multi:
                keep = tree.parent[n]
                dropped = [p for p in h.parents[n] if p != keep]
                rule = "R4 single inheritance" if recs.r4_single_inheritance else "tree required"
                notes.append(f"node removal ({rule}): {n} keeps parent {keep}, "
                             f"dropped {', '.join(dropped)}")
        h = tree
    if recs.r1_width:
        h, log = collapse_chains(h)
        notes.extend(f"R1 width: {line}" for line in log)
    if not notes:
        notes.append("no transformation applicable")
    return h, "\n".join(notes) + "\n"


# -- comparison ---------------------------------------------------------------


@dataclass(frozen=True)
class StructuralDiff:
    removed_nodes: tuple[str, ...]
    promoted_nodes: tuple[str, ...]
    depth_delta: int
    avg_bf_delta: float
    leaf_delta: int
    node_delta: int

    def as_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _exact_bf(h: Hierarchy) -> float:
    internal = sum(1 for cs in h.children.values() if cs)
    return (len(h) - 1) / internal if internal else 0.0


def structural_diff(original: Hierarchy, restructured: Hierarchy) -> StructuralDiff:
    po = compute_properties(original)
    pr = compute_properties(restructured)
    kept = set(restructured.nodes)
    removed = tuple(n for n in original.nodes if n not in kept)
    promoted = []
    for n in restructured.nodes:
        if n == restructured.root or n not in original or n == original.root:
            continue
        new_parent = restructured.parent[n]
        old_parent = original.parent[n]
        if restructured.depth[new_parent] < original.depth[old_parent]:
            promoted.append(n)
    return StructuralDiff(
        removed_nodes=removed,
        promoted_nodes=tuple(promoted),
        depth_delta=pr.depth - po.depth,
        avg_bf_delta=_exact_bf(restructured) - _exact_bf(original),
        leaf_delta=pr.num_leaves - po.num_leaves,
        node_delta=pr.num_nodes - po.num_nodes,
    )


@dataclass
class RestructureOutcome:
    candidate: Hierarchy | None
    validation: ValidationReport
    explanation: str = ""
    diff: StructuralDiff | None = None
    follow_ups: int = 0
    restarts: int = 0

    def __post_init__(self):
        if self.candidate is not None and not self.validation.passed():
            raise ValueError("a candidate is only kept when validation passed")

    @property
    def passed(self) -> bool:
        return self.candidate is not None


def load_published_table() -> list[dict]:
    """Per-hierarchy distortions and tree properties of original and
    LLM-restructured hierarchies (variants ``original``, ``chatgpt``,
    ``deepseek``), as shipped in ``data/results/table1.csv``."""
    text = resources.files("hyperarbor").joinpath("data/results/table1.csv").read_text("utf-8")
    rows = []
    for row in csv.DictReader(text.splitlines()):
        out: dict = {"hierarchy": row.pop("hierarchy"), "variant": row.pop("variant")}
        for k, v in row.items():
            out[k] = float(v) if "." in v else int(v)
        rows.append(out)
    return rows


def published_delta_records(strategy: str = "hadamard", variant: str = "chatgpt"
                            ) -> list[tuple[float, float]]:
    """``(avg_bf_delta, d_avg_delta)`` per hierarchy from the shipped table."""
    rows = load_published_table()
    orig = {r["hierarchy"]: r for r in rows if r["variant"] == "original"}
    key = f"{strategy}_d_avg"
    return [(r["avg_branching_factor"] - orig[r["hierarchy"]]["avg_branching_factor"],
             r[key] - orig[r["hierarchy"]][key])
            for r in rows if r["variant"] == variant]


def bf_distortion_correlation(records) -> float:
    """Pearson correlation of ``(avg_bf_delta, d_avg_delta)`` pairs."""
    records = list(records)
    if len(records) < 2:
        raise DegenerateVariance("need at least two records")
    xs = [float(r[0]) for r in records]
    ys = [float(r[1]) for r in records]
    try:
        return statistics.correlation(xs, ys)
    except statistics.StatisticsError as exc:  # constant column, incl. underflowed variance
        raise DegenerateVariance("a delta column is constant") from exc
