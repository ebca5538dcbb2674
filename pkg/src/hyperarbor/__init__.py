"""Restructure hierarchies for width and measure how well they embed in the
Poincare ball."""

__version__ = "0.1.0"

from .embedders import EmbeddingResult, embed, read_embedding, write_embedding
from .geometry import EmbeddingConfig, compute_tau, distance, mobius_add, select_dimension
from .hierarchy import (
    Hierarchy,
    MultiParentGraph,
    TreeProperties,
    compute_properties,
    parse_graph_dict,
    parse_text,
    resolve_multi_parent,
    serialize_graph_dict,
    serialize_text,
    tree_distance,
)
from .metrics import DistortionReport, avg_distortion, evaluate, worst_case_distortion
from .restructure import (
    RecommendationSet,
    ValidationReport,
    assemble_prompt,
    heuristic_restructure,
    structural_diff,
    validate_candidate,
)
