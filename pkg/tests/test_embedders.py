import numpy as np
import pytest
from hypothesis import given, settings

from conftest import fixture_tree, random_tree, trees
from hyperarbor.embedders import (
    DirectionSet,
    EmbeddingResult,
    embed,
    hadamard_directions,
    householder_align,
    optimize_uniform_directions,
    read_embedding,
    sylvester_hadamard,
    write_embedding,
)
from hyperarbor.errors import DegreeExceedsCapacity
from hyperarbor.geometry import WORK, EmbeddingConfig, distance
from hyperarbor.hierarchy import Hierarchy, compute_properties, parse_text
from hyperarbor.metrics import evaluate
from hyperarbor.pipeline import auto_config


def _angles_deg(d):
    d = np.asarray(d, dtype=float)
    g = np.clip(d @ d.T, -1, 1)
    iu = np.triu_indices(len(d), 1)
    return np.degrees(np.arccos(g[iu]))


# -- directions ---------------------------------------------------------------


def test_sylvester_is_hadamard():
    for m in (1, 2, 4, 8, 32, 256):
        h = sylvester_hadamard(m)
        assert np.array_equal(h @ h.T, m * np.eye(m, dtype=np.int64))
    with pytest.raises(ValueError):
        sylvester_hadamard(12)


def test_hadamard_order_two():
    d = hadamard_directions(2, 2).directions.astype(float)
    s = 1 / np.sqrt(2)
    assert np.allclose(d, [[s, s], [s, -s]])


def test_hadamard_forty_by_twenty_six():
    d = hadamard_directions(40, 26).directions
    assert d.shape == (26, 40)
    g = (d @ d.T).astype(float)
    assert np.allclose(g, np.eye(26), atol=1e-15)
    assert np.all(d[:, 32:] == 0)


def test_hadamard_capacity_error():
    with pytest.raises(DegreeExceedsCapacity):
        hadamard_directions(40, 33)


def test_direction_set_requires_unit_rows():
    with pytest.raises(ValueError):
        DirectionSet(np.array([[1.0, 1.0]]))


def test_uniform_two_points_on_circle():
    d = optimize_uniform_directions(2, 2, seed=0).directions
    assert abs(_angles_deg(d)[0] - 180) <= np.degrees(0.05)


def test_uniform_tetrahedron():
    d = optimize_uniform_directions(3, 4, seed=0).directions
    assert _angles_deg(d).min() >= 109.47 - 2


def test_uniform_deterministic_and_unit():
    a = optimize_uniform_directions(5, 7, seed=3).directions
    b = optimize_uniform_directions(5, 7, seed=3).directions
    assert np.array_equal(a, b)
    assert np.allclose(np.linalg.norm(a, axis=1), 1, atol=1e-12)


def test_uniform_anchor_is_repelled_and_excluded():
    anchor = np.array([1.0, 0, 0])
    d = optimize_uniform_directions(3, 3, anchor=anchor, seed=1).directions
    assert d.shape == (3, 3)
    # 4 points with one frozen: the free ones sit roughly tetrahedrally away from it
    assert np.degrees(np.arccos(np.clip(d @ anchor, -1, 1))).min() > 100


def test_householder_maps_source_to_target():
    rng = np.random.default_rng(0)
    s, t = rng.standard_normal((2, 6))
    s /= np.linalg.norm(s)
    t /= np.linalg.norm(t)
    dirs = np.vstack([s, rng.standard_normal((3, 6))])
    out = householder_align(dirs, s, t)
    assert np.allclose(out[0], t)
    assert np.allclose(out @ out.T, dirs @ dirs.T)  # an isometry


# -- embedding ----------------------------------------------------------------


@pytest.mark.parametrize("strategy", ["hadamard", "uniform"])
def test_single_edge(strategy):
    h = Hierarchy("r", {"r": ["a"]})
    cfg = auto_config(h)
    emb = embed(h, cfg, strategy)
    assert np.all(emb.point("r") == 0)
    assert distance(emb.point("r"), emb.point("a")) == pytest.approx(cfg.tau, abs=1e-6)


@pytest.mark.parametrize("strategy", ["hadamard", "uniform"])
def test_star_children_equidistant(strategy):
    k = 6
    h = Hierarchy("c", {"c": [f"l{i}" for i in range(k)]})
    cfg = auto_config(h)
    emb = embed(h, cfg, strategy)
    leaves = emb.reordered([f"l{i}" for i in range(k)])
    assert np.allclose(distance(np.zeros(cfg.dimension), leaves), cfg.tau, atol=1e-6)
    pair = [distance(leaves[i], leaves[j]) for i in range(k) for j in range(i + 1, k)]
    if strategy == "hadamard":
        assert max(pair) - min(pair) < 1e-9  # orthogonal codes: one common angle
    else:
        assert max(pair) / min(pair) < 1.1


def test_path_does_not_fold_back():
    h = parse_text("r\n  a\n    b")
    cfg = auto_config(h)
    emb = embed(h, cfg, "hadamard")
    assert distance(emb.point("r"), emb.point("b")) >= 1.9 * cfg.tau


@pytest.mark.parametrize("strategy", ["hadamard", "uniform"])
@settings(max_examples=25, deadline=None)
@given(h=trees(min_nodes=2, max_nodes=80))
def test_edges_have_length_tau(strategy, h):
    cfg = auto_config(h)
    emb = embed(h, cfg, strategy)
    idx = h.index
    d = distance(emb.coords[[idx[p] for p, _ in h.edges]],
                 emb.coords[[idx[c] for _, c in h.edges]])
    assert np.max(np.abs(d - cfg.tau)) < 1e-6
    assert np.all(emb.coords[idx[h.root]] == 0)
    rep = evaluate(emb, h, scale=cfg.tau)
    assert rep.d_wc >= 1 and rep.d_avg >= 0


def test_deep_tree_edges_exact():
    kids = {f"p{i}": [f"p{i + 1}", f"q{i}"] for i in range(40)}
    h = Hierarchy("p0", kids)
    cfg = auto_config(h)
    emb = embed(h, cfg, "hadamard")
    idx = h.index
    d = distance(emb.coords[[idx[p] for p, _ in h.edges]],
                 emb.coords[[idx[c] for _, c in h.edges]])
    assert np.max(np.abs(d - cfg.tau)) < 1e-6


def test_capacity_checked_for_both_strategies():
    h = Hierarchy("r", {"r": ["a"], "a": [f"x{i}" for i in range(8)]})
    cfg = EmbeddingConfig(dimension=8, tau=1.0)  # 8 codes, but a needs 9
    for strategy in ("hadamard", "uniform"):
        with pytest.raises(DegreeExceedsCapacity):
            embed(h, cfg, strategy)
    embed(h, EmbeddingConfig(dimension=16, tau=1.0), "hadamard")


def test_unknown_strategy():
    with pytest.raises(ValueError):
        embed(Hierarchy("r", {"r": ["a"]}), EmbeddingConfig(4, 1.0), "spiral")


@pytest.mark.parametrize("strategy", ["hadamard", "uniform"])
def test_deterministic(strategy):
    h = random_tree(np.random.default_rng(2), 150)
    cfg = auto_config(h)
    a = embed(h, cfg, strategy, seed=4)
    b = embed(h, cfg, strategy, seed=4)
    assert np.array_equal(a.coords, b.coords)


def test_injective_on_large_tree():
    h = random_tree(np.random.default_rng(9), 3000)
    cfg = auto_config(h)
    emb = embed(h, cfg, "hadamard")
    c = emb.coords
    worst = np.inf
    for i in range(0, len(h) - 1, 1):
        worst = min(worst, float(np.min(distance(c[i][None, :], c[i + 1:]))))
    assert worst > 1e-6


# -- file format --------------------------------------------------------------


def test_embedding_file_round_trip(tmp_path):
    h = fixture_tree("pizza")
    cfg = auto_config(h, dimension=70)
    emb = embed(h, cfg, "uniform", seed=7)
    path = tmp_path / "e.tsv"
    write_embedding(emb, path, {"manifest": "embed.manifest.json"})
    back = read_embedding(path)
    assert back.nodes == emb.nodes
    assert np.array_equal(back.coords, emb.coords)  # exact in the working precision
    assert back.config == emb.config and back.strategy == "uniform" and back.seed == 7
    assert back.meta["manifest"] == "embed.manifest.json"
    first = path.read_text().splitlines()[1].split("\t")
    assert len(first) == 71
    assert all(len(v.split("e")[0].replace("-", "").replace(".", "")) >= 17 for v in first[1:])


def test_embedding_file_rejects_bad_ids(tmp_path):
    h = Hierarchy("r", {"r": ["a\tb"]})
    emb = embed(h, auto_config(h), "hadamard")
    with pytest.raises(ValueError):
        write_embedding(emb, tmp_path / "x.tsv")


def test_result_accessors():
    h = parse_text("r\n  a\n  b")
    emb = embed(h, auto_config(h), "hadamard")
    assert isinstance(emb, EmbeddingResult)
    assert set(emb.assignment) == {"r", "a", "b"}
    assert emb.coords.dtype == WORK
    assert compute_properties(h).max_degree == 2
