import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from opttree.core import sample_prior
from opttree.dataset import from_unit
from opttree.errors import ConfigError, DataError, DegenerateSimplexError, DepthCapError, IntegrityError
from opttree.evaluation.references import reference
from opttree.dataset import ingest
from opttree.fee import (
    FeeDensity,
    assemble_qp,
    audit_triangulation,
    balance_partition,
    brute_force_qp,
    fee_fit,
    is_graded,
    lumped_guess,
    simplex_integral,
    simplex_volume,
    solve_qp,
    top_face_sq,
    triangulate,
)
from opttree.fee.density import check_mass, fee_eval_unit, locate
from opttree.fee.qp import kkt_residual, primal_dual_active_set
from opttree.fee.simplex import top_face_sq_gram
from opttree.geometry import Region
from opttree.llopt import llopt_fit
from opttree.pcdensity import build_tree, leaf_index, pc_eval_unit


def unit_simplex(p):
    return np.vstack([np.zeros(p), np.eye(p)])


def tree_from(p, splits):
    """Tree from ``{code-free region: dim}`` splits with uneven masses."""
    decisions = {}
    stack = [Region.root(p)]
    while stack:
        r = stack.pop()
        dim = splits.get(r)
        if dim is None:
            decisions[r] = None
        else:
            decisions[r] = (dim, (0.3, 0.7))
            stack.extend(r.children(dim))
    return build_tree(p, decisions)


def t_junction():
    """Coarse left half next to a right half refined two levels along y."""
    root = Region.root(2)
    left, right = root.children(0)
    splits = {root: 0, right: 1}
    r0, r1 = right.children(1)
    splits[r0] = 1
    return tree_from(2, splits)


# -- simplex geometry ----------------------------------------------------------


def test_simplex_volume_examples():
    assert simplex_volume([[0, 0], [1, 0], [0, 1]]) == pytest.approx(0.5)
    for p in range(1, 6):
        assert simplex_volume(unit_simplex(p)) == pytest.approx(1 / math.factorial(p))
    with pytest.raises(DegenerateSimplexError):
        simplex_volume([[0, 0], [1, 1], [2, 2]])


def test_simplex_integral_examples():
    assert simplex_integral(0.5, [1, 1, 1]) == pytest.approx(0.5)
    assert simplex_integral(0.5, [1, 2, 3]) == pytest.approx(1.0)
    assert simplex_integral(0.5, [0, 0, 0]) == 0.0


def test_top_face_examples():
    v = [[0, 0], [1, 0], [0, 1]]
    assert top_face_sq(v, [2.0, 2.0, 2.0]) == pytest.approx(0.25)
    assert top_face_sq([[0.0], [1.0]], [0.0, 1.0]) == pytest.approx(2.0)
    base = top_face_sq(v, [0, 0, 0])
    c = np.array([0.3, 1.2, 0.7])
    assert top_face_sq(v, 3 * c) - base == pytest.approx(9 * (top_face_sq(v, c) - base))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31))
def test_top_face_matches_gram_determinant(p, seed):
    rng = np.random.default_rng(seed)
    v = rng.random((p + 1, p))
    if abs(np.linalg.det(np.hstack([v, np.ones((p + 1, 1))]))) < 1e-3:
        return
    c = rng.random(p + 1) * 3
    assert top_face_sq(v, c) == pytest.approx(top_face_sq_gram(v, c), rel=1e-8)


# -- grading ---------------------------------------------------------------------


def test_single_leaf_unchanged():
    tree = build_tree(2, {Region.root(2): None})
    assert balance_partition(tree).leaves() == tree.leaves()


def test_t_junction_gets_one_split(rng):
    tree = t_junction()
    assert not is_graded(tree.leaves())
    graded = balance_partition(tree)
    assert is_graded(graded.leaves())
    assert graded.n_leaves == tree.n_leaves + 1
    left = Region.root(2).children(0)[0]
    assert set(graded.leaves()) - set(tree.leaves()) == set(left.children(1))
    u = rng.random((10_000, 2))
    assert np.array_equal(pc_eval_unit(graded, u), pc_eval_unit(tree, u))


def test_grading_random_trees(rng):
    for seed in range(5):
        tree = sample_prior(seed=seed, depth_cap=8, p=3)
        graded = balance_partition(tree)
        assert is_graded(graded.leaves())
        u = rng.random((2000, 3))
        assert np.array_equal(pc_eval_unit(graded, u), pc_eval_unit(tree, u))


def test_grading_depth_cap():
    root = Region.root(2)
    left, right = root.children(0)
    splits = {root: 0, right: 1}
    r = right
    for _ in range(2):
        r = r.children(1)[0]
        splits[r] = 1
    tree = tree_from(2, splits)
    with pytest.raises(DepthCapError, match="larger depth cap"):
        balance_partition(tree, depth_cap=1)
    assert is_graded(balance_partition(tree, depth_cap=3).leaves())


# -- triangulation -----------------------------------------------------------------


def test_unit_cube_fans():
    assert triangulate([Region.root(2)]).n_simplices == 4
    t1 = triangulate([Region.root(1)])
    assert t1.n_simplices == 2 and t1.n_vertices == 3
    assert triangulate([Region.root(3)]).n_simplices == 24


def test_hanging_vertex_counts():
    root = Region.root(2)
    left, right = root.children(0)
    leaves = [left, *right.children(1)]
    t = triangulate(leaves)
    per_leaf = np.bincount(t.simplex_leaf)
    # coarse leaf sees five boundary edges, the two squares four each
    assert sorted(per_leaf.tolist()) == [4, 4, 5]
    assert per_leaf[t.leaves.index(left)] == 5
    assert t.n_vertices == 11


def test_figure_style_partition():
    graded = balance_partition(t_junction())
    t = triangulate(graded.leaves())
    per_leaf = dict(zip(t.leaves, np.bincount(t.simplex_leaf)))
    root = Region.root(2)
    left, right = root.children(0)
    lo, hi = right.children(1)
    assert per_leaf[lo.children(1)[0]] == 4
    assert per_leaf[lo.children(1)[1]] == 4
    assert per_leaf[hi] == 4
    # hanging vertex at (0.5, 0.25) on the right edge of the lower-left square
    assert per_leaf[left.children(1)[0]] == 5
    assert per_leaf[left.children(1)[1]] == 4
    np.testing.assert_allclose(
        np.bincount(t.simplex_leaf, weights=t.volumes), [r.volume() for r in t.leaves]
    )


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_random_partitions_conform(p):
    for seed in range(3):
        tree = balance_partition(sample_prior(seed=seed, depth_cap=[12, 8, 5, 4][p - 1], p=p))
        t = triangulate(tree.leaves())
        assert t.volumes.sum() == pytest.approx(1.0)
        assert t.neighbours.shape == t.simplices.shape


def test_audit_catches_broken_mesh():
    t = triangulate([Region.root(2)])
    t.simplices = t.simplices[:3]
    t.simplex_leaf = t.simplex_leaf[:3]
    t.volumes = t.volumes[:3]
    with pytest.raises(IntegrityError):
        audit_triangulation(t)


# -- assembly --------------------------------------------------------------------------


def test_integral_row_1d():
    t = triangulate([Region.root(1)])
    qp = assemble_qp(t, np.array([1.0]), 1e-3)
    order = np.argsort(t.vertices[:, 0])
    np.testing.assert_allclose(qp.a[order], [0.25, 0.5, 0.25])


def test_assembled_matrix_is_psd():
    tree = balance_partition(sample_prior(seed=3, depth_cap=6, p=2))
    t = triangulate(tree.leaves())
    dens = np.exp([tree.nodes[r].logdens for r in tree.leaves()])
    qp = assemble_qp(t, dens, 1e-2)
    P = qp.P.toarray()
    assert np.abs(P - P.T).max() == 0.0
    assert np.linalg.eigvalsh(P).min() >= -1e-10


def test_exact_match_has_zero_fidelity():
    t = triangulate([Region.root(2)])
    qp = assemble_qp(t, np.array([1.0]), 0.0)
    c = np.ones(t.n_vertices)
    assert qp.fidelity_value(c) == pytest.approx(0.0, abs=1e-14)
    assert qp.objective(c) == pytest.approx(0.0, abs=1e-14)
    assert qp.smoothness_value(c) == pytest.approx(t.n_simplices)
    with pytest.raises(ConfigError):
        assemble_qp(t, np.array([1.0]), -1.0)


# -- quadratic program -------------------------------------------------------------


def random_qp(rng, n):
    k = int(rng.integers(1, n + 1))
    B = rng.normal(size=(k, n))
    return B.T @ B, rng.normal(size=n) * 2, rng.random(n) + 0.1


def test_matches_brute_force(rng):
    for _ in range(60):
        n = int(rng.integers(1, 7))
        P, r, a = random_qp(rng, n)
        res = solve_qp(P, r, a)
        _, best = brute_force_qp(P, r, a)
        assert res.objective == pytest.approx(best, abs=1e-6)
        assert res.c.min() >= 0 and a @ res.c == pytest.approx(1.0, abs=1e-10)


def test_interior_optimum_closed_form():
    n = 5
    a = np.arange(1, n + 1, dtype=float)
    want = np.linspace(1, 2, n)
    want /= a @ want
    # stationarity of c'c + r'c with multiplier 1 on a'c = 1
    r = a - 2 * want
    res = solve_qp(np.eye(n), r, a)
    np.testing.assert_allclose(res.c, want, atol=1e-10)


def test_primal_dual_active_set_agrees(rng):
    for _ in range(20):
        P, r, a = random_qp(rng, 8)
        P = P + 0.1 * np.eye(8)
        H = sp.csc_matrix(P + P.T)
        c = primal_dual_active_set(H, r, a, np.zeros(8, bool))
        if c is not None:
            ref = solve_qp(P, r, a)
            assert kkt_residual(P, r, a, c) <= 1e-8
            np.testing.assert_allclose(c, ref.c, atol=1e-7)


def test_solver_is_deterministic(rng):
    P, r, a = random_qp(rng, 6)
    assert np.array_equal(solve_qp(P, r, a).c, solve_qp(P, r, a).c)


# -- fitted densities ---------------------------------------------------------------


def test_uniform_tree_gives_constant_one():
    fee = fee_fit(build_tree(2, {Region.root(2): None}))
    np.testing.assert_allclose(fee.coeffs, 1.0, atol=1e-6)
    assert fee.total_mass() == pytest.approx(1.0, abs=1e-6)


def test_huge_lambda_flattens():
    fee = fee_fit(build_tree(2, {Region.root(2): None}), lam=1e9)
    np.testing.assert_allclose(fee.coeffs, 1.0, atol=1e-6)
    fee = fee_fit(t_junction(), lam=1e9)
    assert np.ptp(fee.coeffs) < 1e-3


@pytest.fixture(scope="module")
def example_tree():
    ref = reference("ex3")
    s = ingest(ref.sample(1, 500), bbox=ref.bbox)
    return llopt_fit(s, h=2)


def test_fit_properties(example_tree, rng):
    fee = fee_fit(example_tree)
    assert fee.total_mass() == pytest.approx(1.0, abs=1e-6)
    assert check_mass(fee) == pytest.approx(1.0, abs=1e-6)
    assert np.all(fee.coeffs >= 0)
    assert fee.meta["objective"] <= fee.meta["initial_objective"] + 1e-12
    assert fee.meta["kkt_residual"] <= 1e-8
    v = fee.tri.vertices
    np.testing.assert_allclose(fee_eval_unit(fee, v), fee.coeffs, atol=1e-12)
    cent = v[fee.tri.simplices].mean(axis=1)
    np.testing.assert_allclose(fee_eval_unit(fee, cent), fee.coeffs[fee.tri.simplices].mean(axis=1), rtol=1e-12)
    assert fee_eval_unit(fee, np.array([[1.2, 0.5]]))[0] == 0.0


def test_continuity_across_faces(example_tree, rng):
    fee = fee_fit(example_tree)
    tri = fee.tri
    s_ids, drops = np.nonzero(tri.neighbours >= 0)
    pick = rng.integers(0, s_ids.size, size=10_000)
    worst = 0.0
    for s, k in zip(s_ids[pick], drops[pick]):
        t = tri.neighbours[s, k]
        face = np.delete(tri.simplices[s], k)
        w = rng.dirichlet(np.ones(tri.p))
        x = w @ tri.vertices[face]
        vals = []
        for simplex in (s, t):
            b = np.append(x, 1.0) @ fee._inv[simplex]
            vals.append(b @ fee.coeffs[tri.simplices[simplex]])
        worst = max(worst, abs(vals[0] - vals[1]) / max(abs(vals[0]), 1e-12))
    assert worst <= 1e-9


def test_smoothness_monotone_in_lambda(example_tree):
    values = [fee_fit(example_tree, lam=lam).meta["smoothness"] for lam in (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(values, values[1:]))
    assert fee_fit(example_tree, lam=0.0).meta["smoothness"] >= values[0] * (1 - 1e-9)


def test_sampling_matches_simplex_masses(example_tree):
    fee = fee_fit(example_tree)
    m = 100_000
    x = fee.sample(8, m)
    simplex, inside = locate(fee, fee.transform.forward(x))
    assert inside.all()
    counts = np.bincount(simplex, minlength=fee.tri.n_simplices)
    mass = fee.simplex_masses()
    sd = np.sqrt(m * mass * (1 - mass))
    assert np.all(np.abs(counts - m * mass) <= 3 * sd + 3)


def test_save_load_round_trip(example_tree, tmp_path, rng):
    fee = fee_fit(example_tree)
    path = tmp_path / "fee.json"
    fee.save(path)
    back = FeeDensity.load(path)
    x = fee.transform.inverse(rng.random((10_000, 2)))
    assert np.array_equal(back(x), fee(x))
    path.write_text('{"type": "fee", "p": 2}')
    with pytest.raises(DataError):
        FeeDensity.load(path)


def test_one_dimensional_fit():
    s = from_unit(np.random.default_rng(0).beta(2, 5, size=(300, 1)))
    fee = fee_fit(llopt_fit(s, h=2))
    assert fee.total_mass() == pytest.approx(1.0, abs=1e-6)
    x = fee.sample(1, 2000)
    assert x.shape == (2000, 1) and np.all((x >= 0) & (x <= 1))
