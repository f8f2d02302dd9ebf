import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsi_benchkit.errors import EnumerationTooLarge, ExtractorSetMismatch
from wsi_benchkit.nds import (
    cross_config_nds,
    downstream_model_nds,
    nds_enumerate,
    nds_exact,
    task_average,
)
from wsi_benchkit.scores import ScoreGrid


def grid_from(matrix, extractors=None, task="t1", model="attmil", mag="low"):
    matrix = np.asarray(matrix, dtype=np.float64)
    f, s = matrix.shape
    extractors = extractors or tuple(f"e{i}" for i in range(f))
    return ScoreGrid(task, model, "none", mag, tuple(extractors),
                     tuple(range(1, s + 1)), matrix)


def random_grid(rng, f=None, s=None):
    f = f or int(rng.integers(1, 7))
    s = s or int(rng.integers(1, 6))
    return grid_from(rng.random((f, s)))


HAND_GRID = grid_from([[0.8, 0.6], [0.7, 0.5]])
# all 4 assignments by hand: gaps row0 {0, 0, 0.1, 0}, row1 {0.1, 0.3, 0, 0.1}
HAND_MEANS = (0.025, 0.125)
HAND_STDS = (np.std([0.0, 0.0, 0.1, 0.0]), np.std([0.1, 0.3, 0.0, 0.1]))


def test_hand_grid_enumerated():
    res = nds_enumerate(HAND_GRID)
    assert res.trial_count == 4
    assert abs(res.means[0] - HAND_MEANS[0]) <= 1e-15
    assert abs(res.means[1] - HAND_MEANS[1]) <= 1e-15
    assert np.allclose(res.stds, HAND_STDS, atol=1e-12)


def test_hand_grid_exact():
    res = nds_exact(HAND_GRID)
    assert abs(res.means[0] - HAND_MEANS[0]) <= 1e-15
    assert abs(res.means[1] - HAND_MEANS[1]) <= 1e-15
    assert np.allclose(res.stds, HAND_STDS, atol=1e-12)


def test_single_row_grid_is_zero():
    res = nds_enumerate(grid_from([[0.3, 0.9, 0.5]]))
    assert res.means[0] == 0.0 and res.stds[0] == 0.0
    res = nds_exact(grid_from([[0.3, 0.9, 0.5]]))
    assert res.means[0] == 0.0 and res.stds[0] == 0.0


def test_dominant_row_exact_zero():
    grid = grid_from([[0.9, 0.9], [0.7, 0.7]])
    for res in (nds_enumerate(grid), nds_exact(grid)):
        assert res.means[0] == 0.0 and res.stds[0] == 0.0
        assert abs(res.means[1] - 0.2) < 1e-12
        assert res.stds[1] == pytest.approx(0.0, abs=1e-12)


def test_enumeration_cap():
    grid = grid_from(np.random.default_rng(0).random((10, 5)))
    with pytest.raises(EnumerationTooLarge):
        nds_enumerate(grid, cap=1000)


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_exact_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    grid = random_grid(rng)
    res_enum = nds_enumerate(grid)
    res_exact = nds_exact(grid)
    assert np.max(np.abs(res_enum.means - res_exact.means)) <= 1e-10
    assert np.max(np.abs(res_enum.stds - res_exact.stds)) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_exact_handles_ties(seed):
    rng = np.random.default_rng(seed)
    f, s = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    values = rng.choice(np.linspace(0.2, 0.8, 4), size=(f, s))
    grid = grid_from(values)
    res_enum = nds_enumerate(grid)
    res_exact = nds_exact(grid)
    assert np.max(np.abs(res_enum.means - res_exact.means)) <= 1e-10
    assert np.max(np.abs(res_enum.stds - res_exact.stds)) <= 1e-10


def test_shift_invariance():
    rng = np.random.default_rng(3)
    base = rng.random((4, 3)) * 0.5
    res = nds_exact(grid_from(base))
    shifted = nds_exact(grid_from(base + 0.3))
    assert np.max(np.abs(res.means - shifted.means)) <= 1e-12
    assert np.max(np.abs(res.stds - shifted.stds)) <= 1e-12


def test_seed_column_permutation_invariance():
    rng = np.random.default_rng(4)
    base = rng.random((3, 5))
    res = nds_exact(grid_from(base))
    permuted = base.copy()
    for row in permuted:
        rng.shuffle(row)
    res_p = nds_exact(grid_from(permuted))
    assert np.max(np.abs(res.means - res_p.means)) <= 1e-12
    assert np.max(np.abs(res.stds - res_p.stds)) <= 1e-12


def test_non_negative_means():
    rng = np.random.default_rng(5)
    for _ in range(20):
        res = nds_exact(random_grid(rng))
        assert np.all(res.means >= 0.0)
        assert np.all(res.stds >= 0.0)


def test_task_average_identical_tasks():
    res = nds_exact(HAND_GRID)
    avg = task_average([res] * 9)
    for (ext, m, pooled, across), (ext2, m2, s2) in zip(avg.per_extractor, res.per_extractor):
        assert ext == ext2
        assert abs(m - m2) < 1e-15
        assert abs(pooled - s2) < 1e-15
        assert across == pytest.approx(0.0, abs=1e-15)


def test_task_average_arithmetic():
    from wsi_benchkit.nds import NdsResult
    r1 = NdsResult(("t1", "attmil"), (("e1", 0.02, 0.03),), 25)
    r2 = NdsResult(("t2", "attmil"), (("e1", 0.04, 0.05),), 25)
    avg = task_average([r1, r2])
    name, mean, pooled, across = avg.per_extractor[0]
    assert mean == pytest.approx(0.03)
    assert pooled == pytest.approx(np.sqrt((0.0009 + 0.0025) / 2))
    assert across == pytest.approx(0.01)


def test_task_average_zero_stds():
    from wsi_benchkit.nds import NdsResult
    r1 = NdsResult(("t1", "attmil"), (("e1", 0.0, 0.0),), 25)
    r2 = NdsResult(("t2", "attmil"), (("e1", 0.1, 0.0),), 25)
    avg = task_average([r1, r2])
    assert avg.per_extractor[0][1] == pytest.approx(0.05)
    assert avg.per_extractor[0][2] == 0.0


def test_task_average_extractor_mismatch():
    from wsi_benchkit.nds import NdsResult
    r1 = NdsResult(("t1", "attmil"), (("e1", 0.0, 0.0),), 25)
    r2 = NdsResult(("t2", "attmil"), (("eX", 0.1, 0.0),), 25)
    with pytest.raises(ExtractorSetMismatch):
        task_average([r1, r2])


def test_cross_config_self_merge_symmetric():
    rng = np.random.default_rng(6)
    base = rng.random((3, 4))
    low = grid_from(base, mag="low")
    high = grid_from(base, mag="high")
    res = cross_config_nds([low, high])
    means = res.means
    stds = res.stds
    # identical rows relabelled must score identically
    assert np.allclose(means[:3], means[3:], atol=1e-12)
    assert np.allclose(stds[:3], stds[3:], atol=1e-12)
    assert res.extractors[0] == "e0@low" and res.extractors[3] == "e0@high"


def test_cross_config_matches_enumeration_slice():
    rng = np.random.default_rng(7)
    low = grid_from(rng.random((3, 4)), mag="low")
    high = grid_from(rng.random((3, 4)), mag="high")
    res = cross_config_nds([low, high])
    merged = grid_from(np.vstack([low.auroc, high.auroc]),
                       extractors=res.extractors)
    ref = nds_enumerate(merged)
    assert np.max(np.abs(res.means - ref.means)) <= 1e-10
    assert np.max(np.abs(res.stds - ref.stds)) <= 1e-10


def test_cross_config_dominant_row():
    low = grid_from([[0.95, 0.95], [0.5, 0.5]], mag="low")
    high = grid_from([[0.4, 0.4], [0.3, 0.3]], mag="high")
    res = cross_config_nds([low, high])
    assert res.means[0] == 0.0 and res.stds[0] == 0.0


def test_downstream_model_identical_scores():
    # identical constant scores: every draw ties the max, all gaps vanish.
    rows = np.tile(np.array([[0.7, 0.7, 0.7]]), (2, 1))
    grids = [grid_from(rows, model=m) for m in ("mean_pool", "attmil", "transformer")]
    res = downstream_model_nds(grids, "e0")
    assert np.all(res.means == 0.0) and np.all(res.stds == 0.0)
    assert res.extractors == ("mean_pool", "attmil", "transformer")


def test_downstream_model_identical_rows_score_equally():
    # same per-seed scores for every model: gaps are equal across models but
    # nonzero, because each model draws its seed independently.
    rows = np.tile(np.array([[0.6, 0.7, 0.8]]), (2, 1))
    grids = [grid_from(rows, model=m) for m in ("mean_pool", "attmil", "transformer")]
    res = downstream_model_nds(grids, "e0")
    assert res.means[0] == pytest.approx(res.means[1]) == pytest.approx(res.means[2])
    assert res.means[0] > 0.0


def test_downstream_model_matches_enumeration():
    rng = np.random.default_rng(8)
    grids = [grid_from(rng.random((2, 5)), model=m)
             for m in ("mean_pool", "attmil", "transformer")]
    res = downstream_model_nds(grids, "e1")
    merged = grid_from(np.stack([g.auroc[1] for g in grids]),
                       extractors=("mean_pool", "attmil", "transformer"))
    ref = nds_enumerate(merged)
    assert res.trial_count == 125
    assert np.max(np.abs(res.means - ref.means)) <= 1e-10
    assert np.max(np.abs(res.stds - ref.stds)) <= 1e-10


def test_downstream_model_dominant():
    grids = [grid_from(np.full((1, 3), v), extractors=("e0",), model=m)
             for m, v in (("mean_pool", 0.6), ("attmil", 0.9), ("transformer", 0.7))]
    res = downstream_model_nds(grids, "e0")
    by_name = dict((n, (m, s)) for n, m, s in res.per_extractor)
    assert by_name["attmil"] == (0.0, 0.0)
    assert by_name["mean_pool"][0] == pytest.approx(0.3)


def test_welford_chunking_matches_single_stream():
    rng = np.random.default_rng(9)
    grid = grid_from(rng.random((4, 4)))
    ref = nds_enumerate(grid, chunk=256)
    for chunk in (1, 7, 64, 256):
        res = nds_enumerate(grid, chunk=chunk)
        rel_mean = np.abs(res.means - ref.means) / np.maximum(np.abs(ref.means), 1e-300)
        rel_std = np.abs(res.stds - ref.stds) / np.maximum(np.abs(ref.stds), 1e-300)
        assert np.max(rel_mean) <= 1e-9
        assert np.max(rel_std) <= 1e-9
