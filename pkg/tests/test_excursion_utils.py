# tests/test_excursion_utils.py
import numpy as np
import pytest

from utils.excursion_utils import (
    ExcursionError,
    decode_excursion,
    direct_trajectory,
    encode_excursion,
    excursion_rows,
    harmonic_draw,
    path_digest,
    sample_excursion,
    sample_from_harmonic,
    trace,
    validate_excursion,
)
from utils.potential_utils import build_scene_tables, exit_distribution
from utils.rng_utils import ReplicaStreams, RngStream


def test_excursion_path_invariants(mini_cfg):
    exc = sample_excursion((0, 0, 0), mini_cfg, RngStream(1, 0, "paths"))
    validate_excursion(exc.path, mini_cfg)
    assert exc.length == exc.path.shape[0] - 1
    assert exc.end in mini_cfg.beVR
    assert exc.digest == path_digest(exc.path)
    assert exc.kmask & 1


def test_excursions_from_k2_stay_in_their_ball(mini_cfg):
    exc = sample_excursion((9, 0, 0), mini_cfg, RngStream(1, 0, "paths"))
    assert exc.start_ord == mini_cfg.K.index[(9, 0, 0)]
    assert np.all(np.abs(exc.path[:, 0] - 9) <= 5)


def test_lean_draw_matches_full_draw(mini_cfg):
    full = sample_excursion((0, 0, 0), mini_cfg, RngStream(5, 3, "paths"))
    lean = sample_excursion((0, 0, 0), mini_cfg, RngStream(5, 3, "paths"), lean=True)
    assert lean.path is None
    assert lean.key == full.key
    assert lean.kmask == full.kmask
    assert full.lean() == lean


def test_bad_start_raises(mini_cfg):
    with pytest.raises(ExcursionError, match="internal boundary"):
        sample_excursion((1, 0, 0), mini_cfg, RngStream(0, 0, "paths"))


def test_validate_rejects_broken_paths(mini_cfg):
    with pytest.raises(ExcursionError, match="no steps"):
        validate_excursion(np.zeros((1, 3), dtype=np.int64), mini_cfg)
    jump = np.array([[0, 0, 0], [2, 0, 0]])
    with pytest.raises(ExcursionError, match="nearest neighbours"):
        validate_excursion(jump, mini_cfg)
    short = np.array([[0, 0, 0], [1, 0, 0]])
    with pytest.raises(ExcursionError, match="does not end"):
        validate_excursion(short, mini_cfg)


def test_codec_restores_path(mini_cfg):
    exc = sample_excursion((0, 0, 0), mini_cfg, RngStream(2, 0, "paths"))
    back = decode_excursion(encode_excursion(exc, 3), mini_cfg)
    assert np.array_equal(back.path, exc.path)
    assert back.key == exc.key


def test_lean_excursion_cannot_be_encoded(mini_cfg):
    exc = sample_excursion((0, 0, 0), mini_cfg, RngStream(2, 0, "paths"), lean=True)
    with pytest.raises(ExcursionError, match="no path"):
        encode_excursion(exc, 3)


def test_trace_is_union_of_masks(mini_cfg):
    rng = RngStream(3, 0, "paths")
    excs = [sample_excursion(x, mini_cfg, rng, lean=True) for x in [(0, 0, 0), (9, 0, 0)]]
    tr = trace(excs, mini_cfg.K)
    assert tr.ordinals() == [0, 1]
    assert trace([], mini_cfg.K).is_empty()


def test_harmonic_draw_frequencies(pair_tables):
    rng = RngStream(7, 0, "direct")
    n = 20_000
    counts = np.bincount([harmonic_draw(pair_tables, rng) for _ in range(n)], minlength=len(pair_tables.cfg.K))
    hbar = pair_tables.eq.hbar
    se = np.sqrt(hbar * (1 - hbar) / n)
    assert np.all(np.abs(counts / n - hbar) <= 5 * se)


def test_direct_trajectory_mean_count(mini_tables):
    counts = np.array([
        len(direct_trajectory(mini_tables, ReplicaStreams(11, r), lean=True)) for r in range(3000)
    ])
    se = counts.std(ddof=1) / np.sqrt(counts.size)
    assert counts.min() >= 1
    assert abs(counts.mean() - mini_tables.mean_T_direct) <= 5 * se


def test_excursion_rows(mini_cfg):
    exc = sample_excursion((0, 0, 0), mini_cfg, RngStream(2, 0, "paths"))
    (row,) = excursion_rows([exc], label="ri")
    assert row["label"] == "ri"
    assert row["start"] == "0 0 0"
    assert len(row["path"].split(";")) == exc.length + 1


def test_sample_from_harmonic_returns_a_boundary_site(pair_tables):
    rng = RngStream(8, 0, "direct")
    points = {sample_from_harmonic(pair_tables, rng) for _ in range(200)}
    assert points <= set(pair_tables.cfg.bK.sites)
    assert len(points) == len(pair_tables.cfg.K)


def test_end_sites_follow_the_exit_law(mini_cfg):
    law = exit_distribution((0, 0, 0), mini_cfg)
    rng = RngStream(12, 0, "paths")
    n = 6000
    ends = [sample_excursion((0, 0, 0), mini_cfg, rng, lean=True).end_ord for _ in range(n)]
    freq = np.bincount(ends, minlength=len(mini_cfg.beVR)) / n
    assert np.all(np.abs(freq - law) <= 5 * np.sqrt(law * (1 - law) / n) + 1e-12)


def test_symmetric_singletons_split_evenly(mini_tables):
    assert mini_tables.eq.hbar == pytest.approx([0.5, 0.5])


def test_forced_escape_gives_single_excursions(mini_cfg):
    tables = build_scene_tables(mini_cfg, force_escape=True)
    assert all(len(direct_trajectory(tables, ReplicaStreams(13, r), lean=True)) == 1 for r in range(50))
