import math

import numpy as np
import pytest

from effdim.entropy import (
    BallCover,
    DimTooLarge,
    EllipsoidAxes,
    TruncationInsufficient,
    build_cover,
    eps_entropy_bound,
    infinite_ellipsoid_stats,
    kb_mb,
    m_eps,
    sample_ellipsoid,
    spectral_entropy_bound,
    unit_entropy_bound,
    verify_cover,
)
from effdim.rng import RngStream
from effdim.spectrum import make_spectrum


def test_kb_mb_hand_values():
    e = EllipsoidAxes(np.array([4.0, 2.0, 0.5]))
    kb, mb = kb_mb(e)
    assert mb == 2
    assert kb == pytest.approx(math.log(8.0), abs=1e-14)
    kb0, mb0 = kb_mb(EllipsoidAxes(np.array([0.9, 0.5])))
    assert (kb0, mb0) == (0.0, 0)


def test_unit_entropy_bound_hand_value():
    e = EllipsoidAxes(np.array([4.0, 2.0, 0.5]))
    bound = unit_entropy_bound(e, c=2.0)
    expected_corr = math.log(3) + math.sqrt(math.log(4) * 2 * math.log(3))
    assert bound.kb == pytest.approx(math.log(8.0), abs=1e-14)
    assert bound.correction == pytest.approx(expected_corr, abs=1e-12)
    assert bound.total == pytest.approx(math.log(8.0) + 2.0 * expected_corr, abs=1e-10)


def test_unit_entropy_bound_degenerate_dim_one():
    e = EllipsoidAxes(np.array([5.0]))
    bound = unit_entropy_bound(e)
    assert bound.correction == 0.0
    assert bound.total == pytest.approx(math.log(5.0))


def test_m_eps_counts():
    s = make_spectrum("custom", values=[2.0, 1.0, 0.5, 0.25])
    assert m_eps(s, 0.6) == 1
    assert m_eps(s, 0.4) == 2
    assert m_eps(s, 0.1) == 4


def test_eps_entropy_bound_monotone_and_meps_inequality():
    gen = RngStream(31).generator()
    eps_grid = np.exp(np.linspace(math.log(0.98), math.log(0.01), 50))
    for _ in range(30):
        d = int(gen.integers(2, 40))
        sig = np.sort(gen.uniform(0.01, 10.0, d))[::-1]
        s = make_spectrum("custom", values=sig)
        for r in (1, 2, 3):
            vals = [eps_entropy_bound(s, eps, r=r) for eps in eps_grid]
            assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))


def test_eps_entropy_bound_warns_at_dim_one():
    s = make_spectrum("isotropic", d=1, sigma1=1.0)
    with pytest.warns(UserWarning):
        val = eps_entropy_bound(s, 0.5)
    assert val >= math.log(2.0)


def test_spectral_entropy_bound():
    assert spectral_entropy_bound(3.0, 0.1) == pytest.approx(3.0 * math.log(10.0) ** 2)
    with pytest.raises(ValueError):
        spectral_entropy_bound(0.0, 0.1)


def test_infinite_ellipsoid_examples():
    # b_i = 2^{-i}: no axis above 1, only b_1 = 1/2 reaches the 1/2 cutoff
    kb, mb, _ = infinite_ellipsoid_stats(lambda i: 2.0 ** (-i), truncation=64,
                                         envelope=(1.0, 1.0))
    assert kb == 0.0
    assert mb == 1
    # b_i = i^{-2}: sum_{i>1} i^{-4} < 1/2 already
    _, _, Mb = infinite_ellipsoid_stats(lambda i: float(i) ** -2, truncation=64,
                                        envelope=(1.0, 2.0))
    assert Mb == 1
    with pytest.raises(TruncationInsufficient):
        infinite_ellipsoid_stats(lambda i: 1.0, truncation=32,
                                 envelope=(1.0, 0.6))


def test_build_cover_validity_and_negative_control():
    axes = EllipsoidAxes(np.array([4.0, 2.0, 0.5]))
    root = RngStream(17)
    cover = build_cover(axes, 1.0, root.child(0))
    report = verify_cover(cover, axes, 20_000, root.child(1))
    assert report["violations"] == 0
    assert report["max_dist"] <= 1.0
    # negative control: strip the cap of centers with the largest first
    # coordinate (uniform deletion cannot damage a grid cover with this
    # much slack, so the control removes a contiguous extreme region)
    keep = np.sort(np.argsort(cover.centers[:, 0])[: int(cover.size * 0.9)])
    damaged = BallCover(1.0, cover.centers[keep], cover.grid_spacing)
    bad = verify_cover(damaged, axes, 20_000, root.child(1))
    assert bad["violations"] > 0


def test_build_cover_dim_cap():
    with pytest.raises(DimTooLarge):
        build_cover(EllipsoidAxes(np.ones(6)), 0.5, RngStream(0))


def test_sample_ellipsoid_inside():
    axes = EllipsoidAxes(np.array([3.0, 1.0, 0.2]))
    pts = sample_ellipsoid(axes, 5000, RngStream(23))
    q = np.sum((pts / axes.b) ** 2, axis=1)
    assert np.all(q <= 1.0 + 1e-9)
    assert q.max() > 0.5  # actually fills the body, not just the middle
