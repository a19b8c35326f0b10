import numpy as np
import pytest

from phi4ml.lattice import (CouplingSet, DegenerateLatticeError,
                            StandardCouplings, TargetActionSpec, action_S,
                            action_gradient_theta, action_target, action_terms,
                            build_square_lattice, clique_log_potentials,
                            couplings_from_target_g, local_action_delta,
                            map_standard_couplings, target_action_from_terms)


def test_link_counts_periodic():
    g = build_square_lattice(4)
    assert g.volume == 16
    assert g.n_links == 32          # 2V nearest-neighbor links in 2D
    assert len(g.nnn_links) == 32   # 2V diagonal links
    # every site has degree 4 in the nearest-neighbor graph
    degree = np.bincount(g.links.ravel(), minlength=g.volume)
    assert np.all(degree == 4)


def test_l2_wraparound_links_count_twice():
    g = build_square_lattice(2)
    assert g.n_links == 8
    # each unordered site pair appears twice (direct link and wraparound)
    pairs = [tuple(sorted(l)) for l in g.links.tolist()]
    assert all(pairs.count(p) == 2 for p in set(pairs))


def test_open_boundaries_drop_wraparound():
    g = build_square_lattice(3, periodic=False)
    assert g.n_links == 2 * 3 * 2   # 2 L (L-1)
    assert np.all(g.links[:, 0] != g.links[:, 1])


def test_l1_periodic_is_degenerate():
    with pytest.raises(DegenerateLatticeError):
        build_square_lattice(1)
    g = build_square_lattice(1, periodic=False)
    assert g.volume == 1 and g.n_links == 0


def test_link_enumeration_deterministic():
    a = build_square_lattice(5)
    b = build_square_lattice(5)
    assert np.array_equal(a.links, b.links)
    assert np.array_equal(a.nnn_links, b.nnn_links)


def test_action_terms_on_unit_configuration():
    g = build_square_lattice(4)
    t = action_terms(np.ones(16), g)
    assert np.array_equal(t, [32.0, 16.0, 16.0, 32.0, 16.0])


def test_action_value_homogeneous_hand_sum():
    g = build_square_lattice(4)
    c = CouplingSet.homogeneous(g, w=1.0, a=1.5, b=0.25, r=0.1)
    phi = np.ones(16)
    # S = -w*32 + a*16 + b*16 + r*16
    assert action_S(phi, c, g) == pytest.approx(-32 + 24 + 4 + 1.6, abs=1e-12)


def test_action_batched_matches_loop():
    g = build_square_lattice(3)
    rng = np.random.default_rng(0)
    c = CouplingSet(w=rng.normal(size=g.n_links), a=rng.uniform(0.5, 1, 9),
                    b=rng.uniform(0.1, 0.5, 9), r=rng.normal(size=9))
    batch = rng.normal(size=(11, 9))
    vec = action_S(batch, c, g)
    for k in range(11):
        assert vec[k] == pytest.approx(action_S(batch[k], c, g), rel=1e-12)


def test_standard_coupling_map():
    g = build_square_lattice(4)
    c = map_standard_couplings(StandardCouplings(kappa=0.5, mu_sq=-0.95, lam=0.7), g)
    w, a, b, r = c.homogenized()
    assert w == pytest.approx(0.5)
    assert a == pytest.approx((-0.95 + 2.0) / 2)
    assert b == pytest.approx(0.175)
    assert r == 0.0
    with pytest.raises(ValueError):
        StandardCouplings(kappa=0.5, mu_sq=0.0, lam=-1.0)


def test_target_sign_map_reproduces_target_action():
    g = build_square_lattice(4)
    c = couplings_from_target_g(-1.0, 1.52425, 0.175, g)
    target = TargetActionSpec((-1.0, 1.52425, 0.175, 0.0, 0.0), frozenset({1, 2, 3}))
    rng = np.random.default_rng(1)
    phi = rng.normal(size=(50, 16))
    assert np.allclose(action_S(phi, c, g), action_target(phi, target, g).real,
                       atol=1e-12)


def test_target_action_complex_term():
    g = build_square_lattice(2)
    target = TargetActionSpec((-1.0, 1.52425, 0.175, -1.0, 0.15))
    phi = np.ones(4)
    val = action_target(phi, target, g)
    t = action_terms(phi, g)
    expected = -t[0] + 1.52425 * t[1] + 0.175 * t[2] - t[3] + 0.15j * t[4]
    assert val == pytest.approx(expected)
    assert target.is_complex
    assert not target.truncated({1, 2, 3}).is_complex
    assert np.array_equal(target.truncated({1, 2}).effective_g,
                          [-1.0, 1.52425, 0, 0, 0])


def test_target_action_from_cached_terms():
    g = build_square_lattice(3)
    target = TargetActionSpec((-1.0, 1.5, 0.2, -0.5, 0.1))
    rng = np.random.default_rng(2)
    phi = rng.normal(size=(20, 9))
    t = action_terms(phi, g)
    assert np.allclose(target_action_from_terms(t, target),
                       action_target(phi, target, g), atol=1e-12)


def test_coupling_vector_round_trip():
    g = build_square_lattice(3)
    rng = np.random.default_rng(3)
    c = CouplingSet(w=rng.normal(size=g.n_links), a=rng.uniform(0.5, 1, 9),
                    b=rng.uniform(0.1, 0.5, 9), r=rng.normal(size=9))
    back = CouplingSet.from_vector(c.as_vector(), g)
    assert np.array_equal(back.as_vector(), c.as_vector())
    with pytest.raises(ValueError):
        CouplingSet.from_vector(np.zeros(5), g)
    with pytest.raises(ValueError):
        CouplingSet(w=np.array([np.inf]), a=np.ones(1), b=np.ones(1), r=np.zeros(1))


def test_action_gradient_matches_finite_differences():
    g = build_square_lattice(2)
    rng = np.random.default_rng(4)
    c = CouplingSet(w=rng.normal(size=8), a=rng.uniform(0.5, 1, 4),
                    b=rng.uniform(0.1, 0.5, 4), r=rng.normal(size=4))
    phi = rng.normal(size=4)
    grad = action_gradient_theta(phi, g)
    vec = c.as_vector()
    eps = 1e-6
    for k in range(len(vec)):
        up, dn = vec.copy(), vec.copy()
        up[k] += eps
        dn[k] -= eps
        fd = (action_S(phi, CouplingSet.from_vector(up, g), g)
              - action_S(phi, CouplingSet.from_vector(dn, g), g)) / (2 * eps)
        assert grad[k] == pytest.approx(fd, abs=1e-6)


def test_local_action_delta_matches_full_recomputation():
    g = build_square_lattice(4)
    rng = np.random.default_rng(5)
    c = CouplingSet(w=rng.normal(size=32), a=rng.uniform(0.5, 1, 16),
                    b=rng.uniform(0.1, 0.5, 16), r=rng.normal(size=16))
    phi = rng.normal(size=16)
    for site in (0, 5, 15):
        new = float(rng.normal())
        changed = phi.copy()
        changed[site] = new
        assert local_action_delta(phi, site, new, c, g) == pytest.approx(
            action_S(changed, c, g) - action_S(phi, c, g), abs=1e-10)
    with pytest.raises(IndexError):
        local_action_delta(phi, 16, 0.0, c, g)


def test_clique_factorization_recovers_action():
    """Hammersley-Clifford: the per-link clique potentials multiply back to
    the Boltzmann weight, sum(log psi) = -S."""
    g = build_square_lattice(4)
    rng = np.random.default_rng(6)
    c = CouplingSet(w=rng.normal(size=32), a=rng.uniform(0.5, 1, 16),
                    b=rng.uniform(0.1, 0.5, 16), r=rng.normal(size=16))
    for _ in range(100):
        phi = rng.normal(size=16)
        assert clique_log_potentials(phi, c, g).sum() == pytest.approx(
            -action_S(phi, c, g), abs=1e-10)


def test_clique_factorization_requires_periodic_lattice():
    g = build_square_lattice(3, periodic=False)
    c = CouplingSet.homogeneous(g, w=0.1, a=1.0, b=0.1)
    with pytest.raises(ValueError):
        clique_log_potentials(np.zeros(9), c, g)
