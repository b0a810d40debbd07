import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpinn import deeponet as D
from dpinn import fem, oracles, spectral
from dpinn import mesh as M
from dpinn.nn import MLP


def numpy_mlp(params, x):
    h = x
    for k, (W, b) in enumerate(params):
        h = h @ np.asarray(W) + np.asarray(b)
        if k < len(params) - 1:
            h = np.tanh(h)
    return h


def formula(net, v1, v2):
    """Independent transcription of the wrapped distance."""
    T, Bn = net.trunk.params, net.branch.params
    dbar = lambda a, b: numpy_mlp(T, a) @ numpy_mlp(Bn, b)  # noqa: E731
    cos = v1 @ v2 / (np.linalg.norm(v1) * np.linalg.norm(v2))
    return net.out_scale * 0.5 * (1 - cos) * (dbar(v1, v2) + dbar(v2, v1))


@pytest.fixture(scope="module")
def sphere_basis(sphere):
    return spectral.laplace_beltrami_basis(sphere, 16)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_identities_random_parameters(seed):
    net = D.init_geodesic_net(8, hidden=(16, 16), latent=12, seed=seed, out_scale=1.7)
    r = np.random.default_rng(seed)
    v1, v2 = r.normal(size=(2, 5, 8))
    assert np.all(D.predict_distance(net, v1, v1) == 0.0)
    assert np.array_equal(D.predict_distance(net, v1, v2), D.predict_distance(net, v2, v1))


def test_matches_formula(rng):
    net = D.init_geodesic_net(6, hidden=(10, 10), latent=7, seed=3, out_scale=0.8)
    for _ in range(10):
        v1, v2 = rng.normal(size=(2, 6))
        assert abs(float(D.predict_distance(net, v1, v2)) - formula(net, v1, v2)) < 1e-12


def test_batched_matches_single(rng):
    net = D.init_geodesic_net(6, hidden=(10,), latent=5, seed=1)
    v1, v2 = rng.normal(size=(2, 4, 6))
    batch = D.predict_distance(net, v1, v2)
    for k in range(4):
        assert abs(float(D.predict_distance(net, v1[k], v2[k])) - batch[k]) < 1e-14


def test_rejects_bad_encodings():
    net = D.init_geodesic_net(4, hidden=(5,), latent=3)
    with pytest.raises(ValueError):
        D.predict_distance(net, np.zeros(4), np.ones(4))
    with pytest.raises(ValueError):
        D.predict_distance(net, np.ones(3), np.ones(3))


def test_width_mismatch():
    a = MLP((4, 3), [(np.zeros((4, 3)), np.zeros(3))])
    b = MLP((4, 2), [(np.zeros((4, 2)), np.zeros(2))])
    with pytest.raises(ValueError):
        D.GeodesicNet(a, b)


def test_paper_architecture_shapes():
    net = D.init_geodesic_net(50)
    assert net.trunk.layer_sizes == (50,) + (200,) * 10 + (200,)
    assert net.latent_width == 200


def test_gradient_zero_for_constant_net(sphere, sphere_basis):
    net = D.init_geodesic_net(16, hidden=(8,), latent=4, seed=0)
    zero = [(W * 0, b * 0) for W, b in net.trunk.params]
    net = net.with_params((zero, zero))
    g = D.surface_gradient(net, sphere, sphere_basis, 10, sphere_basis.vectors[100])
    assert np.abs(g).max() == 0.0


def test_gradient_tangent(sphere, sphere_basis, rng):
    net = D.init_geodesic_net(16, hidden=(20, 20), latent=8, seed=2)
    grads = spectral.eigenfunction_gradients(sphere_basis, sphere)
    for t in rng.choice(sphere.n_triangles, 25, replace=False):
        g = D.surface_gradient(net, sphere, sphere_basis, int(t), sphere_basis.vectors[5], grads=grads)
        assert abs(g @ sphere.normals[t]) <= 1e-10 * np.linalg.norm(g)


def test_gradient_chain_rule_finite_differences(sphere, sphere_basis, rng):
    # moving inside a triangle changes the encoding linearly, so a directional difference is exact up to O(s^2)
    net = D.init_geodesic_net(16, hidden=(20,), latent=8, seed=5)
    B = fem.element_gradients(sphere)
    v2 = sphere_basis.vectors[42]
    for t in rng.choice(sphere.n_triangles, 10, replace=False):
        t = int(t)
        g = D.surface_gradient(net, sphere, sphere_basis, t, v2)
        w = np.full(3, 1 / 3)
        P = sphere.vertices[sphere.triangles[t]]
        delta = rng.normal(size=3)
        delta -= (delta @ sphere.normals[t]) * sphere.normals[t]
        dw = B[t].T @ delta
        s = 1e-6
        Vt = sphere_basis.vectors[sphere.triangles[t]]
        f = lambda ww: float(D.predict_distance(net, ww @ Vt, v2))  # noqa: E731
        fd = (f(w + s * dw) - f(w - s * dw)) / (2 * s)
        assert abs(fd - g @ delta) < 1e-6 * max(1.0, abs(fd))
        assert np.allclose((w + s * dw) @ P - w @ P, s * delta, atol=1e-14)


def test_surface_gradient_bad_triangle(sphere, sphere_basis):
    net = D.init_geodesic_net(16, hidden=(4,), latent=2)
    with pytest.raises(IndexError):
        D.surface_gradient(net, sphere, sphere_basis, sphere.n_triangles, sphere_basis.vectors[0])


def test_config_validation():
    with pytest.raises(ValueError):
        D.GeodesicConfig(iterations=0)
    c = D.GeodesicConfig()
    assert c.hidden == (200,) * 10 and c.iterations == 50_000 and c.decay_rate == 0.9


def test_train_requires_pairs(sphere, sphere_basis):
    with pytest.raises(ValueError):
        D.train_geodesic(D.GeodesicConfig(n_modes=16, iterations=5), sphere, sphere_basis, [])


def test_train_deterministic_and_recorded(sphere, sphere_basis):
    f = lambda i, j: oracles.great_circle_distance(sphere.vertices[i], sphere.vertices[j])  # noqa: E731
    pairs = oracles.sample_pairs(sphere, 300, 0, f)
    cfg = D.GeodesicConfig(n_modes=16, hidden=(16,), latent=8, iterations=60, batch=20)
    a = D.train_geodesic(cfg, sphere, sphere_basis, pairs, chunk=25)
    b = D.train_geodesic(cfg, sphere, sphere_basis, oracles.pairs_to_arrays(pairs), chunk=25)
    assert np.array_equal(a.history["total"], b.history["total"])
    np.testing.assert_allclose(a.history["total"], a.history["data"] + a.history["pde"], rtol=1e-13)
    assert a.history["total"][-1] < a.history["total"][0]


def test_normalized_mae():
    assert D.normalized_mae([1.0, 2.0], [1.5, 2.5], 5.0) == 0.1


# ---------------------------------------------------------------- surface walking


@pytest.fixture(scope="module")
def flat():
    return M.generate_square(0.1)[0]


def test_walker_flat_is_exact(flat, rng):
    walker = D._Walker(flat)
    for _ in range(20):
        t = int(rng.integers(flat.n_triangles))
        w = rng.dirichlet(np.ones(3))
        p0 = walker.position(t, w)
        target = rng.uniform(-0.9, 0.9, size=2)
        t2, w2 = walker.move(t, w, target - p0)
        np.testing.assert_allclose(walker.position(t2, w2), target, atol=1e-12)
        assert np.all(w2 >= 0) and abs(w2.sum() - 1) < 1e-12


def test_walker_slides_on_boundary(flat):
    walker = D._Walker(flat)
    t = int(flat.vertex_triangles[int(np.argmin(np.linalg.norm(flat.vertices - [0.0, 0.0], axis=1)))][0])
    w = np.full(3, 1 / 3)
    p0 = walker.position(t, w)
    t2, w2 = walker.move(t, w, np.array([3.0, 0.2]))
    p = walker.position(t2, w2)
    assert abs(p[0] - 1.0) < 1e-12
    # the normal part is dropped at the wall while the tangential part is kept in full
    assert abs(p[1] - (p0[1] + 0.2)) < 1e-12


def test_walker_sphere_stays_on_surface(sphere, rng):
    walker = D._Walker(sphere)
    t, w = 0, np.full(3, 1 / 3)
    for _ in range(50):
        delta = rng.normal(size=3) * 0.05
        delta -= (delta @ sphere.normals[t]) * sphere.normals[t]
        t, w = walker.move(t, w, delta)
        assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-12
        r = np.linalg.norm(walker.position(t, w))
        assert 0.97 < r <= 1 + 1e-12


def test_walker_transfer_preserves_length(sphere):
    # a displacement crossing an edge keeps its length, so the walked distance equals |delta|
    walker = D._Walker(sphere)
    t = 3
    w = np.full(3, 1 / 3)
    n = sphere.normals[t]
    d = np.cross(n, [0.0, 0.0, 1.0])
    d = 0.3 * d / np.linalg.norm(d)
    steps = 30
    pos = [walker.position(t, w)]
    for _ in range(steps):
        nt = sphere.normals[t]
        dd = d - (d @ nt) * nt
        dd *= np.linalg.norm(d) / np.linalg.norm(dd)
        t, w = walker.move(t, w, dd / steps)
        pos.append(walker.position(t, w))
    walked = np.linalg.norm(np.diff(pos, axis=0), axis=1).sum()
    assert abs(walked - 0.3) < 0.01


def test_trace_same_point(sphere, sphere_basis):
    net = D.init_geodesic_net(16, hidden=(4,), latent=2)
    p = D.trace_geodesic(net, sphere, sphere_basis, 7, 7)
    assert len(p.points) == 1 and p.converged and p.length == 0.0


def test_trace_argument_checks(sphere, sphere_basis):
    net = D.init_geodesic_net(16, hidden=(4,), latent=2)
    with pytest.raises(IndexError):
        D.trace_geodesic(net, sphere, sphere_basis, 0, sphere.n_vertices)
    with pytest.raises(ValueError):
        D.trace_geodesic(net, sphere, sphere_basis, 0, 1, step=0.0)


@pytest.fixture(scope="module")
def flat_net(flat):
    basis = spectral.laplace_beltrami_basis(flat, 30)
    dist = lambda i, j: np.linalg.norm(flat.vertices[i] - flat.vertices[j], axis=-1)  # noqa: E731
    pairs = oracles.sample_pairs(flat, 4000, 0, dist)
    cfg = D.GeodesicConfig(n_modes=30, hidden=(64, 64, 64), latent=64, iterations=3000, batch=100, decay_rate=0.9, decay_steps=300)
    return basis, D.train_geodesic(cfg, flat, basis, pairs).net


@pytest.mark.slow
def test_flat_gradient_points_away_from_target(flat, flat_net):
    basis, net = flat_net
    x2 = int(np.argmin(np.linalg.norm(flat.vertices - [0.2, -0.1], axis=1)))
    far = np.linalg.norm(flat.centroids - flat.vertices[x2], axis=1) >= 3 * 0.1
    tris = np.flatnonzero(far)[::7]
    cos = []
    for t in tris:
        g = D.surface_gradient(net, flat, basis, int(t), basis.vectors[x2])
        e = flat.centroids[t] - flat.vertices[x2]
        cos.append(g @ e / (np.linalg.norm(g) * np.linalg.norm(e)))
    cos = np.array(cos)
    # the exact gradient of |x - x2| is the unit vector away from x2
    assert np.median(cos) > 0.98
    assert np.mean(cos > 0.9) > 0.8


@pytest.mark.slow
def test_flat_paths_near_straight(flat, flat_net):
    basis, net = flat_net
    inner = np.flatnonzero(np.abs(flat.vertices).max(axis=1) <= 0.7)
    r = np.random.default_rng(0)
    rel = []
    for _ in range(15):
        a, b = r.choice(inner, 2, replace=False)
        L = np.linalg.norm(flat.vertices[a] - flat.vertices[b])
        if L < 0.4:
            continue
        p = D.trace_geodesic(net, flat, basis, int(a), int(b))
        assert p.converged
        rel.append(abs(p.length - L) / L)
        # predicted distance decreases along the path up to one step of slack
        assert np.all(np.diff(p.predicted) <= 0.05 + 1e-12)
    assert np.median(rel) < 0.05
