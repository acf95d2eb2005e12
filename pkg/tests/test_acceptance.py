"""Acceptance suite: one test per release criterion, at pinned tolerances.

Each test prints a single PASS/FAIL line (visible with `pytest -v -s` or in
the captured output of failures). Criteria that involve the full 80,000-voxel
benchmark scene share session fixtures; wall-clock budgets are asserted where
the criterion states one.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from sparsekern import (
    BenchConfig,
    Net,
    Block,
    PlainConvLayer,
    SceneSpec,
    SwpConvLayer,
    bench_run,
    build_kernel_map_regular,
    build_kernel_map_submanifold,
    build_kmaps,
    conv_backward_plain,
    conv_forward_plain,
    enumerate_offsets,
    erf_compute,
    group_kernel_map,
    mac_count,
    make_desk_net,
    param_count,
    partition_offsets,
    random_scene,
    swp_backward,
    swp_forward_shrunk,
    swp_forward_train,
    train_step,
)
from sparsekern.rng import SplitMix64

from conftest import make_tensor
from oracles import brute_force_regular_outputs, dense_conv, fd_grad, rel_err

TABLE1_SEED = 1
TABLE1_SPEC = SceneSpec(80_000, ((0, 199),) * 3, 16, TABLE1_SEED)


@contextmanager
def criterion(number, title):
    try:
        yield
    except BaseException:
        print(f"[criterion {number}] FAIL  {title}")
        raise
    print(f"[criterion {number}] PASS  {title}")


@pytest.fixture(scope="session")
def table1_scene():
    return random_scene(TABLE1_SPEC, dtype=np.float32)


@pytest.fixture(scope="session")
def oracle_corpus():
    """102 random scenes: N <= 500, extent <= 16^3, c <= 8, L in {3,5,7}."""
    rng = np.random.default_rng(20_240_601)
    cases = []
    for i in range(102):
        size = (3, 5, 7)[i % 3]
        hi = int(rng.integers(4, 16))
        n = int(min(rng.integers(2, 501), (hi + 1) ** 3))
        c = int(rng.integers(1, 9))
        scene = random_scene(
            SceneSpec(n, ((0, hi),) * 3, c, int(rng.integers(0, 2**63))),
            dtype=np.float64,
        )
        cases.append((scene, size))
    return cases


def test_criterion_1_table1_parameter_reproduction():
    with criterion(1, "Table-1 parameter counts reproduced exactly"):
        t0 = time.perf_counter()
        plain_expect = [6912, 32000, 87808, 186624, 340736, 562432, 864000, 1257728]
        swp_expect = [8912, 12400, 18576, 28208, 42064, 60912, 85520]
        got_plain = [param_count("plain", size, 16, 16) for size in range(3, 18, 2)]
        got_swp = [param_count("swp", size, 16, 16) for size in range(5, 18, 2)]
        assert got_plain == plain_expect
        assert got_swp == swp_expect
        assert time.perf_counter() - t0 < 1.0


def test_criterion_2_oracle_equivalence(oracle_corpus):
    with criterion(2, "plain and SWP forwards match the dense oracle (<= 1e-12)"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(7)
        assert len(oracle_corpus) >= 100
        for scene, size in oracle_corpus:
            pattern = enumerate_offsets(size)
            kmap = build_kernel_map_submanifold(scene, pattern)
            c_out = int(rng.integers(1, 5))
            plain = PlainConvLayer(
                rng.normal(size=(len(pattern), scene.channels, c_out)), pattern
            )
            y = conv_forward_plain(scene, plain, kmap)
            ref = dense_conv(
                scene.coords, scene.features, pattern.offsets, plain.weights, scene.coords
            )
            assert rel_err(y, ref) <= 1e-12
            swp = SwpConvLayer(
                rng.normal(size=(27, scene.channels, c_out)),
                0.2 * rng.normal(size=(len(pattern), scene.channels)),
                partition_offsets(size),
                pattern,
            )
            y_swp = swp_forward_train(scene, swp, kmap)
            ref_swp = dense_conv(
                scene.coords,
                scene.features,
                pattern.offsets,
                swp.tiled_weights(),
                scene.coords,
                embed=swp.embed,
            )
            assert rel_err(y_swp, ref_swp) <= 1e-12
        assert time.perf_counter() - t0 < 60.0


def test_criterion_3_path_equivalence_bitwise(oracle_corpus):
    with criterion(3, "shrunk path equals training path bitwise (f64)"):
        rng = np.random.default_rng(8)
        for scene, size in oracle_corpus:
            pattern = enumerate_offsets(size)
            kmap = build_kernel_map_submanifold(scene, pattern)
            layer = SwpConvLayer(
                rng.normal(size=(27, scene.channels, 3)),
                0.2 * rng.normal(size=(len(pattern), scene.channels)),
                partition_offsets(size),
                pattern,
            )
            grouped = group_kernel_map(kmap, layer.gmap)
            y_train = swp_forward_train(scene, layer, kmap)
            y_shrunk = swp_forward_shrunk(scene, layer, grouped)
            assert y_train.dtype == np.float64
            assert np.array_equal(y_train, y_shrunk)


def test_criterion_4_gradient_correctness():
    with criterion(4, "analytic gradients match finite differences; adjoint holds"):
        rng = np.random.default_rng(99)
        instances = 0
        for trial in range(22):
            coords = np.unique(rng.integers(0, 4, size=(int(rng.integers(2, 12)), 3)), axis=0)
            c_in = int(rng.integers(1, 4))
            c_out = int(rng.integers(1, 4))
            t = make_tensor(coords.tolist(), channels=c_in, seed=trial)
            size = 5 if trial % 4 == 0 else 3
            pattern = enumerate_offsets(size)
            kmap = build_kernel_map_submanifold(t, pattern)
            use_swp = trial % 2 == 1
            if use_swp:
                layer = SwpConvLayer(
                    rng.normal(size=(27, c_in, c_out)),
                    0.3 * rng.normal(size=(len(pattern), c_in)),
                    partition_offsets(size),
                    pattern,
                )
                fwd = lambda: swp_forward_train(t, layer, kmap)
            else:
                layer = PlainConvLayer(rng.normal(size=(len(pattern), c_in, c_out)), pattern)
                fwd = lambda: conv_forward_plain(t, layer, kmap)

            def loss():
                y = fwd()
                return 0.5 * float(np.sum(y.astype(np.float64) ** 2))

            y = fwd()
            g = (
                swp_backward(t, layer, kmap, y)
                if use_swp
                else conv_backward_plain(t, layer, kmap, y)
            )
            assert rel_err(g.d_weights, fd_grad(loss, layer.weights, step=1e-5)) <= 1e-4
            assert rel_err(g.d_input, fd_grad(loss, t.features, step=1e-5)) <= 1e-4
            if use_swp:
                assert rel_err(g.d_embed, fd_grad(loss, layer.embed, step=1e-5)) <= 1e-4

            # adjoint identity <Fx, y> == <x, F^T y> on the linear part
            dy = rng.normal(size=y.shape)
            gb = (
                swp_backward(t, layer, kmap, dy)
                if use_swp
                else conv_backward_plain(t, layer, kmap, dy)
            )
            y_x = fwd()
            if use_swp:
                zero = t.with_features(np.zeros_like(t.features))
                y_0 = swp_forward_train(zero, layer, kmap)
            else:
                y_0 = np.zeros_like(y_x)
            lhs = float(np.sum((y_x - y_0) * dy))
            rhs = float(np.sum(t.features * gb.d_input))
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))
            instances += 1
        assert instances >= 20


def test_criterion_5_multiplication_savings(table1_scene):
    with criterion(5, "27-vs-343 multiplications; swp macs below plain for L >= 5"):
        side = 9
        cube = make_tensor(
            [(x, y, z) for x in range(side) for y in range(side) for z in range(side)],
            channels=1,
        )
        kmap = build_kernel_map_submanifold(cube, enumerate_offsets(7))
        grouped = group_kernel_map(kmap, partition_offsets(7))
        interior = cube.row_of((4, 4, 4))
        assert int(np.sum(kmap.out_rows == interior)) == 343
        assert int(np.sum(grouped.seg_rows == interior)) == 27

        for size in range(5, 18, 2):
            km = build_kernel_map_submanifold(table1_scene, enumerate_offsets(size))
            gm = group_kernel_map(km, partition_offsets(size))
            assert mac_count(gm, "swp", 16, 16) < mac_count(km, "plain", 16, 16), size


def test_criterion_6_latency_scaling_shape(table1_scene):
    with criterion(6, "ordinal latency: swp < plain at L>=7 and flatter 7->17 growth"):
        t0 = time.perf_counter()
        config = BenchConfig(
            kernels=[7, 17],
            modes=["plain", "swp"],
            scene=TABLE1_SPEC,
            warmup=3,
            repeats=5,
        )
        rows = {(r.kernel, r.mode): r.latency_ms for r in bench_run(config)}
        assert rows[(7, "swp")] < rows[(7, "plain")]
        assert rows[(17, "swp")] < rows[(17, "plain")]
        plain_ratio = rows[(17, "plain")] / rows[(7, "plain")]
        swp_ratio = rows[(17, "swp")] / rows[(7, "swp")]
        assert plain_ratio > swp_ratio
        assert time.perf_counter() - t0 < 300.0


def test_criterion_7_erf_disconnection():
    with criterion(7, "small kernels cannot bridge the gap; SWP large kernel can"):
        scene = make_tensor([(x, 0, 0) for x in (0, 1, 2, 4, 5, 6)], channels=2, seed=0)
        rng = np.random.default_rng(5)

        def plain_block(size, seed):
            w = np.random.default_rng(seed).normal(size=(size**3, 2, 2))
            return Block(PlainConvLayer(w, enumerate_offsets(size)))

        net3 = Net([plain_block(3, 1), plain_block(3, 2)])
        res3 = erf_compute(net3, scene, (4, 0, 0), 0)
        vals3 = {tuple(c): v for c, v in zip(scene.coords.tolist(), res3.values)}
        assert vals3[(0, 0, 0)] == 0.0
        assert vals3[(1, 0, 0)] == 0.0
        assert vals3[(2, 0, 0)] == 0.0

        swp_layer = SwpConvLayer(
            rng.normal(size=(27, 2, 2)),
            0.1 * rng.normal(size=(343, 2)),
            partition_offsets(7),
            enumerate_offsets(7),
        )
        net7 = Net([Block(swp_layer)])
        res7 = erf_compute(net7, scene, (4, 0, 0), 0)
        vals7 = {tuple(c): v for c, v in zip(scene.coords.tolist(), res7.values)}
        assert vals7[(1, 0, 0)] > 0.0
        assert vals7[(2, 0, 0)] > 0.0

        for res in (res3, res7):
            assert res.values.min() >= 0.0
            assert res.values.max() <= 1.0
            assert res.values.max() == pytest.approx(1.0)


def test_criterion_8_coordinate_rules(oracle_corpus):
    with criterion(8, "submanifold preserves coordinates; stride-2 membership rule"):
        for scene, size in oracle_corpus[:40]:
            pattern = enumerate_offsets(size)
            kmap = build_kernel_map_submanifold(scene, pattern)
            assert np.array_equal(kmap.out_coords, scene.coords)
        for scene, _ in oracle_corpus[:15]:
            pattern = enumerate_offsets(3)
            kmap = build_kernel_map_regular(scene, pattern, 2)
            got = {tuple(c) for c in kmap.out_coords.tolist()}
            assert got == brute_force_regular_outputs(scene.coords, pattern.offsets, 2)
            for k, ii, jj in kmap.iter_offsets():
                if len(ii):
                    p = scene.coords[ii].astype(np.int64)
                    q = kmap.out_coords[jj].astype(np.int64)
                    assert np.array_equal(p, 2 * q + pattern.offsets[k])


def test_criterion_9_toy_training_smoke():
    with criterion(9, "toy training halves the loss within 100 steps"):
        scene = random_scene(SceneSpec(64, ((0, 7),) * 3, 8, 3), dtype=np.float64)
        proj = SplitMix64(4).symmetric_array(8 * 2).reshape(8, 2)
        labels = np.argmax(scene.features @ proj, axis=1)
        net = make_desk_net("swp", in_channels=8, n_classes=2, seed=3)
        kmaps = build_kmaps(net, scene)
        initial = None
        net_t = net
        for _ in range(100):
            net_t, loss = train_step(net_t, scene, labels, 0.5, kmaps)
            if initial is None:
                initial = loss
        _, final = train_step(net_t, scene, labels, 0.0, kmaps)
        assert np.isfinite(final)
        assert final <= 0.5 * initial
