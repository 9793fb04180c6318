"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The stability experiment
(criteria 6 and 7) trains twenty desk-scale networks once per session and
is shared between the two tests.
"""

import time

import numpy as np
import pytest

from bitconv import analysis as A
from bitconv import model as M
from bitconv import quantize as Q
from bitconv.bench import bench_suite
from bitconv.kernels import ConvSpec, conv_float
from bitconv.layers import BNParams, post_bn_block, pre_bn_block
from bitconv.train import backward, softmax_cross_entropy, stability_experiment
from bitconv.verify import run_suite

SEEDS = (0, 1, 2, 3, 4)


def report(n, text):
    print(f"\nACCEPTANCE {n} PASS: {text}")


@pytest.fixture(scope="module")
def stability():
    t0 = time.monotonic()
    results = stability_experiment(seeds=SEEDS, curvature_window=5)
    return results, time.monotonic() - t0


def test_criterion_1_cost_table():
    t0 = time.monotonic()
    rows = {r["name"]: r for r in A.reference_op_table()}
    printed = {
        "fp_regular_3x3": (462e6, 3),
        "fp_depthwise_3x3": (3.61e6, 3),
        "binary_regular_3x3": (7.23e6, 3),
        "binary_depthwise_3x3": (56e3, 2),
    }
    for name, (want, sig) in printed.items():
        got = A.round_sig(rows[name]["ops"], sig)
        assert abs(got - want) <= 0.005 * want, (name, got, want)
    elapsed = time.monotonic() - t0
    assert elapsed < 1.0, f"cost table took {elapsed:.3f}s"
    report(1, f"462M/3.61M/7.23M/56K reproduced in {elapsed * 1e3:.1f} ms")


def test_criterion_2_kernel_oracle_equivalence():
    t0 = time.monotonic()
    results = run_suite(cases_per_variant=1000, seed=20240 + 1)
    elapsed = time.monotonic() - t0
    bad = [r for r in results if not r.ok]
    assert not bad, f"{len(bad)} mismatches, first: {bad[:1]}"
    assert elapsed < 60.0, f"suite took {elapsed:.1f}s"
    per = {}
    for r in results:
        per[r.variant] = per.get(r.variant, 0) + 1
    assert set(per.values()) == {1000}
    report(2, f"{len(results)} randomized cases bit-exact in {elapsed:.1f}s")


def test_criterion_3_quantizer_decomposition():
    rng = np.random.default_rng(3)
    n = 1_000_000
    x = (rng.standard_normal(n) * 2).reshape(1, 1, 1, n)
    a1 = np.array([-0.37])
    a2 = np.array([0.41])
    p = Q.DualQuantParams(a1, a2, np.array([0.83]), np.array([0.29]))
    direct = Q.ternarize(x, p)
    summed = Q.binarize(x, p.branch(0)) + Q.binarize(x, p.branch(1))
    assert np.array_equal(direct, summed)
    assert 1.58 <= Q.effective_bits(2) <= 1.585
    assert Q.effective_bits(3) == 2.0
    report(3, f"decomposition exact on {n:,} scalars; "
              f"effective_bits(2)={Q.effective_bits(2):.6f}, effective_bits(3)=2.0")


def test_criterion_4_conditioning_theorem():
    t0 = time.monotonic()
    rng = np.random.default_rng(4)
    improved = 0
    for _ in range(100):
        j = A.random_dw_jacobian(int(rng.integers(2, 5)), int(rng.integers(6, 12)), rng)
        alpha = float(10 ** rng.uniform(1, 4))
        rep = A.condition_numbers(j, alpha)
        assert rep.kappa_j > 1.0
        if rep.kappa_j_prime < rep.kappa_j:
            improved += 1
        l1, ln = rep.spectrum[0], rep.spectrum[-1]
        factored = (1 + alpha / l1) * (ln / (ln + alpha)) * rep.kappa_j
        assert abs(factored - rep.kappa_j_prime) <= 1e-10 * rep.kappa_j_prime
        if ln <= alpha / 100:
            assert rep.approx_abs_error <= 0.10 * rep.kappa_j_prime
    elapsed = time.monotonic() - t0
    assert improved == 100
    assert elapsed < 30.0, f"took {elapsed:.1f}s"
    report(4, f"kappa(J + aI) < kappa(J) in 100/100; factored identity <= 1e-10; "
              f"large-a approximation within 10%; {elapsed:.1f}s")


def test_criterion_5_block_jacobian_structure():
    rng = np.random.default_rng(5)
    worst_post, worst_pre = 0.0, 0.0
    for _ in range(20):
        c = int(rng.integers(1, 4))
        hw = int(rng.integers(3, 6))
        spec = ConvSpec(c, c, (3, 3), stride=1, padding=1, groups=c)
        w = rng.standard_normal(spec.weight_shape())
        conv = lambda t, w=w, spec=spec: conv_float(t, w, spec)
        alpha = float(10 ** rng.uniform(0, 1.5))
        p = BNParams(np.full(c, alpha), rng.standard_normal(c),
                     rng.standard_normal(c), np.full(c, 1.0 - 1e-5))
        x0 = rng.standard_normal((1, c, hw, hw))
        eye = np.eye(x0.size)
        jdw = A.jacobian_of_block(conv, x0)
        j_post = A.jacobian_of_block(lambda t: post_bn_block(t, conv, p), x0)
        j_pre = A.jacobian_of_block(lambda t: pre_bn_block(t, conv, p), x0)
        want_post = alpha * jdw + eye
        want_pre = alpha * jdw + (alpha + 1) * eye
        rel_post = np.linalg.norm(j_post - want_post) / np.linalg.norm(want_post)
        rel_pre = np.linalg.norm(j_pre - want_pre) / np.linalg.norm(want_pre)
        assert rel_post <= 1e-3, rel_post
        assert rel_pre <= 1e-3, rel_pre
        worst_post = max(worst_post, rel_post)
        worst_pre = max(worst_pre, rel_pre)
    report(5, f"20 blocks: post-BN matches a*Jdw+I (worst {worst_post:.2e}), "
              f"pre-BN matches a*Jdw+(a+1)*I (worst {worst_pre:.2e})")


def test_criterion_6_desk_scale_stability(stability):
    results, wall = stability
    assert wall < 600.0, f"stability experiment took {wall:.0f}s (budget 600s)"
    names = ("baseline", "prebn", "dual", "prebn_dual")
    finals = {nm: np.array([run["report"].final("val") for run in results[nm]]) for nm in names}
    lates = {nm: np.array([run["report"].late_variance("val") for run in results[nm]]) for nm in names}

    acc_wins = int(np.sum(finals["prebn_dual"] >= finals["baseline"]))
    var_wins = int(np.sum(lates["prebn_dual"] < lates["baseline"]))
    assert acc_wins >= 4, f"accuracy wins {acc_wins}/5"
    assert var_wins >= 4, f"late-variance wins {var_wins}/5"

    med = {nm: float(np.median(finals[nm])) for nm in names}
    assert med["baseline"] < med["prebn"], med
    assert med["baseline"] < med["dual"], med
    assert med["prebn"] < med["prebn_dual"], med
    assert med["dual"] < med["prebn_dual"], med
    report(6, f"acc wins {acc_wins}/5, variance wins {var_wins}/5, medians "
              f"baseline {med['baseline']:.3f} < {{prebn {med['prebn']:.3f}, "
              f"dual {med['dual']:.3f}}} < combined {med['prebn_dual']:.3f}; "
              f"trained 20 nets in {wall:.0f}s")


def test_criterion_7_hessian_spectrum(stability):
    # eigensolver validation on constructed quadratic probes
    rng = np.random.default_rng(7)
    dim = 36
    eigs = np.sort(12.0 * 0.75 ** np.arange(dim) + 0.05)[::-1]
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    a = q @ np.diag(eigs) @ q.T
    est = A.hessian_topk_operator(lambda v: a @ v, dim, 5, seed=1)
    got = np.array([e.value for e in est])
    assert np.allclose(got, eigs[:5], rtol=1e-3), (got, eigs[:5])

    results, _ = stability
    lam_base = np.array([max(v for _, v in run["lambda_max"]) for run in results["baseline"]])
    lam_ours = np.array([max(v for _, v in run["lambda_max"]) for run in results["prebn_dual"]])
    wins = int(np.sum(lam_ours < lam_base))
    assert wins >= 4, f"lambda_max wins {wins}/5: base={lam_base}, ours={lam_ours}"
    report(7, f"lambda_max(combined) < lambda_max(baseline) in {wins}/5 seeds "
              f"(medians {np.median(lam_ours):.0f} vs {np.median(lam_base):.0f}); "
              f"probe eigenvalues match to 1e-3")


def test_criterion_8_bench_ordering():
    geometry = (56, 56, 128)
    bench_suite(geometry=geometry, reps=5, warmup=2)  # unmeasured warm pass
    runs = [bench_suite(geometry=geometry, reps=40, warmup=5, seed=s) for s in (0, 1)]
    first = {r.op: r.median_ms for r in runs[0]}
    second = {r.op: r.median_ms for r in runs[1]}
    for op in first:
        drift = abs(first[op] - second[op]) / max(first[op], second[op])
        assert drift < 0.20, f"{op} drift {drift:.1%}"
    med = {op: (first[op] + second[op]) / 2 for op in first}
    speedup = med["float_conv"] / med["binary_conv"]
    assert speedup >= 2.0, f"binary speedup only {speedup:.2f}x"
    dual_total = med["dual_binary_dw"] + med["residual_add"]
    assert dual_total < med["binary_conv"], (dual_total, med["binary_conv"])
    report(8, f"binary regular {speedup:.1f}x faster than float regular; "
              f"dual dw + add = {dual_total:.1f} ms < binary regular {med['binary_conv']:.1f} ms; "
              f"drift < 20%")


def test_criterion_9_gradient_checks():
    # full float stack against central finite differences
    from test_train import TestGradients

    tg = TestGradients()
    net = tg._float_block_net()
    rng = np.random.default_rng(9)
    x = rng.standard_normal((4, 1, 8, 8))
    y = rng.integers(0, 3, 4)

    def loss_fn():
        return softmax_cross_entropy(net.forward(x, training=True), y)[0]

    backward(net, (x, y))
    grads = dict(net.named_grads())
    h = 1e-6
    checked, worst = 0, 0.0
    rng2 = np.random.default_rng(90)
    for name, arr in net.named_params():
        flat = arr.reshape(-1)
        for idx in rng2.choice(flat.size, size=min(3, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            lp = loss_fn()
            flat[idx] = orig - h
            lm = loss_fn()
            flat[idx] = orig
            fd = (lp - lm) / (2 * h)
            got = grads[name].reshape(-1)[idx]
            rel = abs(got - fd) / max(1.0, abs(fd))
            assert rel <= 1e-4, (name, got, fd)
            worst = max(worst, rel)
            checked += 1

    # beta enters the layer output linearly: exact against FD
    spec = ConvSpec(4, 4, (3, 3), 1, 1, groups=4)
    layer = M.MultiBinaryConv("t", spec, 2, rng, dtype=np.float64)
    xb = rng.standard_normal((2, 4, 6, 6))
    gy = rng.standard_normal(layer.forward(xb).shape)
    layer.forward(xb)
    layer.backward(gy)
    worst_beta = 0.0
    for i in range(2):
        analytic = layer.gbeta[i].copy()
        for idx in range(layer.beta[i].size):
            orig = layer.beta[i][idx]
            layer.beta[i][idx] = orig + 1e-3
            lp = float((layer.forward(xb) * gy).sum())
            layer.beta[i][idx] = orig - 1e-3
            lm = float((layer.forward(xb) * gy).sum())
            layer.beta[i][idx] = orig
            fd = (lp - lm) / 2e-3
            rel = abs(analytic[idx] - fd) / max(1.0, abs(fd))
            assert rel <= 1e-6, (i, idx, analytic[idx], fd)
            worst_beta = max(worst_beta, rel)
    report(9, f"{checked} float-path coordinates within 1e-4 of finite differences "
              f"(worst {worst:.2e}); magnitude gradients exact to 1e-6 (worst {worst_beta:.2e})")


def test_criterion_10_visualization_pipeline():
    rng = np.random.default_rng(10)
    for i in range(100):
        hist = rng.integers(0, 60, 256).astype(float)
        hist[rng.integers(0, 256)] += rng.integers(50, 400)
        got = Q.otsu_threshold(hist)
        # brute-force oracle
        from test_quantize import otsu_brute_force

        assert got == otsu_brute_force(hist), i
    ramp = np.tile(np.arange(256), (4, 1))
    out = Q.ternarize_image(ramp, 85, 170)
    assert sorted(np.unique(out).tolist()) == [0, 128, 255]
    report(10, "Otsu matches brute force on 100 histograms; ramp ternarizes to 3 levels")
