"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The training-based criteria
(3 to 6) are marked slow; expect the whole module to take 20-30 minutes on a
laptop CPU.
"""
import dataclasses
import math
import time

import numpy as np
import pytest

from msgda.autodiff import Tape, Tensor, grad_check
from msgda.evaluate import (auc_roc, evaluate_target, f1, measure_csd_homophily,
                            refine)
from msgda.graph import Graph
from msgda.graphlets import count_orbits
from msgda.model import (ModelDims, ModelParams, classify, criticize, fuse,
                         gat_cross_forward, gcn_forward, normalized_adjacency)
from msgda.synth import DomainSpec, SuiteSpec, generate_suite
from msgda.train import (TrainConfig, VARIANTS, mmd_squared, combine_weights,
                         prepare_structures, semantic_weight, supervised_loss,
                         train)

from oracles import (auc_pair_counting, enumerate_orbits, f1_bruteforce,
                     random_graph)


def report(criterion: str, passed: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} ({detail})")
    assert passed, f"{criterion}: {detail}"


# fp cancellation noise in a central difference is about eps*|loss|/h ~ 1e-11,
# so gradients below this floor (structural zeros from inactive relu paths)
# cannot meet a relative bar over the 1e-8 denominator; they are held to an
# absolute noise-level bound instead and counted
_FD_RESOLUTION = 3e-7
_FD_ABS_NOISE = 1e-9


def _fd_check_resolvable(fn, inputs, h: float = 1e-5) -> tuple:
    arrays = [np.atleast_2d(np.asarray(x, dtype=np.float64)).copy() for x in inputs]
    tape = Tape()
    tensors = [Tensor(x) for x in arrays]
    out = fn(tape, *tensors)
    tape.backward(out)
    analytic = [t.grad.copy() for t in tensors]

    def eval_at(xs):
        t = Tape(check_numerics=False)
        return float(fn(t, *[Tensor(x) for x in xs]).value[0, 0])

    worst, sub_resolution = 0.0, 0
    for k, x in enumerate(arrays):
        for idx in np.ndindex(*x.shape):
            orig = x[idx]
            x[idx] = orig + h
            up = eval_at(arrays)
            x[idx] = orig - h
            down = eval_at(arrays)
            x[idx] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic[k][idx]
            if max(abs(a), abs(numeric)) < _FD_RESOLUTION:
                sub_resolution += 1
                assert abs(a - numeric) <= _FD_ABS_NOISE
                continue
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
    return worst, sub_resolution


# -- criterion 1: gradient correctness --------------------------------------

def test_criterion_1_gradient_correctness():
    started = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0

    prim_cases = {
        "matmul": lambda t, a, b: t.reduce_sum(t.matmul(a, b)),
        "spmm_dense_equiv": None,  # exercised inside the composed loss
        "add": lambda t, a, b: t.reduce_sum(t.add(a, b)),
        "sub": lambda t, a, b: t.reduce_sum(t.sub(a, b)),
        "scalar_mul": lambda t, a: t.reduce_sum(t.scalar_mul(a, 0.3)),
        "hadamard": lambda t, a, b: t.reduce_sum(t.hadamard(a, b)),
        "relu": lambda t, a: t.reduce_sum(t.relu(a)),
        "leaky_relu": lambda t, a: t.reduce_sum(t.leaky_relu(a, 0.2)),
        "exp": lambda t, a: t.reduce_sum(t.exp(a)),
        "log": lambda t, a: t.reduce_sum(t.log(a)),
        "abs": lambda t, a: t.reduce_sum(t.abs(a)),
        "sigmoid": lambda t, a: t.reduce_sum(t.sigmoid(a)),
        "row_softmax": lambda t, a: t.reduce_sum(t.hadamard(t.row_softmax(a), a)),
        "concat_cols": lambda t, a, b: t.reduce_mean(t.concat_cols(a, b)),
        "reduce_mean": lambda t, a: t.reduce_mean(a),
        "reduce_sum": lambda t, a: t.reduce_sum(a),
        "gather_rows": lambda t, a: t.reduce_sum(
            t.gather_rows(a, np.array([0, 1, 1, 3]))),
        "transpose": lambda t, a: t.reduce_sum(
            t.hadamard(t.transpose(a), t.transpose(a))),
    }
    for name, fn in prim_cases.items():
        if fn is None:
            continue
        for _ in range(10):
            a = rng.standard_normal((4, 3))
            if name in ("relu", "leaky_relu", "abs"):
                a[np.abs(a) < 0.1] = 0.1
            if name == "log":
                a = np.abs(a) + 0.5
            args = [a]
            if name in ("add", "sub", "hadamard", "concat_cols"):
                args.append(rng.standard_normal((4, 3)))
            elif name == "matmul":
                args.append(rng.standard_normal((3, 5)))
            worst = max(worst, grad_check(fn, args))

    # full composed generator loss: gcn -> gat -> fuse -> classify + critic + mmd
    dims = ModelDims(feature_dim=3, hidden=5, edge_dim=3)
    names = list(ModelParams.shapes(dims))
    n = 8
    checked = 0
    draw = 0
    skipped_total = 0
    while checked < 10:
        draw += 1
        assert draw < 100, "could not find enough kink-free instances"
        irng = np.random.default_rng(100 + draw)
        edges = random_graph(irng, n, 0.35)
        g = Graph.from_edges(n, np.asarray(edges, np.int64).reshape(-1, 2),
                             irng.standard_normal((n, 3)))
        adj = normalized_adjacency(g)
        mask = np.eye(n, dtype=bool)
        for _ in range(6):
            i, j = irng.integers(0, n, size=2)
            if i != j:
                mask[i, j] = True
        weights = np.where(mask, irng.random((n, n)), 0.0)
        labels = irng.integers(0, 2, size=n)
        zt_const = irng.standard_normal((4, 5))

        def composed(tape, *tensors):
            p = ModelParams(dims, dict(zip(names, tensors)))
            zi = gcn_forward(tape, adj, tape.constant(g.features), p)
            zc = gat_cross_forward(tape, zi, weights, mask, p)
            z = fuse(tape, zi, zc, p)
            logits = classify(tape, z, p)
            l_sup = supervised_loss(tape, [logits], [labels], [1.0])
            # unequal coefficients keep every critic gradient structurally
            # nonzero (an exact mean-gap zeroes the bias gradient, which
            # central differences cannot certify against a 1e-8 floor)
            l_d = tape.sub(tape.scalar_mul(tape.reduce_mean(criticize(tape, z, p)), 0.7),
                           tape.scalar_mul(tape.reduce_mean(
                               criticize(tape, tape.constant(zt_const), p)), 0.3))
            reg = mmd_squared(tape, tape.gather_rows(z, np.arange(0, n // 2)),
                              tape.gather_rows(z, np.arange(n // 2, n)),
                              (0.8, 1.6))
            return tape.add(tape.add(l_sup, reg), l_d)

        seed_params = ModelParams.init(dims, seed=200 + draw)
        values = [seed_params[name].value.copy() for name in names]
        # central differences are undefined across activation kinks: keep only
        # instances whose pre-activations sit clear of zero
        probe = Tape()
        composed(probe, *[Tensor(v) for v in values])
        margin = min(
            float(np.min(np.abs(r.inputs[0].value)))
            for r in probe.operations() if r.op in ("relu", "leaky_relu")
        )
        if margin < 1e-3:
            continue
        checked += 1
        err, skipped = _fd_check_resolvable(composed, values)
        worst = max(worst, err)
        skipped_total += skipped

    elapsed = time.perf_counter() - started
    report("criterion-1 gradient-correctness", worst < 1e-4 and elapsed < 60.0,
           f"max relative error {worst:.2e}, {skipped_total} sub-resolution "
           f"elements skipped, {elapsed:.1f}s")


# -- criterion 2: graphlet exactness -----------------------------------------

def test_criterion_2_graphlet_exactness():
    started = time.perf_counter()
    rng = np.random.default_rng(2)
    checked = 0
    exact = True
    densities = [0.1, 0.3, 0.5]
    while checked < 50:
        n = int(rng.integers(4, 13))
        p = densities[checked % 3]
        edges = random_graph(rng, n, p)
        g = Graph.from_edges(n, np.asarray(edges, np.int64).reshape(-1, 2),
                             np.zeros((n, 2)))
        if not np.array_equal(count_orbits(g), enumerate_orbits(n, edges)):
            exact = False
            break
        checked += 1
    elapsed = time.perf_counter() - started
    report("criterion-2 graphlet-exactness", exact and elapsed < 60.0,
           f"{checked} graphs exact, {elapsed:.1f}s")


# -- criterion 3: homophily lift ---------------------------------------------

@pytest.mark.slow
def test_criterion_3_homophily_lift():
    lifts = []
    for seed in range(5):
        d = DomainSpec(num_nodes=500, feature_dim=8, homophily=0.3,
                       mean_degree=4.0, feature_noise_sigma=1.0,
                       class_separation=2.0)
        spec = SuiteSpec(sources=(d, d, d), target=d,
                         shift_schedule=(0.3, 0.6, 0.9), rng_seed=seed)
        suite = generate_suite(spec)
        cfg = TrainConfig(epochs=5, rng_seed=seed, variant="+csd-noedge",
                          k_neighbors=5)
        structs = prepare_structures(suite, cfg)
        params, _ = train(suite, cfg, structs)
        csd, in_domain = measure_csd_homophily(suite, params, cfg, structs)
        lifts.append((csd, in_domain))
    wins = sum(1 for csd, ind in lifts if csd > ind)
    detail = ", ".join(f"{c:.3f}>{i:.3f}" for c, i in lifts)
    report("criterion-3 homophily-lift", wins >= 4, f"{wins}/5 seeds ({detail})")


# -- criterion 4: ablation ordering ------------------------------------------

def _ablation_suite_spec() -> SuiteSpec:
    def src(mdeg):
        return DomainSpec(num_nodes=300, feature_dim=8, homophily=0.5,
                          mean_degree=mdeg, feature_noise_sigma=0.9,
                          class_separation=1.8, label_flip_rate=0.3)
    target = dataclasses.replace(src(8.0), label_flip_rate=0.0)
    return SuiteSpec(sources=(src(5.0), src(6.0), src(5.0), src(6.0)),
                     target=target, shift_schedule=(0.5, 1.5, 4.0, 6.0),
                     rng_seed=0)


@pytest.mark.slow
def test_criterion_4_ablation_ordering():
    spec = _ablation_suite_spec()
    f1_by_variant: dict = {v: [] for v in VARIANTS}
    variant_seconds: dict = {v: 0.0 for v in VARIANTS}
    for seed in range(5):
        suite = generate_suite(dataclasses.replace(spec, rng_seed=seed))
        full_cfg = TrainConfig(epochs=150, rng_seed=seed,
                               variant="+csd+smst+ar",
                               topology_from_features=True)
        structs = prepare_structures(suite, full_cfg)
        for variant in VARIANTS:
            cfg = dataclasses.replace(full_cfg, variant=variant)
            t0 = time.perf_counter()
            params, _ = train(suite, cfg, structs)
            result = evaluate_target(suite, params, cfg)
            variant_seconds[variant] += time.perf_counter() - t0
            f1_by_variant[variant].append(result.f1)
    base = float(np.mean(f1_by_variant["base"]))
    full = float(np.mean(f1_by_variant["+csd+smst+ar"]))
    slowest = max(variant_seconds.values())
    ok = full >= base and (full - base) >= 0.02 and slowest < 600.0
    means = {v: round(float(np.mean(f)), 4) for v, f in f1_by_variant.items()}
    report("criterion-4 ablation-ordering", ok,
           f"mean F1 {means}, gap {full - base:+.4f}, "
           f"slowest variant {slowest:.0f}s over 5 seeds")


# -- criterion 5: selective weighting ----------------------------------------

@pytest.mark.slow
def test_criterion_5_selective_weighting():
    wins = 0
    finals = []
    for seed in range(5):
        d = DomainSpec(num_nodes=250, feature_dim=8, homophily=0.4,
                       mean_degree=5.0, feature_noise_sigma=1.0,
                       class_separation=2.0)
        spec = SuiteSpec(sources=(d, d), target=d, shift_schedule=(0.0, 3.0),
                         rng_seed=seed)
        suite = generate_suite(spec)
        cfg = TrainConfig(epochs=60, rng_seed=seed, variant="+csd+smst",
                          topology_from_features=True)
        structs = prepare_structures(suite, cfg)
        _, history = train(suite, cfg, structs)
        w = history.weights[-1]
        finals.append(tuple(np.round(w, 4)))
        wins += int(w[0] > w[1])
    report("criterion-5 selective-weighting", wins >= 4,
           f"{wins}/5 seeds prefer the identical source; final weights {finals}")


# -- criterion 6: refinement under label noise --------------------------------

@pytest.mark.slow
def test_criterion_6_refinement_under_noise():
    # hard-transfer, short-schedule regime: the refinement is meant for a
    # classifier that under-fits the target, which is where it must not hurt
    def src(n):
        return DomainSpec(num_nodes=n, feature_dim=8, homophily=0.5,
                          mean_degree=5.0, feature_noise_sigma=0.7,
                          class_separation=2.0, label_flip_rate=0.2)
    target = dataclasses.replace(src(300), mean_degree=16.0,
                                 label_flip_rate=0.0)
    wins = 0
    pairs = []
    for seed in range(5):
        spec = SuiteSpec(sources=(src(300), src(300)), target=target,
                         shift_schedule=(4.0, 5.5), rng_seed=seed)
        suite = generate_suite(spec)
        cfg = TrainConfig(epochs=25, rng_seed=seed, variant="+csd+smst+ar",
                          topology_from_features=True)
        structs = prepare_structures(suite, cfg)
        params, _ = train(suite, cfg, structs)
        refined = evaluate_target(suite, params, cfg, lam=0.5).auc
        plain = evaluate_target(suite, params, cfg, lam=1.0).auc
        pairs.append((round(refined, 4), round(plain, 4)))
        wins += int(refined >= plain)
    report("criterion-6 refinement-under-noise", wins >= 3,
           f"{wins}/5 seeds with AUC(0.5) >= AUC(1); pairs {pairs}")


# -- criterion 7: analytic spot values ----------------------------------------

def test_criterion_7_analytic_spot_values():
    checks = []
    checks.append(abs(semantic_weight(1.5, 0.5) - 0.3678794411714423) <= 1e-9)
    checks.append(combine_weights(1.0, 0.5, 0.5) == 0.75)

    tape = Tape()
    ce = supervised_loss(tape, [Tensor(np.zeros((6, 2)))],
                         [np.array([0, 1, 0, 1, 0, 1])], [1.0])
    checks.append(abs(ce.value[0, 0] - math.log(2.0)) <= 1e-9)

    rng = np.random.default_rng(7)
    x = rng.standard_normal((30, 4))
    tape = Tape()
    mmd_xx = mmd_squared(tape, Tensor(x), Tensor(x.copy()), (0.5, 1.0, 2.0))
    checks.append(abs(mmd_xx.value[0, 0]) <= 1e-10)

    tape = Tape()
    soft = tape.row_softmax(Tensor(rng.standard_normal((20, 6))))
    checks.append(np.all(np.abs(soft.value.sum(axis=1) - 1.0) <= 1e-12))

    dims = ModelDims(feature_dim=4, hidden=5, edge_dim=3)
    params = ModelParams.init(dims, seed=7)
    b = 7
    mask = np.eye(b, dtype=bool)
    mask[0, 1] = mask[1, 2] = mask[4, 6] = True
    tape = Tape()
    gat_cross_forward(tape, Tensor(rng.standard_normal((b, 5))),
                      np.where(mask, 0.5, 0.0), mask, params)
    alpha = [r.output for r in tape.operations() if r.op == "row_softmax"][-1].value
    checks.append(np.all(np.abs(alpha.sum(axis=1) - 1.0) <= 1e-12))

    report("criterion-7 analytic-spot-values", all(checks),
           f"{sum(checks)}/{len(checks)} spot checks hold")


# -- criterion 8: ablate determinism ------------------------------------------

@pytest.mark.slow
def test_criterion_8_ablate_determinism(tmp_path):
    import json
    from msgda.cli import main

    config = {
        "out_dir": str(tmp_path / "out"),
        "seeds": [0],
        "variant": "+csd+smst+ar",
        "suite": {
            "feature_dim": 6,
            "rng_seed": 5,
            "shift_schedule": [0.5, 2.0],
            "target": {"num_nodes": 80, "homophily": 0.4, "mean_degree": 5.0},
            "source_template": {"num_nodes": 80, "homophily": 0.4,
                                "mean_degree": 4.0, "label_flip_rate": 0.2},
        },
        "train": {"epochs": 3, "batch_size": 32, "hidden": 16},
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))

    assert main(["ablate", "--config", str(cfg_path)]) == 0
    out = tmp_path / "out"
    first = {p.relative_to(out): p.read_bytes() for p in out.rglob("*.csv")}
    assert main(["ablate", "--config", str(cfg_path)]) == 0
    second = {p.relative_to(out): p.read_bytes() for p in out.rglob("*.csv")}
    identical = first == second and len(first) > 0
    report("criterion-8 ablate-determinism", identical,
           f"{len(first)} CSV files byte-identical across reruns")


# -- criterion 9: metric oracles ----------------------------------------------

def test_criterion_9_metric_oracles():
    rng = np.random.default_rng(9)
    f1_exact = True
    auc_worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 21))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = np.round(rng.random(n), 2)
        hard = (scores >= 0.5).astype(int)
        if f1(labels, hard) != f1_bruteforce(labels, hard):
            f1_exact = False
        auc_worst = max(auc_worst, abs(auc_roc(labels, scores)
                                       - auc_pair_counting(labels, scores)))
    report("criterion-9 metric-oracles", f1_exact and auc_worst <= 1e-12,
           f"F1 exact on 100 instances, AUC max gap {auc_worst:.2e}")
