"""Acceptance checklist: nine criteria, one verdict line each.

Run with::

    python3 -m pytest tests/test_acceptance.py -v

Each criterion prints its own [PASS]/[FAIL] line with the measured
numbers (visible even under pytest's output capture). Criteria 4-6 use
the scikit-learn digits set by default; point DRIFTLAB_MNIST_DIR at a
directory holding the four standard IDX files (train-images-idx3-ubyte
and friends) to run the same protocol on MNIST instead.
"""

import math
import os
import time

import numpy as np
import pytest

from conftest import check_grads, max_rel_err, nudge_off_kinks
from driftlab.cli import main as cli_main
from driftlab.data import LabeledDataset, gen_gaussian_clusters, read_idx
from driftlab.harness import (
    MethodConfig,
    RunRecord,
    avg_forgetting,
    avg_incremental_accuracy,
    prototype_distance_trace,
    run_sequence,
    split_tasks,
)
from driftlab.losses import (
    ImportanceMap,
    lwf_align_loss,
    mine_triplets,
    quadratic_penalty,
    triplet_loss,
)
from driftlab.models import EmbeddingNet, snapshot
from driftlab.prototypes import DriftField, KernelConfig, interpolate_drift
from driftlab.tensor import (
    Tensor,
    add,
    conv2d,
    index_rows,
    l2_normalize,
    matmul,
    maxpool2d,
    mul,
    relu,
    reshape,
    softmax_cross_entropy,
    sqrt,
    tmean,
    tsum,
)


def _verdict(capfd, n, ok, detail):
    with capfd.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
    assert ok, f"criterion {n}: {detail}"


@pytest.fixture(scope="module")
def image_data():
    mnist_dir = os.environ.get("DRIFTLAB_MNIST_DIR")
    if mnist_dir:
        train = read_idx(os.path.join(mnist_dir, "train-images-idx3-ubyte"),
                         os.path.join(mnist_dir, "train-labels-idx1-ubyte"))
        test = read_idx(os.path.join(mnist_dir, "t10k-images-idx3-ubyte"),
                        os.path.join(mnist_dir, "t10k-labels-idx1-ubyte"))
        return train, test
    sk = pytest.importorskip("sklearn.datasets",
                             reason="digit experiments need scikit-learn")
    bunch = sk.load_digits()
    feats = bunch.data.astype(np.float64) / 16.0
    return LabeledDataset(feats, bunch.target.astype(np.int64)), None


def image_split(image_data, n_tasks, seed):
    train, test = image_data
    return split_tasks(train, n_tasks, seed=seed, test=test)


# -------------------------------------------------- 1: interpolation oracle


def _brute_drift(pos, disp, q, sigma):
    n, d = pos.shape
    num = [0.0] * d
    den = 0.0
    for i in range(n):
        s = 0.0
        for k in range(d):
            s += (pos[i][k] - q[k]) ** 2
        w = math.exp(-s / (2.0 * sigma * sigma))
        den += w
        for k in range(d):
            num[k] += w * disp[i][k]
    return np.array([v / den for v in num])


def test_criterion_1_interpolation_matches_brute_force(capfd):
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        rng = np.random.default_rng(1000 + i)
        n = int(rng.integers(1, 40))
        d = int(rng.integers(1, 7))
        sigma = float(10.0 ** rng.uniform(-1.3, 0.7))
        pos = rng.normal(size=(n, d))
        disp = rng.normal(size=(n, d))
        q = pos[int(rng.integers(n))] + 0.5 * sigma * rng.normal(size=d)
        got = interpolate_drift(DriftField(pos, disp), q,
                                KernelConfig(sigma=sigma))
        err = float(np.max(np.abs(got - _brute_drift(pos, disp, q, sigma))))
        worst = max(worst, err)
    dt = time.perf_counter() - t0
    ok = worst < 1e-10 and dt < 1.0
    _verdict(capfd, 1, ok,
             f"drift interpolation vs brute-force double loop, 100 random "
             f"instances: max abs err {worst:.2e} (limit 1e-10), {dt:.2f}s")


# ------------------------------------------------------ 2: kernel invariants


def test_criterion_2_kernel_invariants(capfd):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    pos = rng.normal(size=(25, 4))

    delta = rng.normal(size=4)
    const_field = DriftField(pos, np.tile(delta, (25, 1)))
    const_err = 0.0
    for _ in range(10):
        anchor = pos[int(rng.integers(25))]
        for sigma in (0.05, 0.3, 2.0, 50.0):
            # keep the query inside the kernel's floating-point reach
            q = anchor + 0.3 * sigma * rng.normal(size=4)
            got = interpolate_drift(const_field, q, KernelConfig(sigma=sigma))
            const_err = max(const_err, float(np.max(np.abs(got - delta))))

    disp = rng.normal(size=(25, 4))
    field = DriftField(pos, disp)
    shift = 10.0 * rng.normal(size=4)
    trans_err = 0.0
    for _ in range(10):
        q = pos[int(rng.integers(25))] + 0.2 * rng.normal(size=4)
        a = interpolate_drift(field, q, KernelConfig(sigma=0.4))
        b = interpolate_drift(DriftField(pos + shift, disp), q + shift,
                              KernelConfig(sigma=0.4))
        trans_err = max(trans_err, float(np.max(np.abs(a - b))))

    q = pos[3] + 0.2 * rng.normal(size=4)
    wide = interpolate_drift(field, q, KernelConfig(sigma=1e6))
    mean_err = float(np.max(np.abs(wide - disp.mean(axis=0))))

    # separated points, tiny sigma: only the nearest point keeps any mass
    sep_pos = np.zeros((8, 3))
    sep_pos[:, 0] = 2.0 * np.arange(8)
    sep_disp = rng.normal(size=(8, 3))
    q = sep_pos[4] + np.array([3e-3, 0.0, 0.0])
    narrow = interpolate_drift(DriftField(sep_pos, sep_disp), q,
                               KernelConfig(sigma=1e-3))
    near_err = float(np.max(np.abs(narrow - sep_disp[4])))

    dt = time.perf_counter() - t0
    ok = (const_err < 1e-12 and trans_err < 1e-9 and mean_err < 1e-8
          and near_err < 1e-12 and dt < 1.0)
    _verdict(capfd, 2, ok,
             f"kernel invariants: constant-field err {const_err:.1e}, "
             f"translation err {trans_err:.1e}, sigma=1e6 vs mean "
             f"{mean_err:.1e}, sigma->0 nearest {near_err:.1e}, {dt:.2f}s")


# -------------------------------------------------------- 3: gradient suite


def _param_fd(params, loss_fn, h=1e-5):
    """Worst relative error between backprop and central differences,
    taken over every coordinate of every parameter."""
    for p in params:
        p.grad = np.zeros_like(p.data)
    loss_fn().backward()
    worst = 0.0
    for p in params:
        num = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_fn().item()
            flat[i] = keep - h
            down = loss_fn().item()
            flat[i] = keep
            nflat[i] = (up - down) / (2.0 * h)
        worst = max(worst, max_rel_err(p.grad, num))
    return worst


def _fresh_model(rng, dims=(5, 3), hidden=(8,)):
    return EmbeddingNet(dims[0], dims[1], hidden=hidden,
                        seed=int(rng.integers(10000)))


def test_criterion_3_gradient_suite(capfd):
    t0 = time.perf_counter()
    worst: dict = {}

    def probe(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for inst in range(20):
        rng = np.random.default_rng(5000 + inst)

        def dense(l):
            h = add(matmul(l[0], l[1]), l[2])
            return tmean(mul(h, h))
        probe("dense", check_grads(dense, [rng.normal(size=(4, 5)),
                                           rng.normal(size=(5, 3)),
                                           rng.normal(size=3)]))

        probe("relu", check_grads(
            lambda l: tmean(relu(l[0])),
            [nudge_off_kinks(rng.normal(size=(6, 5)))]))

        probe("l2_normalize", check_grads(
            lambda l: tsum(mul(l2_normalize(l[0]), l[1])),
            [rng.normal(size=(5, 4)) + 0.1, rng.normal(size=(5, 4))]))

        probe("conv2d", check_grads(
            lambda l: tmean(mul(conv2d(l[0], l[1], l[2]),
                                conv2d(l[0], l[1], l[2]))),
            [rng.normal(size=(2, 1, 6, 6)), rng.normal(size=(2, 1, 3, 3)),
             rng.normal(size=2)]))

        probe("maxpool2d", check_grads(
            lambda l: tmean(mul(maxpool2d(l[0], 2), maxpool2d(l[0], 2))),
            [rng.normal(size=(2, 2, 4, 4))]))

        probe("sqrt", check_grads(
            lambda l: tsum(sqrt(tmean(mul(l[0], l[0]), axis=1))),
            [rng.normal(size=(4, 6)) + 2.0]))

        idx = rng.integers(0, 5, size=7)
        probe("index_rows", check_grads(
            lambda l, idx=idx: tmean(mul(index_rows(l[0], idx), l[1])),
            [rng.normal(size=(5, 3)), rng.normal(size=(7, 3))]))

        probe("reshape", check_grads(
            lambda l: tsum(mul(reshape(l[0], (6, 2)), l[1])),
            [rng.normal(size=(3, 4)), rng.normal(size=(6, 2))]))

        labels = rng.integers(0, 5, size=6)
        probe("cross_entropy", check_grads(
            lambda l, y=labels: softmax_cross_entropy(l[0], y),
            [rng.normal(size=(6, 5))]))

        # triplet loss on a normalized embedding, mined once, off the hinge
        for attempt in range(50):
            arng = np.random.default_rng(9000 + 100 * inst + attempt)
            x = arng.normal(size=(8, 4))
            y = arng.integers(0, 2, size=8)
            if len(np.unique(y)) < 2:
                continue
            trip = mine_triplets(y, Tensor(x), "random", margin=0.2,
                                 rng=np.random.default_rng(1))
            if len(trip) == 0:
                continue
            z = x / np.linalg.norm(x, axis=1, keepdims=True)
            dpos = np.linalg.norm(z[trip.anchors] - z[trip.positives], axis=1)
            dneg = np.linalg.norm(z[trip.anchors] - z[trip.negatives], axis=1)
            if np.min(np.abs(dpos - dneg + 0.2)) > 2e-3:
                break
        else:
            raise AssertionError("no hinge-safe triplet instance found")
        probe("triplet", check_grads(
            lambda l, t=trip: triplet_loss(l2_normalize(l[0]), t), [x]))

        # alignment against a diverged snapshot, differentiated through
        # the live model's parameters
        model = _fresh_model(rng)
        snap = snapshot(model)
        mrng = np.random.default_rng(300 + inst)
        for p in model.params:
            p.data = p.data + 0.3 * mrng.normal(size=p.data.shape)
        batch = mrng.normal(size=(4, 5))
        probe("lwf_align", _param_fd(
            model.params, lambda: lwf_align_loss(model, snap, batch)))

        # quadratic penalties under both importance kinds
        model2 = _fresh_model(rng)
        snap2 = snapshot(model2)
        for p in model2.params:
            p.data = p.data + 0.2 * mrng.normal(size=p.data.shape)
        for kind in ("fisher", "mas"):
            imp = ImportanceMap(kind, tuple(
                np.abs(mrng.normal(size=p.data.shape)) for p in model2.params))
            probe(f"quadratic_{kind}", _param_fd(
                model2.params,
                lambda m=model2, s=snap2, i=imp: quadratic_penalty(m, s, i)))

    dt = time.perf_counter() - t0
    top = max(worst.values())
    ok = top < 1e-4 and dt < 30.0
    names = ", ".join(f"{k} {v:.1e}" for k, v in sorted(worst.items()))
    _verdict(capfd, 3, ok,
             f"finite-difference suite, 20 instances per item: worst rel err "
             f"{top:.2e} (limit 1e-4) [{names}], {dt:.1f}s")


# ----------------------------------------------- 4: retention gap, 5 tasks


C4_CONFIG = dict(epochs=30, lr=5e-5, batch_size=64, embedding_dim=64,
                 hidden=(128,), mining="random")


def test_criterion_4_embedding_beats_softmax_over_5_tasks(image_data, capfd):
    t0 = time.perf_counter()
    rows = []
    for seed in (0, 1, 2):
        seq = image_split(image_data, 5, seed)
        eft = run_sequence(MethodConfig("E-FT", seed=seed, **C4_CONFIG), seq)
        ft = run_sequence(MethodConfig("FT", seed=seed, **C4_CONFIG), seq)
        rows.append((seed, avg_incremental_accuracy(eft, 5),
                     avg_incremental_accuracy(ft, 5)))
    dt = time.perf_counter() - t0
    ok = all(e >= f + 0.10 for _, e, f in rows) and dt < 600.0
    detail = ", ".join(f"seed {s}: E-FT {e:.3f} vs FT {f:.3f} ({e - f:+.3f})"
                       for s, e, f in rows)
    _verdict(capfd, 4, ok,
             f"A_5 on 5x2 class-incremental digits, need +0.10 every seed: "
             f"{detail}, {dt:.0f}s")


# --------------------------------------------- 5: drift compensation payoff


C5_CONFIG = dict(epochs=40, lr=1e-4, batch_size=64, embedding_dim=2,
                 hidden=(128,), mining="random")


def test_criterion_5_compensation_helps_2d_two_task(image_data, capfd):
    t0 = time.perf_counter()
    rows = []
    for seed in (0, 1, 2):
        seq = image_split(image_data, 2, seed)
        old = seq.tasks[0].classes
        plain = run_sequence(MethodConfig("E-FT", seed=seed, **C5_CONFIG), seq)
        comp = run_sequence(MethodConfig("E-FT", sdc=True, sigma=0.2,
                                         seed=seed, **C5_CONFIG), seq)
        d_plain = float(np.mean([plain.proto_distance[2][c] for c in old]))
        d_comp = float(np.mean([comp.proto_distance[2][c] for c in old]))
        rows.append((seed, avg_incremental_accuracy(plain, 2),
                     avg_incremental_accuracy(comp, 2), d_plain, d_comp))
    dt = time.perf_counter() - t0
    ok = (all(ac >= ap for _, ap, ac, _, _ in rows)
          and all(dc < dp for _, _, _, dp, dc in rows) and dt < 600.0)
    detail = "; ".join(
        f"seed {s}: A_2 {ap:.3f}->{ac:.3f}, proto dist {dp:.3f}->{dc:.3f}"
        for s, ap, ac, dp, dc in rows)
    _verdict(capfd, 5, ok,
             f"2-d two-task split, compensation on vs off: {detail}, {dt:.0f}s")


# ------------------------------------------------------ 6: regularizer sanity


C6_CONFIG = dict(epochs=30, lr=5e-5, batch_size=64, embedding_dim=64,
                 hidden=(128,), mining="random")


def test_criterion_6_regularizers_protect_first_task(image_data, capfd):
    t0 = time.perf_counter()

    # exact-zero penalty at the snapshot, under both importance kinds
    model = EmbeddingNet(5, 3, hidden=(8,), seed=1)
    snap = snapshot(model)
    rng = np.random.default_rng(0)
    zero_ok = True
    for kind in ("fisher", "mas"):
        imp = ImportanceMap(kind, tuple(
            np.abs(rng.normal(size=p.data.shape)) for p in model.params))
        zero_ok &= quadratic_penalty(model, snap, imp).item() == 0.0

    rows = []
    for seed in (0, 1, 2):
        seq = image_split(image_data, 2, seed)
        base = run_sequence(MethodConfig("E-FT", seed=seed, **C6_CONFIG), seq)
        accs = {"E-FT": base.accuracy[2][1]}
        for m in ("E-LwF", "E-EWC", "E-MAS"):
            rec = run_sequence(MethodConfig(m, seed=seed, **C6_CONFIG), seq)
            accs[m] = rec.accuracy[2][1]
        rows.append((seed, accs))
    dt = time.perf_counter() - t0
    held = all(accs[m] >= accs["E-FT"]
               for _, accs in rows for m in ("E-LwF", "E-EWC", "E-MAS"))
    ok = held and zero_ok and dt < 900.0
    detail = "; ".join(
        f"seed {s}: first-task acc after task 2 = "
        + ", ".join(f"{m} {accs[m]:.3f}" for m in
                    ("E-FT", "E-LwF", "E-EWC", "E-MAS"))
        for s, accs in rows)
    _verdict(capfd, 6, ok,
             f"penalty at snapshot exactly zero: {zero_ok}; {detail}, {dt:.0f}s")


# --------------------------------------------------------- 7: metric formulas


def test_criterion_7_metric_formulas(capfd):
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(42)
    for _ in range(50):
        n = int(rng.integers(2, 8))
        matrix = [[float(rng.uniform()) for _ in range(k + 1)]
                  for k in range(n)]
        rec = RunRecord(method="E-FT", seed=0, n_tasks=n, task_classes=[])
        for k, row in enumerate(matrix, start=1):
            for j, a in enumerate(row, start=1):
                rec.set_acc(k, j, a)
        for k in range(1, n + 1):
            want = sum(matrix[k - 1][:k]) / k
            worst = max(worst, abs(avg_incremental_accuracy(rec, k) - want))
        for k in range(2, n + 1):
            want = sum(
                max(matrix[l - 1][j - 1] - matrix[k - 1][j - 1]
                    for l in range(j, k))
                for j in range(1, k)
            ) / (k - 1)
            worst = max(worst, abs(avg_forgetting(rec, k) - want))
    dt = time.perf_counter() - t0
    ok = worst < 1e-12 and dt < 1.0
    _verdict(capfd, 7, ok,
             f"A_k and F_k vs hand computation on 50 random matrices: "
             f"max abs err {worst:.2e} (limit 1e-12), {dt:.2f}s")


# ------------------------------------------------------ 8: determinism replay


def test_criterion_8_determinism_replay(tmp_path, capfd):
    t0 = time.perf_counter()
    lines = [
        "[experiment]",
        "seeds = 0 1",
        "",
        "[dataset]",
        "source = synthetic",
        "n_classes = 4",
        "per_class = 30",
        "dim = 6",
        "n_tasks = 2",
        "",
        "[method E-FT+SDC]",
        "method = E-FT",
        "sdc = true",
        "epochs = 8",
        "lr = 0.001",
        "batch_size = 16",
        "embedding_dim = 2",
        "hidden = 24",
        "",
        "[method E-EWC]",
        "epochs = 8",
        "lr = 0.001",
        "batch_size = 16",
        "embedding_dim = 2",
        "hidden = 24",
    ]
    identical = True
    outs = []
    for name in ("first", "second"):
        ini = tmp_path / f"{name}.ini"
        ini.write_text("\n".join(
            [lines[0], f"output_dir = {tmp_path / name}"] + lines[1:]) + "\n")
        code = cli_main(["run", str(ini)])
        identical &= code == 0
        outs.append(tmp_path / name)
    n_files = 0
    for rel in sorted(p.relative_to(outs[0])
                      for p in outs[0].glob("*/*/a_matrix.csv")):
        n_files += 1
        identical &= ((outs[0] / rel).read_bytes()
                      == (outs[1] / rel).read_bytes())
    identical &= n_files == 4  # 2 methods x 2 seeds
    dt = time.perf_counter() - t0
    _verdict(capfd, 8, identical,
             f"same config run twice: {n_files} a_matrix.csv files "
             f"byte-identical across replays, {dt:.0f}s")


# -------------------------------------------------------- 9: frozen baseline


def test_criterion_9_frozen_baseline_contract(capfd):
    t0 = time.perf_counter()
    ds = gen_gaussian_clusters(6, 30, 8, spread=0.25, seed=0)
    seq = split_tasks(ds, 3, seed=0)
    rec = run_sequence(MethodConfig("E-Fix", epochs=10, lr=1e-3,
                                    batch_size=16, embedding_dim=4,
                                    hidden=(32,), seed=0), seq)
    digests_equal = (rec.param_digest[1] == rec.param_digest[2]
                     == rec.param_digest[3])
    spread = 0.0
    for _, points in prototype_distance_trace(rec).items():
        ds_ = [d for _, d in points]
        spread = max(spread, max(ds_) - min(ds_))
    dt = time.perf_counter() - t0
    ok = digests_equal and spread == 0.0
    _verdict(capfd, 9, ok,
             f"freeze-after-first-task: parameter digests identical across "
             f"3 tasks = {digests_equal}, prototype-distance trace spread "
             f"= {spread}, {dt:.0f}s")
