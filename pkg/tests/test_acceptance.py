"""Acceptance criteria 1-10, one test per criterion.

Each test prints a PASS/FAIL line (collected again in the terminal summary)
and then asserts, so a failing criterion fails the suite.
"""
import csv
import math
import time

import numpy as np
import pytest

from curriloc.cli import main
from curriloc.core import ImageRecord, Pose, cosine, euclidean
from curriloc.encoder import encoder_backward, encoder_forward, encoder_init
from curriloc.losses import (BASE_KINDS, CURRICULUM_KINDS, LossParams, LossSpec, TripletBatch,
                             curriculum_forward, curriculum_gradient, curriculum_weight, loss_forward,
                             loss_gradient)
from curriloc.mining import MiningConfig, triplet_stream
from curriloc.retrieval import (RetrievalConfig, VisualMap, coarse_localize, fine_localize,
                                room_representatives, single_step_localize)
from fdcheck import fd_safe, random_batch
from oracles import central_difference, linear_scan, max_relative_error, random_unit_rows
from verdicts import record

FD_PARAMS = {
    "TL": LossParams(margin=0.5),
    "LE": LossParams(margin=0.5),
    "LT": LossParams(margin=0.5),
    "SH": LossParams(margin=0.5),
    "BH": LossParams(margin=0.5),
    "CL": LossParams(margin=0.25, gamma=4.0),
    "AL": LossParams(alpha_deg=40.0),
}
CURRICULUM = sorted(CURRICULUM_KINDS)


def curriculum_spec(kind):
    return LossSpec(kind, LossParams(margin=0.75), LossParams(margin=1.0))


def test_criterion_01_loss_ordering():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = -math.inf
    for _ in range(1000):
        b = random_batch(rng, int(rng.choice([2, 4, 8, 16])), int(rng.choice([4, 64])))
        p = LossParams(margin=float(rng.uniform(0.0, 2.0)))
        tl, lt, bh = (loss_forward(k, p, b) for k in ("TL", "LT", "BH"))
        worst = max(worst, tl - lt, lt - bh)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 5.0
    record(1, ok, f"TL <= LT <= BH on 1000 batches, worst violation {worst:.2e}, {elapsed:.2f}s")
    assert ok


def _fd_error(f, grads, arrays):
    return max_relative_error(grads, central_difference(f, arrays, h=1e-5))


def test_criterion_02_gradients():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    cases = [(k, None) for k in BASE_KINDS] + [(k, w) for k in CURRICULUM for w in (0.0, 0.25, 0.5, 1.0)]
    worst, skipped = 0.0, 0
    for kind, w in cases:
        checked = 0
        while checked < 100:
            b = random_batch(rng, int(rng.integers(2, 6)), 5)
            arrays = [b.anchors.copy(), b.positives.copy(), b.negatives.copy()]
            if w is None:
                p = FD_PARAMS[kind]
                if not fd_safe(kind, p, b):
                    skipped += 1
                    continue
                err = _fd_error(lambda: loss_forward(kind, p, TripletBatch(*arrays)),
                                loss_gradient(kind, p, b), arrays)
            else:
                spec = curriculum_spec(kind)
                if not all(fd_safe(k, p, b) for k, p in spec.components()):
                    skipped += 1
                    continue
                err = _fd_error(lambda: curriculum_forward(spec, w, TripletBatch(*arrays)),
                                curriculum_gradient(spec, w, b), arrays)
            worst = max(worst, err)
            checked += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 60.0
    record(2, ok, f"{len(cases)} loss/weight cases x 100 batches, max rel error {worst:.2e} "
                  f"({skipped} near-kink batches skipped), {elapsed:.1f}s")
    assert ok


def test_criterion_03_full_chain():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    worst, done = 0.0, 0
    while done < 20:
        kind = CURRICULUM[done % len(CURRICULUM)]
        spec = curriculum_spec(kind)
        n = int(rng.integers(2, 5))
        w = float(rng.uniform())
        params = encoder_init((6, 8, 4), int(rng.integers(2 ** 31)))
        for b in params.biases:
            b[:] = rng.normal(0.0, 0.1, b.shape)
        x = rng.standard_normal((3 * n, 6))

        def loss():
            d = encoder_forward(params, x)
            return curriculum_forward(spec, w, TripletBatch(d[:n], d[n:2 * n], d[2 * n:]))

        d = encoder_forward(params, x)
        batch = TripletBatch(d[:n], d[n:2 * n], d[2 * n:])
        if not all(fd_safe(k, p, batch) for k, p in spec.components()):
            continue
        upstream = np.concatenate(curriculum_gradient(spec, w, batch), axis=0)
        analytic = encoder_backward(params, x, upstream).arrays()
        worst = max(worst, max_relative_error(analytic, central_difference(loss, params.arrays(), h=1e-5)))
        done += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 60.0
    record(3, ok, f"loss through 6-8-4 encoder, 20 instances, max rel error {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_04_curriculum_endpoints():
    ok = True
    for total in (1, 7, 1000, 50000):
        for shape in ("linear", "cosine"):
            ok &= curriculum_weight(0, total, shape) == 1.0
            ok &= curriculum_weight(total, total, shape) == 0.0
    rng = np.random.default_rng(4)
    worst = 0.0
    for kind in CURRICULUM:
        spec = curriculum_spec(kind)
        (k1, p1), (k2, p2) = spec.components()
        for _ in range(20):
            b = random_batch(rng, int(rng.integers(1, 17)), 8)
            worst = max(worst, abs(curriculum_forward(spec, 1.0, b) - loss_forward(k1, p1, b)),
                        abs(curriculum_forward(spec, 0.0, b) - loss_forward(k2, p2, b)))
    ok &= worst <= 1e-12
    record(4, ok, f"weights 1 at start and 0 at end exactly; endpoint blends differ from components by {worst:.1e}")
    assert ok


def _random_map(rng):
    n = int(rng.integers(1, 501))
    rooms = int(rng.integers(1, 11))
    d = int(rng.integers(2, 17))
    desc = random_unit_rows(rng, n, d)
    dup = rng.uniform(size=n) < 0.05  # exact duplicates exercise tie-breaking
    for i in np.flatnonzero(dup):
        desc[i] = desc[int(rng.integers(n))]
    labels = [f"room{int(k)}" for k in rng.integers(rooms, size=n)]
    return VisualMap(desc, rng.uniform(0, 20, (n, 2)), labels, [f"e{i}" for i in range(n)])


def test_criterion_05_retrieval_matches_linear_scan():
    rng = np.random.default_rng(5)
    mismatches = checks = 0
    for t in range(200):
        vmap = _random_map(rng)
        reps = room_representatives(vmap)
        cfg = RetrievalConfig(metric="euclidean" if t % 2 == 0 else "cosine")
        queries = list(random_unit_rows(rng, 3, vmap.descriptors.shape[1])) + [vmap.descriptors[0]]
        for q in queries:
            rooms = coarse_localize(q, reps, cfg)
            rep_row, _ = linear_scan(q, reps.descriptors, metric=cfg.metric)
            mismatches += rooms[0][0] != reps.rooms[rep_row]

            names = [r for r, _ in rooms]
            cand = [i for i, r in enumerate(vmap.rooms) if r in names]
            mismatches += fine_localize(q, vmap, names, cfg).retrieved_index != \
                linear_scan(q, vmap.descriptors, cand, cfg.metric)[0]
            mismatches += single_step_localize(q, vmap, cfg).retrieved_index != \
                linear_scan(q, vmap.descriptors, None, cfg.metric)[0]
            checks += 3
    ok = mismatches == 0
    record(5, ok, f"{checks} coarse/fine/single-step lookups on 200 maps, {mismatches} mismatches")
    assert ok


def test_criterion_06_unit_sphere_identity():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(10_000):
        d = int(rng.integers(2, 65))
        a, b = random_unit_rows(rng, 2, d)
        worst = max(worst, abs(euclidean(a, b) ** 2 - (2.0 - 2.0 * cosine(a, b))))
    ok = worst <= 1e-10
    record(6, ok, f"10^4 unit pairs, max |d^2 - (2 - 2 cos)| = {worst:.1e}")
    assert ok


# --------------------------------------------------------------------------
# desk-scale run, shared by criteria 7-9

DESK_SEED = "3"


def _metrics(run_dir):
    with open(run_dir / "metrics.csv", newline="") as fh:
        return {k: float(v) for k, v in list(csv.reader(fh))[1:]}


def _run(argv):
    code = main(argv)
    assert code == 0, f"command failed: {' '.join(argv)}"


def desk_run(root):
    """Generate, train both stages and evaluate, all through the CLI."""
    start = time.perf_counter()
    data = str(root / "data")
    _run(["gen-synth", "--rooms", "8", "--per-room", "50", "--seed", DESK_SEED, "--out", data])
    stages = {"coarse": ["--loss", "CV_TL_BH", "--m1", "0.75", "--m2", "1.0"],
              "fine": ["--loss", "CV_TL_LT", "--m1", "0.5", "--m2", "0.5"]}
    for stage, loss in stages.items():
        common = ["train", "--stage", stage, "--data", data, *loss, "--n", "4", "--seed", DESK_SEED]
        _run([*common, "--triplets", "5000", "--out", str(root / stage)])
        # untrained baseline: same initialization, zero learning rate
        _run([*common, "--triplets", "4", "--lr", "0", "--out", str(root / f"base_{stage}")])
    for prefix in ("", "base_"):
        for split in ("test_cloudy", "test_night"):
            _run(["evaluate", "--coarse", str(root / f"{prefix}coarse" / "model.mloc"),
                  "--fine", str(root / f"{prefix}fine" / "model.mloc"), "--data", data, "--split", split,
                  "--d", "0.5", "--seed", DESK_SEED, "--out", str(root / f"eval_{prefix}{split}")])
    return time.perf_counter() - start


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    return root, desk_run(root)


def evaluate_desk(root, split, out, *extra):
    _run(["evaluate", "--coarse", str(root / "coarse" / "model.mloc"), "--fine", str(root / "fine" / "model.mloc"),
          "--data", str(root / "data"), "--split", split, "--d", "0.5", "--seed", DESK_SEED,
          "--out", str(out), *extra])
    return _metrics(out)


def test_criterion_07_desk_scale_run(desk):
    root, elapsed = desk
    same = _metrics(root / "eval_test_cloudy")
    night = _metrics(root / "eval_test_night")
    base = _metrics(root / "eval_base_test_night")
    room_gain = night["room_accuracy"] - base["room_accuracy"]
    r1_gain = night["recall_at_1"] - base["recall_at_1"]
    ok = same["room_accuracy"] >= 0.95 and room_gain >= 0.10 and r1_gain >= 0.10 and elapsed < 300
    record(7, ok, f"same-condition room acc {same['room_accuracy']:.3f}; shifted room acc "
                  f"{night['room_accuracy']:.3f} vs baseline {base['room_accuracy']:.3f} (+{100 * room_gain:.1f} pp), "
                  f"R@1 {night['recall_at_1']:.3f} vs {base['recall_at_1']:.3f} (+{100 * r1_gain:.1f} pp), "
                  f"{elapsed:.0f}s")
    assert ok


def test_criterion_08_effects(desk, tmp_path):
    root, _ = desk
    plain = (root / "eval_test_night" / "metrics.csv").read_bytes()
    identities = {
        "noise": ["--effect", "noise", "--sigma", "0"],
        "occlusion": ["--effect", "occlusion", "--columns", "0", "--perturb-map"],
        "blur": ["--effect", "blur", "--kernel", "1", "--perturb-map"],
    }
    identical = True
    for name, flags in identities.items():
        evaluate_desk(root, "test_night", tmp_path / f"id_{name}", *flags)
        identical &= (tmp_path / f"id_{name}" / "metrics.csv").read_bytes() == plain

    shown = []
    monotone = True
    for split in ("test_cloudy", "test_night"):
        runs = [evaluate_desk(root, split, tmp_path / f"{split}_{s}", "--effect", "noise", "--sigma", str(s))
                for s in (0, 10, 20, 50)]
        acc = [m["room_accuracy"] for m in runs]
        monotone &= all(b <= a + 0.02 for a, b in zip(acc, acc[1:]))
        shown.append(f"{split} room acc " + "/".join(f"{a:.3f}" for a in acc)
                     + " (R@1 " + "/".join(f"{m['recall_at_1']:.3f}" for m in runs) + ")")
    ok = identical and monotone
    record(8, ok, f"zero-magnitude effects bit-identical: {identical}; sigma 0/10/20/50: {'; '.join(shown)}")
    assert ok


def test_criterion_09_determinism(desk, tmp_path):
    root, _ = desk
    desk_run(tmp_path)
    names = ["coarse/model.mloc", "fine/model.mloc", "coarse/train_log.csv", "fine/train_log.csv",
             "base_coarse/model.mloc", "base_fine/model.mloc"]
    names += [f"eval_{p}{s}/{f}" for p in ("", "base_") for s in ("test_cloudy", "test_night")
              for f in ("metrics.csv", "queries.csv")]
    differing = [n for n in names if (root / n).read_bytes() != (tmp_path / n).read_bytes()]
    ok = not differing
    record(9, ok, f"second run: {len(names) - len(differing)}/{len(names)} checkpoints, logs and metric files "
                  f"bitwise identical" + (f" (differ: {differing})" if differing else ""))
    assert ok


def test_criterion_10_fine_mining_contract():
    rng = np.random.default_rng(10)
    records = []
    for room in range(6):
        for k in range(60):
            x, y = rng.uniform(0, 2.0, 2) + [2.5 * room, 0.0]
            records.append(ImageRecord(f"r{room}_{k}", f"room{room}", "cloudy", Pose(float(x), float(y)),
                                       features=np.zeros(1)))
    pose = {r.id: (r.pose.x, r.pose.y) for r in records}
    cfg = MiningConfig("fine", r_plus=0.4, r_minus=0.4, seed=11, count=100_000)
    bad = total = 0
    for t in triplet_stream(records, cfg):
        (ax, ay), (px, py), (nx, ny) = pose[t.anchor_id], pose[t.positive_id], pose[t.negative_id]
        bad += not (math.hypot(ax - px, ay - py) <= 0.4 and math.hypot(ax - nx, ay - ny) > 0.4)
        total += 1
    ok = total == 100_000 and bad == 0
    record(10, ok, f"{total} fine triplets, {bad} violate d(a,p) <= 0.4 < d(a,n)")
    assert ok
