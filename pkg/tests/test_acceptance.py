"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line, shown in the terminal summary.
Run alone with ``pytest tests/test_acceptance.py -s``.
"""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from sargazo.architectures import FAMILIES, ArchSpec, build
from sargazo.checkpoint import load_checkpoint, save_checkpoint
from sargazo.data.dataset import ImageSet, split_dataset
from sargazo.data.labels import LevelLabel, ManifestRecord
from sargazo.data.synth import synth_images
from sargazo.data.transforms import NormStats
from sargazo.errors import CheckpointError
from sargazo.evaluation import accuracy, adjacent_accuracy, confusion, normalize_rows
from sargazo.experiments import DESK_INPUT_SIZE, DESK_SCALE, cmd_eval, cmd_grid, cmd_synth, cmd_train, \
    load_model, transfer_benchmark
from sargazo.gradcheck import run_suite, threshold_for
from sargazo.layers import EVAL, Dropout
from sargazo.training import REGIME_TITLES, REGIMES, TrainConfig, apply_regime, pretrain_source, train

MINI = ArchSpec("vgg", "1/16", 32)


def image_set(per_class, side, seed):
    pixels, labels, _ = synth_images(per_class, side, seed)
    raw = pixels.transpose(0, 3, 1, 2).astype(np.float32) / 255
    return ImageSet(raw, labels).normalized(NormStats.from_images(raw))


def pre_head(net, state):
    names = {n.name for n in net.feature_nodes()}
    return {k: v for k, v in state.items() if k.rsplit(".", 1)[0] in names}


def head(net, state):
    names = {n.name for n in net.head_nodes()}
    return {k: v for k, v in state.items() if k.rsplit(".", 1)[0] in names}


def test_c1_gradient_correctness(verdict):
    start = time.perf_counter()
    results = run_suite(seeds=range(5))
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 4)).astype(np.float32)
    identity = all(np.array_equal(Dropout(rate).forward(x, EVAL)[0], x) for rate in (0.0, 0.3, 0.5, 0.9))
    elapsed = time.perf_counter() - start
    worst = ", ".join(f"{k} {e:.1e}/{threshold_for(k):.0e}" for k, (e, _) in results.items())
    required = {"conv", "dense", "relu", "maxpool", "dropout", "batchnorm", "softmax-ce-head"}
    ok = required <= results.keys() and all(p for _, p in results.values()) and identity and elapsed < 120
    verdict("C1 gradient correctness", ok, f"{worst}; dropout eval identity {identity}; {elapsed:.1f}s")


def test_c2_architecture_fidelity(verdict):
    nets = {f: build(ArchSpec(f, DESK_SCALE, DESK_INPUT_SIZE)) for f in FAMILIES}
    blocks = [n.name.split(".")[0] for n in nets["vgg"].nodes if n.layer.kind == "conv"]
    found = {
        "vgg conv blocks": tuple(blocks.count(f"block{i}") for i in range(1, 6)),
        "alexnet conv/dense": (nets["alexnet"].count("conv"), nets["alexnet"].count("dense")),
        "googlenet inception": nets["googlenet"].count("concat"),
        "resnet residual-add": nets["resnet"].count("residual-add"),
    }
    expected = {"vgg conv blocks": (2, 2, 3, 3, 3), "alexnet conv/dense": (5, 3),
                "googlenet inception": 9, "resnet residual-add": 8}
    verdict("C2 architecture fidelity", found == expected, str(found))


@pytest.mark.slow
def test_c3_overfitting_sanity(verdict):
    start = time.perf_counter()
    data = image_set(10, 32, seed=0)
    cfg = TrainConfig(epochs=200, learning_rate=0.01, batch_size=10)
    ck, hist = train(apply_regime(build(MINI, 0), "TS"), data, data, cfg)
    elapsed = time.perf_counter() - start
    # validation set == training set, so this is eval-mode training accuracy
    verdict("C3 overfitting sanity", ck.val_accuracy >= 0.95 and elapsed < 600,
            f"train accuracy {ck.val_accuracy:.3f} first reached at epoch {ck.epoch}; {elapsed:.1f}s")


def test_c4_regime_semantics(verdict):
    source = pretrain_source("vgg", MINI, seed=0, k=8, n_per_class=6,
                             cfg=TrainConfig(epochs=4, learning_rate=0.01, batch_size=8)).checkpoint
    data = image_set(6, 32, seed=1)
    tr, va = data.subset(np.arange(0, len(data), 2)), data.subset(np.arange(1, len(data), 2))
    checks = {}
    for regime in ("FE", "FT"):
        net = apply_regime(build(MINI, 3), regime, source)
        init_head = {k: v.copy() for k, v in head(net, net.state_dict()).items()}
        cfg = TrainConfig(epochs=3, learning_rate=0.02, batch_size=8, regime=regime, source_checkpoint="src")
        ck, _ = train(net, tr, va, cfg)
        src_feat = pre_head(net, source.tensors)
        trained = ck.tensors
        same = [np.array_equal(trained[k], v) for k, v in src_feat.items()]
        checks[regime] = (all(same), not any(same),
                          all(not np.array_equal(trained[k], v) for k, v in init_head.items()))
    fe_frozen, _, fe_head_moved = checks["FE"]
    _, ft_moved, ft_head_moved = checks["FT"]
    ok = fe_frozen and fe_head_moved and ft_moved and ft_head_moved
    verdict("C4 regime semantics", ok,
            f"FE pre-head identical {fe_frozen}, FE head changed {fe_head_moved}; "
            f"FT every pre-head tensor changed {ft_moved}, FT head changed {ft_head_moved}")


@pytest.fixture(scope="module")
def desk_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    cmd_synth(root, per_class=4, side=DESK_INPUT_SIZE, seed=0)
    return root / "manifest.csv"


@pytest.mark.slow
def test_c5_grid_layout_and_transfer_ordering(verdict, desk_manifest, tmp_path):
    start = time.perf_counter()
    result = cmd_grid(desk_manifest, tmp_path / "grid", epochs=2, lr=0.01, batch_size=10, figures=False,
                      source_epochs=1)
    rows = (tmp_path / "grid" / "grid.csv").read_text().splitlines()
    header_ok = rows[0] == "Network," + ",".join(REGIME_TITLES[r] for r in REGIMES) == "Network,F.E.,F.T.,T.S."
    names_ok = [r.split(",")[0] for r in rows[1:]] == ["AlexNet", "GoogleNet", "ResNet18", "VGG16"]
    values = [float(v) for r in rows[1:] for v in r.split(",")[1:]]
    layout_ok = header_ok and names_ok and len(values) == 12 and all(0 <= v <= 1 for v in values)
    layout_ok = layout_ok and all(result.cells[(f, r)].accuracy == pytest.approx(v, abs=5e-5)
                                  for (f, r), v in zip([(f, r) for f in FAMILIES for r in REGIMES], values))
    grid_time = time.perf_counter() - start

    accs = transfer_benchmark("vgg", seeds=range(5))
    mean = {r: float(np.mean(accs[r])) for r in REGIMES}
    order_ok = mean["FT"] >= mean["TS"] and mean["FT"] >= mean["FE"]
    elapsed = time.perf_counter() - start
    verdict("C5 table layout and transfer ordering", layout_ok and order_ok,
            f"4x3 layout {layout_ok} ({grid_time:.0f}s smoke grid); mean accuracy over 5 seeds "
            + ", ".join(f"{REGIME_TITLES[r]} {mean[r]:.3f}" for r in REGIMES) + f"; {elapsed:.0f}s")


def test_c6_evaluation_identities(verdict):
    rng = np.random.default_rng(2024)
    preds, truths = rng.integers(0, 5, 1000), rng.integers(0, 5, 1000)
    m = confusion(preds, truths, 5)
    oracle = np.zeros((5, 5), dtype=int)
    for p, t in zip(preds.tolist(), truths.tolist()):
        oracle[t][p] += 1
    hits = sum(p == t for p, t in zip(preds.tolist(), truths.tolist()))
    near = sum(abs(p - t) <= 1 for p, t in zip(preds.tolist(), truths.tolist()))
    norm, empty = normalize_rows(m)
    row_err = float(np.max(np.abs(norm[~empty].sum(axis=1) - 1)))
    ok = (m.sum() == 1000 and np.array_equal(m, oracle) and accuracy(m) == np.trace(m) / m.sum() == hits / 1000
          and adjacent_accuracy(m) == near / 1000 and adjacent_accuracy(m) >= accuracy(m) and row_err <= 1e-6)
    verdict("C6 evaluation identities", ok,
            f"total {m.sum()}, accuracy {accuracy(m):.3f}, adjacent {adjacent_accuracy(m):.3f}, "
            f"row sum error {row_err:.1e}")


def test_c7_determinism_and_persistence(verdict, desk_manifest, tmp_path):
    kwargs = dict(epochs=3, lr=0.01, batch_size=10, scale="1/16", input_size=32, seed=4)
    runs = [cmd_train(desk_manifest, "vgg", "ts", tmp_path / f"run{i}", **kwargs) for i in range(2)]
    names = ("history.csv", "model.ckpt", "model.json", "confusion.csv")
    identical = all((tmp_path / "run0" / n).read_bytes() == (tmp_path / "run1" / n).read_bytes() for n in names)

    net, _, _, _ = load_model(tmp_path / "run0" / "model.ckpt")
    state = net.state_dict()
    save_checkpoint(runs[0].checkpoint, tmp_path / "copy.ckpt")
    back = load_checkpoint(tmp_path / "copy.ckpt", net)
    roundtrip = (list(back.tensors) == list(state)
                 and all(back.tensors[k].tobytes() == state[k].tobytes() for k in state)
                 and back.epoch == runs[0].checkpoint.epoch
                 and back.val_accuracy == float(np.float32(runs[0].checkpoint.val_accuracy)))

    bad = tmp_path / "bad"
    bad.mkdir()
    blob = bytearray((tmp_path / "run0" / "model.ckpt").read_bytes())
    blob[len(blob) // 2] ^= 0x40
    (bad / "model.ckpt").write_bytes(bytes(blob))
    (bad / "model.json").write_bytes((tmp_path / "run0" / "model.json").read_bytes())
    rejected = False
    try:
        cmd_eval(desk_manifest, bad / "model.ckpt", tmp_path / "eval", figures=False)
    except CheckpointError:
        rejected = True
    clean = not (tmp_path / "eval").exists() or not any((tmp_path / "eval").iterdir())
    verdict("C7 determinism and persistence", identical and roundtrip and rejected and clean,
            f"byte-identical reruns {identical}, bit-exact round trip {roundtrip}, "
            f"corrupt file rejected {rejected} with no output {clean}")


def test_c8_split_contract(verdict):
    rng = np.random.default_rng(7)
    recs = [ManifestRecord(f"{i}.ppm", LevelLabel(int(v))) for i, v in enumerate(rng.integers(0, 5, 1011))]
    train_set, val_set = split_dataset(recs, 0.8, seed=0, stratified=False)
    sizes_ok = (len(train_set), len(val_set)) == (808, 203)
    failures = 0
    for trial in range(100):
        n = int(rng.integers(1, 400))
        levels = rng.integers(0, 5, n)
        manifest = [ManifestRecord(f"{trial}-{i}.ppm", LevelLabel(int(v))) for i, v in enumerate(levels)]
        for stratified in (True, False):
            tr, va = split_dataset(manifest, 0.8, seed=trial, stratified=stratified)
            a, b = {r.image_path for r in tr}, {r.image_path for r in va}
            ok = not a & b and a | b == {r.image_path for r in manifest} and len(tr) + len(va) == n
            if stratified:
                ok = ok and all(sum(r.level == c for r in tr) == math.floor(int((levels == c).sum()) * Fraction(4, 5))
                                for c in range(5))
            else:
                ok = ok and len(tr) == math.floor(n * Fraction(4, 5))
            failures += not ok
    verdict("C8 split contract", sizes_ok and failures == 0,
            f"1011 -> {len(train_set)}/{len(val_set)}; {failures} failures over 100 random manifests x 2 modes")
