"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s`` or
``python3 tests/test_acceptance.py``. The end-to-end criteria (7 and 8)
train real models and take several minutes on one CPU.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from ugae.cli import main as cli_main
from ugae.codecsim import (RATE_LEVELS, bpip, decode_octree,
                           dequantize_geometry, encode_attributes, encode_octree,
                           quantize_geometry)
from ugae.codecsim.attributes import decode_attributes_yuv
from ugae.codecsim.geometry import occupancy_bytes
from ugae.config import load_config
from ugae.core import PointCloud, rgb_to_yuv, save_ply
from ugae.learner import Mlp, WmseConfig, bce_loss, quantile_threshold, wmse_loss, wmse_weights
from ugae.metrics import (RDCurve, akima_fit, bd_br, bd_psnr, classify_frequency,
                          classify_loss, d1_psnr, overlap_ratio)
from ugae.pae import da_knn, recolor
from ugae.pipeline import decode, encode, evaluate
from ugae.poae import enhance_attributes, train_poae
from ugae.poge import enhance_geometry, train_poge
from ugae.spatial import SpatialIndex, estimate_normals, morton_encode
from ugae.synthgen import ShapeSpec, generate


@pytest.fixture
def verdict(capsys):
    def report(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
        assert ok, detail
    return report


def random_cloud(rng, n, depth, colored=True):
    coords = np.unique(rng.integers(0, 1 << depth, (n, 3)), axis=0)
    attrs = rng.integers(0, 256, coords.shape).astype(np.uint8) if colored else None
    return PointCloud(coords, attrs, depth).sorted()


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f(x)
        flat[i] = keep - h
        down = f(x)
        flat[i] = keep
        gflat[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def test_1_da_knn_oracle(verdict):
    rng = np.random.default_rng(1)
    mismatches, t0 = 0, time.perf_counter()
    for _ in range(10):
        cloud = random_cloud(rng, 10000, 8)
        index = SpatialIndex(cloud)
        keys = morton_encode(cloud.coords, 8)
        for q in rng.integers(0, 256, (100, 3)):
            got = da_knn(q, index, 8)
            d = cloud.coords - q
            sq = np.einsum("ij,ij->i", d, d)
            first = np.lexsort((np.arange(len(sq)), keys, sq))[:8]
            want = first[sq[first] == sq[first[0]]]
            mismatches += not (np.array_equal(np.sort(got.indices), np.sort(want))
                               and np.all(got.sq_dists == sq[want[0]]))
    elapsed = time.perf_counter() - t0
    verdict(1, mismatches == 0 and elapsed < 10,
            f"{mismatches} mismatches over 1000 queries in {elapsed:.2f} s")


def test_2_loss_conformance(verdict):
    rng = np.random.default_rng(2)
    pred, target = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
    ones_gap = abs(wmse_loss(pred, target, np.ones(50))[0]
                   - np.mean(np.sum((pred - target) ** 2, axis=1)))
    errors = np.arange(1.0, 11.0)
    threshold = quantile_threshold(errors, 0.4)
    weights = wmse_weights(errors, WmseConfig())
    example_ok = threshold == 4 and list(weights) == [0.5] * 4 + [2.0] * 6
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 12))
        p, t = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        w = rng.uniform(0.1, 3.0, n)
        worst = max(worst, rel_err(wmse_loss(p, t, w)[1],
                                   central_diff(lambda x: wmse_loss(x, t, w)[0], p.copy())))
        probs = rng.uniform(0.05, 0.95, n)
        labels = rng.integers(0, 2, n).astype(float)
        worst = max(worst, rel_err(bce_loss(probs, labels)[1],
                                   central_diff(lambda x: bce_loss(x, labels)[0], probs.copy())))
    verdict(2, ones_gap <= 1e-12 and example_ok and worst <= 1e-4,
            f"all-ones gap {ones_gap:.1e}, threshold {threshold}, "
            f"weights {'ok' if example_ok else weights}, worst gradient rel err {worst:.1e}")


def test_3_codec_round_trips(verdict):
    rng = np.random.default_rng(3)
    failures, worst_margin = [], math.inf
    for i in range(100):
        depth = int(rng.integers(4, 11))
        cloud = random_cloud(rng, int(rng.integers(1, 3000)), depth)
        payload = encode_octree(cloud.coords, depth)
        if not np.array_equal(decode_octree(payload), cloud.coords):
            failures.append(f"octree {i}")
        bits = np.unpackbits(occupancy_bytes(cloud.coords, depth)[:, None], axis=1).ravel()
        p = bits.mean()
        entropy = 0.0 if p in (0, 1) else len(bits) * -(p * math.log2(p)
                                                       + (1 - p) * math.log2(1 - p)) / 8
        coded = len(payload) - 1  # depth byte
        worst_margin = min(worst_margin, 1.05 * entropy + 64 - coded)
        qp = int(rng.choice([lv.qp for lv in RATE_LEVELS.values()]))
        attr_payload, recon = encode_attributes(cloud.coords, cloud.attrs, qp, depth)
        if not np.array_equal(decode_attributes_yuv(attr_payload, cloud.coords, depth), recon):
            failures.append(f"attributes {i}")
    verdict(3, not failures and worst_margin >= 0,
            f"{len(failures)} round-trip failures, smallest entropy-bound margin "
            f"{worst_margin:.1f} bytes")


def test_4_bd_analytics(verdict):
    rates = np.array([0.1, 0.25, 0.6, 1.3, 2.9])
    psnr = np.array([30.0, 33.5, 36.0, 39.2, 41.0])
    ref = RDCurve.from_points(rates, psnr)
    checks = {
        "identical psnr": bd_psnr(ref, ref) == 0.0,
        "identical rate": bd_br(ref, ref) == 0.0,
        "+1 dB": abs(bd_psnr(ref, RDCurve.from_points(rates, psnr + 1)) - 1.0) <= 1e-6,
        "double rate": abs(bd_br(ref, RDCurve.from_points(2 * rates, psnr)) - 100.0) <= 0.1,
    }
    other = RDCurve.from_points(rates * np.array([0.8, 0.9, 1.1, 0.7, 0.95]),
                                psnr + np.array([0.3, -0.2, 0.5, 0.1, 0.4]))
    checks["psnr antisymmetry"] = abs(bd_psnr(ref, other) + bd_psnr(other, ref)) <= 1e-9
    p_ab, p_ba = bd_br(ref, other), bd_br(other, ref)
    checks["rate antisymmetry"] = abs((1 + p_ab / 100) * (1 + p_ba / 100) - 1) <= 1e-6
    fit = akima_fit(rates, psnr)
    checks["exact at knots"] = np.array_equal(fit(rates), psnr)
    line = akima_fit(rates, 2.5 * rates - 1.0)
    probe = np.linspace(rates[0], rates[-1], 97)
    checks["reproduces lines"] = np.max(np.abs(line(probe) - (2.5 * probe - 1.0))) <= 1e-12
    failed = [name for name, ok in checks.items() if not ok]
    verdict(4, not failed, f"failed checks: {failed}" if failed else "all analytic cases hold")


def test_5_determinism(verdict, tmp_path):
    cloud = generate(ShapeSpec("sphere", 6000, 8, "checker", 5, seed=11))
    save_ply(cloud, tmp_path / "cloud.ply")
    models = tmp_path / "models"
    models.mkdir()
    poge = Mlp.init([57, 64, 64, 1], "logistic", seed=1)
    poae = Mlp.init([51, 64, 64, 3], "identity", seed=2)
    poge.save(models / "poge_R02.ugam")
    poae.save(models / "poae_R02.ugam")
    runs = set()
    for _ in range(3):
        enc = encode(cloud, "R02", "ugae", poge)
        dec = decode(enc.bitstream.to_bytes(), poge, poae)
        save_ply(dec.final, tmp_path / "inproc.ply")
        runs.add((enc.geometry.coords.tobytes(), enc.bitstream.to_bytes(),
                  (tmp_path / "inproc.ply").read_bytes()))
    stream, ply = runs.pop()[1:] if len(runs) == 1 else (None, None)
    split_ok = False
    if stream is not None:
        out = tmp_path / "out"
        py = sys.executable
        subprocess.run([py, "-m", "ugae.cli", "run", "--input", str(tmp_path / "cloud.ply"),
                        "--mode", "ugae", "--models", str(models), "--output", str(out),
                        "--levels", "R02"], check=True, capture_output=True)
        subprocess.run([py, "-m", "ugae.cli", "decode", "--bitstream",
                        str(out / "cloud_R02_ugae.bin"), "--models", str(models),
                        "--output", str(tmp_path / "split.ply")], check=True,
                       capture_output=True)
        split_ok = ((out / "cloud_R02_ugae.bin").read_bytes() == stream
                    and (tmp_path / "split.ply").read_bytes() == ply
                    and (out / "cloud_R02_ugae_dec.ply").read_bytes() == ply)
    verdict(5, stream is not None and split_ok,
            f"in-process runs identical: {stream is not None}; "
            f"encoder/decoder process split identical: {split_ok}")


def test_6_recolor_identity(verdict):
    rng = np.random.default_rng(6)
    clouds = [random_cloud(rng, 5000, 8) for _ in range(3)]
    clouds += [generate(ShapeSpec(s, 8000, 8, "checker", 4, seed=1)) for s in ("sphere", "plane")]
    same = [np.array_equal(recolor(c.coords, c).attrs, c.attrs) for c in clouds]
    verdict(6, all(same), f"{sum(same)}/{len(same)} clouds recoloured to their own attributes")


# -- end-to-end criteria 7 and 8 ---------------------------------------------

TRAIN_SPECS = [("sphere", "noise", 8), ("cube", "checker", 8), ("plane", "gradient", 8),
               ("sphere", "checker", 5)]
TEST_SPECS = [("sphere", "checker"), ("cube", "noise"), ("plane", "checker")]
N_POINTS = 50000


@pytest.fixture(scope="module")
def end_to_end():
    """Train per-level models on four clouds, then code three held-out clouds."""
    cfg = load_config()
    train = [generate(ShapeSpec(s, N_POINTS, 8, t, p, seed=i))
             for i, (s, t, p) in enumerate(TRAIN_SPECS)]
    tests = [generate(ShapeSpec(s, N_POINTS, 8, t, 6, seed=100 + i))
             for i, (s, t) in enumerate(TEST_SPECS)]
    t0 = time.perf_counter()
    models = {}
    for level in RATE_LEVELS.values():
        pairs = [(quantize_geometry(c, level.pqs), c, level.pqs) for c in train]
        poge, _ = train_poge(pairs, cfg.poge.train_config(cfg.seed))
        decoded = []
        for c in train:
            enc = encode(c, level, "ugae", poge, cfg.k)
            decoded.append((decode(enc.bitstream, poge, None).decoded, enc.target))
        poae, _ = train_poae(decoded, cfg.wmse_config, cfg.poae.train_config(cfg.seed),
                             cfg.neighbours)
        models[level.name] = (poge, poae)
    train_seconds = time.perf_counter() - t0

    rows = {"baseline": [], "ugae": []}
    geometry_gain, mse_pre, mse_post = [], 0.0, 0.0
    for ci, cloud in enumerate(tests):
        normals = estimate_normals(cloud)
        for level in RATE_LEVELS.values():
            poge, poae = models[level.name]
            for mode in rows:
                enc = encode(cloud, level, mode, poge, cfg.k)
                dec = decode(enc.bitstream.to_bytes(), poge, poae)
                rows[mode].append(evaluate(cloud, enc, dec, level, f"t{ci}", normals,
                                           mode == "ugae"))
                if mode == "ugae":
                    target = rgb_to_yuv(enc.target)
                    mse_pre += np.mean((rgb_to_yuv(dec.decoded.attrs) - target) ** 2)
                    mse_post += np.mean((rgb_to_yuv(dec.final.attrs) - target) ** 2)
            if level.index <= 3:
                lossy = quantize_geometry(cloud, level.pqs)
                plain = dequantize_geometry(lossy, level.pqs, cloud.depth)
                enhanced = enhance_geometry(poge, lossy, level.pqs, cloud.depth, len(cloud))
                geometry_gain.append(d1_psnr(cloud, enhanced.cloud()) - d1_psnr(cloud, plain))
    return {"train_seconds": train_seconds, "rows": rows, "tests": tests,
            "geometry_gain": geometry_gain, "mse_pre": mse_pre, "mse_post": mse_post}


def _curve(rows, cloud_id, key):
    mine = [r for r in rows if r["cloud"] == cloud_id]
    return RDCurve.from_points([r["bpip_geom"] + r["bpip_attr"] for r in mine],
                               [r[key] for r in mine])


@pytest.mark.slow
def test_7_end_to_end_gains(verdict, end_to_end):
    e = end_to_end
    gain = float(np.mean(e["geometry_gain"]))
    ids = sorted({r["cloud"] for r in e["rows"]["ugae"]})
    y_bd = [bd_psnr(_curve(e["rows"]["baseline"], i, "y_psnr"),
                    _curve(e["rows"]["ugae"], i, "y_psnr")) for i in ids]
    reduction = 1.0 - e["mse_post"] / e["mse_pre"]
    ok = (e["train_seconds"] <= 600 and gain >= 0.5 and np.mean(y_bd) > 0
          and reduction >= 0.05)
    verdict(7, ok,
            f"training {e['train_seconds']:.0f} s; (a) mean D1 gain R01-R03 {gain:.2f} dB; "
            f"(b) Y BD-PSNR per cloud {[round(float(v), 2) for v in y_bd]}, mean "
            f"{np.mean(y_bd):.2f} dB; (c) YUV MSE reduction {100 * reduction:.1f}%")


@pytest.mark.slow
def test_8_overlap_direction(verdict, end_to_end):
    rows = end_to_end["rows"]["ugae"]
    pre = float(np.mean([r["overlap_pre"] for r in rows]))
    post = float(np.mean([r["overlap_post"] for r in rows]))
    rng = np.random.default_rng(8)
    random_overlaps = []
    for cloud in end_to_end["tests"]:
        high = classify_frequency(cloud)
        noise = rng.integers(0, 256, cloud.attrs.shape).astype(np.uint8)
        random_overlaps.append(overlap_ratio(high, classify_loss(cloud, noise)))
    random_ok = all(abs(v - 0.5) <= 0.05 for v in random_overlaps)
    verdict(8, post <= pre and random_ok,
            f"mean overlap pre {pre:.4f} post {post:.4f}; random labels "
            f"{[round(v, 3) for v in random_overlaps]}")


def test_9_rate_ladder(verdict, capsys):
    cli_main(["levels"])
    lines = capsys.readouterr().out.strip().splitlines()[1:]
    ladder = [(float(l.split()[1]), int(l.split()[2])) for l in lines]
    expected = [(0.125, 51), (0.25, 46), (0.5, 40), (0.75, 34), (0.875, 28)]
    monotone = []
    for i, (shape, tex) in enumerate([("sphere", "checker"), ("cube", "noise"),
                                      ("plane", "gradient")]):
        cloud = generate(ShapeSpec(shape, 20000, 8, tex, 6, seed=90 + i))
        lossy = [quantize_geometry(cloud, lv.pqs) for lv in RATE_LEVELS.values()]
        bits = [bpip(encode_octree(c.coords, c.depth), len(cloud)) for c in lossy]
        monotone.append(all(b <= c for b, c in zip(bits, bits[1:])))
    verdict(9, ladder == expected and all(monotone),
            f"ladder {ladder}; geometry bpip non-decreasing on {sum(monotone)}/3 clouds")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-rN"]))
