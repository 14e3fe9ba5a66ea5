"""Command-line driver: prepare, train, run, decode, report, levels, selftest."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .codecsim import RATE_LEVELS, Bitstream, quantize_geometry, rate_level
from .config import PipelineConfig, load_config
from .core import PointCloud, load_ply, read_ply_points, save_ply, voxelize
from .errors import ConfigError, OverlapError, PlyError, PrerequisiteError, UgaeError
from .learner import Mlp
from .metrics import RDCurve, bd_br, bd_psnr
from .pipeline import METRIC_COLUMNS, decode, encode, evaluate
from .poae import train_poae
from .poge import train_poge
from .spatial import estimate_normals, partition_kdtree

BD_METRICS = ("d1", "d2", "y_psnr", "yuv_psnr")


# ---------------------------------------------------------------------------
# helpers


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Manifest:
    """Collects config, file checksums and stage timings for one command."""

    def __init__(self, command: str, config: Optional[PipelineConfig]):
        self.data = {"command": command, "version": __version__,
                     "config": config.to_dict() if config else None,
                     "inputs": {}, "outputs": {}, "stages": []}

    def add_input(self, path):
        self.data["inputs"][str(path)] = sha256(path)

    def add_output(self, path):
        self.data["outputs"][str(path)] = sha256(path)

    def stage(self, name: str, seconds: float):
        self.data["stages"].append({"name": name, "seconds": round(seconds, 3)})

    def write(self, directory):
        name = self.data["command"].replace(":", "_")
        path = Path(directory) / f"manifest_{name}.json"
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")


def ply_files(source) -> List[Path]:
    src = Path(source)
    if src.is_dir():
        return sorted(src.glob("*.ply"))
    if src.is_file():
        return [src]
    raise PlyError(f"no such file or directory: {source}")


def fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def write_csv(path, header, rows):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    os.replace(tmp, path)


def read_metrics(path) -> List[dict]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise PlyError(f"cannot read metrics file {path}: {exc.strerror}") from None
    if rows and set(rows[0]) != set(METRIC_COLUMNS):
        raise ConfigError(f"{path}: unexpected columns {list(rows[0])}")
    for r in rows:
        for key in METRIC_COLUMNS[2:]:
            r[key] = float(r[key])
    return rows


def model_path(models_dir, stage: str, level: str) -> Path:
    return Path(models_dir) / f"{stage}_{level}.ugam"


def load_model(models_dir, stage: str, level: str) -> Mlp:
    path = model_path(models_dir, stage, level)
    if not path.is_file():
        raise PrerequisiteError(f"missing {stage} checkpoint for {level}: {path}")
    return Mlp.load(path)


def load_clouds(data_dir) -> Dict[str, PointCloud]:
    clouds = {}
    for p in ply_files(data_dir):
        cloud = load_ply(p)
        if not cloud.has_attrs:
            raise PlyError(f"{p}: training clouds need colours")
        clouds[p.stem] = cloud.sorted()
    if not clouds:
        raise PlyError(f"no PLY files in {data_dir}")
    return clouds


# ---------------------------------------------------------------------------
# commands


def cmd_prepare(args, cfg: PipelineConfig) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("prepare", cfg)
    index, failures = [], 0
    for path in ply_files(args.input):
        t0 = time.perf_counter()
        try:
            xyz, rgb, _ = read_ply_points(path)
            if len(xyz) == 0:
                raise PlyError("no vertices")
            cloud = voxelize(xyz, rgb, cfg.depth)
        except (PlyError, ValueError) as exc:
            print(f"error: input: {path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        manifest.add_input(path)
        parts = partition_kdtree(cloud, cfg.max_points)
        for i, part in enumerate(parts):
            name = path.stem if len(parts) == 1 else f"{path.stem}_p{i:02d}"
            target = out / f"{name}.ply"
            save_ply(part.sorted(), target)
            manifest.add_output(target)
            index.append({"source": str(path), "part": i, "file": target.name,
                          "points": len(part)})
        manifest.stage(f"prepare:{path.name}", time.perf_counter() - t0)
    with open(out / "index.json", "w") as fh:
        json.dump(index, fh, indent=2)
        fh.write("\n")
    manifest.write(out)
    print(f"prepared {len(index)} sub-clouds in {out}")
    return PlyError.exit_code if failures else 0


def _loss_csv(path, history):
    write_csv(path, ["epoch", "loss"], [(i + 1, float(v)) for i, v in enumerate(history)])


def cmd_train(args, cfg: PipelineConfig) -> int:
    out = Path(args.models)
    out.mkdir(parents=True, exist_ok=True)
    if args.stage == "poae":
        for name in cfg.levels:
            if not model_path(out, "poge", name).is_file():
                raise PrerequisiteError(
                    f"PoAE training needs the PoGE checkpoint for {name} "
                    f"({model_path(out, 'poge', name)}); train the poge stage first")
    clouds = load_clouds(args.data)
    manifest = Manifest(f"train:{args.stage}", cfg)
    for p in ply_files(args.data):
        manifest.add_input(p)
    for name in cfg.levels:
        level = rate_level(name)
        t0 = time.perf_counter()
        if args.stage == "poge":
            pairs = [(quantize_geometry(c, level.pqs), c, level.pqs) for c in clouds.values()]
            model, history = train_poge(pairs, cfg.poge.train_config(cfg.seed))
        else:
            poge = load_model(out, "poge", name)
            manifest.add_input(model_path(out, "poge", name))
            pairs = []
            for c in clouds.values():
                enc = encode(c, level, "ugae", poge, cfg.k)
                dec = decode(enc.bitstream, poge, None)
                pairs.append((dec.decoded, enc.target))
            model, history = train_poae(pairs, cfg.wmse_config,
                                        cfg.poae.train_config(cfg.seed), cfg.neighbours)
        ckpt = model_path(out, args.stage, name)
        model.save(ckpt)
        log = out / f"{args.stage}_{name}_loss.csv"
        _loss_csv(log, history)
        manifest.add_output(ckpt)
        manifest.add_output(log)
        manifest.stage(f"train:{args.stage}:{name}", time.perf_counter() - t0)
        print(f"{args.stage} {name}: loss {history[0]:.5f} -> {history[-1]:.5f}")
    manifest.write(out)
    return 0


def _merge_rows(path: Path, new_rows: List[dict]):
    rows = {}
    if path.is_file():
        for r in read_metrics(path):
            rows[(r["cloud"], r["level"])] = r
    for r in new_rows:
        rows[(r["cloud"], r["level"])] = r
    ordered = [rows[key] for key in sorted(rows)]
    write_csv(path, METRIC_COLUMNS, [[r[c] for c in METRIC_COLUMNS] for r in ordered])


def cmd_run(args, cfg: PipelineConfig) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    cloud = load_ply(args.input).sorted()
    if not cloud.has_attrs:
        raise PlyError(f"{args.input}: the cloud has no colours")
    cloud_id = args.cloud_id or Path(args.input).stem
    manifest = Manifest(f"run:{args.mode}", cfg)
    manifest.add_input(args.input)
    normals = estimate_normals(cloud)
    rows = []
    for name in cfg.levels:
        level = rate_level(name)
        t0 = time.perf_counter()
        poge = poae = None
        if args.mode == "ugae":
            poge = load_model(args.models, "poge", name)
            poae = load_model(args.models, "poae", name)
            manifest.add_input(model_path(args.models, "poge", name))
            manifest.add_input(model_path(args.models, "poae", name))
        enc = encode(cloud, level, args.mode, poge, cfg.k)
        raw = enc.bitstream.to_bytes()
        stem = out / f"{cloud_id}_{name}_{args.mode}"
        bin_path = stem.with_suffix(".bin")
        bin_path.write_bytes(raw)
        dec = decode(raw, poge, poae)
        ply_path = Path(f"{stem}_dec.ply")
        save_ply(dec.final, ply_path)
        rows.append(evaluate(cloud, enc, dec, level, cloud_id, normals, args.mode == "ugae"))
        manifest.add_output(bin_path)
        manifest.add_output(ply_path)
        manifest.stage(f"run:{name}", time.perf_counter() - t0)
        r = rows[-1]
        print(f"{cloud_id} {name} {args.mode}: {8 * len(raw) / len(cloud):.4f} bpip, "
              f"D1 {r['d1']:.2f} dB, Y {r['y_psnr']:.2f} dB")
    metrics = out / f"metrics_{args.mode}.csv"
    _merge_rows(metrics, rows)
    manifest.add_output(metrics)
    manifest.write(out)
    return 0


def cmd_decode(args, cfg: PipelineConfig) -> int:
    raw = Path(args.bitstream).read_bytes()
    bs = Bitstream.from_bytes(raw)
    poge = poae = None
    if bs.k:
        name = rate_level(bs.level).name
        poge = load_model(args.models, "poge", name)
        poae = load_model(args.models, "poae", name)
    dec = decode(bs, poge, poae)
    save_ply(dec.final, args.output)
    print(f"decoded {len(dec.final)} points to {args.output}")
    return 0


def _curve(rows, metric):
    return RDCurve.from_points([r["bpip_geom"] + r["bpip_attr"] for r in rows],
                               [r[metric] for r in rows])


def cmd_report(args, cfg: Optional[PipelineConfig]) -> int:
    base = read_metrics(args.baseline)
    test = read_metrics(args.ugae)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    by_cloud: Dict[str, Dict[str, Dict[str, dict]]] = {}
    for mode, rows in (("baseline", base), ("ugae", test)):
        for r in rows:
            by_cloud.setdefault(r["cloud"], {"baseline": {}, "ugae": {}})[mode][r["level"]] = r
    header = ["cloud"] + [f"{m}_{kind}" for m in BD_METRICS for kind in ("bd_psnr", "bd_br")]
    summary = []
    for cloud in sorted(by_cloud):
        modes = by_cloud[cloud]
        for a, b in (("baseline", "ugae"), ("ugae", "baseline")):
            missing = sorted(set(modes[a]) - set(modes[b]))
            if missing:
                raise OverlapError(f"cloud {cloud}: level {missing[0]} is missing "
                                   f"from the {b} metrics")
        levels = sorted(modes["baseline"])
        row = [cloud]
        for metric in BD_METRICS:
            rows_b = [modes["baseline"][lv] for lv in levels]
            rows_u = [modes["ugae"][lv] for lv in levels]
            ref, cur = _curve(rows_b, metric), _curve(rows_u, metric)
            try:
                row.append(bd_psnr(ref, cur))
            except OverlapError as exc:
                raise OverlapError(f"cloud {cloud}, {metric}: {exc}") from None
            try:
                row.append(bd_br(ref, cur))
            except OverlapError as exc:
                raise OverlapError(f"cloud {cloud}, {metric}: {exc}") from None
            except ValueError:
                row.append(math.nan)   # quality not strictly monotone in rate
            for mode, rows in (("baseline", rows_b), ("ugae", rows_u)):
                pts = sorted((r["bpip_geom"] + r["bpip_attr"], r[metric]) for r in rows)
                with open(out / f"rd_{cloud}_{metric}_{mode}.dat", "w") as fh:
                    fh.write("# rate_bpip quality\n")
                    for x, y in pts:
                        fh.write(f"{fmt(float(x))} {fmt(float(y))}\n")
        summary.append(row)
    write_csv(out / "bd_summary.csv", header, summary)
    for row in summary:
        print(" ".join([row[0]] + [f"{v:.3f}" for v in row[1:]]))
    return 0


def cmd_levels(args, cfg) -> int:
    print("level pqs qp")
    for lv in RATE_LEVELS.values():
        print(f"{lv.name} {lv.pqs} {lv.qp}")
    return 0


def cmd_selftest(args, cfg) -> int:
    """Fast internal consistency checks; prints one line per check."""
    from .codecsim import decode_octree, encode_octree, encode_attributes
    from .codecsim.attributes import decode_attributes_yuv
    from .pae import recolor
    from .poge import enhance_geometry
    from .synthgen import ShapeSpec, generate

    cloud = generate(ShapeSpec("sphere", 3000, 7, "checker", 4, seed=0))
    checks = {}
    payload = encode_octree(cloud.coords, cloud.depth)
    checks["octree round trip"] = np.array_equal(decode_octree(payload), cloud.coords)
    attr, recon = encode_attributes(cloud.coords, cloud.attrs, 34, cloud.depth)
    checks["attribute round trip"] = np.array_equal(
        decode_attributes_yuv(attr, cloud.coords, cloud.depth), recon)
    checks["recolour identity"] = np.array_equal(recolor(cloud, cloud).attrs, cloud.attrs)
    curve = RDCurve.from_points([0.1, 0.2, 0.4, 0.8], [30.0, 33.0, 35.0, 36.0])
    checks["BD identity"] = bd_psnr(curve, curve) == 0.0 and bd_br(curve, curve) == 0.0
    model = Mlp.init([57, 16, 1], "logistic", seed=0)
    lossy = quantize_geometry(cloud, 0.5)
    runs = {enhance_geometry(model, lossy, 0.5, cloud.depth, len(cloud)).coords.tobytes()
            for _ in range(3)}
    checks["deterministic enhancement"] = len(runs) == 1
    checks["rate ladder"] = [(l.pqs, l.qp) for l in RATE_LEVELS.values()] == [
        (0.125, 51), (0.25, 46), (0.5, 40), (0.75, 34), (0.875, 28)]
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if all(checks.values()) else 1


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_args(p, levels=True):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    if levels:
        p.add_argument("--levels", help="comma-separated rate levels, e.g. R01,R03")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ugae", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="voxelize and partition raw PLY clouds")
    p.add_argument("--input", required=True, help="PLY file or directory")
    p.add_argument("--output", required=True)
    p.add_argument("--depth", type=int)
    p.add_argument("--max-points", type=int)
    _add_config_args(p, levels=False)

    p = sub.add_parser("train", help="train PoGE or PoAE checkpoints per rate level")
    p.add_argument("--data", required=True, help="directory of prepared PLYs")
    p.add_argument("--stage", required=True, choices=("poge", "poae"))
    p.add_argument("--models", required=True, help="checkpoint directory")
    p.add_argument("--epochs", type=int)
    _add_config_args(p)

    p = sub.add_parser("run", help="encode, decode and evaluate one cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", required=True, choices=("baseline", "ugae"))
    p.add_argument("--models", default="models")
    p.add_argument("--output", required=True)
    p.add_argument("--cloud-id")
    _add_config_args(p)

    p = sub.add_parser("decode", help="decode a bitstream file to PLY")
    p.add_argument("--bitstream", required=True)
    p.add_argument("--models", default="models")
    p.add_argument("--output", required=True)

    p = sub.add_parser("report", help="BD summary and R-D data from metrics CSVs")
    p.add_argument("--baseline", required=True)
    p.add_argument("--ugae", required=True)
    p.add_argument("--output", required=True)

    sub.add_parser("levels", help="print the rate ladder")
    sub.add_parser("selftest", help="run quick internal consistency checks")
    return parser


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "run": cmd_run,
            "decode": cmd_decode, "report": cmd_report, "levels": cmd_levels,
            "selftest": cmd_selftest}


def _resolve_config(args) -> Optional[PipelineConfig]:
    if not hasattr(args, "config"):
        return None
    overrides = {"seed": args.seed,
                 "depth": getattr(args, "depth", None),
                 "max_points": getattr(args, "max_points", None)}
    if getattr(args, "levels", None):
        overrides["levels"] = [s.strip() for s in args.levels.split(",") if s.strip()]
    epochs = getattr(args, "epochs", None)
    if epochs is not None:
        overrides[f"{args.stage}.epochs"] = epochs
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except UgaeError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: input: {exc}", file=sys.stderr)
        return PlyError.exit_code


if __name__ == "__main__":
    sys.exit(main())
