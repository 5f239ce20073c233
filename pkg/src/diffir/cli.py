"""Command-line entry point.

    diffir gen-data  --config c.json [--out DIR] [--seed N]
    diffir train-s1  --config c.json
    diffir train-s2  --config c.json [--mode v1|v2|v3|v4] [--t N]
    diffir infer     --config c.json [--mode ...]
    diffir eval      --config c.json
    diffir count     [--task inpainting] [--input 256] [--t 4]
    diffir sweep-t   --config c.json --t 1,2,4,8

Errors go to stderr as one line ``error<TAB>code=N<TAB>message``.
Exit codes: 0 ok, 2 config/usage error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch

from . import data as D
from . import metrics
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .cost import model_cost
from .model import DiffIRS1, DiffIRS2, ModelConfig
from .training import (
    NumericError,
    pretrain_stage1,
    s1_from_checkpoint,
    s2_from_checkpoint,
    train_stage2,
)

log = logging.getLogger("diffir")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
MODE_FLAGS = {"v1": "v1_no_dm", "v2": "v2_traditional", "v3": "v3_joint", "v4": "v4_joint_noise"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- helpers


def datasets(cfg: ExperimentConfig):
    dc = cfg.data
    if dc.source == "synthetic":
        imgs = D.gen_corpus(cfg.seed, dc.n_train + dc.n_test, dc.size)
    elif dc.source == "folder":
        if not dc.folder:
            raise ConfigError("data.folder is required for source 'folder'")
        imgs = D.load_folder(Path(dc.folder), dc.size)
    else:
        raise ConfigError(f"unknown data source {dc.source!r}")
    kw = {}
    if cfg.task == "inpainting":
        kw["coverage"] = tuple(dc.coverage)
    elif cfg.task == "deblur":
        kw["kernel_len"] = dc.kernel_len
    n_train = min(dc.n_train, len(imgs) - 1) if dc.source == "folder" else dc.n_train
    train = D.build_pairs(imgs[:n_train], cfg.task, cfg.seed, **kw)
    test = D.build_pairs(imgs[n_train:], cfg.task, cfg.seed + 1, **kw)
    return train, test


def _to_images(t: torch.Tensor) -> np.ndarray:
    return np.moveaxis(t.detach().numpy().astype(np.float64), 1, -1)


def restore_s1(model: DiffIRS1, batch: D.Batch) -> torch.Tensor:
    with torch.no_grad():
        return model(batch.inputs, batch.gt, batch.mask)[0]


def restore_s2(model: DiffIRS2, batch: D.Batch, seed: int, mode: str) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return model.restore(batch.inputs, batch.mask, gen, mode)


def score(pred: np.ndarray, gt: np.ndarray) -> Dict[str, float]:
    pred = np.clip(pred, 0.0, 1.0)
    ps = [metrics.psnr(p, g) for p, g in zip(pred, gt)]
    ss = [metrics.ssim(p, g) for p, g in zip(pred, gt)] if gt.shape[1] >= metrics.SSIM_WINDOW else [float("nan")]
    return {"psnr": float(np.mean(ps)), "ssim": float(np.mean(ss)), "n": len(gt)}


def baseline_images(test: D.PairDataset) -> np.ndarray:
    return test.inputs[..., :3].astype(np.float64)


def write_metrics(path: Path, rows: List[tuple]) -> None:
    lines = [
        f"# ssim window={metrics.SSIM_WINDOW} sigma={metrics.SSIM_SIGMA} K1={metrics.SSIM_K1} K2={metrics.SSIM_K2} luma=bt601",
        "model\tpsnr\tssim\tn",
    ]
    lines += [f"{name}\t{m['psnr']:.6f}\t{m['ssim']:.6f}\t{m['n']}" for name, m in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TrainLog:
    """Append-only ``step, l_rec, l_diff, l_all, wall_ms`` rows."""

    def __init__(self, path: Path):
        self.fh = open(path, "a", encoding="utf-8")

    def __call__(self, step, rep, wall_ms):
        self.fh.write(f"{step}\t{rep.l_rec:.6g}\t{rep.l_diff:.6g}\t{rep.l_all:.6g}\t{wall_ms:.1f}\n")

    def close(self):
        self.fh.close()


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.json")
    return out


def _s1_ckpt(out: Path):
    path = out / "s1"
    if not (path / "manifest.json").exists():
        raise CheckpointError(f"no stage-1 checkpoint at {path}; run train-s1 first")
    return load_checkpoint(path)


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg: ExperimentConfig, args) -> None:
    out = _out(cfg)
    train, test = datasets(cfg)
    for name, ds in (("train", train), ("test", test)):
        D.write_corpus(out / "data" / name, ds.gt, cfg.seed if name == "train" else cfg.seed + 1, cfg.task)
    print(f"wrote {len(train)} train and {len(test)} test images to {out / 'data'}")


def cmd_train_s1(cfg: ExperimentConfig, args) -> None:
    out = _out(cfg)
    train, test = datasets(cfg)
    tlog = TrainLog(out / "train_s1.log")
    try:
        res = pretrain_stage1(replace(cfg.s1, seed=cfg.seed), cfg.model, train, tlog)
    finally:
        tlog.close()
    save_checkpoint(res.checkpoint, out / "s1")
    batch = D.full_batch(test)
    rows = [("copy_input", score(baseline_images(test), test.gt)),
            ("s1", score(_to_images(restore_s1(res.model, batch)), test.gt))]
    write_metrics(out / "metrics_s1.tsv", rows)
    print(f"s1\tpsnr={rows[1][1]['psnr']:.4f}\tbaseline={rows[0][1]['psnr']:.4f}")


def _s2_dir(out: Path, mode: str, T: Optional[int]) -> Path:
    return out / (f"s2_{mode}" + (f"_T{T}" if T else ""))


def cmd_train_s2(cfg: ExperimentConfig, args) -> None:
    out = _out(cfg)
    train, test = datasets(cfg)
    ckpt_s1 = _s1_ckpt(out)
    mode = MODE_FLAGS[args.mode] if args.mode else cfg.s2.mode
    tcfg = replace(cfg.s2, seed=cfg.seed, T=args.t or cfg.s2.T, mode=mode)
    run_dir = _s2_dir(out, tcfg.mode, args.t)
    run_dir.mkdir(parents=True, exist_ok=True)
    tlog = TrainLog(run_dir / "train.log")
    try:
        res = train_stage2(tcfg, ckpt_s1, train, tlog)
    finally:
        tlog.close()
    save_checkpoint(res.checkpoint, run_dir / "checkpoint")
    m = score(_to_images(restore_s2(res.model, D.full_batch(test), cfg.seed, tcfg.mode)), test.gt)
    write_metrics(run_dir / "metrics.tsv", [("s2_" + tcfg.mode, m)])
    print(f"s2_{tcfg.mode}\tpsnr={m['psnr']:.4f}\tssim={m['ssim']:.4f}")


def cmd_infer(cfg: ExperimentConfig, args) -> None:
    out = _out(cfg)
    _, test = datasets(cfg)
    mode = MODE_FLAGS[args.mode] if args.mode else cfg.s2.mode
    model = s2_from_checkpoint(load_checkpoint(_s2_dir(out, mode, args.t) / "checkpoint"))
    pred = np.clip(_to_images(restore_s2(model, D.full_batch(test), cfg.seed, mode)), 0, 1)
    dest = out / "infer" / mode
    dest.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(pred):
        D.save_image(dest / f"{i:05d}.png", img)
    print(f"wrote {len(pred)} restored images to {dest}")


def cmd_eval(cfg: ExperimentConfig, args) -> None:
    out = _out(cfg)
    _, test = datasets(cfg)
    batch = D.full_batch(test)
    rows = [("copy_input", score(baseline_images(test), test.gt))]
    if (out / "s1" / "manifest.json").exists():
        rows.append(("s1", score(_to_images(restore_s1(s1_from_checkpoint(load_checkpoint(out / "s1")), batch)), test.gt)))
    for run in sorted(out.glob("s2_*")):
        ck = run / "checkpoint"
        if (ck / "manifest.json").exists():
            c = load_checkpoint(ck)
            model = s2_from_checkpoint(c)
            rows.append((run.name, score(_to_images(restore_s2(model, batch, cfg.seed, c.mode)), test.gt)))
    write_metrics(out / "metrics.tsv", rows)
    for name, m in rows:
        print(f"{name}\t{m['psnr']:.4f}\t{m['ssim']:.4f}")


def cmd_count(args) -> None:
    mc = ModelConfig.full(args.task)
    T = args.t or mc.T
    s1 = model_cost(mc.cpen, mc.dirformer, mc.denoiser, args.input, "s1", T)
    s2 = model_cost(mc.cpen, mc.dirformer, mc.denoiser, args.input, "s2", T)
    print("variant\tmodule\tparams\tmult_adds")
    for tag, rep in (("s1", s1), ("s2", s2)):
        for name, p, m in rep.rows():
            print(f"{tag}\t{name}\t{p}\t{m}")
        print(f"{tag}\tTOTAL\t{rep.total_params}\t{rep.mult_adds}")


def cmd_sweep_t(cfg: ExperimentConfig, args) -> None:
    from .invariants import run_invariants

    out = _out(cfg)
    train, test = datasets(cfg)
    try:
        Ts = [int(x) for x in str(args.t).split(",")]
    except ValueError as e:
        raise ConfigError(f"--t expects a comma-separated list of integers: {args.t}") from e
    if (out / "s1" / "manifest.json").exists():
        ckpt_s1 = load_checkpoint(out / "s1")
    else:
        ckpt_s1 = pretrain_stage1(replace(cfg.s1, seed=cfg.seed), cfg.model, train).checkpoint
        save_checkpoint(ckpt_s1, out / "s1")
    batch = D.full_batch(test)
    lines = ["T\talpha_bar_T\tinvariants\tpsnr\tssim\tl_diff_last"]
    for T in Ts:
        mc = replace(cfg.model, T=T)
        inv = run_invariants(mc.schedule(), seed=cfg.seed)
        tcfg = replace(cfg.s2, seed=cfg.seed, T=T)
        res = train_stage2(tcfg, ckpt_s1, train)
        m = score(_to_images(restore_s2(res.model, batch, cfg.seed, tcfg.mode)), test.gt)
        ok = all(inv.values())
        lines.append(f"{T}\t{mc.schedule().alpha_bar(T):.6e}\t{'pass' if ok else 'FAIL'}\t{m['psnr']:.6f}\t{m['ssim']:.6f}\t{res.history[-1].l_diff:.6f}")
        if not ok:
            failed = [k for k, v in inv.items() if not v]
            raise NumericError(f"invariants failed at T={T}: {failed}")
    (out / "sweep_t.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-s1": cmd_train_s1,
    "train-s2": cmd_train_s2,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "sweep-t": cmd_sweep_t,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="diffir", description="Compact-prior diffusion for image restoration.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        if name in ("train-s2", "infer"):
            sp.add_argument("--mode", choices=sorted(MODE_FLAGS))
            sp.add_argument("--t", type=int)
        if name == "sweep-t":
            sp.add_argument("--t", default="1,2,4,8")
    cp = sub.add_parser("count")
    cp.add_argument("--task", default="inpainting", choices=["inpainting", "sr", "deblur"])
    cp.add_argument("--input", type=int, default=256)
    cp.add_argument("--t", type=int)
    return p


def _fail(code: int, msg: str) -> int:
    print(f"error\tcode={code}\t{' '.join(str(msg).split())}", file=sys.stderr)
    return code


def run(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing command")
        if args.command == "count":
            if args.input % 8:
                raise UsageError("--input must be divisible by 8")
            cmd_count(args)
            return EXIT_OK
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out:
            cfg.out = args.out
        COMMANDS[args.command](cfg, args)
        return EXIT_OK
    except (UsageError, ConfigError) as e:
        return _fail(EXIT_CONFIG, e)
    except NumericError as e:
        return _fail(EXIT_NUMERIC, e)
    except (OSError, CheckpointError) as e:
        return _fail(EXIT_IO, e)


def main() -> None:
    logging.basicConfig(level=logging.WARNING)
    sys.exit(run())


if __name__ == "__main__":
    main()
