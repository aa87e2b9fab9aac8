"""Command-line entry point: dataset generation, training, sweeps, checks.

Subcommands: gen, train, sweep, fdcheck, report. A flat JSON config file can
set any training or generation key; explicit flags override file values,
which override the built-in defaults. Exit codes: 0 success, 1 check
failure, 2 usage/input error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .evalmetrics import (CSV_COLUMNS, assemble_report, csv_row,
                          detection_metrics)
from .losses import fd_check
from .model import Encoder, encoder_to_json
from .numerics import NumericalError, derive_rng
from .synthdata import GenSpec, generate, inject_noise, load_dataset, save_dataset, split
from .trainer import (MODES, TrainConfig, combined_labels, evaluate_retrieval, run)

GEN_KEYS = ("n", "d_latent", "d_img", "d_txt", "n_clusters",
            "sigma_cluster", "sigma_view")
SPLIT_KEYS = ("f_train", "f_dev", "f_test")
TRAIN_KEYS = ("tau1", "tau2", "gamma", "beta1", "beta2", "batch_size", "epochs",
              "lr", "lr_decay", "lr_decay_epoch", "warmup_epochs", "seed", "mode",
              "embed_dim", "hidden_dims", "gmm_iters", "gmm_floor", "track_labels")

DEFAULTS = {
    **{k: getattr(GenSpec(), k) for k in GEN_KEYS},
    "f_train": 0.8,
    "f_dev": 0.1,
    "f_test": 0.1,
    "rho": 0.0,
    **{k: getattr(TrainConfig(), k) for k in TRAIN_KEYS},
}


def load_config(path, overrides: dict) -> dict:
    """DEFAULTS <- config file <- explicit flag overrides."""
    cfg = dict(DEFAULTS)
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = sorted(set(file_cfg) - set(DEFAULTS))
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        cfg.update(file_cfg)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def train_config_from(cfg: dict) -> TrainConfig:
    hidden = cfg["hidden_dims"]
    if isinstance(hidden, str):
        hidden = [int(tok) for tok in hidden.split(",") if tok.strip()]
    tc = TrainConfig(**{k: cfg[k] for k in TRAIN_KEYS if k != "hidden_dims"},
                     hidden_dims=tuple(int(h) for h in hidden))
    tc.validate()
    return tc


def gen_spec_from(cfg: dict, seed: int) -> GenSpec:
    return GenSpec(seed=seed, **{k: cfg[k] for k in GEN_KEYS})


def out_root(args) -> Path:
    base = args.out or os.environ.get("GSC_OUT_DIR") or "runs"
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def build_splits(cfg: dict, seed: int, rho: float):
    """Generate, split, and inject noise into the train split only."""
    ds = generate(gen_spec_from(cfg, seed))
    train, dev, test = split(ds, cfg["f_train"], cfg["f_dev"], cfg["f_test"],
                             derive_rng(seed, "split"))
    if rho > 0:
        train = inject_noise(train, rho, derive_rng(seed, "noise"))
    return train, dev, test


def cmd_gen(args) -> int:
    cfg = load_config(args.config, {
        "n": args.n, "rho": args.rho, "seed": args.seed,
        "n_clusters": args.clusters,
        "sigma_cluster": args.sigma_cluster, "sigma_view": args.sigma_view,
        "d_latent": args.d_latent, "d_img": args.d_img, "d_txt": args.d_txt,
        "f_train": args.f_train, "f_dev": args.f_dev, "f_test": args.f_test,
    })
    out = out_root(args)
    seed = int(cfg["seed"])
    rho = float(cfg["rho"])
    train, dev, test = build_splits(cfg, seed, rho)
    files = {}
    for tag, ds in (("train", train), ("dev", dev), ("test", test)):
        path = out / f"{tag}.json"
        save_dataset(ds, path)
        files[tag] = path.name
    manifest = {
        "files": files,
        "rho": rho,
        "seed": seed,
        "spec": asdict(gen_spec_from(cfg, seed)),
        "splits": {k: cfg[k] for k in SPLIT_KEYS},
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True)
    print(f"wrote {out / 'manifest.json'} "
          f"(train={train.n}, dev={dev.n}, test={test.n}, "
          f"noisy={int(train.noise_mask.sum())})")
    return 0


def load_splits(data_path: str):
    """Load train/dev/test from a manifest file or its directory."""
    path = Path(data_path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = path.parent
    return tuple(load_dataset(base / manifest["files"][tag])
                 for tag in ("train", "dev", "test"))


def _run_cell(cfg: dict, mode: str, rho: float, seed: int, splits=None):
    """Train one configuration and evaluate its best checkpoint on test."""
    tc = train_config_from({**cfg, "mode": mode, "seed": seed})
    train, dev, test = splits if splits is not None else build_splits(cfg, seed, rho)
    result = run(tc, train, dev)
    test_retr = evaluate_retrieval(result.best_nets, test)
    detection = detection_metrics(combined_labels(result.labels), train.noise_mask)
    return result, test_retr, detection, (train, dev, test)


def cmd_train(args) -> int:
    cfg = load_config(args.config, {
        "mode": args.mode, "seed": args.seed, "epochs": args.epochs,
        "rho": args.rho, "n": args.n, "batch_size": args.batch_size,
        "lr": args.lr, "gamma": args.gamma, "tau1": args.tau1, "tau2": args.tau2,
        "beta1": args.beta1, "beta2": args.beta2,
        "warmup_epochs": args.warmup, "track_labels": True if args.dump_labels else None,
    })
    out = out_root(args)
    mode = str(cfg["mode"])
    seed = int(cfg["seed"])
    rho = float(cfg["rho"])
    splits = load_splits(args.data) if args.data else None
    if splits is not None:
        rho = float(splits[0].meta.get("rho", rho))
    result, test_retr, detection, (train, _, _) = _run_cell(cfg, mode, rho, seed, splits)

    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for row in result.history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    report = assemble_report(test_retr, detection, {
        "mode": mode, "rho": rho, "seed": seed,
        "best_epoch": result.best_epoch,
        "best_dev_recall_sum": result.best_recall_sum,
    })
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
    for net in result.best_nets:
        for modality, enc in (("img", net.img_enc), ("txt", net.txt_enc)):
            with open(out / f"ckpt_{net.name}_{modality}.json", "w", encoding="utf-8") as fh:
                json.dump(encoder_to_json(enc), fh, sort_keys=True)
    if args.dump_labels and result.label_history is not None:
        mask = train.noise_mask
        with open(out / "labels.jsonl", "w", encoding="utf-8") as fh:
            for entry in result.label_history:
                for i in range(train.n):
                    fh.write(json.dumps({
                        "epoch": entry["epoch"], "idx": i,
                        "y_cm": float(entry["y_cm"][i]),
                        "y_im": float(entry["y_im"][i]),
                        "y": float(entry["y"][i]),
                        "is_noisy_gt": bool(mask[i]),
                    }, sort_keys=True) + "\n")
    print(f"mode={mode} rho={rho} seed={seed} "
          f"test_rsum={test_retr.recall_sum:.1f} det_acc={detection.accuracy:.3f} "
          f"-> {out / 'report.json'}")
    return 0


def _cell_seed(master: int, rho: float, mode: str) -> int:
    """master + stable 32-bit hash of the cell, so adding cells never
    perturbs existing ones."""
    tag = f"rho={rho:.6f}|mode={mode}".encode("utf-8")
    return int(master) + int.from_bytes(hashlib.sha256(tag).digest()[:4], "big")


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, {"epochs": args.epochs, "n": args.n})
    rhos = [float(tok) for tok in args.rhos.split(",") if tok.strip()]
    modes = [tok.strip() for tok in args.modes.split(",") if tok.strip()]
    for mode in modes:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    out = out_root(args)
    csv_path = out / "summary.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        fh.flush()
        for rho in rhos:
            for mode in modes:
                seed = _cell_seed(args.seed, rho, mode)
                _, test_retr, detection, _ = _run_cell(cfg, mode, rho, seed)
                writer.writerow(csv_row(mode, rho, test_retr, detection))
                fh.flush()
                print(f"done rho={rho} mode={mode} rsum={test_retr.recall_sum:.1f}")
    print(f"wrote {csv_path}")
    return 0


def cmd_fdcheck(args) -> int:
    dims = [int(tok) for tok in args.dims.split(",") if tok.strip()]
    worst = None
    all_pass = True
    for seed in range(args.seeds):
        rng = derive_rng(seed, "fdcheck")
        enc_img = Encoder.init(dims, rng)
        enc_txt = Encoder.init([dims[0] - 1, *dims[1:]], rng)
        x_img = rng.standard_normal((args.batch, dims[0]))
        x_txt = rng.standard_normal((args.batch, dims[0] - 1))
        y = rng.uniform(0.1, 1.0, size=args.batch)
        rep = fd_check(enc_img, enc_txt, x_img, x_txt, y,
                       tau1=0.07, tau2=1.0, gamma=0.01, h=args.h, tol=args.tol)
        print(f"seed {seed}: max_rel_err={rep.max_rel_err:.3e} "
              f"({rep.n_coords} coords, worst {rep.worst_param}) "
              f"{'ok' if rep.passed else 'FAIL'}")
        if worst is None or rep.max_rel_err > worst.max_rel_err:
            worst = rep
        all_pass = all_pass and rep.passed
    if not all_pass:
        print(f"fdcheck FAILED: worst parameter {worst.worst_param} "
              f"rel err {worst.max_rel_err:.3e} (tol {worst.tol})")
        return 1
    print("fdcheck passed")
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.inputs:
        with open(path, "r", encoding="utf-8") as fh:
            rep = json.load(fh)
        meta = rep.get("meta", {})
        retr = rep["retrieval"]
        det = rep.get("detection") or {}
        rows.append([
            meta.get("mode", "?"), meta.get("rho", ""),
            retr["i2t"]["r1"], retr["i2t"]["r5"], retr["i2t"]["r10"],
            retr["t2i"]["r1"], retr["t2i"]["r5"], retr["t2i"]["r10"],
            retr["recall_sum"],
            det.get("accuracy", ""), det.get("auc", ""),
        ])
    header = " ".join(f"{c:>8}" for c in CSV_COLUMNS)
    print(header)
    for row in rows:
        print(" ".join(f"{v:>8.1f}" if isinstance(v, float) else f"{str(v):>8}"
                       for v in row))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            writer.writerows(rows)
        print(f"wrote {args.csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gsc",
        description="Noise-robust cross-modal retrieval training on synthetic paired data.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_gen = sub.add_parser("gen", help="generate train/dev/test dataset files")
    p_gen.add_argument("--n", type=int, help="total samples before splitting")
    p_gen.add_argument("--rho", type=float, help="train-split noise rate in [0, 1]")
    p_gen.add_argument("--seed", type=int)
    p_gen.add_argument("--clusters", type=int)
    p_gen.add_argument("--sigma-cluster", type=float, dest="sigma_cluster")
    p_gen.add_argument("--sigma-view", type=float, dest="sigma_view")
    p_gen.add_argument("--d-latent", type=int, dest="d_latent")
    p_gen.add_argument("--d-img", type=int, dest="d_img")
    p_gen.add_argument("--d-txt", type=int, dest="d_txt")
    p_gen.add_argument("--f-train", type=float, dest="f_train")
    p_gen.add_argument("--f-dev", type=float, dest="f_dev")
    p_gen.add_argument("--f-test", type=float, dest="f_test")
    p_gen.add_argument("--config")
    p_gen.add_argument("--out")
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="run one training configuration")
    p_train.add_argument("--data", help="dataset directory or manifest from `gen`")
    p_train.add_argument("--mode", choices=MODES)
    p_train.add_argument("--rho", type=float, help="noise rate when generating in-memory data")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--n", type=int)
    p_train.add_argument("--batch-size", type=int, dest="batch_size")
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--gamma", type=float)
    p_train.add_argument("--tau1", type=float)
    p_train.add_argument("--tau2", type=float)
    p_train.add_argument("--beta1", type=float)
    p_train.add_argument("--beta2", type=float)
    p_train.add_argument("--warmup", type=int)
    p_train.add_argument("--dump-labels", action="store_true")
    p_train.add_argument("--config")
    p_train.add_argument("--out")
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="noise-rate x mode grid, one CSV row per cell")
    p_sweep.add_argument("--rhos", default="0,0.2,0.4,0.6")
    p_sweep.add_argument("--modes", default="gsc,baseline")
    p_sweep.add_argument("--seed", type=int, default=0, help="master seed for cell derivation")
    p_sweep.add_argument("--epochs", type=int)
    p_sweep.add_argument("--n", type=int)
    p_sweep.add_argument("--config")
    p_sweep.add_argument("--out")
    p_sweep.set_defaults(func=cmd_sweep)

    p_fd = sub.add_parser("fdcheck", help="finite-difference gradient verification")
    p_fd.add_argument("--seeds", type=int, default=3)
    p_fd.add_argument("--batch", type=int, default=6)
    p_fd.add_argument("--dims", default="8,10,4", help="image-encoder dims; text uses dims[0]-1 inputs")
    p_fd.add_argument("--h", type=float, default=1e-5)
    p_fd.add_argument("--tol", type=float, default=1e-4)
    p_fd.set_defaults(func=cmd_fdcheck)

    p_rep = sub.add_parser("report", help="print/merge report JSON files")
    p_rep.add_argument("inputs", nargs="+", help="report.json files")
    p_rep.add_argument("--csv", help="also write a merged CSV summary")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return 3
    except FileNotFoundError as err:
        print(f"missing input: {err}", file=sys.stderr)
        return 2
    except ValueError as err:
        print(f"invalid arguments: {err}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
