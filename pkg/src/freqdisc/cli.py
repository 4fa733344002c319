"""Command-line entry points: generate | separate | train | evaluate |
perturb-preview, all driven by one key = value config file."""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__, imgio, model_core, training
from .config import RunConfig
from .datagen import DatasetSplit, SyntheticSpec, generate_benchmark, load_dataset, save_dataset
from .domain_sep import build_anchor_set, partition
from .evaluation import cluster_acc
from .perturbation import BankEntry, FreqWindow, MemoryBank, cdfp


def version_string() -> str:
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if described.returncode == 0 and described.stdout.strip():
            return f"freqdisc-{__version__}+{described.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"freqdisc-{__version__}"


def write_run_manifest(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = json.loads(cfg.to_json())
    manifest["version"] = version_string()
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def synthetic_spec(cfg: RunConfig) -> SyntheticSpec:
    return SyntheticSpec(
        n_classes=cfg.n_classes,
        n_known=cfg.n_known,
        per_class=cfg.per_class,
        size=cfg.image_size,
        channels=cfg.channels,
        corruption=cfg.corruption,
        severity=cfg.severity,
        seed=cfg.seed,
    )


def dataset_dir(cfg: RunConfig) -> Path:
    if cfg.dataset_path:
        return Path(cfg.dataset_path)
    return Path(cfg.out_dir) / "dataset"


def load_split(cfg: RunConfig) -> DatasetSplit:
    root = dataset_dir(cfg)
    if not (root / "manifest.csv").exists():
        raise FileNotFoundError(
            f"no dataset at {root}; run `freqdisc generate` first or set [dataset] path"
        )
    return load_dataset(root)


def cmd_generate(cfg: RunConfig) -> int:
    target = dataset_dir(cfg)
    if target.exists() and any(target.iterdir()):
        if not cfg.force:
            print(f"error: {target} exists and is not empty (use --force)", file=sys.stderr)
            return 2
        shutil.rmtree(target)
    split = generate_benchmark(synthetic_spec(cfg))
    save_dataset(split, target)
    write_run_manifest(cfg, Path(cfg.out_dir))
    print(
        f"generated dataset: {len(split.labeled)} labeled / {len(split.unlabeled)} unlabeled "
        f"({cfg.n_classes} classes, {cfg.n_known} known) -> {target}"
    )
    return 0


def cmd_separate(cfg: RunConfig) -> int:
    split = load_split(cfg)
    if len(split.labeled) < cfg.knn_k:
        print(
            f"error: labeled set ({len(split.labeled)}) smaller than K={cfg.knn_k}",
            file=sys.stderr,
        )
        return 2
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 2)))
    anchors = build_anchor_set(
        [s.image for s in split.labeled],
        ids=[s.sample_id for s in split.labeled],
        subsample=cfg.anchor_subsample,
        rng=rng,
        log_scale=cfg.log_amplitude,
    )
    part, model = partition(
        [(s.sample_id, s.image) for s in split.unlabeled],
        anchors,
        k=cfg.knn_k,
        max_iter=cfg.gmm_max_iter,
        tol=cfg.gmm_tol,
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    part.write_csv(out / "partition.csv")
    with open(out / "gmm.json", "w") as fh:
        fh.write(model.to_json())
    write_run_manifest(cfg, out)
    n_known = int(np.sum(part.hard_known))
    print(
        f"separated {len(part.sample_ids)} unlabeled samples: "
        f"{n_known} known / {len(part.sample_ids) - n_known} unknown -> {out}/partition.csv"
    )
    return 0


def cmd_train(cfg: RunConfig) -> int:
    split = load_split(cfg)
    out = Path(cfg.out_dir)
    write_run_manifest(cfg, out)
    result = training.train(cfg, split, out)
    if result.aborted:
        print("training aborted on non-finite loss; last-good checkpoint retained", file=sys.stderr)
        return 3
    acc = result.report.accuracy("overall", "All")
    print(f"training complete: overall All ClusterAcc = {acc:.4f}")
    for domain in sorted(result.report.results):
        row = result.report.results[domain]
        parts = []
        for subset in ("All", "Old", "New"):
            entry = row.get(subset)
            parts.append(f"{subset}={entry['acc']:.4f}" if entry else f"{subset}=n/a")
        print(f"  [{domain}] " + "  ".join(parts))
    print(f"metrics: {result.metrics_path}")
    return 0


def cmd_evaluate(cfg: RunConfig, predictions_path: str) -> int:
    split = load_split(cfg)
    with open(predictions_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    preds = {row["sample_id"]: int(row["prediction"]) for row in rows}
    missing = [s.sample_id for s in split.unlabeled if s.sample_id not in preds]
    if missing:
        shown = ", ".join(missing[:10])
        print(
            f"error: predictions missing {len(missing)} unlabeled ids (first 10: {shown})",
            file=sys.stderr,
        )
        return 2
    y_true = np.array([s.label for s in split.unlabeled])
    y_pred = np.array([preds[s.sample_id] for s in split.unlabeled])
    domains = np.array([s.domain for s in split.unlabeled])
    report = cluster_acc(y_true, y_pred, split.old_classes, domains)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "eval_report.json")
    print(report.to_json())
    return 0


def cmd_perturb_preview(cfg: RunConfig) -> int:
    split = load_split(cfg)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 3)))
    window = FreqWindow(cfg.window_ratio)

    scores = training.compute_density_scores(split, cfg, rng)
    hard_known, _ = training.refresh_partition(scores, cfg)

    state = model_core.init_state(
        input_dim=int(np.prod(split.unlabeled[0].image.shape)),
        n_classes=split.n_classes,
        enc_hidden=cfg.enc_hidden,
        embed_dim=cfg.embed_dim,
        proj_hidden=cfg.proj_hidden,
        proj_dim=cfg.proj_dim,
        seed=cfg.seed,
    )
    preds, confs, _ = training.predict_unlabeled(state, split, cfg.tau_s)
    bank = MemoryBank(cfg.bank_capacity)
    for i, sample in enumerate(split.unlabeled):
        if not hard_known[i]:
            bank.push(BankEntry(sample.image, int(preds[i]), float(confs[i])))
    if len(bank) == 0:
        print("error: separation produced no unknown-domain donors", file=sys.stderr)
        return 2

    out = Path(cfg.out_dir) / "preview"
    out.mkdir(parents=True, exist_ok=True)
    receivers = split.labeled[: cfg.preview_count]
    manifest = []
    for sample in receivers:
        perturbed, info = cdfp(
            sample.image,
            (sample.label, 1.0),
            bank,
            cfg.eta,
            window,
            rng,
            cfg.gate_both,
        )
        imgio.write_png(out / f"{sample.sample_id}_before.png", sample.image)
        imgio.write_png(out / f"{sample.sample_id}_after.png", perturbed)
        manifest.append(
            {
                "sample_id": sample.sample_id,
                "receiver_class": int(sample.label),
                "receiver_confidence": 1.0,
                "donor_seq": info.donor_seq,
                "donor_class": info.donor_label,
                "donor_confidence": info.donor_confidence,
                "class_aware": info.class_aware,
                "fallback": info.fallback,
                "window_ratio": cfg.window_ratio,
            }
        )
    with open(out / "preview_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"wrote {len(manifest)} before/after pairs -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqdisc",
        description="Frequency-guided category discovery under domain shift",
    )
    parser.add_argument(
        "command",
        choices=["generate", "separate", "train", "evaluate", "perturb-preview"],
    )
    parser.add_argument("--config", help="key = value config file (INI sections)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--force", action="store_true", help="overwrite existing outputs")
    parser.add_argument("--baseline", action="store_true", help="disable every FREE component")
    parser.add_argument("--no-fds", action="store_true")
    parser.add_argument("--no-cdfp", action="store_true")
    parser.add_argument("--no-idfp", action="store_true")
    parser.add_argument("--no-cdas", action="store_true")
    parser.add_argument("--no-class-aware", action="store_true", help="random-donor CDFP variant")
    parser.add_argument("--predictions", help="predictions CSV for `evaluate`")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out_dir = args.out
    if args.baseline:
        cfg.use_fds = cfg.use_cdfp = cfg.use_idfp = cfg.use_cdas = False
    if args.no_fds:
        cfg.use_fds = False
    if args.no_cdfp:
        cfg.use_cdfp = False
    if args.no_idfp:
        cfg.use_idfp = False
    if args.no_cdas:
        cfg.use_cdas = False
    if args.no_class_aware:
        cfg.class_aware = False
    cfg.force = args.force
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = resolve_config(args)
    if args.command == "generate":
        return cmd_generate(cfg)
    if args.command == "separate":
        return cmd_separate(cfg)
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "evaluate":
        if not args.predictions:
            print("error: evaluate requires --predictions", file=sys.stderr)
            return 2
        return cmd_evaluate(cfg, args.predictions)
    if args.command == "perturb-preview":
        return cmd_perturb_preview(cfg)
    return 2


if __name__ == "__main__":
    sys.exit(main())
