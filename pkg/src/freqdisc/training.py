"""Deterministic training loop wiring separation, perturbation, losses,
difficulty-aware resampling, and periodic clustering evaluation.

Routing per batch: labeled and hard-known unlabeled samples take the
cross-domain path (style donor swap, two augmented views, loss_kd);
hard-unknown samples take the intra-domain path (two views plus the
frequency-perturbed view, loss_ud). Every random choice flows through one
seeded generator, so fixed seeds reproduce metrics byte for byte.
"""

from __future__ import annotations

import csv
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model_core, objectives
from .config import RunConfig
from .datagen import DatasetSplit
from .domain_sep import build_anchor_set, fit_gmm_1d, knn_density, posterior
from .evaluation import EvalReport, cluster_acc
from .perturbation import BankEntry, FreqWindow, MemoryBank, cdfp, default_view_spec, idfp
from .sampler import FeatureBank, compute_difficulty, sample_category
from .spectral import fft2, swap_low_freq


def worker_count() -> int:
    raw = os.environ.get("FREQDISC_THREADS", "")
    if raw.strip():
        return max(1, int(raw))
    return min(4, os.cpu_count() or 1)


@dataclass
class TrainResult:
    report: EvalReport | None
    metrics_path: Path
    checkpoint_path: Path
    predictions_path: Path
    aborted: bool = False
    history: list = field(default_factory=list)


def _loss_weights(cfg: RunConfig) -> objectives.LossWeights:
    return objectives.LossWeights(
        beta=cfg.beta,
        epsilon=cfg.epsilon,
        tau_u=cfg.tau_u,
        tau_c=cfg.tau_c,
        tau_s=cfg.tau_s,
        tau_t_start=cfg.tau_t_start,
        tau_t_end=cfg.tau_t_end,
        tau_t_warmup_epochs=cfg.tau_t_warmup_epochs,
    )


def compute_density_scores(split: DatasetSplit, cfg: RunConfig, rng):
    """KNN amplitude-density score of every unlabeled sample vs the anchors.

    Images are static, so scores are computed once and reused at every FDS
    refresh. Descriptor FFTs fan out over a small thread pool.
    """
    anchors = build_anchor_set(
        [s.image for s in split.labeled],
        ids=[s.sample_id for s in split.labeled],
        subsample=cfg.anchor_subsample,
        rng=rng,
        log_scale=cfg.log_amplitude,
    )
    from .domain_sep import amplitude_descriptor

    def describe(sample):
        return amplitude_descriptor(sample.image, sample.sample_id, cfg.log_amplitude)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        descriptors = list(pool.map(describe, split.unlabeled))
    scores = np.array([knn_density(d, anchors, cfg.knn_k) for d in descriptors])
    return scores


def refresh_partition(scores, cfg: RunConfig):
    """Fit the two-component GMM on density scores -> per-sample hard labels."""
    model = fit_gmm_1d(scores, max_iter=cfg.gmm_max_iter, tol=cfg.gmm_tol)
    p_known = np.array([posterior(model, s) for s in scores])
    return p_known >= 0.5, model


def predict_unlabeled(state, split: DatasetSplit, tau_s: float, chunk: int = 256):
    """No-grad predictions over the unlabeled set: labels, confidences, h."""
    preds, confs, embs = [], [], []
    images = [s.image for s in split.unlabeled]
    for start in range(0, len(images), chunk):
        batch = np.stack(images[start : start + chunk]).reshape(len(images[start : start + chunk]), -1)
        fwd = model_core.forward(state, batch, tau_cls=tau_s)
        preds.append(np.argmax(fwd.p, axis=1))
        confs.append(np.max(fwd.p, axis=1))
        embs.append(fwd.h)
    return np.concatenate(preds), np.concatenate(confs), np.vstack(embs)


def evaluate_split(state, split: DatasetSplit, tau_s: float) -> EvalReport:
    preds, _, _ = predict_unlabeled(state, split, tau_s)
    y_true = np.array([s.label for s in split.unlabeled])
    domains = np.array([s.domain for s in split.unlabeled])
    return cluster_acc(y_true, preds, split.old_classes, domains)


def _cdas_auxiliary(state, feature_bank, stats, cfg, weights, rng):
    """Auxiliary hard-class refinement: supervised contrastive + CE on
    retrieved embeddings (constant h; gradients reach head + prototypes)."""
    drawn = [
        sample_category(stats.p_difficulty, rng) for _ in range(cfg.cdas_draws_per_step)
    ]
    embs, labels = [], []
    for cls in drawn:
        got = feature_bank.retrieve(cls, cfg.cdas_retrieve_n)
        if got.shape[0]:
            embs.append(got)
            labels.extend([cls] * got.shape[0])
    if not embs:
        return 0.0, None, None, None
    h = np.vstack(embs)
    labels = np.array(labels)
    fwd = model_core.forward_embeddings(state, h, tau_cls=cfg.tau_s)
    value = 0.0
    dz = np.zeros_like(fwd.z)
    dcos = np.zeros_like(fwd.cos)
    if cfg.cdas_contrastive:
        batch = objectives.labeled_batch([fwd.z], labels)
        if batch.anchors:
            rep, dz_rep = objectives.contrastive_loss(batch, weights.tau_c)
            value += rep
            dz += dz_rep
    if cfg.cdas_classification:
        onehot = np.eye(state.n_classes)[labels]
        ce, dp = objectives.cluster_loss(fwd.p, onehot)
        value += ce
        dcos += model_core.softmax_vjp(fwd.p, dp) / cfg.tau_s
    return value, fwd, dz, dcos


def train(cfg: RunConfig, split: DatasetSplit, out_dir) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    ckpt_path = out_dir / "model.ckpt"
    preds_path = out_dir / "predictions.csv"

    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 1)))
    weights = _loss_weights(cfg)
    window = FreqWindow(cfg.window_ratio)
    view_spec = default_view_spec()

    sample_count = len(split.labeled) + len(split.unlabeled)
    if sample_count == 0:
        raise ValueError("empty dataset")
    input_dim = int(np.prod(split.labeled[0].image.shape)) if split.labeled else int(
        np.prod(split.unlabeled[0].image.shape)
    )
    state = model_core.init_state(
        input_dim=input_dim,
        n_classes=split.n_classes,
        enc_hidden=cfg.enc_hidden,
        embed_dim=cfg.embed_dim,
        proj_hidden=cfg.proj_hidden,
        proj_dim=cfg.proj_dim,
        seed=cfg.seed,
    )

    bank = MemoryBank(cfg.bank_capacity)
    feature_bank = FeatureBank(split.n_classes, cfg.cdas_feature_capacity)
    cdas_stats = None

    # Density scores are a pure function of the images; compute once.
    if cfg.use_fds:
        scores = compute_density_scores(split, cfg, rng)
        hard_known = None
    else:
        scores = None
        hard_known = np.ones(len(split.unlabeled), dtype=bool)

    # Unified sample table: (image, label, is_labeled, unlabeled_index).
    records = [(s.image, s.label, True, -1) for s in split.labeled]
    records += [
        (s.image, -1, False, i) for i, s in enumerate(split.unlabeled)
    ]

    metrics_fh = open(metrics_path, "w", newline="")
    metrics = csv.writer(metrics_fh)
    metrics.writerow(["step", "epoch", "loss_kd", "loss_ud", "entropy_reg", "loss_total", "lr", "tau_t"])

    history = []
    report = None
    aborted = False
    step = 0
    model_core.save_checkpoint(state, ckpt_path)  # last-good starts at init

    for epoch in range(cfg.epochs):
        lr = model_core.cosine_lr(cfg.lr0, epoch, cfg.epochs)
        tau_t = objectives.tau_t_at(epoch, weights)

        if cfg.use_fds and (hard_known is None or epoch % cfg.fds_refresh_epochs == 0):
            hard_known, _ = refresh_partition(scores, cfg)

        order = rng.permutation(len(records))
        for start in range(0, len(order), cfg.batch_size):
            chosen = order[start : start + cfg.batch_size]
            images = np.stack([records[i][0] for i in chosen])
            flat = images.reshape(len(chosen), -1)

            # Pseudo-labels from the raw images (no gradient).
            raw_fwd = model_core.forward(state, flat, tau_cls=cfg.tau_s)
            pseudo = np.argmax(raw_fwd.p, axis=1)
            conf = np.max(raw_fwd.p, axis=1)

            kd_idx, ud_idx = [], []
            for pos, rec_idx in enumerate(chosen):
                _, label, is_labeled, u_idx = records[rec_idx]
                if is_labeled:
                    kd_idx.append(pos)
                elif hard_known[u_idx]:
                    kd_idx.append(pos)
                else:
                    ud_idx.append(pos)
                    bank.push(BankEntry(records[rec_idx][0], int(pseudo[pos]), float(conf[pos])))

            if cfg.use_cdas:
                feature_bank.push_batch(raw_fwd.h, pseudo)

            grads = model_core.Gradients.zeros_like(state)
            student_ps = []
            view_records = []  # (fwd, dz, dcos) chunks resolved after losses

            # --- known-domain route -----------------------------------
            kd_value = 0.0
            if kd_idx:
                kd_views1, kd_views2, kd_labels = [], [], []
                for pos in kd_idx:
                    rec = records[chosen[pos]]
                    image, label, is_labeled, _ = rec
                    if is_labeled:
                        pseudo_pair = (int(label), 1.0)
                    else:
                        pseudo_pair = (int(pseudo[pos]), float(conf[pos]))
                    base = image
                    if cfg.use_cdfp:
                        if cfg.class_aware:
                            base, _ = cdfp(image, pseudo_pair, bank, cfg.eta, window, rng, cfg.gate_both)
                        else:
                            donor = bank.random_entry(rng)
                            if donor is not None:
                                base = swap_low_freq(fft2(donor.image), fft2(image), window)
                    kd_views1.append(view_spec.apply(base, rng))
                    kd_views2.append(view_spec.apply(base, rng))
                    kd_labels.append(label if is_labeled else -1)
                f1 = model_core.forward(state, np.stack(kd_views1).reshape(len(kd_idx), -1), cfg.tau_s)
                f2 = model_core.forward(state, np.stack(kd_views2).reshape(len(kd_idx), -1), cfg.tau_s)
                kd_batch = objectives.KdBatch(
                    z1=f1.z, z2=f2.z, cos1=f1.cos, cos2=f2.cos, labels=np.array(kd_labels)
                )
                kd_value, kd_grads = objectives.loss_kd(kd_batch, weights, tau_t)
                view_records.append((f1, kd_grads.dz1, kd_grads.dcos1))
                view_records.append((f2, kd_grads.dz2, kd_grads.dcos2))
                student_ps += [f1, f2]

            # --- unknown-domain route ---------------------------------
            ud_value = 0.0
            if ud_idx:
                vas, vbs, perts = [], [], []
                for pos in ud_idx:
                    image = records[chosen[pos]][0]
                    if cfg.use_idfp:
                        va, vb, pert = idfp(image, view_spec, view_spec, window, rng)
                        perts.append(pert)
                    else:
                        va = view_spec.apply(image, rng)
                        vb = view_spec.apply(image, rng)
                    vas.append(va)
                    vbs.append(vb)
                fa = model_core.forward(state, np.stack(vas).reshape(len(ud_idx), -1), cfg.tau_s)
                fb = model_core.forward(state, np.stack(vbs).reshape(len(ud_idx), -1), cfg.tau_s)
                if cfg.use_idfp:
                    fp = model_core.forward(state, np.stack(perts).reshape(len(ud_idx), -1), cfg.tau_s)
                else:
                    fp = fa  # two-view path never reads the third view
                ud_batch = objectives.UdBatch(
                    za=fa.z, zb=fb.z, zp=fp.z, cosa=fa.cos, cosb=fb.cos, cosp=fp.cos
                )
                ud_value, ud_grads = objectives.loss_ud(
                    ud_batch, weights, tau_t, use_perturbed=cfg.use_idfp
                )
                view_records.append((fa, ud_grads.dza, ud_grads.dcosa))
                view_records.append((fb, ud_grads.dzb, ud_grads.dcosb))
                student_ps += [fa, fb]
                if cfg.use_idfp:
                    view_records.append((fp, ud_grads.dzp, ud_grads.dcosp))
                    student_ps.append(fp)

            # --- entropy regularizer over every student prediction ----
            ent_value = 0.0
            if student_ps and cfg.epsilon > 0:
                stacked = np.vstack([f.p for f in student_ps])
                ent_value, dp_all = objectives.entropy_reg(stacked)
                offset = 0
                for fwd in student_ps:
                    rows = fwd.p.shape[0]
                    chunk = dp_all[offset : offset + rows]
                    offset += rows
                    dcos_extra = cfg.epsilon * model_core.softmax_vjp(fwd.p, chunk) / cfg.tau_s
                    for j, (f, dz, dcos) in enumerate(view_records):
                        if f is fwd:
                            view_records[j] = (f, dz, dcos + dcos_extra)
                            break

            # --- CDAS auxiliary ----------------------------------------
            aux_value = 0.0
            if cfg.use_cdas and cdas_stats is not None:
                aux_value, aux_fwd, aux_dz, aux_dcos = _cdas_auxiliary(
                    state, feature_bank, cdas_stats, cfg, weights, rng
                )
                if aux_fwd is not None:
                    grads.add_(
                        model_core.backward(state, aux_fwd, dz=aux_dz, dcos=aux_dcos),
                        scale=cfg.cdas_weight,
                    )

            for fwd, dz, dcos in view_records:
                grads.add_(model_core.backward(state, fwd, dz=dz, dcos=dcos))

            total = objectives.loss_total(kd_value, ud_value, ent_value, cfg.epsilon)
            if not np.isfinite(total) or not np.isfinite(aux_value) or not grads.all_finite():
                warnings.warn(f"non-finite loss at step {step}; aborting with last-good checkpoint")
                aborted = True
                break

            model_core.sgd_step(state, grads, lr)
            metrics.writerow(
                [
                    step,
                    epoch,
                    f"{kd_value:.8f}",
                    f"{ud_value:.8f}",
                    f"{ent_value:.8f}",
                    f"{total:.8f}",
                    f"{lr:.8f}",
                    f"{tau_t:.8f}",
                ]
            )
            step += 1

        if aborted:
            break
        model_core.save_checkpoint(state, ckpt_path)

        if cfg.use_cdas:
            embs, labels = feature_bank.all_embeddings()
            if embs.shape[0] >= split.n_classes:
                cdas_stats = compute_difficulty(embs, labels, state.prototypes)
                cdas_stats.write_csv(out_dir / "difficulty.csv")

        if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            report = evaluate_split(state, split, cfg.tau_s)
            acc = report.accuracy("overall", "All")
            history.append((epoch, acc))

    metrics_fh.close()
    if report is None and not aborted:
        report = evaluate_split(state, split, cfg.tau_s)

    preds, confs, _ = predict_unlabeled(state, split, cfg.tau_s)
    with open(preds_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "prediction", "confidence"])
        for sample, pred, c in zip(split.unlabeled, preds, confs):
            writer.writerow([sample.sample_id, int(pred), f"{c:.6f}"])

    if report is not None:
        report.write_json(out_dir / "eval_report.json")
        report.write_csv_row(out_dir / "eval_report_row.csv", run_id=f"seed{cfg.seed}")
    return TrainResult(
        report=report,
        metrics_path=metrics_path,
        checkpoint_path=ckpt_path,
        predictions_path=preds_path,
        aborted=aborted,
        history=history,
    )
