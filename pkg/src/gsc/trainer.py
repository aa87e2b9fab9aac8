"""Dual-network co-training loop with per-epoch label estimation.

Two independently initialized encoder pairs train side by side. The labels
weighting each network's losses are always estimated from the other
network's embeddings (from a snapshot taken at epoch start, so training the
two networks in sequence or in parallel gives identical results). Cross-modal
indicators and intra-modal structure scores accumulate over the whole epoch,
one Gaussian mixture is fitted per network per epoch, and the label stores
are updated by momentum before the next epoch begins.

Epoch indexing: the epoch counter spans warm-up and main epochs, starting at
0; the learning-rate decay epoch is measured on that counter.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .discrimination import (SoftLabels, cross_modal_indicator, ensemble_update,
                             gmm_fit, gmm_posterior, intra_structure_score)
from .evalmetrics import DetectionReport, RetrievalReport, detection_metrics, retrieval_report
from .losses import grad_total
from .model import Encoder, encode, sim_matrix
from .numerics import NumericalError, adam_step, derive_rng
from .synthdata import PairDataset

__all__ = [
    "MODES",
    "Network",
    "RunResult",
    "RunState",
    "TrainConfig",
    "batch_schedule",
    "evaluate_retrieval",
    "init_state",
    "learning_rate",
    "run",
    "train_epoch",
    "warmup",
]

MODES = ("gsc", "baseline", "cm_only", "im_only", "single_net", "no_ensemble")


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a training run.

    Defaults: temperatures (0.07, 1), loss balance 0.01, label momentum 0.7,
    batch 128, step decay x0.2 at epoch 15; learning rate and encoder sizes
    are chosen for desk-scale synthetic data.
    """

    tau1: float = 0.07
    tau2: float = 1.0
    gamma: float = 0.01
    beta1: float = 0.7
    beta2: float = 0.7
    batch_size: int = 128
    epochs: int = 20
    lr: float = 5e-3
    lr_decay: float = 0.2
    lr_decay_epoch: int = 15
    warmup_epochs: int = 1
    seed: int = 0
    mode: str = "gsc"
    embed_dim: int = 32
    hidden_dims: tuple = (64,)
    gmm_iters: int = 50
    gmm_floor: float = 1e-4
    track_labels: bool = False

    def validate(self) -> None:
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ValueError("temperatures must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not (0.0 <= self.beta1 <= 1.0 and 0.0 <= self.beta2 <= 1.0):
            raise ValueError("momentum coefficients must lie in [0, 1]")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.lr <= 0 or self.lr_decay <= 0:
            raise ValueError("learning rate and decay factor must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.embed_dim < 1 or any(int(h) < 1 for h in self.hidden_dims):
            raise ValueError("encoder dims must be >= 1")

    def resolved(self) -> "TrainConfig":
        """Apply mode-implied settings.

        ``no_ensemble`` replaces temporal ensembling with a plain 5-epoch
        warm-up: both momentum coefficients become 1 so each epoch's
        estimates are used as-is.
        """
        if self.mode != "no_ensemble":
            return self
        return replace(self, beta1=1.0, beta2=1.0, warmup_epochs=5)


@dataclass
class Network:
    """One encoder pair; the unit being co-trained."""

    name: str
    img_enc: Encoder
    txt_enc: Encoder

    def copy(self) -> "Network":
        return Network(self.name, self.img_enc.copy(), self.txt_enc.copy())


@dataclass
class RunState:
    """Mutable training state: networks, their label stores, epoch counter.

    ``labels[k]`` weights the losses of ``nets[k]`` and is estimated from
    the other network's outputs (from its own in single-network mode).
    """

    nets: list
    labels: list
    epoch: int = 0


def _other(k: int, n_nets: int) -> int:
    return (k + 1) % n_nets


def init_state(cfg: TrainConfig, train_ds: PairDataset) -> RunState:
    """Fresh networks (differing only by init stream) and all-ones labels."""
    cfg = cfg.resolved()
    cfg.validate()
    names = ["A"] if cfg.mode == "single_net" else ["A", "B"]
    d_img = train_ds.img.shape[1]
    d_txt = train_ds.txt.shape[1]
    dims_img = [d_img, *cfg.hidden_dims, cfg.embed_dim]
    dims_txt = [d_txt, *cfg.hidden_dims, cfg.embed_dim]
    nets = []
    for k, name in enumerate(names):
        nets.append(Network(
            name=name,
            img_enc=Encoder.init(dims_img, derive_rng(cfg.seed, "init", k, "img")),
            txt_enc=Encoder.init(dims_txt, derive_rng(cfg.seed, "init", k, "txt")),
        ))
    labels = [SoftLabels.ones(train_ds.n, source=f"net:{names[_other(k, len(names))]}")
              for k in range(len(names))]
    return RunState(nets=nets, labels=labels)


def batch_schedule(n: int, batch_size: int, rng: np.random.Generator) -> list:
    """Shuffled index batches covering range(n) exactly once.

    A trailing singleton is merged into the previous batch because the
    in-batch indicators need at least two samples.
    """
    order = rng.permutation(n)
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and chunks[-1].size < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule: exactly lr * lr_decay from the decay epoch onward."""
    return cfg.lr * cfg.lr_decay if epoch >= cfg.lr_decay_epoch else cfg.lr


def _train_net_over(net: Network, x_img, x_txt, y_full, schedule, lr, cfg,
                    epoch: int):
    """Adam-train one network across a batch schedule; returns loss sums."""
    cm_sum, im_sum = 0.0, 0.0
    for b_i, idx in enumerate(schedule):
        try:
            report, grads = grad_total(net.img_enc, net.txt_enc,
                                       x_img[idx], x_txt[idx], y_full[idx],
                                       cfg.tau1, cfg.tau2, cfg.gamma)
        except NumericalError as err:
            raise NumericalError(
                f"epoch {epoch}, net {net.name}, batch {b_i}: {err}") from err
        cm_sum += report.l_cm
        im_sum += report.l_im
        adam_step(net.img_enc.params(), grads.img, net.img_enc.adam, lr)
        adam_step(net.txt_enc.params(), grads.txt, net.txt_enc.adam, lr)
    return cm_sum, im_sum, len(schedule)


def _estimate_for_net(k: int, sources, labels_y, x_img, x_txt, schedule,
                      cfg: TrainConfig):
    """Per-sample label estimates for net k from its label-source network.

    The cross-modal indicator and the purified structure score are computed
    batch by batch (each sample appears in exactly one batch); the structure
    scores for the whole split then feed a single mixture fit.
    """
    n = x_img.shape[0]
    est_cm = np.ones(n)
    scores = np.zeros(n)
    src = sources[_other(k, len(sources))]
    for idx in schedule:
        e_i = encode(src.img_enc, x_img[idx], "img")
        e_t = encode(src.txt_enc, x_txt[idx], "txt")
        if cfg.mode != "im_only":
            est_cm[idx] = cross_modal_indicator(sim_matrix(e_i, e_t), cfg.tau1)
        if cfg.mode != "cm_only":
            scores[idx] = intra_structure_score(
                sim_matrix(e_i, e_i), sim_matrix(e_t, e_t), labels_y[idx])
    if cfg.mode == "cm_only":
        y_im = np.ones(n)
    else:
        gmm = gmm_fit(scores, iters=cfg.gmm_iters, floor=cfg.gmm_floor)
        y_im = gmm_posterior(gmm, scores)
    return est_cm, y_im


def _seed_labels(state: RunState, train_ds: PairDataset, cfg: TrainConfig) -> None:
    """Initialize label stores from raw estimates (no ensembling)."""
    x_img = train_ds.img
    x_txt = train_ds.paired_txt()
    sources = [net.copy() for net in state.nets]
    names = [net.name for net in state.nets]
    new_labels = []
    for k in range(len(state.nets)):
        schedule = batch_schedule(train_ds.n, cfg.batch_size,
                                  derive_rng(cfg.seed, "est-init", k))
        est_cm, y_im = _estimate_for_net(k, sources, state.labels[k].y,
                                         x_img, x_txt, schedule, cfg)
        source = f"net:{names[_other(k, len(names))]}"
        new_labels.append(SoftLabels.from_estimates(est_cm, y_im, source=source))
    state.labels = new_labels


def warmup(state: RunState, train_ds: PairDataset, cfg: TrainConfig,
           on_epoch=None) -> list:
    """Train both networks with unit labels for cfg.warmup_epochs epochs.

    After the last warm-up epoch the label stores are seeded from raw
    estimates (they stay all-ones when warmup_epochs == 0 or in baseline
    mode). Returns one loss row per warm-up epoch; ``on_epoch``, if given,
    runs after each epoch once the state for that epoch is final.
    """
    cfg = cfg.resolved()
    x_img = train_ds.img
    x_txt = train_ds.paired_txt()
    ones = np.ones(train_ds.n)
    rows = []
    for w in range(cfg.warmup_epochs):
        lr = learning_rate(cfg, state.epoch)
        cm_sum, im_sum, n_batches = 0.0, 0.0, 0
        for k, net in enumerate(state.nets):
            schedule = batch_schedule(train_ds.n, cfg.batch_size,
                                      derive_rng(cfg.seed, "batches", state.epoch, k))
            c, i, nb = _train_net_over(net, x_img, x_txt, ones, schedule, lr,
                                       cfg, state.epoch)
            cm_sum += c
            im_sum += i
            n_batches += nb
        state.epoch += 1
        if w == cfg.warmup_epochs - 1 and cfg.mode != "baseline":
            _seed_labels(state, train_ds, cfg)
        row = {"loss_cm": cm_sum / n_batches, "loss_im": im_sum / n_batches}
        rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return rows


def train_epoch(state: RunState, train_ds: PairDataset, cfg: TrainConfig) -> dict:
    """One co-training epoch: estimate from epoch-start snapshots, train live.

    For each network k, indicators come from the other network's epoch-start
    parameters, weighted by k's labels frozen at epoch start; after the
    epoch's Adam steps, the accumulated estimates pass through the mixture
    fit and the momentum update to produce the labels for the next epoch.
    Baseline mode trains with unit labels and skips estimation entirely.
    """
    cfg = cfg.resolved()
    x_img = train_ds.img
    x_txt = train_ds.paired_txt()
    n = train_ds.n
    lr = learning_rate(cfg, state.epoch)
    estimate = cfg.mode != "baseline"
    sources = [net.copy() for net in state.nets] if estimate else None
    schedules = [batch_schedule(n, cfg.batch_size,
                                derive_rng(cfg.seed, "batches", state.epoch, k))
                 for k in range(len(state.nets))]
    new_labels = list(state.labels)
    cm_sum, im_sum, n_batches = 0.0, 0.0, 0
    for k, net in enumerate(state.nets):
        if estimate:
            est_cm, y_im = _estimate_for_net(k, sources, state.labels[k].y,
                                             x_img, x_txt, schedules[k], cfg)
            new_labels[k] = ensemble_update(state.labels[k], est_cm, y_im,
                                            cfg.beta1, cfg.beta2)
        c, i, nb = _train_net_over(net, x_img, x_txt, state.labels[k].y,
                                   schedules[k], lr, cfg, state.epoch)
        cm_sum += c
        im_sum += i
        n_batches += nb
    state.labels = new_labels
    state.epoch += 1
    return {"loss_cm": cm_sum / n_batches, "loss_im": im_sum / n_batches}


def evaluate_retrieval(nets, ds: PairDataset) -> RetrievalReport:
    """Retrieval on a split using the mean of the networks' similarities."""
    sims = None
    for net in nets:
        e_i = encode(net.img_enc, ds.img, "img")
        e_t = encode(net.txt_enc, ds.txt, "txt")
        s = sim_matrix(e_i, e_t)
        sims = s if sims is None else sims + s
    return retrieval_report(sims / len(nets))


def combined_labels(labels) -> np.ndarray:
    """Run-level label estimate: mean over networks of the combined y."""
    return np.mean([lb.y for lb in labels], axis=0)


@dataclass
class RunResult:
    """Everything a finished run produces.

    ``best_nets`` is the checkpoint with the highest dev recall sum;
    ``history`` has one row per epoch (warm-up included) with the keys
    {epoch, mode, loss_cm, loss_im, dev_r1_i2t, dev_r1_t2i, recall_sum,
    det_acc, det_auc}.
    """

    history: list
    best_epoch: int
    best_recall_sum: float
    best_nets: list
    final_nets: list
    labels: list
    detection: DetectionReport | None
    label_history: list | None = None


def run(cfg: TrainConfig, train_ds: PairDataset, dev_ds: PairDataset) -> RunResult:
    """Warm-up, cfg.epochs co-training epochs, per-epoch dev evaluation.

    Model selection keeps the network snapshot with the best dev recall sum.
    Identical (cfg, data) reproduce the metric history bit-exactly.
    """
    cfg = cfg.resolved()
    cfg.validate()
    train_ds.validate()
    dev_ds.validate()
    state = init_state(cfg, train_ds)
    history = []
    label_history = [] if cfg.track_labels else None
    best = {"recall_sum": -1.0, "epoch": -1, "nets": [net.copy() for net in state.nets]}

    def record(loss_row):
        retr = evaluate_retrieval(state.nets, dev_ds)
        y_run = combined_labels(state.labels)
        det = detection_metrics(y_run, train_ds.noise_mask)
        epoch_idx = state.epoch - 1
        history.append({
            "epoch": epoch_idx,
            "mode": cfg.mode,
            "loss_cm": loss_row["loss_cm"],
            "loss_im": loss_row["loss_im"],
            "dev_r1_i2t": retr.r1_i2t,
            "dev_r1_t2i": retr.r1_t2i,
            "recall_sum": retr.recall_sum,
            "det_acc": det.accuracy,
            "det_auc": det.auc,
        })
        if label_history is not None:
            label_history.append({
                "epoch": epoch_idx,
                "y_cm": np.mean([lb.y_cm for lb in state.labels], axis=0),
                "y_im": np.mean([lb.y_im for lb in state.labels], axis=0),
                "y": y_run,
            })
        if retr.recall_sum > best["recall_sum"]:
            best["recall_sum"] = retr.recall_sum
            best["epoch"] = epoch_idx
            best["nets"] = [net.copy() for net in state.nets]

    warmup(state, train_ds, cfg, on_epoch=record)
    for _ in range(cfg.epochs):
        record(train_epoch(state, train_ds, cfg))
    detection = detection_metrics(combined_labels(state.labels), train_ds.noise_mask)
    return RunResult(history=history, best_epoch=best["epoch"],
                     best_recall_sum=best["recall_sum"], best_nets=best["nets"],
                     final_nets=state.nets, labels=state.labels,
                     detection=detection, label_history=label_history)
