"""Noise-robust cross-modal retrieval training on synthetic paired data.

Dual small encoders are co-trained with purified cross-modal and intra-modal
contrastive losses; per-sample soft correspondence labels come from
structural agreement (in-batch indicator + mixture-model posterior) and are
smoothed across epochs. Everything is seeded and deterministic.
"""

from .numerics import AdamState, NumericalError, adam_step, cosine, derive_rng, logsumexp, softmax_rows
from .synthdata import GenSpec, PairDataset, generate, inject_noise, load_dataset, save_dataset, split
from .model import EmbeddingBatch, Encoder, encode, sim_matrix
from .discrimination import (GmmModel, SoftLabels, combine_labels, cross_modal_indicator,
                             ensemble_update, gmm_fit, gmm_posterior, intra_structure_score)
from .losses import GradSet, LossReport, fd_check, grad_total, loss_cm, loss_im, total_loss
from .evalmetrics import (DetectionReport, RetrievalReport, assemble_report,
                          detection_metrics, recall_at_k, retrieval_report)
from .trainer import (MODES, RunResult, TrainConfig, evaluate_retrieval, init_state,
                      run, train_epoch, warmup)

__version__ = "0.1.0"
