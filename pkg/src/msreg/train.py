"""Training loop: batched forward, mining, loss, backward, SGD step.

Batch norm statistics span all clouds of a batch (both sides of every
pair). The optimized objective is the contrastive loss normalized by
the number of positive pairs in the batch, which keeps the step size
meaningful across batch compositions; the trace reports that
per-positive mean.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autograd import Tape, scale, add, sgd_step
from .errors import NonFiniteError, TrainingError
from .loss import (
    DEFAULT_M_MINUS,
    DEFAULT_M_PLUS,
    build_negative_candidates,
    contrastive_loss,
    mine_positive_matches,
)
from .model import Model, forward_multiscale_batch
from .pairgen import PairSample


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.8
    batch_size: int = 4
    epochs: int = 10
    m_plus: float = DEFAULT_M_PLUS
    m_minus: float = DEFAULT_M_MINUS
    pos_radius: float = 0.1
    num_pos_per_pair: int = 512
    num_neg_candidates: int = 256
    seed: int = 0

    def __post_init__(self):
        if not (self.m_minus > self.m_plus >= 0):
            raise ValueError("margins must satisfy m_minus > m_plus >= 0")
        if self.pos_radius <= 0:
            raise ValueError("pos_radius must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    mean_pos_dist: float
    mean_hardest_neg_dist: float


def train(
    model: Model,
    pairs: list[PairSample],
    config: TrainConfig,
    log=None,
) -> tuple[Model, list[EpochStats]]:
    """Train in place; returns the model and the per-epoch loss trace."""
    if not pairs:
        raise ValueError("training needs at least one pair")
    trace: list[EpochStats] = []
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 1, epoch]).permutation(len(pairs))
        tot_loss = tot_pos = 0.0
        tot_pos_d = tot_neg_d = 0.0
        n_anchors = 0
        for bi in range(0, len(order), config.batch_size):
            batch_ids = order[bi : bi + config.batch_size]
            try:
                info = _train_batch(model, pairs, batch_ids, config, epoch)
            except NonFiniteError as exc:
                raise TrainingError(
                    f"non-finite loss in epoch {epoch}, batch {bi // config.batch_size} "
                    f"(pairs {batch_ids.tolist()}): {exc}"
                ) from exc
            tot_loss += info["loss"]
            tot_pos += info["num_positives"]
            tot_pos_d += info["sum_pos_dist"]
            tot_neg_d += info["sum_hardest_neg_dist"]
            n_anchors += 2 * info["num_positives"]
        stats = EpochStats(
            epoch=epoch,
            mean_loss=tot_loss / max(tot_pos, 1.0),
            mean_pos_dist=tot_pos_d / max(tot_pos, 1.0),
            mean_hardest_neg_dist=tot_neg_d / max(n_anchors, 1),
        )
        trace.append(stats)
        if log is not None:
            log(
                f"epoch {stats.epoch}: loss/pos {stats.mean_loss:.5f} "
                f"pos_dist {stats.mean_pos_dist:.4f} "
                f"hard_neg_dist {stats.mean_hardest_neg_dist:.4f}"
            )
    return model, trace


def _train_batch(model, pairs, batch_ids, config, epoch) -> dict:
    tape = Tape()
    clouds = []
    for pid in batch_ids:
        clouds.extend([pairs[pid].X, pairs[pid].Y])
    descs = forward_multiscale_batch(model, clouds, tape, training=True)
    loss_nodes = []
    info = {"loss": 0.0, "num_positives": 0, "sum_pos_dist": 0.0, "sum_hardest_neg_dist": 0.0}
    for n, pid in enumerate(batch_ids):
        pair = pairs[pid]
        rng = np.random.default_rng([config.seed, 2, epoch, int(pid)])
        positives = mine_positive_matches(
            pair.X, pair.Y, pair.T_gt, config.pos_radius,
            max_pairs=config.num_pos_per_pair, rng=rng,
        )
        if len(positives) == 0:
            continue
        negs = build_negative_candidates(
            pair.X, pair.Y, positives, config.pos_radius,
            num_candidates=config.num_neg_candidates, rng=rng,
        )
        node = contrastive_loss(
            tape, descs[2 * n], descs[2 * n + 1], positives, negs,
            m_plus=config.m_plus, m_minus=config.m_minus,
        )
        loss_nodes.append(node)
        for key in info:
            info[key] += node.info[key]
    if not loss_nodes:
        return info
    total = loss_nodes[0]
    for node in loss_nodes[1:]:
        total = add(tape, total, node)
    objective = scale(tape, total, 1.0 / max(info["num_positives"], 1))
    tape.backward(objective)
    sgd_step(model.params, config.lr, config.momentum)
    return info


def write_trace_csv(trace: list[EpochStats], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "mean_pos_dist", "mean_hardest_neg_dist"])
        for row in trace:
            writer.writerow(
                [row.epoch, repr(row.mean_loss), repr(row.mean_pos_dist),
                 repr(row.mean_hardest_neg_dist)]
            )
