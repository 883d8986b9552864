"""
Three-stage training of VGCN.

    I    descriptor pretraining on 2D patches
    II   local and global branches trained separately against MOS
    III  joint fine-tuning of the regressor with slow branch updates

Every stage minimizes the mean squared error with Adam.
"""
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

from torch.utils.data import DataLoader, Dataset
from tqdm import tqdm

import torch.nn.functional as F
import pandas as pd
import numpy as np
import logging
import torch

from omniqa.dataset import Batch, PatchDataset, collate
from omniqa.model import VGCN
from omniqa.nn.optim import AdamOptimizer, ParamGroup
from omniqa.utils.errors import DataError, NumericError

logger = logging.getLogger(__name__)

STAGES = ('1', '2', '3', 'all')


@dataclass
class TrainConfig:
    """
    Learning rates follow the relative structure of the original schedule
    with epochs scaled to desk size (steps and milestones scale along).

    :param seed: Seed of shuffling and crops.
    :param batch_size: Images per mini-batch in stage II.
    :param joint_batch_size: Images per mini-batch in stage III.
    :param patch_batch_size: Patches per mini-batch in stage I.
    :param patches_per_image: Random crops drawn from every training image in stage I.
    """
    seed: int = 0
    stage1_epochs: int = 30
    stage2_epochs: int = 50
    stage3_epochs: int = 10
    batch_size: int = 16
    joint_batch_size: int = 8
    patch_batch_size: int = 16
    patches_per_image: int = 4
    stage1_lr: float = 1e-3
    local_lr: float = 1e-3
    local_step: int = 10
    local_gamma: float = 0.25
    descriptor_lr: float = 1e-6
    global_lr: float = 1e-2
    stream_lr: float = 1e-3
    global_step: int = 20
    global_gamma: float = 0.1
    branch_lr: float = 1e-6
    regressor_lr: float = 1e-2

    def __post_init__(self):
        for name in ('batch_size', 'joint_batch_size', 'patch_batch_size'):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be >= 2 for batch normalization, got {getattr(self, name)}")
        for name in ('stage1_lr', 'local_lr', 'descriptor_lr', 'global_lr', 'stream_lr',
                     'branch_lr', 'regressor_lr'):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ('stage1_epochs', 'stage2_epochs', 'stage3_epochs'):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


class TrainingLog:
    """Rows of (epoch, stage, loss, lr), written as CSV."""

    def __init__(self):
        self.rows = []

    def add(self, epoch: int, stage: str, loss: float, lr: float):
        self.rows.append({'epoch': epoch, 'stage': stage, 'loss': loss, 'lr': lr})

    def losses(self, stage: str) -> List[float]:
        return [r['loss'] for r in self.rows if r['stage'] == stage]

    def to_csv(self, path: str):
        pd.DataFrame(self.rows, columns=['epoch', 'stage', 'loss', 'lr']).to_csv(
            path, index=False, float_format='%.10g')


def _loader(dataset: Dataset, batch_size: int, seed: int, collate_fn=None) -> DataLoader:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return DataLoader(dataset, batch_size=batch_size, shuffle=True, generator=generator,
                      collate_fn=collate_fn, num_workers=0)


def _run_epochs(stage: str,
                model: VGCN,
                optimizer: AdamOptimizer,
                loader: DataLoader,
                loss_of_batch: Callable,
                epochs: int,
                log: TrainingLog,
                on_epoch: Optional[Callable[[int], None]] = None) -> List[float]:
    model.train()
    history = []
    for epoch in tqdm(range(epochs), f'Stage {stage}', leave=False):
        if on_epoch is not None:
            on_epoch(epoch)
        total, count = 0.0, 0
        for batch in loader:
            optimizer.zero_grad()
            loss, n = loss_of_batch(batch)
            if not torch.isfinite(loss):
                raise NumericError(f"stage {stage}, epoch {epoch}: non-finite loss")
            loss.backward()
            optimizer.step()
            total += float(loss) * n
            count += n
        lr = next(iter(optimizer.learning_rates().values()))
        optimizer.end_epoch()
        history.append(total / count)
        log.add(epoch, stage, history[-1], lr)
        logger.debug("stage %s epoch %d: loss %.6f (lr %.2e)", stage, epoch, history[-1], lr)
    model.eval()
    return history


def pretrain_descriptor(model: VGCN,
                        patches: PatchDataset,
                        cfg: TrainConfig,
                        log: Optional[TrainingLog] = None) -> List[float]:
    """
    Stage I: fit descriptor + patch head to the MOS of the images the
    patches come from.

    :return: Mean training loss of every epoch.
    """
    if len(patches) == 0:
        raise DataError("stage 1: empty patch dataset")
    log = log if log is not None else TrainingLog()
    optimizer = AdamOptimizer([ParamGroup('descriptor', model.descriptor, cfg.stage1_lr),
                               ParamGroup('descriptor_head', model.descriptor_head, cfg.stage1_lr)])

    def loss_of_batch(batch):
        x, mos = batch
        return F.mse_loss(model.patch_quality(x), mos), len(mos)

    history = _run_epochs('1', model, optimizer, _loader(patches, cfg.patch_batch_size, cfg.seed),
                          loss_of_batch, cfg.stage1_epochs, log, on_epoch=patches.set_epoch)
    logger.info("stage 1 done: %s", _summary(history))
    return history


def pretrain_branches(model: VGCN,
                      dataset: Dataset,
                      cfg: TrainConfig,
                      log: Optional[TrainingLog] = None,
                      branches: Sequence[str] = ('local', 'global')) -> Tuple[List[float], List[float]]:
    """
    Stage II: local branch (GCN, descriptor at a very low rate) and global
    branch (two streams and head) trained independently against MOS.

    :param branches: Subset of ('local', 'global') to train.
    :return: Per-epoch losses of the local and of the global branch.
    """
    if len(dataset) == 0:
        raise DataError("stage 2: empty dataset")
    log = log if log is not None else TrainingLog()

    local_opt = AdamOptimizer([
        ParamGroup('gcn', model.gcn, cfg.local_lr, cfg.local_step, cfg.local_gamma),
        ParamGroup('descriptor', model.descriptor, cfg.descriptor_lr),
    ])

    def local_loss(batch: Batch):
        q = model.local_forward(batch.viewports, batch.adjacency, batch.counts)
        return F.mse_loss(q, batch.mos), len(batch)

    local, global_ = [], []
    if 'local' in branches:
        local = _run_epochs('2-local', model, local_opt,
                            _loader(dataset, cfg.batch_size, cfg.seed + 1, collate),
                            local_loss, cfg.stage2_epochs, log)

    if 'global' not in branches:
        logger.info("stage 2 done: local %s", _summary(local))
        return local, global_

    global_opt = AdamOptimizer([
        ParamGroup('global_head', model.global_head, cfg.global_lr, cfg.global_step, cfg.global_gamma),
        ParamGroup('scnn', model.scnn, cfg.stream_lr, cfg.global_step, cfg.global_gamma),
        ParamGroup('vgg', model.vgg, cfg.stream_lr, cfg.global_step, cfg.global_gamma),
    ])

    def global_loss(batch: Batch):
        return F.mse_loss(model.global_forward(batch.erps), batch.mos), len(batch)

    global_ = _run_epochs('2-global', model, global_opt,
                          _loader(dataset, cfg.batch_size, cfg.seed + 2, collate),
                          global_loss, cfg.stage2_epochs, log)
    logger.info("stage 2 done: local %s, global %s", _summary(local), _summary(global_))
    return local, global_


def joint_train(model: VGCN,
                dataset: Dataset,
                cfg: TrainConfig,
                log: Optional[TrainingLog] = None) -> List[float]:
    """
    Stage III: end-to-end fine-tuning. The branches keep learning at
    `branch_lr` while the regressor learns at `regressor_lr`.
    """
    if len(dataset) == 0:
        raise DataError("stage 3: empty dataset")
    log = log if log is not None else TrainingLog()
    groups = [ParamGroup('regressor', model.regressor, cfg.regressor_lr)]
    for name in ('descriptor', 'gcn', 'scnn', 'vgg', 'global_head'):
        groups.append(ParamGroup(name, getattr(model, name), cfg.branch_lr))
    optimizer = AdamOptimizer(groups)

    def joint_loss(batch: Batch):
        q, _, _ = model(batch)
        return F.mse_loss(q, batch.mos), len(batch)

    history = _run_epochs('3', model, optimizer,
                          _loader(dataset, cfg.joint_batch_size, cfg.seed + 3, collate),
                          joint_loss, cfg.stage3_epochs, log)
    logger.info("stage 3 done: %s", _summary(history))
    return history


def train(model: VGCN,
          dataset: Dataset,
          cfg: TrainConfig,
          stage: str = 'all',
          log: Optional[TrainingLog] = None) -> TrainingLog:
    """Run one stage ('1', '2', '3') or all of them in order."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}, choose among {STAGES}")
    log = log if log is not None else TrainingLog()
    if stage in ('1', 'all'):
        patches = PatchDataset(dataset, model.cfg.viewport_size, cfg.patches_per_image, cfg.seed)
        pretrain_descriptor(model, patches, cfg, log)
    if stage in ('2', 'all'):
        pretrain_branches(model, dataset, cfg, log)
    if stage in ('3', 'all'):
        joint_train(model, dataset, cfg, log)
    return log


@torch.no_grad()
def predict_dataset(model: VGCN, dataset: Dataset, batch_size: int = 8):
    """
    Scores of every image in dataset order, in eval mode.

    :return: (q, q_local, q_global) numpy arrays.
    """
    model.eval()
    loader = DataLoader(dataset, batch_size=batch_size, shuffle=False, collate_fn=collate, num_workers=0)
    outputs = [[], [], []]
    for batch in loader:
        for out, values in zip(outputs, model(batch)):
            out.append(values.numpy())
    return tuple(np.concatenate(out).astype(np.float64) for out in outputs)


def _summary(history: Sequence[float]) -> str:
    if not history:
        return "no epochs"
    return f"loss {history[0]:.4f} -> {history[-1]:.4f} over {len(history)} epochs"
