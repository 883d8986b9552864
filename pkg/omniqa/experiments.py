"""
Ablations of the viewport sampling stage: only the local branch is
trained (stages I and II) and scored on held-out references.
"""
from dataclasses import replace
from typing import Dict, Sequence

import pandas as pd
import logging

from omniqa.dataset import DatasetManifest, OmniIQADataset, PatchDataset
from omniqa.eval import evaluate_predictions
from omniqa.model import ModelConfig, VGCN
from omniqa.trainer import TrainConfig, TrainingLog, predict_dataset, pretrain_branches, pretrain_descriptor
from omniqa.viewpoint import SAMPLING_STRATEGIES, DetectorConfig

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ['setting', 'srocc', 'plcc', 'rmse', 'n']


def run_local_branch(train_manifest: DatasetManifest,
                     test_manifest: DatasetManifest,
                     detector_cfg: DetectorConfig,
                     model_cfg: ModelConfig,
                     train_cfg: TrainConfig) -> Dict:
    """Train descriptor and GCN with one sampling setting; metrics of Q_L on the test set."""
    model = VGCN(model_cfg, detector_cfg)
    train_set = OmniIQADataset(train_manifest, detector_cfg, model_cfg).prepare_all()
    test_set = OmniIQADataset(test_manifest, detector_cfg, model_cfg).prepare_all()

    log = TrainingLog()
    patches = PatchDataset(train_set, model_cfg.viewport_size, train_cfg.patches_per_image, train_cfg.seed)
    pretrain_descriptor(model, patches, train_cfg, log)
    pretrain_branches(model, train_set, train_cfg, log, branches=('local',))

    _, q_local, _ = predict_dataset(model, test_set)
    report = evaluate_predictions(q_local, test_manifest.mos())
    return {'srocc': report.srocc, 'plcc': report.plcc, 'rmse': report.rmse, 'n': report.n}


def sampling_experiment(train_manifest: DatasetManifest,
                        test_manifest: DatasetManifest,
                        detector_cfg: DetectorConfig,
                        model_cfg: ModelConfig,
                        train_cfg: TrainConfig,
                        strategies: Sequence[str] = SAMPLING_STRATEGIES) -> pd.DataFrame:
    """Detector against uniform and random viewpoints at the same N."""
    rows = []
    for strategy in strategies:
        logger.info("sampling experiment: %s", strategy)
        metrics = run_local_branch(train_manifest, test_manifest,
                                   replace(detector_cfg, sampling=strategy), model_cfg, train_cfg)
        rows.append({'setting': strategy, **metrics})
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def viewpoint_count_experiment(train_manifest: DatasetManifest,
                               test_manifest: DatasetManifest,
                               detector_cfg: DetectorConfig,
                               model_cfg: ModelConfig,
                               train_cfg: TrainConfig,
                               counts: Sequence[int] = (5, 10, 15, 20)) -> pd.DataFrame:
    """Local-branch performance as a function of the number of viewports."""
    rows = []
    for n in counts:
        logger.info("viewpoint-count experiment: N=%d", n)
        metrics = run_local_branch(train_manifest, test_manifest,
                                   replace(detector_cfg, n_viewpoints=int(n)), model_cfg, train_cfg)
        rows.append({'setting': f'N={n}', **metrics})
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)
