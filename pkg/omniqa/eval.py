from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from scipy import optimize, stats
from scipy.special import expit
from sklearn.metrics import roc_auc_score

import pandas as pd
import numpy as np
import logging
import json
import os

from omniqa.dataset import DatasetManifest
from omniqa.utils.errors import DataError

logger = logging.getLogger(__name__)


def _as_pair(x, y, min_n):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"score vectors differ in length: {x.size} vs {y.size}")
    if x.size < min_n:
        raise ValueError(f"need at least {min_n} samples, got {x.size}")
    return x, y


def srocc(x, y) -> Optional[float]:
    """
    Spearman rank correlation (average ranks on ties).

    :return: None when either input is constant, where the correlation is undefined.
    """
    x, y = _as_pair(x, y, 3)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(stats.spearmanr(x, y)[0])


@dataclass
class LogisticParams:
    beta1: float
    beta2: float
    beta3: float
    beta4: float
    beta5: float

    def as_array(self):
        return np.array([self.beta1, self.beta2, self.beta3, self.beta4, self.beta5])


def logistic5(x, b1, b2, b3, b4, b5):
    """b1 * (1/2 - 1 / (1 + exp(b2 (x - b3)))) + b4 x + b5"""
    x = np.asarray(x, dtype=np.float64)
    return b1 * (0.5 - expit(-b2 * (x - b3))) + b4 * x + b5


@dataclass
class LogisticFit:
    params: LogisticParams
    sse: float
    fallback: bool = False

    def __call__(self, x):
        return logistic5(x, *self.params.as_array())


def _initial_guesses(pred, mos, n_starts, rng):
    slope, intercept = np.polyfit(pred, mos, 1)
    spread = np.ptp(pred) or 1.0
    base = np.array([np.ptp(mos), 4.0 / spread, np.mean(pred), slope, intercept])
    starts = [base]
    for factor in (0.25, 4.0, -1.0):
        start = base.copy()
        start[1] *= factor
        starts.append(start)
    for _ in range(n_starts):
        jitter = 1.0 + 0.1 * rng.standard_normal(5)
        starts.append(base * jitter)
    return starts, np.array([0.0, 0.0, 0.0, slope, intercept])


def fit_logistic(pred, mos, n_starts: int = 5, seed: int = 0) -> LogisticFit:
    """
    Least-squares fit of the five-parameter logistic mapping pred -> mos:
    Nelder-Mead from several starts, each polished by a trust-region
    least-squares solve. The affine fit is always a candidate, so the
    result is never worse than linear regression. When no start converges
    to finite parameters the affine fit is returned with `fallback` set.
    """
    pred, mos = _as_pair(pred, mos, 6)
    rng = np.random.default_rng(seed)
    starts, linear = _initial_guesses(pred, mos, n_starts, rng)

    def residuals(beta):
        return logistic5(pred, *beta) - mos

    def sse(beta):
        r = residuals(beta)
        return float(r @ r)

    best, best_sse = None, np.inf
    with np.errstate(over='ignore', invalid='ignore'):
        for start in starts:
            res = optimize.minimize(sse, start, method='Nelder-Mead',
                                    options={'xatol': 1e-10, 'fatol': 1e-14, 'maxiter': 20000, 'maxfev': 20000})
            candidate = res.x
            try:
                polished = optimize.least_squares(residuals, candidate, xtol=1e-15, ftol=1e-15, gtol=1e-15)
                if np.all(np.isfinite(polished.x)) and sse(polished.x) <= sse(candidate):
                    candidate = polished.x
            except ValueError:
                pass
            value = sse(candidate)
            if np.all(np.isfinite(candidate)) and np.isfinite(value) and value < best_sse:
                best, best_sse = candidate, value

    linear_sse = sse(linear)
    if best is None:
        logger.warning("logistic fit diverged from every start, using the linear fit")
        return LogisticFit(LogisticParams(*linear), linear_sse, fallback=True)
    if linear_sse <= best_sse:
        best, best_sse = linear, linear_sse
    return LogisticFit(LogisticParams(*best), best_sse)


def plcc_rmse(pred, mos) -> Tuple[float, float, LogisticFit]:
    """Pearson correlation and RMSE between the logistic-mapped predictions and MOS."""
    pred, mos = _as_pair(pred, mos, 6)
    fit = fit_logistic(pred, mos)
    mapped = fit(pred)
    rmse = float(np.sqrt(np.mean((mapped - mos) ** 2)))
    if np.ptp(mapped) == 0 or np.ptp(mos) == 0:
        return float('nan'), rmse, fit
    plcc = float(np.clip(stats.pearsonr(mapped, mos)[0], -1.0, 1.0))
    return plcc, rmse, fit


@dataclass(frozen=True)
class QualityPair:
    """
    Two images compared subjectively and objectively.

    :param score_a: Objective score of image A.
    :param score_b: Objective score of image B.
    :param different: Subjects rate the two significantly differently.
    :param a_better: Subjects prefer A (meaningful when `different`).
    """
    score_a: float
    score_b: float
    different: bool
    a_better: bool = False


def _auc(labels, scores) -> Optional[float]:
    labels = np.asarray(labels, dtype=bool)
    if labels.all() or not labels.any():
        return None
    return float(roc_auc_score(labels, scores))


def krasula(pairs: Sequence[QualityPair]) -> Tuple[Optional[float], Optional[float], Optional[float]]:
    """
    Pairwise analysis of an objective metric.

    AUC-DS separates different from similar pairs by |score_a - score_b|.
    AUC-BW separates better from worse among different pairs by the signed
    difference, taking every different pair in both orders. C0 is the
    fraction of different pairs whose objective difference has the sign of
    the subjective preference.

    :return: (auc_ds, auc_bw, c0); a statistic whose classes are empty is None.
    """
    if not pairs:
        return None, None, None
    delta = np.array([p.score_a - p.score_b for p in pairs], dtype=np.float64)
    different = np.array([p.different for p in pairs], dtype=bool)
    auc_ds = _auc(different, np.abs(delta))

    if not different.any():
        return auc_ds, None, None
    d = delta[different]
    better = np.array([p.a_better for p in pairs], dtype=bool)[different]
    auc_bw = _auc(np.concatenate([better, ~better]), np.concatenate([d, -d]))
    c0 = float(np.mean(np.where(better, d > 0, d < 0)))
    return auc_ds, auc_bw, c0


def pairs_from_opinion_scores(opinion_scores: Sequence[Sequence[float]],
                              predictions: Sequence[float],
                              alpha: float = 0.05) -> List[QualityPair]:
    """
    Label every image pair from individual subject scores with Welch's
    t-test: significantly different at level `alpha`, and A better when its
    mean opinion is higher.

    :param opinion_scores: Individual scores of every image.
    :param predictions: Objective score of every image.
    """
    if len(opinion_scores) != len(predictions):
        raise ValueError("one prediction per image is required")
    means = [float(np.mean(s)) for s in opinion_scores]
    pairs = []
    for i in range(len(predictions)):
        for j in range(i + 1, len(predictions)):
            p_value = stats.ttest_ind(opinion_scores[i], opinion_scores[j], equal_var=False).pvalue
            different = bool(np.isfinite(p_value) and p_value < alpha)
            pairs.append(QualityPair(float(predictions[i]), float(predictions[j]),
                                     different, means[i] > means[j]))
    return pairs


def split_by_reference(manifest: DatasetManifest,
                       n_test_refs: int = 3,
                       seed: int = 0) -> Tuple[DatasetManifest, DatasetManifest]:
    """Seeded split that puts all images of `n_test_refs` references in the test set."""
    refs = sorted(manifest.ref_ids())
    if n_test_refs < 1 or len(refs) < max(4, n_test_refs + 1):
        raise DataError(f"cannot hold out {n_test_refs} of {len(refs)} references")
    rng = np.random.default_rng(seed)
    test_refs = set(rng.choice(refs, size=n_test_refs, replace=False).tolist())
    train_refs = [r for r in refs if r not in test_refs]
    logger.info("split: %d train references, test references %s", len(train_refs), sorted(test_refs))
    return manifest.subset(train_refs), manifest.subset(test_refs)


@dataclass
class EvalReport:
    srocc: Optional[float]
    plcc: float
    rmse: float
    n: int
    auc_ds: Optional[float] = None
    auc_bw: Optional[float] = None
    c0: Optional[float] = None
    logistic_fallback: bool = False

    def __post_init__(self):
        assert self.srocc is None or -1.0 - 1e-12 <= self.srocc <= 1.0 + 1e-12
        assert np.isnan(self.plcc) or -1.0 - 1e-12 <= self.plcc <= 1.0 + 1e-12
        assert self.rmse >= 0

    def to_dict(self) -> Dict:
        return asdict(self)

    def to_csv(self, path: str):
        pd.DataFrame([self.to_dict()]).to_csv(path, index=False, float_format='%.6f')

    def __str__(self):
        def fmt(v):
            return 'undefined' if v is None or (isinstance(v, float) and np.isnan(v)) else f'{v:.4f}'
        lines = [f'n      {self.n}',
                 f'SROCC  {fmt(self.srocc)}',
                 f'PLCC   {fmt(self.plcc)}',
                 f'RMSE   {fmt(self.rmse)}']
        if self.auc_ds is not None or self.auc_bw is not None or self.c0 is not None:
            lines += [f'AUC-DS {fmt(self.auc_ds)}',
                      f'AUC-BW {fmt(self.auc_bw)}',
                      f'C0     {fmt(self.c0)}']
        if self.logistic_fallback:
            lines.append('(logistic fit diverged, linear mapping used)')
        return '\n'.join(lines)


def evaluate_predictions(pred, mos, pairs: Optional[Sequence[QualityPair]] = None) -> EvalReport:
    plcc, rmse, fit = plcc_rmse(pred, mos)
    auc_ds, auc_bw, c0 = krasula(pairs) if pairs else (None, None, None)
    return EvalReport(srocc=srocc(pred, mos), plcc=plcc, rmse=rmse, n=len(np.ravel(mos)),
                      auc_ds=auc_ds, auc_bw=auc_bw, c0=c0, logistic_fallback=fit.fallback)


def write_scatter_csv(path: str, mos, pred, fit: Optional[LogisticFit] = None):
    """Columns mos, raw_pred, mapped_pred for external plotting."""
    pred = np.asarray(pred, dtype=np.float64)
    fit = fit or fit_logistic(pred, mos)
    pd.DataFrame({'mos': np.asarray(mos, dtype=np.float64),
                  'raw_pred': pred,
                  'mapped_pred': fit(pred)}).to_csv(path, index=False, float_format='%.10g')


class Evaluator:
    def __init__(self,
                 manifest: DatasetManifest,
                 output_folder: str,
                 name: str = 'vgcn',
                 suffix_log: str = ''):
        """
        Evaluates predicted qualities of a manifest, overall and per
        distortion type, and stores the reports.

        :param manifest: Evaluated records; predictions come in the same order.
        :param output_folder: Where to store the reports.
        :param name: Name of the evaluated model (file names).
        :param suffix_log: Suffix of the report files (e.g. the split seed).
        """
        self.manifest = manifest
        self.output_folder = output_folder
        self.name = name
        self.suffix_log = suffix_log
        self.mos = manifest.mos()
        self.report: Optional[EvalReport] = None
        self.per_type: Optional[pd.DataFrame] = None
        self.predictions: Optional[np.ndarray] = None

    def evaluate(self, predictions, pairs: Optional[Sequence[QualityPair]] = None) -> EvalReport:
        predictions = np.asarray(predictions, dtype=np.float64)
        if predictions.shape != self.mos.shape:
            raise ValueError(f"{predictions.size} predictions for {self.mos.size} records")
        self.predictions = predictions
        self.report = evaluate_predictions(predictions, self.mos, pairs)
        self.per_type = self.breakdown(predictions)
        return self.report

    def breakdown(self, predictions) -> pd.DataFrame:
        """SROCC / PLCC / RMSE restricted to each distortion type."""
        types = np.array([r.distortion_type for r in self.manifest])
        rows = []
        for kind in sorted(set(types)):
            mask = types == kind
            row = {'distortion_type': kind, 'n': int(mask.sum()),
                   'srocc': np.nan, 'plcc': np.nan, 'rmse': np.nan}
            if mask.sum() >= 3:
                row['srocc'] = srocc(predictions[mask], self.mos[mask])
            if mask.sum() >= 6:
                row['plcc'], row['rmse'], _ = plcc_rmse(predictions[mask], self.mos[mask])
            rows.append(row)
        return pd.DataFrame(rows, columns=['distortion_type', 'n', 'srocc', 'plcc', 'rmse'])

    def dump_summary(self, report_path: Optional[str] = None) -> str:
        """
        Store the report CSV, the per-type breakdown, the scatter data and a
        JSON summary. Returns the report path.
        """
        assert self.report is not None, "You first need to call self.evaluate(...)"
        os.makedirs(self.output_folder, exist_ok=True)
        stem = f'{self.name}_{self.suffix_log}' if self.suffix_log else self.name
        report_path = report_path or os.path.join(self.output_folder, f'{stem}_report.csv')

        self.report.to_csv(report_path)
        self.per_type.to_csv(os.path.join(self.output_folder, f'{stem}_per_type.csv'),
                             index=False, float_format='%.6f')
        write_scatter_csv(os.path.join(self.output_folder, f'{stem}_scatter.csv'), self.mos, self.predictions)
        with open(os.path.join(self.output_folder, f'{stem}_summary.json'), 'w') as f:
            json.dump({'metrics': self.report.to_dict(),
                       'per_type': self.per_type.replace({np.nan: None}).to_dict(orient='records')},
                      f, indent=4)
        logger.info("reports stored at %s", self.output_folder)
        return report_path
