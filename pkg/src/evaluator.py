"""
Model Evaluator
Leave-one-out ranking evaluation of a trained model and its reports
"""

from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import structlog
from pydantic import BaseModel, Field

from errors import UndefinedMetricError
from metrics import RankedCandidates, auc, gauc, hit_rate_at_k, ndcg_at_k
from sequences import SequenceDataset
from sine_model import SineModel

logger = structlog.get_logger(__name__)


class EvalConfig(BaseModel):
    n_negatives: int = Field(99, ge=1)
    # rank against every unobserved item instead of a sample
    full_catalog: bool = False
    seed: int = 2023
    ndcg_k: int = Field(2, ge=1)
    per_user: bool = False


class UserEvaluation(BaseModel):
    user_id: str
    auc: float
    pairs: int
    ndcg: float
    hit: float


class EvalReport(BaseModel):
    split: str
    users: int
    skipped: int
    auc: float
    gauc: float
    ndcg: float
    hit_rate: float
    k: int
    n_negatives: int
    full_catalog: bool
    per_user: List[UserEvaluation] = []

    def summary(self) -> Dict[str, Union[str, int, float, bool]]:
        return self.model_dump(exclude={"per_user"})


def candidate_items(
    target: int,
    observed: List[int],
    n_items: int,
    config: EvalConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Unobserved negatives followed by the target

    The target goes last so that score ties rank it below every negative.
    """
    unobserved = np.setdiff1d(np.arange(n_items), np.asarray(observed, dtype=np.int64))
    if config.full_catalog or len(unobserved) <= config.n_negatives:
        negatives = unobserved
    else:
        negatives = np.sort(rng.choice(unobserved, size=config.n_negatives, replace=False))
    return np.append(negatives, target).astype(np.int64)


def evaluate_model(
    model: SineModel,
    dataset: SequenceDataset,
    split: str = "test",
    config: Optional[EvalConfig] = None,
) -> EvalReport:
    """
    Rank each user's split target against unobserved items

    Args:
        model: model to score with
        dataset: sequences with val/test targets
        split: ``val`` or ``test``
        config: candidate construction and cutoff

    Returns:
        EvalReport with pooled AUC, pair-weighted GAUC and mean NDCG/HR@k
    """
    config = config or EvalConfig()
    rng = np.random.Generator(np.random.Philox(config.seed))

    instances: List[RankedCandidates] = []
    rows: List[UserEvaluation] = []
    pooled_scores, pooled_labels = [], []
    skipped = 0
    for seq in dataset.sequences:
        items, mask = seq.prefix(split, model.config.max_len)
        view_items, _ = model.encoder_view(items, mask)
        candidates = candidate_items(seq.target(split), seq.observed_items, model.n_items, config, rng)
        if len(view_items) == 0 or len(candidates) < 2:
            skipped += 1
            continue
        scores = model.score_next(items, mask, candidates)
        labels = np.zeros(len(candidates), dtype=np.int64)
        labels[-1] = 1

        inst = RankedCandidates(
            user=seq.user_id,
            candidates=candidates.tolist(),
            scores=scores.tolist(),
            labels=labels.tolist(),
        )
        instances.append(inst)
        pooled_scores.append(scores)
        pooled_labels.append(labels)
        rows.append(
            UserEvaluation(
                user_id=seq.user_id,
                auc=auc(scores, labels),
                pairs=inst.pair_count,
                ndcg=ndcg_at_k(scores, labels, config.ndcg_k),
                hit=hit_rate_at_k(scores, labels, config.ndcg_k),
            )
        )

    if not instances:
        raise UndefinedMetricError(f"no user could be evaluated on split '{split}'")

    report = EvalReport(
        split=split,
        users=len(instances),
        skipped=skipped,
        auc=auc(np.concatenate(pooled_scores), np.concatenate(pooled_labels)),
        gauc=gauc(instances),
        ndcg=float(np.mean([r.ndcg for r in rows])),
        hit_rate=float(np.mean([r.hit for r in rows])),
        k=config.ndcg_k,
        n_negatives=config.n_negatives,
        full_catalog=config.full_catalog,
        per_user=rows if config.per_user else [],
    )
    logger.info(
        "evaluation finished",
        split=split,
        users=report.users,
        skipped=skipped,
        auc=report.auc,
        gauc=report.gauc,
        ndcg=report.ndcg,
    )
    return report


def _format(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def save_report(report: EvalReport, output_path: Union[str, Path]) -> Path:
    """
    Write the report as tab-separated text

    Per-user rows come first when present, then a ``# summary`` block of
    key/value lines.
    """
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    if report.per_user:
        lines.append("\t".join(UserEvaluation.model_fields))
        for row in report.per_user:
            lines.append("\t".join(_format(v) for v in row.model_dump().values()))
    lines.append("# summary")
    for key, value in report.summary().items():
        lines.append(f"{key}\t{_format(value)}")
    try:
        output_path.write_text("\n".join(lines) + "\n")
    except OSError as e:
        logger.error("could not save evaluation report", path=str(output_path), error=str(e))
        raise
    logger.info("evaluation report saved", path=str(output_path))
    return output_path


class EvaluationReport:
    """Markdown tables over several evaluation reports"""

    @staticmethod
    def generate_markdown_report(reports: Dict[str, EvalReport], title: str = "Evaluation Report") -> str:
        """
        Args:
            reports: row label (e.g. ``K=3``) to its EvalReport

        Returns:
            Markdown document with one table row per report
        """
        report = f"# {title}\n\n"
        report += "| run | split | users | AUC | GAUC | NDCG@k | HR@k |\n"
        report += "|---|---|---|---|---|---|---|\n"
        for label, r in reports.items():
            report += (
                f"| {label} | {r.split} | {r.users} | {r.auc:.4f} | {r.gauc:.4f} "
                f"| {r.ndcg:.4f} | {r.hit_rate:.4f} |\n"
            )
        if reports:
            best_label, best = max(reports.items(), key=lambda kv: kv[1].gauc)
            report += f"\nBest GAUC: **{best_label}** ({best.gauc:.4f})\n"
        return report

    @staticmethod
    def save_markdown_report(reports: Dict[str, EvalReport], output_path: Union[str, Path], title: str = "Evaluation Report") -> Path:
        output_path = Path(output_path)
        output_path.write_text(EvaluationReport.generate_markdown_report(reports, title))
        logger.info("markdown report saved", path=str(output_path))
        return output_path
