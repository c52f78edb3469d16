import logging
import math
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel
from scipy.stats import ttest_rel

from baselines import AdjIndex, QvmmTree
from corpus import DatasetSplits, Vocabulary
from decoding import rescore_candidates
from errors import ContractViolation, DataError
from features import BASE_FEATURES, HRED_FEATURE, extract_features
from model import ModelParams
from numerics import Prng
from ranker import RankerConfig, RankingList, rank_candidates, train_ranker
from scenarios import (NOISY_TOP_N, ScenarioInstance, build_longtail_scenario, build_next_query_scenario,
                       build_robust_scenario, noisy_queries)

logger = logging.getLogger(__name__)

BUCKETS = ("short", "medium", "long")
SCENARIOS = ("next", "robust", "longtail")
DEFAULT_DEPTHS = (1, 2, 3, None)


class EvalReport(BaseModel):
    overall: float
    buckets: Dict[str, float]
    counts: Dict[str, int]
    config: Dict[str, str] = {}


def session_bucket(session_length: int) -> str:
    if session_length <= 2:
        return "short"
    if session_length <= 4:
        return "medium"
    return "long"


def reciprocal_rank(ranking: Sequence[str], relevant: str) -> float:
    try:
        return 1.0 / (list(ranking).index(relevant) + 1)
    except ValueError:
        raise ContractViolation(f"Relevant candidate '{relevant}' is missing from the ranking")


def mrr(rankings: Sequence[Sequence[str]], relevant: Sequence[str]) -> float:
    if len(rankings) != len(relevant):
        raise ContractViolation(f"{len(rankings)} rankings for {len(relevant)} relevant items")
    if not rankings:
        raise ContractViolation("MRR of zero instances is undefined")
    return float(np.mean([reciprocal_rank(r, t) for r, t in zip(rankings, relevant)]))


def bucketed_report(instances: Sequence[ScenarioInstance], rankings: Sequence[Sequence[str]],
                    config: Optional[Dict[str, str]] = None) -> EvalReport:
    if len(instances) != len(rankings):
        raise ContractViolation(f"{len(rankings)} rankings for {len(instances)} instances")
    by_bucket: Dict[str, List[float]] = {bucket: [] for bucket in BUCKETS}
    for instance, ranking in zip(instances, rankings):
        by_bucket[session_bucket(instance.session_length)].append(reciprocal_rank(ranking, instance.target))

    # Empty buckets are left out rather than reported as zero.
    return EvalReport(
        overall=mrr(rankings, [instance.target for instance in instances]),
        buckets={bucket: float(np.mean(values)) for bucket, values in by_bucket.items() if values},
        counts={bucket: len(values) for bucket, values in by_bucket.items() if values},
        config=config or {},
    )


def _rank_by(candidates: Sequence[str], scores: Sequence[float]) -> List[str]:
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], candidates[i]))
    return [candidates[i] for i in order]


def adj_rankings(instances: Sequence[ScenarioInstance], adj: AdjIndex) -> List[List[str]]:
    return [_rank_by(inst.candidates, [adj.follows(inst.adj_key, c) for c in inst.candidates])
            for inst in instances]


def hred_scores(instance: ScenarioInstance, params: ModelParams, vocab: Vocabulary,
                depth: Optional[int] = None) -> List[float]:
    context = instance.context if depth is None else instance.context[-depth:]
    encoded = [tokens for tokens in (vocab.encode_query(query) for query in context) if tokens]
    return rescore_candidates(params, encoded, [vocab.encode_query(c) for c in instance.candidates])


def context_truncation_curve(instances: Sequence[ScenarioInstance], params: ModelParams, vocab: Vocabulary,
                             depths: Sequence[Optional[int]] = DEFAULT_DEPTHS) -> Dict[str, float]:
    curve = {}
    for depth in depths:
        rankings = [_rank_by(inst.candidates, hred_scores(inst, params, vocab, depth)) for inst in instances]
        curve["all" if depth is None else str(depth)] = mrr(rankings, [inst.target for inst in instances])
    return curve


def feature_lists(instances: Sequence[ScenarioInstance], adj: AdjIndex, qvmm: QvmmTree,
                  scores: Optional[Sequence[Sequence[float]]] = None) -> List[RankingList]:
    lists = []
    for i, inst in enumerate(instances):
        rows = [extract_features(inst.context, candidate, adj, qvmm,
                                 hred_score=None if scores is None else scores[i][j], adj_key=inst.adj_key).values
                for j, candidate in enumerate(inst.candidates)]
        lists.append(RankingList(candidates=inst.candidates, features=np.array(rows), relevant=inst.relevant))
    return lists


def build_instances(scenario: str, sessions, adj: AdjIndex, prng: Prng,
                    noisy_top_n: int = NOISY_TOP_N) -> List[ScenarioInstance]:
    if scenario == "longtail":
        return build_longtail_scenario(sessions, adj)
    instances = build_next_query_scenario(sessions, adj)
    if scenario == "robust":
        instances = build_robust_scenario(instances, adj, prng, noisy_top_n)
    return instances


def _paired_p_value(a: Sequence[float], b: Sequence[float]) -> float:
    if np.allclose(a, b):
        return 1.0
    return float(ttest_rel(a, b).pvalue)


def _relative_gain(new: float, old: float) -> float:
    return 100.0 * (new - old) / old if old > 0 else math.nan


def _system_summary(instances: Sequence[ScenarioInstance], rankings: List[List[str]]) -> Dict[str, Any]:
    report = bucketed_report(instances, rankings)
    summary: Dict[str, Any] = {"mrr": report.overall}
    for bucket in BUCKETS:
        if bucket in report.buckets:
            summary[bucket] = report.buckets[bucket]
    return summary


def run_scenario(scenario: str, splits: DatasetSplits, adj: AdjIndex, qvmm: QvmmTree, params: ModelParams,
                 vocab: Vocabulary, prng: Prng, ranker_config: Optional[RankerConfig] = None,
                 noisy_top_n: int = NOISY_TOP_N, settings: Optional[Dict[str, str]] = None,
                 model_id: str = "") -> Dict[str, Any]:
    if scenario not in SCENARIOS:
        raise ContractViolation(f"Unknown scenario '{scenario}', expected one of {SCENARIOS}")

    instances = {
        name: build_instances(scenario, getattr(splits, name), adj, prng.fork(tag), noisy_top_n)
        for tag, name in enumerate(("training", "validation", "test"))
    }
    test = instances["test"]
    if not test:
        raise DataError(f"The {scenario} scenario produced no test instances")

    scores = {name: [hred_scores(inst, params, vocab) for inst in split] for name, split in instances.items()}
    targets = [inst.target for inst in test]

    rankings = {
        "adj": adj_rankings(test, adj),
        "hred": [_rank_by(inst.candidates, s) for inst, s in zip(test, scores["test"])],
    }

    if instances["training"]:
        ranker_prng = prng.fork(len(SCENARIOS) + 1)
        for system, with_hred in (("baseline_ranker", False), ("baseline_ranker_hred", True)):
            lists = {name: feature_lists(split, adj, qvmm, scores[name] if with_hred else None)
                     for name, split in instances.items()}
            names = list(BASE_FEATURES) + ([HRED_FEATURE] if with_hred else [])
            model = train_ranker(lists["training"], names, ranker_prng.fork(int(with_hred)), ranker_config,
                                 validation=lists["validation"] or None)
            rankings[system] = [[inst.candidates[i] for i in permutation]
                                for inst, permutation in zip(test, rank_candidates(model, lists["test"]))]
    else:
        logger.warning("No training instances: supervised rankers are skipped")

    reciprocal = {system: [reciprocal_rank(r, t) for r, t in zip(ranked, targets)]
                  for system, ranked in rankings.items()}
    systems = {system: _system_summary(test, ranked) for system, ranked in rankings.items()}

    comparisons = [("hred", "adj")]
    if "baseline_ranker" in rankings:
        comparisons += [("baseline_ranker", "adj"), ("baseline_ranker_hred", "adj"),
                        ("baseline_ranker_hred", "baseline_ranker")]
    improvements = {f"{new}_vs_{old}": _relative_gain(systems[new]["mrr"], systems[old]["mrr"])
                    for new, old in comparisons}
    significance = {f"{new}_vs_{old}": _paired_p_value(reciprocal[new], reciprocal[old])
                    for new, old in comparisons}

    lengths = [session_bucket(inst.session_length) for inst in test]
    noisy = {query for query, _ in noisy_queries(adj, noisy_top_n)}
    long_test = [inst for inst in test if session_bucket(inst.session_length) == "long"]

    report: Dict[str, Any] = {
        "scenario": scenario,
        "ranker": "pairwise logistic regression (substitute for LambdaMART)",
        "models": {"hred": model_id, "vocab_digest": vocab.digest()},
        "instances": {name: len(split) for name, split in instances.items()},
        "session_lengths": {bucket: lengths.count(bucket) / len(lengths) for bucket in BUCKETS},
        "noisy_context_fraction": float(np.mean([any(q in noisy for q in inst.context) for inst in test])),
        "systems": systems,
        "improvements_percent": improvements,
        "paired_t_test_p": significance,
    }
    if long_test:
        report["truncation_curve_long"] = context_truncation_curve(long_test, params, vocab)
    report["config"] = dict(sorted((settings or {}).items()))
    report["_test_instances"] = test
    return report


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.6f}"
    return str(value)


def render_report(report: Dict[str, Any], indent: int = 0) -> str:
    lines = []
    for key, value in report.items():
        if key.startswith("_"):
            continue
        prefix = " " * indent + f"{key}:"
        if isinstance(value, dict):
            lines.append(prefix)
            rendered = render_report(value, indent + 2)
            if rendered:
                lines.append(rendered.rstrip("\n"))
        else:
            lines.append(f"{prefix} {_format_value(value)}")
    return "\n".join(lines) + "\n" if lines else ""
