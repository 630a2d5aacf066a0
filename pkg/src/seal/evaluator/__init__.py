from seal.evaluator.judge import (
    ANSWER_ONLY,
    SOLVED,
    UNSOLVED,
    UNSURE,
    WITH_TRAJECTORY,
    Judge,
    JudgeError,
    PassLabel,
    judge_pass,
    parse_verdict,
    prompt_hashes,
)
from seal.evaluator.metrics import (
    CallScore,
    MetricSummary,
    RetrievalScore,
    RunAggregate,
    aggregate,
    eval_calls,
    eval_params,
    eval_retrieval,
    match_params,
    mean_std,
    score_calls,
)
from seal.evaluator.sampling import eligible_queries, sample_pool

__all__ = [
    "ANSWER_ONLY",
    "SOLVED",
    "UNSOLVED",
    "UNSURE",
    "WITH_TRAJECTORY",
    "CallScore",
    "Judge",
    "JudgeError",
    "MetricSummary",
    "PassLabel",
    "RetrievalScore",
    "RunAggregate",
    "aggregate",
    "eligible_queries",
    "eval_calls",
    "eval_params",
    "eval_retrieval",
    "judge_pass",
    "match_params",
    "mean_std",
    "parse_verdict",
    "prompt_hashes",
    "sample_pool",
    "score_calls",
]
