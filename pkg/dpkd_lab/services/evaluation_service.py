"""
Generation metrics, length-split reports, the noise-perturbation sweep and curve files
"""
import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from config import settings
from exceptions import DomainError
from models.evaluation import NOISE_SWEEP_FIELDS, EvalReport, LengthSplit, NoiseSweepRow, SplitScore
from models.instruction import Corpus
from models.seq_model import SeqModel
from models.training import METRICS_FIELDS, MetricsRow
from models.vocab import Prompt, Trajectory
from services.objective_service import REVERSE, first_token_divergence, implicit_reward
from services.seqmodel_service import greedy_decode, perturb, sample

logger = logging.getLogger(__name__)

Tokens = Union[str, Sequence]


def _tokens(seq: Tokens) -> tuple:
    if isinstance(seq, str):
        return tuple(seq.split())
    return tuple(seq)


def lcs_length(a: Sequence, b: Sequence) -> int:
    previous = [0] * (len(b) + 1)
    for item in a:
        current = [0]
        for j, other in enumerate(b):
            if item == other:
                current.append(previous[j] + 1)
            else:
                current.append(max(previous[j + 1], current[j]))
        previous = current
    return previous[-1]


def rouge_l(candidate: Tokens, reference: Tokens) -> float:
    """LCS-based F1 (beta = 1) on whitespace tokens or token ids"""
    cand, ref = _tokens(candidate), _tokens(reference)
    if not ref:
        raise DomainError("Reference must be nonempty")
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


def exact_match(candidate: Tokens, reference: Tokens) -> int:
    """1 iff equal after trimming and collapsing whitespace (case-sensitive)"""
    return int(_tokens(candidate) == _tokens(reference))


def _run_indexed(fn, n: int, max_workers: Optional[int] = None) -> list:
    """Apply fn to 0..n-1, in parallel when allowed; results keep index order"""
    workers = settings.max_workers if max_workers is None else max_workers
    results = [None] * n
    if workers <= 1 or n <= 1:
        for i in range(n):
            results[i] = fn(i)
        return results
    with ThreadPoolExecutor(max_workers=workers) as executor:
        future_to_index = {executor.submit(fn, i): i for i in range(n)}
        for future in as_completed(future_to_index):
            results[future_to_index[future]] = future.result()
    return results


def generate(model: SeqModel, prompts: Sequence[Prompt], max_len: int, temperature: float = 0.0,
             rng_seed: int = 0, max_workers: Optional[int] = None) -> List[Trajectory]:
    """Greedy by default; sampled generations draw from rng (rng_seed, index)"""
    def one(i: int) -> Trajectory:
        if temperature == 0:
            return greedy_decode(model, prompts[i], max_len)
        return sample(model, prompts[i], max_len, rng_seed=[rng_seed, i], temperature=temperature)
    return _run_indexed(one, len(prompts), max_workers)


def mean_rouge_l(model: SeqModel, prompts: Sequence[Prompt], references: Sequence[Sequence[int]],
                 max_len: int, max_workers: Optional[int] = None) -> float:
    outputs = generate(model, prompts, max_len, max_workers=max_workers)
    scores = [rouge_l(y.content(model.vocab), ref) for y, ref in zip(outputs, references)]
    return float(np.mean(scores))


def teacher_samples(teacher: SeqModel, prompts: Sequence[Prompt], max_len: int, seed: int,
                    temperature: float = 1.0) -> List[Tuple[Prompt, Trajectory]]:
    """Fixed teacher responses used to track the implicit reward across checkpoints"""
    return [
        (x, sample(teacher, x, max_len, rng_seed=[seed, i, 2], temperature=temperature))
        for i, x in enumerate(prompts)
    ]


def mean_implicit_reward(student: SeqModel, teacher: SeqModel,
                         samples: Sequence[Tuple[Prompt, Trajectory]], beta: float) -> float:
    if not samples:
        raise DomainError("Need at least one sample to estimate the implicit reward")
    return float(np.mean([implicit_reward(student, teacher, x, y, beta) for x, y in samples]))


def evaluate(model: SeqModel, test_set: Corpus, split: LengthSplit = LengthSplit(), max_len: int = 8,
             rng_seed: int = 0, temperature: float = 0.0) -> EvalReport:
    """Generate for every test prompt and aggregate per golden-response-length bucket"""
    if not len(test_set):
        raise DomainError("Test set must be nonempty")
    prompts = test_set.prompts()
    references = test_set.references()
    outputs = generate(model, prompts, max_len, temperature=temperature, rng_seed=rng_seed)
    rouge = np.array([rouge_l(y.content(model.vocab), ref) for y, ref in zip(outputs, references)])
    exact = np.array([exact_match(y.content(model.vocab), ref) for y, ref in zip(outputs, references)])
    buckets = np.array([split.bucket_of(e.output_words()) for e in test_set])

    splits = []
    for i, (low, high) in enumerate(split.ranges()):
        mask = buckets == i
        n = int(mask.sum())
        if n == 0:
            splits.append(SplitScore(low=low, high=high, n=0))
            continue
        splits.append(SplitScore(
            low=low,
            high=high,
            n=n,
            rouge_l_mean=float(rouge[mask].mean()),
            exact_match_pct=float(100.0 * exact[mask].mean()),
        ))
    report = EvalReport(
        rouge_l_mean=float(rouge.mean()),
        exact_match_pct=float(100.0 * exact.mean()),
        n_examples=len(test_set),
        splits=splits,
    )
    logger.info(f"Evaluated {report.n_examples} examples: rouge_l={report.rouge_l_mean:.4f} "
                f"exact_match={report.exact_match_pct:.2f}%")
    return report


def save_eval_report(report: EvalReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2) + '\n', encoding='utf-8')
    return path


def noise_sweep(base_model: SeqModel, teacher: SeqModel, eval_set: Corpus, scales: Sequence[float],
                n_per_scale: int, beta: float, rng_seed: int = 0, max_len: int = 8) -> List[NoiseSweepRow]:
    """Perturb the base model with Gaussian logit noise and score every perturbed copy.

    rkld is the first-token reverse KL to the unperturbed model; the implicit
    reward is scored against the teacher on each copy's greedy outputs. Copy j
    of every scale reuses noise seed rng_seed + j.
    """
    if any(s < 0 for s in scales):
        raise DomainError(f"Noise scales must be nonnegative, got {list(scales)}")
    if n_per_scale < 1:
        raise DomainError(f"n_per_scale must be at least 1, got {n_per_scale}")
    prompts = eval_set.prompts()
    references = eval_set.references()
    rows = []
    for scale in scales:
        for j in range(n_per_scale):
            seed = rng_seed + j
            model = perturb(base_model, scale, rng_seed=seed)
            outputs = generate(model, prompts, max_len)
            rows.append(NoiseSweepRow(
                scale=float(scale),
                seed=seed,
                rkld=first_token_divergence(model, base_model, prompts, REVERSE),
                mean_implicit_reward=mean_implicit_reward(model, teacher, list(zip(prompts, outputs)), beta),
                rouge_l=float(np.mean([rouge_l(y.content(model.vocab), ref)
                                       for y, ref in zip(outputs, references)])),
            ))
        logger.info(f"Noise scale {scale}: {n_per_scale} perturbed models scored")
    return rows


def _format(value) -> str:
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Union[str, Path], fields: List[str], records: List[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(fields)
        for record in records:
            writer.writerow([_format(record[name]) for name in fields])
    return path


def export_curves(metrics: Sequence[MetricsRow], path: Union[str, Path]) -> Path:
    """Metrics CSV, one row per epoch, same schema as the trainer stream"""
    if not metrics:
        raise DomainError("No metrics rows to export")
    return write_csv(path, METRICS_FIELDS, [row.to_dict() for row in metrics])


def load_curves(path: Union[str, Path]) -> List[MetricsRow]:
    with Path(path).open(newline='', encoding='utf-8') as handle:
        return [MetricsRow.from_dict(record) for record in csv.DictReader(handle)]


def write_noise_sweep(rows: Sequence[NoiseSweepRow], path: Union[str, Path]) -> Path:
    return write_csv(path, NOISE_SWEEP_FIELDS, [row.to_dict() for row in rows])
