"""
Toy-scale evaluation metrics computed in the frozen encoder's feature space:
FID, R-precision over a fixed-size candidate pool, MM-Dist, Diversity and a
CLIP-style cosine score, plus mean / 95% half-width aggregation over repeats.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import linalg

from .motion_repr import CorpusError
from ..utility.constant import CONFIDENCE_Z, DIVERSITY_PAIRS, RETRIEVAL_POOL, RIDGE_PENALTY

COVARIANCE_RIDGE = 1e-6
TOP_K = 3


def matrix_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Principal square root; the imaginary round-off of the Schur method is dropped."""
    root = linalg.sqrtm(np.asarray(matrix, dtype=np.float64))
    return np.real(root)


def frechet_distance(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """
    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^1/2). Both covariances get
    a 1e-6 ridge so small sample sets stay well conditioned.
    """
    features_a, features_b = np.asarray(features_a), np.asarray(features_b)
    if features_a.ndim != 2 or features_a.shape[1] != features_b.shape[1]:
        raise ValueError(f"FID needs [n, d] feature sets of equal width, got {features_a.shape} and {features_b.shape}")
    if min(features_a.shape[0], features_b.shape[0]) < 2:
        raise CorpusError("FID needs at least two samples per set")
    ridge = COVARIANCE_RIDGE * np.eye(features_a.shape[1])
    mu_a, mu_b = features_a.mean(axis=0), features_b.mean(axis=0)
    cov_a = np.cov(features_a, rowvar=False) + ridge
    cov_b = np.cov(features_b, rowvar=False) + ridge
    covmean = matrix_sqrt(cov_a @ cov_b)
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(covmean))
    return max(value, 0.0)


class TextMotionEvaluator:
    """
    Closed-form ridge map from sentence vectors to frozen-encoder motion
    embeddings, fitted on the real corpus; gives prompts a position in the
    motion feature space for retrieval metrics.
    """

    def __init__(self, penalty: float = RIDGE_PENALTY):
        self.penalty = penalty
        self.weights = None
        self.text_mean = None
        self.motion_mean = None

    def fit(self, text_vectors: np.ndarray, motion_embeddings: np.ndarray) -> "TextMotionEvaluator":
        x = np.asarray(text_vectors, dtype=np.float64)
        y = np.asarray(motion_embeddings, dtype=np.float64)
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"Ridge fit: {x.shape[0]} text rows for {y.shape[0]} motion rows")
        self.text_mean, self.motion_mean = x.mean(axis=0), y.mean(axis=0)
        xc, yc = x - self.text_mean, y - self.motion_mean
        gram = xc.T @ xc + self.penalty * np.eye(x.shape[1])
        self.weights = linalg.solve(gram, xc.T @ yc, assume_a="pos")
        return self

    def text_embed(self, text_vectors: np.ndarray) -> np.ndarray:
        if self.weights is None:
            raise RuntimeError("TextMotionEvaluator.text_embed called before fit")
        return (np.asarray(text_vectors) - self.text_mean) @ self.weights + self.motion_mean


def r_precision(text_embeddings: np.ndarray, motion_embeddings: np.ndarray, rng: np.random.Generator,
                pool: int = RETRIEVAL_POOL, top_k: int = TOP_K) -> np.ndarray:
    """
    For every motion, rank its own prompt among ``pool`` candidates (the true
    one plus pool-1 random mismatched prompts). Items sharing the true text
    embedding are never drawn as mismatched. Returns hit rates for k=1..top_k.
    """
    count = text_embeddings.shape[0]
    if count < pool:
        raise CorpusError(f"R-precision needs at least {pool} pairs, got {count}")
    hits = np.zeros(top_k)
    for i in range(count):
        mismatched = np.flatnonzero(np.any(text_embeddings != text_embeddings[i], axis=1))
        if mismatched.size < pool - 1:
            raise CorpusError(f"R-precision: pair {i} has {mismatched.size} pairs with a different prompt, "
                              f"{pool - 1} are needed")
        candidates = np.concatenate([[i], rng.choice(mismatched, size=pool - 1, replace=False)])
        distances = np.linalg.norm(text_embeddings[candidates] - motion_embeddings[i], axis=1)
        rank = int(np.sum(distances[1:] < distances[0]))
        hits[rank:] += rank < top_k
    return hits / count


def mm_dist(text_embeddings: np.ndarray, motion_embeddings: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(text_embeddings - motion_embeddings, axis=1)))


def diversity(motion_embeddings: np.ndarray, rng: np.random.Generator, pairs: int = DIVERSITY_PAIRS) -> float:
    """Mean distance between two randomly drawn subsets of embeddings."""
    count = motion_embeddings.shape[0]
    if count < 2:
        raise CorpusError("Diversity needs at least two embeddings")
    first = rng.choice(count, size=pairs, replace=count < pairs)
    second = rng.choice(count, size=pairs, replace=count < pairs)
    return float(np.mean(np.linalg.norm(motion_embeddings[first] - motion_embeddings[second], axis=1)))


def clip_score(text_embeddings: np.ndarray, motion_embeddings: np.ndarray) -> float:
    """Mean cosine similarity of matched text and motion embeddings."""
    norms = np.linalg.norm(text_embeddings, axis=1) * np.linalg.norm(motion_embeddings, axis=1)
    cosines = np.sum(text_embeddings * motion_embeddings, axis=1) / np.maximum(norms, 1e-12)
    return float(np.mean(cosines))


def metric_suite(real: np.ndarray, generated: np.ndarray, text: np.ndarray, rng: np.random.Generator,
                 pool: int = RETRIEVAL_POOL, pairs: int = DIVERSITY_PAIRS) -> Dict[str, float]:
    """All metrics of one repeat for one motion set (``generated`` may be the real set itself)."""
    top = r_precision(text, generated, rng, pool=pool)
    return {
        "fid_toy": frechet_distance(real, generated),
        "r_precision_top1": float(top[0]),
        "r_precision_top2": float(top[1]),
        "r_precision_top3": float(top[2]),
        "mm_dist": mm_dist(text, generated),
        "diversity": diversity(generated, rng, pairs=pairs),
        "clip_score": clip_score(text, generated),
    }


def confidence_interval(values: Sequence[float], z: float = CONFIDENCE_Z) -> Tuple[float, float]:
    """Mean and half-width z * std / sqrt(n) of the normal-approximation interval."""
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), float(z * values.std() / np.sqrt(values.size))


@dataclass
class MetricsReport:
    rows: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    @classmethod
    def from_repeats(cls, repeats: List[Dict[str, float]], prefix: str = "") -> "MetricsReport":
        if not repeats:
            raise ValueError("MetricsReport needs at least one repeat")
        return cls({f"{prefix}{name}": confidence_interval([r[name] for r in repeats]) for name in repeats[0]})

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        return MetricsReport({**self.rows, **other.rows})

    def lines(self) -> List[str]:
        return [f"{name} {mean:.6f} {half:.6f}" for name, (mean, half) in self.rows.items()]
