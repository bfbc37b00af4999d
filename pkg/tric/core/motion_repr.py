"""
Motion representation helpers: frame resampling, 2-D positional encoding,
skeleton graphs, the hashed toy text encoder, the synthetic corpus and the
assembly of the (N+2) x M x D token grid.

Motion arrays are frame-major [..., frames, joints, 12] with 3 position,
3 velocity and 6 rotation channels per joint.
"""
import hashlib
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import numcore as nc
from .layers import FeedForward, Linear, Module
from .numcore import Tensor, TensorLike
from ..utility.constant import NORM_STD_FLOOR

CHANNELS = 12
FRAME_AXIS = -3
TEXT_SEED = 1729
SYNTH_NOISE_STD = 0.01
SYNTH_FPS = 20.0

# Joint roles of the default 8-joint skeleton; larger skeletons repeat the roles.
JOINT_ROLES = ("root", "spine", "head", "l_arm", "l_hand", "r_arm", "r_hand", "leg")
DEFAULT_EDGES = ((0, 1), (1, 2), (1, 3), (3, 4), (1, 5), (5, 6), (0, 7))

REST_OFFSETS = np.array([
    [0.0, 0.0, 0.0],
    [0.0, 0.5, 0.0],
    [0.0, 0.8, 0.0],
    [0.2, 0.45, 0.0],
    [0.35, 0.2, 0.0],
    [-0.2, 0.45, 0.0],
    [-0.35, 0.2, 0.0],
    [0.0, -0.45, 0.0],
])
ROOT_HEIGHT = 0.9


class CorpusError(ValueError):
    """Raised for unknown vocabulary tokens and missing or undersized corpora."""


# -- frame resampling ----------------------------------------------------------

@lru_cache(maxsize=64)
def downsample_matrix(n_raw: int, s: int) -> np.ndarray:
    """[ceil(n_raw/s), n_raw] averaging matrix; the last window may be partial."""
    frames = -(-n_raw // s)
    matrix = np.zeros((frames, n_raw))
    for k in range(frames):
        start, stop = k * s, min((k + 1) * s, n_raw)
        matrix[k, start:stop] = 1.0 / (stop - start)
    return matrix


@lru_cache(maxsize=64)
def upsample_matrix(n: int, s: int, n_raw: int) -> np.ndarray:
    """[n_raw, n] nearest-frame repeat, trimmed to n_raw frames."""
    if n_raw > n * s:
        raise nc.ShapeMismatchError(f"Cannot upsample {n} frames by {s} to {n_raw} frames")
    matrix = np.zeros((n_raw, n))
    matrix[np.arange(n_raw), np.arange(n_raw) // s] = 1.0
    return matrix


def temporal_downsample(x: TensorLike, s: int, axis: int = FRAME_AXIS) -> Tensor:
    if s < 1:
        raise ValueError(f"Downsampling factor must be >= 1, got {s}")
    x = nc.as_tensor(x)
    if s == 1:
        return x
    return nc.contract_axis(downsample_matrix(x.shape[axis], s), x, axis)


def temporal_upsample(x: TensorLike, s: int, n_raw: int, axis: int = FRAME_AXIS) -> Tensor:
    if s < 1:
        raise ValueError(f"Upsampling factor must be >= 1, got {s}")
    x = nc.as_tensor(x)
    if s == 1 and x.shape[axis] == n_raw:
        return x
    return nc.contract_axis(upsample_matrix(x.shape[axis], s, n_raw), x, axis)


# -- positional and timestep encodings -------------------------------------------

def sinusoidal_encoding(positions: np.ndarray, dim: int) -> np.ndarray:
    """Interleaved [sin, cos] pairs per frequency: [..., dim]."""
    if dim % 2:
        raise ValueError(f"Sinusoidal encoding width must be even, got {dim}")
    positions = np.asarray(positions, dtype=np.float64)
    freqs = 1.0 / (10000.0 ** (np.arange(0, dim, 2) / dim))
    angles = positions[..., None] * freqs
    out = np.empty(positions.shape + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def pos_encode_2d(N: int, M: int, D: int) -> np.ndarray:
    """Frame index encoded in the first D/2 channels, joint index in the last D/2."""
    if D % 4:
        raise ValueError(f"2-D positional encoding needs D divisible by 4, got {D}")
    half = D // 2
    pe = np.empty((N, M, D))
    pe[:, :, :half] = sinusoidal_encoding(np.arange(N), half)[:, None, :]
    pe[:, :, half:] = sinusoidal_encoding(np.arange(M), half)[None, :, :]
    return pe


# -- skeleton ------------------------------------------------------------------

@dataclass(frozen=True)
class SkeletonGraph:
    M: int
    edges: Tuple[Tuple[int, int], ...]
    A_hat: np.ndarray = field(repr=False)


def skeleton_adjacency(M: int, edges: Sequence[Tuple[int, int]]) -> SkeletonGraph:
    """A_hat = D^-1/2 (A + I) D^-1/2 of a connected undirected skeleton."""
    if M < 1:
        raise ValueError(f"Skeleton needs at least one joint, got M={M}")
    adjacency = np.eye(M)
    for a, b in edges:
        if not (0 <= a < M and 0 <= b < M):
            raise ValueError(f"Edge ({a}, {b}) references a joint outside [0, {M})")
        adjacency[a, b] = adjacency[b, a] = 1.0
    components, _ = connected_components(adjacency > 0, directed=False)
    if components != 1:
        raise ValueError(f"Skeleton with {M} joints is disconnected ({components} components)")
    inv_sqrt = 1.0 / np.sqrt(adjacency.sum(axis=1))
    a_hat = inv_sqrt[:, None] * adjacency * inv_sqrt[None, :]
    a_hat.setflags(write=False)
    return SkeletonGraph(M=M, edges=tuple((int(a), int(b)) for a, b in edges), A_hat=a_hat)


def default_edges(M: int) -> List[Tuple[int, int]]:
    """The 8-joint body tree for M=8, otherwise a chain."""
    if M == len(JOINT_ROLES):
        return list(DEFAULT_EDGES)
    return [(j, j + 1) for j in range(M - 1)]


def default_skeleton(M: int) -> SkeletonGraph:
    return skeleton_adjacency(M, default_edges(M))


# -- toy text encoder ----------------------------------------------------------

@dataclass(frozen=True)
class TextCondition:
    cls: np.ndarray
    tau: np.ndarray
    prompt_text: str


def tokenize(prompt: str) -> List[str]:
    return re.findall(r"[a-z0-9']+", prompt.lower())


def _word_vector(word: str, d_text: int, seed: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}:{word}".encode("utf-8")).digest()
    vector = np.random.default_rng(int.from_bytes(digest[:8], "little")).standard_normal(d_text)
    return vector / np.linalg.norm(vector)


def toy_text_encode(prompt: str, d_text: int, seed: int = TEXT_SEED) -> TextCondition:
    """Unit-norm hashed word vectors; CLS is their mean."""
    words = tokenize(prompt or "")
    if not words:
        raise ValueError(f"Cannot encode an empty prompt: {prompt!r}")
    tau = np.stack([_word_vector(word, d_text, seed) for word in words])
    return TextCondition(cls=tau.mean(axis=0), tau=tau, prompt_text=prompt)


@dataclass(frozen=True)
class TextBatch:
    """Batched conditions: word rows padded to the longest prompt."""
    cls: np.ndarray
    tau: np.ndarray
    mask: np.ndarray
    null: np.ndarray

    def __len__(self) -> int:
        return self.cls.shape[0]


def batch_conditions(conditions: Sequence[TextCondition], null: Optional[Sequence[bool]] = None) -> TextBatch:
    if not conditions:
        raise ValueError("Cannot batch zero text conditions")
    longest = max(c.tau.shape[0] for c in conditions)
    d_text = conditions[0].cls.shape[0]
    tau = np.zeros((len(conditions), longest, d_text))
    mask = np.zeros((len(conditions), longest), dtype=bool)
    for i, condition in enumerate(conditions):
        words = condition.tau.shape[0]
        tau[i, :words] = condition.tau
        mask[i, :words] = True
    null = np.zeros(len(conditions), dtype=bool) if null is None else np.asarray(null, dtype=bool)
    return TextBatch(cls=np.stack([c.cls for c in conditions]), tau=tau, mask=mask, null=null)


def null_batch(count: int, d_text: int) -> TextBatch:
    """Unconditional batch; carries no prompt content at all."""
    return TextBatch(cls=np.zeros((count, d_text)), tau=np.zeros((count, 1, d_text)),
                     mask=np.ones((count, 1), dtype=bool), null=np.ones(count, dtype=bool))


# -- synthetic corpus ----------------------------------------------------------

VERBS = ("walk", "run", "jump", "wave", "kick", "turn")
SPEEDS: Dict[str, int] = {"slow": 1, "fast": 2}
DIRECTIONS: Dict[str, float] = {"forward": 0.0, "backward": np.pi, "left": np.pi / 2, "right": -np.pi / 2}


@dataclass(frozen=True)
class Vocabulary:
    verbs: Tuple[str, ...] = VERBS
    speeds: Tuple[str, ...] = tuple(SPEEDS)
    directions: Tuple[str, ...] = tuple(DIRECTIONS)

    def __post_init__(self):
        for token, known in ((self.verbs, VERBS), (self.speeds, SPEEDS), (self.directions, DIRECTIONS)):
            unknown = [t for t in token if t not in known]
            if unknown or not token:
                raise CorpusError(f"Unknown or empty vocabulary tokens: {unknown or token}")

    def prompts(self) -> List[str]:
        return [" ".join(words) for words in product(self.verbs, self.speeds, self.directions)]


def _verb_pose(verb: str, phase: np.ndarray, progress: np.ndarray):
    """Local joint offsets [F, 8, 3], root lift [F], forward speed [F] and extra heading [F]."""
    frames = phase.shape[0]
    offsets = np.repeat(REST_OFFSETS[None], frames, axis=0)
    lift = np.zeros(frames)
    forward = np.zeros(frames)
    turn = np.zeros(frames)
    swing = np.sin(phase)
    if verb == "walk":
        offsets[:, 7, 2] += 0.2 * swing
        offsets[:, 4, 2] -= 0.1 * swing
        offsets[:, 6, 2] += 0.1 * swing
        forward[:] = 0.5
    elif verb == "run":
        offsets[:, 7, 2] += 0.35 * swing
        offsets[:, 4, 2] -= 0.2 * swing
        offsets[:, 6, 2] += 0.2 * swing
        lift = 0.05 * np.abs(swing)
        forward[:] = 1.2
    elif verb == "jump":
        hop = np.maximum(swing, 0.0)
        lift = 0.3 * hop
        offsets[:, 4, 1] += 0.4 * hop
        offsets[:, 6, 1] += 0.4 * hop
        offsets[:, 7, 1] += 0.1 * hop
    elif verb == "wave":
        offsets[:, 6] = [-0.35, 0.9, 0.0]
        offsets[:, 6, 0] += 0.15 * swing
    elif verb == "kick":
        kick = np.maximum(swing, 0.0)
        offsets[:, 7, 2] += 0.4 * kick
        offsets[:, 7, 1] += 0.2 * kick
    elif verb == "turn":
        offsets[:, 3, 1] += 0.05 * swing
        offsets[:, 5, 1] -= 0.05 * swing
        turn = np.pi * progress
    else:
        raise CorpusError(f"Unknown verb '{verb}'")
    return offsets, lift, forward, turn


def _rotate_y(points: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Rotate [F, ..., 3] points about the vertical axis by per-frame angles [F]."""
    c = np.cos(theta).reshape((-1,) + (1,) * (points.ndim - 2))
    s = np.sin(theta).reshape((-1,) + (1,) * (points.ndim - 2))
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    return np.stack([c * x + s * z, y, -s * x + c * z], axis=-1)


def motion_for_prompt(prompt: str, M: int, n_raw: int, rng: Optional[np.random.Generator] = None,
                      noise_std: float = SYNTH_NOISE_STD) -> np.ndarray:
    """
    Build one [n_raw, M, 12] motion for "<verb> <speed> <direction>".
    The speed word sets the number of cycles (2 for slow, 4 for fast); the
    direction word rotates the whole body about the vertical axis.
    """
    words = tokenize(prompt)
    if len(words) != 3:
        raise CorpusError(f"Prompt '{prompt}' is not of the form '<verb> <speed> <direction>'")
    verb, speed, direction = words
    if speed not in SPEEDS:
        raise CorpusError(f"Unknown speed '{speed}'")
    if direction not in DIRECTIONS:
        raise CorpusError(f"Unknown direction '{direction}'")
    if M < 1 or n_raw < 2:
        raise ValueError(f"Synthetic motions need M >= 1 and at least 2 frames, got M={M}, n_raw={n_raw}")

    cycles = 2 * SPEEDS[speed]
    progress = np.arange(n_raw) / n_raw
    phase = 2.0 * np.pi * cycles * progress
    offsets, lift, forward, turn = _verb_pose(verb, phase, progress)
    heading = DIRECTIONS[direction] + turn

    step = forward * SPEEDS[speed] / SYNTH_FPS
    step[0] = 0.0
    root = np.zeros((n_raw, 3))
    root[:, 0] = np.cumsum(step * np.sin(heading))
    root[:, 2] = np.cumsum(step * np.cos(heading))
    root[:, 1] = ROOT_HEIGHT + lift

    roles = np.arange(M) % len(JOINT_ROLES)
    positions = _rotate_y(offsets[:, roles], heading)
    positions[:, roles == 0] = root[:, None, :]

    velocities = np.gradient(positions, axis=0) * SYNTH_FPS
    rotation = np.stack([np.cos(heading), np.zeros(n_raw), -np.sin(heading),
                         np.zeros(n_raw), np.ones(n_raw), np.zeros(n_raw)], axis=-1)
    rotation = np.repeat(rotation[:, None, :], M, axis=1)
    motion = np.concatenate([positions, velocities, rotation], axis=-1)
    if noise_std > 0:
        rng = rng or np.random.default_rng(0)
        motion = motion + noise_std * rng.standard_normal(motion.shape)
    return motion


def synth_dataset(seed: int, count: int, M: int, n_raw: int,
                  vocab: Optional[Vocabulary] = None) -> List[Tuple[str, np.ndarray]]:
    """
    Deterministic corpus of (prompt, motion) pairs. Prompts walk through
    seeded permutations of the vocabulary, so they are distinct whenever
    ``count`` does not exceed the number of prompt combinations.
    """
    if count < 1:
        raise ValueError(f"Corpus size must be >= 1, got {count}")
    vocab = vocab or Vocabulary()
    catalogue = vocab.prompts()
    rng = np.random.default_rng(seed)
    prompts: List[str] = []
    while len(prompts) < count:
        prompts.extend(catalogue[i] for i in rng.permutation(len(catalogue)))
    corpus = [(prompt, motion_for_prompt(prompt, M, n_raw, rng)) for prompt in prompts[:count]]
    logging.debug(f"Generated synthetic corpus: {count} sequences, seed {seed}, M={M}, n_raw={n_raw}")
    return corpus


NORMALIZER_PREFIX = "normalizer."


@dataclass(frozen=True)
class MotionNormalizer:
    """
    Per joint and channel statistics of a corpus. Diffusion runs on
    (x - mean) / std; samples are mapped back before they are written.
    """
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.std.shape or self.mean.ndim != 2 or self.mean.shape[-1] != CHANNELS:
            raise nc.ShapeMismatchError(
                f"MotionNormalizer needs [M, {CHANNELS}] statistics, got {self.mean.shape} and {self.std.shape}")

    @classmethod
    def identity(cls, M: int) -> "MotionNormalizer":
        return cls(np.zeros((M, CHANNELS)), np.ones((M, CHANNELS)))

    @classmethod
    def fit(cls, motions: np.ndarray, std_floor: float = NORM_STD_FLOOR) -> "MotionNormalizer":
        """Statistics over items and frames of a [B, N_raw, M, 12] stack; std is floored at ``std_floor``."""
        motions = np.asarray(motions, dtype=np.float64)
        if motions.ndim != 4:
            raise nc.ShapeMismatchError(f"MotionNormalizer.fit expects [B, N_raw, M, 12], got {motions.shape}")
        mean = motions.mean(axis=(0, 1))
        return cls(mean, np.maximum(motions.std(axis=(0, 1)), std_floor))

    def normalize(self, motion: np.ndarray) -> np.ndarray:
        return (np.asarray(motion) - self.mean) / self.std

    def denormalize(self, motion: np.ndarray) -> np.ndarray:
        return np.asarray(motion) * self.std + self.mean

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {f"{NORMALIZER_PREFIX}mean": self.mean.copy(), f"{NORMALIZER_PREFIX}std": self.std.copy()}

    @classmethod
    def from_state(cls, state: Dict[str, np.ndarray]) -> "MotionNormalizer":
        try:
            return cls(np.asarray(state[f"{NORMALIZER_PREFIX}mean"], dtype=np.float64),
                       np.asarray(state[f"{NORMALIZER_PREFIX}std"], dtype=np.float64))
        except KeyError as e:
            raise KeyError(f"Normalizer statistics are incomplete: missing {e}") from None


# -- token assembly ------------------------------------------------------------

class TokenAssembler(Module):
    """Timestep feed-forward embedding and CLS projection for the two conditioning rows."""

    def __init__(self, dim: int, d_text: int, rng: np.random.Generator, dtype=nc.DEFAULT_DTYPE):
        self.dim = dim
        self.time_mlp = FeedForward(dim, dim, dim, rng, dtype=dtype)
        self.cls_proj = Linear(d_text, dim, rng, dtype=dtype)

    def timestep_token(self, t: np.ndarray) -> Tensor:
        t = np.atleast_1d(np.asarray(t))
        return self.time_mlp(Tensor(sinusoidal_encoding(t, self.dim), dtype=self.time_mlp.fc1.weight.dtype))

    def forward(self, x_motion: Tensor, t: np.ndarray, cls: TensorLike) -> Tensor:
        batch, frames, joints, dim = x_motion.shape
        if dim != self.dim:
            raise nc.ShapeMismatchError(f"assemble_tokens: motion tokens {x_motion.shape} do not have width {self.dim}")
        time_token = self.timestep_token(t)
        cls_token = self.cls_proj(nc.as_tensor(cls))
        rows = [nc.broadcast_to(token.reshape(batch, 1, 1, dim), (batch, 1, joints, dim))
                for token in (time_token, cls_token)]
        return nc.concat([x_motion] + rows, axis=1)


def assemble_tokens(x_motion: Tensor, t: np.ndarray, cls: TensorLike, params: TokenAssembler) -> Tensor:
    """[B, N, M, D] motion tokens -> [B, N+2, M, D] with the timestep row at N and CLS at N+1."""
    return params(x_motion, t, cls)
