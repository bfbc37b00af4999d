"""
Plain-text file formats shared by the commands.

Tensor text format::

    TENSOR v1
    <dim_0> <dim_1> ...
    <row-major values, one last-axis row per line, 9 significant digits>
"""
import os
import logging
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from .constant import SIGNIFICANT_DIGITS, TENSOR_HEADER
from ..core.motion_repr import CorpusError


def format_tensor(array: np.ndarray) -> List[str]:
    array = np.asarray(array, dtype=np.float64)
    lines = [TENSOR_HEADER, " ".join(str(d) for d in array.shape)]
    width = array.shape[-1] if array.ndim else 1
    flat = array.reshape(-1, width) if array.size else np.zeros((0, width))
    for row in flat:
        lines.append(" ".join(f"{v:.{SIGNIFICANT_DIGITS}g}" for v in row))
    return lines


def parse_tensor(lines: Iterator[str]) -> np.ndarray:
    """Consume one tensor block from ``lines`` and return it as a float64 array."""
    header = next(lines, None)
    if header is None or header.strip() != TENSOR_HEADER:
        raise ValueError(f"Expected '{TENSOR_HEADER}' header, got {header!r}")
    dims_line = next(lines, None)
    if dims_line is None:
        raise ValueError("Tensor block ends before its dimension line")
    try:
        shape = tuple(int(d) for d in dims_line.split())
    except ValueError:
        raise ValueError(f"Invalid tensor dimension line {dims_line!r}") from None
    if any(d < 1 for d in shape):
        raise ValueError(f"Tensor dimensions must be positive, got {shape}")
    count = int(np.prod(shape)) if shape else 1
    values: List[float] = []
    while len(values) < count:
        line = next(lines, None)
        if line is None:
            raise ValueError(f"Tensor block truncated: expected {count} values, got {len(values)}")
        values.extend(float(v) for v in line.split())
    if len(values) != count:
        raise ValueError(f"Tensor block holds {len(values)} values, expected {count}")
    return np.asarray(values, dtype=np.float64).reshape(shape)


def write_tensor(path: str, array: np.ndarray):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(format_tensor(array)) + "\n")


def read_tensor(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_tensor(iter(handle.read().splitlines()))


def read_skeleton(path: str) -> List[Tuple[int, int]]:
    """Edge list file: one `a b` joint pair per line, `#` comments allowed."""
    edges = []
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            content = line.split("#", 1)[0].split()
            if not content:
                continue
            if len(content) != 2:
                raise ValueError(f"Skeleton line {number} is not an 'a b' pair: {line.rstrip()!r}")
            edges.append((int(content[0]), int(content[1])))
    return edges


def write_skeleton(path: str, edges: Sequence[Tuple[int, int]]):
    with open(path, "w", encoding="utf-8") as handle:
        handle.writelines(f"{a} {b}\n" for a, b in edges)


def write_corpus(directory: str, corpus: Sequence[Tuple[str, np.ndarray]]):
    """`<id>.motion` and `<id>.txt` per item, ids zero-padded in corpus order."""
    os.makedirs(directory, exist_ok=True)
    for index, (prompt, motion) in enumerate(corpus):
        stem = os.path.join(directory, f"{index:05d}")
        write_tensor(f"{stem}.motion", motion)
        with open(f"{stem}.txt", "w", encoding="utf-8") as handle:
            handle.write(prompt.strip() + "\n")
    logging.info(f"Wrote {len(corpus)} corpus items to '{directory}'")


def read_corpus(directory: str) -> List[Tuple[str, np.ndarray]]:
    if not os.path.isdir(directory):
        raise CorpusError(f"Corpus directory '{directory}' does not exist")
    stems = sorted(name[:-len(".motion")] for name in os.listdir(directory) if name.endswith(".motion"))
    if not stems:
        raise CorpusError(f"Corpus directory '{directory}' holds no .motion files")
    corpus = []
    for stem in stems:
        prompt_path = os.path.join(directory, f"{stem}.txt")
        if not os.path.exists(prompt_path):
            raise CorpusError(f"Corpus item '{stem}' has no prompt file")
        with open(prompt_path, "r", encoding="utf-8") as handle:
            prompt = handle.read().strip()
        corpus.append((prompt, read_tensor(os.path.join(directory, f"{stem}.motion"))))
    return corpus
