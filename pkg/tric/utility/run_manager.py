import os
import csv
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np

from .constant import CHECKPOINT_HEADER
from .tensor_io import format_tensor, parse_tensor, write_tensor
from .utils import RunConfig, build_config

LOSS_COLUMNS = ["iteration", "t_mean", "loss_total", "loss_simple", "loss_fcf", "loss_p"]


class RunManager:
    """
    Owns the output directory of one command: loss log, checkpoints, motion
    and trajectory files, evaluation reports and diagnostic dumps.
    """

    def __init__(self, out_dir: str, logger=None):
        self.out_dir = out_dir
        self.logger = logger or logging.getLogger(__name__)
        self._loss_handle = None
        self._loss_writer = None

    def _log_error(self, message):
        self.logger.error(message)

    def prepare(self) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        return self.out_dir

    def path(self, *parts: str) -> str:
        return os.path.join(self.out_dir, *parts)

    # -- loss log ------------------------------------------------------------------

    def open_loss_log(self, name: str = "losses.csv") -> str:
        self.prepare()
        path = self.path(name)
        self._loss_handle = open(path, "w", encoding="utf-8", newline="")
        self._loss_writer = csv.writer(self._loss_handle, lineterminator="\n")
        self._loss_writer.writerow(LOSS_COLUMNS)
        return path

    def log_losses(self, iteration: int, values: Dict[str, float]):
        if self._loss_writer is None:
            raise RuntimeError("Loss log is not open")
        row = [iteration] + [repr(float(values[column])) for column in LOSS_COLUMNS[1:]]
        self._loss_writer.writerow(row)

    def close_loss_log(self):
        if self._loss_handle is not None:
            self._loss_handle.close()
        self._loss_handle = None
        self._loss_writer = None

    # -- checkpoints -------------------------------------------------------------

    def save_checkpoint(self, config: RunConfig, state: Dict[str, np.ndarray], name: str = "checkpoint.tric") -> str:
        """Header, `key = value` echo of the full config, then one tensor block per named parameter."""
        self.prepare()
        path = self.path(name)
        lines = [CHECKPOINT_HEADER]
        lines.extend(f"{key} = {value}" for key, value in config.flatten())
        for param_name, value in state.items():
            lines.append(f"PARAM {param_name}")
            lines.extend(format_tensor(value))
        tmp_path = f"{path}.tmp"
        with open(tmp_path, "w", encoding="utf-8") as handle:
            handle.write("\n".join(lines) + "\n")
        os.replace(tmp_path, path)
        self.logger.info(f"Checkpoint written to '{path}' ({len(state)} tensors)")
        return path

    @staticmethod
    def load_checkpoint(path: str) -> Tuple[RunConfig, Dict[str, np.ndarray]]:
        with open(path, "r", encoding="utf-8") as handle:
            lines = iter(handle.read().splitlines())
        header = next(lines, None)
        if header != CHECKPOINT_HEADER:
            raise ValueError(f"'{path}' is not a checkpoint: header {header!r}")
        pairs: List[Tuple[str, str]] = []
        state: Dict[str, np.ndarray] = {}
        line = next(lines, None)
        while line is not None and not line.startswith("PARAM "):
            if line.strip():
                key, _, value = line.partition("=")
                pairs.append((key.strip(), value.strip()))
            line = next(lines, None)
        while line is not None:
            if not line.startswith("PARAM "):
                raise ValueError(f"Checkpoint '{path}': expected a PARAM line, got {line!r}")
            state[line[len("PARAM "):].strip()] = parse_tensor(lines)
            line = next(lines, None)
        return build_config(pairs), state

    # -- motions, reports, diagnostics --------------------------------------------

    def write_motion(self, name: str, motion: np.ndarray) -> str:
        self.prepare()
        path = self.path(name)
        write_tensor(path, motion)
        return path

    def write_trajectories(self, name: str, motion: np.ndarray) -> str:
        """Per-joint position series as `# joint j` blocks of `frame x y z` rows."""
        self.prepare()
        path = self.path(name)
        frames, joints = motion.shape[0], motion.shape[1]
        with open(path, "w", encoding="utf-8") as handle:
            for joint in range(joints):
                handle.write(f"# joint {joint}\n")
                for frame in range(frames):
                    x, y, z = motion[frame, joint, :3]
                    handle.write(f"{frame} {x:.6g} {y:.6g} {z:.6g}\n")
        return path

    def write_report(self, lines: List[str], path: Optional[str] = None) -> str:
        path = path or self.path("report.txt")
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("\n".join(lines) + "\n")
        self.logger.info(f"Report written to '{path}'")
        return path

    def dump_diagnostics(self, iteration: int, batch: Dict[str, np.ndarray]) -> str:
        """Write the tensors of an offending batch under diagnostics/iter_<n>/."""
        directory = self.path("diagnostics", f"iter_{iteration:06d}")
        os.makedirs(directory, exist_ok=True)
        for name, value in batch.items():
            value = np.asarray(value)
            if value.dtype.kind in "fiu":
                write_tensor(os.path.join(directory, f"{name}.motion"), value)
            else:
                with open(os.path.join(directory, f"{name}.txt"), "w", encoding="utf-8") as handle:
                    handle.write("\n".join(str(v) for v in value.reshape(-1)) + "\n")
        self._log_error(f"Non-finite loss at iteration {iteration}; batch dumped to '{directory}'")
        return directory
