"""
Subprocess client for external learners (tree ensembles and the like).
Designs and labels go out in the binary matrix container; predictions come back the same way.
"""

import logging
import shutil
import subprocess
import tempfile
from pathlib import Path
from typing import List, Sequence

import numpy as np

from factorAug.constants import DEFAULT_EXTERNAL_TIMEOUT
from factorAug.errors import DataError, ExternalLearnerError
from factorAug.matrixio import Matrix, load_bin, save_bin

logger = logging.getLogger(__name__)

TRAIN_DESIGN_FILE = "train_design.bin"
TRAIN_LABELS_FILE = "train_labels.bin"
TEST_DESIGN_FILE = "test_design.bin"
PREDICTIONS_FILE = "predictions.bin"


class ExternalLearnerClient:
    """
    Runs `command train_design train_labels test_design predictions`.

    The command must write an n_test x 1 (or n_test x C) matrix to the
    predictions path and exit with status 0.
    """

    def __init__(self, command: Sequence[str], timeout: float = DEFAULT_EXTERNAL_TIMEOUT):
        if not command:
            raise ValueError("External learner needs a command")
        self.command: List[str] = list(command)
        self.timeout = timeout

    def is_available(self) -> bool:
        """Check that the executable can be found."""
        available = shutil.which(self.command[0]) is not None or Path(self.command[0]).exists()
        if not available:
            logger.warning(f"External learner command not found: {self.command[0]}")
        return available

    def fit_predict(self, train_design: np.ndarray, train_labels: np.ndarray,
                    test_design: np.ndarray) -> np.ndarray:
        """
        Train on one design and predict another in a single call.

        Returns:
            Predictions, one row per test row (1-D for single-output learners)

        Raises:
            ExternalLearnerError: non-zero exit, timeout or missing output
            DataError: prediction count differs from the number of test rows
        """
        with tempfile.TemporaryDirectory(prefix="factoraug_ext_") as tmp:
            directory = Path(tmp)
            paths = [directory / name for name in
                     (TRAIN_DESIGN_FILE, TRAIN_LABELS_FILE, TEST_DESIGN_FILE, PREDICTIONS_FILE)]
            save_bin(Matrix(train_design), paths[0])
            save_bin(Matrix(np.asarray(train_labels, dtype=np.float64).reshape(-1, 1)), paths[1])
            save_bin(Matrix(test_design), paths[2])

            args = self.command + [str(path) for path in paths]
            logger.info(f"Running external learner: {' '.join(args)}")
            try:
                completed = subprocess.run(args, capture_output=True, text=True, timeout=self.timeout)
            except subprocess.TimeoutExpired:
                raise ExternalLearnerError(f"External learner timed out after {self.timeout} s")
            except OSError as e:
                raise ExternalLearnerError(f"Cannot start external learner: {e}")

            if completed.returncode != 0:
                logger.error(f"External learner stderr: {completed.stderr.strip()}")
                raise ExternalLearnerError(f"External learner exited with status {completed.returncode}")
            if not paths[3].exists():
                raise ExternalLearnerError("External learner wrote no predictions file")

            predictions = np.array(load_bin(paths[3]).data)

        if predictions.shape[0] != test_design.shape[0]:
            raise DataError(
                f"External learner returned {predictions.shape[0]} predictions for {test_design.shape[0]} rows"
            )
        return predictions[:, 0] if predictions.shape[1] == 1 else predictions
