from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np


@dataclass
class Dataset:
    """Labelled samples. ``truth`` holds the generating LdaParams for synthetic data."""

    x: np.ndarray
    y: np.ndarray
    truth: Any = None

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.x.shape[0]} inputs but {self.y.shape[0]} labels")

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(self.dim)] + ["y"])
            for row, label in zip(self.x, self.y):
                w.writerow([repr(float(v)) for v in row] + [int(label)])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        body = rows[1:]
        if not body:
            return cls(np.zeros((0, len(rows[0]) - 1)), np.zeros(0, dtype=np.int64))
        x = np.array([[float(v) for v in r[:-1]] for r in body])
        y = np.array([int(r[-1]) for r in body])
        return cls(x, y)
