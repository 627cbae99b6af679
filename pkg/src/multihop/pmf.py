from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

MASS_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DelayPmf:
    """Truncated pmf on the integers ``offset, offset+1, ...`` with the cut-off mass kept."""

    offset: int
    masses: np.ndarray
    residual_tail: float = 0.0

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=float).copy()
        if masses.ndim != 1:
            raise ValueError("masses must be 1-d")
        if np.any(masses < 0) or self.residual_tail < 0:
            raise ValueError("masses must be non-negative")
        if abs(masses.sum() + self.residual_tail - 1.0) > MASS_TOL:
            raise ValueError(
                f"masses + tail = {masses.sum() + self.residual_tail!r}, not 1")
        masses.setflags(write=False)
        object.__setattr__(self, "masses", masses)

    @classmethod
    def point(cls, k: int) -> "DelayPmf":
        return cls(k, np.array([1.0]))

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.masses.size)

    @property
    def last(self) -> int:
        return self.offset + self.masses.size - 1

    def dense(self) -> np.ndarray:
        """Masses indexed from 0 (entry k is Pr{value = k})."""
        out = np.zeros(self.offset + self.masses.size)
        out[self.offset:] = self.masses
        return out

    def mean(self) -> float:
        return float(self.support @ self.masses)

    def moment(self, k: int) -> float:
        return float((self.support.astype(float) ** k) @ self.masses)

    def survival(self, k: int) -> float:
        """Pr{value > k}, with the truncated tail counted as exceeding every k."""
        idx = k - self.offset + 1
        if idx <= 0:
            return 1.0
        return float(self.masses[idx:].sum()) + self.residual_tail

    def cdf_values(self) -> np.ndarray:
        return np.cumsum(self.dense())

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "mass"])
            for k, m in zip(self.support, self.masses):
                w.writerow([int(k), f"{m:.12g}"])
