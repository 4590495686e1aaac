"""Maneuver probability estimation from executed motion.

The other vehicle's executed longitudinal positions are compared with the
positions each maneuver hypothesis predicted for the same instants; the
summed squared differences are turned into relative probabilities and the
belief's information entropy gates the decision making.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

DRIVE = "drive"
YIELD = "yield"


@dataclass
class ExecutionHistory:
    """Rolling window of observed longitudinal positions at uniform dt."""

    window: int = 8  # n + 1 samples
    positions: deque = field(init=False)
    timestamps: deque = field(init=False)

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("window must hold at least one sample")
        self.positions = deque(maxlen=self.window)
        self.timestamps = deque(maxlen=self.window)

    def append(self, position: float, t: float) -> None:
        if len(self.timestamps) >= 2:
            dt = self.timestamps[1] - self.timestamps[0]
            if abs((t - self.timestamps[-1]) - dt) > 1e-9:
                raise ValueError("timestamps must be uniformly spaced")
        self.positions.append(float(position))
        self.timestamps.append(float(t))

    def __len__(self) -> int:
        return len(self.positions)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=float)


@dataclass(frozen=True)
class ManeuverBelief:
    """Per-label probabilities plus their entropy in nats."""

    probabilities: dict[str, float]
    entropy: float

    def p(self, label: str) -> float:
        return self.probabilities.get(label, 0.0)


def dissimilarity(executed: np.ndarray, hypothesis: np.ndarray) -> float:
    """Sum of squared position differences over matching instants."""
    executed = np.asarray(executed, dtype=float)
    hypothesis = np.asarray(hypothesis, dtype=float)
    if executed.shape != hypothesis.shape:
        raise ValueError("executed and hypothesis sequences differ in length")
    d = executed - hypothesis
    return float(np.dot(d, d))


def entropy(probabilities) -> float:
    """Information entropy -sum p ln p with 0 ln 0 = 0."""
    h = 0.0
    for p in probabilities:
        if p > 0.0:
            h -= p * math.log(p)
    return h


def maneuver_probabilities(
    m_yield: float,
    m_drive: float,
    inverse_weighting: bool = True,
) -> ManeuverBelief:
    """Relative maneuver probabilities from the two dissimilarities.

    With inverse weighting (default) a maneuver whose hypothesis matches
    the executed motion better (smaller dissimilarity) receives the higher
    probability: p_yield = m_drive / (m_yield + m_drive). The direct
    orientation is kept behind the flag.
    """
    if m_yield < 0.0 or m_drive < 0.0:
        raise ValueError("dissimilarities must be non-negative")
    total = m_yield + m_drive
    if total <= 0.0:
        p_yield = 0.5  # indistinguishable hypotheses
    elif inverse_weighting:
        p_yield = m_drive / total
    else:
        p_yield = m_yield / total
    probs = {YIELD: p_yield, DRIVE: 1.0 - p_yield}
    return ManeuverBelief(probs, entropy(probs.values()))
