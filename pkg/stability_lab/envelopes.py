"""
stability_lab/envelopes.py
Pointwise envelopes ell(theta) <= rho(x, theta) <= u(theta) on a grid.
"""

from dataclasses import dataclass

import numpy as np

from stability_lab.errors import EnvelopeViolationError, ValidationError

ENVELOPE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class EnvelopeSpec:
    ell: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        ell = np.asarray(self.ell, dtype=float).ravel()
        u = np.asarray(self.u, dtype=float).ravel()
        object.__setattr__(self, "ell", ell)
        object.__setattr__(self, "u", u)
        if ell.shape != u.shape:
            raise ValidationError(f"ell ({ell.size}) and u ({u.size}) differ in length")
        if not np.all(np.isfinite(ell)) or not np.all(np.isfinite(u)):
            raise EnvelopeViolationError("envelopes must be finite")
        if np.any(ell <= 0):
            raise EnvelopeViolationError("ell must be strictly positive")
        if np.any(u < ell * (1 - ENVELOPE_RTOL)):
            raise EnvelopeViolationError("u must dominate ell node-wise")

    @property
    def n(self) -> int:
        return int(self.ell.size)

    def ratio(self) -> np.ndarray:
        """u / ell per node"""
        return self.u / self.ell

    def check(self, values: np.ndarray, node: int) -> None:
        """Raise when sampled integrand values leave [ell, u] at the given node"""
        values = np.asarray(values, dtype=float)
        lo = self.ell[node] * (1 - ENVELOPE_RTOL)
        hi = self.u[node] * (1 + ENVELOPE_RTOL)
        if np.any(values < lo) or np.any(values > hi):
            bad = values[(values < lo) | (values > hi)][0]
            raise EnvelopeViolationError(
                f"value {bad:.6g} outside [{self.ell[node]:.6g}, {self.u[node]:.6g}] at node {node}")
