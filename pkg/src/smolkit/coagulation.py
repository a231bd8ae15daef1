"""Reaction terms for binary coagulation: gain, loss, and mass bookkeeping.

Conventions (ordered-pair bookkeeping, no 1/2 factors):

    gain_n = sum_{m=1}^{n-1} alpha(m, n-m) f_m f_{n-m}
    loss_n = 2 f_n sum_m alpha(n, m) f_m

The explicit factor 2 in the loss makes the pair of terms exactly
mass-compatible with the ordered gain sum.  Two truncation policies close
the hierarchy at ``n_max``:

* ``cutoff``: pairs with n+m > n_max never react; truncated mass is exactly
  conserved.
* ``gel_reservoir``: the loss partner sum runs over the whole range and the
  mass of products beyond n_max is routed to an explicit reservoir, whose
  refinement limit diagnoses gelation.

The double sums are evaluated directly in O(n_max^2) per cell via
precomputed pair index tables; general kernels break the convolution
structure of the gain term, so no transform shortcut is attempted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import MassField
from .kernels import Kernel

__all__ = [
    "TruncationPolicy",
    "RateField",
    "RateEvaluator",
    "gain",
    "loss",
    "reaction_rates",
    "weighted_sum",
]

CUTOFF = "cutoff"
GEL_RESERVOIR = "gel_reservoir"


@dataclass(frozen=True)
class TruncationPolicy:
    """How reactions that would exceed the sectional range are closed."""

    kind: str
    n_max: int

    def __post_init__(self):
        if self.kind not in (CUTOFF, GEL_RESERVOIR):
            raise ValueError(f"unknown truncation policy {self.kind!r}")
        # n_max = 1 is degenerate but legal: under the gel reservoir every
        # reaction exits the range, which is useful as a boundary case.
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")

    @classmethod
    def cutoff(cls, n_max: int) -> "TruncationPolicy":
        return cls(CUTOFF, n_max)

    @classmethod
    def gel_reservoir(cls, n_max: int) -> "TruncationPolicy":
        return cls(GEL_RESERVOIR, n_max)


@dataclass
class RateField:
    """Reaction rates per species and cell, plus the gel mass flux.

    Under cutoff, sum_n n*Q[n] vanishes per cell up to roundoff; under the
    gel reservoir it equals -flux_to_gel.
    """

    Q: np.ndarray
    flux_to_gel: np.ndarray


class RateEvaluator:
    """Precomputed tables for evaluating reaction rates on (n_max, cells) data.

    Instances are immutable after construction; evaluation is pure and
    cell-parallel, so one evaluator can serve any number of workers.
    """

    def __init__(self, kernel: Kernel, policy: TruncationPolicy):
        n_max = policy.n_max
        if kernel.n_max < n_max:
            raise ValueError("kernel range smaller than the truncation range")
        self.policy = policy
        self.n_max = n_max
        table = kernel.dense(n_max)
        idx = np.arange(1, n_max + 1)
        s = idx[:, None] + idx[None, :]
        # Unordered-split gain weights: row i holds the coefficients for
        # species m = i+1 paired with j >= i, doubled off the diagonal so a
        # single pass over unordered pairs reproduces the ordered sum.
        self._gain_rows = []
        for i in range(n_max // 2):
            hi = n_max - i - 2
            w = 2.0 * table[i, i : hi + 1].copy()
            w[0] *= 0.5
            self._gain_rows.append(w)
        if policy.kind == CUTOFF:
            self._loss_matrix = 2.0 * np.where(s <= n_max, table, 0.0)
            self._gel_matrix = None
        else:
            self._loss_matrix = 2.0 * table
            self._gel_matrix = np.where(s > n_max, s * table, 0.0)

    def gain_all(self, flat: np.ndarray) -> np.ndarray:
        """(n_max, cells) gain term; species 1 has no gain."""
        out = np.zeros_like(flat)
        for i, w in enumerate(self._gain_rows):
            hi = i + w.size - 1
            out[2 * i + 1 : i + hi + 2] += (w[:, None] * flat[i : hi + 1]) * flat[i]
        return out

    def loss_coefficients(self, flat: np.ndarray) -> np.ndarray:
        """(n_max, cells) coefficients lambda_n(x) with loss_n = lambda_n * f_n."""
        return self._loss_matrix @ flat

    def rates(self, flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(Q, flux_to_gel) for data laid out as (n_max, cells)."""
        Q = self.gain_all(flat)
        Q -= self.loss_coefficients(flat) * flat
        if self._gel_matrix is None:
            flux = np.zeros(flat.shape[1])
        else:
            flux = np.einsum("nc,nc->c", flat, self._gel_matrix @ flat)
        return Q, flux


def gain(F: MassField, kernel: Kernel, n: int) -> np.ndarray:
    """Per-cell creation rate of mass-n clusters from ordered splits m + (n-m)."""
    if not 1 <= n <= F.n_max:
        raise IndexError(f"species {n} outside 1..{F.n_max}")
    if n == 1:
        return np.zeros(F.grid.shape)
    flat = F.flat()
    m = np.arange(1, n)
    w = kernel.dense(F.n_max)[m - 1, n - m - 1]
    out = np.einsum("m,mc,mc->c", w, flat[m - 1], flat[n - m - 1])
    return out.reshape(F.grid.shape)


def loss(F: MassField, kernel: Kernel, n: int, policy: TruncationPolicy) -> np.ndarray:
    """Per-cell destruction rate of mass-n clusters.

    The partner sum runs to n_max - n under cutoff (pairs that would
    overflow the range never react) and to n_max under the gel reservoir.
    """
    if not 1 <= n <= F.n_max:
        raise IndexError(f"species {n} outside 1..{F.n_max}")
    m_top = policy.n_max - n if policy.kind == CUTOFF else policy.n_max
    if m_top < 1:
        return np.zeros(F.grid.shape)
    flat = F.flat()
    w = kernel.dense(F.n_max)[n - 1, :m_top]
    out = 2.0 * flat[n - 1] * (w @ flat[:m_top])
    return out.reshape(F.grid.shape)


def reaction_rates(F: MassField, kernel: Kernel, policy: TruncationPolicy) -> RateField:
    """Assembled net rates Q_n = gain_n - loss_n plus the gel mass flux.

    The flux counts (n+m) * alpha(n,m) f_n f_m once per ordered pair with
    n+m > n_max, which balances the factor-2 loss convention exactly:
    per cell, sum_n n*Q_n + flux_to_gel = 0 up to roundoff.
    """
    if policy.n_max != F.n_max:
        raise ValueError("policy n_max must match the field")
    Q, flux = RateEvaluator(kernel, policy).rates(F.flat())
    return RateField(Q.reshape((F.n_max,) + F.grid.shape), flux.reshape(F.grid.shape))


def weighted_sum(F: MassField, kernel: Kernel, phi, policy: TruncationPolicy) -> np.ndarray:
    """Per-cell pair form sum alpha(n,m) (phi(n+m) - phi(n) - phi(m)) f_n f_m.

    ``phi`` must be defined on 1..2*n_max.  Pair admissibility follows the
    policy, making this identically equal to sum_n phi(n) * Q_n from
    :func:`reaction_rates`: under cutoff, overflowing pairs drop entirely;
    under the gel reservoir the phi(n+m) credit is dropped but the losses
    remain.  With phi(n) = n and cutoff, the sum telescopes to zero.
    """
    if policy.n_max != F.n_max:
        raise ValueError("policy n_max must match the field")
    N = F.n_max
    phis = np.array([float(phi(n)) for n in range(1, 2 * N + 1)])
    idx = np.arange(1, N + 1)
    s = idx[:, None] + idx[None, :]
    credit = phis[s - 1]
    debit = phis[idx - 1][:, None] + phis[idx - 1][None, :]
    if policy.kind == CUTOFF:
        form = np.where(s <= N, credit - debit, 0.0)
    else:
        form = np.where(s <= N, credit, 0.0) - debit
    B = kernel.dense(N) * form
    flat = F.flat()
    out = np.einsum("nc,nc->c", flat, B @ flat)
    return out.reshape(F.grid.shape)
