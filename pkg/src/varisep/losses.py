"""Training losses for separation models with a variable number of sources.

A model emits a fixed number M of output waveforms while a mixture contains
anywhere from 1 to M actual sources. Training pairs outputs with references
by exhaustive permutation search: slots holding a real reference score a
thresholded negative SNR, and leftover slots are pushed toward silence with
a mixture-relative inactive loss. Both losses saturate at ``snr_max`` dB so
that nearly-perfect (or nearly-silent) slots stop dominating the gradient.

All arithmetic is float64 regardless of how the audio was stored, so the
finite-difference gradient checks in this module are meaningful.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioBuffer

_MAX_EXHAUSTIVE_OUTPUTS = 6  # M! search; 6! = 720 permutations is the ceiling


@dataclass(frozen=True)
class LossConfig:
    """Loss hyperparameters: SNR ceiling and model output count."""

    snr_max: float = 30.0
    tau: float = field(default=None)  # type: ignore[assignment]
    num_outputs: int = 4

    def __post_init__(self):
        derived = 10.0 ** (-self.snr_max / 10.0)
        if self.tau is None:
            object.__setattr__(self, "tau", derived)
        elif abs(self.tau - derived) > 1e-12:
            raise ValueError(
                f"tau={self.tau} inconsistent with snr_max={self.snr_max} "
                f"(expected {derived})"
            )
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.num_outputs < 1:
            raise ValueError(f"num_outputs must be >= 1, got {self.num_outputs}")


@dataclass(frozen=True)
class PitLossResult:
    """Outcome of the permutation search.

    ``best_permutation[m]`` is the slot assigned to estimate m (slots
    0..n_active-1 are active, the rest inactive). ``per_pair_losses`` lists
    (kind, value) in slot order; ``total_loss`` is their plain sum.
    """

    total_loss: float
    best_permutation: tuple[int, ...]
    per_pair_losses: tuple[tuple[str, float], ...]

    @property
    def mean_loss(self) -> float:
        """Per-slot average, for trainers that normalize by M."""
        return self.total_loss / len(self.per_pair_losses)


def _raw(buffers, what: str) -> list[np.ndarray]:
    arrays = [b.samples if isinstance(b, AudioBuffer) else np.asarray(b, dtype=np.float64) for b in buffers]
    lengths = {a.shape[0] for a in arrays}
    if len(lengths) > 1:
        raise ValueError(f"{what} have mismatched lengths: {sorted(lengths)}")
    return arrays


def mixture_consistency(initial_sources, mixture):
    """Project source estimates so they sum exactly to the mixture.

    Each source receives an equal 1/M share of the residual
    x - sum(initial_sources). Idempotent: reapplying changes nothing.
    """
    if len(initial_sources) == 0:
        raise ValueError("mixture_consistency requires at least one source")
    arrays = _raw(list(initial_sources) + [mixture], "sources and mixture")
    x = arrays[-1]
    sources = arrays[:-1]
    residual = (x - np.sum(sources, axis=0)) / len(sources)
    rate = mixture.sample_rate if isinstance(mixture, AudioBuffer) else None
    if rate is None:
        return [s + residual for s in sources]
    return [AudioBuffer(s + residual, rate) for s in sources]


def loss_snr(reference, estimate, tau: float = 1e-3) -> float:
    """Thresholded negative SNR: 10*log10(||y - yhat||^2 + tau*||y||^2).

    Floors at 10*log10(tau*||y||^2), i.e. caps the rewarded SNR at
    -10*log10(tau) dB. Scaling y and yhat together shifts the value by
    20*log10(gain).
    """
    y, y_hat = _raw([reference, estimate], "reference and estimate")
    ref_energy = float(np.dot(y, y))
    if ref_energy == 0.0:
        raise ValueError("all-zero reference: score it with loss_inactive instead")
    err = y - y_hat
    return 10.0 * math.log10(float(np.dot(err, err)) + tau * ref_energy)


def loss_inactive(mixture, estimate, tau: float = 1e-3) -> float:
    """Silence loss for surplus output slots: 10*log10(||yhat||^2 + tau*||x||^2).

    The mixture-energy floor keeps the gradient bounded once the slot is
    ~snr_max dB quieter than the input.
    """
    x, y_hat = _raw([mixture, estimate], "mixture and estimate")
    mix_energy = float(np.dot(x, x))
    if mix_energy == 0.0:
        raise ValueError("all-zero mixture in loss_inactive")
    return 10.0 * math.log10(float(np.dot(y_hat, y_hat)) + tau * mix_energy)


def loss_snr_grad(reference, estimate, tau: float = 1e-3) -> np.ndarray:
    """d loss_snr / d estimate: (20/ln10) * (yhat - y) / (||y-yhat||^2 + tau*||y||^2)."""
    y, y_hat = _raw([reference, estimate], "reference and estimate")
    err = y_hat - y
    denom = float(np.dot(err, err)) + tau * float(np.dot(y, y))
    return (20.0 / math.log(10.0)) * err / denom


def loss_inactive_grad(mixture, estimate, tau: float = 1e-3) -> np.ndarray:
    """d loss_inactive / d estimate: (20/ln10) * yhat / (||yhat||^2 + tau*||x||^2)."""
    x, y_hat = _raw([mixture, estimate], "mixture and estimate")
    denom = float(np.dot(y_hat, y_hat)) + tau * float(np.dot(x, x))
    return (20.0 / math.log(10.0)) * y_hat / denom


def pit_loss(references, estimates, mixture, config: LossConfig | None = None) -> PitLossResult:
    """Minimum total loss over every assignment of estimates to slots.

    With ``n_active = len(references)`` and ``M = len(estimates)``, slots
    0..n_active-1 score loss_snr against their reference and the remaining
    slots score loss_inactive against the mixture. All M! assignments are
    tried; ties go to the lexicographically smallest slot->estimate order.
    """
    config = config or LossConfig()
    n_active = len(references)
    n_outputs = len(estimates)
    if n_active < 1:
        raise ValueError("pit_loss needs at least one active reference")
    if n_active > n_outputs:
        raise ValueError(f"more references ({n_active}) than estimates ({n_outputs})")
    if n_outputs > _MAX_EXHAUSTIVE_OUTPUTS:
        raise ValueError(
            f"{n_outputs} outputs exceeds the exhaustive search bound "
            f"({_MAX_EXHAUSTIVE_OUTPUTS})"
        )
    _raw(list(references) + list(estimates) + [mixture], "references, estimates, and mixture")
    tau = config.tau

    # Pairwise table: active slots vary by (slot, estimate), the inactive
    # loss depends on the estimate alone.
    active = [[loss_snr(ref, est, tau) for est in estimates] for ref in references]
    inactive = [loss_inactive(mixture, est, tau) for est in estimates]

    best_total = math.inf
    best_order = None
    for order in itertools.permutations(range(n_outputs)):
        # order[k] = estimate placed in slot k; permutations() is already
        # lexicographic, so strict improvement implements the tie-break
        total = 0.0
        for slot, est in enumerate(order):
            total += active[slot][est] if slot < n_active else inactive[est]
        if total < best_total:
            best_total = total
            best_order = order

    assignment = [0] * n_outputs
    pairs = []
    for slot, est in enumerate(best_order):
        assignment[est] = slot
        if slot < n_active:
            pairs.append(("active", active[slot][est]))
        else:
            pairs.append(("inactive", inactive[est]))
    return PitLossResult(best_total, tuple(assignment), tuple(pairs))


def finite_difference_grad(f, point, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of a waveform."""
    p = np.array(point, dtype=np.float64)
    grad = np.empty_like(p)
    for i in range(p.size):
        saved = p[i]
        p[i] = saved + step
        hi = f(p)
        p[i] = saved - step
        lo = f(p)
        p[i] = saved
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise ValueError(f"non-finite function value near coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * step)
    return grad
