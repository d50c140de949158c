"""Separation quality metrics and the variable-source evaluation protocol.

Two SI-SNR formulations are provided. The scaled form projects the estimate
onto the reference and compares energies; it hands out inflated scores when
the estimate is nearly silent, because the tiny projection residual is
divided by an even tinier projected reference. The stabilized form scores
the cosine similarity directly, is bounded by the epsilon stabilizer at
about +-80 dB for epsilon = 1e-8, and converges to a scale-independent
limit for quiet estimates. Both agree (identically at epsilon = 0) away
from the degenerate cases.

Evaluation of one example: align estimates to references over all
permutations, drop pairs whose reference is all-zero, drop estimates more
than ``inactive_margin_db`` below the quietest non-zero reference, then
score the surviving pairs. Counting how many estimates survive that margin
versus how many references are non-zero classifies the example as under-,
equal-, or over-separated.
"""

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .audio import AudioBuffer, StftConfig, energy_db, istft, stft
from .losses import mixture_consistency

DB_DISPLAY_CAP = 80.0  # rendered tables clamp here; raw values keep full range


class DegenerateExampleError(ValueError):
    """Example with no non-zero reference; it cannot be scored."""


@dataclass(frozen=True)
class MetricConfig:
    """Evaluation knobs: stabilizer, inactive margin, SI-SNR formulation."""

    epsilon: float = 1e-8
    inactive_margin_db: float = 20.0
    formulation: str = "stabilized"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.inactive_margin_db <= 0:
            raise ValueError(f"inactive_margin_db must be positive, got {self.inactive_margin_db}")
        if self.formulation not in ("scaled", "stabilized"):
            raise ValueError(f"formulation must be 'scaled' or 'stabilized', got {self.formulation!r}")


@dataclass(frozen=True)
class SiSnrDiagnostics:
    """SI-SNR value plus the intermediates (scale, cosine) that produced it."""

    alpha: float
    rho: float
    value_db: float

    def __post_init__(self):
        if abs(self.rho) > 1.0 + 1e-12:
            raise ValueError(f"cosine similarity out of range: {self.rho}")


def _pair(reference, estimate) -> tuple[np.ndarray, np.ndarray]:
    y = reference.samples if isinstance(reference, AudioBuffer) else np.asarray(reference, dtype=np.float64)
    y_hat = estimate.samples if isinstance(estimate, AudioBuffer) else np.asarray(estimate, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: reference {y.shape[0]} vs estimate {y_hat.shape[0]}")
    return y, y_hat


def si_snr_scaled(reference, estimate, epsilon: float = 1e-8) -> SiSnrDiagnostics:
    """SI-SNR via optimal-scale projection.

    alpha = y.yhat / (||y||^2 + eps);
    value = 10*log10((||alpha*y||^2 + eps) / (||alpha*y - yhat||^2 + eps)).
    """
    y, y_hat = _pair(reference, estimate)
    dot = float(np.dot(y, y_hat))
    ref_sq = float(np.dot(y, y))
    est_sq = float(np.dot(y_hat, y_hat))
    alpha = dot / (ref_sq + epsilon)
    target = alpha * y
    err = target - y_hat
    value = 10.0 * math.log10(
        (float(np.dot(target, target)) + epsilon) / (float(np.dot(err, err)) + epsilon)
    )
    rho = dot / (math.sqrt(ref_sq) * math.sqrt(est_sq) + epsilon)
    return SiSnrDiagnostics(alpha, rho, value)


def si_snr_stabilized(reference, estimate, epsilon: float = 1e-8) -> SiSnrDiagnostics:
    """SI-SNR via cosine similarity, bounded by the stabilizer.

    rho = y.yhat / (||y||*||yhat|| + eps);
    value = 10*log10((rho^2 + eps) / (1 - rho^2 + eps)).
    Identical to the scaled form at eps = 0 (rho^2/(1-rho^2) equals the
    projection energy ratio), but silent estimates converge to
    10*log10(eps/(1+eps)) instead of blowing up.
    """
    y, y_hat = _pair(reference, estimate)
    dot = float(np.dot(y, y_hat))
    ref_sq = float(np.dot(y, y))
    est_sq = float(np.dot(y_hat, y_hat))
    rho = dot / (math.sqrt(ref_sq) * math.sqrt(est_sq) + epsilon)
    rho_sq = rho * rho
    value = 10.0 * math.log10((rho_sq + epsilon) / (1.0 - rho_sq + epsilon))
    alpha = dot / (ref_sq + epsilon)
    return SiSnrDiagnostics(alpha, rho, value)


def si_snr(reference, estimate, config: MetricConfig | None = None) -> SiSnrDiagnostics:
    """SI-SNR using the formulation selected by the config."""
    config = config or MetricConfig()
    fn = si_snr_stabilized if config.formulation == "stabilized" else si_snr_scaled
    return fn(reference, estimate, config.epsilon)


@dataclass(frozen=True)
class ExampleEval:
    """Scored example: pairing, per-pair values, and the counting verdict.

    ``pairing`` holds the kept (reference index, estimate index) pairs after
    zero-reference and margin filtering. ``si_snri_db`` and
    ``input_si_snr_db`` are empty until filled by :func:`evaluate_example`.
    """

    reference_count: int
    estimate_count: int
    pairing: tuple[tuple[int, int], ...]
    si_snr_db: tuple[float, ...]
    si_snri_db: tuple[float, ...]
    input_si_snr_db: tuple[float, ...]
    separation_class: str

    def __post_init__(self):
        expected = _classify(self.reference_count, self.estimate_count)
        if self.separation_class != expected:
            raise ValueError(
                f"separation_class {self.separation_class!r} inconsistent with counts "
                f"({self.reference_count} refs, {self.estimate_count} ests)"
            )
        if len(self.si_snr_db) != len(self.pairing):
            raise ValueError("one SI-SNR value per kept pair required")


def _classify(reference_count: int, estimate_count: int) -> str:
    if estimate_count < reference_count:
        return "under"
    if estimate_count > reference_count:
        return "over"
    return "equal"


def align_and_filter(references, estimates, mixture, config: MetricConfig | None = None) -> ExampleEval:
    """Assign estimates to references and apply the scoring filters.

    The permutation maximizes summed SI-SNR over slots whose reference is
    non-zero (all-zero references occupy slots but contribute nothing).
    Kept pairs need a non-zero reference and an estimate within
    ``inactive_margin_db`` of the quietest non-zero reference; the same
    margin defines which estimates count as "emitted" for the
    under/equal/over verdict.
    """
    config = config or MetricConfig()
    if len(references) != len(estimates):
        raise ValueError(
            f"references ({len(references)}) and estimates ({len(estimates)}) "
            "must be padded to the same cardinality"
        )
    n = len(references)
    active = [i for i in range(n) if float(np.dot(references[i].samples, references[i].samples)) > 0.0]
    if not active:
        raise DegenerateExampleError("no non-zero reference in example")

    # pair score table, active references only
    table = np.zeros((n, n))
    for r in active:
        for e in range(n):
            table[r, e] = si_snr(references[r], estimates[e], config).value_db

    best_score = -math.inf
    best_order = None
    for order in itertools.permutations(range(n)):
        score = sum(table[r, order[r]] for r in active)
        if score > best_score:
            best_score = score
            best_order = order

    floor_db = min(energy_db(references[r]) for r in active) - config.inactive_margin_db
    emitted = [e for e in range(n) if energy_db(estimates[e]) >= floor_db]
    pairing = []
    values = []
    for r in active:
        e = best_order[r]
        if energy_db(estimates[e]) >= floor_db:
            pairing.append((r, e))
            values.append(table[r, e])
    return ExampleEval(
        reference_count=len(active),
        estimate_count=len(emitted),
        pairing=tuple(pairing),
        si_snr_db=tuple(values),
        si_snri_db=(),
        input_si_snr_db=(),
        separation_class=_classify(len(active), len(emitted)),
    )


def evaluate_example(references, estimates, mixture, config: MetricConfig | None = None) -> ExampleEval:
    """Full per-example scoring: alignment plus improvement over the mixture.

    For each kept pair, SI-SNRi = SI-SNR(ref, est) - SI-SNR(ref, mixture).
    Single-source examples are reported by their absolute SI-SNR downstream;
    both quantities are recorded here.
    """
    config = config or MetricConfig()
    result = align_and_filter(references, estimates, mixture, config)
    inputs = tuple(si_snr(references[r], mixture, config).value_db for r, _ in result.pairing)
    improvements = tuple(v - i for v, i in zip(result.si_snr_db, inputs))
    return replace(result, si_snri_db=improvements, input_si_snr_db=inputs)


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Corpus-level aggregate built from per-example evaluations.

    Stores raw per-pair values keyed by reference count, so merging partial
    reports is plain concatenation and reproduces single-pass aggregation
    exactly.
    """

    confusion_matrix: np.ndarray
    single_source_values: tuple[float, ...]
    pair_improvements: dict[int, tuple[float, ...]]
    example_improvements: dict[int, tuple[float, ...]]
    input_si_snr: dict[int, tuple[float, ...]]

    @property
    def n_examples(self) -> int:
        return int(self.confusion_matrix.sum())

    @property
    def counting_rates(self) -> tuple[float, float, float]:
        """(under, equal, over) fractions from the confusion triangles."""
        m = self.confusion_matrix
        total = m.sum()
        under = np.tril(m, -1).sum() / total
        equal = np.trace(m) / total
        over = np.triu(m, 1).sum() / total
        return (float(under), float(equal), float(over))

    @property
    def single_source_si_snr(self) -> float:
        """Mean absolute SI-SNR over kept pairs of 1-source examples (1S)."""
        if not self.single_source_values:
            return math.nan
        return float(np.mean(self.single_source_values))

    def msi_by_count(self, per_example: bool = False) -> dict:
        """Mean SI-SNRi per source count (2, 3, 4) plus the pooled 2-4 bucket.

        Default averages over kept pairs within a bucket; ``per_example``
        averages each example first.
        """
        source = self.example_improvements if per_example else self.pair_improvements
        out = {}
        pooled = []
        for count in sorted(source):
            vals = source[count]
            out[count] = float(np.mean(vals)) if vals else math.nan
            if 2 <= count <= 4:
                pooled.extend(vals)
        out["2-4"] = float(np.mean(pooled)) if pooled else math.nan
        return out

    @property
    def input_si_snr_distribution(self) -> dict[int, dict[str, float]]:
        """Per-count summary of SI-SNR(ref, mixture) over kept pairs."""
        out = {}
        for count in sorted(self.input_si_snr):
            vals = np.asarray(self.input_si_snr[count])
            if vals.size == 0:
                continue
            q25, q50, q75 = np.percentile(vals, [25, 50, 75])
            out[count] = {
                "n": int(vals.size),
                "mean": float(vals.mean()),
                "min": float(vals.min()),
                "p25": float(q25),
                "median": float(q50),
                "p75": float(q75),
                "max": float(vals.max()),
            }
        return out

    def to_dict(self) -> dict:
        """JSON-ready report; raw (unclamped) values, string keys throughout."""
        under, equal, over = self.counting_rates
        return {
            "n_examples": self.n_examples,
            "single_source_si_snr_db": self.single_source_si_snr,
            "msi_by_count_db": {str(k): v for k, v in self.msi_by_count().items()},
            "msi_by_count_per_example_db": {
                str(k): v for k, v in self.msi_by_count(per_example=True).items()
            },
            "counting_rates": {"under": under, "equal": equal, "over": over},
            "confusion_matrix": self.confusion_matrix.tolist(),
            "input_si_snr_distribution": {
                str(k): v for k, v in self.input_si_snr_distribution.items()
            },
        }

    def render_table(self) -> str:
        """One-row text table: 1S, MSi by count, counting rates (dB clamped)."""

        def disp(v: float) -> str:
            if math.isnan(v):
                return "  n/a"
            return f"{max(-DB_DISPLAY_CAP, min(DB_DISPLAY_CAP, v)):5.1f}"

        msi = self.msi_by_count()
        under, equal, over = self.counting_rates
        header = "   1S  MSi2  MSi3  MSi4 MSi2-4  under equal  over"
        row = (
            f"{disp(self.single_source_si_snr)} {disp(msi.get(2, math.nan))} "
            f"{disp(msi.get(3, math.nan))} {disp(msi.get(4, math.nan))} "
            f"{disp(msi.get('2-4', math.nan)):>6} "
            f"{under:6.3f} {equal:5.3f} {over:5.3f}"
        )
        return header + "\n" + row


def aggregate_report(examples) -> EvalReport:
    """Fold per-example evaluations into corpus totals."""
    examples = list(examples)
    if not examples:
        raise ValueError("aggregate_report requires at least one example")
    size = max(4, max(max(ex.reference_count, ex.estimate_count) for ex in examples)) + 1
    confusion = np.zeros((size, size), dtype=np.int64)
    singles: list[float] = []
    pair_imp: dict[int, list[float]] = {}
    example_imp: dict[int, list[float]] = {}
    inputs: dict[int, list[float]] = {}
    for ex in examples:
        if len(ex.si_snri_db) != len(ex.pairing):
            raise ValueError("aggregate_report needs evaluations from evaluate_example")
        confusion[ex.reference_count, ex.estimate_count] += 1
        count = ex.reference_count
        if count == 1:
            singles.extend(ex.si_snr_db)
        else:
            pair_imp.setdefault(count, []).extend(ex.si_snri_db)
            if ex.si_snri_db:
                example_imp.setdefault(count, []).append(float(np.mean(ex.si_snri_db)))
        inputs.setdefault(count, []).extend(ex.input_si_snr_db)
    return EvalReport(
        confusion_matrix=confusion,
        single_source_values=tuple(singles),
        pair_improvements={k: tuple(v) for k, v in pair_imp.items()},
        example_improvements={k: tuple(v) for k, v in example_imp.items()},
        input_si_snr={k: tuple(v) for k, v in inputs.items()},
    )


def merge_reports(*reports: EvalReport) -> EvalReport:
    """Combine partial reports; associative and order-consistent with
    single-pass aggregation over the concatenated example lists."""
    if not reports:
        raise ValueError("merge_reports requires at least one report")
    size = max(r.confusion_matrix.shape[0] for r in reports)
    confusion = np.zeros((size, size), dtype=np.int64)
    singles: list[float] = []
    pair_imp: dict[int, list[float]] = {}
    example_imp: dict[int, list[float]] = {}
    inputs: dict[int, list[float]] = {}
    for r in reports:
        k = r.confusion_matrix.shape[0]
        confusion[:k, :k] += r.confusion_matrix
        singles.extend(r.single_source_values)
        for store, incoming in (
            (pair_imp, r.pair_improvements),
            (example_imp, r.example_improvements),
            (inputs, r.input_si_snr),
        ):
            for count, vals in incoming.items():
                store.setdefault(count, []).extend(vals)
    return EvalReport(
        confusion_matrix=confusion,
        single_source_values=tuple(singles),
        pair_improvements={k: tuple(v) for k, v in pair_imp.items()},
        example_improvements={k: tuple(v) for k, v in example_imp.items()},
        input_si_snr={k: tuple(v) for k, v in inputs.items()},
    )


def oracle_mask_separate(mixture, references, stft_config: StftConfig | None = None, mask: str = "ideal_ratio"):
    """Reference-informed mask separation, used as a realistic test estimator.

    Builds per-source masks from reference STFT magnitudes (ratio:
    |S_m| / sum_k |S_k|; binary: one-hot argmax), applies them to the
    mixture STFT, inverts, and projects with mixture consistency so the
    estimates sum exactly to the mixture.
    """
    if mask not in ("ideal_ratio", "ideal_binary"):
        raise ValueError(f"mask must be 'ideal_ratio' or 'ideal_binary', got {mask!r}")
    stft_config = stft_config or StftConfig()
    mix_spec = stft(mixture, stft_config)
    mags = np.stack([np.abs(stft(ref, stft_config).frames) for ref in references])
    if mask == "ideal_ratio":
        masks = mags / (mags.sum(axis=0, keepdims=True) + 1e-12)
    else:
        winner = np.argmax(mags, axis=0)
        masks = (winner[None, :, :] == np.arange(len(references))[:, None, None]).astype(np.float64)
    estimates = []
    for m in masks:
        masked = replace(mix_spec, frames=mix_spec.frames * m)
        estimates.append(istft(masked))
    return mixture_consistency(estimates, mixture)
