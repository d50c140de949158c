"""End-to-end checks pinning the public contract of every subsystem.

Run ``python3 -m pytest tests/test_acceptance.py -v`` to see one pass/fail
line per guarantee. Reference values are computed inline with plain
numpy/math expressions, independent of the library code under test.
"""

import hashlib
import itertools
import math
import os
import time
from collections import Counter
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from varisep.audio import AudioBuffer
from varisep.losses import (
    LossConfig,
    finite_difference_grad,
    loss_inactive,
    loss_inactive_grad,
    loss_snr,
    loss_snr_grad,
    mixture_consistency,
    pit_loss,
)
from varisep.metrics import (
    aggregate_report,
    evaluate_example,
    oracle_mask_separate,
    si_snr_scaled,
    si_snr_stabilized,
)
from varisep.pipeline import PipelineConfig, generate_examples
from varisep.rooms import Material, SimConfig, image_method_rir, measure_t60, sample_room
from varisep.scenes import (
    ClipLoader,
    index_corpus,
    overlap_stats,
    overlap_table,
    partition_by_uploader,
    render_example,
    sample_mixture_spec,
)
from varisep.seeding import derive_seed

from conftest import FS


def _orthogonal_to(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    noise = rng.normal(size=y.size)
    noise -= (np.dot(noise, y) / np.dot(y, y)) * y
    return noise


def test_01_unit_energy_losses_hit_the_snr_ceiling():
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    for n in (64, 1000, 16000):
        for _ in range(8):
            y = rng.normal(size=n)
            y /= np.linalg.norm(y)
            assert loss_snr(y, y, tau=1e-3) == pytest.approx(-30.0, abs=1e-9)
            x = rng.normal(size=n)
            x /= np.linalg.norm(x)
            assert loss_inactive(x, np.zeros(n), tau=1e-3) == pytest.approx(-30.0, abs=1e-9)
    assert time.perf_counter() - start < 1.0


def test_02_permutation_search_matches_exhaustive_recount():
    start = time.perf_counter()
    rng = np.random.default_rng(22)
    config = LossConfig()
    tau = config.tau
    n = 400
    seen_counts = set()
    for trial in range(200):
        n_active = trial % 4 + 1
        seen_counts.add(n_active)
        refs = [rng.normal(size=n) for _ in range(n_active)]
        mixture = np.sum(refs, axis=0) + 0.01 * rng.normal(size=n)
        scales = rng.choice([1.0, 1.0, 1e-2, 1e-3], size=4)
        ests = [scales[m] * rng.normal(size=n) for m in range(4)]
        if trial % 3 == 0:
            # hand one output a head start toward one reference
            ests[int(rng.integers(4))] = refs[int(rng.integers(n_active))] + 0.1 * rng.normal(size=n)
        result = pit_loss(refs, ests, mixture, config)

        best_total = math.inf
        best_order = None
        for order in itertools.permutations(range(4)):
            total = 0.0
            for slot, est in enumerate(order):
                y_hat = ests[est]
                if slot < n_active:
                    y = refs[slot]
                    err = y - y_hat
                    term = 10.0 * math.log10(
                        float(np.dot(err, err)) + tau * float(np.dot(y, y))
                    )
                else:
                    term = 10.0 * math.log10(
                        float(np.dot(y_hat, y_hat)) + tau * float(np.dot(mixture, mixture))
                    )
                total += term
            if total < best_total:
                best_total = total
                best_order = order
        assignment = [0] * 4
        for slot, est in enumerate(best_order):
            assignment[est] = slot
        assert result.total_loss == best_total
        assert result.best_permutation == tuple(assignment)
    assert seen_counts == {1, 2, 3, 4}
    assert time.perf_counter() - start < 30.0


def test_03_analytic_gradients_match_finite_differences():
    rng = np.random.default_rng(33)
    tau = 1e-3
    for trial in range(100):
        y = rng.normal(size=24)
        y_hat = rng.normal(size=24) * float(rng.choice([1.0, 0.1, 1e-3]))
        if trial % 2 == 0:
            analytic = loss_snr_grad(y, y_hat, tau)
            numeric = finite_difference_grad(lambda p: loss_snr(y, p, tau), y_hat)
        else:
            analytic = loss_inactive_grad(y, y_hat, tau)
            numeric = finite_difference_grad(lambda p: loss_inactive(y, p, tau), y_hat)
        rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic)
        assert rel < 1e-4


def test_04_mixture_consistency_sum_and_idempotence():
    rng = np.random.default_rng(44)
    for trial in range(1000):
        m = trial % 6 + 1
        n = 128 + trial % 64
        x = rng.normal(size=n)
        sources = [rng.normal(size=n) for _ in range(m)]
        once = mixture_consistency(sources, x)
        assert np.max(np.abs(np.sum(once, axis=0) - x)) < 1e-6
        twice = mixture_consistency(once, x)
        drift = max(np.max(np.abs(a - b)) for a, b in zip(once, twice))
        assert drift < 1e-9


def test_05_formulations_agree_midrange_and_diverge_near_silence():
    rng = np.random.default_rng(55)
    tight = 1e-12
    for snr_db in (-35.0, -20.0, -5.0, 0.0, 10.0, 35.0):
        y = rng.normal(size=8000)
        noise = _orthogonal_to(y, rng)
        noise *= np.linalg.norm(y) / np.linalg.norm(noise) * 10 ** (-snr_db / 20)
        est = y + noise
        a = si_snr_scaled(y, est, epsilon=tight).value_db
        b = si_snr_stabilized(y, est, epsilon=tight).value_db
        assert abs(a) < 40 and abs(b) < 40
        assert abs(a - b) < 1e-4

    # vanishing estimates: the scale-projection form drifts toward 0 dB
    # while the cosine form stays pinned at its floor, so the gap between
    # them grows as the estimate shrinks
    y = rng.normal(size=16000)
    direction = _orthogonal_to(y, rng)
    direction /= np.linalg.norm(direction)
    gaps = []
    for delta in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6):
        est = delta * direction
        gap = si_snr_scaled(y, est).value_db - si_snr_stabilized(y, est).value_db
        gaps.append(gap)
    assert all(g > 0 for g in gaps)
    assert all(later > earlier for earlier, later in zip(gaps, gaps[1:]))


def test_06_stabilized_score_saturates_at_plus_minus_80():
    rng = np.random.default_rng(66)
    eps = 1e-8
    cap = 10 * math.log10((1 + eps) / eps)
    y = rng.normal(size=160000)
    self_score = si_snr_stabilized(y, y, epsilon=eps).value_db
    assert self_score == pytest.approx(cap, abs=0.01)
    assert self_score == pytest.approx(80.0, abs=0.01)
    orthogonal = _orthogonal_to(y, rng)
    floor_score = si_snr_stabilized(y, orthogonal, epsilon=eps).value_db
    assert floor_score == pytest.approx(-cap, abs=0.01)
    assert floor_score == pytest.approx(-80.0, abs=0.01)


def test_07_room_simulation_physical_invariants():
    start = time.perf_counter()
    short = SimConfig(rir_length_s=0.1)
    for k in range(100):
        room = sample_room(derive_seed(7001, "direct", k), n_sources=1)
        h = image_method_rir(room, 0, short).samples.samples
        d = float(
            np.linalg.norm(np.array(room.source_positions[0]) - np.array(room.mic_position))
        )
        expected_sample = d / short.c * short.sample_rate
        # the direct path is the earliest arrival, so search a prefix: late
        # reflection clusters may exceed it in amplitude but never precede it
        end = int(round(expected_sample)) + short.sinc_half_width + 2
        prefix = np.abs(h[:end])
        peak = int(np.argmax(prefix))
        assert abs(peak - expected_sample) <= short.sinc_half_width + 1
        assert prefix[peak] >= 0.4 / (4.0 * math.pi * d)

    # fully absorbing walls leave only the direct arrival
    room = sample_room(derive_seed(7001, "absorb", 0), n_sources=1)
    dead = replace(room, wall_materials=(Material("void", (0.0,) * 7),) * 6)
    h = image_method_rir(dead, 0, short).samples.samples
    peak = int(np.argmax(np.abs(h)))
    w = short.sinc_half_width + 1
    inside = float(np.sum(h[max(0, peak - w): peak + w + 1] ** 2))
    total = float(np.sum(h**2))
    assert total - inside <= 1e-12 * total

    # higher wall reflectivity never shortens the decay
    t60_cfg = SimConfig(rir_length_s=0.3)
    wins = 0
    for k in range(100):
        room = sample_room(derive_seed(7001, "decay", k), n_sources=1)
        lo = measure_t60(image_method_rir(replace(room, reflectivity_gain=0.5), 0, t60_cfg))
        hi = measure_t60(image_method_rir(replace(room, reflectivity_gain=0.95), 0, t60_cfg))
        assert not lo.censored
        if hi.seconds > lo.seconds:
            wins += 1
    assert wins == 100
    assert time.perf_counter() - start < 120.0


def test_08_scene_sampling_counts_labels_and_split_hygiene(corpus_clips, split_pools):
    loader = ClipLoader(sample_rate=FS)
    uploader_of = {c.id: c.uploader for c in corpus_clips}
    count_tally = Counter()
    uploaders_used = {}
    total = 0
    for split, n_draws in (("train", 6000), ("validation", 2000), ("eval", 2000)):
        pool = split_pools[split]
        pool_uploaders = {c.uploader for c in pool}
        used = set()
        for i in range(n_draws):
            spec = sample_mixture_spec(derive_seed(8001, split, i), split, pool, loader=loader)
            count_tally[spec.n_sources] += 1
            labels = [e.class_label for e in spec.events]
            assert len(set(labels)) == len(labels), "class label repeated within a mixture"
            for event in spec.events:
                uploader = uploader_of[event.clip_id]
                assert uploader in pool_uploaders
                used.add(uploader)
            total += 1
        uploaders_used[split] = used
    assert total == 10000
    for count in (1, 2, 3, 4):
        assert abs(count_tally[count] / total - 0.25) <= 0.02, count_tally
    names = list(uploaders_used)
    for a, b in itertools.combinations(names, 2):
        assert not (uploaders_used[a] & uploaders_used[b]), (a, b)


def test_09_overlap_rows_are_percentages_and_full_overlap_is_counted(split_pools):
    loader = ClipLoader(sample_rate=FS)
    pool = split_pools["train"]
    entries = []
    for i in range(30):
        spec = sample_mixture_spec(derive_seed(9001, "overlap", i), "train", pool, loader=loader)
        rendered = render_example(spec, pool, loader=loader)
        entries.append((spec.n_sources, overlap_stats(rendered.sources)))
    table = overlap_table(entries)
    assert table
    for row in table.values():
        assert sum(row) == pytest.approx(100.0, abs=0.01)

    ones = AudioBuffer(np.ones(FS * 2), FS)
    pair = overlap_stats([ones, ones])
    assert pair.percentages[2] == pytest.approx(100.0, abs=1e-9)


@pytest.mark.skipif(
    "VARISEP_SOURCE_CORPUS" not in os.environ,
    reason="set VARISEP_SOURCE_CORPUS to a real indexed clip corpus to enable",
)
def test_09_single_source_activity_share_on_real_corpus():
    root = Path(os.environ["VARISEP_SOURCE_CORPUS"])
    clips = index_corpus(root)
    loader = ClipLoader(sample_rate=FS)
    pools = partition_by_uploader(clips, rng_seed=0, targets=(0.7, 0.15, 0.15)).partition(clips)
    pool = pools["train"]
    entries = []
    for i in range(400):
        spec = sample_mixture_spec(derive_seed(9002, "activity", i), "train", pool, loader=loader)
        rendered = render_example(spec, pool, loader=loader)
        entries.append((spec.n_sources, overlap_stats(rendered.sources)))
    row = overlap_table(entries)[1]
    assert row[0] == pytest.approx(19.0, abs=3.0)
    assert row[1] == pytest.approx(81.0, abs=3.0)


def test_10_oracle_masking_beats_passthrough_on_synthetic_corpus(split_pools):
    loader = ClipLoader(sample_rate=FS)
    pool = split_pools["train"]
    irm_evals = []
    passthrough_evals = []
    perfect_evals = []
    for i in range(200):
        spec = sample_mixture_spec(derive_seed(1010, "sanity", i), "train", pool, loader=loader)
        rendered = render_example(spec, pool, loader=loader)
        refs = rendered.sources
        mixture = rendered.mixture
        masked = oracle_mask_separate(mixture, refs)
        irm_evals.append(evaluate_example(refs, masked, mixture))
        passthrough_evals.append(evaluate_example(refs, [mixture] * len(refs), mixture))
        perfect_evals.append(evaluate_example(refs, refs, mixture))

    irm_msi = aggregate_report(irm_evals).msi_by_count()
    pass_msi = aggregate_report(passthrough_evals).msi_by_count()
    assert set(irm_msi) == set(pass_msi)
    for bucket in irm_msi:
        if math.isnan(irm_msi[bucket]):
            continue
        assert irm_msi[bucket] > 0.0, bucket
        assert abs(pass_msi[bucket]) <= 0.1, bucket
        assert irm_msi[bucket] > pass_msi[bucket], bucket

    perfect = aggregate_report(perfect_evals)
    under, equal, over = perfect.counting_rates
    assert equal == pytest.approx(1.0)
    matrix = perfect.confusion_matrix
    assert matrix.sum() - np.trace(matrix) == 0


def test_11_worker_count_never_changes_output_bytes(split_pools, tmp_path):
    pool = split_pools["train"]
    digests = {}
    for workers, name in ((1, "serial"), (4, "pooled")):
        config = PipelineConfig(
            master_seed=1101,
            examples_per_split={"train": 100, "validation": 1, "eval": 1},
            workers=workers,
        )
        out_root = tmp_path / name
        generate_examples(config, "train", pool, mode="dry", output_root=out_root)
        tree = {}
        for path in sorted(out_root.rglob("*")):
            if path.is_file():
                rel = str(path.relative_to(out_root))
                tree[rel] = hashlib.sha256(path.read_bytes()).hexdigest()
        digests[name] = tree
    n_specs = sum(1 for rel in digests["serial"] if rel.endswith("spec.json"))
    assert n_specs == 100
    assert digests["serial"] == digests["pooled"]
