"""Variable-source separation corpus builder, losses, and evaluation."""

from .audio import (
    AudioBuffer,
    MalformedWavError,
    Spectrogram,
    StftConfig,
    UnsupportedWavError,
    WavInfo,
    energy_db,
    fft_convolve,
    istft,
    probe_wav,
    read_wav,
    stft,
    write_wav,
)
from .losses import (
    LossConfig,
    PitLossResult,
    finite_difference_grad,
    loss_inactive,
    loss_inactive_grad,
    loss_snr,
    loss_snr_grad,
    mixture_consistency,
    pit_loss,
)
from .metrics import (
    DB_DISPLAY_CAP,
    DegenerateExampleError,
    EvalReport,
    ExampleEval,
    MetricConfig,
    SiSnrDiagnostics,
    aggregate_report,
    align_and_filter,
    evaluate_example,
    merge_reports,
    oracle_mask_separate,
    si_snr,
    si_snr_scaled,
    si_snr_stabilized,
)
from .pipeline import (
    MAX_SOURCE_SLOTS,
    PipelineConfig,
    build_example,
    evaluate_tree,
    generate_examples,
    generate_rirs,
    loss_check_tree,
)
from .rooms import (
    MATERIALS,
    OCTAVE_BANDS_HZ,
    Material,
    Rir,
    RoomRanges,
    RoomSamplingError,
    RoomSpec,
    SimConfig,
    T60Estimate,
    image_method_rir,
    measure_t60,
    render_reverberant,
    resolve_rir_length_s,
    sabine_t60,
    sample_room,
    save_room_rirs,
)
from .scenes import (
    SPLIT_NAMES,
    ClipLoader,
    CorpusClip,
    MixtureSpec,
    OverlapStats,
    RenderedExample,
    SceneConfig,
    SceneSamplingError,
    SourceEvent,
    SplitAssignment,
    index_corpus,
    load_corpus_manifest,
    overlap_stats,
    overlap_table,
    partition_by_uploader,
    render_example,
    rirs_for_spec,
    room_for_spec,
    sample_mixture_spec,
    write_corpus_manifest,
)
from .seeding import derive_seed, hash_to_unit, splitmix64

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "MalformedWavError",
    "Spectrogram",
    "StftConfig",
    "UnsupportedWavError",
    "WavInfo",
    "energy_db",
    "fft_convolve",
    "istft",
    "probe_wav",
    "read_wav",
    "stft",
    "write_wav",
    "LossConfig",
    "PitLossResult",
    "finite_difference_grad",
    "loss_inactive",
    "loss_inactive_grad",
    "loss_snr",
    "loss_snr_grad",
    "mixture_consistency",
    "pit_loss",
    "DB_DISPLAY_CAP",
    "DegenerateExampleError",
    "EvalReport",
    "ExampleEval",
    "MetricConfig",
    "SiSnrDiagnostics",
    "aggregate_report",
    "align_and_filter",
    "evaluate_example",
    "merge_reports",
    "oracle_mask_separate",
    "si_snr",
    "si_snr_scaled",
    "si_snr_stabilized",
    "MAX_SOURCE_SLOTS",
    "PipelineConfig",
    "build_example",
    "evaluate_tree",
    "generate_examples",
    "generate_rirs",
    "loss_check_tree",
    "MATERIALS",
    "OCTAVE_BANDS_HZ",
    "Material",
    "Rir",
    "RoomRanges",
    "RoomSamplingError",
    "RoomSpec",
    "SimConfig",
    "T60Estimate",
    "image_method_rir",
    "measure_t60",
    "render_reverberant",
    "resolve_rir_length_s",
    "sabine_t60",
    "sample_room",
    "save_room_rirs",
    "SPLIT_NAMES",
    "ClipLoader",
    "CorpusClip",
    "MixtureSpec",
    "OverlapStats",
    "RenderedExample",
    "SceneConfig",
    "SceneSamplingError",
    "SourceEvent",
    "SplitAssignment",
    "index_corpus",
    "load_corpus_manifest",
    "overlap_stats",
    "overlap_table",
    "partition_by_uploader",
    "render_example",
    "rirs_for_spec",
    "room_for_spec",
    "sample_mixture_spec",
    "write_corpus_manifest",
    "derive_seed",
    "hash_to_unit",
    "splitmix64",
    "__version__",
]
