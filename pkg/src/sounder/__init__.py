"""Massive MIMO channel-sounding toolkit.

OFDM frame synthesis and CSI extraction, a synthetic position-tagged
channel generator, MRT / phase-only k-means user clustering, and
SIR / sum-rate evaluation sweeps.
"""

__version__ = "0.1.0"

from .ofdm import (
    OfdmConfig,
    Frame,
    CalibrationState,
    build_frame,
    apply_channel,
    estimate_cfo,
    correct_cfo,
    estimate_csi,
    denoise_truncate,
    calibrate,
    mean_snr,
    antenna_snr_db,
    detect_frames,
)
from .dataset import (
    GpsTag,
    CsiRecord,
    Dataset,
    CsidFormatError,
    write_dataset,
    read_dataset,
    gps_accuracy_cdf,
    antenna_subset,
    export_records_csv,
)
from .channel import (
    ArrayGeometry,
    SceneConfig,
    LinkBudget,
    SceneFileError,
    synth_record,
    synth_dataset,
    grid_positions,
    link_budget_snr,
    load_scene_file,
)
from .precoding import (
    Precoder,
    similarity,
    mrt_weights,
    po_weights,
    beam_power_map,
)
from .clustering import (
    ClusterModel,
    reduce_subcarriers,
    channel_views,
    init_indices,
    init_centers,
    assign,
    update_centers,
    kmeans,
    export_precoders,
    save_model,
    load_model,
)
from .evaluation import (
    SirReport,
    SweepResult,
    SweepRow,
    sir_user,
    sir_users,
    sir_cluster,
    sum_rate,
    evaluate_model,
    sweep,
    mean_snr_map,
)
