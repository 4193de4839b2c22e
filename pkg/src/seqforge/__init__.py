"""Pulse-sequence forward models, parameter estimation from image
intensities, and sequence-matched training patch synthesis for brain MRI."""
from . import _backend
from .errors import SeqforgeError
from .estimation import EstimationReport, estimate_from_volume, estimate_theta
from .fusion import dice_overlap, fuse_probability_patches
from .patches import (
    FeatureSample,
    PatchDataset,
    PatchSpec,
    ThetaSamplingSpec,
    augment_patches,
    extract_patches,
    sample_theta_space,
)
from .dataset_io import export_dataset, import_dataset
from .phantom import PhantomSpec, Structure, acquire_phantom, generate_phantom, three_shell_spec
from .sequences import (
    AcquisitionParams,
    FitReport,
    NMRTriple,
    PulseParams,
    SequenceKind,
    fit_theta_to_exact,
    flash_exact,
    log_signal_approx,
    synth_signal,
    synth_volume,
)
from .tissue import ClassStats, GmmConfig, TissueNMRMeans, fit_gmm3, foreground_mask, load_tissue_means
from .volume import CoordVolume, LabelVolume, NMRVolumeSet, Volume3, load_nmr_set, read_volume, write_volume

__version__ = "0.1.0"
BACKEND = _backend.NAME
