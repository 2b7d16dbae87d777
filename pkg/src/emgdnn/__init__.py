"""EMG classification: wavelet features, MSPCA denoising and a small dense network."""
from .errors import EmgError
from .features import extract_features, feature_matrix, windows_to_dataset
from .mspca import MspcaConfig, mspca_denoise, pca_denoise, pca_fit
from .neuralnet import Network, adam_step, init_network, load_model, loss, save_model
from .pipeline import (
    ConfusionMatrix,
    PipelineConfig,
    SplitSpec,
    TrainConfig,
    evaluate,
    run_pipeline,
    split,
    standardize_apply,
    standardize_fit,
    train,
)
from .signal_core import (
    ClassLabel,
    Dataset,
    Signal,
    Window,
    load_signal,
    save_signal,
    segment,
    synth_generate,
)
from .wavelet import WaveletDecomposition, dwt_multilevel, idwt_multilevel, make_filter

__version__ = "0.1.0"
