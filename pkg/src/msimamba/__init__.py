"""EEG emotion classification with a multi-scale spectral block and a diagonal SSM.

Subpackages and modules:

* ``autodiff``: numpy tensors with reverse-mode gradients
* ``signal_io``: trial ingestion, windowing and the ``.eegs`` format
* ``spectral``: FFT-based period plans
* ``mstb``: multi-scale 2-D convolution over period folds
* ``tsfb``: inverted embedding, SSM block and classifier head
* ``model``, ``training``: the full network, ``.msim`` checkpoints, training loop
"""

from .model import MSIMamba, ModelConfig, VARIANTS, read_checkpoint, write_checkpoint
from .signal_io import SegmentDataset, read_segments, write_segments
from .spectral import SpectralPlan, spectral_plan
from .training import TrainConfig, gen_synthetic, train_loop

__version__ = "0.1.0"

__all__ = [
    "MSIMamba", "ModelConfig", "VARIANTS", "read_checkpoint", "write_checkpoint",
    "SegmentDataset", "read_segments", "write_segments", "SpectralPlan", "spectral_plan",
    "TrainConfig", "gen_synthetic", "train_loop",
]
