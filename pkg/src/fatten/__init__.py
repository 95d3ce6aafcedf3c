"""Feature-space transfer of object features across pose, in pure numpy."""

from .binning import PoseBinning
from .checkpoint import load_checkpoint, save_checkpoint
from .datafile import import_csv, read_dataset, write_dataset
from .errors import FattenError, NumericsError, ValidationError
from .manifold import ManifoldParams, build_manifold, sample_dataset
from .model import FattenModel
from .training import TrainConfig, pretrain_category_head, pretrain_pose_predictor, train_fatten

__version__ = "0.1.0"
