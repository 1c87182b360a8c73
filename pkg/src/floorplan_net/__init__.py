"""Floor-plan recognition with a boundary-guided multi-task network, in plain numpy."""
from .data import GenSpec, Palette, Sample, default_palette, generate_synthetic, make_corpus
from .network import ABLATIONS, ModelConfig, build_model, forward, predict
from .training import Checkpoint, TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
