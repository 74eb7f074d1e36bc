"""Feature-space alignment toolkit for cross-resolution embeddings."""

__version__ = "0.1.0"

from .embeddings import (  # noqa: F401
    EmbeddingRecord,
    EmbeddingSet,
    Resolution,
    half_split_identities,
    load_set,
    save_set,
)
from .errors import DataError, FormatError, VpfaError  # noqa: F401
from .synthgen import SynthConfig, generate, planted_direction  # noqa: F401
from .trainer import PrototypePair, TrainConfig, TrainLog, train  # noqa: F401
from .vpnet import NetConfig, VPParams, init_params, load_params, save_params  # noqa: F401
