from .accounting import FlopsReport, LayerCount, ParamCount, count_flops, count_params
from .engine import (LEVELS, LayerSpec, NetworkSpec, NetworkWeights, apply_adapter, backward, check_weights,
                     forward_taps, init_weights)
from .io import WeightFileError, load_spec, load_weights, save_spec, save_weights
from .profiles import PROFILES, student_spec, teacher_spec
from .prune import PruneRecord, embedding_adapter, prune_init
