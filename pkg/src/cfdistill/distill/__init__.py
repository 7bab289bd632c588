from .losses import CFLayerResult, LossBreakdown, cf_layer, fidelity_loss, multilevel_tracking_loss
from .pairs import CropConfig, TrainingPair, sample_pair, sample_pairs
from .synth import SUITE_KINDS, SynthConfig, benchmark_suite, synth_sequences
from .train import (NonFiniteGradient, Teacher, TrainingConfig, TrainResult, Windows, evaluate, init_student,
                    level_sigma, offline_loss, pair_labels, sgd_step, shifted_gaussian, train_offline,
                    write_history)
