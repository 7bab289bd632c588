from ..imaging import iou
from .ope import THRESHOLDS, EvalReport, SequenceResult, auc, run_ope, success_curve
from .report import ModelReport, report_model
from .runners import FkcfFactory, synth_benchmark
