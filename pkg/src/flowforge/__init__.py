"""Search synthetic optical-flow datasets with a self-supervised metric."""

from .core import bilinear_sample, warp_image
from .estimator import (EstimatorParams, FlowEstimator, VariationalEstimator, VariationalFamily,
                        ZeroFlowEstimator, ZeroFlowFamily, fit_estimator, variational_estimator,
                        zero_flow_estimator)
from .losses import (ErrorStats, LossBreakdown, LossWeights, SequenceLossConfig, aepe, census_transform,
                     distillation_loss, error_stats, fl_all, photometric_loss, score_estimator,
                     sequence_loss, smoothness_loss, total_metric)
from .render import RenderParams, render_pair, render_sequence, render_triplet

__version__ = "0.1.0"
