"""Stroke-by-stroke photo-to-sketch synthesis.

Four jointly trained subnets (photo/sketch encoders with a variational
bottleneck, sketch decoder with a bivariate-mixture head, photo decoder)
optimize paired translation losses plus within-domain reconstruction.
Everything runs on a small self-contained reverse-mode autodiff engine.
"""

from .autodiff import Tensor, backward, grad_check, no_grad
from .datasets import DatasetSplit, PhotoSketchPair, make_vector_raster_pair, \
    normalize_offsets
from .decoders import GmmParams, decode_photo, decode_sketch_teacher_forced, \
    gmm_nll, pen_ce, photo_l2_loss, rnn_loss
from .encoders import LatentCode, encode_photo, encode_sketch, kl_loss, \
    reparameterize
from .model import Model, ModelConfig, build_model
from .objective import LossWeights, TrainConfig, full_loss, \
    pretrain_then_finetune, shortcut_loss, supervised_loss, train_step
from .optim import AdamState, adam_step
from .raster import RasterImage, rasterize
from .strokes import Point5, StrokeSequence, pad_to_max, parse_quickdraw_line, \
    rdp_simplify
from .svg import export_svg
from .synthesis import sample_gmm, sample_sketch, sample_variations

__version__ = "0.1.0"
