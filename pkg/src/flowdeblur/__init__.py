"""Flow-guided dynamic scene deblurring with spatially variant RNNs."""

from .blur import BlurConfig, BlurKernel, line_kernel, reblur, reblur_oracle
from .metrics import psnr, ssim
from .model import (Model, ModelConfig, build_deblur_net, build_flow_net,
                    deblur_pair, load_model, save_model, total_loss)
from .svrnn import svrnn_backward, svrnn_forward
from .synth import Sample, augment, build_dataset, gen_flow_field, make_sample
from .tensor_io import (avg_downsample2x, bilinear_resize, load_flo, load_image,
                        save_flo, save_image)
from .train import TrainConfig, TripleDataset, evaluate, train
from .warp import bilinear_warp, photometric_loss, warp_backward

__version__ = "0.1.0"

__all__ = [
    "BlurConfig", "BlurKernel", "line_kernel", "reblur", "reblur_oracle",
    "psnr", "ssim",
    "Model", "ModelConfig", "build_deblur_net", "build_flow_net",
    "deblur_pair", "load_model", "save_model", "total_loss",
    "svrnn_backward", "svrnn_forward",
    "Sample", "augment", "build_dataset", "gen_flow_field", "make_sample",
    "avg_downsample2x", "bilinear_resize", "load_flo", "load_image",
    "save_flo", "save_image",
    "TrainConfig", "TripleDataset", "evaluate", "train",
    "bilinear_warp", "photometric_loss", "warp_backward",
]
