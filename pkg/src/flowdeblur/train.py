"""Training loop: minibatches, augmentation, Adam, checkpoints, CSV log."""

import os
from dataclasses import dataclass

import numpy as np

from . import synth
from .layers import adam_step
from .metrics import psnr
from .model import Model, deblur_pair, save_model, total_loss
from .tensor_io import downsample_pyramid

LOG_NAME = "train_log.csv"
FINAL_NAME = "model_final.fdbl"


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration, last_checkpoint):
        super().__init__(f"non-finite loss at iteration {iteration}; "
                         f"last good checkpoint: {last_checkpoint or 'none'}")
        self.iteration = iteration
        self.last_checkpoint = last_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4      # reference setup uses 20
    patch: int = 64          # reference setup uses 256
    iters: int = 2000
    lr: float = 1e-3         # constant schedule
    seed: int = 0
    lambda_img: float = 1.0
    lambda_flow: tuple = None  # None -> 1/S per scale
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 500
    augment: bool = True

    def __post_init__(self):
        for field in ("batch_size", "patch", "iters", "lr"):
            if getattr(self, field) <= 0:
                raise ValueError(f"{field} must be positive")


class TripleDataset:
    """In-memory list of (b1, b2, gt, flow) samples."""

    def __init__(self, samples):
        if not samples:
            raise ValueError("empty dataset")
        self.samples = samples

    @classmethod
    def from_dir(cls, data_dir):
        rows = synth.read_manifest(data_dir)
        return cls([synth.load_sample(data_dir, row) for row in rows])

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


@dataclass
class TrainResult:
    model: Model
    history: list          # (iter, flow_loss, img_loss)
    log_path: str
    last_checkpoint: str


def _batch(dataset, cfg, rng):
    idx = rng.integers(0, len(dataset), size=cfg.batch_size)
    parts = []
    for i in idx:
        s = dataset[int(i)]
        if cfg.augment:
            s = synth.augment(s, rng, patch=cfg.patch)
        parts.append(s)
    b1 = np.concatenate([s.b1 for s in parts])
    b2 = np.concatenate([s.b2 for s in parts])
    gt = np.concatenate([s.gt for s in parts])
    return b1, b2, gt


def train(dataset, model_cfg, train_cfg, out_dir=None):
    """Run the full schedule; returns the trained model and loss history.

    Writes `train_log.csv` (rows: iter,flow_loss,img_loss), periodic
    `ckpt_NNNNNN.fdbl` checkpoints and `model_final.fdbl` when out_dir
    is given. Raises TrainingDiverged on a non-finite loss, leaving the
    last good checkpoint in place.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    model = Model(model_cfg, seed=train_cfg.seed)
    rng = np.random.default_rng((train_cfg.seed, 1))
    s_count = model_cfg.n_flow_scales
    lambda_flow = train_cfg.lambda_flow
    if lambda_flow is None:
        lambda_flow = [1.0 / s_count] * s_count

    log_file = None
    log_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, LOG_NAME)
        log_file = open(log_path, "w")
    history = []
    last_checkpoint = None
    try:
        for it in range(1, train_cfg.iters + 1):
            b1, b2, gt = _batch(dataset, train_cfg, rng)
            res = model.forward(b1, b2)
            if model.flow_net is not None:
                pyr1 = downsample_pyramid(b1, 6)
                pyr2 = downsample_pyramid(b2, 6)
                b1s = [pyr1[5 - s] for s in range(s_count)]
                b2s = [pyr2[5 - s] for s in range(s_count)]
            else:
                b1s, b2s = [], []
            total, flow_term, img_term, gih, gfl = total_loss(
                res.deblurred, gt, b1s, b2s, res.flows,
                lambda_img=train_cfg.lambda_img,
                lambda_flow=lambda_flow if res.flows else [])
            if not np.isfinite(total):
                raise TrainingDiverged(it, last_checkpoint)
            model.backward(res, gih, gfl)
            for _, node, attr in model.parameters():
                grad = node.grad_w if attr == "weight" else node.grad_b
                state = node.opt_w if attr == "weight" else node.opt_b
                adam_step(getattr(node, attr), grad, state, lr=train_cfg.lr,
                          beta1=train_cfg.beta1, beta2=train_cfg.beta2,
                          eps=train_cfg.eps, weight_decay=train_cfg.weight_decay)
            history.append((it, flow_term, img_term))
            if log_file is not None:
                log_file.write(f"{it},{flow_term!r},{img_term!r}\n")
            if out_dir is not None and (it % train_cfg.checkpoint_every == 0
                                        or it == train_cfg.iters):
                if log_file is not None:
                    log_file.flush()
                path = os.path.join(out_dir, f"ckpt_{it:06d}.fdbl")
                save_model(model, path)
                last_checkpoint = path
        if out_dir is not None:
            final = os.path.join(out_dir, FINAL_NAME)
            save_model(model, final)
            last_checkpoint = final
    finally:
        if log_file is not None:
            log_file.close()
    return TrainResult(model=model, history=history, log_path=log_path,
                       last_checkpoint=last_checkpoint)


def evaluate(model, dataset, chunk=8):
    """Mean PSNR of restored output and of the blurry input, against gt."""
    restored_scores = []
    blurry_scores = []
    for start in range(0, len(dataset), chunk):
        group = [dataset[i] for i in range(start, min(start + chunk, len(dataset)))]
        b1 = np.concatenate([s.b1 for s in group])
        b2 = np.concatenate([s.b2 for s in group])
        out, _ = deblur_pair(model, b1, b2)
        out = np.clip(out, 0.0, 1.0)
        for j, s in enumerate(group):
            restored_scores.append(psnr(out[j:j + 1], s.gt))
            blurry_scores.append(psnr(s.b1, s.gt))
    return {"psnr_restored": float(np.mean(restored_scores)),
            "psnr_blurry": float(np.mean(blurry_scores)),
            "restored": restored_scores, "blurry": blurry_scores}
