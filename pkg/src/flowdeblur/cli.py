"""Command-line surface: synth / train / deblur / reblur / eval / gradcheck.

Exit codes: 0 success, 2 usage or bad input, 3 numerical failure.
FLOWDEBLUR_THREADS caps the math library's worker threads; it must take
effect before numpy loads, so heavyweight imports stay inside the
command handlers.
"""

import argparse
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _apply_thread_cap():
    cap = os.environ.get("FLOWDEBLUR_THREADS")
    if cap:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def cmd_synth(args):
    from .synth import build_dataset, verify_dataset
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    build_dataset(args.src, args.out, args.count, kinds, args.max_flow,
                  args.duty_cycle, args.seed)
    print(f"wrote {args.count} samples to {args.out}")
    if args.verify:
        worst = verify_dataset(args.out)
        bound = 1.0 / 255.0 + 1e-6
        print(f"closed-loop max abs diff: {worst!r} (bound {bound!r})")
        if worst > bound:
            return EXIT_NUMERIC
    return EXIT_OK


def cmd_train(args):
    from .model import ModelConfig
    from .train import TrainConfig, TrainingDiverged, TripleDataset, train
    model_cfg = ModelConfig(base_channels=args.base_channels,
                            n_flow_scales=args.scales,
                            rnn_mode=args.rnn_mode,
                            rnn_placement=args.rnn_placement)
    train_cfg = TrainConfig(batch_size=args.batch, patch=args.patch,
                            iters=args.iters, lr=args.lr, seed=args.seed)
    dataset = TripleDataset.from_dir(args.data)
    from .model import Model
    print(Model(model_cfg, seed=args.seed).summary())
    print(f"training on {len(dataset)} samples")
    try:
        result = train(dataset, model_cfg, train_cfg, out_dir=args.out)
    except TrainingDiverged as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"final checkpoint: {result.last_checkpoint}")
    return EXIT_OK


def cmd_deblur(args):
    import numpy as np
    from .model import deblur_pair, load_model
    from .tensor_io import load_image, save_flo, save_image
    model = load_model(args.model)
    b1 = load_image(args.frame1)
    b2 = load_image(args.frame2)
    if b1.shape != b2.shape:
        raise ValueError(f"frame sizes differ: {b1.shape} vs {b2.shape}")
    restored, flow_full = deblur_pair(model, b1, b2)
    save_image(np.clip(restored, 0.0, 1.0), args.out)
    print(f"wrote {args.out}")
    if args.save_flow:
        if flow_full is None:
            raise ValueError("model has no flow net (rnn_mode=none); "
                             "--save-flow unavailable")
        save_flo(flow_full, args.save_flow)
        print(f"wrote {args.save_flow}")
    return EXIT_OK


def cmd_reblur(args):
    import numpy as np
    from .blur import BlurConfig, reblur, reblur_oracle
    from .tensor_io import load_flo, load_image, save_image
    sharp = load_image(args.sharp)
    flow = load_flo(args.flow)
    cfg = BlurConfig(duty_cycle=args.duty_cycle)
    blurred = reblur(sharp, flow, cfg)
    save_image(blurred, args.out)
    print(f"wrote {args.out}")
    if args.oracle:
        reference = reblur_oracle(sharp, flow, cfg)
        diff = float(np.abs(blurred - reference).max())
        print(repr(diff))
    return EXIT_OK


def _image_list(path):
    if os.path.isdir(path):
        names = sorted(f for f in os.listdir(path) if f.endswith((".ppm", ".pgm")))
        return [(n, os.path.join(path, n)) for n in names]
    return [(os.path.basename(path), path)]


def cmd_eval(args):
    import numpy as np
    from .metrics import psnr, ssim
    from .tensor_io import load_image
    preds = _image_list(args.pred)
    gts = _image_list(args.gt)
    if len(preds) != len(gts):
        raise ValueError(f"count mismatch: {len(preds)} predictions vs "
                         f"{len(gts)} references")
    print("name,psnr,ssim")
    psnrs = []
    ssims = []
    for (name, ppath), (_, gpath) in zip(preds, gts):
        p = psnr(load_image(ppath), load_image(gpath))
        s = ssim(load_image(ppath), load_image(gpath))
        psnrs.append(p)
        ssims.append(s)
        print(f"{name},{p!r},{s!r}")
    print(f"mean,{float(np.mean(psnrs))!r},{float(np.mean(ssims))!r}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import run_check
    worst, tol = run_check(args.op, seed=args.seed)
    print(f"op={args.op} seed={args.seed} worst_rel_err={worst!r} tolerance={tol!r}")
    return EXIT_OK if worst <= tol else EXIT_NUMERIC


def build_parser():
    p = argparse.ArgumentParser(prog="flowdeblur",
                                description="flow-guided dynamic scene deblurring")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic blurred dataset")
    s.add_argument("--src", required=True, help="directory of sharp source PPMs")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--kinds", default="affine,smooth,objects",
                   help="comma list of flow kinds")
    s.add_argument("--max-flow", type=float, default=10.0)
    s.add_argument("--duty-cycle", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--verify", action="store_true",
                   help="run the closed-loop reblur check after writing")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train the two-subnet model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--base-channels", type=int, default=8,
                   help="network width (reference setup: 24)")
    t.add_argument("--patch", type=int, default=64,
                   help="training patch size (reference setup: 256)")
    t.add_argument("--batch", type=int, default=4,
                   help="batch size (reference setup: 20)")
    t.add_argument("--iters", type=int, default=2000)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--rnn-mode", choices=("rnn", "concat", "none"), default="rnn")
    t.add_argument("--rnn-placement", choices=("encoder", "decoder"),
                   default="encoder")
    t.add_argument("--scales", type=int, default=5)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("deblur", help="restore a sharp frame from a blurry pair")
    d.add_argument("--model", required=True)
    d.add_argument("--frame1", required=True)
    d.add_argument("--frame2", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--save-flow", default=None,
                   help="also write the full-resolution flow as .flo")
    d.set_defaults(func=cmd_deblur)

    r = sub.add_parser("reblur", help="synthesize blur from a flow field")
    r.add_argument("--sharp", required=True)
    r.add_argument("--flow", required=True)
    r.add_argument("--duty-cycle", type=float, default=1.0)
    r.add_argument("--out", required=True)
    r.add_argument("--oracle", action="store_true",
                   help="also run the trajectory oracle; prints max abs diff last")
    r.set_defaults(func=cmd_reblur)

    e = sub.add_parser("eval", help="PSNR/SSIM of predictions against references")
    e.add_argument("--pred", required=True, help="image file or directory")
    e.add_argument("--gt", required=True)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    g.add_argument("--op", choices=("conv", "deconv", "svrnn", "warp", "pipeline"),
                   required=True)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, NotADirectoryError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
