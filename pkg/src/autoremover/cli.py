"""Command-line front end.

Exit codes: 0 on success, 2 on usage or data errors, 1 on internal errors.
Every command writes only below ``--out``.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import dataset as ds
from .errors import AutoRemoverError
from .geometry import CameraModel, flow_from_depth, read_flow, write_flow
from .maskgen import DEFAULT_JITTER_PX, generate_temporal_masks

logger = logging.getLogger("autoremover")


class UsageError(Exception):
    pass


def _require_seq(root, seq_id):
    if not os.path.isdir(os.path.join(root, seq_id, "image")):
        raise UsageError(f"no sequence {seq_id!r} under {root}")
    ids = ds.list_frame_ids(root, seq_id)
    if not ids:
        raise UsageError(f"sequence {seq_id!r} has no frames")
    return ids


def _window(args, ids):
    center = args.center if args.center is not None else ids[len(ids) // 2]
    delta = args.delta if args.delta is not None else min(center - ids[0], ids[-1] - center)
    return center, delta


def _load_window(args):
    ids = _require_seq(args.data, args.seq)
    center, delta = _window(args, ids)
    seq = ds.load_sequence(args.data, args.seq, center, delta)
    if seq.poses is None:
        raise UsageError(f"{args.seq}: depth maps, poses.txt and intrinsics.txt are required")
    return seq


def cmd_flow(args):
    if args.consecutive:
        ids = _require_seq(args.data, args.seq)
        st = ds.load_frames(args.data, args.seq, ids)
        if st.poses is None:
            raise UsageError(f"{args.seq}: depth maps, poses.txt and intrinsics.txt are required")
        for t in range(1, len(ids)):
            cam = CameraModel(st.intrinsics, st.poses[t], st.depths[t])
            path = os.path.join(args.out, args.seq, "flow", f"{ids[t]}_{ids[t - 1]}.bin")
            write_flow(path, flow_from_depth(cam, st.poses[t - 1]))
            print(path)
        return
    seq = _load_window(args)
    m = seq.target_index
    for i, flow in zip(seq.reference_indices(), seq.flows):
        path = os.path.join(args.out, args.seq, "flow", f"{seq.frame_ids[m]}_{seq.frame_ids[i]}.bin")
        write_flow(path, flow)
        print(path)


def cmd_gen_masks(args):
    seq = _load_window(args)
    m = seq.target_index
    flows = [flow_from_depth(seq.camera(i), seq.poses[m]) for i in seq.reference_indices()]
    rng = np.random.default_rng(args.seed)
    masks = generate_temporal_masks(seq.masks[m], flows, rng, args.jitter)
    masks.insert(m, seq.masks[m])
    for fid, mask in zip(seq.frame_ids, masks):
        path = os.path.join(args.out, args.seq, "hole", f"{fid:06d}.png")
        ds.write_mask(path, mask)
        print(path)


def _train_config(args):
    from .trainer import TrainConfig, load_config
    overrides = {"max_iters": args.max_iters, "seed": args.seed}
    if args.config is None:
        values = {k: v for k, v in overrides.items() if v is not None}
        return TrainConfig(**values)
    try:
        return load_config(args.config, **overrides)
    except (ValueError, TypeError) as e:
        raise UsageError(f"malformed config: {e}") from None


def cmd_train_shadow(args):
    from .trainer import save_config, shadow_items_from_root, train_shadow
    config = _train_config(args)
    items = shadow_items_from_root(args.data)
    os.makedirs(args.out, exist_ok=True)
    save_config(os.path.join(args.out, "config.txt"), config)
    result = train_shadow(config, items, out_dir=args.out)
    for p in result.checkpoints:
        print(p)


def cmd_train_inpaint(args):
    from .trainer import save_config, train_inpainting, training_samples_from_root
    config = _train_config(args)
    samples = training_samples_from_root(args.data, config)
    os.makedirs(args.out, exist_ok=True)
    save_config(os.path.join(args.out, "config.txt"), config)
    result = train_inpainting(config, samples, out_dir=args.out, resume_from=args.resume)
    for p in result.checkpoints:
        print(p)


def cmd_infer(args):
    from .inpaint_net import load_inpaint
    from .pipeline import FlowProvider, remove_objects
    from .shadow_net import load_shadow

    ids = _require_seq(args.data, args.seq)
    if not args.no_shadow and not args.checkpoint_shadow:
        raise UsageError("--checkpoint-shadow is required unless --no-shadow is given")
    generator, _, _ = load_inpaint(args.checkpoint_inpaint)
    shadow_model = None if args.no_shadow else load_shadow(args.checkpoint_shadow)
    seq = ds.load_frames(args.data, args.seq, ids)
    if seq.poses is None:
        raise UsageError(f"{args.seq}: depth maps, poses.txt and intrinsics.txt are required")
    provider = FlowProvider(seq.intrinsics, seq.poses, seq.depths, seq.frame_ids, args.seq)
    outputs, holes = remove_objects(seq.frames, seq.masks, provider, generator, shadow_model, args.threshold)
    for fid, img, hole in zip(seq.frame_ids, outputs, holes):
        ds.write_image(os.path.join(args.out, args.seq, "image", f"{fid:06d}.png"), img)
        ds.write_mask(os.path.join(args.out, args.seq, "hole", f"{fid:06d}.png"), hole)
    print(os.path.join(args.out, args.seq))


def _png_ids(directory):
    if not os.path.isdir(directory):
        raise UsageError(f"not a directory: {directory}")
    ids = []
    for name in os.listdir(directory):
        stem, ext = os.path.splitext(name)
        if ext == ".png" and stem.isdigit():
            ids.append(int(stem))
    return sorted(ids)


def _png(directory, fid):
    for name in (f"{fid:06d}.png", f"{fid}.png"):
        p = os.path.join(directory, name)
        if os.path.exists(p):
            return p
    raise UsageError(f"missing frame {fid} in {directory}")


def cmd_evaluate(args):
    from .metrics import evaluate

    ids = _png_ids(args.pred)
    if not ids:
        raise UsageError(f"no frames in {args.pred}")
    # float64 keeps the 8-bit values exact through the metric's rescaling
    preds = [ds.read_image(_png(args.pred, i), np.float64) for i in ids]
    gts = [ds.read_image(_png(args.gt, i), np.float64) for i in ids]
    holes = [ds.read_mask(_png(args.holes, i)) for i in ids]
    flows = None
    if args.twe:
        if not args.flows:
            raise UsageError("--twe needs --flows")
        flows = []
        for a, b in zip(ids[1:], ids[:-1]):
            p = os.path.join(args.flows, f"{a}_{b}.bin")
            if not os.path.exists(p):
                raise UsageError(f"missing flow file {p}")
            flows.append(read_flow(p))
    report = evaluate(preds, gts, holes, flows)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.jsonl"), "w") as f:
        f.write(report.to_records())
    table = report.summary_table()
    with open(os.path.join(args.out, "summary.txt"), "w") as f:
        f.write(table + "\n")
    if args.emit_frames:
        for fid, p, g, h in zip(ids, preds, gts, holes):
            ds.write_image(os.path.join(args.out, "frames", f"{fid:06d}.png"), p)
            diff = np.abs(p - g).mean(-1) * (h == 0)
            heat = np.clip(diff * 4.0, 0, 1)
            vis = np.stack([heat, np.zeros_like(heat), 1 - heat], -1) * 2 - 1
            ds.write_image(os.path.join(args.out, "frames", f"{fid:06d}_diff.png"), vis)
    print(table)


def build_parser():
    parser = argparse.ArgumentParser(prog="autoremover", description="Shadow-aware video object removal.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def window_args(p):
        p.add_argument("--data", required=True)
        p.add_argument("--seq", required=True)
        p.add_argument("--center", type=int)
        p.add_argument("--delta", type=int)

    p = sub.add_parser("flow", help="compute target-to-reference flows from depth and poses")
    window_args(p)
    p.add_argument("--consecutive", action="store_true",
                   help="write frame t -> t-1 flows for every t instead (input to evaluate --twe)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("gen-masks", help="propagate the centre frame's mask to the window")
    window_args(p)
    p.add_argument("--jitter", type=float, default=DEFAULT_JITTER_PX)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_masks)

    for name, func in (("train-shadow", cmd_train_shadow), ("train-inpaint", cmd_train_inpaint)):
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--max-iters", type=int)
        p.add_argument("--seed", type=int)
        if name == "train-inpaint":
            p.add_argument("--resume")
        p.set_defaults(func=func)

    p = sub.add_parser("infer", help="remove masked objects (and their shadows) from a sequence")
    p.add_argument("--checkpoint-shadow")
    p.add_argument("--checkpoint-inpaint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-shadow", action="store_true")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="hole-region metrics")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--holes", required=True)
    p.add_argument("--flows")
    p.add_argument("--twe", action="store_true")
    p.add_argument("--emit-frames", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (UsageError, AutoRemoverError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # internal failure
        logger.exception("internal error")
        print(f"internal error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
