"""Command-line entry point.

    aeat train-ae       --config cfg.toml --seed 1 --out runs/ae
    aeat train-dqn      --ae runs/ae/ae.ckpt --out runs/dqn
    aeat eval-ber       --ae runs/ae/ae.ckpt [--dqn runs/dqn/dqn.ckpt]
    aeat eval-image     --ae runs/ae/ae.ckpt --image in.ppm --snr 10
    aeat timing         --ae runs/ae/ae.ckpt [--dqn ...]
    aeat sample-channel --n 1000
    aeat verify-channel --config default

Every subcommand takes --config, --seed and --out (an output directory).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import channel as ch
from . import eval as ev
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import Config, ConfigError, parse_config
from .dqn import ActionSpace, train_dqn
from .model import ModelConfig
from .numerics import rng as rngmod
from .train import TrainingDiverged, calibrated_mean_h, train_ae
from .verify import verify_channel


def _header(config: Config, seed: int) -> str:
    return f"# config_hash={config.hash} seed={seed}"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_ae(path):
    ck = load_checkpoint(path, kind="ae")
    return ck.params, ModelConfig(**ck.model)


def _load_dqn(path, model_cfg: ModelConfig):
    ck = load_checkpoint(path, kind="dqn")
    space = ActionSpace(model_cfg.layers, int(ck.meta.get("l_min_per_stack", 1)))
    return ck.params, space


def _codec(args, config: Config):
    params, model_cfg = _load_ae(args.ae)
    Q = space = None
    if args.dqn:
        Q, space = _load_dqn(args.dqn, model_cfg)
    return ev.AECodec(params, model_cfg, Q, space, config.eval.deploy_threshold)


# ---------------------------------------------------------------------------


def cmd_train_ae(args, config: Config, out: Path) -> int:
    seed = config.train_ae.seed if args.seed is None else args.seed
    config = config.with_seed(seed)

    def progress(epoch, loss):
        print(f"epoch {epoch + 1}/{config.train_ae.epochs}  bce {loss:.5f}", file=sys.stderr)

    res = train_ae(config.model, config.train_ae, config.channel, on_epoch=progress)
    save_checkpoint(out / "ae.ckpt", res.params, "ae", config.model.to_dict(),
                    {"config_hash": config.hash, "seed": seed, "mean_h": res.mean_h})
    lines = [_header(config, seed), "epoch,step,bce,lr"]
    lines += [f"{e},{s},{b:.10g},{lr:.10g}" for e, s, b, lr in res.log_rows]
    (out / "train_log.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out / 'ae.ckpt'} (final bce {res.log_rows[-1][2]:.5f})")
    return 0


def cmd_train_dqn(args, config: Config, out: Path) -> int:
    seed = config.dqn.seed if args.seed is None else args.seed
    config = config.with_seed(seed)
    params, model_cfg = _load_ae(args.ae)
    mean_h = calibrated_mean_h(seed, config.channel)
    res = train_dqn(params, model_cfg, config.dqn, mean_h, config.channel)
    save_checkpoint(out / "dqn.ckpt", res.Q, "dqn", model_cfg.to_dict(),
                    {"config_hash": config.hash, "seed": seed, "l_min_per_stack": config.dqn.l_min_per_stack,
                     "n_actions": len(res.actions)})
    lines = [_header(config, seed), "episode,epsilon,reward,avg_layers,loss"]
    lines += [f"{e},{eps:.10g},{r:.10g},{L:g},{loss:.10g}" for e, eps, r, L, loss in res.log_rows]
    (out / "dqn_log.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out / 'dqn.ckpt'}")
    return 0


def cmd_eval_ber(args, config: Config, out: Path) -> int:
    seed = 0 if args.seed is None else args.seed
    codec = _codec(args, config)
    grid = tuple(args.snr) if args.snr else config.eval.snr_grid
    n_bits = args.n_bits or config.eval.n_bits
    workers = args.workers or config.eval.workers
    mean_h = calibrated_mean_h(seed, config.channel)
    rep = ev.ber_curve(codec, grid, n_bits, seed, mean_h, config.channel, workers=workers)
    rep.metadata.update({"config_hash": config.hash, "ae": str(args.ae), "dqn": str(args.dqn) if args.dqn else None,
                         "ook_theoretical_ber": [float(ev.ook_theoretical_ber(s)) for s in grid]})
    (out / "ber.csv").write_text(rep.to_csv())
    _write_json(out / "ber.json", rep.to_json_dict())
    if args.baselines:
        lines = [_header(config, seed), "snr_db,ook_theory,ook_fading,hamming74_fading"]
        ook = ev.baseline_curve("ook", grid, n_bits, seed, mean_h, config.channel)
        ham = ev.baseline_curve("hamming74", grid, n_bits, seed, mean_h, config.channel)
        for s, o, h in zip(grid, ook.records, ham.records):
            lines.append(f"{s:g},{float(ev.ook_theoretical_ber(s)):.10g},{o.ber:.10g},{h.ber:.10g}")
        (out / "baselines.csv").write_text("\n".join(lines) + "\n")
    sys.stdout.write(rep.to_csv())
    return 0


def _test_image(seed: int, rows: int = 24, cols: int = 32) -> np.ndarray:
    # smooth gradients plus a little texture
    y, x = np.mgrid[0:rows, 0:cols]
    g = rngmod.stream(seed, rngmod.IMAGE - 1)
    img = np.stack([255 * x / (cols - 1), 255 * y / (rows - 1), 128 + 60 * np.sin(x / 3.0)], axis=-1)
    img = img + g.normal(0, 8, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def cmd_eval_image(args, config: Config, out: Path) -> int:
    seed = 0 if args.seed is None else args.seed
    codec = _codec(args, config)
    image = ev.read_ppm(args.image) if args.image else _test_image(seed)
    snr = config.eval.image_snr_db if args.snr is None else args.snr
    mean_h = calibrated_mean_h(seed, config.channel)
    job = ev.image_pipeline(image, codec, snr, seed, mean_h, config.channel)
    ev.write_ppm(out / "received.ppm", job.reconstructed)
    _write_json(out / "image.json", {
        "config_hash": config.hash, "seed": seed, "snr_db": snr, "shape": list(image.shape),
        "payload_bits": int(image.size * 8), "padded_bits": int(job.padded_bits.size), "bit_errors": job.bit_errors,
        "psnr_db": "inf" if math.isinf(job.psnr_db) else job.psnr_db,
    })
    print(f"PSNR {job.psnr_db:.3f} dB, {job.bit_errors} bit errors")
    return 0


def cmd_timing(args, config: Config, out: Path) -> int:
    seed = 0 if args.seed is None else args.seed
    codec = _codec(args, config)
    n_bits = args.n_bits or config.eval.timing_bits
    mean_h = calibrated_mean_h(seed, config.channel)
    rep = ev.timing(codec, n_bits, seed, mean_h, consts=config.channel, repeats=args.repeats)
    rep.update({"config_hash": config.hash, "seed": seed})
    _write_json(out / "timing.json", rep)
    print(json.dumps(rep, sort_keys=True))
    return 0


def cmd_sample_channel(args, config: Config, out: Path) -> int:
    seed = 0 if args.seed is None else args.seed
    g = rngmod.stream(seed, rngmod.VERIFY + 100)
    envs = ch.sample_envs(g, args.n)
    d = ch.sample_channel(g, envs, config.channel)
    lines = [_header(config, seed), "Z,V_d,Cn2,sigma_s,sigma_a,h_l,h_a,h_p,h_aoa,h"]
    cols = np.column_stack([envs.as_array(), d.h_l, d.h_a, d.h_p, d.h_aoa, d.h])
    lines += [",".join(f"{v:.10g}" for v in row) for row in cols]
    (out / "channel.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {args.n} draws to {out / 'channel.csv'}")
    return 0


def cmd_verify_channel(args, config: Config, out: Path) -> int:
    seed = 0 if args.seed is None else args.seed
    rep = verify_channel(config.channel, seed)
    rep["config_hash"] = config.hash
    _write_json(out / "verify.json", rep)
    print(json.dumps(rep, indent=2, sort_keys=True))
    return 0 if rep["all_passed"] else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aeat", description="Environment-aware transformer autoencoder for UAV-FSO links")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default="default", help="TOML config file or 'default'")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="out", help="output directory")
        return sp

    common(sub.add_parser("train-ae", help="full-depth autoencoder training"))

    sp = common(sub.add_parser("train-dqn", help="train the layer-selection Q-network"))
    sp.add_argument("--ae", required=True, help="autoencoder checkpoint")

    sp = common(sub.add_parser("eval-ber", help="BER vs SNR by Monte Carlo"))
    sp.add_argument("--ae", required=True)
    sp.add_argument("--dqn", default=None)
    sp.add_argument("--n-bits", type=int, default=None)
    sp.add_argument("--snr", type=float, nargs="+", default=None)
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--baselines", action="store_true", help="also write OOK / Hamming(7,4) curves")

    sp = common(sub.add_parser("eval-image", help="send a PPM image through the link"))
    sp.add_argument("--ae", required=True)
    sp.add_argument("--dqn", default=None)
    sp.add_argument("--image", default=None, help="binary PPM (P6); a synthetic image if omitted")
    sp.add_argument("--snr", type=float, default=None)

    sp = common(sub.add_parser("timing", help="inference wall time"))
    sp.add_argument("--ae", required=True)
    sp.add_argument("--dqn", default=None)
    sp.add_argument("--n-bits", type=int, default=None)
    sp.add_argument("--repeats", type=int, default=3)

    sp = common(sub.add_parser("sample-channel", help="dump composite fading draws"))
    sp.add_argument("--n", type=int, default=1000)

    common(sub.add_parser("verify-channel", help="statistical checks of the channel model"))
    return p


COMMANDS = {
    "train-ae": cmd_train_ae,
    "train-dqn": cmd_train_dqn,
    "eval-ber": cmd_eval_ber,
    "eval-image": cmd_eval_image,
    "timing": cmd_timing,
    "sample-channel": cmd_sample_channel,
    "verify-channel": cmd_verify_channel,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = parse_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, config, out)
    except (ConfigError, CheckpointError, TrainingDiverged, ValueError, OSError) as exc:
        print(f"aeat {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
