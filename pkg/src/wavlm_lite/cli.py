"""Command line entry point: ``wavlm-lite <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


log = logging.getLogger("wavlm_lite")


class UsageError(Exception):
    pass


def _parse_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split("..")
        lo, hi = int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must look like -1200..1200, got {text!r}")
    if lo > hi:
        raise argparse.ArgumentTypeError("range start exceeds end")
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wavlm-lite", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-mix", help="mix a directory of equal-length utterances")
    p.add_argument("--in-dir", required=True)
    p.add_argument("--noise-dir")
    p.add_argument("--p", type=float, default=0.2)
    p.add_argument("--pn", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--events-json")

    p = sub.add_parser("pseudo-label", help="fit an MFCC k-means codebook and label every utterance")
    p.add_argument("--in-dir", required=True)
    p.add_argument("--C", type=int, default=32)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory for labels.txt and codebook.json")

    p = sub.add_parser("inspect-buckets", help="print the offset -> bucket table")
    p.add_argument("--n", type=int, default=320)
    p.add_argument("--m", type=int, default=800)
    p.add_argument("--range", type=_parse_range, default=(-1200, 1200), dest="offsets")
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")

    p = sub.add_parser("gradcheck", help="finite-difference check of the micro model")
    p.add_argument("--preset", default="micro", choices=["micro"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-param", type=int, default=24)

    p = sub.add_parser("pretrain-toy", help="run the micro pre-training loop")
    p.add_argument("--config", help="JSON TrainConfig; omitted keys take defaults")
    p.add_argument("--out-dir", default="runs/toy")
    p.add_argument("--dump-config", action="store_true", help="print the effective config and exit")

    p = sub.add_parser("verify", help="run the acceptance checks")
    p.add_argument("--all", action="store_true", required=True)
    return ap


def _fix_negative_range(argv: list[str]) -> list[str]:
    # "--range -1200..1200" would otherwise be taken for an option
    out = list(argv)
    for i, a in enumerate(out[:-1]):
        if a == "--range" and out[i + 1].startswith("-"):
            out[i:i + 2] = [f"--range={out[i + 1]}"]
            break
    return out


def cmd_simulate_mix(args) -> int:
    from .audio import read_wav_dir, write_wav
    from .mixer import MixConfig, events_to_json, simulate_batch

    names, waves = read_wav_dir(args.in_dir)
    if not waves:
        raise UsageError(f"no .wav files in {args.in_dir}")
    noises = read_wav_dir(args.noise_dir)[1] if args.noise_dir else []
    cfg = MixConfig(p=args.p, p_n=args.pn, seed=args.seed)
    mixed, events = simulate_batch(waves, noises, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clamped = sum(write_wav(out / name, row) for name, row in zip(names, mixed))
    if args.events_json:
        Path(args.events_json).write_text(events_to_json(events))
    print(f"mixed {len(events)}/{len(waves)} utterances; {clamped} samples clamped on export")
    return 0


def cmd_pseudo_label(args) -> int:
    from .audio import read_wav_dir
    from .encoder import EncoderConfig
    from .labeler import fit_mfcc_codebook, label_waveforms, save_codebook, write_labels

    names, waves = read_wav_dir(args.in_dir)
    if not waves:
        raise UsageError(f"no .wav files in {args.in_dir}")
    cb = fit_mfcc_codebook(waves, C=args.C, iters=args.iters, seed=args.seed)
    labels = label_waveforms(cb, waves, EncoderConfig().frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_labels(out / "labels.txt", labels)
    (out / "utterances.txt").write_text("".join(n + "\n" for n in names))
    save_codebook(cb, out / "codebook.json")
    print(f"labelled {len(waves)} utterances with C={args.C} (inertia {cb.inertia:.1f})")
    return 0


def cmd_inspect_buckets(args) -> int:
    from .transformer import BucketConfig, bucket_index

    try:
        BucketConfig(args.n, args.m)
    except ValueError as e:
        raise UsageError(str(e)) from e
    lo, hi = args.offsets
    lines = ["offset,bucket"] + [f"{o},{bucket_index(o, args.n, args.m)}" for o in range(lo, hi + 1)]
    text = "\n".join(lines) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    rep = run_gradcheck(seed=args.seed, per_param=args.per_param)
    for name, err in rep.errors.items():
        print(f"{'ok  ' if err < rep.tolerance else 'FAIL'} {err:.2e} {name} ({rep.checked[name]} entries)")
    name, err = rep.worst
    print(f"worst relative error {err:.2e} in {name}; tolerance {rep.tolerance:g}")
    return 0 if rep.ok else 1


def _load_train_config(path):
    from .train import TrainConfig

    if not path:
        return TrainConfig()
    try:
        return TrainConfig.from_json(path)
    except (json.JSONDecodeError, TypeError, ValueError, OSError) as e:
        raise UsageError(f"bad config {path}: {e}") from e


def cmd_pretrain_toy(args) -> int:
    from .train import smoothed, train

    cfg = _load_train_config(args.config)
    if args.dump_config:
        print(json.dumps(cfg.to_dict(), indent=2))
        return 0
    res = train(cfg, out_dir=args.out_dir)
    s = smoothed(res.losses, cfg.smooth)
    print(f"{cfg.steps} steps: loss {res.losses[0]:.3f} -> {res.losses[-1]:.3f} "
          f"(smoothed {s[-1]:.3f}); outputs in {args.out_dir}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(print)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


COMMANDS = {
    "simulate-mix": cmd_simulate_mix,
    "pseudo-label": cmd_pseudo_label,
    "inspect-buckets": cmd_inspect_buckets,
    "gradcheck": cmd_gradcheck,
    "pretrain-toy": cmd_pretrain_toy,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    argv = _fix_negative_range(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"wavlm-lite: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - report any runtime failure as exit 1
        log.debug("failure", exc_info=True)
        print(f"wavlm-lite: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
