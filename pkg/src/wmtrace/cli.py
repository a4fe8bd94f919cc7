"""Command-line interface.

Machine-readable JSON goes to stdout; diagnostics go to stderr. Exit codes:
0 success, 1 operational error, 2 usage error, 3 ``detect`` ran but did not
flag the image. Every JSON output carries a ``config`` entry that can be
replayed with ``wmtrace --config FILE``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import bitstats, tracing
from .codecs import (
    CodecKey,
    adversarial_forge,
    adversarial_remove,
    embed,
    embed_ss_additive,
    embed_ss_iterative,
    extract,
    extract_ss,
    fit_key_whitening,
    keygen,
)
from .imaging import (
    ROBUSTNESS_SET,
    TransformSpec,
    apply_transform,
    psnr,
    read_image,
    seed_corpus,
    ssim,
    write_image,
)
from .whitening import iid_diagnostics

IMAGE_SUFFIXES = {".png", ".ppm", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


class UsageError(Exception):
    """Bad combination of flags that argparse cannot express."""


# ---------------------------------------------------------------- key files
# A key file holds the codec secret and, optionally, the user's signature.

def write_key_file(path, key: CodecKey, message=None) -> None:
    d = {"key": key.to_dict()}
    if message is not None:
        d["message"] = bitstats.bits_to_string(message)
    Path(path).write_text(json.dumps(d, indent=2))


def read_key_file(path) -> tuple[CodecKey, np.ndarray | None]:
    d = json.loads(Path(path).read_text())
    if "key" not in d:  # bare CodecKey JSON
        return CodecKey.from_dict(d), None
    msg = d.get("message")
    return CodecKey.from_dict(d["key"]), (bitstats.bits_from_string(msg) if msg else None)


def _message(args, key: CodecKey, stored, flag: str = "message") -> np.ndarray:
    text = getattr(args, flag, None)
    if text is not None:
        return bitstats.as_bits(bitstats.bits_from_string(text), key.k)
    if stored is None:
        raise UsageError(f"no --{flag} given and the key file stores no signature")
    return stored


def _load_corpus(args) -> list[np.ndarray]:
    if args.corpus:
        root = Path(args.corpus)
        files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise ValueError(f"no images found in {root}")
        return [read_image(p) for p in files]
    if args.synthetic:
        return seed_corpus(args.synthetic, size=args.size, offset=args.corpus_offset)
    raise UsageError("give --corpus DIR or --synthetic N")


def _add_corpus(p):
    g = p.add_argument_group("corpus")
    g.add_argument("--corpus", help="directory of images")
    g.add_argument("--synthetic", type=int, help="use N procedural images instead")
    g.add_argument("--size", type=int, default=512, help="side of procedural images")
    g.add_argument("--corpus-offset", type=int, default=0, help="first procedural image index")


# ---------------------------------------------------------------- commands

def cmd_keygen(args):
    params = {}
    if args.alpha is not None:
        params["alpha"] = args.alpha
    if args.delta is not None:
        params["delta"] = args.delta
    key = keygen(args.kind, args.k, args.seed, **params)
    message = None if args.no_message else tracing.random_message(key.k, args.seed)
    write_key_file(args.out, key, message)
    out = {"key": str(args.out), "codec": key.codec_kind, "k": key.k}
    if message is not None:
        out["message"] = bitstats.bits_to_string(message)
    return out


def cmd_whiten_fit(args):
    key, message = read_key_file(args.key)
    if key.codec_kind != "spreadspectrum":
        raise ValueError("whitening applies to spreadspectrum keys only")
    corpus = _load_corpus(args)
    fitted = fit_key_whitening(key, corpus, args.eigen_floor)
    write_key_file(args.out, fitted, message)
    bits = np.array([extract(x, fitted) for x in corpus])
    return {"key": str(args.out), "n_images": len(corpus), "iid": iid_diagnostics(bits).to_dict()}


def cmd_embed(args):
    key, stored = read_key_file(args.key)
    m = _message(args, key, stored)
    x = read_image(args.image)
    if args.method == "additive":
        if key.codec_kind != "spreadspectrum":
            raise UsageError("--method additive needs a spreadspectrum key")
        xw = embed_ss_additive(x, key, m)
    elif key.codec_kind == "spreadspectrum":
        xw = embed_ss_iterative(x, key, m, lambda_i=args.lambda_i, steps=args.steps)
    else:
        xw = embed(x, key, m)
    write_image(args.out, xw)
    return {"out": str(args.out), "psnr": psnr(x, read_image(args.out)),
            "message": bitstats.bits_to_string(m)}


def cmd_extract(args):
    key, _ = read_key_file(args.key)
    x = read_image(args.image)
    out = {}
    if key.codec_kind == "spreadspectrum":
        soft, bits = extract_ss(x, key)
        out["soft"] = [round(float(v), 6) for v in soft]
    else:
        bits = extract(x, key)
    out["bits"] = bitstats.bits_to_string(bits)
    return out


def cmd_detect(args):
    key, stored = read_key_file(args.key)
    m = _message(args, key, stored)
    tau = bitstats.threshold_for_fpr(key.k, args.fpr, args.n_users)
    v = bitstats.detect(m, extract(read_image(args.image), key), tau)
    return {"flagged": v.flagged, "score": v.score, "tau": v.threshold, "p_value": v.p_value,
            "k": key.k, "fpr": args.fpr}


def cmd_identify(args):
    key, _ = read_key_file(args.key)
    raw = json.loads(Path(args.users).read_text())
    users = raw["users"] if isinstance(raw, dict) else raw
    keys = np.array([bitstats.as_bits(bitstats.bits_from_string(u), key.k) for u in users])
    tau = bitstats.threshold_for_fpr(key.k, args.fpr, len(keys))
    v = bitstats.identify(extract(read_image(args.image), key), keys, tau)
    return {"flagged": v.flagged, "user": v.best_index, "score": v.best_score, "tau": v.threshold,
            "n_users": len(keys), "fpr": args.fpr}


def cmd_channel(args):
    x = read_image(args.image)
    t = TransformSpec.parse(args.transform)
    y = apply_transform(x, t, args.seed)
    write_image(args.out, y)
    return {"out": str(args.out), "transform": str(t), "shape": list(y.shape)}


def cmd_bench_robustness(args):
    key, _ = read_key_file(args.key)
    corpus = _load_corpus(args)
    ts = [TransformSpec.parse(s) for s in args.transforms] if args.transforms else list(ROBUSTNESS_SET)
    return tracing.robustness_table(key, corpus, ts, args.n_keys, args.seed, jobs=args.jobs)


def cmd_sim_identify(args):
    channel = tracing.ChannelModel.bsc(args.p, seed=args.seed)
    return tracing.run_identification_experiment(
        args.n_users, args.n_decoys, args.images_per_user, channel, args.fpr, args.k, args.seed)


def cmd_sim_detect(args):
    if args.p is not None:
        channel = tracing.ChannelModel.bsc(args.p, seed=args.seed)
        return tracing.run_detection_experiment(
            keygen("dctdwt", args.k, args.seed), None, channel, args.fpr, args.seed, n_trials=args.trials)
    if not args.key:
        raise UsageError("image-mode sim-detect needs --key (or use --p for a bsc channel)")
    key, _ = read_key_file(args.key)
    channel = tracing.ChannelModel.image(args.transform, seed=args.seed)
    return tracing.run_detection_experiment(key, _load_corpus(args), channel, args.fpr, args.seed, jobs=args.jobs)


def cmd_sim_collusion(args):
    rng = np.random.default_rng([args.seed, 0])
    ki, kj = rng.integers(0, 2, (2, args.k), dtype=np.uint8)
    return tracing.run_collusion_experiment(ki, kj, args.p, args.bits, args.seed, args.images_per_trial)


def cmd_validate_fpr(args):
    key = corpus = None
    if args.source == "extractor":
        if not args.key:
            raise UsageError("--source extractor needs --key and a corpus")
        key, _ = read_key_file(args.key)
        corpus = _load_corpus(args)
        if key.k != args.k:
            raise UsageError(f"--k {args.k} does not match the key's k={key.k}")
    return tracing.validate_fpr_empirical(args.k, args.tau, args.trials, args.source, args.seed, key, corpus)


def _attack_out(res, args):
    write_image(args.out, res.image)
    return {"out": str(args.out), "psnr": res.psnr, "noop": res.noop,
            "target": bitstats.bits_to_string(res.target)}


def cmd_attack_remove(args):
    key, _ = read_key_file(args.key)
    return _attack_out(adversarial_remove(read_image(args.image), key, args.floor, args.seed), args)


def cmd_attack_forge(args):
    key, stored = read_key_file(args.key)
    if args.victim_key:
        _, victim = read_key_file(args.victim_key)
        if victim is None:
            raise UsageError("victim key file stores no signature")
    else:
        victim = _message(args, key, stored, "victim")
    return _attack_out(adversarial_forge(read_image(args.image), key, victim, args.floor), args)


def cmd_metric(args):
    a, b = read_image(args.a), read_image(args.b)
    return (psnr if args.name == "psnr" else ssim)(a, b)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wmtrace", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="replay the config entry of a previous JSON output")
    parser.add_argument("--format", choices=("json", "table"), default="json")
    parser.add_argument("--report", help="also write the JSON output to this file")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    # Output flags are also accepted after the subcommand.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("json", "table"), default=argparse.SUPPRESS)
    common.add_argument("--report", default=argparse.SUPPRESS)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, parents=[common])
        p.set_defaults(func=fn)
        return p

    p = add("keygen", cmd_keygen, "create a codec key with a random signature")
    p.add_argument("--kind", choices=("dctdwt", "spreadspectrum"), default="spreadspectrum")
    p.add_argument("--k", type=int, default=48)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--no-message", action="store_true", help="store no signature")
    p.add_argument("--out", required=True)

    p = add("whiten-fit", cmd_whiten_fit, "fit whitening on unwatermarked images")
    p.add_argument("--key", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eigen-floor", type=float)
    _add_corpus(p)

    p = add("embed", cmd_embed, "watermark an image")
    p.add_argument("--key", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--message", help="bit string; defaults to the key's signature")
    p.add_argument("--method", choices=("iterative", "additive"), default="iterative")
    p.add_argument("--lambda", dest="lambda_i", type=float, default=0.4)
    p.add_argument("--steps", type=int, default=10)

    p = add("extract", cmd_extract, "decode the message of an image")
    p.add_argument("--key", required=True)
    p.add_argument("--image", required=True)

    p = add("detect", cmd_detect, "test an image for a signature (exit 3 if not flagged)")
    p.add_argument("--key", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--message")
    p.add_argument("--fpr", type=float, default=1e-6)
    p.add_argument("--n-users", type=int, default=1)

    p = add("identify", cmd_identify, "attribute an image to one of many signatures")
    p.add_argument("--key", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--users", required=True, help="JSON list of bit strings")
    p.add_argument("--fpr", type=float, default=1e-6)

    p = add("channel", cmd_channel, "apply an image edit")
    p.add_argument("--image", required=True)
    p.add_argument("--transform", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = add("bench-robustness", cmd_bench_robustness, "bit accuracy per edit over a corpus")
    p.add_argument("--key", required=True)
    p.add_argument("--transforms", nargs="+")
    p.add_argument("--n-keys", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--csv", help="write the TPR/FPR curve to this CSV file")
    _add_corpus(p)

    p = add("sim-detect", cmd_sim_detect, "detection TPR at theoretical FPR targets")
    p.add_argument("--key")
    p.add_argument("--p", type=float, help="simulate a bsc channel with this bit accuracy")
    p.add_argument("--k", type=int, default=48)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--transform", default="identity")
    p.add_argument("--fpr", type=float, nargs="+", default=[1e-6])
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--csv", help="write the TPR/FPR curve to this CSV file")
    _add_corpus(p)

    p = add("sim-identify", cmd_sim_identify, "N-user identification over a bsc channel")
    p.add_argument("--n-users", type=int, default=100)
    p.add_argument("--n-decoys", type=int, default=0)
    p.add_argument("--images-per-user", type=int, default=100)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--fpr", type=float, default=1e-6)
    p.add_argument("--k", type=int, default=48)
    p.add_argument("--seed", type=int, required=True)

    p = add("sim-collusion", cmd_sim_collusion, "two-user collusion under the marking assumption")
    p.add_argument("--k", type=int, default=48)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--bits", type=int, default=48_000)
    p.add_argument("--images-per-trial", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)

    p = add("validate-fpr", cmd_validate_fpr, "empirical vs theoretical FPR")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--tau", type=int, nargs="+", required=True)
    p.add_argument("--trials", type=int, default=1_000_000)
    p.add_argument("--source", choices=("synthetic", "extractor"), default="synthetic")
    p.add_argument("--key")
    p.add_argument("--seed", type=int, required=True)
    _add_corpus(p)

    for name, fn, help_ in (("attack-remove", cmd_attack_remove, "white-box watermark removal"),
                            ("attack-forge", cmd_attack_forge, "white-box signature forgery")):
        p = add(name, fn, help_)
        p.add_argument("--key", required=True)
        p.add_argument("--image", required=True)
        p.add_argument("--floor", type=float, required=True, help="PSNR floor in dB")
        p.add_argument("--out", required=True)
        if name == "attack-remove":
            p.add_argument("--seed", type=int, required=True)
        else:
            p.add_argument("--victim", help="victim bit string")
            p.add_argument("--victim-key", help="key file holding the victim's signature")

    p = add("metric", cmd_metric, "image quality between two images")
    p.add_argument("name", choices=("psnr", "ssim"))
    p.add_argument("a")
    p.add_argument("b")
    return parser


def _config(argv: list[str]) -> dict:
    return {"argv": list(argv)}


def _emit(result, args, argv) -> None:
    if isinstance(result, float):
        if math.isinf(result):
            text = "+inf" if result > 0 else "-inf"
        else:
            text = repr(result)
        print(text)
        if args.report:
            Path(args.report).write_text(json.dumps({"value": text, "config": _config(argv)}, indent=2))
        return
    if isinstance(result, tracing.ExperimentReport):
        csv_path = getattr(args, "csv", None)
        if csv_path:
            Path(csv_path).write_text(result.to_csv())
        payload = result.to_dict()
        table = result.to_table()
    else:
        payload = dict(result)
        table = "\n".join(f"{k}  {v}" for k, v in payload.items()) + "\n"
    payload["config"] = _config(argv)
    text = json.dumps(payload, indent=2, default=tracing._jsonable)
    if args.report:
        Path(args.report).write_text(text + "\n")
    sys.stdout.write(table if args.format == "table" else text + "\n")


def dispatch(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            replay = json.loads(Path(args.config).read_text())
            argv = replay.get("config", replay)["argv"]
            args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 2
    except SystemExit as e:
        return int(e.code or 0)
    except (OSError, ValueError, KeyError) as e:
        print(f"wmtrace: error: cannot replay config: {e}", file=sys.stderr)
        return 1

    try:
        result = args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"wmtrace {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ArithmeticError) as e:
        print(f"wmtrace {args.command}: error: {e}", file=sys.stderr)
        return 1
    _emit(result, args, argv)
    if args.command == "detect" and not result["flagged"]:
        return 3
    return 0


def main() -> None:
    sys.exit(dispatch())
