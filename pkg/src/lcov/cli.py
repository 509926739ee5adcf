"""Command-line front end.

Every subcommand prints one summary line of ``key=value`` pairs on stdout
and logs its effective configuration on stderr. Values come from, in
increasing precedence: built-in defaults, ``--config FILE`` (``key=value``
lines, keys named like the long flags), and explicit flags.

Exit codes: 0 success, 2 bad flags or config, 3 I/O or format errors,
4 numeric divergence, 5 invalid input values.
"""

import argparse
import logging
import os
import sys

import numpy as np
import scipy.fft as sfft

from . import __version__
from .analysis import best_pair_median, correlation_histogram, pair_correlation, run_control_suite
from .covmap import (
    count_measurements,
    eig_power,
    eig_threshold_adaptive,
    eig_threshold_fixed,
    extract,
    participation_ratio,
    restrict_to_variances,
)
from .errors import DivergenceError, InvalidInputError
from .filterbank import BLUR_MODES, FilterBank, apply, oriented_pair, random_bank
from .io import (
    PREPROCESSING,
    FormatError,
    load_bank,
    load_covmap,
    load_image,
    read_config,
    save_bank,
    save_covmap,
    write_image,
)
from .linalg import eig_sym_batch
from .signal import gaussian_window
from .synthesis import METHODS, SynthConfig, noise_baseline, synthesize
from .trainer import TrainConfig, config_dict, train

log = logging.getLogger("lcov")

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4
EXIT_INVALID = 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".10g")
    return str(value)


def summary(**pairs):
    """One stable ``key=value`` line, keys in call order."""
    line = " ".join(f"{k}={_fmt(v)}" for k, v in pairs.items())
    print(line, flush=True)
    return line


# -- shared helpers -----------------------------------------------------------------


def _write_array_image(path, img):
    """``.npy`` keeps exact values; anything else is 16-bit PGM plus sidecar."""
    if str(path).endswith(".npy"):
        np.save(path, img)
    else:
        write_image(path, img)


def _bank_from_args(args):
    if args.bank == "oriented":
        return oriented_pair()
    if args.bank.startswith("random:"):
        try:
            _, n, k = args.bank.split(":")
            return random_bank(int(n), int(k), seed=args.seed)
        except ValueError as exc:
            raise UsageError(f"bad random bank spec {args.bank!r}; use random:N:K") from exc
    return load_bank(args.bank)


def _add_common(p):
    p.add_argument("--config", help="key=value file; flags override its values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--deterministic",
        action="store_true",
        help="pin FFTs to one worker and zero log timestamps so repeated runs are bit-identical",
    )
    p.add_argument(
        "--threads",
        type=int,
        default=None,
        help="FFT worker threads (default: $LCOV_THREADS or 1)",
    )
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _add_image_opts(p):
    p.add_argument("--preprocessing", default="none", choices=PREPROCESSING)


# -- subcommands ----------------------------------------------------------------


def _add_analyze(sub):
    p = sub.add_parser("analyze", help="local correlation statistics of a filter pair")
    p.add_argument("image")
    p.add_argument("--bank", default="oriented", help="bank file, 'oriented' or random:N:K")
    p.add_argument("--window-size", type=int, default=16)
    p.add_argument("--window-sigma", type=float, default=3.0)
    p.add_argument("--stride", type=int, default=8)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--subtract-mean", action="store_true")
    p.add_argument("--controls", action="store_true", help="also run the noise and phase controls")
    p.add_argument("--csv-prefix", help="write histogram CSVs with this path prefix")
    _add_image_opts(p)
    p.set_defaults(func=cmd_analyze)


def cmd_analyze(args):
    img = load_image(args.image, args.preprocessing)
    bank = _bank_from_args(args)
    window = gaussian_window(args.window_size, args.window_sigma)
    if bank.num_filters != 2:
        best = best_pair_median(img, bank, window, args.stride)
        return summary(command="analyze", filters=bank.num_filters, best_pair_median=best)
    if args.controls:
        suite = run_control_suite(img, bank, args.seed, window, args.stride, args.bins)
        if args.csv_prefix:
            suite.image.to_csv(args.csv_prefix + "image.csv")
            suite.noise_image.to_csv(args.csv_prefix + "noise.csv")
            suite.randomized_filters.to_csv(args.csv_prefix + "randomized.csv")
        return summary(
            command="analyze",
            windows=suite.image.total,
            excluded=suite.image.excluded,
            median=suite.image.median,
            noise_median=suite.noise_image.median,
            randomized_median=suite.randomized_filters.median,
        )
    m = pair_correlation(img, bank, window, args.stride, args.subtract_mean)
    hist = correlation_histogram(m, args.bins)
    if args.csv_prefix:
        hist.to_csv(args.csv_prefix + "image.csv")
    return summary(command="analyze", windows=hist.total, excluded=hist.excluded, median=hist.median)


def _add_train(sub):
    p = sub.add_parser("train", help="learn a filter bank by SGD")
    p.add_argument("images", nargs="+")
    p.add_argument("--out", required=True, help="output bank file")
    p.add_argument("--init", help="initial bank file (default: seeded Gaussian taps)")
    p.add_argument("--filters", type=int, default=4)
    p.add_argument("--kernel-size", type=int, default=20)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--patch-stride", type=int, default=None)
    p.add_argument("--window-sigma", type=float, default=3.0)
    p.add_argument("--blur-sigma", type=float, default=3.0)
    p.add_argument("--blur-mode", default="spatial", choices=BLUR_MODES)
    p.add_argument("--lambda", dest="lam", type=float, default=3500.0)
    p.add_argument("--mu", type=float, default=100.0)
    p.add_argument("--learning-rate", type=float, default=None, help="default: automatic probe")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--crop-size", type=int, default=48)
    p.add_argument("--init-scale", type=float, default=None)
    p.add_argument("--no-gradient-scaling", action="store_true")
    p.add_argument("--spectrum-samples", type=int, default=200)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--checkpoint-dir")
    p.add_argument("--log-csv", help="per-step energy log")
    _add_image_opts(p)
    p.set_defaults(func=cmd_train)


def cmd_train(args):
    images = [load_image(path, args.preprocessing) for path in args.images]
    config = TrainConfig(
        num_filters=args.filters,
        kernel_size=args.kernel_size,
        patch_size=args.patch_size,
        patch_stride=args.patch_stride,
        window_sigma=args.window_sigma,
        blur_sigma=args.blur_sigma,
        blur_mode=args.blur_mode,
        lam=args.lam,
        mu=args.mu,
        learning_rate=args.learning_rate,
        num_steps=args.steps,
        crop_size=args.crop_size,
        seed=args.seed,
        gradient_scaling=not args.no_gradient_scaling,
        deterministic=args.deterministic,
        init_scale=args.init_scale,
        spectrum_samples=args.spectrum_samples,
        checkpoint_every=args.checkpoint_every,
        checkpoint_dir=args.checkpoint_dir,
    )
    for key, value in config_dict(config).items():
        log.debug("train %s=%s", key, value)
    init = load_bank(args.init, blur_mode=args.blur_mode) if args.init else None
    if config.num_steps == 0:
        # no probe, no spectrum: the output is exactly the initialization
        config = TrainConfig(**{**config_dict(config), "learning_rate": 0.0, "gradient_scaling": False})
    bank, trace = train(images, config, init=init)
    save_bank(args.out, bank)
    if args.log_csv:
        trace.to_csv(args.log_csv, timestamps=not args.deterministic)
    last = trace.energies[-1] if trace.energies else None
    return summary(
        command="train",
        steps=config.num_steps,
        filters=bank.num_filters,
        kernel_size=bank.kernel_size,
        learning_rate=trace.learning_rate,
        local_dim=last.local_dim if last else float("nan"),
        recons=last.recons if last else float("nan"),
        global_dim=last.global_dim if last else float("nan"),
        total=last.total if last else float("nan"),
    )


def _add_covmap_extract(sub):
    p = sub.add_parser("covmap-extract", help="local covariance map of an image")
    p.add_argument("image")
    p.add_argument("--bank", required=True, help="bank file, 'oriented' or random:N:K")
    p.add_argument("--out", required=True)
    p.add_argument("--neighborhood", type=int, default=8)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--window", default="gaussian", choices=["gaussian", "boxcar"])
    p.add_argument("--window-sigma", type=float, default=None)
    p.add_argument("--boundary", default="circular", choices=["circular", "valid"])
    _add_image_opts(p)
    p.set_defaults(func=cmd_covmap_extract)


def cmd_covmap_extract(args):
    img = load_image(args.image, args.preprocessing)
    bank = _bank_from_args(args)
    cm = extract(
        apply(bank, img),
        args.neighborhood,
        args.stride,
        window_kind=args.window,
        window_sigma=args.window_sigma,
        boundary=args.boundary,
    )
    save_covmap(args.out, cm)
    count = count_measurements(cm)
    return summary(
        command="covmap-extract",
        image=f"{img.shape[1]}x{img.shape[0]}",
        grid=f"{cm.grid_shape[1]}x{cm.grid_shape[0]}",
        filters=cm.num_filters,
        locations=count.locations,
        measurements=count.total,
    )


def _mean_participation(cm):
    vals, _ = eig_sym_batch(cm.matrices)
    vals = np.maximum(vals, 0.0)
    ok = vals.sum(axis=-1) > 0
    return float(np.mean(participation_ratio(vals[ok]))) if np.any(ok) else float("nan")


def _add_covmap_edit(sub):
    p = sub.add_parser("covmap-edit", help="edit the eigenvalues of a covariance map")
    p.add_argument("map")
    p.add_argument("--out", required=True)
    p.add_argument("--op", required=True, choices=["threshold", "adaptive", "power", "variances"])
    p.add_argument("--value", type=float, default=None, help="tau, fraction or exponent")
    p.add_argument("--exclude", default="largest", choices=["largest", "lowpass"])
    p.add_argument("--lowpass-channel", type=int, default=0)
    p.set_defaults(func=cmd_covmap_edit)


def cmd_covmap_edit(args):
    cm = load_covmap(args.map)
    if args.op != "variances" and args.value is None:
        raise UsageError(f"--op {args.op} needs --value")
    if args.op == "threshold":
        out = eig_threshold_fixed(cm, args.value)
    elif args.op == "adaptive":
        out = eig_threshold_adaptive(cm, args.value, args.exclude, args.lowpass_channel)
    elif args.op == "power":
        out = eig_power(cm, args.value)
    else:
        out = restrict_to_variances(cm)
    save_covmap(args.out, out)
    return summary(
        command="covmap-edit",
        op=args.op,
        measurements=count_measurements(out).total,
        participation_before=_mean_participation(cm),
        participation_after=_mean_participation(out),
    )


def _add_synthesize(sub):
    p = sub.add_parser("synthesize", help="synthesize an image matching a covariance map")
    p.add_argument("map")
    p.add_argument("--bank", required=True, help="bank file, 'oriented' or random:N:K")
    p.add_argument("--out", required=True, help=".npy for exact values, otherwise 16-bit PGM")
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--step0", type=float, default=1.0)
    p.add_argument("--method", default="harmonic", choices=METHODS)
    p.add_argument("--tol", type=float, default=0.0)
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--double-count", action="store_true")
    p.add_argument("--init", help="start from this image instead of white noise")
    p.add_argument("--reference", help="report the relative error against this image")
    p.add_argument("--trace", help="CSV of the objective per step")
    _add_image_opts(p)
    p.set_defaults(func=cmd_synthesize)


def cmd_synthesize(args):
    target = load_covmap(args.map)
    bank = _bank_from_args(args)
    init = load_image(args.init, args.preprocessing) if args.init else None
    ref = load_image(args.reference, args.preprocessing) if args.reference else None
    config = SynthConfig(
        max_steps=args.steps,
        step0=args.step0,
        seed=args.seed,
        tol=args.tol,
        log_every=args.log_every,
        double_count=args.double_count,
        method=args.method,
    )
    result = synthesize(target, bank, config, init=init, reference=ref)
    _write_array_image(args.out, result.image)
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write("step,objective\n")
            for k, v in enumerate(result.objective):
                fh.write(f"{k},{v!r}\n")
    pairs = dict(
        command="synthesize",
        method=config.method,
        steps=result.steps,
        measurements=count_measurements(target).total,
        objective_initial=result.objective[0],
        objective=result.objective[-1],
    )
    if result.relative_error is not None:
        pairs["relative_error"] = result.relative_error
    return summary(**pairs)


def _add_baseline(sub):
    p = sub.add_parser("baseline", help="reference plus white noise at a given relative error")
    p.add_argument("reference")
    p.add_argument("--rel-error", type=float, required=True)
    p.add_argument("--out", required=True)
    _add_image_opts(p)
    p.set_defaults(func=cmd_baseline)


def cmd_baseline(args):
    ref = load_image(args.reference, args.preprocessing)
    noisy = noise_baseline(ref, args.rel_error, args.seed)
    _write_array_image(args.out, noisy)
    err = float(np.linalg.norm(noisy - ref) / np.linalg.norm(ref))
    return summary(command="baseline", relative_error=err)


# -- parsing --------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="lcov", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"lcov {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    for add in (_add_analyze, _add_train, _add_covmap_extract, _add_covmap_edit, _add_synthesize, _add_baseline):
        add(sub)
    for p in sub.choices.values():
        _add_common(p)
    return parser


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _flag_name(action):
    long = [o for o in action.option_strings if o.startswith("--")]
    return long[0][2:].replace("-", "_") if long else action.dest


def _config_defaults(subparser, path):
    """Typed defaults from a config file; keys are long flag names with
    ``_`` or ``-`` separators (``lambda``, ``kernel_size``)."""
    actions = {}
    for a in subparser._actions:
        if a.option_strings and not a.required and a.dest not in ("help", "config"):
            actions[_flag_name(a)] = a
    raw = read_config(path, set(actions))
    out = {}
    for key, text in raw.items():
        action = actions[key]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            value = _parse_bool(text)
        elif action.type is not None:
            try:
                value = action.type(text)
            except ValueError as exc:
                raise UsageError(f"{path}: bad value for {key}: {text!r}") from exc
        else:
            value = text
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{path}: {key} must be one of {sorted(action.choices)}")
        out[action.dest] = value
    return out


def effective_config(parser, args):
    """``flag_name -> value`` for every option of the chosen subcommand."""
    sub = parser._subparsers._group_actions[0].choices[args.command]
    out = {"command": args.command}
    for a in sub._actions:
        if a.dest != "help":
            out[_flag_name(a)] = getattr(args, a.dest)
    return dict(sorted(out.items()))


def parse_args(argv, parser=None):
    parser = parser or build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        try:
            defaults = _config_defaults(sub, args.config)
        except InvalidInputError as exc:
            raise UsageError(str(exc)) from exc
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _threads(args):
    if args.deterministic:
        return 1
    if args.threads is not None:
        return args.threads
    env = os.environ.get("LCOV_THREADS")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"LCOV_THREADS must be an integer, got {env!r}") from exc
    return 1


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        parser = build_parser()
        args = parse_args(argv, parser)
        threads = _threads(args)
        if threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(f"lcov: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"lcov: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", force=True)
    effective = effective_config(parser, args)
    log.info("effective config: %s", " ".join(f"{k}={_fmt(v)}" for k, v in effective.items()))
    try:
        with sfft.set_workers(threads):
            args.func(args)
    except UsageError as exc:
        print(f"lcov: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        where = f" (checkpoint {exc.checkpoint})" if exc.checkpoint else ""
        print(f"lcov: divergence: {exc}{where}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, FormatError) as exc:
        print(f"lcov: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvalidInputError as exc:
        print(f"lcov: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return 0
