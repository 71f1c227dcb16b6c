import logging
import sys

import torch

from arguments import get_args, process_config_to_args
from rgf.errors import (
    CapabilityError,
    ConfigError,
    DivergenceError,
    GeometryError,
    PayloadError,
    SceneGenerationError,
    ShapeError,
)
from rgf.experiments import COMMANDS, cmd_heatmap
from rgf.util import num_threads


logpy = logging.getLogger("rgf")

HANDLED_ERRORS = (ConfigError, CapabilityError, ShapeError, GeometryError, PayloadError, DivergenceError, SceneGenerationError)
EXIT_ERROR = 2
EXIT_GRADCHECK_FAILED = 1


def print_gradcheck_report(rows):
    print(f"{'op':<20} {'seed':>4} {'max rel error':>14}  result")
    for row in rows:
        print(f"{row['op']:<20} {row['seed']:>4} {row['max_rel_error']:>14.3e}  {'ok' if row['passed'] else 'FAIL'}")


def print_bench_report(report):
    print(f"{'W2':>5} {'median s':>10} {'pred MACs':>14} {'s/GMAC':>8} {'x prev':>7}")
    for row in report["rg_attn"]:
        ratio = row.get("time_ratio_to_previous")
        print(
            f"{row['w2']:>5} {row['median_seconds']:>10.5f} {row['predicted_macs']:>14d} "
            f"{row['seconds_per_gmac']:>8.3f} {'' if ratio is None else f'{ratio:.2f}':>7}"
        )
    for row in report["pipelines"]:
        print(f"{row['preset']:<6} {row['architecture']:<8} {row['median_seconds']:.4f} s")


def run(args):
    if args.command == "heatmap":
        path = cmd_heatmap(args.tensor, args.channel, args.image)
        logpy.info(f"wrote {path}")
        return 0
    config = process_config_to_args(args)
    if config.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    result = COMMANDS[args.command](config)
    if args.command == "gradcheck":
        rows, ok = result
        print_gradcheck_report(rows)
        return 0 if ok else EXIT_GRADCHECK_FAILED
    if args.command == "bench":
        print_bench_report(result)
    return 0


def main(args_list=None):
    args = get_args(args_list)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    torch.set_num_threads(num_threads())
    try:
        return run(args)
    except HANDLED_ERRORS as e:
        logpy.error(f"{args.command} failed: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
