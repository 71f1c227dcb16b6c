import argparse

import omegaconf
from omegaconf import OmegaConf

from rgf.errors import ConfigError
from rgf.experiments import ExperimentConfig
from rgf.models.architectures import PRESETS


COMMAND_HELP = {
    "generate": "write seeded synthetic scenes for the train and eval splits",
    "train": "train the configured architecture on the train split",
    "eval": "evaluate trained parameters across modality mixes and agent counts",
    "noise-sweep": "evaluate trained parameters under cooperator pose noise",
    "bench": "time radian-glue attention and the full pipelines",
    "payload": "report per-agent message sizes",
    "gradcheck": "finite-difference check of every differentiable operation",
    "heatmap": "dump one channel of a saved tensor as a PGM image",
    "ablate-pe": "train and evaluate once per positional-encoding variant",
}


def add_experiment_config_args(parser):
    """Experiment configuration"""

    group = parser.add_argument_group("experiment", "experiment configuration")
    group.add_argument("--config", type=str, nargs="*", default=[], help="YAML/JSON config files, merged in order")
    group.add_argument("--seed", type=int, default=None, help="override the master seed (and the seed list)")
    group.add_argument("--out", type=str, default=None, help="output directory")
    group.add_argument("--preset", type=str, default=None, choices=sorted(PRESETS))
    group.add_argument("--architecture", type=str, default=None)
    group.add_argument("--data", type=str, default=None, help="dataset directory, defaults to <out>/data")
    group.add_argument("--params", type=str, default=None, help="parameter directory, defaults to <out>/params")
    group.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    group.add_argument("--verbose", action="store_true")

    return parser


def add_heatmap_args(parser):
    """Heatmap dump"""

    group = parser.add_argument_group("heatmap", "heatmap dump")
    group.add_argument("--tensor", type=str, default=None, help="RGTN tensor file")
    group.add_argument("--channel", type=int, default=0)
    group.add_argument("--image", type=str, default=None, help="output PGM path")

    return parser


def get_args(args_list=None, parser=None):
    """Parse all the args."""
    if parser is None:
        parser = argparse.ArgumentParser(description="radian-glue cooperative detection experiments")
    else:
        assert isinstance(parser, argparse.ArgumentParser)
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, text in COMMAND_HELP.items():
        sub = subparsers.add_parser(name, help=text)
        add_experiment_config_args(sub)
        if name == "heatmap":
            add_heatmap_args(sub)

    args = parser.parse_args(args_list)
    if args.command == "heatmap" and args.tensor is None:
        parser.error("heatmap needs --tensor")
    return args


def load_config(paths, overrides=None) -> ExperimentConfig:
    """
    Merge config files onto the structured `ExperimentConfig` schema, then apply
    `overrides` (flat dict, None values skipped). Unknown keys and ill-typed values
    raise ConfigError.
    """
    try:
        config = OmegaConf.structured(ExperimentConfig)
        files = [OmegaConf.load(path) for path in paths]
        config = OmegaConf.merge(config, *files)
        for key, value in (overrides or {}).items():
            if value is not None:
                config[key] = value
        return OmegaConf.to_object(config)
    except (omegaconf.errors.OmegaConfBaseException, FileNotFoundError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def process_config_to_args(args) -> ExperimentConfig:
    """Fetch the experiment config from the files and the command-line overrides."""
    overrides = {
        "out": args.out,
        "preset": args.preset,
        "architecture": args.architecture,
        "data": args.data,
        "params": args.params,
        "force": args.force or None,
        "verbose": args.verbose or None,
    }
    if args.seed is not None:
        overrides["seed"] = args.seed
        overrides["seeds"] = [args.seed]
    return load_config(args.config, overrides)
