import hashlib
import importlib
import json
import os

import numpy as np
import torch

from .errors import ConfigError


DTYPES = {
    "f16": torch.float16,
    "f32": torch.float32,
    "f64": torch.float64,
}

# purposes of derived random streams; values are part of the seed derivation and must not change
STREAM_PURPOSES = {
    "scene": 0,
    "boxes": 1,
    "agents": 2,
    "lidar": 3,
    "camera": 4,
    "pose_noise": 5,
    "dropout": 6,
    "init": 7,
    "shuffle": 8,
}


def get_dtype(name):
    if isinstance(name, torch.dtype):
        return name
    if name not in DTYPES:
        raise ConfigError(f"unknown precision {name!r}, expected one of {sorted(DTYPES)}")
    return DTYPES[name]


def count_params(model):
    return sum(p.numel() for p in model.parameters())


def instantiate_from_config(config, **extra_kwargs):
    """Build `config["target"]` (a dotted class path) with `config["params"]` plus `extra_kwargs`."""
    if "target" not in config:
        raise ConfigError(f"expected key `target` to instantiate, got keys {sorted(config)}")
    return get_obj_from_str(config["target"])(**config.get("params", {}), **extra_kwargs)


def get_obj_from_str(string):
    module, name = string.rsplit(".", 1)
    try:
        return getattr(importlib.import_module(module), name)
    except (ImportError, AttributeError) as e:
        raise ConfigError(f"cannot resolve {string!r}: {e}") from e


def derive_seed(seed, *keys):
    """
    Derive an independent 63-bit seed from a master seed and a tuple of keys,
    e.g. derive_seed(seed, frame_id, agent_id, "lidar"). String keys are looked up
    in STREAM_PURPOSES so that the derivation does not depend on hash randomization.
    """
    entropy = [int(seed)] + [_key_entropy(k) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0]
    return int(state >> np.uint64(1))


def numpy_rng(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [_key_entropy(k) for k in keys]))


def torch_generator(seed, *keys):
    return torch.Generator().manual_seed(derive_seed(seed, *keys))


def _key_entropy(key):
    if isinstance(key, str):
        return 1000 + STREAM_PURPOSES[key]
    return int(key)


def num_threads():
    value = os.getenv("RGF_THREADS")
    if value is None:
        return max(1, torch.get_num_threads())
    return max(1, int(value))


def config_hash(config):
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
