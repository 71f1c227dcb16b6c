"""
End-to-end training of a cooperative detector and parameter checkpoints.

A checkpoint directory holds one RGTN container per parameter tensor and a
`manifest.json` with names, shapes, dtype, architecture tag, dims and config hash.
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List

import torch
from tqdm import tqdm

from . import container
from .errors import ConfigError, DivergenceError
from .models.agents import AgentObservation
from .models.architectures import CooperativeDetector, FusionDims, build_model
from .modules.head import build_targets, detection_loss
from .optim import OptimizerConfig, ParameterOptimizer
from .sim.scene import Scene
from .sim.sensors import build_observations
from .util import numpy_rng, torch_generator


logpy = logging.getLogger(__name__)

MANIFEST = "manifest.json"
HISTORY_FIELDS = ["epoch", "loss", "cls", "reg", "dir", "lr"]


@dataclass
class TrainingExample:
    frame_id: int
    agents: List[AgentObservation]
    ego_id: int
    target: torch.Tensor
    foreground: torch.Tensor


def build_example(scene: Scene, dims: FusionDims, modality=None, lidar=None, camera=None, noise=None, max_agents=None, dtype=torch.float32):
    spec = dims.bev_spec()
    agents = build_observations(scene, modality, lidar, camera, noise, max_agents, dtype=dtype)
    target, foreground = build_targets(scene.boxes_in_frame(scene.ego_id), spec, dtype=dtype)
    return TrainingExample(scene.frame_id, agents, scene.ego_id, target, foreground)


def example_loss(model: CooperativeDetector, example: TrainingExample, training=False, generator=None):
    raw = model(example.agents, example.ego_id, training=training, generator=generator)
    d = model.dims
    return detection_loss(raw, example.target, example.foreground, d.lambda_reg, d.lambda_dir, d.pos_weight)


def train_loop(dataset, model: CooperativeDetector, optimizer: OptimizerConfig, epochs, seed, batch_size=1, progress=True):
    """
    Train `model` in place. Example order and dropout masks come from streams derived
    from `seed`, so the same seed reproduces the same parameter trajectory.

    Returns:
        per-epoch history rows (epoch, mean loss and its terms, learning rate).

    Raises:
        DivergenceError: on a non-finite loss or gradient; `history` holds the completed epochs.
    """
    if not dataset:
        raise ConfigError("training dataset is empty")
    opt = ParameterOptimizer(model.named_parameters(), optimizer)
    history = []
    for epoch in range(epochs):
        order = numpy_rng(seed, epoch, "shuffle").permutation(len(dataset))
        totals = {"loss": 0.0, "cls": 0.0, "reg": 0.0, "dir": 0.0}
        lr = opt.learning_rate
        batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
        for step, batch in enumerate(tqdm(batches, desc=f"epoch {epoch}", disable=None if progress else True, leave=False)):
            generator = torch_generator(seed, epoch, step, "dropout")
            loss = 0.0
            for index in batch:
                value, terms = example_loss(model, dataset[index], training=True, generator=generator)
                if not math.isfinite(value.item()):
                    raise DivergenceError(f"non-finite loss at epoch {epoch} step {step}", history=history)
                loss = loss + value / len(batch)
                totals["loss"] += value.item()
                for key in ("cls", "reg", "dir"):
                    totals[key] += terms[key].item()
            loss.backward()
            try:
                opt.step()
            except DivergenceError as e:
                raise DivergenceError(str(e), history=history, parameter=e.parameter) from e
        opt.end_epoch()
        row = {"epoch": epoch, **{k: v / len(dataset) for k, v in totals.items()}, "lr": lr}
        history.append(row)
        logpy.info(f"epoch {epoch}: loss={row['loss']:.5f} cls={row['cls']:.5f} reg={row['reg']:.5f} dir={row['dir']:.5f}")
    return history


def write_history(history, path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(float(row[k])) if k != "epoch" else row[k] for k in HISTORY_FIELDS})


def save_checkpoint(model: CooperativeDetector, directory, config_hash="", extra=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = []
    for name, tensor in model.state_dict().items():
        filename = f"{name}.rgtn"
        container.save_tensor(directory / filename, tensor)
        tensors.append({"name": name, "shape": list(tensor.shape), "dtype": str(tensor.dtype).replace("torch.", ""), "file": filename})
    manifest = {
        "architecture": model.tag,
        "dims": asdict(model.dims),
        "config_hash": config_hash,
        "tensors": tensors,
        **(extra or {}),
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=1))
    logpy.info(f"saved {len(tensors)} tensors of {model.tag} to {directory}")
    return manifest


def read_manifest(directory):
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise ConfigError(f"no parameter manifest at {path}")
    return json.loads(path.read_text())


def load_checkpoint(directory, architecture=None, dims: FusionDims = None):
    """
    Rebuild a model from a checkpoint directory. When `architecture` or `dims` are given
    they must agree with the manifest.
    """
    manifest = read_manifest(directory)
    saved_dims = FusionDims(**manifest["dims"])
    if architecture is not None and architecture != manifest["architecture"]:
        raise ConfigError(f"parameters at {directory} are for {manifest['architecture']!r}, not {architecture!r}")
    if dims is not None and asdict(dims) != asdict(saved_dims):
        raise ConfigError(f"parameters at {directory} were trained with different dims")
    first = manifest["tensors"][0]["dtype"] if manifest["tensors"] else "float32"
    model = build_model(manifest["architecture"], saved_dims, dtype=getattr(torch, first))
    expected = model.state_dict()
    names = [t["name"] for t in manifest["tensors"]]
    if sorted(names) != sorted(expected):
        raise ConfigError(f"checkpoint tensors do not match {manifest['architecture']} parameters")
    state = {}
    for entry in manifest["tensors"]:
        tensor = container.load_tensor(Path(directory) / entry["file"])
        if tuple(tensor.shape) != tuple(expected[entry["name"]].shape):
            raise ConfigError(f"tensor {entry['name']} has shape {tuple(tensor.shape)}, expected {tuple(expected[entry['name']].shape)}")
        state[entry["name"]] = tensor
    model.load_state_dict(state)
    return model, manifest
