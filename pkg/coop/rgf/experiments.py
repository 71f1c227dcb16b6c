"""
Experiment commands behind the `coop/main.py` CLI.

Every command takes an `ExperimentConfig` and writes its artifacts below
`config.out`. Outputs that are meant to be compared across runs (scene files,
parameter tensors, metric CSVs) depend only on the config and seeds; wall-clock
measurements go to separate timing files.
"""

import csv
import dataclasses
import json
import logging
import math
import shutil
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import torch
from tqdm import tqdm

from . import container
from .errors import ConfigError, DivergenceError
from .evaluation.ap import ap_eval
from .geometry import Transform2
from .gradcheck_suites import SUITES
from .heatmap import write_heatmap
from .models.agents import AgentObservation, parse_modality_config
from .models.architectures import ARCHITECTURES, FusionDims, StageTimer, build_model, preset_dims, supports
from .modules.attention import RGAttn, attention_op_count, rg_attn_apply
from .modules.head import decode_nms
from .modules.tensor_ops import count_macs
from .optim import OptimizerConfig
from .sim.config import CameraConfig, LidarConfig, SceneConfig
from .sim.noise import PoseNoiseModel
from .sim.payload import encode_payload, tensor_bytes, truncate_channels
from .sim.scene import Scene, default_rigs, generate_scene
from .training import build_example, load_checkpoint, save_checkpoint, train_loop, write_history
from .util import config_hash, get_dtype, num_threads, torch_generator


logpy = logging.getLogger(__name__)

RUNTIME_KEYS = ("out", "data", "params", "force", "verbose")
SPLITS = ("train", "eval")


@dataclass
class ExperimentConfig:
    architecture: str = "coscoco"
    preset: str = "desk"
    # per-field overrides of the preset dims
    dims: Dict[str, Any] = field(default_factory=dict)
    precision: str = "f32"
    seed: int = 0
    seeds: List[int] = field(default_factory=lambda: [0])
    train_frames: int = 200
    eval_frames: int = 100
    epochs: int = 10
    batch_size: int = 1
    train_modality: str = "LC+LC"
    eval_modalities: List[str] = field(default_factory=lambda: ["L", "C+L", "LC", "LC+C", "LC+L", "LC+LC"])
    # empty means the agent count of the generated scenes
    agent_counts: List[int] = field(default_factory=list)
    noise_modality: str = "LC+LC"
    noise_sigma_p: List[float] = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6])
    noise_sigma_r: List[float] = field(default_factory=lambda: [0.0, 0.02, 0.04, 0.06])
    iou_thresholds: List[float] = field(default_factory=lambda: [0.3, 0.5, 0.7])
    score_thresh: float = 0.3
    nms_iou: float = 0.1
    max_candidates: int = 200
    payload_precision: str = "f16"
    payload_compress: bool = True
    payload_architectures: List[str] = field(default_factory=lambda: ["ptp", "coscoco", "prgaf"])
    bench_widths: List[int] = field(default_factory=lambda: [64, 128, 256])
    bench_runs: int = 20
    bench_pipeline_presets: List[str] = field(default_factory=lambda: ["desk"])
    pe_variants: List[str] = field(default_factory=lambda: ["none", "learnable", "depth_height"])
    gradcheck_seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    gradcheck_tolerance: float = 1e-5
    scene: SceneConfig = field(default_factory=SceneConfig)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    out: str = "runs/default"
    data: Optional[str] = None
    params: Optional[str] = None
    force: bool = False
    verbose: bool = False

    def validate(self):
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}, expected one of {sorted(ARCHITECTURES)}")
        for text in [self.train_modality, self.noise_modality, *self.eval_modalities]:
            parse_modality_config(text)
        resolve_dims(self).validate()
        self.optimizer.validate()
        self.scene.validate()
        return self


def resolve_dims(config: ExperimentConfig) -> FusionDims:
    return preset_dims(config.preset, **dict(config.dims))


def experiment_hash(config: ExperimentConfig):
    resolved = {k: v for k, v in asdict(config).items() if k not in RUNTIME_KEYS}
    return config_hash(resolved)


def scene_config(config: ExperimentConfig, dims: FusionDims) -> SceneConfig:
    """The harness always generates worlds covering the ego BEV extent."""
    return dataclasses.replace(config.scene, x_min=dims.x_min, x_max=dims.x_max, y_min=dims.y_min, y_max=dims.y_max)


def data_dir(config: ExperimentConfig):
    return Path(config.data) if config.data else Path(config.out) / "data"


def params_root(config: ExperimentConfig):
    return Path(config.params) if config.params else Path(config.out) / "params"


def params_dir(config: ExperimentConfig, architecture, seed):
    return params_root(config) / architecture / f"seed_{seed}"


def load_scenes(directory):
    directory = Path(directory)
    files = sorted(directory.glob("frame_*.json"))
    if not files:
        raise ConfigError(f"no scene files in {directory}; run `generate` first")
    return [Scene.from_json(path.read_text()) for path in files]


def _prepare_dir(path: Path, force):
    if path.exists() and any(path.iterdir()):
        if not force:
            raise ConfigError(f"{path} exists and is not empty; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


def _fmt(value):
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"refusing to write non-finite value {value}")
        return f"{value:.6f}"
    return value


def write_csv(rows, path, fieldnames=None):
    fieldnames = fieldnames or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in fieldnames})


def write_json(payload, path):
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1))


def cmd_generate(config: ExperimentConfig):
    """Write seeded scene JSON files for the train and eval splits."""
    config.validate()
    dims = resolve_dims(config)
    scenes_cfg = scene_config(config, dims)
    root = data_dir(config)
    _prepare_dir(root, config.force)
    counts = {"train": config.train_frames, "eval": config.eval_frames}
    frame_id = 0
    for split in SPLITS:
        split_dir = root / split
        split_dir.mkdir(parents=True, exist_ok=True)
        for _ in tqdm(range(counts[split]), desc=f"generate {split}", leave=False, disable=None):
            scene = generate_scene(scenes_cfg, frame_id, config.seed, c2=dims.c2, h2=dims.h2, w2=dims.w2)
            (split_dir / f"frame_{frame_id:06d}.json").write_text(scene.to_json())
            frame_id += 1
    write_json({"seed": config.seed, "frames": counts, "scene": asdict(scenes_cfg)}, root / "dataset.json")
    logpy.info(f"generated {counts['train']} train and {counts['eval']} eval scenes in {root}")
    return root


def _examples(config, dims, scenes, modality, noise=None, max_agents=None):
    dtype = get_dtype(config.precision)
    return [
        build_example(scene, dims, modality, config.lidar, config.camera, noise, max_agents, dtype=dtype)
        for scene in tqdm(scenes, desc="observations", leave=False, disable=None)
    ]


def _train_one(config, dims, dataset, architecture, seed):
    model = build_model(architecture, dims, generator=torch_generator(seed, "init"), dtype=get_dtype(config.precision))
    target = params_dir(config, architecture, seed)
    target.mkdir(parents=True, exist_ok=True)
    try:
        history = train_loop(dataset, model, config.optimizer, config.epochs, seed, config.batch_size)
    except DivergenceError as e:
        write_history(e.history, target / "loss_history.csv")
        logpy.error(f"{architecture} seed {seed} diverged after {len(e.history)} epochs ({e})")
        raise
    write_history(history, target / "loss_history.csv")
    save_checkpoint(model, target, experiment_hash(config), extra={"seed": seed, "epochs": config.epochs})
    return model, history


def cmd_train(config: ExperimentConfig):
    """Train the configured architecture once per seed on the train split."""
    config.validate()
    dims = resolve_dims(config)
    scenes = load_scenes(data_dir(config) / "train")
    dataset = _examples(config, dims, scenes, config.train_modality)
    histories = {}
    for seed in config.seeds:
        logpy.info(f"training {config.architecture} seed {seed} on {len(dataset)} frames")
        _, histories[seed] = _train_one(config, dims, dataset, config.architecture, seed)
    return histories


def modality_list(modality, n_agents):
    ego, coop = parse_modality_config(modality)
    return [ego] + ([coop] * (n_agents - 1) if coop is not None else [])


def frame_payload(model, agents: List[AgentObservation], ego_id, precision, compress):
    """Summed raw and sent bytes of everything the cooperators send in one frame."""
    raw = sent = 0
    for agent in agents:
        if agent.agent_id == ego_id:
            continue
        for kind, rig, tensor in model.payload_tensors(agent):
            _, stats = encode_payload(tensor, kind, precision, compress, agent.agent_id, rig_index=rig)
            raw += stats.raw_bytes
            sent += stats.sent_bytes
    return raw, sent


def evaluate(model, scenes, dims: FusionDims, config: ExperimentConfig, modality, max_agents=None, noise=None, timer=None):
    """
    Detection AP at every configured IoU threshold plus mean per-cooperator payload
    bytes. Frames run in a thread pool; results are gathered in frame order. Each frame
    times its stages on its own timer, summed into `timer` afterwards.
    """
    spec = dims.bev_spec()
    dtype = get_dtype(config.precision)

    def run(scene):
        example = build_example(scene, dims, modality, config.lidar, config.camera, noise, max_agents, dtype=dtype)
        frame_timer = StageTimer()
        with torch.no_grad():
            raw = model(example.agents, example.ego_id, timer=frame_timer)
        dets = decode_nms(raw, spec, config.score_thresh, config.nms_iou, config.max_candidates)
        gts = [b for b in scene.boxes_in_frame(scene.ego_id) if spec.contains([b.cx, b.cy])]
        payload = frame_payload(model, example.agents, example.ego_id, config.payload_precision, config.payload_compress)
        return dets, gts, payload, len(example.agents) - 1, frame_timer

    with ThreadPoolExecutor(max_workers=num_threads()) as pool:
        results = list(tqdm(pool.map(run, scenes), total=len(scenes), desc=f"eval {modality}", leave=False, disable=None))
    if timer is not None:
        for r in results:
            timer.merge(r[4])
    dets = [r[0] for r in results]
    gts = [r[1] for r in results]
    cooperator_frames = max(1, sum(r[3] for r in results))
    metrics = {f"ap{round(t * 100)}": ap_eval(dets, gts, t) for t in config.iou_thresholds}
    metrics["payload_raw_bytes"] = sum(r[2][0] for r in results) / cooperator_frames
    metrics["payload_sent_bytes"] = sum(r[2][1] for r in results) / cooperator_frames
    return metrics


def _metric_fields(config):
    aps = [f"ap{round(t * 100)}" for t in config.iou_thresholds]
    return ["architecture", "modality", "agents", "sigma_p", "sigma_r", "seed", "status", *aps, "payload_raw_bytes", "payload_sent_bytes"]


def _load_trained(config, dims, seed):
    model, _ = load_checkpoint(params_dir(config, config.architecture, seed), config.architecture, dims)
    model.eval()
    return model


def cmd_eval(config: ExperimentConfig):
    """
    Evaluate the trained parameters of every seed on every requested modality mix
    and agent count, without retraining. Combinations the architecture cannot run
    are emitted as `unsupported` rows.
    """
    config.validate()
    dims = resolve_dims(config)
    scenes = load_scenes(data_dir(config) / "eval")
    counts = list(config.agent_counts) or [len(scenes[0].agents)]
    available = min(len(scene.agents) for scene in scenes)
    if any(n < 1 or n > available for n in counts):
        raise ConfigError(f"agent_counts {counts} must lie in [1, {available}], the agents present in every eval scene")
    out = Path(config.out) / "eval"
    out.mkdir(parents=True, exist_ok=True)

    rows, timings = [], []
    for seed in config.seeds:
        model = _load_trained(config, dims, seed)
        for modality in config.eval_modalities:
            for n_agents in counts if "+" in modality else [1]:
                row = {"architecture": config.architecture, "modality": modality, "agents": n_agents, "sigma_p": 0.0, "sigma_r": 0.0, "seed": seed}
                if not supports(config.architecture, modality_list(modality, n_agents)):
                    logpy.info(f"{config.architecture} does not support {modality}; row marked unsupported")
                    rows.append({**row, "status": "unsupported"})
                    continue
                timer = StageTimer()
                start = time.perf_counter()
                rows.append({**row, "status": "ok", **evaluate(model, scenes, dims, config, modality, n_agents, timer=timer)})
                timings.append({**row, "total_seconds": time.perf_counter() - start, "stages": timer.seconds})
    write_csv(rows, out / "metrics.csv", _metric_fields(config))
    write_json(rows, out / "metrics.json")
    write_json(timings, out / "timings.json")
    return rows


def noise_pairs(config: ExperimentConfig):
    if not config.noise_sigma_p or len(config.noise_sigma_p) != len(config.noise_sigma_r):
        raise ConfigError("noise sweep needs equally long, non-empty noise_sigma_p and noise_sigma_r lists")
    return list(zip(config.noise_sigma_p, config.noise_sigma_r))


def trend_violations(values, band=0.005):
    """Adjacent increases of a sequence expected to be non-increasing; small ones within `band` are tolerated."""
    rises = [b - a for a, b in zip(values, values[1:]) if b > a]
    return len(rises), all(r <= band for r in rises) and len(rises) <= 1


def cmd_noise_sweep(config: ExperimentConfig):
    """AP of the trained parameters under cooperator pose noise, per (sigma_p, sigma_r) pair and seed."""
    config.validate()
    pairs = noise_pairs(config)
    dims = resolve_dims(config)
    scenes = load_scenes(data_dir(config) / "eval")
    n_agents = len(scenes[0].agents)
    out = Path(config.out) / "noise_sweep"
    out.mkdir(parents=True, exist_ok=True)
    if not supports(config.architecture, modality_list(config.noise_modality, n_agents)):
        raise ConfigError(f"{config.architecture} cannot run {config.noise_modality}")

    runs = []
    models = {seed: _load_trained(config, dims, seed) for seed in config.seeds}
    for sigma_p, sigma_r in tqdm(pairs, desc="noise sweep", disable=None):
        for seed in config.seeds:
            noise = PoseNoiseModel(sigma_p, sigma_r, seed=seed)
            metrics = evaluate(models[seed], scenes, dims, config, config.noise_modality, noise=noise)
            runs.append({"architecture": config.architecture, "modality": config.noise_modality, "agents": n_agents,
                         "sigma_p": float(sigma_p), "sigma_r": float(sigma_r), "seed": seed, "status": "ok", **metrics})

    aps = [f"ap{round(t * 100)}" for t in config.iou_thresholds]
    summary = []
    for sigma_p, sigma_r in pairs:
        cell = [r for r in runs if r["sigma_p"] == sigma_p and r["sigma_r"] == sigma_r]
        row = {"architecture": config.architecture, "sigma_p": float(sigma_p), "sigma_r": float(sigma_r), "n_seeds": len(cell)}
        for ap in aps:
            values = [r[ap] for r in cell]
            row[f"{ap}_mean"] = float(np.mean(values))
            row[f"{ap}_std"] = float(np.std(values))
        summary.append(row)

    violations, monotone = trend_violations([r[f"{aps[0]}_mean"] for r in summary])
    logpy.info(f"{aps[0]} vs pose noise: {violations} rises, non-increasing within tolerance: {monotone}")
    write_csv(runs, out / "noise_sweep_runs.csv", _metric_fields(config))
    write_csv(summary, out / "noise_sweep.csv")
    write_json({"metric": aps[0], "rises": violations, "non_increasing": monotone}, out / "trend.json")
    return summary


def _median_seconds(fn, runs):
    samples = []
    for _ in range(runs):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def _bench_scene(config, dims, seed):
    scene = generate_scene(scene_config(config, dims), 0, seed, c2=dims.c2, h2=dims.h2, w2=dims.w2)
    return build_example(scene, dims, config.train_modality, config.lidar, config.camera)


def cmd_bench(config: ExperimentConfig):
    """
    Median wall time of one radian-glue attention call at full dims for several camera
    widths, next to the predicted multiply-accumulate count; then full pipeline times.
    """
    full = preset_dims("full")
    spec = full.bev_spec()
    generator = torch_generator(config.seed, "init")
    bev = torch.randn(full.c1, spec.h1, spec.w1, generator=generator)
    widths = []
    with torch.no_grad():
        for w2 in config.bench_widths:
            block = RGAttn(full.c1, full.c2, spec.h1, full.h2, heads=full.heads, pe=full.pe, generator=generator).eval()
            cam = torch.randn(full.c2, full.h2, w2, generator=generator)
            rig = dataclasses.replace(_front_rig(full), w2=w2)
            with count_macs() as counter:
                rg_attn_apply(bev, spec, cam, Transform2.identity(), rig, block)
            seconds = _median_seconds(lambda: rg_attn_apply(bev, spec, cam, Transform2.identity(), rig, block), config.bench_runs)
            predicted = attention_op_count(spec.h1, full.h2, w2, block.d_model, block.heads, full.c1, full.c2)
            widths.append({"w2": w2, "median_seconds": seconds, "predicted_macs": predicted, "counted_macs": counter.total,
                           "seconds_per_gmac": seconds / (predicted / 1e9)})
    for prev, cur in zip(widths, widths[1:]):
        cur["time_ratio_to_previous"] = cur["median_seconds"] / prev["median_seconds"]

    pipelines = []
    for preset in config.bench_pipeline_presets:
        dims = preset_dims(preset)
        example = _bench_scene(config, dims, config.seed)
        for tag in ("lidar", "ptp", "coscoco", "prgaf"):
            model = build_model(tag, dims, generator=torch_generator(config.seed, "init")).eval()
            timer = StageTimer()
            with torch.no_grad():
                seconds = _median_seconds(lambda: model(example.agents, example.ego_id, timer=timer), max(1, config.bench_runs // 4))
            pipelines.append({"preset": preset, "architecture": tag, "median_seconds": seconds, "stages": timer.seconds})

    out = Path(config.out) / "bench"
    out.mkdir(parents=True, exist_ok=True)
    report = {"rg_attn": widths, "pipelines": pipelines}
    write_json(report, out / "bench.json")
    write_csv(widths, out / "bench_rg_attn.csv", ["w2", "median_seconds", "predicted_macs", "counted_macs", "seconds_per_gmac", "time_ratio_to_previous"])
    return report


def _front_rig(dims: FusionDims):
    return default_rigs(dims.c2, dims.h2, dims.w2, 1, 100.0)[0]


def cmd_payload(config: ExperimentConfig):
    """Per-agent, per-frame payload bytes by architecture, modality mix and payload kind."""
    config.validate()
    dims = resolve_dims(config)
    scene = generate_scene(scene_config(config, dims), 0, config.seed, c2=dims.c2, h2=dims.h2, w2=dims.w2)
    rows = []
    for tag in config.payload_architectures:
        model = build_model(tag, dims, generator=torch_generator(config.seed, "init")).eval()
        for modality in config.eval_modalities:
            n_agents = len(scene.agents) if "+" in modality else 1
            modes = modality_list(modality, n_agents)
            base = {"architecture": tag, "modality": modality}
            if not supports(tag, modes):
                rows.append({**base, "status": "unsupported"})
                continue
            example = build_example(scene, dims, modality, config.lidar, config.camera)
            # the ego's own payload stands in for a cooperator when the mix has none
            senders = [a for a in example.agents if a.agent_id != example.ego_id] or example.agents[:1]
            agent = senders[0]
            tensors = model.payload_tensors(agent)
            for kind, rig, tensor in tensors:
                rows.append(_payload_row(base, agent, kind, rig, tensor, config))
                if kind == "bev_feature":
                    rows.append(_payload_row(base, agent, "bev_feature_truncated", rig, truncate_channels(tensor), config))
            if not tensors:
                rows.append({**base, "status": "ok", "agent_id": agent.agent_id, "kind": "none", "raw_bytes": 0, "sent_bytes": 0})
    out = Path(config.out) / "payload"
    out.mkdir(parents=True, exist_ok=True)
    fields = ["architecture", "modality", "status", "agent_id", "kind", "rig_index", "shape", "precision",
              "tensor_bytes", "raw_bytes", "sent_bytes", "compression_ratio"]
    write_csv(rows, out / "payload.csv", fields)
    write_json(rows, out / "payload.json")
    return rows


def _payload_row(base, agent, kind, rig, tensor, config):
    _, stats = encode_payload(tensor, "camera_feature" if kind == "camera_feature" else "bev_feature",
                              config.payload_precision, config.payload_compress, agent.agent_id, rig_index=rig)
    return {**base, "status": "ok", "agent_id": agent.agent_id, "kind": kind, "rig_index": rig,
            "shape": "x".join(str(s) for s in tensor.shape), "precision": config.payload_precision,
            "tensor_bytes": tensor_bytes(tuple(tensor.shape), config.payload_precision), **stats.to_dict()}


def cmd_gradcheck(config: ExperimentConfig):
    """Run every finite-difference suite; returns (rows, all passed)."""
    rows = []
    for name, suite in SUITES.items():
        for seed in config.gradcheck_seeds:
            error = suite(seed)
            rows.append({"op": name, "seed": seed, "max_rel_error": error, "passed": error < config.gradcheck_tolerance})
            logpy.info(f"gradcheck {name} seed {seed}: {error:.3e}")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv([{**r, "max_rel_error": float(r["max_rel_error"]), "passed": int(r["passed"])} for r in rows], out / "gradcheck.csv")
    return rows, all(r["passed"] for r in rows)


def cmd_heatmap(tensor_path, channel, out_path=None):
    tensor = container.load_tensor(tensor_path)
    out_path = out_path or str(Path(tensor_path).with_suffix("")) + f"_c{channel}.pgm"
    write_heatmap(tensor, channel, out_path)
    return out_path


def cmd_ablate_pe(config: ExperimentConfig):
    """Train once per positional-encoding variant on the same data and seed; evaluate LC+LC."""
    config.validate()
    train = load_scenes(data_dir(config) / "train")
    scenes = load_scenes(data_dir(config) / "eval")
    seed = config.seeds[0]
    rows = []
    for variant in config.pe_variants:
        variant_config = dataclasses.replace(config, dims={**dict(config.dims), "pe": variant},
                                             params=str(params_root(config) / "ablation" / variant))
        dims = resolve_dims(variant_config)
        dataset = _examples(variant_config, dims, train, config.train_modality)
        model, history = _train_one(variant_config, dims, dataset, config.architecture, seed)
        model.eval()
        metrics = evaluate(model, scenes, dims, variant_config, "LC+LC")
        rows.append({"architecture": config.architecture, "pe": variant, "seed": seed, "final_loss": history[-1]["loss"] if history else 0.0,
                     **{k: v for k, v in metrics.items() if k.startswith("ap")}})
    out = Path(config.out) / "ablation"
    out.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out / "ablation.csv")
    return rows


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "noise-sweep": cmd_noise_sweep,
    "bench": cmd_bench,
    "payload": cmd_payload,
    "gradcheck": cmd_gradcheck,
    "ablate-pe": cmd_ablate_pe,
}

