"""Glue between corpora on disk, samples in memory, and the four approaches
(threshold, pretrained, supervised, fine-tuned)."""
from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .config import PipelineSettings, TrainConfig
from .dataio import read_manifest, read_mask
from .labels import threshold_mask
from .metrics import EvalReport, evaluate
from .radar import PolarSweep, parse_sweep, render_cartesian, write_sweep
from .synth import SceneParams, generate_scene
from .trainer import DatasetSplit, Sample, finetune, predict_samples, split_fixed, train
from .unet import UNetConfig, build_unet

log = logging.getLogger(__name__)


def sweep_digest(sweep_bytes: bytes) -> str:
    return hashlib.sha256(sweep_bytes).hexdigest()[:20]


def render(sweep: PolarSweep, settings: PipelineSettings):
    return render_cartesian(sweep, settings.grid, settings.max_range, settings.dbz_lo, settings.dbz_hi)


def make_sample(sweep: PolarSweep, truth, settings: PipelineSettings, labels: str, sample_id: str = "") -> Sample:
    """Render a sweep and pair it with either its truth mask or a band-threshold label."""
    image = render(sweep, settings)
    if labels == "noisy":
        return Sample(image, threshold_mask(image, settings.band_lo, settings.band_hi), "noisy", sample_id)
    if truth is None:
        raise ValueError("truth labels requested but the sample has no mask")
    return Sample(image, truth, "synthetic-truth", sample_id)


def load_samples(manifest_path, settings: PipelineSettings, labels: str = "truth"):
    """Samples for every manifest line; ``sample_id`` is a digest of the sweep bytes."""
    samples = []
    for sweep_path, mask_path, _seed in read_manifest(manifest_path):
        with open(sweep_path, "rb") as fh:
            raw = fh.read()
        truth = read_mask(mask_path) if (labels == "truth" and mask_path) else None
        samples.append(make_sample(parse_sweep(raw), truth, settings, labels, sweep_digest(raw)))
    return samples


def manifest_digests(manifest_path):
    out = set()
    for sweep_path, _, _ in read_manifest(manifest_path):
        with open(sweep_path, "rb") as fh:
            out.add(sweep_digest(fh.read()))
    return out


def split_train_val(samples, val_fraction: float, seed: int) -> DatasetSplit:
    n_val = int(round(len(samples) * val_fraction))
    if len(samples) > 1:
        n_val = min(max(n_val, 1 if val_fraction > 0 else 0), len(samples) - 1)
    else:
        n_val = 0
    return split_fixed(samples, (len(samples) - n_val, n_val, 0), seed)


def threshold_report(samples, lo: float = 8.0, hi: float = 16.0, name: str = "threshold") -> EvalReport:
    triples = [(threshold_mask(s.image, lo, hi), s.mask, s.image.valid) for s in samples]
    return evaluate(triples, model=name)


def model_report(model, samples, threshold: float = 0.5, name: str = "") -> EvalReport:
    preds = predict_samples(model, samples, threshold)
    return evaluate([(p, s.mask, s.image.valid) for p, s in zip(preds, samples)], model=name)


# -- desk-scale version of the full comparison -----------------------------------

@dataclass
class ExperimentConfig:
    n_pretrain: int = 240
    n_clean: int = 24
    n_test: int = 24
    grid: int = 64
    pretrain_val: int = 24
    clean_val: int = 6
    scene: SceneParams = field(default_factory=SceneParams)
    unet: UNetConfig = field(default_factory=lambda: UNetConfig(depth=2, base_channels=8))
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=8, batch_size=4, lr=1e-3))
    downstream: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=60, batch_size=4, lr=1e-3))


def _scenes(first_seed, count, scene, settings, labels):
    out = []
    for i in range(count):
        sweep, truth = generate_scene(scene, first_seed + i)
        out.append(make_sample(sweep, truth, settings, labels, sweep_digest(write_sweep(sweep))))
    return out


def run_ssl_experiment(seed: int, cfg: ExperimentConfig | None = None) -> dict:
    """Threshold vs supervised vs pretrain->fine-tune on synthetic scenes.

    Pretraining scenes get band-threshold labels; the clean and test scenes
    use synthetic truth. The three scene pools use disjoint seed ranges.
    Returns ``{approach: EvalReport}`` on the test scenes plus timing.
    """
    cfg = cfg or ExperimentConfig()
    scene = cfg.scene.replace(grid=cfg.grid)
    settings = PipelineSettings(grid=cfg.grid)
    base = 1_000_000 * (seed + 1)
    t0 = time.perf_counter()
    pre = _scenes(base, cfg.n_pretrain, scene, settings, "noisy")
    clean = _scenes(base + 500_000, cfg.n_clean, scene, settings, "truth")
    test = _scenes(base + 700_000, cfg.n_test, scene, settings, "truth")

    pre_split = split_fixed(pre, (cfg.n_pretrain - cfg.pretrain_val, cfg.pretrain_val, 0), seed)
    clean_split = split_fixed(clean, (cfg.n_clean - cfg.clean_val, cfg.clean_val, 0), seed)

    pre_model = build_unet(cfg.unet, seed)
    pre_ckpt, _ = train(pre_model, pre_split, replace(cfg.pretrain, seed=seed))
    t_pre = time.perf_counter()

    sup_model = build_unet(cfg.unet, seed)
    _, _ = train(sup_model, clean_split, replace(cfg.downstream, seed=seed))

    ft_ckpt, _ = finetune(pre_ckpt, clean_split, replace(cfg.downstream, seed=seed), cfg.unet)
    from .unet import UNetModel
    ft_model = UNetModel.from_checkpoint(ft_ckpt, cfg.unet)

    reports = {
        "threshold": threshold_report(test, settings.band_lo, settings.band_hi, "threshold"),
        "pretrained": model_report(pre_model, test, name="pretrained"),
        "supervised": model_report(sup_model, test, name="supervised"),
        "finetuned": model_report(ft_model, test, name="finetuned"),
    }
    t_end = time.perf_counter()
    log.info("seed %d: pretrain %.1fs, total %.1fs", seed, t_pre - t0, t_end - t0)
    reports["_seconds"] = t_end - t0
    return reports


def median(values):
    return float(np.median(np.asarray(values, dtype=np.float64)))
