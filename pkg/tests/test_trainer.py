from dataclasses import replace

import numpy as np
import pytest

from bioscatter.config import PipelineSettings, TrainConfig
from bioscatter.dataio import encode_checkpoint
from bioscatter.errors import (
    BadValue,
    CheckpointMismatch,
    EmptyHistory,
    EmptyTrainSet,
    InsufficientSamples,
    InvariantViolation,
    ShapeMismatch,
)
from bioscatter.pipeline import make_sample
from bioscatter.synth import SceneParams, generate_scene
from bioscatter.trainer import (
    DatasetSplit,
    HistoryEntry,
    TrainHistory,
    finetune,
    select_best,
    split_fixed,
    train,
)
from bioscatter.unet import UNetConfig, build_unet


@pytest.fixture(scope="module")
def samples():
    p, s = SceneParams(grid=16), PipelineSettings(grid=16)
    return [make_sample(*generate_scene(p, 500 + i), s, "truth", f"s{i}") for i in range(6)]


def _history(values, metric="dice"):
    return TrainHistory([HistoryEntry(i + 1, 0.0, v, f"epoch{i + 1:04d}") for i, v in enumerate(values)], metric)


@pytest.mark.parametrize("total,counts", [(1432, (859, 286, 287)), (300, (179, 59, 62)), (10, (6, 2, 2))])
def test_split_cardinalities(total, counts):
    items = list(range(total))
    for seed in range(5):
        sp = split_fixed(items, counts, seed)
        assert (len(sp.train), len(sp.val), len(sp.test)) == counts
        parts = [set(sp.train), set(sp.val), set(sp.test)]
        assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
    assert split_fixed(items, counts, 3).train == split_fixed(items, counts, 3).train


def test_split_errors():
    with pytest.raises(InsufficientSamples):
        split_fixed(range(5), (3, 2, 1))
    with pytest.raises(InsufficientSamples):
        split_fixed(range(5), (3, -1, 1))


def test_dataset_split_rejects_overlap(samples):
    with pytest.raises(InvariantViolation):
        DatasetSplit(train=samples[:3], val=samples[2:4])


def test_select_best():
    assert select_best(_history([0.3, 0.7, 0.5])) == "epoch0002"
    assert select_best(_history([0.7, 0.7])) == "epoch0001"
    assert select_best(_history([0.1])) == "epoch0001"
    assert select_best(_history([0.9, 0.4, 0.4], "loss")) == "epoch0002"
    with pytest.raises(EmptyHistory):
        select_best(TrainHistory())


def test_epoch_zero_is_identity(samples):
    model = build_unet(UNetConfig(2, 4), seed=2)
    before = {k: p.data.copy() for k, p in model.params.items()}
    ckpt, hist = train(model, DatasetSplit(train=samples[:4]), TrainConfig(epochs=0))
    assert hist.entries == []
    for k, v in before.items():
        assert ckpt.tensors[k].tobytes() == v.tobytes()
    ft, _ = finetune(ckpt, DatasetSplit(train=samples[:4]), TrainConfig(epochs=0), UNetConfig(2, 4))
    for k, v in before.items():
        assert ft.tensors[k].tobytes() == v.tobytes()


def test_training_reduces_loss_and_records_history(samples):
    model = build_unet(UNetConfig(2, 4), seed=0)
    cfg = TrainConfig(epochs=15, batch_size=4, lr=3e-3, seed=1)
    ckpt, hist = train(model, DatasetSplit(train=samples[:4], val=samples[4:]), cfg)
    assert len(hist.entries) == 15
    assert hist.entries[-1].train_loss < hist.entries[0].train_loss
    assert ckpt.metadata["checkpoint_id"] == select_best(hist)
    lines = hist.to_csv().splitlines()
    assert lines[0] == "epoch,train_loss,val_metric,checkpoint_id" and len(lines) == 16


def test_best_weights_are_loaded_back(samples):
    model = build_unet(UNetConfig(2, 4), seed=0)
    ckpt, _ = train(model, DatasetSplit(train=samples[:4], val=samples[4:]),
                    TrainConfig(epochs=6, selection_metric="loss", seed=0))
    for k, p in model.params.items():
        assert ckpt.tensors[k].tobytes() == p.data.tobytes()


def test_training_is_deterministic(samples):
    cfg = TrainConfig(epochs=3, batch_size=3, seed=9)
    runs = []
    for _ in range(2):
        ckpt, hist = train(build_unet(UNetConfig(2, 4), seed=7),
                           DatasetSplit(train=samples[:5], val=samples[5:]), cfg)
        runs.append((encode_checkpoint(ckpt), hist.to_csv()))
    assert runs[0] == runs[1]


def test_early_stopping(samples):
    cfg = TrainConfig(epochs=30, seed=0, lr=1e-6, patience=2, selection_metric="dice")
    _, hist = train(build_unet(UNetConfig(2, 4), seed=0), DatasetSplit(train=samples[:2], val=samples[4:]), cfg)
    assert len(hist.entries) < 30


def test_train_errors(samples):
    model = build_unet(UNetConfig(2, 4), seed=0)
    with pytest.raises(EmptyTrainSet):
        train(model, DatasetSplit(), TrainConfig(epochs=1))
    p, s = SceneParams(grid=32), PipelineSettings(grid=32)
    big = make_sample(*generate_scene(p, 1), s, "truth", "big")
    with pytest.raises(ShapeMismatch):
        train(model, DatasetSplit(train=[samples[0], big]), TrainConfig(epochs=1))


def test_finetune_checkpoint_mismatch(samples):
    ckpt = build_unet(UNetConfig(2, 4), seed=0).to_checkpoint()
    with pytest.raises(CheckpointMismatch):
        finetune(ckpt, DatasetSplit(train=samples[:2]), TrainConfig(epochs=1), UNetConfig(4, 4))


def test_finetune_starts_from_checkpoint(samples):
    pre = build_unet(UNetConfig(2, 4), seed=0)
    pre_ckpt, _ = train(pre, DatasetSplit(train=samples[:4]), TrainConfig(epochs=2, seed=0))
    ft, hist = finetune(pre_ckpt, DatasetSplit(train=samples[:4]), TrainConfig(epochs=1, seed=0))
    cont = build_unet(UNetConfig(2, 4), seed=0)
    for k, p in cont.params.items():
        p.data[...] = pre_ckpt.tensors[k]
    ref, _ = train(cont, DatasetSplit(train=samples[:4]), TrainConfig(epochs=1, seed=0))
    assert all(ft.tensors[k].tobytes() == ref.tensors[k].tobytes() for k in ref.tensors)
    assert ft.metadata["finetuned_from"] == pre_ckpt.metadata["checkpoint_id"]
    assert len(hist.entries) == 1


def test_train_config_validation():
    for bad in (dict(lr=0), dict(batch_size=0), dict(epochs=-1), dict(selection_metric="iou")):
        with pytest.raises(BadValue):
            replace(TrainConfig(), **bad)
