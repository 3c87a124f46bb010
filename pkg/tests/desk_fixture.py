"""Trained desk-profile models shared by the acceptance tests.

Training the desk profile takes about half an hour on one core, so the
resulting checkpoints are cached under ``tests/fixtures/desk`` together with a
manifest holding the config hash and loss curves.  A cached checkpoint is
used only when its hash matches ``configs/desk.toml``; otherwise it is
retrained and rewritten.  ``TYCHEKIT_RETRAIN=1`` forces retraining and checks
the fresh weights are bit-identical to the cached ones.
"""

import json
import os
from pathlib import Path

import numpy as np

from tychekit.harness.checkpoint import Checkpoint
from tychekit.harness.config import load_config
from tychekit.harness.training import TRAIN_SECTIONS, dataset_from_config, train

ROOT = Path(__file__).resolve().parents[1]
CONFIG = ROOT / "configs" / "desk.toml"
FIXTURES = ROOT / "tests" / "fixtures" / "desk"
GED_EPOCHS = 10


def desk_config():
    return load_config(CONFIG, env={})


def ged_config(cfg):
    d = cfg.to_dict()
    d["loss"]["kind"] = "ged2"
    d["train"]["epochs"] = GED_EPOCHS
    from tychekit.harness.config import config_from_dict

    return config_from_dict(d, env={})


def _same_params(a: Checkpoint, b: Checkpoint) -> bool:
    return a.params.keys() == b.params.keys() and all(
        np.array_equal(a.params[k], b.params[k]) for k in a.params
    )


def _cached(name, cfg_hash, build):
    path = FIXTURES / f"{name}.tyck"
    manifest_path = FIXTURES / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.is_file() else {}
    entry = manifest.get(name)
    retrain = os.environ.get("TYCHEKIT_RETRAIN") == "1"
    if entry and entry["config_hash"] == cfg_hash and path.is_file() and not retrain:
        return Checkpoint.load(path)
    result = build()
    ckpt = result.checkpoint
    if retrain and entry and entry["config_hash"] == cfg_hash and path.is_file():
        if not _same_params(ckpt, Checkpoint.load(path)):
            raise AssertionError(f"retrained {name} differs from the cached fixture")
    FIXTURES.mkdir(parents=True, exist_ok=True)
    ckpt.save(path)
    manifest[name] = {
        "config_hash": cfg_hash,
        "epochs": ckpt.train_state.get("epoch"),
        "loss_curve": ckpt.train_state.get("loss_curve"),
        # loss of the first optimisation step, i.e. of the untrained network
        "initial_step_loss": result.step_losses[0] if result.step_losses else None,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ckpt


def manifest_entry(name):
    return json.loads((FIXTURES / "manifest.json").read_text())[name]


def desk_checkpoint():
    cfg = desk_config()

    def build():
        return train(cfg, dataset_from_config(cfg))

    return _cached("desk", cfg.hash(TRAIN_SECTIONS), build)


def ged_checkpoint():
    cfg = desk_config()
    base = desk_checkpoint()
    gcfg = ged_config(cfg)
    key = cfg.hash(TRAIN_SECTIONS) + "+" + gcfg.hash(TRAIN_SECTIONS)

    def build():
        return train(gcfg, dataset_from_config(gcfg), init=base)

    return _cached("desk_ged2", key, build)
