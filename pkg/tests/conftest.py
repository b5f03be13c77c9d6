"""Shared fixtures: small geometries, a tiny architecture, a tiny dataset and trained run."""

import dataclasses
import json
import os

import numpy as np
import pytest

from src.nlosltm.config import TrainConfig
from src.nlosltm.evaluation import ConditionMetrics, Example, MetricsReport
from src.nlosltm.lightsim import (
    ConditionSpec,
    IlluminationModel,
    SceneGeometry,
    SurfaceModel,
    desk_conditions,
)
from src.nlosltm.networks import ArchSpec
from src.nlosltm.synthesis import generate_synthetic_dataset
from src.nlosltm.training import pretrain_autoencoder, train_joint


@pytest.fixture
def small_geom():
    """4x4 hidden plane onto an 8x8 wall patch."""
    return SceneGeometry(hidden_res=(4, 4), wall_res=(8, 8))


@pytest.fixture
def noiseless_cond():
    """Plain diffuse wall, no ambient floor, no noise, no occluder."""
    return ConditionSpec(
        id=0,
        distance_cm=70.0,
        angle_id=1,
        illumination=IlluminationModel("ambient_dark", ambient=0.0, noise_sigma=0.0),
        surface=SurfaceModel("wall", albedo=0.6, specular=0.0, texture=0.0),
    )


@pytest.fixture
def dark_wall_cond():
    return ConditionSpec.from_code("70;1;A;Wall")


@pytest.fixture
def tiny_arch():
    return ArchSpec(hidden_res=(16, 16), wall_res=(16, 16), channels=1, n_conditions=2,
                    stages=2, base_width=4, latent_channels=8, cond_dim=8, cond_widths=(4, 8),
                    disc_width=4, disc_layers=2, disc_scales=2)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Two desk conditions x (6 train + 2 test) procedural 16x16 images."""
    out = tmp_path_factory.mktemp("tiny_dataset")
    conds = desk_conditions("four-anime")[:2]
    geom = SceneGeometry(hidden_res=(16, 16), wall_res=(16, 16))
    return generate_synthetic_dataset("digits", conds, geom, {"train": 6, "test": 2}, seed=3,
                                      out_dir=str(out), workers=2)


def tiny_train_config(manifest, output_dir, **overrides):
    cfg = TrainConfig(
        manifest=os.path.join(manifest.root, "manifest.json"),
        output_dir=str(output_dir),
        seed=0,
        batch_size=4,
        ae_epochs=2,
        joint_epochs=2,
        stages=2,
        base_width=4,
        latent_channels=8,
        cond_dim=8,
        cond_widths=(4, 8),
        disc_width=4,
        disc_layers=2,
        disc_scales=2,
        perceptual_width=4,
    )
    return dataclasses.replace(cfg, **overrides)


@pytest.fixture
def train_config_factory(tiny_dataset, tmp_path):
    def make(output_dir=None, **overrides):
        return tiny_train_config(tiny_dataset, output_dir or tmp_path / "run", **overrides)
    return make


@pytest.fixture(scope="session")
def trained_run(tiny_dataset, tmp_path_factory):
    """Stage 1 + stage 2 on the tiny dataset; returns (cfg, ae_ckpt, joint_ckpt)."""
    cfg = tiny_train_config(tiny_dataset, tmp_path_factory.mktemp("run"))
    ae = pretrain_autoencoder(cfg, tiny_dataset)
    joint = train_joint(cfg, ae, tiny_dataset)
    return cfg, ae, joint


@pytest.fixture
def tmp_output(tmp_path):
    """Return a temporary directory path for output files."""
    return tmp_path


def _report(examples):
    conds = [
        ConditionMetrics(0, "100;1;A;Wall", 2, 21.4, 0.71, tikhonov_psnr=12.0, tikhonov_ssim=0.3),
        ConditionMetrics(1, "70;2;A;Wb", 0, None, None),
    ]
    overall = {"count": 2, "psnr_mean": 21.4, "ssim_mean": 0.71, "tikhonov_psnr": 12.0,
               "tikhonov_ssim": 0.3}
    return MetricsReport(conditions=conds, overall=overall, split="test", baselines=["tikhonov"],
                         config_hash="0123456789abcdef", checkpoint_id="feedbeef", examples=examples)


@pytest.fixture
def sample_report():
    """Report with two hand-made comparison triples."""
    rng = np.random.default_rng(0)
    examples = []
    for _ in range(2):
        hidden = rng.uniform(size=(16, 16, 1))
        examples.append(Example(0, rng.uniform(size=(16, 16, 1)), np.clip(hidden + 0.05, 0, 1), hidden))
    return _report(examples)


@pytest.fixture
def empty_report():
    """Report without example triples."""
    return _report([])


RECORDED_VALUES = os.path.join(os.path.dirname(__file__), "fixtures", "recorded_values.json")


def pytest_addoption(parser):
    parser.addoption("--record-values", action="store_true", default=False,
                     help=f"Rewrite the regression values in {os.path.relpath(RECORDED_VALUES)}")


class RecordedValues:
    """Regression values kept in ``tests/fixtures/recorded_values.json``.

    ``check`` compares against the stored value; a name with no stored value
    (or every name under ``--record-values``) is stored instead.
    """

    def __init__(self, path, rewrite):
        self.path = path
        self.rewrite = rewrite
        self.dirty = False
        self.values = {}
        if os.path.isfile(path):
            with open(path, encoding="utf-8") as fh:
                self.values = json.load(fh)

    def check(self, name, value, *, abs=None, rel=None):
        if self.rewrite or name not in self.values:
            self.values[name] = float(value)
            self.dirty = True
            return
        assert value == pytest.approx(self.values[name], abs=abs, rel=rel), name

    def save(self):
        if not self.dirty:
            return
        os.makedirs(os.path.dirname(self.path), exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump(self.values, fh, indent=2, sort_keys=True)
            fh.write("\n")


@pytest.fixture(scope="session")
def recorded(request):
    values = RecordedValues(RECORDED_VALUES, request.config.getoption("--record-values"))
    yield values
    values.save()
