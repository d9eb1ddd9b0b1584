import hashlib
import json

import numpy as np
import pytest

from risdiff.channel import SystemGeometry
from risdiff.checkpoint import Checkpoint, load_params, save_params
from risdiff.dataio import DatasetHeader, read_dataset, write_dataset
from risdiff.diffusion import GuidanceConfig, build_linear_schedule, sample
from risdiff.errors import ConfigError, GeometryError
from risdiff.nnet import init_params, predict_noise
from risdiff.rng import derive
from risdiff.training import (
    TrainConfig,
    generate_dataset,
    split_records,
    train,
    validate,
)

SMALL_ARCH = {"hidden_layers": 2, "width": 16, "activation": "silu",
              "step_dim": 4, "cond_dim": 8}


def small_cfg(**over):
    base = dict(
        geometry=SystemGeometry(n_bs_antennas=1, m1_elements=2, m2_elements=4),
        environments=1, samples_per_environment=8, epochs=5, batch_size=8,
        learning_rate=1e-3, lambda2=0.7, condition_dropout=0.1,
        t_max=50, beta_start=1e-3, beta_end=0.05, snr_range=(0.0, 10.0),
        mask_ratios=(0.25,), master_seed=7, arch=SMALL_ARCH,
    )
    base.update(over)
    return TrainConfig(**base)


def sha256(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


class TestConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="bogus"):
            TrainConfig.from_dict({"geometry": {"n": 1, "m1": 1, "m2": 2},
                                   "bogus": 1})

    def test_nested_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"geometry": {"n": 1, "m1": 1, "m2": 2,
                                                "rows": 4}})
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"geometry": {"n": 1, "m1": 1, "m2": 2},
                                   "schedule": {"tmax": 10}})

    def test_missing_geometry_rejected(self):
        with pytest.raises(ConfigError, match="geometry"):
            TrainConfig.from_dict({"epochs": 3})

    def test_defaults_materialized(self):
        cfg = TrainConfig.from_dict({"geometry": {"n": 4, "m1": 16, "m2": 16}})
        d = cfg.to_dict()
        assert d["environments"] == 4
        assert d["samples_per_environment"] == 512
        assert d["epochs"] == 50
        assert d["schedule"] == {"t_max": 500, "beta_start": 1e-4,
                                 "beta_end": 0.02}
        assert d["mask_ratios"] == [0.2, 0.5]
        assert d["lambda2"] == 0.7
        assert d["geometry"]["spacing"] == 0.25

    def test_round_trip(self):
        cfg = small_cfg()
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_invalid_values_rejected(self):
        with pytest.raises(ConfigError):
            small_cfg(lambda2=1.5)
        with pytest.raises(ConfigError):
            small_cfg(learning_rate=0.0)
        with pytest.raises(ConfigError):
            small_cfg(snr_range=(5.0, -5.0))
        with pytest.raises(ConfigError):
            small_cfg(mask_ratios=())


class TestGenerateDataset:
    def test_record_count(self, tmp_path):
        cfg = small_cfg(geometry=SystemGeometry(1, 2, 4),
                        environments=1, samples_per_environment=1)
        header = generate_dataset(cfg, tmp_path / "d.cdmds")
        assert header.sample_count == 2  # one realization, M1=2 blocks

    def test_same_seed_byte_identical(self, tmp_path):
        cfg = small_cfg()
        generate_dataset(cfg, tmp_path / "a.cdmds")
        generate_dataset(cfg, tmp_path / "b.cdmds")
        assert sha256(tmp_path / "a.cdmds") == sha256(tmp_path / "b.cdmds")

    def test_partial_channel_invariant(self, tmp_path):
        cfg = small_cfg()
        generate_dataset(cfg, tmp_path / "d.cdmds")
        header, records = read_dataset(tmp_path / "d.cdmds")
        x0, indicator, pilot, partial = split_records(records, header.n, header.m2)
        n = header.n
        for k in range(records.shape[0]):
            cols = np.concatenate([np.repeat(indicator[k], n)] * 2)
            assert np.array_equal(partial[k][cols == 1.0], x0[k][cols == 1.0])
            assert np.all(partial[k][cols == 0.0] == 0.0)
            # hidden count honors the configured ratio
            hidden = int(np.sum(indicator[k] == 0.0))
            assert hidden == round(0.25 * header.m2)

    def test_snr_within_range(self, tmp_path):
        cfg = small_cfg(snr_range=(3.0, 4.0))
        generate_dataset(cfg, tmp_path / "d.cdmds")
        _, records = read_dataset(tmp_path / "d.cdmds")
        snr = records[:, -1]
        assert np.all(snr >= 3.0) and np.all(snr <= 4.0)


class TestTrain:
    def test_overfit_single_sample(self, tmp_path):
        cfg = small_cfg(geometry=SystemGeometry(1, 1, 2), environments=1,
                        samples_per_environment=1, epochs=200, batch_size=1,
                        mask_ratios=(0.5,), t_max=20)
        generate_dataset(cfg, tmp_path / "d.cdmds")
        history = train(cfg, tmp_path / "d.cdmds", tmp_path / "m.ckpt")
        assert history[-1][1] < history[0][1]

    def test_loss_decreases_over_first_epochs(self, tmp_path):
        cfg = small_cfg(epochs=10, samples_per_environment=16)
        generate_dataset(cfg, tmp_path / "d.cdmds")
        history = train(cfg, tmp_path / "d.cdmds", tmp_path / "m.ckpt")
        assert history[9][1] < history[0][1]

    def test_checkpoint_reproducibility(self, tmp_path):
        cfg = small_cfg(epochs=3)
        generate_dataset(cfg, tmp_path / "d.cdmds")
        train(cfg, tmp_path / "d.cdmds", tmp_path / "a.ckpt")
        train(cfg, tmp_path / "d.cdmds", tmp_path / "b.ckpt")
        assert sha256(tmp_path / "a.ckpt") == sha256(tmp_path / "b.ckpt")

    def test_lambda_zero_ignores_condition_contents(self, tmp_path):
        cfg = small_cfg(lambda2=0.0, epochs=2)
        generate_dataset(cfg, tmp_path / "d.cdmds")
        header, records = read_dataset(tmp_path / "d.cdmds")
        # scramble every conditioning field (pilot and indicator; the partial
        # channel is derived from the indicator)
        d = 2 * header.n * header.m2
        tampered = records.copy()
        rng = derive(99, "tamper")
        tampered[:, d:d + header.m2] = (rng.uniform(size=(records.shape[0],
                                                          header.m2)) > 0.5)
        tampered[:, d + header.m2:-1] = rng.standard_normal(
            (records.shape[0], 2 * header.n))
        write_dataset(tmp_path / "t.cdmds", header, tampered)
        train(cfg, tmp_path / "d.cdmds", tmp_path / "a.ckpt")
        train(cfg, tmp_path / "t.cdmds", tmp_path / "b.ckpt")
        pa = load_params(tmp_path / "a.ckpt").params
        pb = load_params(tmp_path / "b.ckpt").params
        for name, t in pa.items():
            assert np.array_equal(t.data, pb.tensors[name].data)

    def test_full_dropout_makes_branches_coincide(self, tmp_path):
        cfg = small_cfg(condition_dropout=1.0, epochs=3)
        generate_dataset(cfg, tmp_path / "d.cdmds")
        train(cfg, tmp_path / "d.cdmds", tmp_path / "m.ckpt")
        ckpt = load_params(tmp_path / "m.ckpt")
        header, records = read_dataset(tmp_path / "d.cdmds")
        x0, indicator, pilot, partial = split_records(records, header.n, header.m2)
        from risdiff.nnet import ConditionVector
        cond = ConditionVector(pilot=pilot[0], partial_channel=partial[0],
                               indicator=indicator[0])
        x = derive(1, "probe").standard_normal(x0.shape[1])
        with_cond = predict_noise(ckpt.params, x, 5, cond).data
        without = predict_noise(ckpt.params, x, 5, None).data
        assert np.array_equal(with_cond, without)

    def test_geometry_mismatch_rejected(self, tmp_path):
        cfg = small_cfg()
        generate_dataset(cfg, tmp_path / "d.cdmds")
        other = small_cfg(geometry=SystemGeometry(2, 2, 4))
        with pytest.raises(GeometryError):
            train(other, tmp_path / "d.cdmds", tmp_path / "m.ckpt")

    def test_non_finite_data_aborts(self, tmp_path):
        cfg = small_cfg(epochs=1)
        generate_dataset(cfg, tmp_path / "d.cdmds")
        header, records = read_dataset(tmp_path / "d.cdmds")
        poisoned = records.copy()
        poisoned[0, 0] = np.inf
        write_dataset(tmp_path / "p.cdmds", header, poisoned)
        with np.errstate(all="ignore"), pytest.raises(FloatingPointError):
            train(cfg, tmp_path / "p.cdmds", tmp_path / "m.ckpt")

    def test_resume_continues_epoch_numbering(self, tmp_path):
        cfg3 = small_cfg(epochs=3)
        generate_dataset(cfg3, tmp_path / "d.cdmds")
        train(cfg3, tmp_path / "d.cdmds", tmp_path / "m.ckpt")
        assert load_params(tmp_path / "m.ckpt").epoch == 3
        cfg5 = small_cfg(epochs=5)
        history = train(cfg5, tmp_path / "d.cdmds", tmp_path / "m.ckpt",
                        resume_from=tmp_path / "m.ckpt")
        assert [e for e, _ in history] == [4, 5]
        assert load_params(tmp_path / "m.ckpt").epoch == 5

    def test_interrupt_leaves_valid_checkpoint(self, tmp_path):
        cfg = small_cfg(epochs=10)
        generate_dataset(cfg, tmp_path / "d.cdmds")

        def bomb(epoch, loss):
            if epoch == 2:
                raise KeyboardInterrupt

        with pytest.raises(KeyboardInterrupt):
            train(cfg, tmp_path / "d.cdmds", tmp_path / "m.ckpt", progress=bomb)
        ckpt = load_params(tmp_path / "m.ckpt")  # loads cleanly
        assert ckpt.epoch == 2

    def test_training_log_jsonl(self, tmp_path):
        cfg = small_cfg(epochs=4)
        generate_dataset(cfg, tmp_path / "d.cdmds")
        train(cfg, tmp_path / "d.cdmds", tmp_path / "m.ckpt",
              log_path=tmp_path / "train.log")
        lines = (tmp_path / "train.log").read_text().strip().splitlines()
        assert len(lines) == 4
        for i, line in enumerate(lines, start=1):
            entry = json.loads(line)
            assert entry["epoch"] == i
            assert entry["mean_loss"] >= 0.0
            assert entry["wall_ms"] > 0.0


class TestValidate:
    def test_untrained_zero_net_scores_dimension(self, tmp_path):
        cfg = small_cfg(samples_per_environment=32)
        generate_dataset(cfg, tmp_path / "d.cdmds")
        header, _ = read_dataset(tmp_path / "d.cdmds")
        dim = 2 * header.n * header.m2
        params = init_params(dim, 2 * header.n + dim + header.m2,
                             seed=0, arch=SMALL_ARCH)
        ckpt = Checkpoint(params=params,
                          geometry={"n": header.n, "m1": header.m1,
                                    "m2": header.m2, "spacing": header.spacing},
                          schedule={"t_max": 50, "beta_start": 1e-3,
                                    "beta_end": 0.05},
                          epoch=0, meta={"lambda2": 0.7, "condition_dropout": 0.1})
        loss = validate(ckpt, tmp_path / "d.cdmds", repeats=8)
        assert loss == pytest.approx(dim, rel=0.10)

    def test_val_matches_train_on_identical_data(self, tmp_path):
        cfg = small_cfg(geometry=SystemGeometry(1, 2, 4), environments=1,
                        samples_per_environment=64, epochs=40, batch_size=16,
                        arch={"hidden_layers": 2, "width": 32,
                              "activation": "silu", "step_dim": 8,
                              "cond_dim": 16})
        generate_dataset(cfg, tmp_path / "d.cdmds")
        history = train(cfg, tmp_path / "d.cdmds", tmp_path / "m.ckpt")
        final_train = history[-1][1]
        ckpt = load_params(tmp_path / "m.ckpt")
        val = validate(ckpt, tmp_path / "d.cdmds", repeats=10)
        assert val == pytest.approx(final_train, rel=0.05)

    def test_loss_non_negative(self, tmp_path):
        cfg = small_cfg(epochs=2)
        generate_dataset(cfg, tmp_path / "d.cdmds")
        train(cfg, tmp_path / "d.cdmds", tmp_path / "m.ckpt")
        ckpt = load_params(tmp_path / "m.ckpt")
        assert validate(ckpt, tmp_path / "d.cdmds") >= 0.0

    def test_geometry_mismatch(self, tmp_path):
        cfg = small_cfg(epochs=1)
        generate_dataset(cfg, tmp_path / "d.cdmds")
        train(cfg, tmp_path / "d.cdmds", tmp_path / "m.ckpt")
        other = small_cfg(geometry=SystemGeometry(2, 2, 4), epochs=1)
        generate_dataset(other, tmp_path / "o.cdmds")
        ckpt = load_params(tmp_path / "m.ckpt")
        with pytest.raises(GeometryError):
            validate(ckpt, tmp_path / "o.cdmds")


class TestToyGaussianEndToEnd:
    """Train on a hand-built 2-D Gaussian and check the sampler reproduces
    its mean and covariance. Shared oracle for the training loop and the
    reverse sampler."""

    MU = np.array([1.2, -0.8])
    COV = np.array([[0.81, 0.2], [0.2, 1.0]])

    def test_sampled_population_matches_target(self, tmp_path):
        rng = derive(2024, "toy")
        chol = np.linalg.cholesky(self.COV)
        draws = self.MU + rng.standard_normal((4096, 2)) @ chol.T
        # pack as degenerate-geometry records: complex scalar block per sample
        records = np.zeros((4096, 6))
        records[:, 0] = draws[:, 0]
        records[:, 1] = draws[:, 1]
        records[:, 2] = 1.0  # indicator: the single column is observed
        header = DatasetHeader(n=1, m1=1, m2=1, spacing=0.25, seed=2024,
                               sample_count=4096)
        write_dataset(tmp_path / "toy.cdmds", header, records)

        cfg = TrainConfig(
            geometry=SystemGeometry(1, 1, 1), environments=1,
            samples_per_environment=4096, epochs=400, batch_size=256,
            learning_rate=1e-3, lambda2=0.0, condition_dropout=0.0,
            t_max=300, beta_start=1e-3, beta_end=0.05, snr_range=(0.0, 0.0),
            mask_ratios=(0.0,), master_seed=11,
            arch={"hidden_layers": 2, "width": 64, "activation": "silu",
                  "step_dim": 16, "cond_dim": 4},
        )
        train(cfg, tmp_path / "toy.cdmds", tmp_path / "toy.ckpt")
        ckpt = load_params(tmp_path / "toy.ckpt")
        schedule = build_linear_schedule(300, 1e-3, 0.05)

        def predict(x, t, cond):
            return predict_noise(ckpt.params, x, t, cond).data

        samples = sample(predict, None, schedule, GuidanceConfig(0.0),
                         derive(12, "gen"), (10_000, 2))
        mu_hat = samples.mean(axis=0)
        cov_hat = np.cov(samples.T)
        assert np.linalg.norm(mu_hat - self.MU) / np.linalg.norm(self.MU) < 0.10
        assert (np.linalg.norm(cov_hat - self.COV) / np.linalg.norm(self.COV)
                < 0.10)
