"""Dataset generation and the denoiser training loop.

generate_dataset draws channels from A independent environments, composes
every per-element cascaded block as its own sample, attaches a pilot at a
random SNR from the configured range, and masks a random column subset at
a ratio drawn from the configured list. train() minimizes the squared
error between the drawn forward noise and the guidance-blended prediction,
with per-sample condition dropout teaching the unconditional branch.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    SystemGeometry,
    build_correlation_matrix,
    compose_cascaded,
    sample_mask,
    sample_realization,
    simulate_pilot,
    vectorize,
)
from .checkpoint import Checkpoint, load_params, save_params
from .dataio import DatasetHeader, pack_record, read_dataset, record_length
from .diffusion import build_linear_schedule, forward_jump
from .errors import ConfigError, GeometryError
from .nnet import (
    AdamState,
    ConditionVector,
    DEFAULT_ARCH,
    adam_update,
    gradients,
    init_params,
    noise_loss,
    predict_noise,
    zero_grad,
)
from .rng import derive, derive_seed

__all__ = ["TrainConfig", "generate_dataset", "train", "validate", "split_records"]


@dataclass(frozen=True)
class TrainConfig:
    geometry: SystemGeometry
    environments: int = 4
    samples_per_environment: int = 512
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    lambda2: float = 0.7
    condition_dropout: float = 0.1
    t_max: int = 500
    beta_start: float = 1e-4
    beta_end: float = 0.02
    snr_range: tuple = (-5.0, 20.0)
    mask_ratios: tuple = (0.2, 0.5)
    master_seed: int = 0
    arch: dict = field(default_factory=lambda: dict(DEFAULT_ARCH))

    def __post_init__(self):
        if min(self.environments, self.samples_per_environment, self.epochs,
               self.batch_size) < 1:
            raise ConfigError("all counts must be >= 1")
        if not (self.learning_rate > 0):
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 <= self.lambda2 <= 1.0:
            raise ConfigError(f"lambda2 must be in [0, 1], got {self.lambda2}")
        if not 0.0 <= self.condition_dropout <= 1.0:
            raise ConfigError("condition_dropout must be in [0, 1]")
        lo, hi = self.snr_range
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise ConfigError(f"invalid snr_range {self.snr_range}")
        if not self.mask_ratios:
            raise ConfigError("mask_ratios must be non-empty")
        for r in self.mask_ratios:
            if not 0.0 <= r < 1.0:
                raise ConfigError(f"mask ratio {r} outside [0, 1)")

    # ---- JSON config plumbing (strict: unknown keys are errors) ----

    _GEOMETRY_KEYS = {"n", "m1", "m2", "spacing"}
    _SCHEDULE_KEYS = {"t_max", "beta_start", "beta_end"}
    _TOP_KEYS = {"geometry", "environments", "samples_per_environment", "epochs",
                 "batch_size", "learning_rate", "lambda2", "condition_dropout",
                 "schedule", "snr_range", "mask_ratios", "master_seed", "arch"}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        if not isinstance(d, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(d) - cls._TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "geometry" not in d:
            raise ConfigError("config is missing required key 'geometry'")
        g = d["geometry"]
        bad = set(g) - cls._GEOMETRY_KEYS
        if bad:
            raise ConfigError(f"unknown geometry keys: {sorted(bad)}")
        for key in ("n", "m1", "m2"):
            if key not in g:
                raise ConfigError(f"geometry is missing required key '{key}'")
        try:
            geom = SystemGeometry(n_bs_antennas=int(g["n"]), m1_elements=int(g["m1"]),
                                  m2_elements=int(g["m2"]),
                                  element_spacing=float(g.get("spacing", 0.25)))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        kwargs = {"geometry": geom}
        sched = d.get("schedule", {})
        bad = set(sched) - cls._SCHEDULE_KEYS
        if bad:
            raise ConfigError(f"unknown schedule keys: {sorted(bad)}")
        if "t_max" in sched:
            kwargs["t_max"] = int(sched["t_max"])
        if "beta_start" in sched:
            kwargs["beta_start"] = float(sched["beta_start"])
        if "beta_end" in sched:
            kwargs["beta_end"] = float(sched["beta_end"])
        if "arch" in d:
            bad = set(d["arch"]) - set(DEFAULT_ARCH)
            if bad:
                raise ConfigError(f"unknown arch keys: {sorted(bad)}")
            kwargs["arch"] = {**DEFAULT_ARCH, **d["arch"]}
        for key in ("environments", "samples_per_environment", "epochs",
                    "batch_size", "master_seed"):
            if key in d:
                kwargs[key] = int(d[key])
        for key in ("learning_rate", "lambda2", "condition_dropout"):
            if key in d:
                kwargs[key] = float(d[key])
        if "snr_range" in d:
            pair = d["snr_range"]
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise ConfigError("snr_range must be [low_db, high_db]")
            kwargs["snr_range"] = (float(pair[0]), float(pair[1]))
        if "mask_ratios" in d:
            ratios = d["mask_ratios"]
            if not isinstance(ratios, (list, tuple)):
                raise ConfigError("mask_ratios must be a list")
            kwargs["mask_ratios"] = tuple(float(r) for r in ratios)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        """Every field materialized (defaults included) for the run manifest."""
        g = self.geometry
        return {
            "geometry": {"n": g.n_bs_antennas, "m1": g.m1_elements,
                         "m2": g.m2_elements, "spacing": g.element_spacing},
            "environments": self.environments,
            "samples_per_environment": self.samples_per_environment,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "lambda2": self.lambda2,
            "condition_dropout": self.condition_dropout,
            "schedule": {"t_max": self.t_max, "beta_start": self.beta_start,
                         "beta_end": self.beta_end},
            "snr_range": list(self.snr_range),
            "mask_ratios": list(self.mask_ratios),
            "master_seed": self.master_seed,
            "arch": dict(self.arch),
        }

    def geometry_dict(self) -> dict:
        g = self.geometry
        return {"n": g.n_bs_antennas, "m1": g.m1_elements, "m2": g.m2_elements,
                "spacing": g.element_spacing}

    def schedule_dict(self) -> dict:
        return {"t_max": self.t_max, "beta_start": self.beta_start,
                "beta_end": self.beta_end}


def generate_dataset(cfg: TrainConfig, out_path) -> DatasetHeader:
    """Write the training dataset; returns its header.

    Record count = environments * samples_per_environment * M1. Streams are
    derived per (environment, realization), so generation order never
    changes the file contents.
    """
    geom = cfg.geometry
    corr1 = build_correlation_matrix(geom.m1_elements, geom.element_spacing)
    corr2 = build_correlation_matrix(geom.m2_elements, geom.element_spacing)
    lo, hi = cfg.snr_range
    records = []
    for env in range(cfg.environments):
        for r in range(cfg.samples_per_environment):
            rng = derive(cfg.master_seed, "data", env, r)
            real = sample_realization(geom, corr1, corr2, rng)
            snr_db = float(rng.uniform(lo, hi))
            obs = simulate_pilot(real, snr_db, rng, geom=geom)
            for m in range(1, geom.m1_elements + 1):
                ratio = cfg.mask_ratios[int(rng.integers(len(cfg.mask_ratios)))]
                mask = sample_mask(geom.m2_elements, ratio,
                                   derive_seed(cfg.master_seed, "mask", env, r, m))
                block = compose_cascaded(real, m)
                records.append(pack_record(block.b_matrix, mask.indicator(),
                                           obs.y, snr_db))
    header = DatasetHeader(n=geom.n_bs_antennas, m1=geom.m1_elements,
                           m2=geom.m2_elements, spacing=geom.element_spacing,
                           seed=cfg.master_seed, sample_count=len(records))
    from .dataio import write_dataset
    write_dataset(out_path, header, np.stack(records))
    return header


def split_records(records: np.ndarray, n: int, m2: int):
    """Split raw records into the training views.

    Returns (x0, indicator, pilot, partial): x0 is the vectorized full
    block, partial is x0 with hidden columns zeroed (derived, not stored).
    """
    d = 2 * n * m2
    x0 = records[:, :d]
    indicator = records[:, d:d + m2]
    pilot = records[:, d + m2:d + m2 + 2 * n]
    col_mask = np.repeat(indicator, n, axis=1)
    partial = x0 * np.concatenate([col_mask, col_mask], axis=1)
    return x0, indicator, pilot, partial


def _blended_prediction(params, x_t, t, cond, lambda2):
    """Guidance blend as a graph op so gradients reach both branches."""
    if lambda2 == 0.0:
        return predict_noise(params, x_t, t, None)
    if lambda2 == 1.0:
        return predict_noise(params, x_t, t, cond)
    eps_c = predict_noise(params, x_t, t, cond)
    eps_u = predict_noise(params, x_t, t, None)
    return eps_c * lambda2 + eps_u * (1.0 - lambda2)


def _check_dataset_matches(cfg: TrainConfig, header):
    g = cfg.geometry
    if (header.n, header.m1, header.m2) != (g.n_bs_antennas, g.m1_elements,
                                            g.m2_elements):
        raise GeometryError(
            f"dataset geometry (N={header.n}, M1={header.m1}, M2={header.m2}) "
            f"does not match config (N={g.n_bs_antennas}, M1={g.m1_elements}, "
            f"M2={g.m2_elements})"
        )


def train(cfg: TrainConfig, dataset_path, out_path, *, log_path=None,
          resume_from=None, progress=None):
    """Run the training loop; checkpoints atomically after every epoch.

    Returns the per-epoch [(epoch, mean_loss), ...] history of this run.
    ``progress(epoch, mean_loss)`` fires after each epoch's checkpoint is
    on disk, so an interrupt at any point leaves a loadable model behind.
    ``resume_from`` continues epoch numbering up to cfg.epochs.
    """
    header, records = read_dataset(dataset_path)
    _check_dataset_matches(cfg, header)
    n, m2 = header.n, header.m2
    x0, indicator, pilot, partial = split_records(records, n, m2)
    count, x_dim = x0.shape
    cond_in_dim = 2 * n + x_dim + m2

    schedule = build_linear_schedule(cfg.t_max, cfg.beta_start, cfg.beta_end)
    if resume_from is not None:
        ckpt = load_params(resume_from)
        if ckpt.geometry != cfg.geometry_dict():
            raise GeometryError("resume checkpoint geometry does not match config")
        if ckpt.schedule != cfg.schedule_dict():
            raise ConfigError("resume checkpoint schedule does not match config")
        params = ckpt.params
        start_epoch = ckpt.epoch
    else:
        params = init_params(x_dim, cond_in_dim,
                             seed=derive_seed(cfg.master_seed, "params"),
                             arch=cfg.arch)
        start_epoch = 0

    opt = AdamState()
    meta = {"lambda2": cfg.lambda2, "condition_dropout": cfg.condition_dropout,
            "learning_rate": cfg.learning_rate, "batch_size": cfg.batch_size,
            "master_seed": cfg.master_seed}
    history = []
    log_f = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for epoch in range(start_epoch + 1, cfg.epochs + 1):
            t_start = time.monotonic()
            rng = derive(cfg.master_seed, "train", epoch)
            order = rng.permutation(count)
            total = 0.0
            for lo_i in range(0, count, cfg.batch_size):
                idx = order[lo_i:lo_i + cfg.batch_size]
                b = idx.size
                t = rng.integers(1, cfg.t_max + 1, size=b)
                x_t, eps = forward_jump(x0[idx], schedule, t, rng)
                keep = (rng.uniform(size=b) >= cfg.condition_dropout).astype(float)
                cond = ConditionVector(pilot=pilot[idx], partial_channel=partial[idx],
                                       indicator=indicator[idx], present=keep)
                zero_grad(params)
                loss = noise_loss(eps, _blended_prediction(params, x_t, t, cond,
                                                           cfg.lambda2))
                if not np.isfinite(loss.data):
                    raise FloatingPointError(
                        f"non-finite loss at epoch {epoch}, batch {lo_i // cfg.batch_size}"
                    )
                grads = gradients(params, loss)
                adam_update(params, grads, opt, lr=cfg.learning_rate)
                total += float(loss.data) * b
            mean_loss = total / count
            wall_ms = (time.monotonic() - t_start) * 1000.0
            save_params(params, out_path, geometry=cfg.geometry_dict(),
                        schedule=cfg.schedule_dict(), epoch=epoch, meta=meta)
            if log_f is not None:
                log_f.write(json.dumps({"epoch": epoch, "mean_loss": mean_loss,
                                        "wall_ms": wall_ms}) + "\n")
                log_f.flush()
            history.append((epoch, mean_loss))
            if progress is not None:
                progress(epoch, mean_loss)
    finally:
        if log_f is not None:
            log_f.close()
    return history


def validate(ckpt: Checkpoint, dataset_path, *, repeats: int = 4, seed: int = 0,
             batch_size: int = 256) -> float:
    """Training-objective loss on held-out data, no updates.

    Uses the checkpoint's own guidance weight and dropout probability so the
    number is comparable with training-epoch losses; averages ``repeats``
    passes with fresh step draws to tame the step-sampling noise.
    """
    header, records = read_dataset(dataset_path)
    geom_d = ckpt.geometry
    if (header.n, header.m1, header.m2) != (geom_d["n"], geom_d["m1"], geom_d["m2"]):
        raise GeometryError("validation dataset geometry does not match checkpoint")
    n, m2 = header.n, header.m2
    x0, indicator, pilot, partial = split_records(records, n, m2)
    count = x0.shape[0]
    schedule = build_linear_schedule(ckpt.schedule["t_max"],
                                     ckpt.schedule["beta_start"],
                                     ckpt.schedule["beta_end"])
    lambda2 = ckpt.meta.get("lambda2", 0.7)
    dropout = ckpt.meta.get("condition_dropout", 0.1)
    total = 0.0
    for rep in range(repeats):
        rng = derive(seed, "val", rep)
        for lo_i in range(0, count, batch_size):
            sl = slice(lo_i, min(lo_i + batch_size, count))
            b = sl.stop - sl.start
            t = rng.integers(1, schedule.t_max + 1, size=b)
            x_t, eps = forward_jump(x0[sl], schedule, t, rng)
            keep = (rng.uniform(size=b) >= dropout).astype(float)
            cond = ConditionVector(pilot=pilot[sl], partial_channel=partial[sl],
                                   indicator=indicator[sl], present=keep)
            loss = noise_loss(eps, _blended_prediction(ckpt.params, x_t, t, cond,
                                                       lambda2))
            total += float(loss.data) * b
    return total / (count * repeats)
