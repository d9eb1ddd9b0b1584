"""Estimation accuracy metric, classical baselines, and the sweep harness.

The sweep walks a grid of (geometry, mask ratio, SNR) cells, draws fresh
channel realizations per cell, runs every requested estimator on the same
draws (common random numbers), and aggregates per-trial normalized errors
into one record per method. Records serialize to a fixed-schema CSV that
downstream plotting consumes.
"""

from __future__ import annotations

import csv
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import (
    SpatialCorrelation,
    SystemGeometry,
    apply_mask,
    build_correlation_matrix,
    compose_cascaded,
    devectorize,
    sample_mask,
    sample_realization,
    simulate_pilot,
    vectorize,
)
from .checkpoint import Checkpoint
from .diffusion import GuidanceConfig, build_linear_schedule, sample
from .errors import ConfigError, GeometryError
from .nnet import ConditionVector, predict_noise
from .rng import derive, derive_seed

#: Estimators the sweep knows how to run. "cdm_raw" is the diffusion
#: estimate without the data-consistency projection; "cdm" overwrites the
#: observed columns with their known values after sampling.
METHOD_NAMES = ("zero_fill", "lmmse", "cdm", "cdm_raw")

#: CSV schema, in column order. Header row is always written.
CSV_COLUMNS = (
    "method", "snr_db", "rho", "n", "m1", "m2",
    "lambda2", "n_trials", "nmse_mean", "nmse_std", "seed",
)


@dataclass(frozen=True)
class EvalRecord:
    """Aggregated result of one sweep cell for one estimator."""

    method: str
    snr_db: float
    rho: float
    n: int
    m1: int
    m2: int
    lambda2: float
    n_trials: int
    nmse_mean: float
    nmse_std: float
    seed: int

    def __post_init__(self):
        if self.method not in METHOD_NAMES:
            raise ValueError(f"unknown method {self.method!r}")
        if self.n_trials < 1:
            raise ValueError(f"n_trials must be >= 1, got {self.n_trials}")
        if not self.nmse_mean >= 0.0:
            raise ValueError(f"nmse_mean must be >= 0, got {self.nmse_mean}")
        if not self.nmse_std >= 0.0:
            raise ValueError(f"nmse_std must be >= 0, got {self.nmse_std}")

    def csv_row(self) -> list[str]:
        return [
            self.method,
            repr(float(self.snr_db)),
            repr(float(self.rho)),
            str(self.n),
            str(self.m1),
            str(self.m2),
            repr(float(self.lambda2)),
            str(self.n_trials),
            repr(float(self.nmse_mean)),
            repr(float(self.nmse_std)),
            str(self.seed),
        ]


_SWEEP_KEYS = {
    "geometries", "snr_dbs", "mask_ratios", "methods",
    "trials_per_cell", "lambda2_values", "master_seed",
}
_GEOMETRY_KEYS = {"n", "m1", "m2", "spacing"}


@dataclass(frozen=True)
class SweepConfig:
    """Full description of one evaluation grid."""

    geometries: tuple[SystemGeometry, ...]
    snr_dbs: tuple[float, ...]
    mask_ratios: tuple[float, ...]
    methods: tuple[str, ...] = ("zero_fill", "lmmse", "cdm")
    trials_per_cell: int = 500
    lambda2_values: tuple[float, ...] = (0.7,)
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "geometries", tuple(self.geometries))
        object.__setattr__(self, "snr_dbs", tuple(float(s) for s in self.snr_dbs))
        object.__setattr__(self, "mask_ratios",
                           tuple(float(r) for r in self.mask_ratios))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "lambda2_values",
                           tuple(float(v) for v in self.lambda2_values))
        for name in ("geometries", "snr_dbs", "mask_ratios", "methods",
                     "lambda2_values"):
            if not getattr(self, name):
                raise ConfigError(f"sweep grid {name!r} must be non-empty")
        for g in self.geometries:
            if not isinstance(g, SystemGeometry):
                raise ConfigError("geometries must hold SystemGeometry entries")
        for m in self.methods:
            if m not in METHOD_NAMES:
                raise ConfigError(
                    f"unknown method {m!r}; expected one of {METHOD_NAMES}")
        for r in self.mask_ratios:
            if not 0.0 <= r < 1.0:
                raise ConfigError(f"mask ratio must be in [0, 1), got {r}")
        for v in self.lambda2_values:
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"lambda2 must be in [0, 1], got {v}")
        if self.trials_per_cell < 1:
            raise ConfigError(
                f"trials_per_cell must be >= 1, got {self.trials_per_cell}")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        if not isinstance(d, dict):
            raise ConfigError("sweep config must be a JSON object")
        unknown = set(d) - _SWEEP_KEYS
        if unknown:
            raise ConfigError(f"unknown sweep config keys: {sorted(unknown)}")
        for req in ("geometries", "snr_dbs", "mask_ratios"):
            if req not in d:
                raise ConfigError(f"missing sweep config key: {req!r}")
        geoms = []
        for g in d["geometries"]:
            if not isinstance(g, dict):
                raise ConfigError("each geometry must be a JSON object")
            unknown = set(g) - _GEOMETRY_KEYS
            if unknown:
                raise ConfigError(f"unknown geometry keys: {sorted(unknown)}")
            for req in ("n", "m1", "m2"):
                if req not in g:
                    raise ConfigError(f"missing geometry key: {req!r}")
            geoms.append(SystemGeometry(
                n_bs_antennas=int(g["n"]),
                m1_elements=int(g["m1"]),
                m2_elements=int(g["m2"]),
                element_spacing=float(g.get("spacing", 0.25)),
            ))
        kwargs = {}
        if "methods" in d:
            kwargs["methods"] = tuple(str(m) for m in d["methods"])
        if "trials_per_cell" in d:
            kwargs["trials_per_cell"] = int(d["trials_per_cell"])
        if "lambda2_values" in d:
            kwargs["lambda2_values"] = tuple(float(v) for v in d["lambda2_values"])
        if "master_seed" in d:
            kwargs["master_seed"] = int(d["master_seed"])
        return cls(
            geometries=tuple(geoms),
            snr_dbs=tuple(float(s) for s in d["snr_dbs"]),
            mask_ratios=tuple(float(r) for r in d["mask_ratios"]),
            **kwargs,
        )

    def to_dict(self) -> dict:
        return {
            "geometries": [
                {"n": g.n_bs_antennas, "m1": g.m1_elements,
                 "m2": g.m2_elements, "spacing": g.element_spacing}
                for g in self.geometries
            ],
            "snr_dbs": list(self.snr_dbs),
            "mask_ratios": list(self.mask_ratios),
            "methods": list(self.methods),
            "trials_per_cell": self.trials_per_cell,
            "lambda2_values": list(self.lambda2_values),
            "master_seed": self.master_seed,
        }


def nmse(b_hat: np.ndarray, b_true: np.ndarray) -> float:
    """Single-trial normalized squared error ||b_hat - b_true||^2 / ||b_true||^2.

    Expectations over trials are taken by the sweep harness, not here.
    """
    b_hat = np.asarray(b_hat)
    b_true = np.asarray(b_true)
    if b_hat.shape != b_true.shape:
        raise ValueError(
            f"shape mismatch: estimate {b_hat.shape} vs truth {b_true.shape}")
    denom = float(np.vdot(b_true, b_true).real)
    if denom == 0.0:
        raise ValueError("ground truth has zero norm")
    diff = b_hat - b_true
    return float(np.vdot(diff, diff).real) / denom


def zero_fill_baseline(partial: np.ndarray, indicator: np.ndarray) -> np.ndarray:
    """Floor baseline: keep observed columns, leave hidden columns at zero."""
    partial = np.asarray(partial)
    indicator = np.asarray(indicator)
    if partial.ndim != 2 or partial.shape[1] != indicator.shape[0]:
        raise GeometryError(
            f"partial shape {partial.shape} does not match indicator length "
            f"{indicator.shape}")
    return np.array(partial, copy=True)


def lmmse_oracle(
    partial: np.ndarray,
    indicator: np.ndarray,
    corr2: SpatialCorrelation,
    noise_variance: float,
) -> np.ndarray:
    """Conditional-mean reference estimator using the true column statistics.

    Each BS-antenna row of the cascaded block is a zero-mean complex vector
    whose column covariance is the entrywise square of the element
    correlation (the row is a product of two draws that are each correlated
    by corr2, so second moments multiply). Hidden entries are filled with
    the Gaussian conditional mean given the observed entries; observed
    entries pass through unchanged.
    """
    partial = np.asarray(partial)
    indicator = np.asarray(indicator, dtype=np.float64)
    m2 = corr2.dimension
    if partial.ndim != 2 or partial.shape[1] != m2 or indicator.shape != (m2,):
        raise GeometryError(
            f"partial shape {partial.shape} / indicator shape {indicator.shape} "
            f"do not match correlation dimension {m2}")
    if noise_variance < 0.0:
        raise ValueError(f"noise_variance must be >= 0, got {noise_variance}")
    observed = np.flatnonzero(indicator > 0.5)
    hidden = np.flatnonzero(indicator <= 0.5)
    if observed.size == 0:
        raise ValueError("observed set is empty")
    estimate = np.array(partial, copy=True)
    if hidden.size == 0:
        return estimate
    cov = corr2.matrix * corr2.matrix
    cov_oo = cov[np.ix_(observed, observed)].copy()
    cov_oo[np.diag_indices_from(cov_oo)] += noise_variance + 1e-12
    cov_oh = cov[np.ix_(observed, hidden)]
    try:
        gains = np.linalg.solve(cov_oo, cov_oh)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "singular observed-block covariance after regularization") from exc
    estimate[:, hidden] = partial[:, observed] @ gains
    return estimate


def _check_estimate_geometry(geom: SystemGeometry, partial, indicator, pilot):
    n, m2 = geom.n_bs_antennas, geom.m2_elements
    if partial.shape[-2:] != (n, m2):
        raise GeometryError(
            f"partial block shape {partial.shape[-2:]} does not match "
            f"checkpoint geometry ({n}, {m2})")
    if indicator.shape[-1] != m2:
        raise GeometryError(
            f"indicator length {indicator.shape[-1]} does not match M2={m2}")
    if pilot.shape[-1] != n:
        raise GeometryError(
            f"pilot length {pilot.shape[-1]} does not match N={n}")


def _cdm_estimate_batch(
    ckpt: Checkpoint,
    partials: np.ndarray,
    indicators: np.ndarray,
    pilots: np.ndarray,
    cfg: GuidanceConfig,
    rng: np.random.Generator,
    *,
    data_consistency: bool = True,
    literal_variance_term: bool = False,
) -> np.ndarray:
    """Run one reverse chain per trial, batched, and devectorize each result."""
    geom = ckpt.system_geometry()
    n, m2 = geom.n_bs_antennas, geom.m2_elements
    partials = np.asarray(partials, dtype=np.complex128)
    indicators = np.asarray(indicators, dtype=np.float64)
    pilots = np.asarray(pilots, dtype=np.complex128)
    _check_estimate_geometry(geom, partials, indicators, pilots)
    k = partials.shape[0]
    cond = ConditionVector(
        pilot=np.concatenate([pilots.real, pilots.imag], axis=-1),
        partial_channel=np.stack([vectorize(p) for p in partials]),
        indicator=indicators,
        present=True,
    )
    schedule = build_linear_schedule(**ckpt.schedule)
    params = ckpt.params

    def predict(x, t, c):
        return predict_noise(params, x, t, c).data

    x0 = sample(predict, cond, schedule, cfg, rng, (k, 2 * n * m2),
                literal_variance_term=literal_variance_term)
    estimates = np.stack([devectorize(x0[i], n, m2) for i in range(k)])
    if data_consistency:
        for i in range(k):
            obs = indicators[i] > 0.5
            estimates[i][:, obs] = partials[i][:, obs]
    return estimates


def cdm_estimate(
    checkpoint: Checkpoint,
    partial: np.ndarray,
    indicator: np.ndarray,
    pilot: np.ndarray,
    cfg: GuidanceConfig,
    rng: np.random.Generator,
    *,
    data_consistency: bool = True,
    literal_variance_term: bool = False,
) -> np.ndarray:
    """Diffusion-model estimate of one cascaded block.

    Builds the condition vector from (pilot, zero-filled partial block,
    indicator), runs the full guided reverse chain, and devectorizes the
    result to an N x M2 complex matrix. With ``data_consistency`` the
    observed columns are overwritten with their known values afterwards.
    """
    partial = np.asarray(partial, dtype=np.complex128)
    indicator = np.asarray(indicator, dtype=np.float64)
    pilot = np.asarray(pilot, dtype=np.complex128)
    if partial.ndim != 2:
        raise GeometryError(f"partial block must be 2-D, got shape {partial.shape}")
    out = _cdm_estimate_batch(
        checkpoint, partial[None], indicator[None], pilot[None], cfg, rng,
        data_consistency=data_consistency,
        literal_variance_term=literal_variance_term,
    )
    return out[0]


def _geometry_key(geom: SystemGeometry) -> tuple[int, int, int]:
    return (geom.n_bs_antennas, geom.m1_elements, geom.m2_elements)


def _draw_cell_trials(sweep: SweepConfig, geom: SystemGeometry,
                      corr1, corr2, rho: float, snr_db: float):
    """Draw the shared per-trial channel data for one sweep cell.

    Streams are derived from (seed, cell coordinates, trial) and never from
    the method, so every estimator in the cell sees identical draws.
    """
    n, m1, m2 = geom.n_bs_antennas, geom.m1_elements, geom.m2_elements
    key = (f"n{n}m1{m1}m2{m2}", f"rho{rho!r}", f"snr{snr_db!r}")
    k = sweep.trials_per_cell
    truths = np.empty((k, n, m2), dtype=np.complex128)
    partials = np.empty((k, n, m2), dtype=np.complex128)
    indicators = np.empty((k, m2), dtype=np.float64)
    pilots = np.empty((k, n), dtype=np.complex128)
    for i in range(k):
        rng = derive(sweep.master_seed, "eval", *key, i)
        real = sample_realization(geom, corr1, corr2, rng)
        block = compose_cascaded(real, (i % m1) + 1)
        mask = sample_mask(
            m2, rho, derive_seed(sweep.master_seed, "eval", *key, i, "mask"))
        partial, indicator = apply_mask(block, mask)
        pilot = simulate_pilot(real, snr_db, rng, geom=geom)
        truths[i] = block.b_matrix
        partials[i] = partial
        indicators[i] = indicator
        pilots[i] = pilot.y
    return key, truths, partials, indicators, pilots


def _evaluate_cell(
    sweep: SweepConfig,
    checkpoints: dict,
    geom: SystemGeometry,
    rho: float,
    snr_db: float,
) -> list[EvalRecord]:
    n, m1, m2 = geom.n_bs_antennas, geom.m1_elements, geom.m2_elements
    corr1 = build_correlation_matrix(m1, geom.element_spacing)
    corr2 = build_correlation_matrix(m2, geom.element_spacing)
    key, truths, partials, indicators, pilots = _draw_cell_trials(
        sweep, geom, corr1, corr2, rho, snr_db)
    k = sweep.trials_per_cell

    def record(method: str, lambda2: float, errors: np.ndarray) -> EvalRecord:
        std = float(np.std(errors, ddof=1)) if k > 1 else 0.0
        return EvalRecord(
            method=method, snr_db=snr_db, rho=rho, n=n, m1=m1, m2=m2,
            lambda2=lambda2, n_trials=k,
            nmse_mean=float(np.mean(errors)), nmse_std=std,
            seed=sweep.master_seed,
        )

    records: list[EvalRecord] = []
    for method in sweep.methods:
        if method == "zero_fill":
            errors = np.array([
                nmse(zero_fill_baseline(partials[i], indicators[i]), truths[i])
                for i in range(k)
            ])
            records.append(record(method, 0.0, errors))
        elif method == "lmmse":
            errors = np.array([
                nmse(lmmse_oracle(partials[i], indicators[i], corr2, 0.0),
                     truths[i])
                for i in range(k)
            ])
            records.append(record(method, 0.0, errors))
        else:  # cdm / cdm_raw
            ckpt = checkpoints.get(_geometry_key(geom))
            if ckpt is None:
                print(
                    f"warning: no checkpoint for geometry (n={n}, m1={m1}, "
                    f"m2={m2}); skipping {method} cell rho={rho} "
                    f"snr_db={snr_db}",
                    file=sys.stderr,
                )
                continue
            for lam in sweep.lambda2_values:
                # The chain stream omits the method so "cdm" and "cdm_raw"
                # share identical chains and differ only in the projection.
                chain_rng = derive(
                    sweep.master_seed, "eval", *key, f"lam{lam!r}", "chain")
                estimates = _cdm_estimate_batch(
                    ckpt, partials, indicators, pilots,
                    GuidanceConfig(lambda2=lam), chain_rng,
                    data_consistency=(method == "cdm"),
                )
                errors = np.array([
                    nmse(estimates[i], truths[i]) for i in range(k)
                ])
                records.append(record(method, lam, errors))
    return records


def write_csv(records: list[EvalRecord], path) -> None:
    """Write records with the fixed column schema (header always present)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.csv_row())


def run_sweep(
    sweep: SweepConfig,
    checkpoints: dict,
    csv_path=None,
    *,
    threads: int | None = None,
) -> list[EvalRecord]:
    """Evaluate every grid cell and optionally emit the CSV.

    ``checkpoints`` maps (n, m1, m2) tuples to loaded Checkpoint objects;
    diffusion cells without a matching checkpoint are skipped with a
    warning on stderr. Cells are independent, so ``threads`` only changes
    wall time: results are collected in deterministic grid order.
    """
    cells = [
        (geom, rho, snr)
        for geom in sweep.geometries
        for rho in sweep.mask_ratios
        for snr in sweep.snr_dbs
    ]
    results: list[list[EvalRecord] | None] = [None] * len(cells)

    def work(index: int) -> None:
        geom, rho, snr = cells[index]
        results[index] = _evaluate_cell(sweep, checkpoints, geom, rho, snr)

    if threads is not None and threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(len(cells))))
    else:
        for index in range(len(cells)):
            work(index)

    records = [rec for cell in results for rec in cell]  # type: ignore[union-attr]
    if csv_path is not None:
        write_csv(records, csv_path)
    return records
