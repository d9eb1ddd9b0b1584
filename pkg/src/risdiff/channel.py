"""Double-RIS cascaded channel synthesis.

Signal path: user -> RIS1 (u, length M1) -> RIS2 (D, M2 x M1) -> base
station (G2, N x M2), with unit-modulus phase shifts at both surfaces.
Direct and single-reflection links are assumed blocked and never modeled.

The estimation target is the per-element cascaded block
    B_m = G2 @ diag(u_m * d_m)            (N x M2)
so that the end-to-end channel factors as
    h = sum_m B_m @ theta2 * theta1[m].

Spatial correlation across array elements follows a sin(k)/k profile in
k = 2*pi*distance/wavelength, applied to u over the M1 elements and to
the columns of D and the rows of G2 over the M2 elements.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .rng import derive

__all__ = [
    "SystemGeometry",
    "SpatialCorrelation",
    "RisPhaseConfig",
    "ChannelRealization",
    "CascadedChannel",
    "MaskSpec",
    "PilotObservation",
    "build_correlation_matrix",
    "sample_correlated_vector",
    "sample_realization",
    "compose_cascaded",
    "end_to_end_channel",
    "mean_signal_power",
    "simulate_pilot",
    "sample_mask",
    "apply_mask",
    "vectorize",
    "devectorize",
]

# Calibration runs a fixed-seed pilot study per geometry; cached here.
_CALIBRATION_DRAWS = 10_000
_CALIBRATION_SEED = 0x5CA1AB1E
_signal_power_cache: dict = {}


def _complex_normal(rng: np.random.Generator, *shape) -> np.ndarray:
    """i.i.d. CN(0,1): unit total variance split across real/imag parts."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@dataclass(frozen=True)
class SystemGeometry:
    """Array sizes and element spacing (in carrier wavelengths)."""

    n_bs_antennas: int
    m1_elements: int
    m2_elements: int
    element_spacing: float = 0.25
    carrier_wavelength: float = 1.0

    def __post_init__(self):
        if self.n_bs_antennas < 1 or self.m1_elements < 1 or self.m2_elements < 1:
            raise ValueError(
                f"all array sizes must be >= 1, got N={self.n_bs_antennas}, "
                f"M1={self.m1_elements}, M2={self.m2_elements}"
            )
        if not (self.element_spacing > 0):
            raise ValueError(f"element_spacing must be > 0, got {self.element_spacing}")
        if not (self.carrier_wavelength > 0):
            raise ValueError("carrier_wavelength must be > 0")


@dataclass(frozen=True)
class SpatialCorrelation:
    dimension: int
    matrix: np.ndarray
    cholesky_factor: np.ndarray


@dataclass(frozen=True)
class RisPhaseConfig:
    theta1: np.ndarray
    theta2: np.ndarray

    def __post_init__(self):
        for name, vec in (("theta1", self.theta1), ("theta2", self.theta2)):
            if np.max(np.abs(np.abs(vec) - 1.0)) > 1e-12:
                raise ValueError(f"{name} must be unit-modulus")


@dataclass(frozen=True)
class ChannelRealization:
    u: np.ndarray          # (M1,)   user -> RIS1
    d_matrix: np.ndarray   # (M2, M1) RIS1 -> RIS2
    g2: np.ndarray         # (N, M2)  RIS2 -> BS
    phases: RisPhaseConfig

    def __post_init__(self):
        m1 = self.u.shape[0]
        m2, m1_d = self.d_matrix.shape
        n, m2_g = self.g2.shape
        if m1_d != m1 or m2_g != m2:
            raise GeometryError(
                f"inconsistent link dimensions: u has M1={m1}, D is {m2}x{m1_d}, "
                f"G2 is {n}x{m2_g}"
            )
        if self.phases.theta1.shape[0] != m1 or self.phases.theta2.shape[0] != m2:
            raise GeometryError("phase vector lengths do not match array sizes")


@dataclass(frozen=True)
class CascadedChannel:
    m_index: int           # 1-based position of the RIS1 element
    b_matrix: np.ndarray   # (N, M2)


@dataclass(frozen=True)
class PilotObservation:
    y: np.ndarray          # (N,)
    snr_db: float
    noise_variance: float

    def __post_init__(self):
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")


def build_correlation_matrix(m: int, spacing: float) -> SpatialCorrelation:
    """sin(k)/k correlation over a uniform linear array of ``m`` elements.

    k = 2*pi*|f-g|*spacing between elements f and g; the diagonal is exactly 1.
    The Cholesky factor is computed with diagonal jitter escalated up to 1e-10
    before giving up.
    """
    if m < 1:
        raise ValueError(f"array size must be >= 1, got {m}")
    if not (spacing > 0):
        raise ValueError(f"spacing must be > 0, got {spacing}")
    idx = np.arange(m, dtype=np.float64)
    k = 2.0 * np.pi * np.abs(idx[:, None] - idx[None, :]) * spacing
    with np.errstate(invalid="ignore", divide="ignore"):
        omega = np.where(k == 0.0, 1.0, np.sin(k) / np.where(k == 0.0, 1.0, k))
    chol = None
    jitter = 0.0
    # escalate jitter: 0, 1e-14, 1e-13, ..., 1e-10
    for exponent in (None, -14, -13, -12, -11, -10):
        jitter = 0.0 if exponent is None else 10.0 ** exponent
        try:
            chol = np.linalg.cholesky(omega + jitter * np.eye(m))
            break
        except np.linalg.LinAlgError:
            continue
    if chol is None:
        raise ValueError(f"correlation not PSD for m={m}, spacing={spacing}")
    return SpatialCorrelation(dimension=m, matrix=omega, cholesky_factor=chol)


def sample_correlated_vector(corr: SpatialCorrelation, rng: np.random.Generator) -> np.ndarray:
    """L @ w with w i.i.d. CN(0,1); each entry is marginally CN(0,1)."""
    w = _complex_normal(rng, corr.dimension)
    return corr.cholesky_factor @ w


def sample_realization(
    geom: SystemGeometry,
    corr1: SpatialCorrelation,
    corr2: SpatialCorrelation,
    rng: np.random.Generator,
) -> ChannelRealization:
    """Draw one full channel state: links u, D, G2 and random RIS phases.

    u is correlated over the M1 elements; each column of D and each row of
    G2 is correlated over the M2 elements. Draw order is fixed (u, D, G2,
    theta1, theta2) so a given stream always yields the same realization.
    """
    n, m1, m2 = geom.n_bs_antennas, geom.m1_elements, geom.m2_elements
    if corr1.dimension != m1:
        raise GeometryError(f"corr1 has dimension {corr1.dimension}, expected M1={m1}")
    if corr2.dimension != m2:
        raise GeometryError(f"corr2 has dimension {corr2.dimension}, expected M2={m2}")
    u = corr1.cholesky_factor @ _complex_normal(rng, m1)
    d_matrix = corr2.cholesky_factor @ _complex_normal(rng, m2, m1)
    g2 = _complex_normal(rng, n, m2) @ corr2.cholesky_factor.T
    theta1 = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, m1))
    theta2 = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, m2))
    return ChannelRealization(
        u=u, d_matrix=d_matrix, g2=g2,
        phases=RisPhaseConfig(theta1=theta1, theta2=theta2),
    )


def compose_cascaded(real: ChannelRealization, m_index: int) -> CascadedChannel:
    """Cascaded block of RIS1 element ``m_index`` (1-based):
    B_m = G2 @ diag(u_m * d_m)."""
    m1 = real.u.shape[0]
    if not 1 <= m_index <= m1:
        raise IndexError(f"m_index {m_index} out of range [1, {m1}]")
    d_tilde = real.u[m_index - 1] * real.d_matrix[:, m_index - 1]
    return CascadedChannel(m_index=m_index, b_matrix=real.g2 * d_tilde[None, :])


def end_to_end_channel(real: ChannelRealization) -> np.ndarray:
    """h = G2 @ diag(theta2) @ D @ diag(theta1) @ u, shape (N,)."""
    inner = real.d_matrix @ (real.phases.theta1 * real.u)
    return real.g2 @ (real.phases.theta2 * inner)


def mean_signal_power(geom: SystemGeometry, n_draws: int = _CALIBRATION_DRAWS) -> float:
    """Per-antenna average power E[|h_i|^2], estimated once per geometry.

    Runs a fixed-seed Monte-Carlo pilot study (default 1e4 draws) and caches
    the result; the noise variance for a requested SNR is this power divided
    by the linear SNR.
    """
    key = (geom.n_bs_antennas, geom.m1_elements, geom.m2_elements,
           geom.element_spacing, n_draws)
    if key in _signal_power_cache:
        return _signal_power_cache[key]
    corr1 = build_correlation_matrix(geom.m1_elements, geom.element_spacing)
    corr2 = build_correlation_matrix(geom.m2_elements, geom.element_spacing)
    rng = derive(_CALIBRATION_SEED, "signal-power", geom.n_bs_antennas,
                 geom.m1_elements, geom.m2_elements)
    total = 0.0
    for _ in range(n_draws):
        h = end_to_end_channel(sample_realization(geom, corr1, corr2, rng))
        total += float(np.mean(np.abs(h) ** 2))
    power = total / n_draws
    _signal_power_cache[key] = power
    return power


def simulate_pilot(
    real: ChannelRealization,
    snr_db: float,
    rng: np.random.Generator,
    *,
    geom: SystemGeometry,
    noiseless: bool = False,
) -> PilotObservation:
    """Receive one pilot: y = h * s + n with s = 1 and n i.i.d. CN(0, sigma^2).

    sigma^2 = mean_signal_power(geom) / 10^(snr_db/10). With ``noiseless``
    the observation is exactly h and the recorded noise variance is 0.
    """
    if not np.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite, got {snr_db}")
    h = end_to_end_channel(real)
    if noiseless:
        return PilotObservation(y=h, snr_db=float(snr_db), noise_variance=0.0)
    sigma2 = mean_signal_power(geom) / (10.0 ** (snr_db / 10.0))
    noise = np.sqrt(sigma2) * _complex_normal(rng, h.shape[0])
    return PilotObservation(y=h + noise, snr_db=float(snr_db), noise_variance=float(sigma2))


@dataclass(frozen=True)
class MaskSpec:
    """Which of the M2 columns of a cascaded block are observed.

    mask_ratio rho hides round(rho*M2) columns; at least one column must
    stay observed. observed_indices are sorted, unique, in [0, M2).
    """

    m2: int
    mask_ratio: float
    observed_indices: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ValueError(f"mask_ratio must be in [0, 1), got {self.mask_ratio}")
        idx = np.asarray(self.observed_indices, dtype=np.int64)
        object.__setattr__(self, "observed_indices", idx)
        if idx.size == 0:
            raise ValueError("at least one observed column is required")
        if idx.size != np.unique(idx).size or np.any(np.diff(idx) <= 0):
            raise ValueError("observed_indices must be sorted and unique")
        if idx[0] < 0 or idx[-1] >= self.m2:
            raise ValueError(f"observed_indices out of range [0, {self.m2})")
        expected = self.m2 - round(self.mask_ratio * self.m2)
        if idx.size != expected:
            raise ValueError(
                f"expected {expected} observed columns for rho={self.mask_ratio}, "
                f"M2={self.m2}; got {idx.size}"
            )

    @property
    def n_observed(self) -> int:
        return int(self.observed_indices.size)

    def indicator(self) -> np.ndarray:
        ind = np.zeros(self.m2, dtype=np.float64)
        ind[self.observed_indices] = 1.0
        return ind


def sample_mask(m2: int, mask_ratio: float, seed: int) -> MaskSpec:
    """Uniform random subset of hidden columns, fixed by ``seed``."""
    n_hidden = round(mask_ratio * m2)
    if m2 - n_hidden < 1:
        raise ValueError(
            f"rho={mask_ratio} leaves no observed column for M2={m2}"
        )
    rng = derive(seed, "mask", m2)
    hidden = rng.choice(m2, size=n_hidden, replace=False)
    observed = np.setdiff1d(np.arange(m2), hidden)
    return MaskSpec(m2=m2, mask_ratio=mask_ratio, observed_indices=observed, seed=seed)


def apply_mask(b: CascadedChannel, mask: MaskSpec):
    """Zero-fill the hidden columns.

    Returns (partial, indicator): partial copies the observed columns of
    b and is exactly zero elsewhere; indicator is 1.0 at observed columns.
    """
    if b.b_matrix.shape[1] != mask.m2:
        raise GeometryError(
            f"mask is for M2={mask.m2} but block has {b.b_matrix.shape[1]} columns"
        )
    partial = np.zeros_like(b.b_matrix)
    partial[:, mask.observed_indices] = b.b_matrix[:, mask.observed_indices]
    return partial, mask.indicator()


def vectorize(b: np.ndarray) -> np.ndarray:
    """Column-major flatten, all real parts first then all imaginary parts."""
    flat = np.asarray(b).ravel(order="F")
    return np.concatenate([flat.real, flat.imag]).astype(np.float64)


def devectorize(x: np.ndarray, n: int, m2: int) -> np.ndarray:
    """Inverse of vectorize for an n x m2 complex matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (2 * n * m2,):
        raise ValueError(f"expected vector of length {2 * n * m2}, got shape {x.shape}")
    half = n * m2
    re = x[:half].reshape((n, m2), order="F")
    im = x[half:].reshape((n, m2), order="F")
    return re + 1j * im
