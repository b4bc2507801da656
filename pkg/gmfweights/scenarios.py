"""
Scenario configuration and Monte Carlo runners for the Avocado, NRHO and
linear-equivalence experiments.
"""

import dataclasses
import logging
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from enum import StrEnum
from functools import partial
from pathlib import Path
from typing import Any, Self

import numpy as np
import numpy.typing as npt
import yaml
from joblib import Parallel, delayed
from tqdm import tqdm

from gmfweights._linalg import _cholesky
from gmfweights.engmf import engmf_step, sample_ensemble, silverman_bandwidth
from gmfweights.exceptions import ConfigError, DegenerateWeightsError, GMFError
from gmfweights.gaussian import (
    GaussianComponent,
    GaussianMixture,
    GridField,
    log_gaussian_pdf,
    mixture_moments,
    mixture_pdf_on_grid,
)
from gmfweights.metrics import (
    DENSITY_FLOOR,
    KLD_SUPPORT,
    MetricsReport,
    average,
    grid_mean,
    kld_grid,
    position_rmse,
    rmse,
    snees,
    true_posterior_grid,
)
from gmfweights.models import (
    AvocadoModel,
    CR3BPParams,
    LinearModel,
    MeasurementModel,
    RaDecModel,
    cr3bp_derivative,
    wrap_angle,
)
from gmfweights.propagation import IntegratorConfig, propagate
from gmfweights.updaters import UnscentedParams, UpdaterKind, UpdaterSpec
from gmfweights.weights import (
    CovarianceForm,
    SigmaVariant,
    WeightScheme,
    gmm_measurement_update,
)

__all__ = [
    "Scenario",
    "TruthSource",
    "ScenarioConfig",
    "TrialRecord",
    "TrackletSchedule",
    "LinearCheckReport",
    "AVOCADO_PRIOR_MEAN",
    "AVOCADO_PRIOR_COV",
    "AVOCADO_MEASUREMENT",
    "NRHO_INITIAL_STATE",
    "NRHO_INITIAL_STD",
    "NRHO_PERIOD",
    "NRHO_PREPROPAGATION",
    "avocado_prior",
    "avocado_mixture",
    "sample_posterior",
    "nrho_initial_covariance",
    "avocado_trials",
    "avocado_grids",
    "avocado_truth_field",
    "random_linear_case",
    "run_avocado",
    "run_avocado_baseline",
    "nrho_trials",
    "run_nrho",
    "run_linear_check",
    "run_sweep",
    "parse_method",
    "method_label",
    "summarize",
]

logger = logging.getLogger(__name__)

AVOCADO_PRIOR_MEAN = np.array([-3.5, 0.0])
AVOCADO_PRIOR_COV = np.array([[1.0, -0.5], [-0.5, 1.0]])
AVOCADO_MEASUREMENT = np.array([0.0, 0.0])

NRHO_INITIAL_STATE = np.array([1.0110350588, 0.0, -0.17315, 0.0, -0.0780141199, 0.0])
NRHO_INITIAL_STD = np.array([2.5e-5] * 3 + [1e-6] * 3)
NRHO_PERIOD = 1.3632096570
NRHO_PREPROPAGATION = 0.75

LINEAR_CHECK_TOLERANCE = 1e-8


class Scenario(StrEnum):
    AVOCADO = "avocado"
    NRHO = "nrho"
    LINEAR_CHECK = "linear-check"


class TruthSource(StrEnum):
    """
    Where the Avocado truth comes from.

    ``POSTERIOR_MEAN`` is the conditional mean of the grid posterior and is the
    same in every trial; the other two are random draws.
    """

    POSTERIOR_MEAN = "posterior-mean"
    POSTERIOR = "posterior"
    PRIOR = "prior"


_ENUM_FIELDS = {
    "scenario": Scenario,
    "updater": UpdaterKind,
    "scheme": WeightScheme,
    "covariance_form": CovarianceForm,
    "sigma_variant": SigmaVariant,
    "truth_source": TruthSource,
}
_PATH_FIELDS = ("output", "trials_csv", "grid_dir")
_INT_FIELDS = (
    "components",
    "monte_carlo",
    "bruf_steps",
    "seed",
    "grid_nodes",
    "orbits",
    "linear_cases",
    "n_jobs",
)
_FLOAT_FIELDS = (
    "alpha",
    "beta",
    "kappa",
    "rel_tol",
    "abs_tol",
    "density_floor",
    "kld_prefactor",
    "kld_support",
    "divergence_gate",
    "max_flagged_fraction",
)


@dataclass(frozen=True)
class ScenarioConfig:
    """
    Every knob of a scenario run.

    String values are accepted for the enumerated fields and paths, so the
    config can be built straight from a YAML mapping.

    Args:
        scenario: Which experiment to run
        updater: Component updater
        scheme: Weight scheme
        components: Number of mixture components / ensemble members ``M``
        monte_carlo: Number of Monte Carlo trials
        bruf_steps: BRUF partial updates ``N``
        alpha: Unscented alpha (None keeps the updater default)
        beta: Unscented beta
        kappa: Unscented kappa
        covariance_form: Expression for the posterior innovation covariance
        sigma_variant: Traditional sigma-point weight variant
        seed: Root seed of all random streams
        rel_tol: Integrator relative tolerance
        abs_tol: Integrator absolute tolerance
        truth_source: Avocado truth (grid posterior mean, or a draw)
        fixed_truth: Draw the Avocado truth once and reuse it in every trial
        grid_nodes: Nodes per axis of the Avocado grid
        grid_lower: Lower grid corner
        grid_upper: Upper grid corner
        density_floor: Floor applied before taking logs of grid densities
        kld_prefactor: Replaces ``1/s_x`` in the grid score if set
        kld_support: Grid score only over nodes where the true posterior is at
            least this fraction of its peak; None scores every node
        orbits: Number of NRHO orbits with tracklets
        measurement_noise: Add noise to simulated NRHO angles
        divergence_gate: Position RMSE (LU) above which an NRHO trial is flagged
        max_flagged_fraction: Flagged fraction above which the CLI exits with 2
        linear_cases: Number of random linear instances for the linear check
        n_jobs: joblib workers for Monte Carlo trials
        output: Report file
        trials_csv: Per-trial CSV file
        grid_dir: Directory for Avocado grid dumps
    """

    scenario: Scenario = Scenario.AVOCADO
    updater: UpdaterKind = UpdaterKind.EKF
    scheme: WeightScheme = WeightScheme.IMPROVED
    components: int = 100
    monte_carlo: int = 100
    bruf_steps: int = 10
    alpha: float | None = None
    beta: float | None = None
    kappa: float | None = None
    covariance_form: CovarianceForm = CovarianceForm.JOSEPH
    sigma_variant: SigmaVariant = SigmaVariant.MIXTURE
    seed: int = 0
    rel_tol: float = 1e-12
    abs_tol: float = 1e-12
    truth_source: TruthSource = TruthSource.POSTERIOR_MEAN
    fixed_truth: bool = False
    grid_nodes: int = 201
    grid_lower: tuple[float, float] = (-6.0, -4.0)
    grid_upper: tuple[float, float] = (2.0, 4.0)
    density_floor: float = DENSITY_FLOOR
    kld_prefactor: float | None = None
    kld_support: float | None = KLD_SUPPORT
    orbits: int = 5
    measurement_noise: bool = True
    divergence_gate: float = 0.1
    max_flagged_fraction: float = 0.1
    linear_cases: int = 500
    n_jobs: int = 1
    output: Path | None = None
    trials_csv: Path | None = None
    grid_dir: Path | None = None

    def __post_init__(self) -> None:
        for name, enum in _ENUM_FIELDS.items():
            value = getattr(self, name)
            try:
                object.__setattr__(self, name, enum(value))
            except ValueError as e:
                raise ConfigError(f"Invalid {name}: {value}") from e

        for names, kind in ((_INT_FIELDS, int), (_FLOAT_FIELDS, float)):
            for name in names:
                value = getattr(self, name)
                if value is None:
                    continue
                try:
                    object.__setattr__(self, name, kind(value))
                except (TypeError, ValueError) as e:
                    raise ConfigError(f"Invalid {name}: {value!r}") from e

        for name in _PATH_FIELDS:
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, Path(value))

        for name in ("grid_lower", "grid_upper"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 2:
                raise ConfigError(f"{name} needs two values, got {value}")
            object.__setattr__(self, name, value)

        for name in (
            "components",
            "monte_carlo",
            "bruf_steps",
            "orbits",
            "linear_cases",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.grid_nodes < 2:
            raise ConfigError("grid_nodes must be at least 2")
        if not self.divergence_gate > 0.0:
            raise ConfigError("divergence_gate must be positive")
        if not 0.0 <= self.max_flagged_fraction <= 1.0:
            raise ConfigError("max_flagged_fraction must lie in [0, 1]")
        if not (self.rel_tol > 0.0 and self.abs_tol > 0.0):
            raise ConfigError("integrator tolerances must be positive")
        if not self.density_floor > 0.0:
            raise ConfigError("density_floor must be positive")
        if self.kld_support is not None and not 0.0 < self.kld_support < 1.0:
            raise ConfigError("kld_support must lie in (0, 1)")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> Self:
        """
        Build a config from a mapping; dashes in keys are read as underscores.

        Raises:
            ConfigError: On unknown keys or invalid values
        """
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {str(key).replace("-", "_"): value for key, value in mapping.items()}
        unknown = sorted(set(kwargs) - known)
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")

        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def from_yaml(cls, path: str | Path) -> Self:
        """Read a config from a YAML file holding a single mapping."""
        try:
            with open(path) as f:
                data = yaml.safe_load(f)
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from e

        if data is None:
            data = {}
        if not isinstance(data, Mapping):
            raise ConfigError(f"Config {path} must hold a mapping")
        return cls.from_mapping(data)

    def with_overrides(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    @property
    def unscented_params(self) -> UnscentedParams | None:
        """Explicit unscented scaling, or None to keep the updater default."""
        if self.alpha is None and self.beta is None and self.kappa is None:
            return None
        base = (
            UnscentedParams.ukf()
            if self.updater == UpdaterKind.UKF
            else UnscentedParams.ckf()
        )
        return UnscentedParams(
            base.alpha if self.alpha is None else self.alpha,
            base.beta if self.beta is None else self.beta,
            base.kappa if self.kappa is None else self.kappa,
        )

    @property
    def updater_spec(self) -> UpdaterSpec:
        return UpdaterSpec(self.updater, self.bruf_steps, self.unscented_params)

    @property
    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(rel_tol=self.rel_tol, abs_tol=self.abs_tol)

    @property
    def grid(self) -> GridField:
        return GridField.linspace(self.grid_lower, self.grid_upper, self.grid_nodes)

    @property
    def method(self) -> str:
        return method_label(self.updater, self.scheme)


@dataclass(frozen=True)
class TrialRecord:
    """
    Metrics of one trial at one epoch (Avocado trials have a single epoch).

    Flagged records carry NaN metrics and are excluded from the aggregates.
    """

    trial: int
    epoch: int
    rmse: float
    rmse_position: float | None = None
    snees: float | None = None
    kld: float | None = None
    flagged: bool = False


def method_label(updater: UpdaterKind | str, scheme: WeightScheme | str | None) -> str:
    """``"ekf:improved"``, or ``"ekf-single"`` for a single-Gaussian baseline."""
    if scheme is None:
        return f"{updater}-single"
    return f"{updater}:{scheme}"


def parse_method(text: str) -> tuple[UpdaterKind, WeightScheme | None]:
    """
    Parse ``"<updater>:<scheme>"`` or ``"<updater>-single"``.

    Raises:
        ConfigError: If either part is unknown
    """
    text = text.strip().lower()
    try:
        if text.endswith("-single"):
            return UpdaterKind(text.removesuffix("-single")), None
        updater, _, scheme = text.partition(":")
        return UpdaterKind(updater), WeightScheme(scheme)
    except ValueError as e:
        raise ConfigError(f"Invalid method: {text}") from e


def summarize(
    records: Sequence[TrialRecord], method: str, components: int
) -> MetricsReport:
    """
    Aggregate trial records: average over epochs within each trial, then over
    trials. Trials with any flagged record are counted and left out.
    """
    by_trial: dict[int, list[TrialRecord]] = {}
    for record in records:
        by_trial.setdefault(record.trial, []).append(record)

    kept = [
        trial_records
        for _, trial_records in sorted(by_trial.items())
        if not any(r.flagged for r in trial_records)
    ]

    def aggregate(name: str) -> float | None:
        values = [[getattr(r, name) for r in trial_records] for trial_records in kept]
        if not kept or any(v is None for trial in values for v in trial):
            return None
        return average(average(trial) for trial in values)

    full = aggregate("rmse")
    return MetricsReport(
        method=method,
        components=components,
        trials=len(kept),
        flagged_trials=len(by_trial) - len(kept),
        rmse=math.nan if full is None else full,
        rmse_position=aggregate("rmse_position"),
        kld=aggregate("kld"),
        snees=aggregate("snees"),
    )


def _require(cfg: ScenarioConfig, scenario: Scenario) -> None:
    if cfg.scenario != scenario:
        raise ConfigError(f"Expected a {scenario} config, got {cfg.scenario}")


def _trial_seeds(
    cfg: ScenarioConfig,
) -> tuple[np.random.SeedSequence, list[np.random.SeedSequence]]:
    shared, *trials = np.random.SeedSequence(cfg.seed).spawn(cfg.monte_carlo + 1)
    return shared, trials


def _monte_carlo(
    trial_fn: Callable[[int, np.random.SeedSequence], list[TrialRecord]],
    cfg: ScenarioConfig,
    seeds: Sequence[np.random.SeedSequence],
    progress: bool,
) -> list[TrialRecord]:
    iterator = tqdm(
        enumerate(seeds),
        total=len(seeds),
        desc=f"{cfg.scenario} {cfg.method} M={cfg.components}",
        disable=not progress,
    )
    if cfg.n_jobs == 1:
        batches = [trial_fn(trial, seed) for trial, seed in iterator]
    else:
        batches = Parallel(n_jobs=cfg.n_jobs)(
            delayed(trial_fn)(trial, seed) for trial, seed in iterator
        )
    return [record for batch in batches for record in batch]


def _flagged(trial: int) -> list[TrialRecord]:
    return [TrialRecord(trial, 0, math.nan, flagged=True)]


# Avocado ---------------------------------------------------------------------


def avocado_prior() -> GaussianComponent:
    return GaussianComponent(1.0, AVOCADO_PRIOR_MEAN, AVOCADO_PRIOR_COV)


def avocado_mixture(
    prior: GaussianComponent, components: int, rng: np.random.Generator
) -> GaussianMixture:
    """
    Mixture approximation of a Gaussian prior.

    Means are drawn from the prior; all components share the Silverman-shrunk
    prior covariance and carry uniform weights. One component is the prior
    itself.
    """
    if components == 1:
        return GaussianMixture((prior.with_weight(1.0),))
    means = prior.sample(rng, components)
    cov = silverman_bandwidth(prior.dimension, components) * prior.covariance
    return GaussianMixture.from_arrays(
        np.full(components, 1.0 / components), means, cov
    )


def sample_posterior(
    prior: GaussianComponent,
    model: MeasurementModel,
    y: npt.ArrayLike,
    rng: np.random.Generator,
    *,
    batch: int = 50_000,
    max_batches: int = 1_000,
) -> npt.NDArray[np.float64]:
    """
    One exact draw from ``p(x | y)`` by rejection sampling from the prior.

    The Gaussian likelihood is bounded by its value at zero residual.
    """
    zero = np.zeros(model.n_y)
    log_bound = log_gaussian_pdf(zero, zero, model.noise_cov)
    for _ in range(max_batches):
        xs = prior.sample(rng, batch)
        log_likelihood = log_gaussian_pdf(
            model.innovation(y, model.measure(xs)), zero, model.noise_cov
        )
        accepted = np.log(rng.random(batch)) < log_likelihood - log_bound
        if np.any(accepted):
            return xs[np.argmax(accepted)]
    raise GMFError("rejection sampling accepted no posterior draw")


def _draw_avocado_truth(
    cfg: ScenarioConfig,
    prior: GaussianComponent,
    model: MeasurementModel,
    rng: np.random.Generator,
) -> npt.NDArray[np.float64]:
    if cfg.truth_source == TruthSource.PRIOR:
        return prior.sample(rng, 1)[0]
    return sample_posterior(prior, model, AVOCADO_MEASUREMENT, rng)


def _avocado_posterior(
    cfg: ScenarioConfig,
    fixed_truth: npt.NDArray[np.float64] | None,
    seed: np.random.SeedSequence,
) -> tuple[npt.NDArray[np.float64], GaussianMixture]:
    rng = np.random.default_rng(seed)
    prior, model = avocado_prior(), AvocadoModel()
    truth = (
        fixed_truth
        if fixed_truth is not None
        else _draw_avocado_truth(cfg, prior, model, rng)
    )
    posterior = gmm_measurement_update(
        avocado_mixture(prior, cfg.components, rng),
        model,
        AVOCADO_MEASUREMENT,
        cfg.updater_spec,
        cfg.scheme,
        form=cfg.covariance_form,
        variant=cfg.sigma_variant,
    )
    return truth, posterior


def _avocado_trial(
    cfg: ScenarioConfig,
    truth_field: GridField,
    fixed_truth: npt.NDArray[np.float64] | None,
    trial: int,
    seed: np.random.SeedSequence,
) -> list[TrialRecord]:
    try:
        truth, posterior = _avocado_posterior(cfg, fixed_truth, seed)
    except DegenerateWeightsError:
        logger.warning("Avocado trial %d flagged: weights collapsed", trial)
        return _flagged(trial)

    mean, _ = mixture_moments(posterior)
    kld = kld_grid(
        mixture_pdf_on_grid(posterior, truth_field),
        truth_field,
        floor=cfg.density_floor,
        prefactor=cfg.kld_prefactor,
        support=cfg.kld_support,
    )
    return [TrialRecord(trial, 0, rmse(truth, mean), kld=kld)]


def _avocado_baseline_trial(
    cfg: ScenarioConfig,
    fixed_truth: npt.NDArray[np.float64] | None,
    trial: int,
    seed: np.random.SeedSequence,
) -> list[TrialRecord]:
    rng = np.random.default_rng(seed)
    prior, model = avocado_prior(), AvocadoModel()
    truth = (
        fixed_truth
        if fixed_truth is not None
        else _draw_avocado_truth(cfg, prior, model, rng)
    )
    artifacts = cfg.updater_spec.update(prior, model, AVOCADO_MEASUREMENT)
    return [TrialRecord(trial, 0, rmse(truth, artifacts.posterior.mean))]


def _fixed_truth(
    cfg: ScenarioConfig, shared: np.random.SeedSequence
) -> npt.NDArray[np.float64] | None:
    if cfg.truth_source == TruthSource.POSTERIOR_MEAN:
        return grid_mean(avocado_truth_field(cfg))
    if not cfg.fixed_truth:
        return None
    return _draw_avocado_truth(
        cfg, avocado_prior(), AvocadoModel(), np.random.default_rng(shared)
    )


def avocado_truth_field(cfg: ScenarioConfig) -> GridField:
    """True Avocado posterior on the configured grid."""
    return true_posterior_grid(
        avocado_prior(), AvocadoModel(), AVOCADO_MEASUREMENT, cfg.grid
    )


def avocado_trials(cfg: ScenarioConfig, *, progress: bool = False) -> list[TrialRecord]:
    """
    Run the Avocado Monte Carlo and return one record per trial.

    Each trial draws its truth (unless ``fixed_truth``), a fresh mixture
    approximation of the prior, and performs one mixture measurement update.
    """
    _require(cfg, Scenario.AVOCADO)
    shared, seeds = _trial_seeds(cfg)
    trial_fn = partial(
        _avocado_trial, cfg, avocado_truth_field(cfg), _fixed_truth(cfg, shared)
    )
    logger.info(
        "Avocado: %s, M=%d, %d trials", cfg.method, cfg.components, cfg.monte_carlo
    )
    return _monte_carlo(trial_fn, cfg, seeds, progress)


def run_avocado(cfg: ScenarioConfig, *, progress: bool = False) -> MetricsReport:
    """Avocado Monte Carlo summarized into one report row."""
    return summarize(avocado_trials(cfg, progress=progress), cfg.method, cfg.components)


def run_avocado_baseline(
    cfg: ScenarioConfig, *, progress: bool = False
) -> MetricsReport:
    """
    Single-Gaussian baseline: the configured updater applied to the prior
    itself. Trials share their truths with :func:`run_avocado` for equal seeds.
    """
    _require(cfg, Scenario.AVOCADO)
    shared, seeds = _trial_seeds(cfg)
    trial_fn = partial(_avocado_baseline_trial, cfg, _fixed_truth(cfg, shared))
    records = _monte_carlo(trial_fn, cfg, seeds, progress)
    return summarize(records, method_label(cfg.updater, None), 1)


def avocado_grids(cfg: ScenarioConfig) -> dict[str, GridField]:
    """True posterior and the first trial's mixture posterior on the grid."""
    _require(cfg, Scenario.AVOCADO)
    shared, seeds = _trial_seeds(cfg)
    truth_field = avocado_truth_field(cfg)
    _, posterior = _avocado_posterior(cfg, _fixed_truth(cfg, shared), seeds[0])
    return {
        "truth": truth_field,
        cfg.method: mixture_pdf_on_grid(posterior, truth_field),
    }


# NRHO ------------------------------------------------------------------------


def nrho_initial_covariance() -> npt.NDArray[np.float64]:
    return np.diag(NRHO_INITIAL_STD**2)


@dataclass(frozen=True)
class TrackletSchedule:
    """
    Measurement epochs grouped into tracklets.

    Args:
        tracklets: Epoch times per tracklet; strictly increasing overall
    """

    tracklets: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        tracklets = tuple(tuple(map(float, tracklet)) for tracklet in self.tracklets)
        object.__setattr__(self, "tracklets", tracklets)
        if np.any(np.diff(self.epochs) <= 0.0):
            raise GMFError("tracklet epochs must be strictly increasing")

    @classmethod
    def nrho(
        cls,
        params: CR3BPParams | None = None,
        *,
        period: float = NRHO_PERIOD,
        orbits: int = 5,
        per_orbit: int = 3,
        duration_hours: float = 2.5,
        cadence_minutes: float = 10.0,
    ) -> Self:
        """
        Tracklets of ``duration_hours`` at ``cadence_minutes`` cadence, ``per_orbit``
        per orbit, separated by quarter-period gaps, starting at time zero.
        """
        params = params or CR3BPParams.earth_moon()
        duration = params.hours(duration_hours)
        cadence = params.hours(cadence_minutes / 60.0)
        count = round(duration / cadence) + 1
        return cls(
            tuple(
                tuple(
                    orbit * period + slot * (duration + period / 4.0) + k * cadence
                    for k in range(count)
                )
                for orbit in range(orbits)
                for slot in range(per_orbit)
            )
        )

    @property
    def epochs(self) -> npt.NDArray[np.float64]:
        return np.array([t for tracklet in self.tracklets for t in tracklet])

    @property
    def tracklet_index(self) -> npt.NDArray[np.intp]:
        """Tracklet number of every epoch."""
        return np.repeat(
            np.arange(len(self.tracklets)), [len(t) for t in self.tracklets]
        )


def _cr3bp_rhs(
    t: float, x: npt.NDArray[np.float64], params: CR3BPParams
) -> npt.NDArray[np.float64]:
    return cr3bp_derivative(x, params)


def _simulate_angles(
    truth: npt.NDArray[np.float64],
    epochs: npt.NDArray[np.float64],
    start: float,
    model: RaDecModel,
    dynamics: Callable,
    cfg: ScenarioConfig,
    rng: np.random.Generator,
) -> tuple[list[npt.NDArray[np.float64]], list[npt.NDArray[np.float64]]]:
    noise_root = _cholesky(model.noise_cov)
    truths, measurements = [], []
    t = start
    for epoch in epochs:
        truth = propagate(truth, t, epoch, dynamics, cfg.integrator)
        t = epoch
        y = model.h(truth)
        if cfg.measurement_noise:
            y = y + noise_root @ rng.standard_normal(model.n_y)
            y[0] = wrap_angle(y[0])
        truths.append(truth)
        measurements.append(y)
    return truths, measurements


def _nrho_trial(
    cfg: ScenarioConfig,
    schedule: TrackletSchedule,
    trial: int,
    seed: np.random.SeedSequence,
) -> list[TrialRecord]:
    params = CR3BPParams.earth_moon()
    dynamics = partial(_cr3bp_rhs, params=params)
    model = RaDecModel()
    truth_seed, ensemble_seed, noise_seed = seed.spawn(3)

    initial = GaussianComponent(1.0, NRHO_INITIAL_STATE, nrho_initial_covariance())
    truth = initial.sample(np.random.default_rng(truth_seed), 1)[0]
    ens = sample_ensemble(
        initial.mean, initial.covariance, cfg.components, ensemble_seed
    )

    start = NRHO_PREPROPAGATION * NRHO_PERIOD
    epochs = start + schedule.epochs
    try:
        truth = propagate(truth, 0.0, start, dynamics, cfg.integrator)
        members = propagate(ens.members, 0.0, start, dynamics, cfg.integrator)
        ens = ens.with_members(members, start)
        truths, measurements = _simulate_angles(
            truth, epochs, start, model, dynamics, cfg,
            np.random.default_rng(noise_seed),
        )
        _, snapshots = engmf_step(
            ens,
            dynamics,
            epochs,
            model,
            measurements,
            cfg.updater_spec,
            cfg.scheme,
            cfg.integrator,
            form=cfg.covariance_form,
            variant=cfg.sigma_variant,
        )
        records = [
            TrialRecord(
                trial,
                s.epoch,
                rmse(x, s.mean),
                rmse_position=position_rmse(x, s.mean),
                snees=snees(x, s.mean, s.covariance),
            )
            for s, x in zip(snapshots, truths)
        ]
    except GMFError as e:
        logger.warning("NRHO trial %d flagged: %s", trial, e)
        return _flagged(trial)

    worst = max(r.rmse_position for r in records)
    if worst > cfg.divergence_gate:
        logger.warning(
            "NRHO trial %d flagged: position RMSE %.3g LU above gate", trial, worst
        )
        return [dataclasses.replace(r, flagged=True) for r in records]
    return records


def nrho_trials(cfg: ScenarioConfig, *, progress: bool = False) -> list[TrialRecord]:
    """
    Run the NRHO Monte Carlo and return one record per trial and epoch.

    Each trial draws the truth and the ensemble from the initial distribution,
    propagates both by three quarters of a period, simulates RA/Dec angles on
    the tracklet schedule and runs the EnGMF over all epochs.
    """
    _require(cfg, Scenario.NRHO)
    _, seeds = _trial_seeds(cfg)
    schedule = TrackletSchedule.nrho(orbits=cfg.orbits)
    logger.info(
        "NRHO: %s, M=%d, %d trials, %d epochs",
        cfg.method,
        cfg.components,
        cfg.monte_carlo,
        schedule.epochs.size,
    )
    return _monte_carlo(partial(_nrho_trial, cfg, schedule), cfg, seeds, progress)


def run_nrho(cfg: ScenarioConfig, *, progress: bool = False) -> MetricsReport:
    """NRHO Monte Carlo summarized into one report row."""
    return summarize(nrho_trials(cfg, progress=progress), cfg.method, cfg.components)


# Linear equivalence ----------------------------------------------------------


@dataclass(frozen=True)
class LinearCheckReport:
    """
    Largest weight discrepancy per updater / scheme pair on random linear
    instances, measured against the traditional EKF weights.
    """

    cases: int
    discrepancies: dict[str, float]
    tolerance: float = LINEAR_CHECK_TOLERANCE

    @property
    def max_discrepancy(self) -> float:
        return max(self.discrepancies.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_discrepancy < self.tolerance

    def to_records(self) -> list[dict[str, object]]:
        return [
            {"method": method, "cases": self.cases, "max_discrepancy": value}
            for method, value in self.discrepancies.items()
        ]


def _random_spd(rng: np.random.Generator, n: int) -> npt.NDArray[np.float64]:
    factor = rng.normal(size=(n, n))
    return factor @ factor.T / n + 0.5 * np.eye(n)


def random_linear_case(
    rng: np.random.Generator,
) -> tuple[GaussianMixture, LinearModel, npt.NDArray[np.float64], int]:
    """
    Random linear-Gaussian instance: ``n_x`` in 1..6, ``n_y`` in 1..3, two to
    six components sharing one covariance, plus a BRUF step count in 1..20.
    """
    n_x, n_y = int(rng.integers(1, 7)), int(rng.integers(1, 4))
    components = int(rng.integers(2, 7))

    model = LinearModel(rng.normal(size=(n_y, n_x)), _random_spd(rng, n_y))
    means = rng.normal(scale=2.0, size=(components, n_x))
    mixture = GaussianMixture.from_arrays(
        rng.dirichlet(np.ones(components)), means, _random_spd(rng, n_x)
    )
    y = model.h(means[rng.integers(components)]) + rng.normal(size=n_y)
    return mixture, model, y, int(rng.integers(1, 21))


_LINEAR_SCHEMES = {
    WeightScheme.TRADITIONAL: {},
    WeightScheme.IMPROVED: {},
    WeightScheme.TRADITIONAL_SIGMA: {"variant": SigmaVariant.MEAN},
    WeightScheme.IMPROVED_SIGMA: {},
}


def run_linear_check(
    cfg: ScenarioConfig, *, progress: bool = False
) -> LinearCheckReport:
    """
    Compare normalized weights of every updater / scheme pair on random linear
    models. The traditional sigma-point weights use the mean form, the variant
    that is exact for linear maps.
    """
    _require(cfg, Scenario.LINEAR_CHECK)
    rng = np.random.default_rng(cfg.seed)
    discrepancies = {
        method_label(updater, scheme): 0.0
        for updater in UpdaterKind
        for scheme in _LINEAR_SCHEMES
    }

    for _ in tqdm(range(cfg.linear_cases), desc="linear-check", disable=not progress):
        mixture, model, y, steps = random_linear_case(rng)
        reference = None
        for updater in UpdaterKind:
            spec = UpdaterSpec(updater, bruf_steps=steps)
            for scheme, options in _LINEAR_SCHEMES.items():
                weights = gmm_measurement_update(
                    mixture,
                    model,
                    y,
                    spec,
                    scheme,
                    form=cfg.covariance_form,
                    **options,
                ).weights
                if reference is None:
                    reference = weights
                label = method_label(updater, scheme)
                discrepancies[label] = max(
                    discrepancies[label], float(np.max(np.abs(weights - reference)))
                )

    report = LinearCheckReport(cfg.linear_cases, discrepancies)
    logger.info("Linear check: max discrepancy %.3e", report.max_discrepancy)
    return report


# Sweeps ----------------------------------------------------------------------

DEFAULT_SWEEP_METHODS = ("ekf:traditional", "ekf:improved")


def run_sweep(
    cfg: ScenarioConfig,
    components: Sequence[int],
    methods: Sequence[str] = DEFAULT_SWEEP_METHODS,
    *,
    progress: bool = False,
) -> list[MetricsReport]:
    """
    One report row per component count and method, component counts ascending.

    Args:
        cfg: Base config (Avocado or NRHO)
        components: Component counts to visit
        methods: ``"<updater>:<scheme>"`` labels, or ``"<updater>-single"``
            baselines (Avocado only)
    """
    if cfg.scenario == Scenario.LINEAR_CHECK:
        raise ConfigError("the linear check has no component sweep")
    parsed = [parse_method(method) for method in methods]

    reports = []
    for count in sorted(set(components)):
        for updater, scheme in parsed:
            if scheme is None:
                if cfg.scenario != Scenario.AVOCADO:
                    raise ConfigError("single-Gaussian baselines are Avocado only")
                report = run_avocado_baseline(
                    cfg.with_overrides(updater=updater), progress=progress
                )
                reports.append(dataclasses.replace(report, components=count))
                continue

            sub = cfg.with_overrides(components=count, updater=updater, scheme=scheme)
            runner = run_avocado if cfg.scenario == Scenario.AVOCADO else run_nrho
            reports.append(runner(sub, progress=progress))
            logger.info("Sweep row %s M=%d done", sub.method, count)
    return reports
