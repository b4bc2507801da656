from gmfweights import utils
from gmfweights.engmf import Ensemble, engmf_step
from gmfweights.gaussian import GaussianComponent, GaussianMixture, GridField
from gmfweights.scenarios import ScenarioConfig
from gmfweights.updaters import UnscentedParams, UpdaterSpec
from gmfweights.weights import WeightScheme, gmm_measurement_update

__all__ = [
    "GaussianComponent",
    "GaussianMixture",
    "GridField",
    "UnscentedParams",
    "UpdaterSpec",
    "WeightScheme",
    "gmm_measurement_update",
    "Ensemble",
    "engmf_step",
    "ScenarioConfig",
    "utils",
]
