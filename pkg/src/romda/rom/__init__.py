from romda.rom.forecast import EnsembleForecast, forecast_ensemble, rollout, uq_scalar
from romda.rom.model import (
    COMPONENTS, LatentGaussian, Normalizer, RomHyper, RomModel, kl_value, normalize_xi,
    reparameterize,
)
from romda.rom.train import Trajectory, train

__all__ = [
    "COMPONENTS", "EnsembleForecast", "LatentGaussian", "Normalizer", "RomHyper", "RomModel",
    "Trajectory", "forecast_ensemble", "kl_value", "normalize_xi", "reparameterize", "rollout",
    "train", "uq_scalar",
]
