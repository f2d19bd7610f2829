"""
Sloppiness - Gauss-Newton (Fisher information) Hessian of the simulated mispricing
path with respect to log-parameters, and its eigen-spectrum
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from dataclasses_json import dataclass_json
from joblib import Parallel, delayed

from ..config import SLOPPINESS_BURN_IN, SLOPPINESS_DELTA_REL, SLOPPINESS_HORIZON
from ..errors import ChiarellaError, ParameterError
from ..model.model_core import ChiarellaParams
from ..model.simulator import simulate_discrete

logger = logging.getLogger(__name__)

SLOPPINESS_PARAMS = ('kappa', 'beta', 'gamma', 'alpha', 'sigma_n', 'sigma_v')

MODE_LABELS = {
    'sigma_n': 'variance',
    'beta': 'bifurcation',
    'sigma_v': 'value-noise',
    'alpha': 'trend-speed',
    'gamma': 'trend-saturation',
    'kappa': 'value',
    'kappa3': 'value',
}


@dataclass_json
@dataclass
class SloppinessReport:
    param_names: List[str]
    hessian: List[List[float]]
    eigenvalues: List[float]
    raw_eigenvalues: List[float]
    eigenvectors: List[List[float]]
    decades_spanned: float
    mode_labels: List[str] = field(default_factory=list)
    excluded: List[str] = field(default_factory=list)
    n_obs: int = 0

    @property
    def H(self) -> np.ndarray:
        return np.array(self.hessian)

    @property
    def vectors(self) -> np.ndarray:
        """Eigenvectors as unit-norm columns, ordered like eigenvalues"""
        return np.array(self.eigenvectors)


def spectrum(H: np.ndarray, names: Sequence[str], excluded: Sequence[str] = (), n_obs: int = 0) -> SloppinessReport:
    H = 0.5 * (H + H.T)
    values, vectors = np.linalg.eigh(H)
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]
    top = values[0]
    positive = values[values > 0]
    if top <= 0 or len(positive) == 0:
        raise ParameterError("Hessian has no positive curvature")
    decades = math.log10(top / positive[-1]) if len(positive) == len(values) else math.inf
    labels = [MODE_LABELS.get(names[int(np.argmax(np.abs(vectors[:, i])))], 'mixed') for i in range(len(names))]
    return SloppinessReport(
        param_names=list(names),
        hessian=H.tolist(),
        eigenvalues=(values / top).tolist(),
        raw_eigenvalues=values.tolist(),
        eigenvectors=vectors.tolist(),
        decades_spanned=float(decades),
        mode_labels=labels,
        excluded=list(excluded),
        n_obs=n_obs,
    )


def sloppiness_parameters(theta: ChiarellaParams) -> List[str]:
    names = list(SLOPPINESS_PARAMS)
    if not theta.is_linear:
        names.append('kappa3')
    return names


def _perturbed_path(theta: ChiarellaParams, name: str, factor: float, horizon: int, seed: int) -> np.ndarray:
    changed = theta.with_values(**{name: getattr(theta, name) * factor})
    return simulate_discrete(changed, horizon, seed).delta


def sloppiness_hessian(theta: ChiarellaParams, delta_rel: float = SLOPPINESS_DELTA_REL, seed: int = 0,
                       horizon: int = SLOPPINESS_HORIZON, burn_in_fraction: float = SLOPPINESS_BURN_IN,
                       workers: int = 1) -> SloppinessReport:
    """
    H = (2/T) S^T S with S[:, i] = d(delta_t / sigma) / d log(theta_i), central
    differences at +/- delta_rel in log-parameter, every path on the same seed
    """
    if delta_rel <= 0:
        raise ParameterError(f"delta_rel must be > 0, got {delta_rel}")
    reference = simulate_discrete(theta, horizon, seed).delta
    burn = int(len(reference) * burn_in_fraction)
    scale = float(np.std(reference[burn:]))
    if scale <= 0:
        raise ParameterError("reference mispricing path has zero variance")

    names, excluded = [], []
    for name in sloppiness_parameters(theta):
        value = getattr(theta, name)
        if value <= 0:
            logger.warning(f"sloppiness: {name}={value} has no logarithm, excluded")
            excluded.append(name)
            continue
        if name == 'alpha' and value * math.exp(delta_rel) > 1.0:
            logger.warning(f"sloppiness: alpha={value} cannot be perturbed inside (0, 1], excluded")
            excluded.append(name)
            continue
        names.append(name)

    factors = (math.exp(delta_rel), math.exp(-delta_rel))
    tasks = [(name, f) for name in names for f in factors]
    paths = Parallel(n_jobs=workers)(
        delayed(_perturbed_path)(theta, name, f, horizon, seed) for name, f in tasks
    )

    S = np.empty((len(reference) - burn, len(names)))
    for i, name in enumerate(names):
        up, down = paths[2 * i], paths[2 * i + 1]
        S[:, i] = (up[burn:] - down[burn:]) / (2.0 * delta_rel * scale)

    T = S.shape[0]
    H = (2.0 / T) * S.T @ S
    report = spectrum(H, names, excluded, n_obs=T)
    logger.info(f"sloppiness: {len(names)} parameters, spectrum spans {report.decades_spanned:.2f} decades")
    return report


def average_class_hessian(reports: Sequence[SloppinessReport]) -> SloppinessReport:
    """Entrywise mean of same-ordered Hessians, then eigendecomposition"""
    if not reports:
        raise ParameterError("no sloppiness reports to average")
    names = reports[0].param_names
    for report in reports[1:]:
        if report.param_names != names:
            raise ParameterError(f"parameter ordering mismatch: {report.param_names} vs {names}")
    H = np.mean([r.H for r in reports], axis=0)
    excluded = sorted({n for r in reports for n in r.excluded})
    return spectrum(H, names, excluded, n_obs=int(np.mean([r.n_obs for r in reports])))


def alignment(report: SloppinessReport, name: str) -> float:
    """Largest |component| along the named parameter axis over all eigenvectors"""
    i = report.param_names.index(name)
    return float(np.max(np.abs(report.vectors[i, :])))
