"""Sparse GP regression of planar displacement residuals.

Each output axis gets an independent GP with a squared-exponential kernel.
The posterior uses the deterministic training conditional (DTC)
approximation with inducing points placed by k-means on the inputs.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import cho_solve, solve_triangular

from .errors import SingularKernel

JITTER_START = 1e-8
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class KernelSettings:
    lengthscale: float = 3.0
    signal_std: float = 0.3
    noise_std: float = 0.1
    optimize: bool = False
    lengthscale_grid: tuple = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)


@dataclass
class ResidualDataset:
    inputs: np.ndarray  # (n, 2) hop start positions
    outputs: np.ndarray  # (n, 2) realized minus predicted displacement

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1, 2)
        self.outputs = np.asarray(self.outputs, dtype=float).reshape(-1, 2)
        if len(self.inputs) != len(self.outputs):
            raise ValueError("inputs and outputs differ in length")

    def __len__(self):
        return len(self.inputs)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 2)), np.zeros((0, 2)))


def se_kernel(a: np.ndarray, b: np.ndarray, lengthscale: float, signal_std: float) -> np.ndarray:
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return signal_std**2 * np.exp(-0.5 * d2 / lengthscale**2)


def _chol_with_jitter(mat: np.ndarray, scale: float) -> np.ndarray:
    """Cholesky factor, adding diagonal jitter only when the plain factorization fails."""
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(len(mat))
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(mat + jitter * scale * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise SingularKernel("inducing kernel matrix is singular even with maximal jitter")


@dataclass
class SparseGp:
    """Fitted single-output sparse GP.  Immutable after construction."""

    kernel: KernelSettings
    inducing: np.ndarray
    _chol_uu: Optional[np.ndarray] = field(default=None, repr=False)
    _chol_b: Optional[np.ndarray] = field(default=None, repr=False)
    _c: Optional[np.ndarray] = field(default=None, repr=False)
    n_data: int = 0
    log_marginal: float = float("nan")

    @classmethod
    def prior(cls, kernel: KernelSettings = KernelSettings()):
        return cls(kernel, np.zeros((0, 2)))

    def predict(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent variance at ``points`` (n, 2) or a single (2,)."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = pts.reshape(-1, 2)
        kern = self.kernel
        prior_var = np.full(len(pts), kern.signal_std**2)
        if self.n_data == 0:
            mean, var = np.zeros(len(pts)), prior_var
        else:
            kus = se_kernel(self.inducing, pts, kern.lengthscale, kern.signal_std)
            t1 = solve_triangular(self._chol_uu, kus, lower=True)
            t2 = solve_triangular(self._chol_b, t1, lower=True)
            mean = t2.T @ self._c
            var = prior_var - (t1**2).sum(0) + (t2**2).sum(0)
            var = np.clip(var, 0.0, prior_var)
        if single:
            return float(mean[0]), float(var[0])
        return mean, var


def choose_inducing(inputs: np.ndarray, eta: int, seed) -> np.ndarray:
    uniq = np.unique(inputs, axis=0)
    if eta >= len(uniq):
        return uniq
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        centroids, _ = kmeans2(inputs, eta, minit="++", seed=np.random.default_rng(seed))
    return np.unique(centroids, axis=0)


def _fit_axis(inputs: np.ndarray, y: np.ndarray, inducing: np.ndarray,
              kern: KernelSettings) -> SparseGp:
    sn = kern.noise_std
    kuu = se_kernel(inducing, inducing, kern.lengthscale, kern.signal_std)
    chol_uu = _chol_with_jitter(kuu, kern.signal_std**2)
    kuf = se_kernel(inducing, inputs, kern.lengthscale, kern.signal_std)
    a = solve_triangular(chol_uu, kuf, lower=True) / sn
    bmat = np.eye(len(inducing)) + a @ a.T
    chol_b = _chol_with_jitter(bmat, 1.0)
    c = solve_triangular(chol_b, a @ y, lower=True) / sn
    n = len(y)
    logdet = 2.0 * np.log(np.diag(chol_b)).sum() + n * np.log(sn**2)
    quad = (y @ y) / sn**2 - c @ c
    lml = -0.5 * (quad + logdet + n * np.log(2 * np.pi))
    return SparseGp(kern, inducing, chol_uu, chol_b, c, n, float(lml))


def fit(dataset: ResidualDataset, eta: int = 50, hyper: KernelSettings = KernelSettings(),
        seed=0) -> tuple[SparseGp, SparseGp]:
    """Fit independent per-axis sparse GPs to a residual dataset."""
    if eta < 1:
        raise ValueError("need at least one inducing point")
    if len(dataset) == 0:
        return SparseGp.prior(hyper), SparseGp.prior(hyper)
    inducing = choose_inducing(dataset.inputs, eta, seed)
    models = []
    for axis in range(2):
        y = dataset.outputs[:, axis]
        if hyper.optimize:
            best = None
            for ell in hyper.lengthscale_grid:
                cand = _fit_axis(dataset.inputs, y, inducing,
                                 KernelSettings(ell, hyper.signal_std, hyper.noise_std))
                if best is None or cand.log_marginal > best.log_marginal:
                    best = cand
            models.append(best)
        else:
            models.append(_fit_axis(dataset.inputs, y, inducing, hyper))
    return models[0], models[1]


def exact_gp_predict(inputs, y, points, kern: KernelSettings):
    """Full (non-sparse) GP posterior, used as a reference."""
    inputs = np.asarray(inputs, dtype=float).reshape(-1, 2)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    kff = se_kernel(inputs, inputs, kern.lengthscale, kern.signal_std)
    chol = np.linalg.cholesky(kff + kern.noise_std**2 * np.eye(len(inputs)))
    kfs = se_kernel(inputs, pts, kern.lengthscale, kern.signal_std)
    mean = kfs.T @ cho_solve((chol, True), y)
    v = solve_triangular(chol, kfs, lower=True)
    var = kern.signal_std**2 - (v**2).sum(0)
    return mean, var


@dataclass(frozen=True)
class HopRecord:
    """Minimal per-hop log entry needed to form residuals."""

    start: tuple
    predicted: tuple
    realized: tuple


def residuals_from_log(log: Iterable) -> ResidualDataset:
    """Residual = realized minus model-predicted displacement, keyed by hop start.

    Entries need ``start``, ``predicted`` and ``realized`` attributes (or keys).
    """
    starts, res = [], []
    for entry in log:
        get = entry.get if isinstance(entry, dict) else lambda k: getattr(entry, k)
        starts.append(get("start"))
        res.append(np.asarray(get("realized"), dtype=float) - np.asarray(get("predicted"), dtype=float))
    if not starts:
        return ResidualDataset.empty()
    return ResidualDataset(np.array(starts, dtype=float), np.array(res))


def save_gps(path, gps: Sequence[SparseGp]):
    arrays = {}
    for i, gp in enumerate(gps):
        k = gp.kernel
        arrays[f"gp{i}_kernel"] = np.array([k.lengthscale, k.signal_std, k.noise_std])
        arrays[f"gp{i}_inducing"] = gp.inducing
        arrays[f"gp{i}_n"] = np.array([gp.n_data])
        if gp.n_data:
            arrays[f"gp{i}_chol_uu"] = gp._chol_uu
            arrays[f"gp{i}_chol_b"] = gp._chol_b
            arrays[f"gp{i}_c"] = gp._c
    np.savez(path, count=np.array([len(gps)]), **arrays)


def load_gps(path) -> list[SparseGp]:
    data = np.load(path)
    out = []
    for i in range(int(data["count"][0])):
        ell, sf, sn = data[f"gp{i}_kernel"]
        kern = KernelSettings(float(ell), float(sf), float(sn))
        n = int(data[f"gp{i}_n"][0])
        if n:
            out.append(SparseGp(kern, data[f"gp{i}_inducing"], data[f"gp{i}_chol_uu"],
                                data[f"gp{i}_chol_b"], data[f"gp{i}_c"], n))
        else:
            out.append(SparseGp.prior(kern))
    return out
