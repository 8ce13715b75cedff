"""Matrix-process oracles for the log-gas marginals.

Independent ground truth: sample a Hermitian Brownian matrix (eigenvalues)
or a complex rectangular Brownian matrix (singular values) at matrix time
T = kappa * t_gas and compare against integrated gas paths started near
zero.  Only kappa = 4 has a matrix realization here (beta = 8/kappa = 2).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import EmptySample, NegativeNu, UnsupportedBeta

__all__ = [
    "Ensemble",
    "MatrixSample",
    "sample_gue_eigs",
    "sample_wishart_singvals",
    "ks_distance",
]


class Ensemble(Enum):
    HERMITIAN_BM = "hermitian-bm"
    WISHART_SINGULAR = "wishart-singular"


@dataclass(frozen=True)
class MatrixSample:
    """Sorted eigen/singular values at gas time t_gas (matrix time kappa*t_gas)."""

    values: np.ndarray
    t_gas: float
    ensemble: Ensemble
    nu: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if np.any(np.diff(v) < 0):
            raise ValueError("values must be sorted ascending")
        if self.ensemble is Ensemble.WISHART_SINGULAR and v.size and v[0] < 0:
            raise ValueError("singular values must be nonnegative")

    def write_csv(self, path, *, n: int | None = None, kappa: float = 4.0,
                  seed: int | None = None) -> None:
        """Single-column CSV plus a JSON sidecar."""
        path = Path(path)
        lines = ["value"] + [format(v, ".17g") for v in self.values]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
        meta = {
            "ensemble": self.ensemble.value,
            "N": int(n if n is not None else self.values.size),
            "nu": int(self.nu),
            "t_gas": self.t_gas,
            "kappa": kappa,
            "seed": seed,
        }
        path.with_suffix(".json").write_text(
            json.dumps(meta, indent=2) + "\n", encoding="utf-8", newline="\n"
        )


def _require_kappa4(kappa: float) -> None:
    if kappa != 4.0:
        raise UnsupportedBeta(
            f"matrix oracle requires kappa=4 (beta=2); got kappa={kappa}"
        )


def sample_gue_eigs(n: int, t_gas: float, kappa: float, seed: int) -> MatrixSample:
    """Eigenvalues of a Hermitian Brownian matrix started from zero.

    At matrix time T = kappa * t_gas the matrix is S + i*A with
    independent entries: diagonal S_ii ~ N(0, T), off-diagonal real and
    imaginary parts ~ N(0, T/2), A_ii = 0.  The sorted eigenvalues have
    the law of the interacting gas on R at gas time t_gas started from
    coinciding zeros.  Only the zero start is supported.
    """
    _require_kappa4(kappa)
    if t_gas <= 0:
        raise ValueError("t_gas must be positive")
    rng = np.random.default_rng(seed)
    big_t = kappa * t_gas
    s = np.zeros((n, n))
    a = np.zeros((n, n))
    iu = np.triu_indices(n, k=1)
    s[iu] = rng.normal(0.0, np.sqrt(big_t / 2.0), size=iu[0].size)
    s = s + s.T
    np.fill_diagonal(s, rng.normal(0.0, np.sqrt(big_t), size=n))
    a[iu] = rng.normal(0.0, np.sqrt(big_t / 2.0), size=iu[0].size)
    a = a - a.T
    m = s + 1j * a
    eigs = np.linalg.eigvalsh(m)
    return MatrixSample(np.sort(eigs), t_gas, Ensemble.HERMITIAN_BM)


def sample_wishart_singvals(
    n: int, nu: int, t_gas: float, kappa: float, seed: int
) -> MatrixSample:
    """Singular values of an (N+nu) x N complex Brownian matrix from zero.

    Entries are B + i*B~ with each coordinate N(0, T), T = kappa * t_gas.
    The sorted singular values have the law of the half-line gas at gas
    time t_gas started from zero.
    """
    _require_kappa4(kappa)
    if nu < 0 or int(nu) != nu:
        raise NegativeNu(f"nu must be a nonnegative integer; got {nu}")
    if t_gas <= 0:
        raise ValueError("t_gas must be positive")
    rng = np.random.default_rng(seed)
    big_t = kappa * t_gas
    shape = (n + int(nu), n)
    k = rng.normal(0.0, np.sqrt(big_t), size=shape) + 1j * rng.normal(
        0.0, np.sqrt(big_t), size=shape
    )
    sv = np.linalg.svd(k, compute_uv=False)
    return MatrixSample(np.sort(sv), t_gas, Ensemble.WISHART_SINGULAR, nu=int(nu))


def gue_eigs_batch(n: int, t_gas: float, kappa: float, seeds) -> np.ndarray:
    """Stacked sorted eigenvalue samples, shape (len(seeds), n)."""
    out = np.empty((len(seeds), n))
    for i, seed in enumerate(seeds):
        out[i] = sample_gue_eigs(n, t_gas, kappa, int(seed)).values
    return out


def wishart_singvals_batch(n: int, nu: int, t_gas: float, kappa: float, seeds) -> np.ndarray:
    """Stacked sorted singular-value samples, shape (len(seeds), n)."""
    out = np.empty((len(seeds), n))
    for i, seed in enumerate(seeds):
        out[i] = sample_wishart_singvals(n, nu, t_gas, kappa, int(seed)).values
    return out


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic (sup distance of ECDFs)."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples must be nonempty")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))
