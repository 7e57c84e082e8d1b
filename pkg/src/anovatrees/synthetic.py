"""Synthetic benchmark: Friedman's test function with uniform covariates
and noise scaled to a target in-sample signal-to-noise ratio."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dataset import DataMatrix
from .errors import UsageError


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    p: int
    snr: float
    seed: int

    def validate(self):
        if self.p < 5:
            raise UsageError(f"p >= 5 required (the signal uses 5 covariates), got {self.p}")
        if not self.snr > 0:
            raise UsageError(f"snr must be positive, got {self.snr}")
        if self.n < 2:
            raise UsageError(f"n must be >= 2, got {self.n}")


@dataclass(frozen=True)
class SyntheticData:
    data: DataMatrix
    signal: np.ndarray
    sigma_eps: float


def friedman(x) -> float:
    """10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5; coordinates past
    the fifth are ignored. Accepts a vector or a matrix of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 5:
        raise UsageError(f"need at least 5 coordinates, got {x.shape[-1]}")
    val = (10.0 * np.sin(np.pi * x[..., 0] * x[..., 1])
           + 20.0 * (x[..., 2] - 0.5) ** 2
           + 10.0 * x[..., 3] + 5.0 * x[..., 4])
    return float(val) if val.ndim == 0 else val


def generate(spec: SyntheticSpec, rng=None) -> SyntheticData:
    """Covariates uniform on (0,1)^p; response is the Friedman signal plus
    Gaussian noise whose variance is the in-sample signal variance divided
    by the requested SNR (an infinite SNR gives the noiseless signal)."""
    spec.validate()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    x = rng.random((spec.n, spec.p))
    signal = friedman(x)
    if math.isinf(spec.snr):
        sigma_eps = 0.0
        y = signal.copy()
    else:
        sigma_eps = float(np.sqrt(np.var(signal) / spec.snr))
        y = signal + sigma_eps * rng.standard_normal(spec.n)
    names = tuple(f"x{j}" for j in range(1, spec.p + 1))
    return SyntheticData(
        data=DataMatrix(x=x, y=y, column_names=names),
        signal=signal,
        sigma_eps=sigma_eps,
    )


def write_csv(sd: SyntheticData, csv_path, sidecar_path=None):
    """Emit a CSV shaped like ingested real data (covariates then a final
    ``y`` column) plus a JSON sidecar with the noise level and the true
    signal for oracle evaluation."""
    d = sd.data
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(",".join((*d.column_names, "y")) + "\n")
        for i in range(d.n):
            cells = [repr(float(v)) for v in d.x[i]]
            cells.append(repr(float(d.y[i])))
            fh.write(",".join(cells) + "\n")
    if sidecar_path is not None:
        payload = {
            "n": d.n,
            "p": d.p,
            "sigma_eps": sd.sigma_eps,
            "signal": [float(v) for v in sd.signal],
        }
        with open(sidecar_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.write("\n")
