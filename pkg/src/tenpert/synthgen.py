"""Seeded synthetic tensors: collinear CP with noise, compact Laplacians, random factors.

Specs have a one-line text form ``kind:key=value,...`` used on the command
line, e.g. ``collinear:N=4,s=20,R=4,seed=3`` or ``laplacian:N=4,n=6``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import tensor_core as tc
from .decomp_cp import KruskalModel

KINDS = ("collinear", "laplacian", "random-factor")
CHOLESKY_TRIES = 100
NOISE_RESTARTS = 10


@dataclass(frozen=True)
class SynthSpec:
    kind: str = "collinear"
    N: int = 3
    s: int = 10
    n: int = 4  # stencil size for the Laplacian; modes have size n**2
    R: int = 3
    c_lo: float = 0.5
    c_hi: float = 0.9
    lam_lo: float = 0.2
    lam_hi: float = 0.8
    eta: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        if self.N < 1 or self.s < 1 or self.n < 1 or self.R < 1:
            raise ValueError("N, s, n and R must be positive")
        if not 0 <= self.c_lo <= self.c_hi < 1:
            raise ValueError(f"need 0 <= c_lo <= c_hi < 1, got [{self.c_lo}, {self.c_hi}]")
        if self.lam_lo > self.lam_hi:
            raise ValueError("lam_lo must not exceed lam_hi")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")

    @property
    def shape(self) -> tuple[int, ...]:
        side = self.n**2 if self.kind == "laplacian" else self.s
        return (side,) * self.N

    @classmethod
    def parse(cls, text: str) -> "SynthSpec":
        kind, _, body = text.strip().partition(":")
        types = {f.name: f.type for f in fields(cls)}
        kw = {"kind": kind.strip()}
        for item in filter(None, (p.strip() for p in body.split(","))):
            key, eq, value = item.partition("=")
            key = key.strip()
            if not eq or key not in types or key == "kind":
                raise ValueError(f"bad synth field {item!r}")
            kw[key] = int(value) if types[key] in (int, "int") else float(value)
        return cls(**kw)

    def to_text(self) -> str:
        keys = {"collinear": ("N", "s", "R", "c_lo", "c_hi", "lam_lo", "lam_hi", "eta", "seed"),
                "laplacian": ("N", "n"),
                "random-factor": ("N", "s", "R", "seed")}[self.kind]
        parts = [f"{k}={getattr(self, k)}" for k in keys]
        return f"{self.kind}:" + ",".join(parts)

    def with_seed(self, seed: int) -> "SynthSpec":
        return replace(self, seed=int(seed))

    def as_dict(self) -> dict:
        return asdict(self)


def sample_collinearity(rng: np.random.Generator, R: int, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric ``C`` with unit diagonal and off-diagonals in ``[lo, hi]``, with its Cholesky factor."""
    for _ in range(CHOLESKY_TRIES):
        C = np.eye(R)
        iu = np.triu_indices(R, 1)
        C[iu] = rng.uniform(lo, hi, size=len(iu[0]))
        C = np.triu(C) + np.triu(C, 1).T
        try:
            return C, np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError(f"no positive definite collinearity matrix after {CHOLESKY_TRIES} draws")


def collinear_factors(rng: np.random.Generator, s: int, L: np.ndarray) -> np.ndarray:
    """``Q L^T`` with ``Q`` orthonormal, so column cosines are exactly ``L L^T``."""
    R = L.shape[0]
    Q, _ = np.linalg.qr(rng.standard_normal((s, R)))
    return Q @ L.T


def _check_kind(spec, kind):
    if spec.kind != kind:
        raise ValueError(f"expected a {kind} spec, got {spec.kind}")


def gen_collinear(spec: SynthSpec) -> tuple[np.ndarray, KruskalModel]:
    """Low-rank tensor with controlled column collinearity plus scaled uniform noise.

    One matrix ``C`` is drawn first and shared by all modes; each factor is
    ``Q L^T`` with its own orthonormal ``Q``.  Weights ``lambda_k`` fold into
    the first factor.  The noise is rescaled so that its spectral norm estimate
    is ``eta`` times that of the noiseless tensor.
    """
    _check_kind(spec, "collinear")
    if spec.R > spec.s:
        raise ValueError(f"rank {spec.R} exceeds mode size {spec.s}")
    rng = np.random.default_rng(spec.seed)
    _, L = sample_collinearity(rng, spec.R, spec.c_lo, spec.c_hi)
    factors = [collinear_factors(rng, spec.s, L) for _ in range(spec.N)]
    lam = rng.uniform(spec.lam_lo, spec.lam_hi, size=spec.R)
    factors[0] = factors[0] * lam
    truth = KruskalModel(factors)
    with tc.counting():
        X = truth.full()
        if spec.eta > 0:
            noise = rng.random(spec.shape)
            scale = spec.eta * tc.spectral_norm(X, restarts=NOISE_RESTARTS) / tc.spectral_norm(noise, restarts=NOISE_RESTARTS)
            X = X + scale * noise
    return X, truth


def laplacian_stencil(n: int) -> np.ndarray:
    return 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)


def gen_laplacian(N: int, n: int) -> np.ndarray:
    """``sum_k vec(I) o ... o vec(D) o ... o vec(I)`` with ``vec(D)`` in slot ``k``.

    Order ``N``, every mode of size ``n**2``; the CP rank is at most ``N``.
    """
    if N < 1 or n < 1:
        raise ValueError("order and stencil size must be positive")
    eye = np.eye(n).reshape(-1)
    D = laplacian_stencil(n).reshape(-1)
    factors = [np.stack([D if k == m else eye for k in range(N)], axis=1) for m in range(N)]
    with tc.counting():
        return KruskalModel(factors).full()


def gen_random_factor(spec: SynthSpec) -> tuple[np.ndarray, KruskalModel]:
    """Exact rank-``R`` tensor from uniform ``[0, 1)`` factors."""
    _check_kind(spec, "random-factor")
    rng = np.random.default_rng(spec.seed)
    truth = KruskalModel([rng.random((spec.s, spec.R)) for _ in range(spec.N)])
    with tc.counting():
        return truth.full(), truth


def generate(spec: SynthSpec) -> tuple[np.ndarray, KruskalModel | None]:
    """Dispatch on ``spec.kind``; Laplacians have no stored ground truth."""
    if spec.kind == "collinear":
        return gen_collinear(spec)
    if spec.kind == "random-factor":
        return gen_random_factor(spec)
    return gen_laplacian(spec.N, spec.n), None
