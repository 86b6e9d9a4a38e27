"""Measurement-shot generation and the two noise channels.

All randomness flows through numpy's PCG64 generator seeded explicitly, so
every operation is a pure function of (inputs, seed).  Distinct seeds give
independent-looking streams; the algorithm name is recorded on each
SampleSet for reproducibility across machines.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, StructuralError
from .models import DistributionTable, RbmModel

RNG_ALGORITHM = "pcg64"

_BINARY_MAGIC = b"RBMTSMP1"

NOISE_KINDS = ("none", "linf_perturb", "bitflip")


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Matrix of +-1 measurement outcomes, one row per shot."""

    n: int
    shots: np.ndarray
    seed: Optional[int] = None
    algorithm: str = RNG_ALGORITHM

    def __post_init__(self):
        shots = np.ascontiguousarray(np.asarray(self.shots, dtype=np.int8))
        if shots.ndim != 2 or shots.shape[1] != self.n:
            raise StructuralError(f"shots have shape {shots.shape}, expected (count, {self.n})")
        if not np.all(np.abs(shots) == 1):
            raise DomainError("shot entries must be +1 or -1")
        shots.setflags(write=False)
        object.__setattr__(self, "shots", shots)

    @property
    def count(self) -> int:
        return self.shots.shape[0]


@dataclass(frozen=True)
class NoiseSpec:
    """Which noise channel is active, with its parameter.

    Exactly one kind is active and the inactive parameters stay zero.
    ``p_norm`` is the p of the reported L_p distance.
    """

    kind: str = "none"
    eps_inf: float = 0.0
    rho: float = 0.0
    p_norm: float = math.inf

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise DomainError(f"unknown noise kind {self.kind!r}")
        if self.p_norm < 1.0:
            raise DomainError("p_norm must be >= 1")
        if self.kind != "linf_perturb" and self.eps_inf != 0.0:
            raise DomainError("eps_inf must be 0 unless kind is linf_perturb")
        if self.kind != "bitflip" and self.rho != 0.0:
            raise DomainError("rho must be 0 unless kind is bitflip")
        if self.eps_inf < 0.0:
            raise DomainError("eps_inf must be >= 0")
        if not 0.0 <= self.rho <= 1.0:
            raise DomainError("rho must lie in [0, 1]")


@dataclass(frozen=True)
class PerturbReport:
    """Realized distances between the perturbed and original table."""

    linf: float
    lp: float
    p_norm: float


def _indices_to_spins(indices: np.ndarray, n: int) -> np.ndarray:
    bits = (indices[:, None] >> np.arange(n)) & 1
    return (2 * bits - 1).astype(np.int8)


def sample_exact(table: DistributionTable, count: int, seed: int) -> SampleSet:
    """Draw i.i.d. shots from an exact table by inverse-CDF lookup."""
    if count < 1:
        raise DomainError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(table.probs)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(count), side="right")
    idx = np.minimum(idx, len(cdf) - 1).astype(np.int64)
    return SampleSet(table.n, _indices_to_spins(idx, table.n), seed=seed)


def sample_gibbs(model: RbmModel, count: int, burn_in: int, thinning: int,
                 seed: int, chains: int = 1) -> SampleSet:
    """Block-Gibbs shots from an RBM: all hidden given visible, then back.

    Uses p(y_j = 1 | x) = sigmoid(2((J^T x)_j + g_j)) and the symmetric
    update for x.  Records the visible layer every ``thinning`` sweeps
    after ``burn_in``.  With several chains each runs independently on a
    shared stream and contributes an equal share of the shots.
    """
    if count < 1:
        raise DomainError(f"count must be >= 1, got {count}")
    if burn_in < 0 or thinning < 1 or chains < 1:
        raise DomainError("need burn_in >= 0, thinning >= 1, chains >= 1")
    rng = np.random.default_rng(seed)
    per_chain = -(-count // chains)
    x = np.where(rng.random((chains, model.n)) < 0.5, -1.0, 1.0)
    kept = []
    sweeps = burn_in + per_chain * thinning
    for sweep in range(sweeps):
        prob_y = 1.0 / (1.0 + np.exp(-2.0 * (x @ model.J + model.g)))
        y = np.where(rng.random((chains, model.m)) < prob_y, 1.0, -1.0)
        prob_x = 1.0 / (1.0 + np.exp(-2.0 * (y @ model.J.T + model.h)))
        x = np.where(rng.random((chains, model.n)) < prob_x, 1.0, -1.0)
        if sweep >= burn_in and (sweep - burn_in) % thinning == thinning - 1:
            kept.append(x.astype(np.int8))
    # rows come out sweep-major, so truncation drops evenly across chains
    shots = np.concatenate(kept, axis=0)[:count]
    return SampleSet(model.n, shots, seed=seed)


def perturb_linf(table: DistributionTable, eps_inf: float, seed: int,
                 p_norm: float = math.inf):
    """Add i.i.d. Uniform[-eps, eps] noise to each entry, clip at zero,
    renormalize.

    Returns the new table plus the *achieved* L_inf and L_p distances to
    the input; renormalization can push the realized L_inf slightly past
    the request, so the achieved values are authoritative.
    """
    if eps_inf < 0.0:
        raise DomainError("eps_inf must be >= 0")
    if eps_inf == 0.0:
        return table, PerturbReport(linf=0.0, lp=0.0, p_norm=p_norm)
    rng = np.random.default_rng(seed)
    delta = rng.uniform(-eps_inf, eps_inf, size=table.probs.shape)
    raw = np.maximum(table.probs + delta, 0.0)
    if raw.sum() <= 0.0:
        raise DomainError("perturbation drove every probability to zero")
    out = DistributionTable.from_weights(table.n, raw)
    diff = np.abs(out.probs - table.probs)
    report = PerturbReport(linf=float(diff.max()),
                           lp=_p_distance(diff, p_norm),
                           p_norm=p_norm)
    return out, report


def _p_distance(diff: np.ndarray, p: float) -> float:
    if math.isinf(p):
        return float(diff.max())
    return float((diff ** p).sum() ** (1.0 / p))


def apply_bitflip(samples: SampleSet, rho: float, seed: int) -> SampleSet:
    """Independently negate each entry with probability rho."""
    if not 0.0 <= rho <= 1.0:
        raise DomainError("rho must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    flips = rng.random(samples.shots.shape) < rho
    shots = np.where(flips, -samples.shots, samples.shots).astype(np.int8)
    return SampleSet(samples.n, shots, seed=seed, algorithm=samples.algorithm)


# ---------------------------------------------------------------------------
# Sample files
# ---------------------------------------------------------------------------


def save_samples_text(samples: SampleSet, path) -> None:
    """Header line 'n=<n> count=<count> seed=<seed>' then +1/-1 rows."""
    seed = samples.seed if samples.seed is not None else -1
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"n={samples.n} count={samples.count} seed={seed}\n")
        for row in samples.shots:
            fh.write(" ".join("+1" if v > 0 else "-1" for v in row))
            fh.write("\n")


def load_samples_text(path) -> SampleSet:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        fields = dict(part.split("=", 1) for part in header.split())
        try:
            n, count, seed = int(fields["n"]), int(fields["count"]), int(fields["seed"])
        except KeyError as exc:
            raise StructuralError(f"sample file header missing {exc}") from exc
        rows = np.loadtxt(fh, dtype=np.int8, ndmin=2)
    if rows.shape != (count, n):
        raise StructuralError(f"sample file body has shape {rows.shape}, "
                              f"header says {(count, n)}")
    return SampleSet(n, rows, seed=None if seed == -1 else seed)


def save_samples_binary(samples: SampleSet, path) -> None:
    """16-byte header (magic, n, count as uint32 LE), then one byte per
    spin: 0x00 for -1, 0x01 for +1, row-major."""
    body = ((samples.shots + 1) // 2).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(struct.pack("<II", samples.n, samples.count))
        fh.write(body.tobytes(order="C"))


def load_samples_binary(path) -> SampleSet:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _BINARY_MAGIC:
            raise StructuralError(f"bad magic {magic!r} in binary sample file")
        n, count = struct.unpack("<II", fh.read(8))
        body = np.frombuffer(fh.read(), dtype=np.uint8)
    if body.size != n * count:
        raise StructuralError(f"binary sample file has {body.size} spins, "
                              f"header says {n * count}")
    if body.size and body.max() > 1:
        raise StructuralError("binary sample bytes must be 0x00 or 0x01")
    shots = (body.reshape(count, n).astype(np.int8) * 2) - 1
    return SampleSet(int(n), shots)
