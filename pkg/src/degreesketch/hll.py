"""HyperLogLog sketches with sparse and dense registers.

A sketch hashes each 64-bit element, uses the top ``p`` bits of the hash as
a register index and the leading-zero count (plus one) of the remaining
``q = 64 - p`` bits as a rank, and keeps the per-register maximum rank.
Small sketches keep only their nonzero registers; once more than ``r / 4``
registers are set the sketch saturates into a dense byte array.

Cardinalities are estimated with the LogLogBeta estimator

    E = alpha_r * r * (r - z) / (beta(z) + sum_i 2**-reg_i)

where ``z`` is the number of zero registers and ``beta`` is a fitted bias
polynomial (see :func:`calibrate_beta`).
"""

from __future__ import annotations

import enum
import functools
import math
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, optimize

__all__ = [
    "CalibrationError",
    "HllParams",
    "HllSketch",
    "Mode",
    "ParamsMismatchError",
    "alpha",
    "beta_features",
    "calibrate_beta",
    "hash64",
    "hash64_array",
    "hash_split",
    "hash_split_array",
    "estimate_histogram",
    "histogram_sum",
    "load_calibration",
    "merge",
    "read_calibration",
    "write_calibration",
]

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
NUM_BETA_COEFFS = 8


class ParamsMismatchError(ValueError):
    """Two sketches built with different prefix sizes or hash seeds were combined."""


class CalibrationError(ValueError):
    """Raised when no usable bias calibration exists or one cannot be fitted."""


class Mode(enum.IntEnum):
    SPARSE = 0
    DENSE = 1


# --------------------------------------------------------------------- hashing


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def hash_key(seed: int) -> int:
    """Derive the additive hash key for a seed."""
    return _mix64((seed * _GOLDEN + 1) & MASK64)


def hash64(element: int, key: int) -> int:
    """Keyed 64-bit hash of a 64-bit element (a bijection for a fixed key).

    This is the splitmix64 finalizer applied to ``element * golden + key``.
    """
    return _mix64(((element & MASK64) * _GOLDEN + key) & MASK64)


def hash64_array(elements: np.ndarray, key: int) -> np.ndarray:
    """Vectorized :func:`hash64`; returns a ``uint64`` array."""
    z = np.asarray(elements).astype(np.uint64, copy=True)
    # uint64 array arithmetic wraps modulo 2**64.
    z *= np.uint64(_GOLDEN)
    z += np.uint64(key)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX2)
    z ^= z >> np.uint64(31)
    return z


def _bit_length_array(v: np.ndarray) -> np.ndarray:
    # float64 is exact below 2**32, so split the word in halves.
    hi = (v >> np.uint64(32)).astype(np.float64)
    lo = (v & np.uint64(0xFFFFFFFF)).astype(np.float64)
    _, e_hi = np.frexp(hi)
    _, e_lo = np.frexp(lo)
    return np.where(hi > 0, e_hi + 32, e_lo).astype(np.int64)


# ---------------------------------------------------------------- parameters


@functools.lru_cache(maxsize=None)
def alpha(r: int) -> float:
    """Bias-correction constant alpha_r by numerical quadrature.

    alpha_r = 1 / (r * integral_0^inf log2((2 + u) / (1 + u))**r du). The
    integral is taken in the variable s = r*u so the integrand has unit scale.
    """
    if r < 2 or r & (r - 1):
        raise ValueError(f"register count must be a power of two >= 2, got {r}")

    def integrand(s: float) -> float:
        u = s / r
        return math.exp(r * math.log(math.log2((2.0 + u) / (1.0 + u))))

    head, _ = integrate.quad(integrand, 0.0, 50.0, limit=200, epsabs=0, epsrel=1e-12)
    tail, _ = integrate.quad(integrand, 50.0, np.inf, limit=200)
    return 1.0 / (head + tail)


def beta_features(z: np.ndarray | float) -> np.ndarray:
    """Design row(s) ``[z, L, L^2, ..., L^7]`` with ``L = log(z + 1)``.

    Every feature vanishes at ``z = 0``, so the correction switches off once
    all registers are occupied.
    """
    z = np.asarray(z, dtype=np.float64)
    lz = np.log1p(z)
    cols = [z] + [lz**i for i in range(1, NUM_BETA_COEFFS)]
    return np.stack(cols, axis=-1)


def _calibration_path(p: int) -> Path:
    return Path(str(resources.files("degreesketch") / "data" / "beta" / f"p{p:02d}.txt"))


def write_calibration(path: str | Path, p: int, coeffs: Sequence[float]) -> None:
    coeffs = list(coeffs)
    if len(coeffs) != NUM_BETA_COEFFS:
        raise ValueError(f"expected {NUM_BETA_COEFFS} coefficients, got {len(coeffs)}")
    text = f"p={p}\n" + " ".join(f"{c:.17g}" for c in coeffs) + "\n"
    Path(path).write_text(text)


def read_calibration(path: str | Path) -> tuple[int, tuple[float, ...]]:
    lines = Path(path).read_text().split("\n")
    if len(lines) < 2 or not lines[0].startswith("p="):
        raise CalibrationError(f"{path}: malformed calibration file")
    p = int(lines[0][2:])
    coeffs = tuple(float(tok) for tok in lines[1].split())
    if len(coeffs) != NUM_BETA_COEFFS:
        raise CalibrationError(
            f"{path}: expected {NUM_BETA_COEFFS} coefficients, got {len(coeffs)}"
        )
    return p, coeffs


@functools.lru_cache(maxsize=None)
def load_calibration(p: int) -> tuple[float, ...]:
    """Bundled bias coefficients for prefix size ``p``."""
    path = _calibration_path(p)
    if not path.exists():
        raise CalibrationError(
            f"no beta calibration bundled for p={p}; run calibrate_beta and pass "
            "beta_coeffs explicitly"
        )
    file_p, coeffs = read_calibration(path)
    if file_p != p:
        raise CalibrationError(f"{path}: file is for p={file_p}, wanted p={p}")
    return coeffs


@dataclass(frozen=True)
class HllParams:
    """Shared configuration of every sketch that will be merged or intersected.

    ``beta_coeffs`` defaults to the bundled calibration for ``p``; construction
    fails if none exists.
    """

    p: int
    seed: int = 0
    beta_coeffs: tuple[float, ...] | None = None
    q: int = field(init=False)
    r: int = field(init=False)
    alpha: float = field(init=False, repr=False)
    key: int = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not 4 <= self.p <= 16:
            raise ValueError(f"prefix size p must be in [4, 16], got {self.p}")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        coeffs = self.beta_coeffs
        if coeffs is None:
            coeffs = load_calibration(self.p)
        coeffs = tuple(float(c) for c in coeffs)
        if len(coeffs) != NUM_BETA_COEFFS:
            raise ValueError(f"expected {NUM_BETA_COEFFS} beta coefficients")
        object.__setattr__(self, "beta_coeffs", coeffs)
        object.__setattr__(self, "q", 64 - self.p)
        object.__setattr__(self, "r", 1 << self.p)
        object.__setattr__(self, "alpha", alpha(1 << self.p))
        object.__setattr__(self, "key", hash_key(self.seed))

    def compatible(self, other: HllParams) -> bool:
        return self.p == other.p and self.seed == other.seed

    def check_compatible(self, other: HllParams) -> None:
        if not self.compatible(other):
            raise ParamsMismatchError(
                f"sketch params differ: p={self.p}/seed={self.seed} vs "
                f"p={other.p}/seed={other.seed}"
            )

    def beta(self, z: float) -> float:
        c = self.beta_coeffs
        lz = math.log1p(z)
        acc = 0.0
        for coef in reversed(c[1:]):
            acc = (acc + coef) * lz
        return c[0] * z + acc

    @property
    def sparse_limit(self) -> int:
        return self.r // 4


def hash_split(element: int, params: HllParams) -> tuple[int, int]:
    """Register index and rank of ``element``."""
    w = hash64(element, params.key)
    q = params.q
    suffix = w & ((1 << q) - 1)
    return w >> q, q - suffix.bit_length() + 1


def hash_split_array(elements: np.ndarray, params: HllParams) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`hash_split`; returns ``(buckets, ranks)`` as int64 arrays."""
    w = hash64_array(elements, params.key)
    q = params.q
    buckets = (w >> np.uint64(q)).astype(np.int64)
    suffix = w & np.uint64((1 << q) - 1)
    ranks = q - _bit_length_array(suffix) + 1
    return buckets, ranks


def _register_max(buckets: np.ndarray, ranks: np.ndarray, r: int) -> np.ndarray:
    """Per-bucket maximum rank as a length-``r`` uint8 vector."""
    out = np.zeros(r, dtype=np.uint8)
    if buckets.size:
        np.maximum.at(out, buckets, ranks.astype(np.uint8))
    return out


_POW2NEG = np.ldexp(1.0, -np.arange(256)).astype(np.float64)

def histogram_sum(hist: np.ndarray) -> float:
    """sum_k hist[k] * 2**-k."""
    return float(np.asarray(hist, dtype=np.float64) @ _POW2NEG[: len(hist)])


def estimate_histogram(params: HllParams, hist: np.ndarray) -> float:
    """LogLogBeta estimate from a register-value histogram (``hist[0] = z``)."""
    r = params.r
    z = int(hist[0])
    if z == r:
        return 0.0
    return params.alpha * r * (r - z) / (params.beta(z) + histogram_sum(hist))


_HEADER = struct.Struct("<BI")
_COUNT = struct.Struct("<I")
_PAIR_DTYPE = np.dtype([("index", "<u2"), ("value", "u1")])


# -------------------------------------------------------------------- sketch


class HllSketch:
    """Mutable, single-owner HyperLogLog sketch.

    Sparse sketches hold a ``{index: value}`` map of nonzero registers; dense
    sketches hold a ``bytearray`` of ``r`` registers.
    """

    __slots__ = ("params", "_sparse", "_dense", "_nonzero")

    def __init__(self, params: HllParams, dense: bool = False) -> None:
        self.params = params
        self._sparse: dict[int, int] | None = None if dense else {}
        self._dense: bytearray | None = bytearray(params.r) if dense else None
        self._nonzero = 0

    # -- construction helpers
    @classmethod
    def from_elements(
        cls, params: HllParams, elements: Iterable[int] | np.ndarray, dense: bool = False
    ) -> HllSketch:
        if not isinstance(elements, np.ndarray):
            elements = np.fromiter(elements, dtype=np.uint64)
        sk = cls(params, dense=dense)
        sk.insert_many(elements)
        return sk

    @classmethod
    def from_registers(cls, params: HllParams, registers: np.ndarray, dense: bool = False) -> HllSketch:
        """Build the sketch whose abstract register vector is ``registers``."""
        regs = np.asarray(registers, dtype=np.uint8)
        if regs.shape != (params.r,):
            raise ValueError(f"expected {params.r} registers, got shape {regs.shape}")
        if regs.max(initial=0) > params.q + 1:
            raise ValueError("register value exceeds q + 1")
        sk = cls(params, dense=dense)
        sk._absorb(regs)
        return sk

    def copy(self) -> HllSketch:
        sk = HllSketch.__new__(HllSketch)
        sk.params = self.params
        sk._sparse = None if self._sparse is None else dict(self._sparse)
        sk._dense = None if self._dense is None else bytearray(self._dense)
        sk._nonzero = self._nonzero
        return sk

    # -- state
    @property
    def mode(self) -> Mode:
        return Mode.SPARSE if self._sparse is not None else Mode.DENSE

    @property
    def z(self) -> int:
        """Number of zero registers."""
        return self.params.r - self._nonzero

    @property
    def sparse_registers(self) -> list[tuple[int, int]]:
        if self._sparse is None:
            raise ValueError("sketch is dense")
        return sorted(self._sparse.items())

    @property
    def dense_registers(self) -> np.ndarray:
        if self._dense is None:
            raise ValueError("sketch is sparse")
        return np.frombuffer(self._dense, dtype=np.uint8)

    def registers(self) -> np.ndarray:
        """The abstract register vector (a fresh uint8 array of length r)."""
        if self._dense is not None:
            return np.array(self._dense, dtype=np.uint8)
        out = np.zeros(self.params.r, dtype=np.uint8)
        if self._sparse:
            idx = np.fromiter(self._sparse.keys(), dtype=np.int64, count=len(self._sparse))
            val = np.fromiter(self._sparse.values(), dtype=np.uint8, count=len(self._sparse))
            out[idx] = val
        return out

    def is_empty(self) -> bool:
        return self._nonzero == 0

    def same_registers(self, other: HllSketch) -> bool:
        self.params.check_compatible(other.params)
        if self._sparse is not None and other._sparse is not None:
            return self._sparse == other._sparse
        return bool(np.array_equal(self.registers(), other.registers()))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HllSketch):
            return NotImplemented
        return self.params.compatible(other.params) and self.same_registers(other)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"HllSketch(p={self.params.p}, mode={self.mode.name.lower()}, nonzero={self._nonzero})"

    # -- mutation
    def insert(self, element: int) -> None:
        params = self.params
        q = params.q
        w = hash64(element, params.key)
        self.insert_register(w >> q, q - (w & ((1 << q) - 1)).bit_length() + 1)

    def insert_register(self, j: int, x: int) -> None:
        """Raise register ``j`` to at least ``x``."""
        sparse = self._sparse
        if sparse is None:
            dense = self._dense
            old = dense[j]
            if x > old:
                if old == 0:
                    self._nonzero += 1
                dense[j] = x
            return
        old = sparse.get(j, 0)
        if x > old:
            if old == 0:
                self._nonzero += 1
            sparse[j] = x
            if len(sparse) > self.params.sparse_limit:
                self.saturate()

    def insert_many(self, elements: np.ndarray) -> None:
        """Insert a batch of elements (vectorized hashing)."""
        elements = np.asarray(elements)
        if elements.size == 0:
            return
        buckets, ranks = hash_split_array(elements.ravel(), self.params)
        self._absorb(_register_max(buckets, ranks, self.params.r))

    def _absorb(self, regs: np.ndarray) -> None:
        """Register-wise max with a full uint8 register vector."""
        if self._sparse is not None and np.count_nonzero(regs) > self.params.sparse_limit:
            self.saturate()
        if self._dense is not None:
            view = np.frombuffer(self._dense, dtype=np.uint8)
            np.maximum(view, regs, out=view)
            self._nonzero = int(np.count_nonzero(view))
            return
        sparse = self._sparse
        idx = np.flatnonzero(regs)
        for j, x in zip(idx.tolist(), regs[idx].tolist()):
            if x > sparse.get(j, 0):
                sparse[j] = x
        self._nonzero = len(sparse)
        if len(sparse) > self.params.sparse_limit:
            self.saturate()

    def saturate(self) -> None:
        """Convert a sparse sketch to dense mode in place."""
        if self._sparse is None:
            raise RuntimeError("saturate() called on a dense sketch")
        dense = bytearray(self.params.r)
        for j, x in self._sparse.items():
            dense[j] = x
        self._dense = dense
        self._sparse = None

    def update(self, other: HllSketch) -> None:
        """In-place union: ``self <- self U other``."""
        self.params.check_compatible(other.params)
        if other._sparse is not None:
            sparse, dense = self._sparse, self._dense
            if sparse is None:
                nz = self._nonzero
                for j, x in other._sparse.items():
                    old = dense[j]
                    if x > old:
                        if old == 0:
                            nz += 1
                        dense[j] = x
                self._nonzero = nz
                return
            for j, x in other._sparse.items():
                if x > sparse.get(j, 0):
                    sparse[j] = x
            self._nonzero = len(sparse)
            if len(sparse) > self.params.sparse_limit:
                self.saturate()
            return
        if self._sparse is not None:
            self.saturate()
        view = np.frombuffer(self._dense, dtype=np.uint8)
        np.maximum(view, np.frombuffer(other._dense, dtype=np.uint8), out=view)
        self._nonzero = int(np.count_nonzero(view))

    # -- estimation
    def register_histogram(self) -> np.ndarray:
        """Counts of each register value 0..q+1."""
        size = self.params.q + 2
        if self._dense is not None:
            return np.bincount(np.frombuffer(self._dense, dtype=np.uint8), minlength=size)
        hist = np.bincount(
            np.fromiter(self._sparse.values(), dtype=np.int64, count=len(self._sparse)),
            minlength=size,
        )
        hist[0] = self.params.r - len(self._sparse)
        return hist

    def register_sum(self) -> float:
        """sum_i 2**-reg_i over all r registers, zero registers included."""
        return histogram_sum(self.register_histogram())

    def estimate(self) -> float:
        """LogLogBeta cardinality estimate."""
        return estimate_histogram(self.params, self.register_histogram())

    def raw_estimate(self) -> float:
        """Uncorrected harmonic-mean estimate alpha_r * r**2 / sum 2**-reg."""
        return self.params.alpha * self.params.r**2 / self.register_sum()

    # -- serialization
    def to_bytes(self) -> bytes:
        if self._dense is not None:
            return _HEADER.pack(Mode.DENSE, self.z) + bytes(self._dense)
        pairs = np.empty(len(self._sparse), dtype=_PAIR_DTYPE)
        if len(self._sparse):
            items = sorted(self._sparse.items())
            pairs["index"] = [j for j, _ in items]
            pairs["value"] = [x for _, x in items]
        return _HEADER.pack(Mode.SPARSE, self.z) + _COUNT.pack(len(pairs)) + pairs.tobytes()

    @classmethod
    def from_bytes(cls, params: HllParams, data: bytes | memoryview, offset: int = 0) -> HllSketch:
        sk, _ = cls.read_from(params, data, offset)
        return sk

    @classmethod
    def read_from(
        cls, params: HllParams, data: bytes | memoryview, offset: int = 0
    ) -> tuple[HllSketch, int]:
        """Decode one sketch at ``offset``; returns the sketch and the end offset."""
        mode, z = _HEADER.unpack_from(data, offset)
        offset += _HEADER.size
        r = params.r
        sk = cls.__new__(cls)
        sk.params = params
        if mode == Mode.DENSE:
            end = offset + r
            if end > len(data):
                raise ValueError("truncated dense sketch")
            sk._dense = bytearray(data[offset:end])
            sk._sparse = None
            nonzero = r - sk._dense.count(0)
        elif mode == Mode.SPARSE:
            (count,) = _COUNT.unpack_from(data, offset)
            offset += _COUNT.size
            end = offset + count * _PAIR_DTYPE.itemsize
            if end > len(data):
                raise ValueError("truncated sparse sketch")
            pairs = np.frombuffer(data, dtype=_PAIR_DTYPE, count=count, offset=offset)
            sk._sparse = dict(zip(pairs["index"].tolist(), pairs["value"].tolist()))
            sk._dense = None
            nonzero = len(sk._sparse)
            if nonzero != count or count > params.sparse_limit:
                raise ValueError("invalid sparse register list")
        else:
            raise ValueError(f"unknown sketch mode tag {mode}")
        if r - nonzero != z:
            raise ValueError(f"zero-register count mismatch: header {z}, data {r - nonzero}")
        sk._nonzero = nonzero
        return sk, end


def merge(*sketches: HllSketch, dense: bool = False) -> HllSketch:
    """n-ary union of sketches sharing params (register-wise maximum).

    The result starts as an empty sketch (sparse unless ``dense``) so its mode
    depends only on how many registers end up nonzero.
    """
    if len(sketches) == 1 and isinstance(sketches[0], (list, tuple)):
        sketches = tuple(sketches[0])
    if not sketches:
        raise ValueError("merge() needs at least one sketch")
    params = sketches[0].params
    for sk in sketches[1:]:
        params.check_compatible(sk.params)
    out = HllSketch(params, dense=dense)
    if all(sk._sparse is not None for sk in sketches):
        for sk in sketches:
            out.update(sk)
        return out
    regs = sketches[0].registers()
    for sk in sketches[1:]:
        np.maximum(regs, sk.registers(), out=regs)
    out._absorb(regs)
    return out


# ---------------------------------------------------------------- calibration


def default_cardinality_grid(p: int, points: int = 160) -> list[int]:
    """Log-spaced distinct cardinalities in ``[1, 5r]``."""
    r = 1 << p
    grid = np.unique(np.round(np.geomspace(1, 5 * r, points)).astype(np.int64))
    return grid.tolist()


def _trial_statistics(
    p: int, grid: np.ndarray, trial_count: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Zero counts and register sums at each grid cardinality for every trial."""
    r = 1 << p
    q = 64 - p
    n_max = int(grid[-1])
    zs, sums, ns = [], [], []
    for _ in range(trial_count):
        key = int(rng.integers(0, 2**63, dtype=np.int64))
        start = int(rng.integers(0, 2**62, dtype=np.int64))
        w = hash64_array(np.arange(start, start + n_max, dtype=np.uint64), key)
        buckets = (w >> np.uint64(q)).astype(np.int64)
        ranks = (q - _bit_length_array(w & np.uint64((1 << q) - 1)) + 1).astype(np.uint8)
        regs = np.zeros(r, dtype=np.uint8)
        prev = 0
        for n in grid.tolist():
            np.maximum.at(regs, buckets[prev:n], ranks[prev:n])
            prev = n
            zs.append(r - np.count_nonzero(regs))
            sums.append(_POW2NEG[regs].sum())
            ns.append(n)
    return np.asarray(zs, dtype=np.float64), np.asarray(sums), np.asarray(ns, dtype=np.float64)


def calibrate_beta(
    p: int,
    trial_count: int = 200,
    cardinality_grid: Sequence[int] | None = None,
    rng_seed: int = 0,
) -> tuple[float, ...]:
    """Fit the LogLogBeta bias polynomial for prefix size ``p``.

    Simulates ``trial_count`` sketches grown through every cardinality in the
    grid and returns coefficients minimizing the squared relative error of the
    corrected estimate against the true cardinalities. A weighted linear fit
    (the first-order expansion of the relative error) seeds a nonlinear
    least-squares refinement.
    """
    if not 4 <= p <= 16:
        raise ValueError(f"prefix size p must be in [4, 16], got {p}")
    if trial_count < 100:
        raise ValueError("trial_count must be at least 100")
    r = 1 << p
    grid = np.unique(np.asarray(
        default_cardinality_grid(p) if cardinality_grid is None else list(cardinality_grid),
        dtype=np.int64,
    ))
    if grid.size == 0 or grid[0] < 1:
        raise ValueError("cardinality grid must contain positive integers")
    if grid.size < NUM_BETA_COEFFS:
        raise CalibrationError(
            f"degenerate calibration design: {grid.size} distinct cardinalities cannot "
            f"determine {NUM_BETA_COEFFS} coefficients; widen the grid toward [1, 5r]"
        )
    rng = np.random.default_rng(rng_seed)
    z, s, n = _trial_statistics(p, grid, trial_count, rng)

    keep = z > 0
    if np.unique(z[keep]).size < NUM_BETA_COEFFS:
        raise CalibrationError(
            "degenerate calibration design: too few distinct zero-register counts; "
            "widen the cardinality grid toward [1, 5r]"
        )
    z, s, n = z[keep], s[keep], n[keep]
    a = alpha(r)
    num = a * r * (r - z)
    target = num / n - s
    X = beta_features(z)
    scale = np.abs(X).max(axis=0)
    w = n / num  # d(relative error)/d(beta) at the target
    coef, *_ = np.linalg.lstsq((X / scale) * w[:, None], target * w, rcond=None)

    def residuals(c: np.ndarray) -> np.ndarray:
        return num / ((X / scale) @ c + s) / n - 1.0

    fit = optimize.least_squares(residuals, coef, method="lm", xtol=1e-14, ftol=1e-14)
    return tuple(float(c) for c in fit.x / scale)
