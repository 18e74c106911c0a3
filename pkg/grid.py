"""
Grid Module
Author: Solver Engineer (Person 2)

Axis-aligned Dirichlet boxes in dimension N <= 3, complex fields on their
interior nodes, the discrete Laplacian, discrete norms and sampled potentials.

Fields are stored flat in row-major axis order (axis 0 varies slowest).
Boundary values are identically zero and never stored.
"""

import csv
import math
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


class GridMismatch(ValueError):
    """Raised when fields or potentials live on different grids"""


@dataclass(frozen=True)
class GridSpec:
    """Rectangular domain (0, L_1) x ... x (0, L_N) with interior node counts"""
    lengths: Tuple[float, ...]
    counts: Tuple[int, ...]
    unbounded_proxy: bool = False

    def __post_init__(self):
        lengths = tuple(float(x) for x in self.lengths)
        counts = tuple(int(n) for n in self.counts)
        if len(lengths) != len(counts) or not 1 <= len(counts) <= 3:
            raise ValueError(f"need matching lengths/counts in dimension 1..3, "
                             f"got {lengths} and {counts}")
        if any(n < 1 for n in counts):
            raise ValueError(f"interior node counts must be >= 1, got {counts}")
        if any(not (math.isfinite(x) and x > 0.0) for x in lengths):
            raise ValueError(f"box lengths must be positive, got {lengths}")
        object.__setattr__(self, 'lengths', lengths)
        object.__setattr__(self, 'counts', counts)
        if self.unbounded_proxy:
            logger.warning("box %s approximates an unbounded domain; "
                           "results are valid only while the state stays "
                           "away from the artificial boundary", lengths)

    @property
    def N(self) -> int:
        return len(self.counts)

    @property
    def h(self) -> Tuple[float, ...]:
        return tuple(L / (n + 1) for L, n in zip(self.lengths, self.counts))

    @property
    def cell_volume(self) -> float:
        """Quadrature weight prod(h)"""
        return float(np.prod(self.h))

    @property
    def measure(self) -> float:
        """|Omega|"""
        return float(np.prod(self.lengths))

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.counts

    def axes(self) -> List[np.ndarray]:
        """Interior node coordinates per axis"""
        return [h * np.arange(1, n + 1) for h, n in zip(self.h, self.counts)]

    def mesh(self) -> List[np.ndarray]:
        """Flattened nodal coordinates, one array per axis"""
        grids = np.meshgrid(*self.axes(), indexing='ij')
        return [g.ravel() for g in grids]

    def to_dict(self) -> Dict[str, object]:
        return {
            'lengths': list(self.lengths),
            'counts': list(self.counts),
            'unbounded_proxy': self.unbounded_proxy,
        }


@dataclass(frozen=True, eq=False)
class Field:
    """Complex state on the interior nodes of a grid"""
    values: np.ndarray
    spec: GridSpec

    def __post_init__(self):
        values = np.array(self.values, dtype=np.complex128).ravel()
        if values.size != self.spec.size:
            raise GridMismatch(f"field has {values.size} values, "
                               f"grid has {self.spec.size} nodes")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def zeros(cls, spec: GridSpec) -> 'Field':
        return cls(np.zeros(spec.size, dtype=np.complex128), spec)

    def with_values(self, values: np.ndarray) -> 'Field':
        return Field(values, self.spec)

    def reshaped(self) -> np.ndarray:
        return self.values.reshape(self.spec.shape)


def check_same_grid(*specs: GridSpec) -> GridSpec:
    first = specs[0]
    for other in specs[1:]:
        if other != first:
            raise GridMismatch(f"grid mismatch: {first} vs {other}")
    return first


# ============================================================================
# DIFFERENCE OPERATORS
# ============================================================================

def _forward_difference(n: int, h: float) -> sp.csr_matrix:
    """(n+1) x n forward difference with zero Dirichlet closure at both ends"""
    cols = np.arange(n)
    upper = sp.coo_matrix((np.ones(n), (cols, cols)), shape=(n + 1, n))
    lower = sp.coo_matrix((np.ones(n), (cols + 1, cols)), shape=(n + 1, n))
    return ((upper - lower) / h).tocsr()


@lru_cache(maxsize=32)
def gradient_operators(spec: GridSpec) -> Tuple[sp.csr_matrix, ...]:
    """
    Forward-difference gradient components, one sparse matrix per axis.

    Component k maps the interior nodes to the edges along axis k, including
    the two boundary edges, so that the discrete integration by parts
    -<lap u, u> = ||grad u||^2 holds exactly.
    """
    ops = []
    for k, (n, h) in enumerate(zip(spec.counts, spec.h)):
        factors = [sp.identity(c, format='csr') for c in spec.counts]
        factors[k] = _forward_difference(n, h)
        op = factors[0]
        for f in factors[1:]:
            op = sp.kron(op, f, format='csr')
        ops.append(op.tocsr())
    return tuple(ops)


@lru_cache(maxsize=32)
def laplacian_matrix(spec: GridSpec) -> sp.csr_matrix:
    """Second-order (2N+1)-point Laplacian, assembled as -sum_k G_k^T G_k"""
    lap = sp.csr_matrix((spec.size, spec.size))
    for g in gradient_operators(spec):
        lap = lap - (g.T @ g)
    return lap.tocsr()


def laplacian(u: Field) -> Field:
    return Field(laplacian_matrix(u.spec) @ u.values, u.spec)


def gradient_components(values: np.ndarray, spec: GridSpec) -> List[np.ndarray]:
    return [g @ values for g in gradient_operators(spec)]


# ============================================================================
# NORMS AND QUADRATURE
# ============================================================================

def lp_norm(values: np.ndarray, spec: GridSpec, p: float) -> float:
    """Midpoint-rule Lebesgue norm; p = inf gives the nodal maximum"""
    a = np.abs(values)
    if p == math.inf:
        return float(a.max()) if a.size else 0.0
    if not p > 0.0:
        raise ValueError(f"p must lie in (0, inf], got {p}")
    return float((spec.cell_volume * np.sum(a ** p)) ** (1.0 / p))


def l2_norm(values: np.ndarray, spec: GridSpec) -> float:
    return float(math.sqrt(spec.cell_volume * np.vdot(values, values).real))


def inner(u: np.ndarray, v: np.ndarray, spec: GridSpec) -> complex:
    """Discrete inner product prod(h) * sum u * conj(v)"""
    return complex(spec.cell_volume * np.vdot(v, u))


def h1_seminorm(values: np.ndarray, spec: GridSpec) -> float:
    total = sum(np.vdot(d, d).real for d in gradient_components(values, spec))
    return float(math.sqrt(spec.cell_volume * total))


def laplacian_l2(values: np.ndarray, spec: GridSpec) -> float:
    return l2_norm(laplacian_matrix(spec) @ values, spec)


def lmp1_power(values: np.ndarray, spec: GridSpec, m: float) -> float:
    """||u||_{m+1}^{m+1}"""
    return float(spec.cell_volume * np.sum(np.abs(values) ** (m + 1.0)))


@dataclass
class Norms:
    """Discrete norms of a field"""
    l2: float
    h1_seminorm: float
    laplacian_l2: float
    lp: Dict[float, float] = field(default_factory=dict)
    lmp1_power: Optional[float] = None


def norms(u: Field, p_list: Iterable[float] = (), m: Optional[float] = None) -> Norms:
    """
    Evaluate the discrete norms of u.

    Args:
        u (Field): State
        p_list (iterable): Extra Lebesgue exponents in (0, inf]
        m (float): When given, also returns ||u||_{m+1}^{m+1}
    """
    spec = u.spec
    result = Norms(
        l2=l2_norm(u.values, spec),
        h1_seminorm=h1_seminorm(u.values, spec),
        laplacian_l2=laplacian_l2(u.values, spec),
        lp={float(p): lp_norm(u.values, spec, float(p)) for p in p_list},
    )
    if m is not None:
        result.lmp1_power = lmp1_power(u.values, spec, m)
    return result


# ============================================================================
# POTENTIALS
# ============================================================================

def default_pv(N: int, beta: float = 1.0) -> float:
    """Integrability exponent required of the unbounded part V2"""
    if N == 1:
        return 2.0
    if N == 2:
        if not beta > 0.0:
            raise ValueError(f"beta must be positive in dimension 2, got {beta}")
        return 2.0 + beta
    return float(N)


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """Real potential V = V1 + V2 sampled on the nodes"""
    v1: np.ndarray
    v2: np.ndarray
    spec: GridSpec
    p_v: Optional[float] = None
    beta: float = 1.0

    def __post_init__(self):
        v1 = np.array(self.v1, dtype=np.float64).ravel()
        v2 = np.array(self.v2, dtype=np.float64).ravel()
        if v1.size != self.spec.size or v2.size != self.spec.size:
            raise GridMismatch("potential samples do not match the grid")
        if not (np.all(np.isfinite(v1)) and np.all(np.isfinite(v2))):
            raise ValueError("potential samples must be finite")
        v1.setflags(write=False)
        v2.setflags(write=False)
        object.__setattr__(self, 'v1', v1)
        object.__setattr__(self, 'v2', v2)
        if self.p_v is None:
            object.__setattr__(self, 'p_v', default_pv(self.spec.N, self.beta))

    @classmethod
    def zero(cls, spec: GridSpec) -> 'PotentialSpec':
        return cls(np.zeros(spec.size), np.zeros(spec.size), spec)

    @classmethod
    def constant(cls, spec: GridSpec, value: float) -> 'PotentialSpec':
        return cls(np.full(spec.size, float(value)), np.zeros(spec.size), spec)

    @property
    def values(self) -> np.ndarray:
        return self.v1 + self.v2

    @property
    def sup_v1(self) -> float:
        return float(np.max(np.abs(self.v1)))

    @property
    def lp_v2(self) -> float:
        return lp_norm(self.v2, self.spec, self.p_v)

    @property
    def is_constant(self) -> bool:
        """True when grad V = 0"""
        v = self.values
        return bool(np.all(v == v[0]))


def apply_potential(u: Field, V: PotentialSpec) -> Field:
    check_same_grid(u.spec, V.spec)
    return Field(V.values * u.values, u.spec)


# ============================================================================
# SERIALIZATION
# ============================================================================

def save_field_csv(path, u: Field) -> None:
    """Write (index, re, im) rows in row-major node order"""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['index', 're', 'im'])
        for j, z in enumerate(u.values):
            writer.writerow([j, repr(float(z.real)), repr(float(z.imag))])


def load_field_csv(path, spec: GridSpec) -> Field:
    values = np.zeros(spec.size, dtype=np.complex128)
    seen = 0
    with open(path, 'r', newline='') as f:
        reader = csv.DictReader(f)
        for row in reader:
            j = int(row['index'])
            if not 0 <= j < spec.size:
                raise GridMismatch(f"node index {j} outside grid of {spec.size} nodes")
            values[j] = complex(float(row['re']), float(row['im']))
            seen += 1
    if seen != spec.size:
        raise GridMismatch(f"file holds {seen} nodes, grid has {spec.size}")
    return Field(values, spec)


def save_field_binary(path, u: Field) -> None:
    np.save(Path(path), np.asarray(u.values, dtype=np.complex128))


def load_field_binary(path, spec: GridSpec) -> Field:
    return Field(np.load(Path(path)), spec)


def load_field(path, spec: GridSpec) -> Field:
    """Dispatch on suffix: .npy is binary, anything else is CSV"""
    if Path(path).suffix == '.npy':
        return load_field_binary(path, spec)
    return load_field_csv(path, spec)
