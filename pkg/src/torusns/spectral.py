"""Fourier representation of real periodic fields on (0, 2*pi)^N and the
elementary spectral operators built on it: derivatives, inverse Laplacian,
Riesz transforms, Leray projection, general multipliers, and grid norms.

Fields are stored as full complex coefficient arrays u(x) = sum_k c_k e^{i k.x}
over the integer lattice, with Hermitian symmetry so samples are real.  All
operations are pure; field objects are immutable after construction.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

TAU = 2.0 * math.pi

#: fraction of the spectrum kept by the default (2/3 rule) dealiasing
DEALIAS_FRACTION = 2.0 / 3.0


class GridMismatchError(ValueError):
    """Two fields (or a field and an operator) live on different grids."""


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

class TorusGrid:
    """Uniform grid on the torus (0, 2*pi)^dim with M points per axis.

    M must be a power of two >= 8 so every dyadic shell fits.  Integer
    frequencies per axis are {-M/2+1, ..., M/2}; the Nyquist residue class
    is represented as +M/2.
    """

    def __init__(self, dim: int, points_per_axis: int):
        if dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {dim}")
        m = int(points_per_axis)
        if m < 8 or (m & (m - 1)) != 0:
            raise ValueError(
                f"points_per_axis must be a power of two >= 8, got {points_per_axis}")
        self.dim = dim
        self.n = m
        self.shape = (m,) * dim
        self.size = m ** dim
        self.spacing = TAU / m
        self.cell_volume = self.spacing ** dim
        self.volume = TAU ** dim

        freqs = np.fft.fftfreq(m, d=1.0 / m).astype(np.int64)
        freqs[m // 2] = m // 2  # report the Nyquist class as +M/2
        self.axis_frequencies = freqs
        self.axis_frequencies.setflags(write=False)

        mesh = np.meshgrid(*([freqs] * dim), indexing="ij")
        self.frequency_mesh = tuple(k.astype(np.float64) for k in mesh)
        for k in self.frequency_mesh:
            k.setflags(write=False)
        self.k_squared = sum(k * k for k in self.frequency_mesh)
        self.k_squared.setflags(write=False)
        self.k_radius = np.sqrt(self.k_squared)
        self.k_radius.setflags(write=False)
        # True on every plane that touches the Nyquist frequency of some axis
        nyq = np.zeros(self.shape, dtype=bool)
        for axis in range(dim):
            index = [slice(None)] * dim
            index[axis] = m // 2
            nyq[tuple(index)] = True
        self.nyquist_mask = nyq
        self.nyquist_mask.setflags(write=False)

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Meshgrid of sample coordinates x_i = 2*pi*j/M."""
        x = np.arange(self.n) * self.spacing
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def dealias_mask(self, fraction: float = DEALIAS_FRACTION) -> np.ndarray:
        cutoff = math.floor(self.n * fraction / 2.0)
        keep = np.ones(self.shape, dtype=bool)
        for k in self.frequency_mesh:
            keep &= np.abs(k) <= cutoff
        return keep

    def __eq__(self, other) -> bool:
        return isinstance(other, TorusGrid) and (self.dim, self.n) == (other.dim, other.n)

    def __hash__(self) -> int:
        return hash((self.dim, self.n))

    def __repr__(self) -> str:
        return f"TorusGrid(dim={self.dim}, points_per_axis={self.n})"


def _check_same_grid(*objs) -> TorusGrid:
    grid = objs[0].grid if hasattr(objs[0], "grid") else objs[0]
    for o in objs[1:]:
        g = o.grid if hasattr(o, "grid") else o
        if g != grid:
            raise GridMismatchError(f"grid mismatch: {g} vs {grid}")
    return grid


def _conj_flip(coeffs: np.ndarray, dim: int) -> np.ndarray:
    """conj(c(-k)) laid out on the same index grid as c(k)."""
    out = coeffs
    for axis in range(coeffs.ndim - dim, coeffs.ndim):
        out = np.flip(out, axis=axis)
        out = np.roll(out, 1, axis=axis)
    return np.conj(out)


def hermitianize(coeffs: np.ndarray, dim: int) -> np.ndarray:
    """Project coefficients onto the Hermitian (real-field) subspace."""
    return 0.5 * (coeffs + _conj_flip(coeffs, dim))


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

class ScalarField:
    """Real scalar field stored as normalized Fourier coefficients.

    ``coeffs[k]`` is the coefficient of e^{i k.x}, so ``coeffs[0,...,0]``
    is the mean value.
    """

    __slots__ = ("grid", "coeffs", "_samples")

    def __init__(self, grid: TorusGrid, coeffs: np.ndarray, *, copy: bool = True):
        if coeffs.shape != grid.shape:
            raise GridMismatchError(
                f"coefficient shape {coeffs.shape} does not match grid {grid.shape}")
        c = np.array(coeffs, dtype=np.complex128, copy=copy)
        c.setflags(write=False)
        self.grid = grid
        self.coeffs = c
        self._samples = None

    @classmethod
    def from_samples(cls, grid: TorusGrid, values: np.ndarray) -> "ScalarField":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != grid.shape:
            raise GridMismatchError(
                f"sample shape {values.shape} does not match grid {grid.shape}")
        c = np.fft.fftn(values) / grid.size
        f = cls(grid, c, copy=False)
        samples = values.copy()
        samples.setflags(write=False)
        f._samples = samples
        return f

    @classmethod
    def from_function(cls, grid: TorusGrid, fn: Callable[..., np.ndarray]) -> "ScalarField":
        return cls.from_samples(grid, np.asarray(fn(*grid.coordinates()), dtype=np.float64)
                                + np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "ScalarField":
        c = np.zeros(grid.shape, dtype=np.complex128)
        c[(0,) * grid.dim] = value
        return cls(grid, c, copy=False)

    @classmethod
    def zero(cls, grid: TorusGrid) -> "ScalarField":
        return cls.constant(grid, 0.0)

    @property
    def samples(self) -> np.ndarray:
        if self._samples is None:
            s = np.real(np.fft.ifftn(self.coeffs) * self.grid.size)
            s.setflags(write=False)
            self._samples = s
        return self._samples

    @property
    def mean(self) -> float:
        return float(np.real(self.coeffs[(0,) * self.grid.dim]))

    def max_frequency(self, tol: float = 1e-13) -> int:
        """Largest per-axis |k| carrying a coefficient above tol * max|c|."""
        c = np.abs(self.coeffs)
        thresh = tol * max(c.max(), 1e-300)
        active = c > thresh
        if not active.any():
            return 0
        kmax = 0
        for k in self.grid.frequency_mesh:
            kmax = max(kmax, int(np.max(np.abs(k)[active])))
        return kmax

    def hermitian_defect(self) -> float:
        return float(np.max(np.abs(self.coeffs - _conj_flip(self.coeffs, self.grid.dim))))

    def shifted(self, cells: Sequence[int]) -> "ScalarField":
        """Translate by an integer number of grid cells (for symmetry tests)."""
        return ScalarField.from_samples(self.grid, np.roll(self.samples, cells,
                                                           axis=tuple(range(self.grid.dim))))

    def __add__(self, other: "ScalarField") -> "ScalarField":
        _check_same_grid(self, other)
        return ScalarField(self.grid, self.coeffs + other.coeffs, copy=False)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        _check_same_grid(self, other)
        return ScalarField(self.grid, self.coeffs - other.coeffs, copy=False)

    def __mul__(self, scalar: float) -> "ScalarField":
        return ScalarField(self.grid, self.coeffs * scalar, copy=False)

    __rmul__ = __mul__

    def __neg__(self) -> "ScalarField":
        return ScalarField(self.grid, -self.coeffs, copy=False)

    def __repr__(self) -> str:
        return f"ScalarField(grid={self.grid!r}, mean={self.mean:.6g})"


class VectorField:
    """Real vector field; one coefficient array per component."""

    __slots__ = ("grid", "coeffs", "_samples")

    def __init__(self, grid: TorusGrid, coeffs: np.ndarray, *, copy: bool = True):
        if coeffs.shape != (grid.dim,) + grid.shape:
            raise GridMismatchError(
                f"coefficient shape {coeffs.shape} does not match grid {grid.shape}")
        c = np.array(coeffs, dtype=np.complex128, copy=copy)
        c.setflags(write=False)
        self.grid = grid
        self.coeffs = c
        self._samples = None

    @classmethod
    def from_samples(cls, grid: TorusGrid, values: np.ndarray) -> "VectorField":
        values = np.asarray(values, dtype=np.float64)
        c = np.stack([np.fft.fftn(values[i]) / grid.size for i in range(grid.dim)])
        f = cls(grid, c, copy=False)
        samples = values.copy()
        samples.setflags(write=False)
        f._samples = samples
        return f

    @classmethod
    def from_components(cls, components: Sequence[ScalarField]) -> "VectorField":
        grid = _check_same_grid(*components)
        if len(components) != grid.dim:
            raise ValueError(f"need {grid.dim} components, got {len(components)}")
        return cls(grid, np.stack([c.coeffs for c in components]))

    @classmethod
    def zero(cls, grid: TorusGrid) -> "VectorField":
        return cls(grid, np.zeros((grid.dim,) + grid.shape, dtype=np.complex128), copy=False)

    def component(self, i: int) -> ScalarField:
        f = ScalarField(self.grid, self.coeffs[i], copy=False)
        if self._samples is not None:
            s = self._samples[i]
            f._samples = s
        return f

    @property
    def components(self) -> list[ScalarField]:
        return [self.component(i) for i in range(self.grid.dim)]

    @property
    def samples(self) -> np.ndarray:
        if self._samples is None:
            s = np.stack([np.real(np.fft.ifftn(self.coeffs[i]) * self.grid.size)
                          for i in range(self.grid.dim)])
            s.setflags(write=False)
            self._samples = s
        return self._samples

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.samples ** 2, axis=0))

    def max_frequency(self, tol: float = 1e-13) -> int:
        return max(c.max_frequency(tol) for c in self.components)

    def __add__(self, other: "VectorField") -> "VectorField":
        _check_same_grid(self, other)
        return VectorField(self.grid, self.coeffs + other.coeffs, copy=False)

    def __sub__(self, other: "VectorField") -> "VectorField":
        _check_same_grid(self, other)
        return VectorField(self.grid, self.coeffs - other.coeffs, copy=False)

    def __mul__(self, scalar: float) -> "VectorField":
        return VectorField(self.grid, self.coeffs * scalar, copy=False)

    __rmul__ = __mul__

    def __neg__(self) -> "VectorField":
        return VectorField(self.grid, -self.coeffs, copy=False)


Field = ScalarField | VectorField


# ---------------------------------------------------------------------------
# multiplier symbols
# ---------------------------------------------------------------------------

class MultiplierSymbol:
    """Fourier multiplier xi -> f(xi) of declared order m.

    The rule receives the tuple of frequency meshes and returns the symbol
    values.  Validation on a grid checks finiteness everywhere and returns
    the empirical bound constant C = max |f(xi)| / (1+|xi|)^m.
    """

    def __init__(self, rule: Callable[..., np.ndarray], order: float, name: str = ""):
        self.rule = rule
        self.order = float(order)
        self.name = name or getattr(rule, "__name__", "multiplier")
        self._cache: dict[TorusGrid, np.ndarray] = {}

    def evaluate(self, grid: TorusGrid) -> np.ndarray:
        values = self._cache.get(grid)
        if values is None:
            values = np.asarray(self.rule(*grid.frequency_mesh), dtype=np.complex128)
            values = np.broadcast_to(values, grid.shape)
            if not np.all(np.isfinite(values)):
                bad = np.argwhere(~np.isfinite(values))[0]
                freq = tuple(int(grid.frequency_mesh[a][tuple(bad)]) for a in range(grid.dim))
                raise ValueError(
                    f"symbol {self.name!r} is non-finite at grid frequency {freq}")
            values = np.array(values)
            values.setflags(write=False)
            self._cache[grid] = values
        return values

    def bound_constant(self, grid: TorusGrid) -> float:
        values = self.evaluate(grid)
        weight = (1.0 + grid.k_radius) ** self.order
        return float(np.max(np.abs(values) / weight))

    def __repr__(self) -> str:
        return f"MultiplierSymbol({self.name!r}, order={self.order})"


def apply_multiplier(symbol: MultiplierSymbol, field: Field) -> Field:
    values = symbol.evaluate(field.grid)
    if isinstance(field, ScalarField):
        return ScalarField(field.grid, field.coeffs * values, copy=False)
    return VectorField(field.grid, field.coeffs * values[None, ...], copy=False)


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------

def _derivative_factor(grid: TorusGrid, multi_index: Sequence[int]) -> np.ndarray:
    factor = np.ones(grid.shape, dtype=np.complex128)
    for axis, power in enumerate(multi_index):
        if power:
            factor = factor * (1j * grid.frequency_mesh[axis]) ** power
    # the odd derivative of the Nyquist cosine is ill-defined; drop the class
    if any(multi_index):
        factor = np.where(grid.nyquist_mask, 0.0, factor)
    return factor


def differentiate(field: Field, multi_index: Sequence[int]) -> Field:
    """Spectral partial derivative d^{|alpha|} / dx^alpha (exact on resolved
    modes; Nyquist planes are zeroed)."""
    grid = field.grid
    if len(multi_index) != grid.dim:
        raise ValueError(f"multi-index length {len(multi_index)} != dim {grid.dim}")
    factor = _derivative_factor(grid, multi_index)
    if isinstance(field, ScalarField):
        return ScalarField(grid, field.coeffs * factor, copy=False)
    return VectorField(grid, field.coeffs * factor[None, ...], copy=False)


def partial(field: Field, axis: int) -> Field:
    alpha = [0] * field.grid.dim
    alpha[axis] = 1
    return differentiate(field, alpha)


def gradient(field: ScalarField) -> VectorField:
    grid = field.grid
    comps = [partial(field, a) for a in range(grid.dim)]
    return VectorField.from_components(comps)


def divergence(field: VectorField) -> ScalarField:
    grid = field.grid
    out = np.zeros(grid.shape, dtype=np.complex128)
    for a in range(grid.dim):
        out += partial(field.component(a), a).coeffs
    return ScalarField(grid, out, copy=False)


def curl(field: VectorField) -> Field:
    """Vorticity: scalar d1 u2 - d2 u1 in 2-D, the usual vector in 3-D."""
    grid = field.grid
    u = field.components
    if grid.dim == 2:
        return partial(u[1], 0) - partial(u[0], 1)
    w0 = partial(u[2], 1) - partial(u[1], 2)
    w1 = partial(u[0], 2) - partial(u[2], 0)
    w2 = partial(u[1], 0) - partial(u[0], 1)
    return VectorField.from_components([w0, w1, w2])


def laplacian(field: Field) -> Field:
    grid = field.grid
    factor = np.where(grid.nyquist_mask, 0.0, -grid.k_squared)
    if isinstance(field, ScalarField):
        return ScalarField(grid, field.coeffs * factor, copy=False)
    return VectorField(grid, field.coeffs * factor[None, ...], copy=False)


def velocity_gradient(field: VectorField) -> np.ndarray:
    """Sample array G[i, j] = d_i u_j, shape (dim, dim, *grid.shape)."""
    grid = field.grid
    out = np.empty((grid.dim, grid.dim) + grid.shape)
    for j in range(grid.dim):
        comp = field.component(j)
        for i in range(grid.dim):
            out[i, j] = partial(comp, i).samples
    return out


def strain(field: VectorField) -> np.ndarray:
    """Strain tensor D(u) = (grad u + grad u^T)/2 as samples."""
    g = velocity_gradient(field)
    return 0.5 * (g + np.swapaxes(g, 0, 1))


def inv_laplacian_zero_mean(field: ScalarField) -> ScalarField:
    """Solve laplacian(g) = f - mean(f) with mean(g) = 0."""
    grid = field.grid
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(grid.k_squared > 0, -1.0 / grid.k_squared, 0.0)
    return ScalarField(grid, field.coeffs * inv, copy=False)


def riesz_composite(i: int, j: int, field: ScalarField) -> ScalarField:
    """R_i R_j with the fixed sign convention: multiplier xi_i xi_j / |xi|^2
    on the zero-mean part (so sum_i R_i R_i = identity on zero-mean fields)."""
    grid = field.grid
    with np.errstate(divide="ignore", invalid="ignore"):
        symbol = np.where(grid.k_squared > 0,
                          grid.frequency_mesh[i] * grid.frequency_mesh[j] / grid.k_squared,
                          0.0)
    return ScalarField(grid, field.coeffs * symbol, copy=False)


def leray_project(field: VectorField) -> tuple[VectorField, VectorField]:
    """Split u = Pu + Qu with Q = grad inv_laplacian div (curl-free part,
    zero-mean convention) and P = I - Q (divergence-free part)."""
    grid = field.grid
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_ksq = np.where(grid.k_squared > 0, 1.0 / grid.k_squared, 0.0)
    div_coeffs = np.zeros(grid.shape, dtype=np.complex128)
    for a in range(grid.dim):
        div_coeffs += grid.frequency_mesh[a] * field.coeffs[a]
    base = div_coeffs * inv_ksq
    q = np.stack([grid.frequency_mesh[a] * base for a in range(grid.dim)])
    grad_part = VectorField(grid, q, copy=False)
    div_free = VectorField(grid, field.coeffs - q, copy=False)
    return div_free, grad_part


# ---------------------------------------------------------------------------
# products, dealiasing, pointwise maps
# ---------------------------------------------------------------------------

def dealias(field: Field, fraction: float = DEALIAS_FRACTION) -> Field:
    keep = field.grid.dealias_mask(fraction)
    if isinstance(field, ScalarField):
        return ScalarField(field.grid, np.where(keep, field.coeffs, 0.0), copy=False)
    return VectorField(field.grid, np.where(keep[None, ...], field.coeffs, 0.0), copy=False)


def multiply(a: ScalarField, b: ScalarField, *, dealiased: bool = True) -> ScalarField:
    """Grid product, dealiased with the 2/3 rule by default."""
    grid = _check_same_grid(a, b)
    prod = ScalarField.from_samples(grid, a.samples * b.samples)
    return dealias(prod) if dealiased else prod


def scale_vector(a: ScalarField, u: VectorField, *, dealiased: bool = True) -> VectorField:
    grid = _check_same_grid(a, u)
    prod = VectorField.from_samples(grid, a.samples[None, ...] * u.samples)
    return dealias(prod) if dealiased else prod


def pointwise(grid: TorusGrid, values: np.ndarray, *, dealiased: bool = True) -> ScalarField:
    """Wrap samples produced by a nonlinear pointwise map into a field."""
    f = ScalarField.from_samples(grid, values)
    return dealias(f) if dealiased else f


# ---------------------------------------------------------------------------
# norms and integrals
# ---------------------------------------------------------------------------

def _magnitude_samples(field: Field) -> np.ndarray:
    if isinstance(field, ScalarField):
        return np.abs(field.samples)
    return field.magnitude()


def integral(field: ScalarField) -> float:
    """Integral over the torus (exact for the resolved trigonometric sum)."""
    return field.mean * field.grid.volume


def lebesgue_norm(field: Field, p: float) -> float:
    """L^p norm by uniform grid quadrature; p = inf is the sample max."""
    if not (p >= 1):
        raise ValueError(f"p must be >= 1, got {p}")
    mag = _magnitude_samples(field)
    if math.isinf(p):
        return float(np.max(mag))
    return float((np.sum(mag ** p) * field.grid.cell_volume) ** (1.0 / p))


def sobolev_norm(field: Field, k: int = 1, p: float = 2) -> float:
    """W^{k,p} norm: field plus all derivatives up to order k, combined in
    the l^p sense (max for p = inf)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    grid = field.grid
    terms = [field]
    frontier = [field]
    for _ in range(k):
        nxt = []
        for f in frontier:
            for axis in range(grid.dim):
                nxt.append(partial(f, axis))
        terms.extend(nxt)
        frontier = nxt
    norms = [lebesgue_norm(t, p) for t in terms]
    if math.isinf(p):
        return float(max(norms))
    return float(np.sum(np.asarray(norms) ** p) ** (1.0 / p))


def l2_inner(a: Field, b: Field) -> float:
    grid = _check_same_grid(a, b)
    return float(np.sum(a.samples * b.samples) * grid.cell_volume)


def coefficient_l2_norm(field: Field) -> float:
    """L^2 norm computed from coefficients (Parseval partner of the grid sum)."""
    return float(math.sqrt(np.sum(np.abs(field.coeffs) ** 2) * field.grid.volume))


# ---------------------------------------------------------------------------
# transforms, evaluation, random fields
# ---------------------------------------------------------------------------

def transform_roundtrip(field: ScalarField) -> ScalarField:
    """physical -> spectral -> physical; the identity up to round-off."""
    return ScalarField.from_samples(field.grid, field.samples)


def fourier_eval(field: Field, points: np.ndarray) -> np.ndarray:
    """Evaluate the trigonometric interpolant at off-grid points by direct
    summation of the Fourier series.

    points: (n, dim).  Returns (n,) for scalars, (n, dim) for vectors.
    """
    grid = field.grid
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    coeffs = field.coeffs if isinstance(field, VectorField) else field.coeffs[None, ...]
    flat = coeffs.reshape(coeffs.shape[0], -1)
    active = np.any(np.abs(flat) > 1e-15, axis=0)
    kvecs = np.stack([k.ravel()[active] for k in grid.frequency_mesh], axis=1)
    phases = np.exp(1j * points @ kvecs.T)  # (n, modes)
    out = np.real(phases @ flat[:, active].T)  # (n, comps)
    if isinstance(field, ScalarField):
        return out[:, 0]
    return out


def random_field(grid: TorusGrid, rng: np.random.Generator, *,
                 max_wavenumber: int | None = None, slope: float = 1.5,
                 rms: float = 1.0, flat_dyadic: bool = False) -> ScalarField:
    """Random real zero-mean field with power-law coefficient decay.

    slope is the decay exponent of |c_k| ~ (1+|k|)^-slope.  With
    flat_dyadic=True the spectrum is rescaled so every dyadic octave
    carries comparable L^2 mass (slope ignored).
    """
    if max_wavenumber is None:
        max_wavenumber = grid.n // 3
    c = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    radius = grid.k_radius
    if flat_dyadic:
        # per-mode variance ~ |k|^-N keeps per-octave mass constant
        envelope = np.where(radius > 0, radius, 1.0) ** (-0.5 * grid.dim)
    else:
        envelope = (1.0 + radius) ** (-slope)
    band = np.ones(grid.shape, dtype=bool)
    for k in grid.frequency_mesh:
        band &= np.abs(k) <= max_wavenumber
    c *= envelope * band
    c[(0,) * grid.dim] = 0.0
    c = hermitianize(c, grid.dim)
    f = ScalarField(grid, c, copy=False)
    norm = lebesgue_norm(f, 2)
    if norm > 0:
        f = f * (rms * math.sqrt(grid.volume) / norm)
    return f


def random_vector_field(grid: TorusGrid, rng: np.random.Generator, **kw) -> VectorField:
    return VectorField.from_components(
        [random_field(grid, rng, **kw) for _ in range(grid.dim)])
