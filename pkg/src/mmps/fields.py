"""Staggered-grid fields and discrete calculus on the unit square.

Conventions (shared by the whole package)
-----------------------------------------
Arrays are indexed ``[i, j]`` with ``i`` the x index and ``j`` the y index,
C-ordered so x is the leading axis.  The domain is the unit square with
uniform spacing ``h = 1/nx`` in both directions.

``dirichlet-square`` sample lattices::

    cell centers  (nx, ny)      at ((i+1/2)h, (j+1/2)h)
    nodes         (nx+1, ny+1)  at (ih, jh)          -- boundary included
    x faces       (nx+1, ny)    at (ih, (j+1/2)h)    -- ux lives here
    y faces       (nx, ny+1)    at ((i+1/2)h, jh)    -- uy lives here

``periodic`` mode keeps the same positions but wraps indices, so every
lattice has shape (nx, ny).

MAC vector fields store normal components on faces.  In Dirichlet mode the
boundary faces (i in {0, nx} for ux, j in {0, ny} for uy) hold the
no-penetration values and are pinned to zero by the solvers; tangential
wall behaviour is realized through mirror ghosts (ghost = -interior), which
imposes the wall value 0 with an O(h^2) boundary-condition perturbation.

Quadrature is the midpoint rule over each sample's control cell clipped to
the domain: cell samples weigh h^2; face samples lying on a wall weigh
h^2/2; node weights are h^2 halved once per wall contact (corners h^2/4).
These weights make the duality pairings below exact, and the evolution and
audit layers rely on that exactness:

* ``<grad s, v> = -<s, div v>`` for MAC ``v`` supported away from walls;
* ``<laplacian u, u> = -h1_semi(u)^2`` for MAC fields with pinned boundaries;
* ``div(perp_grad s) = 0`` exactly on every cell;
* ``curl2(grad s) = 0`` exactly wherever the interior stencils apply (all
  nodes in periodic mode; Dirichlet wall rows encode the no-slip closure,
  which gradient fields do not satisfy);
* ``curl2(perp_grad s) = laplacian s`` holds exactly at every node, wall
  rows included (the node Laplacian uses even-reflection ghosts precisely so
  this identity is exact rather than merely approximate).

"Exactly" means exact in exact arithmetic; floating point realizes the
cancellations to roundoff relative to the stencil scale ``max|s| / h^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

MODE_DIRICHLET = "dirichlet-square"
MODE_PERIODIC = "periodic"
MODES = (MODE_DIRICHLET, MODE_PERIODIC)

CELL = "cell-center"
NODE = "node"
SCALAR_PLACEMENTS = (CELL, NODE)

MAC = "mac-staggered"
COLOCATED = "colocated"
VECTOR_PLACEMENTS = (MAC, COLOCATED)


class FieldError(ValueError):
    """Raised for invalid grids, placements, shapes or norm orders."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform square grid on the unit square.

    ``nx`` must equal ``ny`` (square cells, nx * h = 1) and be at least 8.
    ``mode`` selects the boundary treatment of every operator built on the
    grid: ``dirichlet-square`` (no-slip walls) or ``periodic``.
    """

    nx: int
    ny: int
    mode: str = MODE_DIRICHLET

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise FieldError(f"unknown grid mode {self.mode!r}")
        if self.nx != self.ny:
            raise FieldError(f"grid must be square, got nx={self.nx}, ny={self.ny}")
        if self.nx < 8:
            raise FieldError(f"grid too coarse: nx={self.nx} < 8")

    @property
    def h(self) -> float:
        return 1.0 / self.nx

    @property
    def periodic(self) -> bool:
        return self.mode == MODE_PERIODIC

    def lattice_shape(self, lattice: str) -> tuple[int, int]:
        n = self.nx
        if self.periodic:
            return (n, n)
        if lattice == "cell":
            return (n, n)
        if lattice == "node":
            return (n + 1, n + 1)
        if lattice == "xface":
            return (n + 1, n)
        if lattice == "yface":
            return (n, n + 1)
        raise FieldError(f"unknown lattice {lattice!r}")

    def lattice_origin(self, lattice: str) -> tuple[float, float]:
        half = 0.5 * self.h
        if lattice == "cell":
            return (half, half)
        if lattice == "node":
            return (0.0, 0.0)
        if lattice == "xface":
            return (0.0, half)
        if lattice == "yface":
            return (half, 0.0)
        raise FieldError(f"unknown lattice {lattice!r}")

    def mesh(self, lattice: str) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays (X, Y) of the lattice, indexed [i, j]."""
        shape = self.lattice_shape(lattice)
        x0, y0 = self.lattice_origin(lattice)
        x = x0 + self.h * np.arange(shape[0])
        y = y0 + self.h * np.arange(shape[1])
        return np.meshgrid(x, y, indexing="ij")


def _axis_weights(grid: GridSpec, m: int, origin: float) -> np.ndarray:
    """Per-axis quadrature weights (length m) for samples origin + i*h."""
    w = np.full(m, grid.h)
    if not grid.periodic:
        if abs(origin) < 1e-14:
            w[0] *= 0.5
        if abs(origin + (m - 1) * grid.h - 1.0) < 1e-14:
            w[-1] *= 0.5
    return w


def lattice_weights(grid: GridSpec, lattice: str) -> np.ndarray:
    """Midpoint-rule quadrature weights over clipped control cells."""
    shape = grid.lattice_shape(lattice)
    x0, y0 = grid.lattice_origin(lattice)
    wx = _axis_weights(grid, shape[0], x0)
    wy = _axis_weights(grid, shape[1], y0)
    return np.outer(wx, wy)


@dataclass(frozen=True)
class ScalarField:
    """Scalar samples on one lattice of the grid.

    ``placement`` is ``cell-center`` (pressure-like) or ``node``
    (micro-rotation-like; carries boundary samples in Dirichlet mode).
    """

    grid: GridSpec
    placement: str
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.placement not in SCALAR_PLACEMENTS:
            raise FieldError(f"unknown scalar placement {self.placement!r}")
        expected = self.grid.lattice_shape(self.lattice)
        if self.data.shape != expected:
            raise FieldError(
                f"scalar data shape {self.data.shape} does not match "
                f"{self.placement} lattice {expected}"
            )

    @property
    def lattice(self) -> str:
        return "cell" if self.placement == CELL else "node"

    @classmethod
    def zeros(cls, grid: GridSpec, placement: str) -> "ScalarField":
        lattice = "cell" if placement == CELL else "node"
        return cls(grid, placement, np.zeros(grid.lattice_shape(lattice)))

    @classmethod
    def sample(cls, grid: GridSpec, placement: str, fn) -> "ScalarField":
        """Sample ``fn(x, y)`` (vectorized) on the native lattice."""
        lattice = "cell" if placement == CELL else "node"
        X, Y = grid.mesh(lattice)
        return cls(grid, placement, np.asarray(fn(X, Y), dtype=float))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.placement, self.data.copy())


@dataclass(frozen=True)
class VectorField:
    """Vector samples: MAC-staggered (ux on x faces, uy on y faces) or
    colocated (both components on a single lattice, default cell centers).
    """

    grid: GridSpec
    placement: str
    ux: np.ndarray
    uy: np.ndarray
    lattice: str = "cell"  # colocated only: "cell" or "node"

    def __post_init__(self) -> None:
        if self.placement not in VECTOR_PLACEMENTS:
            raise FieldError(f"unknown vector placement {self.placement!r}")
        if self.placement == MAC:
            ex, ey = (
                self.grid.lattice_shape("xface"),
                self.grid.lattice_shape("yface"),
            )
        else:
            if self.lattice not in ("cell", "node"):
                raise FieldError(f"bad colocated lattice {self.lattice!r}")
            ex = ey = self.grid.lattice_shape(self.lattice)
        if self.ux.shape != ex or self.uy.shape != ey:
            raise FieldError(
                f"vector shapes {self.ux.shape}/{self.uy.shape} do not match "
                f"{self.placement} lattices {ex}/{ey}"
            )

    @classmethod
    def zeros(cls, grid: GridSpec, placement: str = MAC, lattice: str = "cell") -> "VectorField":
        if placement == MAC:
            return cls(
                grid,
                MAC,
                np.zeros(grid.lattice_shape("xface")),
                np.zeros(grid.lattice_shape("yface")),
            )
        shape = grid.lattice_shape(lattice)
        return cls(grid, COLOCATED, np.zeros(shape), np.zeros(shape), lattice)

    @classmethod
    def sample_mac(cls, grid: GridSpec, fx, fy) -> "VectorField":
        """Sample component functions on their native face lattices."""
        Xx, Yx = grid.mesh("xface")
        Xy, Yy = grid.mesh("yface")
        return cls(
            grid,
            MAC,
            np.asarray(fx(Xx, Yx), dtype=float),
            np.asarray(fy(Xy, Yy), dtype=float),
        )

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.placement, self.ux.copy(), self.uy.copy(), self.lattice)

    def component_lattices(self) -> tuple[str, str]:
        if self.placement == MAC:
            return ("xface", "yface")
        return (self.lattice, self.lattice)


@dataclass(frozen=True)
class FluidParams:
    """Material constants: kinematic viscosity ``mu`` (> 0), micro-rotation
    coupling ``chi`` (>= 0; zero switches the coupling off), magnetic
    resistivity ``nu`` (> 0).  The angular viscosity is identically zero:
    the micro-rotation field is transported and damped but never diffused.
    """

    mu: float
    chi: float
    nu: float

    def __post_init__(self) -> None:
        if not (self.mu > 0.0):
            raise FieldError(f"mu must be positive, got {self.mu}")
        if self.chi < 0.0:
            raise FieldError(f"chi must be nonnegative, got {self.chi}")
        if not (self.nu > 0.0):
            raise FieldError(f"nu must be positive, got {self.nu}")


@dataclass(frozen=True)
class State:
    """Instantaneous solver state: velocity ``u`` and magnetic field ``b``
    (MAC), micro-rotation ``w`` (nodes), diagnostic pressure ``p`` (cells).
    """

    t: float
    u: VectorField
    w: ScalarField
    b: VectorField
    p: ScalarField

    def __post_init__(self) -> None:
        g = self.u.grid
        for f in (self.w, self.b, self.p):
            if f.grid != g:
                raise FieldError("state fields must share one grid")
        if self.u.placement != MAC or self.b.placement != MAC:
            raise FieldError("u and b must be MAC-staggered")
        if self.w.placement != NODE:
            raise FieldError("w must be node-placed")
        if self.p.placement != CELL:
            raise FieldError("p must be cell-centered")

    @property
    def grid(self) -> GridSpec:
        return self.u.grid

    @classmethod
    def zeros(cls, grid: GridSpec, t: float = 0.0) -> "State":
        return cls(
            t=t,
            u=VectorField.zeros(grid),
            w=ScalarField.zeros(grid, NODE),
            b=VectorField.zeros(grid),
            p=ScalarField.zeros(grid, CELL),
        )


# ---------------------------------------------------------------------------
# First-order difference operators
# ---------------------------------------------------------------------------


def _dx_wrap(a: np.ndarray, h: float) -> np.ndarray:
    return (a - np.roll(a, 1, axis=0)) / h


def _dy_wrap(a: np.ndarray, h: float) -> np.ndarray:
    return (a - np.roll(a, 1, axis=1)) / h


def grad(s: ScalarField) -> VectorField:
    """Discrete gradient.

    cell-center input -> MAC output (face-normal differences).  In Dirichlet
    mode the boundary faces receive 0, the homogeneous-Neumann closure that
    matches the pressure-projection use of this operator.

    node input -> colocated output on the node lattice (central differences,
    second-order one-sided rows at the walls).
    """
    g, h = s.grid, s.grid.h
    a = s.data
    if s.placement == CELL:
        if g.periodic:
            return VectorField(g, MAC, _dx_wrap(a, h), _dy_wrap(a, h))
        gx = np.zeros(g.lattice_shape("xface"))
        gy = np.zeros(g.lattice_shape("yface"))
        gx[1:-1, :] = (a[1:, :] - a[:-1, :]) / h
        gy[:, 1:-1] = (a[:, 1:] - a[:, :-1]) / h
        return VectorField(g, MAC, gx, gy)
    if g.periodic:
        gx = (np.roll(a, -1, axis=0) - np.roll(a, 1, axis=0)) / (2 * h)
        gy = (np.roll(a, -1, axis=1) - np.roll(a, 1, axis=1)) / (2 * h)
        return VectorField(g, COLOCATED, gx, gy, "node")
    gx = np.empty_like(a)
    gy = np.empty_like(a)
    gx[1:-1, :] = (a[2:, :] - a[:-2, :]) / (2 * h)
    gx[0, :] = (-3 * a[0, :] + 4 * a[1, :] - a[2, :]) / (2 * h)
    gx[-1, :] = (3 * a[-1, :] - 4 * a[-2, :] + a[-3, :]) / (2 * h)
    gy[:, 1:-1] = (a[:, 2:] - a[:, :-2]) / (2 * h)
    gy[:, 0] = (-3 * a[:, 0] + 4 * a[:, 1] - a[:, 2]) / (2 * h)
    gy[:, -1] = (3 * a[:, -1] - 4 * a[:, -2] + a[:, -3]) / (2 * h)
    return VectorField(g, COLOCATED, gx, gy, "node")


def div(v: VectorField) -> ScalarField:
    """Discrete divergence.

    MAC input -> cell-center output using all faces (boundary faces enter
    with their stored values).  Colocated input -> same-lattice output via
    central differences (one-sided at Dirichlet walls).
    """
    g, h = v.grid, v.grid.h
    if v.placement == MAC:
        if g.periodic:
            d = (np.roll(v.ux, -1, axis=0) - v.ux) / h + (np.roll(v.uy, -1, axis=1) - v.uy) / h
        else:
            d = (v.ux[1:, :] - v.ux[:-1, :]) / h + (v.uy[:, 1:] - v.uy[:, :-1]) / h
        return ScalarField(g, CELL, d)
    gx = grad(ScalarField(g, NODE if v.lattice == "node" else CELL, v.ux))
    gy = grad(ScalarField(g, NODE if v.lattice == "node" else CELL, v.uy))
    if v.lattice == "node":
        return ScalarField(g, NODE, gx.ux + gy.uy)
    # cell-lattice colocated: reuse the node one-sided formulas on cells
    a, b = v.ux, v.uy
    out = np.empty_like(a)
    if g.periodic:
        out = (np.roll(a, -1, 0) - np.roll(a, 1, 0)) / (2 * h) + (
            np.roll(b, -1, 1) - np.roll(b, 1, 1)
        ) / (2 * h)
        return ScalarField(g, CELL, out)
    dxa = np.empty_like(a)
    dxa[1:-1, :] = (a[2:, :] - a[:-2, :]) / (2 * h)
    dxa[0, :] = (-3 * a[0, :] + 4 * a[1, :] - a[2, :]) / (2 * h)
    dxa[-1, :] = (3 * a[-1, :] - 4 * a[-2, :] + a[-3, :]) / (2 * h)
    dyb = np.empty_like(b)
    dyb[:, 1:-1] = (b[:, 2:] - b[:, :-2]) / (2 * h)
    dyb[:, 0] = (-3 * b[:, 0] + 4 * b[:, 1] - b[:, 2]) / (2 * h)
    dyb[:, -1] = (3 * b[:, -1] - 4 * b[:, -2] + b[:, -3]) / (2 * h)
    return ScalarField(g, CELL, dxa + dyb)


def perp_grad(s: ScalarField) -> VectorField:
    """Rotated gradient (-d/dy, d/dx): node scalar -> MAC vector.

    Every face receives a value, boundary faces included; composing with
    ``div`` gives exactly zero on every cell in both modes.
    """
    if s.placement != NODE:
        raise FieldError("perp_grad expects a node-placed scalar")
    g, h, a = s.grid, s.grid.h, s.data
    if g.periodic:
        px = -(np.roll(a, -1, axis=1) - a) / h
        py = (np.roll(a, -1, axis=0) - a) / h
        return VectorField(g, MAC, px, py)
    px = -(a[:, 1:] - a[:, :-1]) / h
    py = (a[1:, :] - a[:-1, :]) / h
    return VectorField(g, MAC, px, py)


def curl2(v: VectorField) -> ScalarField:
    """Scalar curl d(uy)/dx - d(ux)/dy: MAC vector -> node scalar.

    Dirichlet walls use mirror ghosts for the derivative normal to the wall
    (ghost = -interior) and the stored boundary-face values for the
    derivative along the wall.  For a no-slip velocity this yields the
    standard wall-vorticity rows 2*u_t/h; for a general MAC field it makes
    ``curl2(perp_grad(s)) = laplacian(s)`` exact at every node.

    Colocated input -> same-lattice output (central / one-sided rows).
    """
    g, h = v.grid, v.grid.h
    if v.placement == MAC:
        ux, uy = v.ux, v.uy
        if g.periodic:
            c = (uy - np.roll(uy, 1, axis=0)) / h - (ux - np.roll(ux, 1, axis=1)) / h
            return ScalarField(g, NODE, c)
        n = g.nx
        c = np.zeros((n + 1, n + 1))
        # d(uy)/dx: interior columns, mirror at i = 0 and i = n
        dyx = np.empty((n + 1, n + 1))
        dyx[1:-1, :] = (uy[1:, :] - uy[:-1, :]) / h
        dyx[0, :] = 2.0 * uy[0, :] / h
        dyx[-1, :] = -2.0 * uy[-1, :] / h
        # d(ux)/dy: interior rows, mirror at j = 0 and j = n
        dxy = np.empty((n + 1, n + 1))
        dxy[:, 1:-1] = (ux[:, 1:] - ux[:, :-1]) / h
        dxy[:, 0] = 2.0 * ux[:, 0] / h
        dxy[:, -1] = -2.0 * ux[:, -1] / h
        c = dyx - dxy
        return ScalarField(g, NODE, c)
    a, b = v.ux, v.uy
    placement = NODE if v.lattice == "node" else CELL
    if g.periodic:
        c = (np.roll(b, -1, 0) - np.roll(b, 1, 0)) / (2 * h) - (
            np.roll(a, -1, 1) - np.roll(a, 1, 1)
        ) / (2 * h)
        return ScalarField(g, placement, c)
    dxb = np.empty_like(b)
    dxb[1:-1, :] = (b[2:, :] - b[:-2, :]) / (2 * h)
    dxb[0, :] = (-3 * b[0, :] + 4 * b[1, :] - b[2, :]) / (2 * h)
    dxb[-1, :] = (3 * b[-1, :] - 4 * b[-2, :] + b[-3, :]) / (2 * h)
    dya = np.empty_like(a)
    dya[:, 1:-1] = (a[:, 2:] - a[:, :-2]) / (2 * h)
    dya[:, 0] = (-3 * a[:, 0] + 4 * a[:, 1] - a[:, 2]) / (2 * h)
    dya[:, -1] = (3 * a[:, -1] - 4 * a[:, -2] + a[:, -3]) / (2 * h)
    return ScalarField(g, placement, dxb - dya)


def _laplacian_cell(g: GridSpec, a: np.ndarray) -> np.ndarray:
    h2 = g.h * g.h
    if g.periodic:
        return (
            np.roll(a, 1, 0) + np.roll(a, -1, 0) + np.roll(a, 1, 1) + np.roll(a, -1, 1) - 4 * a
        ) / h2
    p = np.pad(a, 1, mode="edge")
    # odd mirror: ghost = -interior realizes the wall value 0
    p[0, 1:-1] = -a[0, :]
    p[-1, 1:-1] = -a[-1, :]
    p[1:-1, 0] = -a[:, 0]
    p[1:-1, -1] = -a[:, -1]
    return (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4 * a) / h2


def _laplacian_node(g: GridSpec, a: np.ndarray) -> np.ndarray:
    h2 = g.h * g.h
    if g.periodic:
        return (
            np.roll(a, 1, 0) + np.roll(a, -1, 0) + np.roll(a, 1, 1) + np.roll(a, -1, 1) - 4 * a
        ) / h2
    # even reflection about the wall samples: matches curl2(perp_grad(.))
    p = np.pad(a, 1, mode="reflect")
    return (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4 * a) / h2


def _laplacian_mac_component(
    g: GridSpec, a: np.ndarray, pinned_axis: int
) -> np.ndarray:
    """Five-point Laplacian of one MAC component.

    Along ``pinned_axis`` the extreme samples are boundary faces: they are
    used as stored neighbours but their own output rows are zero (they are
    not unknowns).  Along the other axis the wall closure is the odd mirror
    ghost = -interior.
    """
    h2 = g.h * g.h
    if g.periodic:
        return (
            np.roll(a, 1, 0) + np.roll(a, -1, 0) + np.roll(a, 1, 1) + np.roll(a, -1, 1) - 4 * a
        ) / h2
    p = np.pad(a, 1, mode="edge")
    if pinned_axis == 0:
        p[1:-1, 0] = -a[:, 0]
        p[1:-1, -1] = -a[:, -1]
    else:
        p[0, 1:-1] = -a[0, :]
        p[-1, 1:-1] = -a[-1, :]
    out = (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4 * a) / h2
    if pinned_axis == 0:
        out[0, :] = 0.0
        out[-1, :] = 0.0
    else:
        out[:, 0] = 0.0
        out[:, -1] = 0.0
    return out


def laplacian(f: ScalarField | VectorField) -> ScalarField | VectorField:
    """Five-point Laplacian respecting each placement's wall closure.

    cell scalars: odd mirror ghosts (homogeneous Dirichlet wall data).
    node scalars: even reflection ghosts, the closure under which
    ``curl2(perp_grad(s))`` equals ``laplacian(s)`` exactly.
    MAC vectors: pinned boundary faces along the component's own axis, odd
    mirror ghosts transversally (no-slip); output is zero on pinned faces.
    """
    if isinstance(f, ScalarField):
        if f.placement == CELL:
            return ScalarField(f.grid, CELL, _laplacian_cell(f.grid, f.data))
        return ScalarField(f.grid, NODE, _laplacian_node(f.grid, f.data))
    if f.placement == MAC:
        return VectorField(
            f.grid,
            MAC,
            _laplacian_mac_component(f.grid, f.ux, pinned_axis=0),
            _laplacian_mac_component(f.grid, f.uy, pinned_axis=1),
        )
    lap = _laplacian_node if f.lattice == "node" else _laplacian_cell
    return VectorField(
        f.grid, COLOCATED, lap(f.grid, f.ux), lap(f.grid, f.uy), f.lattice
    )


# ---------------------------------------------------------------------------
# Quadrature, inner products and norms
# ---------------------------------------------------------------------------


def _scalar_weights(f: ScalarField) -> np.ndarray:
    return lattice_weights(f.grid, f.lattice)


def l2_inner(a: ScalarField | VectorField, b: ScalarField | VectorField) -> float:
    """Quadrature-weighted L2 inner product of two same-placement fields."""
    if isinstance(a, ScalarField) and isinstance(b, ScalarField):
        if a.placement != b.placement or a.grid != b.grid:
            raise FieldError("inner product needs matching scalar placements")
        return float(np.sum(_scalar_weights(a) * a.data * b.data))
    if isinstance(a, VectorField) and isinstance(b, VectorField):
        if a.placement != b.placement or a.grid != b.grid or a.lattice != b.lattice:
            raise FieldError("inner product needs matching vector placements")
        lx, ly = a.component_lattices()
        wx = lattice_weights(a.grid, lx)
        wy = lattice_weights(a.grid, ly)
        return float(np.sum(wx * a.ux * b.ux) + np.sum(wy * a.uy * b.uy))
    raise FieldError("cannot pair a scalar with a vector")


def _weighted_lq(pieces: Iterable[tuple[np.ndarray, np.ndarray]], q: float) -> float:
    """L^q norm of a collection of (values, weights) sample blocks.

    Vector collections are measured componentwise: the q-th power sums the
    q-th powers of every component sample (for q = 2 this is the usual
    Euclidean L2 norm; for general q it is an equivalent product-space norm,
    the fixed convention of this package for staggered components).
    """
    if q == np.inf:
        return float(max(np.max(np.abs(v)) if v.size else 0.0 for v, _ in pieces))
    acc = 0.0
    for values, weights in pieces:
        acc += float(np.sum(weights * np.abs(values) ** q))
    return acc ** (1.0 / q)


def lq_norm(f: ScalarField | VectorField, q: float) -> float:
    """Discrete L^q norm (midpoint rule on the native placement), q in [1, inf]."""
    if q != np.inf:
        q = float(q)
        if not np.isfinite(q) or q < 1.0:
            raise FieldError(f"norm order q must be in [1, inf], got {q}")
    if isinstance(f, ScalarField):
        return _weighted_lq([(f.data, _scalar_weights(f))], q)
    lx, ly = f.component_lattices()
    return _weighted_lq(
        [
            (f.ux, lattice_weights(f.grid, lx)),
            (f.uy, lattice_weights(f.grid, ly)),
        ],
        q,
    )


# ---------------------------------------------------------------------------
# Derivative sample sets (for Sobolev norms and audits)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DerivativeSamples:
    """A block of derivative samples at positions (x0 + i*h, y0 + j*h),
    with midpoint quadrature weights clipped to the domain and an optional
    multiplicity (mixed second derivatives count twice in a Hessian).
    """

    grid: GridSpec
    data: np.ndarray
    x0: float
    y0: float
    multiplicity: float = 1.0

    def weights(self) -> np.ndarray:
        wx = _axis_weights(self.grid, self.data.shape[0], self.x0)
        wy = _axis_weights(self.grid, self.data.shape[1], self.y0)
        return self.multiplicity * np.outer(wx, wy)

    def dx(self) -> "DerivativeSamples":
        h = self.grid.h
        if self.grid.periodic:
            d = (np.roll(self.data, -1, axis=0) - self.data) / h
            x0 = 0.0 if abs(self.x0 - 0.5 * h) < 1e-15 else 0.5 * h
            return DerivativeSamples(self.grid, d, x0, self.y0, self.multiplicity)
        d = (self.data[1:, :] - self.data[:-1, :]) / h
        return DerivativeSamples(self.grid, d, self.x0 + 0.5 * h, self.y0, self.multiplicity)

    def dy(self) -> "DerivativeSamples":
        h = self.grid.h
        if self.grid.periodic:
            d = (np.roll(self.data, -1, axis=1) - self.data) / h
            y0 = 0.0 if abs(self.y0 - 0.5 * h) < 1e-15 else 0.5 * h
            return DerivativeSamples(self.grid, d, self.x0, y0, self.multiplicity)
        d = (self.data[:, 1:] - self.data[:, :-1]) / h
        return DerivativeSamples(self.grid, d, self.x0, self.y0 + 0.5 * h, self.multiplicity)


def _samples_of_scalar(f: ScalarField) -> DerivativeSamples:
    x0, y0 = f.grid.lattice_origin(f.lattice)
    return DerivativeSamples(f.grid, f.data, x0, y0)


def _mirror_normal_derivative(
    g: GridSpec, a: np.ndarray, axis: int
) -> DerivativeSamples:
    """Derivative of a tangential MAC component normal to the wall, extended
    to the full node lattice with the mirror-ghost wall rows 2*a/h (the rows
    whose squares complete the exact summation-by-parts identity).
    """
    h = g.h
    if g.periodic:
        d = (a - np.roll(a, 1, axis=axis)) / h
        # positions shift onto the node lattice
        return DerivativeSamples(g, np.roll(d, 0), 0.0, 0.0)
    if axis == 1:  # d(ux)/dy on the node lattice
        n1 = a.shape[0]
        out = np.empty((n1, a.shape[1] + 1))
        out[:, 1:-1] = (a[:, 1:] - a[:, :-1]) / h
        out[:, 0] = 2.0 * a[:, 0] / h
        out[:, -1] = -2.0 * a[:, -1] / h
        return DerivativeSamples(g, out, 0.0, 0.0)
    out = np.empty((a.shape[0] + 1, a.shape[1]))
    out[1:-1, :] = (a[1:, :] - a[:-1, :]) / h
    out[0, :] = 2.0 * a[0, :] / h
    out[-1, :] = -2.0 * a[-1, :] / h
    return DerivativeSamples(g, out, 0.0, 0.0)


def gradient_samples(f: ScalarField | VectorField) -> list[DerivativeSamples]:
    """First-derivative sample blocks used by the Sobolev seminorms.

    Node scalars produce full face lattices (no truncation).  Cell scalars
    truncate to interior faces.  MAC vectors produce four blocks: the
    diagonal derivatives on cells and the transverse derivatives on the full
    node lattice with mirror wall rows, so that for pinned fields
    ``sum of squares = -<laplacian u, u>`` exactly.
    """
    if isinstance(f, ScalarField):
        s = _samples_of_scalar(f)
        return [s.dx(), s.dy()]
    if f.placement == MAC:
        g = f.grid
        x0 = 0.5 * g.h
        dxux = DerivativeSamples(g, f.ux, 0.0, x0).dx()
        dyuy = DerivativeSamples(g, f.uy, x0, 0.0).dy()
        dyux = _mirror_normal_derivative(g, f.ux, axis=1)
        dxuy = _mirror_normal_derivative(g, f.uy, axis=0)
        return [dxux, dyux, dxuy, dyuy]
    lx, _ = f.component_lattices()
    x0, y0 = f.grid.lattice_origin(lx)
    sx = DerivativeSamples(f.grid, f.ux, x0, y0)
    sy = DerivativeSamples(f.grid, f.uy, x0, y0)
    return [sx.dx(), sx.dy(), sy.dx(), sy.dy()]


def hessian_samples(f: ScalarField | VectorField) -> list[DerivativeSamples]:
    """Second-derivative blocks by interior-truncated composition of first
    differences; the mixed derivative is computed once with multiplicity 2.
    """
    blocks: list[DerivativeSamples] = []
    if isinstance(f, ScalarField):
        components = [_samples_of_scalar(f)]
    elif f.placement == MAC:
        g = f.grid
        x0 = 0.5 * g.h
        components = [
            DerivativeSamples(g, f.ux, 0.0, x0),
            DerivativeSamples(g, f.uy, x0, 0.0),
        ]
    else:
        lx, _ = f.component_lattices()
        x0, y0 = f.grid.lattice_origin(lx)
        components = [
            DerivativeSamples(f.grid, f.ux, x0, y0),
            DerivativeSamples(f.grid, f.uy, x0, y0),
        ]
    for s in components:
        dx, dy = s.dx(), s.dy()
        blocks.append(dx.dx())
        mixed = dx.dy()
        blocks.append(
            DerivativeSamples(mixed.grid, mixed.data, mixed.x0, mixed.y0, 2.0)
        )
        blocks.append(dy.dy())
    return blocks


def third_derivative_samples(f: ScalarField | VectorField) -> list[DerivativeSamples]:
    """Third-derivative blocks (diagnostics/probes): xxx, xxy (x3), xyy (x3),
    yyy, by interior-truncated composition.
    """
    blocks: list[DerivativeSamples] = []
    for h2 in hessian_samples(f):
        # each Hessian block contributes an x child and a y child with the
        # parent multiplicity, which reproduces the binomial multiplicities
        # 1,3,3,1 of the third-derivative tensor
        blocks.append(h2.dx())
        blocks.append(h2.dy())
    return blocks


def samples_lq(blocks: Iterable[DerivativeSamples], q: float) -> float:
    """L^q norm over derivative sample blocks (multiplicity-aware)."""
    if q != np.inf:
        q = float(q)
        if not np.isfinite(q) or q < 1.0:
            raise FieldError(f"norm order q must be in [1, inf], got {q}")
    return _weighted_lq([(b.data, b.weights()) for b in blocks], q)


def sobolev_norms(f: ScalarField | VectorField) -> dict[str, float]:
    """Discrete Sobolev norms: H1 seminorm and full norm, H2 seminorm, and
    the W^{1,4} norm (\\|f\\|_4^4 + \\|grad f\\|_4^4)^{1/4}.
    """
    l2 = lq_norm(f, 2)
    grads = gradient_samples(f)
    h1_semi = samples_lq(grads, 2)
    h2_semi = samples_lq(hessian_samples(f), 2)
    l4 = lq_norm(f, 4)
    g4 = samples_lq(grads, 4)
    return {
        "h1_semi": h1_semi,
        "h1_full": float(np.hypot(l2, h1_semi)),
        "h2_semi": h2_semi,
        "w14": float((l4**4 + g4**4) ** 0.25),
    }


def max_abs(f: ScalarField | VectorField) -> float:
    """Maximum absolute sample value (discrete L-infinity norm)."""
    return lq_norm(f, np.inf)
