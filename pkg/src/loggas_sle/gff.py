"""Zero-boundary Gaussian free field machinery.

Closed-form Green's functions on the half-plane H and quadrant O (the
kernels of 2*pi*(-Laplacian)^-1 with Dirichlet boundary), their
evolution along a Loewner chain, Dirichlet inner-product and energy
quadratures for smooth bumps, and a discrete zero-boundary field
sampler on a truncation box.  Pairings (field, f), not point values,
are the observables everywhere.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.sparse
import scipy.sparse.linalg

from .errors import (
    CoincidentPoints,
    DomainViolation,
    MeshTooCoarse,
    SupportOutsideBox,
    SwallowedProbe,
)
from .loewner import Domain, LoewnerChain, evolve_many, in_domain

__all__ = [
    "TestFunction",
    "SquareMapPullback",
    "FieldSample",
    "green",
    "green_evolved",
    "green_decrement",
    "dirichlet_inner",
    "dirichlet_energy",
    "sample_field",
    "pair_field",
    "box_green_quadrature",
    "default_box",
]


@dataclass(frozen=True)
class TestFunction:
    """Smooth compactly supported bump with analytic gradient.

    f(z) = amplitude * exp(-1 / (1 - r^2)) for r = |z - center| / radius < 1,
    zero outside the disk.
    """

    center: complex
    radius: float
    amplitude: float = 1.0

    __test__ = False  # keep pytest from collecting this as a test class

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def support_box(self) -> tuple[float, float, float, float]:
        c, r = self.center, self.radius
        return (c.real - r, c.real + r, c.imag - r, c.imag + r)

    def value(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        u = np.abs(z - self.center) ** 2 / self.radius**2
        out = np.zeros(z.shape)
        inside = u < 1.0
        out[inside] = self.amplitude * np.exp(-1.0 / (1.0 - u[inside]))
        return out

    def gradient(self, z) -> tuple[np.ndarray, np.ndarray]:
        """Analytic (df/dx, df/dy)."""
        z = np.asarray(z, dtype=complex)
        d = z - self.center
        u = np.abs(d) ** 2 / self.radius**2
        gx = np.zeros(z.shape)
        gy = np.zeros(z.shape)
        inside = u < 1.0
        ui = u[inside]
        f = self.amplitude * np.exp(-1.0 / (1.0 - ui))
        common = -f * (2.0 / self.radius**2) / (1.0 - ui) ** 2
        gx[inside] = common * d.real[inside]
        gy[inside] = common * d.imag[inside]
        return gx, gy

    def nodes(self, mesh: float) -> tuple[np.ndarray, np.ndarray]:
        """Midpoint quadrature nodes inside the support and f values there."""
        x0, x1, y0, y1 = self.support_box()
        xs = np.arange(x0 + mesh / 2, x1, mesh)
        ys = np.arange(y0 + mesh / 2, y1, mesh)
        zz = (xs[:, None] + 1j * ys[None, :]).ravel()
        vals = self.value(zz)
        keep = vals != 0.0
        return zz[keep], vals[keep]

    def require_inside(self, domain: Domain) -> None:
        """Closure of the support must sit inside the open domain."""
        c, r = self.center, self.radius
        if domain is Domain.HALF_PLANE:
            ok = c.imag - r > 0
        else:
            ok = c.imag - r > 0 and c.real - r > 0
        if not ok:
            raise DomainViolation(
                f"support disk around {c} with radius {r} leaves {domain.value}"
            )


class SquareMapPullback:
    """Pullback f(z^2) of a bump on H to the quadrant O, with chain-rule gradient."""

    def __init__(self, f: TestFunction):
        self.f = f
        f.require_inside(Domain.HALF_PLANE)

    def support_box(self) -> tuple[float, float, float, float]:
        # image of the support circle under the principal square root
        theta = np.linspace(0.0, 2 * np.pi, 512, endpoint=False)
        circle = self.f.center + self.f.radius * np.exp(1j * theta)
        root = np.sqrt(circle)
        return (
            float(root.real.min()),
            float(root.real.max()),
            float(root.imag.min()),
            float(root.imag.max()),
        )

    def value(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        return self.f.value(z * z)

    def gradient(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=complex)
        w = z * z
        gx, gy = self.f.gradient(w)
        # dw1/dx = 2x, dw1/dy = -2y; dw2/dx = 2y, dw2/dy = 2x
        x, y = z.real, z.imag
        return gx * 2 * x + gy * 2 * y, -gx * 2 * y + gy * 2 * x


def _require_interior(domain: Domain, *points) -> None:
    for z in points:
        if not in_domain(domain, complex(z)):
            raise DomainViolation(f"{z} is not inside {domain.value}")


def green(domain: Domain, z: complex, w: complex) -> float:
    """Dirichlet Green's function (kernel of 2 pi (-Laplacian)^-1).

    H: log|z - conj w| - log|z - w|;
    O: log|(z - conj w)(z + conj w)| - log|(z - w)(z + w)|.
    """
    _require_interior(domain, z, w)
    if abs(z - w) < 1e-14:
        raise CoincidentPoints(f"green called with z = w = {z}")
    return float(_green_kernel(domain, np.asarray(z), np.asarray(w)))


def _green_kernel(domain: Domain, z, w):
    """Vectorized Green kernel without validation (z, w broadcastable)."""
    if domain is Domain.HALF_PLANE:
        return np.log(np.abs(z - np.conj(w))) - np.log(np.abs(z - w))
    return (
        np.log(np.abs(z - np.conj(w)))
        + np.log(np.abs(z + np.conj(w)))
        - np.log(np.abs(z - w))
        - np.log(np.abs(z + w))
    )


def _evolved_pair(chain: LoewnerChain, t: float, z: complex, w: complex):
    ez, ew = evolve_many(chain, [z, w], t)
    if not (ez.alive and ew.alive):
        dead = z if not ez.alive else w
        raise SwallowedProbe(f"probe {dead} swallowed before t={t}")
    return ez, ew


def green_evolved(chain: LoewnerChain, t: float, z: complex, w: complex) -> float:
    """G of the evolved domain via conformal invariance: G(g_t z, g_t w)."""
    ez, ew = _evolved_pair(chain, t, z, w)
    return green(chain.domain, ez.g, ew.g)


def green_decrement(chain: LoewnerChain, t: float, z: complex, w: complex) -> float:
    """Analytic time derivative of the evolved Green's function.

    H: -sum_i Im[2/(g z - X_i)] Im[2/(g w - X_i)];
    O: the same with 2/(g - X_i) - 2/(g + X_i) factors.  Always <= 0.
    """
    ez, ew = _evolved_pair(chain, t, z, w)
    k = min(chain.segment_index(t), chain.times.size - 2)
    x = chain.positions[k]
    if chain.domain is Domain.HALF_PLANE:
        az = (2.0 / (ez.g - x)).imag
        aw = (2.0 / (ew.g - x)).imag
    else:
        az = (2.0 / (ez.g - x) - 2.0 / (ez.g + x)).imag
        aw = (2.0 / (ew.g - x) - 2.0 / (ew.g + x)).imag
    return float(-(az * aw).sum())


def dirichlet_inner(f, g, mesh: float) -> float:
    """(1/2 pi) integral of grad f . grad g by midpoint quadrature.

    Accepts TestFunction or SquareMapPullback arguments (anything with
    support_box and gradient); uses the union support box.
    """
    fb, gb = f.support_box(), g.support_box()
    x0, x1 = min(fb[0], gb[0]), max(fb[1], gb[1])
    y0, y1 = min(fb[2], gb[2]), max(fb[3], gb[3])
    xs = np.arange(x0 + mesh / 2, x1, mesh)
    ys = np.arange(y0 + mesh / 2, y1, mesh)
    zz = (xs[:, None] + 1j * ys[None, :]).ravel()
    fx, fy = f.gradient(zz)
    gx, gy = g.gradient(zz)
    return float(np.sum(fx * gx + fy * gy) * mesh**2 / (2.0 * np.pi))


_DIAG_OFFSETS = 0.25 * np.exp(1j * np.pi * np.arange(4) / 4.0)


def _energy_from_mapped(domain, vals, w_pts, w_prime, mesh):
    """Quadrature of sum f_a f_b G(W_a, W_b) h^4 with a 4-pair diagonal rule."""
    p = vals.size
    iu, ju = np.triu_indices(p, k=1)
    kern = _green_kernel(domain, w_pts[iu], w_pts[ju])
    off = 2.0 * np.sum(vals[iu] * vals[ju] * kern)
    # diagonal cells: average the kernel over 4 antipodal sub-pair offsets,
    # mapped through the local linearization W(z + d) ~ W + W' d
    diag = 0.0
    for d in _DIAG_OFFSETS * mesh:
        step = w_prime * d
        diag += np.sum(vals * vals * _green_kernel(domain, w_pts + step, w_pts - step))
    diag /= len(_DIAG_OFFSETS)
    return float((off + diag) * mesh**4)


def dirichlet_energy(f: TestFunction, chain: LoewnerChain, t: float, mesh: float) -> float:
    """E_t(f): double Green-kernel integral of f on the evolved domain.

    Midpoint product quadrature at spacing mesh; every quadrature node
    must be alive at t, else SwallowedProbe.
    """
    f.require_inside(chain.domain)
    pts, vals = f.nodes(mesh)
    evals = evolve_many(chain, pts, t)
    if not all(e.alive for e in evals):
        n_dead = sum(not e.alive for e in evals)
        raise SwallowedProbe(f"{n_dead} quadrature nodes swallowed before t={t}")
    w_pts = np.array([e.g for e in evals])
    w_prime = np.array([e.gprime for e in evals])
    return _energy_from_mapped(chain.domain, vals, w_pts, w_prime, mesh)


def dirichlet_energy_static(f: TestFunction, domain: Domain, mesh: float) -> float:
    """E_0(f) on the un-evolved domain (identity map shortcut)."""
    f.require_inside(domain)
    pts, vals = f.nodes(mesh)
    return _energy_from_mapped(domain, vals, pts, np.ones_like(pts), mesh)


# ---------------------------------------------------------------------------
# discrete zero-boundary field on a truncation box
# ---------------------------------------------------------------------------


def default_box(domain: Domain, supports, factor: float = 8.0):
    """Truncation box enclosing the supports at ``factor`` x their diameter.

    H: [-L, L] x (0, 2L]; O: (0, 2L] x (0, 2L].
    """
    diam = max(2.0 * s.radius for s in supports)
    span = max(abs(s.center) + s.radius for s in supports)
    big_l = max(factor * diam, span + diam)
    if domain is Domain.HALF_PLANE:
        return (-big_l, big_l, 0.0, 2.0 * big_l)
    return (0.0, 2.0 * big_l, 0.0, 2.0 * big_l)


@dataclass
class FieldSample:
    """One draw of the discrete zero-boundary field on a box lattice.

    ``values[ix, iy]`` lives at x0 + (ix+1) h, y0 + (iy+1) h (interior
    nodes only; the box boundary is identically zero).
    """

    box: tuple[float, float, float, float]
    mesh: float
    values: np.ndarray
    seed: int

    @property
    def node_x(self) -> np.ndarray:
        return self.box[0] + self.mesh * np.arange(1, self.values.shape[0] + 1)

    @property
    def node_y(self) -> np.ndarray:
        return self.box[2] + self.mesh * np.arange(1, self.values.shape[1] + 1)

    def interpolate(self, w) -> np.ndarray:
        """Bilinear interpolation at complex points (zero outside the box)."""
        w = np.asarray(w, dtype=complex)
        x0, _, y0, _ = self.box
        h = self.mesh
        padded = np.zeros((self.values.shape[0] + 2, self.values.shape[1] + 2))
        padded[1:-1, 1:-1] = self.values
        fx = (w.real - x0) / h
        fy = (w.imag - y0) / h
        ix = np.floor(fx).astype(int)
        iy = np.floor(fy).astype(int)
        inside = (
            (ix >= 0) & (ix <= self.values.shape[0])
            & (iy >= 0) & (iy <= self.values.shape[1])
        )
        ixc = np.clip(ix, 0, self.values.shape[0])
        iyc = np.clip(iy, 0, self.values.shape[1])
        tx = fx - ix
        ty = fy - iy
        v00 = padded[ixc, iyc]
        v10 = padded[ixc + 1, iyc]
        v01 = padded[ixc, iyc + 1]
        v11 = padded[ixc + 1, iyc + 1]
        out = (
            v00 * (1 - tx) * (1 - ty)
            + v10 * tx * (1 - ty)
            + v01 * (1 - tx) * ty
            + v11 * tx * ty
        )
        return np.where(inside, out, 0.0)

    def write_csv(self, path) -> None:
        """CSV `ix,iy,value` plus a JSON sidecar {box, mesh, seed}."""
        path = Path(path)
        lines = ["ix,iy,value"]
        nx, ny = self.values.shape
        for ix in range(nx):
            for iy in range(ny):
                lines.append(f"{ix},{iy},{format(self.values[ix, iy], '.17g')}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
        meta = {"box": list(self.box), "mesh": self.mesh, "seed": self.seed}
        path.with_suffix(".json").write_text(
            json.dumps(meta, indent=2) + "\n", encoding="utf-8", newline="\n"
        )


def _interior_shape(box, mesh) -> tuple[int, int]:
    x0, x1, y0, y1 = box
    mx = (x1 - x0) / mesh
    my = (y1 - y0) / mesh
    if abs(mx - round(mx)) > 1e-9 * max(1, mx) or abs(my - round(my)) > 1e-9 * max(1, my):
        raise ValueError("mesh must divide both box sides")
    return int(round(mx)) - 1, int(round(my)) - 1


def _dirichlet_eigenvalues(nx: int, ny: int) -> np.ndarray:
    ax = 2.0 - 2.0 * np.cos(np.pi * np.arange(1, nx + 1) / (nx + 1))
    ay = 2.0 - 2.0 * np.cos(np.pi * np.arange(1, ny + 1) / (ny + 1))
    return ax[:, None] + ay[None, :]


def sample_field(box, mesh: float, seed: int, min_feature: float | None = None) -> FieldSample:
    """Sample the discrete zero-boundary field on the box lattice.

    Independent standard normals in the eigenbasis of the discrete
    Dirichlet Laplacian, scaled by sqrt(2 pi / eigenvalue) so that
    Cov[(H,f),(H,g)] converges to the continuum double Green integral of
    the box as mesh -> 0.  Deterministic per seed.

    ``min_feature`` (e.g. the smallest support diameter to be paired
    against) enforces at least 16 interior nodes per feature.
    """
    nx, ny = _interior_shape(box, mesh)
    if min_feature is not None and min_feature / mesh < 16:
        raise MeshTooCoarse(
            f"mesh {mesh} gives {min_feature / mesh:.1f} nodes per feature; need >= 16"
        )
    lam = _dirichlet_eigenvalues(nx, ny)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((nx, ny))
    values = scipy.fft.dstn(xi * np.sqrt(2.0 * np.pi / lam), type=1, norm="ortho")
    return FieldSample(box=tuple(box), mesh=mesh, values=values, seed=seed)


def sample_field_batch(box, mesh: float, seeds, min_feature: float | None = None):
    """Yield FieldSamples for many seeds (single eigenvalue setup)."""
    nx, ny = _interior_shape(box, mesh)
    if min_feature is not None and min_feature / mesh < 16:
        raise MeshTooCoarse(
            f"mesh {mesh} gives {min_feature / mesh:.1f} nodes per feature; need >= 16"
        )
    scale = np.sqrt(2.0 * np.pi / _dirichlet_eigenvalues(nx, ny))
    for seed in seeds:
        rng = np.random.default_rng(int(seed))
        xi = rng.standard_normal((nx, ny))
        values = scipy.fft.dstn(xi * scale, type=1, norm="ortho")
        yield FieldSample(box=tuple(box), mesh=mesh, values=values, seed=int(seed))


def _require_support_in_box(field: FieldSample, f) -> None:
    x0, x1, y0, y1 = field.box
    fb = f.support_box()
    if not (fb[0] > x0 and fb[1] < x1 and fb[2] > y0 and fb[3] < y1):
        raise SupportOutsideBox(f"support box {fb} not inside field box {field.box}")


def pair_field(field: FieldSample, f) -> float:
    """Lattice pairing (H, f) = mesh^2 sum_nodes H * f."""
    _require_support_in_box(field, f)
    vals = f.value((field.node_x[:, None] + 1j * field.node_y[None, :]).ravel())
    return float(field.mesh**2 * np.sum(field.values.ravel() * vals))


def box_green_quadrature(box, mesh: float, f, g=None) -> float:
    """Independent oracle for Cov[(H,f),(H,g)] on the box.

    Computes 2 pi h^4 f^T L^{-1} g with L the sparse 5-point Dirichlet
    Laplacian, via a direct sparse solve (no eigenbasis, no DST), which
    is the discrete double Green integral of the box.
    """
    nx, ny = _interior_shape(box, mesh)
    x0, _, y0, _ = box
    xs = x0 + mesh * np.arange(1, nx + 1)
    ys = y0 + mesh * np.arange(1, ny + 1)
    zz = (xs[:, None] + 1j * ys[None, :]).ravel()
    fv = f.value(zz)
    gv = fv if g is None else g.value(zz)
    tx = scipy.sparse.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(nx, nx))
    ty = scipy.sparse.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(ny, ny))
    lap = scipy.sparse.kron(tx, scipy.sparse.identity(ny)) + scipy.sparse.kron(
        scipy.sparse.identity(nx), ty
    )
    sol = scipy.sparse.linalg.spsolve(lap.tocsc(), gv)
    return float(2.0 * np.pi * mesh**4 * np.dot(fv, sol))
