"""Stochastic Fokker-Planck integrator for the conditional law.

The conditional density evolves by ``d rho = A0* rho dt + A1* rho dB1``
on a uniform 1-D grid.  Both operators are discretized in divergence form
with central differences, so their grid integrals vanish for densities
supported away from the boundary; the jump shift is realized by linear
interpolation of the density at the shifted positions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import ModelSpec


class GridError(ValueError):
    """Density support incompatible with the grid."""


class CFLError(RuntimeError):
    """Explicit step size violates the stability bound."""


@dataclass
class GridDensity:
    """Density values on uniform grid nodes ``x`` at time ``time``."""

    x: np.ndarray
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.x.ndim != 1 or self.x.shape != self.values.shape:
            raise GridError("grid and values must be 1-D arrays of equal length")
        dx = np.diff(self.x)
        if self.x.size < 3 or not np.allclose(dx, dx[0], rtol=1e-10):
            raise GridError("grid must be uniform with at least 3 nodes")

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    def mass(self) -> float:
        return float(np.trapezoid(self.values, self.x))

    def first_moment(self) -> float:
        return float(np.trapezoid(self.x * self.values, self.x))

    def normalized(self) -> "GridDensity":
        return replace(self, values=self.values / self.mass())


def make_grid(x_min: float, x_max: float, n_points: int) -> np.ndarray:
    if n_points < 3 or x_max <= x_min:
        raise GridError("need x_max > x_min and n_points >= 3")
    return np.linspace(x_min, x_max, n_points)


def gaussian_density(x: np.ndarray, mean: float, std: float) -> GridDensity:
    values = np.exp(-0.5 * ((x - mean) / std) ** 2) / (std * np.sqrt(2 * np.pi))
    return GridDensity(x, values).normalized()


def _d1(f: np.ndarray, dx: float) -> np.ndarray:
    """Second-order first derivative, central interior, one-sided ends."""
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2 * dx)
    out[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * dx)
    out[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * dx)
    return out


def _d2(f: np.ndarray, dx: float) -> np.ndarray:
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / dx**2
    out[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / dx**2
    out[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / dx**2
    return out


def boundary_mass(density: GridDensity) -> float:
    rho, dx = density.values, density.dx
    return float((abs(rho[0]) + abs(rho[-1])) * dx)


def _check_boundary(density: GridDensity, tol: float) -> None:
    bm = boundary_mass(density)
    if bm > tol:
        raise GridError(f"density mass at grid boundary {bm:.3e} exceeds {tol:.1e}")


def apply_A0_star(density: GridDensity, spec: ModelSpec) -> np.ndarray:
    """Drift, diffusion and compensated jump parts of the adjoint generator."""
    x, rho, dx = density.x, density.values, density.dx
    t, m_bar = density.time, density.first_moment()
    alpha = np.broadcast_to(np.asarray(spec.drift(t, x, m_bar), float), x.shape)
    b1 = np.asarray(spec.diffusion_common(t, x, m_bar), float)
    b2 = np.asarray(spec.diffusion_idio(t, x, m_bar), float)
    bb = np.broadcast_to(b1 * b1 + b2 * b2, x.shape)
    rate = -_d1(alpha * rho, dx) + 0.5 * _d2(bb * rho, dx)
    if spec.levy.intensity > 0:
        if spec.levy.atoms is None:
            raise GridError("Fokker-Planck jump term needs atom-based marks")
        for value, prob in spec.levy.atoms:
            gamma = np.broadcast_to(
                np.asarray(spec.jump_amp(t, x, m_bar, value), float), x.shape
            )
            shifted = np.interp(x - gamma, x, rho, left=0.0, right=0.0)
            rate = rate + spec.levy.intensity * prob * (
                shifted - rho + _d1(gamma * rho, dx)
            )
    return rate


def apply_A1_star(density: GridDensity, spec: ModelSpec) -> np.ndarray:
    """Common-noise transport term ``-D[beta1 rho]``."""
    x, rho, dx = density.x, density.values, density.dx
    t, m_bar = density.time, density.first_moment()
    b1 = np.broadcast_to(
        np.asarray(spec.diffusion_common(t, x, m_bar), float), x.shape
    )
    return -_d1(b1 * rho, dx)


@dataclass
class StepDiagnostics:
    mass_defect: float        # |mass - 1| after the raw Euler update
    clipped_mass: float       # negative mass removed by limiting
    cfl_bound: float


def cfl_bound(density: GridDensity, spec: ModelSpec, safety: float = 0.25) -> float:
    x = density.x
    t, m_bar = density.time, density.first_moment()
    b1 = np.asarray(spec.diffusion_common(t, x, m_bar), float)
    b2 = np.asarray(spec.diffusion_idio(t, x, m_bar), float)
    peak = float(np.max(b1 * b1 + b2 * b2))
    if peak == 0:
        return np.inf
    return safety * density.dx**2 / peak


def step_spide(
    density: GridDensity,
    spec: ModelSpec,
    dt: float,
    dB1: float,
    *,
    cfl_safety: float = 0.25,
    boundary_tol: float = 1e-6,
    value_cap: float = 1e12,
) -> tuple[GridDensity, StepDiagnostics]:
    """One Euler-Maruyama step of the density, with clipping and renormalization."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    bound = cfl_bound(density, spec, cfl_safety)
    if dt > bound * (1 + 1e-9):
        raise CFLError(
            f"dt={dt:.3e} exceeds stability bound {bound:.3e} "
            f"(dx={density.dx:.3e}, t={density.time:.4f})"
        )
    _check_boundary(density, boundary_tol)
    rho = density.values
    new = rho + apply_A0_star(density, spec) * dt + apply_A1_star(density, spec) * dB1
    if np.any(~np.isfinite(new)) or np.max(np.abs(new)) > value_cap:
        raise CFLError(
            f"density blow-up at t={density.time:.4f}; "
            f"CFL bound was {bound:.3e} for dt={dt:.3e}"
        )
    raw = GridDensity(density.x, new, density.time + dt)
    defect = abs(raw.mass() - 1.0)
    clipped = np.clip(new, 0.0, None)
    clipped_mass = float(np.trapezoid(np.where(new < 0, -new, 0.0), density.x))
    out = GridDensity(density.x, clipped, density.time + dt).normalized()
    return out, StepDiagnostics(defect, clipped_mass, bound)


def evolve_spide(
    density: GridDensity,
    spec: ModelSpec,
    dt: float,
    dB1_increments: np.ndarray,
    **step_kwargs,
) -> tuple[GridDensity, list[StepDiagnostics]]:
    diags = []
    for dB1 in np.asarray(dB1_increments, float):
        density, d = step_spide(density, spec, dt, float(dB1), **step_kwargs)
        diags.append(d)
    return density, diags


def compare_to_particles(density: GridDensity, kde: GridDensity) -> float:
    """Trapezoid-rule L1 distance between two densities on the same grid."""
    if density.x.shape != kde.x.shape or not np.allclose(density.x, kde.x):
        raise GridError("densities live on different grids")
    return float(np.trapezoid(np.abs(density.values - kde.values), density.x))
