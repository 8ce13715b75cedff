"""Stochastic log-gas integrators on the line and the half-line.

Two interacting particle systems drive everything downstream: an
N-particle model on R with pairwise logarithmic repulsion of strength 4
and noise sqrt(kappa), and its half-line analogue with image-charge
terms and a wall repulsion of strength (8(nu+1)-kappa)/2.

Discretization is explicit Euler-Maruyama on a uniform macro grid with
recursive interval bisection whenever a proposal collides or the local
drift is too stiff for the step; bisected noise is refined as a
Brownian bridge so the driving path law is preserved under refinement.
Path simulation integrates the half-line gas in squared coordinates
(lam = x^2), where the wall drift is the bounded constant 8(nu+1) and
the diffusion coefficient vanishes at the wall; in x coordinates the
wall process at 8(nu+1) = 2*kappa is marginally recurrent and makes
arbitrarily deep excursions that no finite bisection depth resolves.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from numpy.random import Generator, Philox

from ._stepper import MODE_HALF_LAMBDA, MODE_HALF_X, MODE_REAL_X, advance
from .errors import NonOrderedConfiguration, NonPositive, StepFailure

__all__ = [
    "Support",
    "GasState",
    "GasPath",
    "log_potential",
    "drift",
    "em_step",
    "simulate_gas",
    "simulate_gas_batch",
    "simulate_free_batch",
    "wall_regime_ok",
]

# Proposals closer than this (gap, or wall distance on the half-line)
# count as collisions.
COLLISION_TOL = 1e-12
# Default deepest allowed interval bisection before giving up.
MAX_DEPTH = 40
# Reject a substep when |drift_i| * dt exceeds this fraction of the
# local clearance.  At this fraction the per-substep noise is about
# 0.45 * clearance near collisions, small enough that single-substep
# collapses are rare and the walk keeps the diffusion's excursion law;
# larger fractions fatten the small-gap tail by orders of magnitude.
GUARD_FRAC = 0.05

# Salt separating the Philox macro-noise stream from other generators.
_SALT_MACRO = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


class Support(Enum):
    """Where the gas lives: the whole real line or the positive half-line."""

    REAL_LINE = "real-line"
    HALF_LINE = "half-line"


def wall_regime_ok(kappa: float, nu: float) -> bool:
    """True when the wall drift is repelling (8(nu+1) >= kappa)."""
    return 8.0 * (nu + 1.0) >= kappa


@dataclass(frozen=True)
class GasState:
    """Ordered particle configuration at one instant.

    positions must be strictly increasing (minimum gap COLLISION_TOL)
    and, on the half-line, strictly positive.  ``nu`` is ignored on the
    real line.
    """

    positions: np.ndarray
    time: float
    support: Support
    kappa: float
    nu: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "positions", x)
        if x.ndim != 1 or x.size == 0:
            raise NonOrderedConfiguration("positions must be a nonempty 1-d vector")
        _check_configuration(x, self.support)
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")
        if self.time < 0:
            raise ValueError("time must be nonnegative")

    @property
    def n_particles(self) -> int:
        return self.positions.size


def _check_configuration(x: np.ndarray, support: Support) -> None:
    if x.size > 1 and np.min(np.diff(x)) < COLLISION_TOL:
        raise NonOrderedConfiguration(
            f"positions must be strictly increasing with gaps >= {COLLISION_TOL:g}"
        )
    if support is Support.HALF_LINE and x[0] < COLLISION_TOL:
        raise NonPositive("half-line positions must be strictly positive")


def _wall_coefficient(kappa: float, nu: float) -> float:
    return (8.0 * (nu + 1.0) - kappa) / 2.0


def log_potential(state: GasState) -> float:
    """Logarithmic interaction potential of a configuration.

    Real line: 4 * sum_{i<j} log(x_j - x_i).  Half-line adds the image
    terms log(x_j + x_i) and a wall term ((8(nu+1)-kappa)/2) * sum log x_i.
    """
    x = state.positions
    iu, ju = np.triu_indices(x.size, k=1)
    total = 4.0 * float(np.sum(np.log(x[ju] - x[iu])))
    if state.support is Support.HALF_LINE:
        total += 4.0 * float(np.sum(np.log(x[ju] + x[iu])))
        total += _wall_coefficient(state.kappa, state.nu) * float(np.sum(np.log(x)))
    return total


def drift(state: GasState) -> np.ndarray:
    """Drift vector b_i; equals the gradient of :func:`log_potential`."""
    return _drift_array(
        state.positions[None, :], state.support, state.kappa, state.nu
    )[0]


def _drift_array(
    x: np.ndarray, support: Support, kappa: float, nu: float
) -> np.ndarray:
    """Vectorized x-coordinate drift for configurations of shape (S, N)."""
    n = x.shape[-1]
    if n == 1:
        b = np.zeros_like(x)
    else:
        diff = x[..., :, None] - x[..., None, :]
        eye = np.eye(n, dtype=bool)
        inv = np.where(eye, 0.0, 1.0 / np.where(eye, 1.0, diff))
        b = 4.0 * inv.sum(axis=-1)
    if support is Support.HALF_LINE:
        b = b + _wall_coefficient(kappa, nu) / x
        if n > 1:
            ssum = x[..., :, None] + x[..., None, :]
            eye = np.eye(n, dtype=bool)
            inv = np.where(eye, 0.0, 1.0 / np.where(eye, 1.0, ssum))
            b = b + 4.0 * inv.sum(axis=-1)
    return b


def _macro_noise(seed: int, n_steps: int, n: int) -> np.ndarray:
    """All macro-step normals of one path, shape (n_steps, n)."""
    bg = Philox(key=[seed & _MASK64, _SALT_MACRO])
    return Generator(bg).standard_normal((n_steps, n))


def em_step(
    state: GasState, dt: float, gaussians: np.ndarray, max_depth: int = MAX_DEPTH,
    seed: int = 0, step: int = 0,
) -> GasState:
    """One Euler-Maruyama macro step of size dt in x coordinates.

    ``gaussians`` are the N standard-normal driving increments for the
    whole step.  Proposes x_i + b_i dt + sqrt(kappa dt) g_i; if the
    proposal collides (or the local drift is too stiff for dt), the
    interval is recursively halved with independent Brownian-bridge
    refinements of the noise until every substep is valid.  Raises
    StepFailure after ``max_depth`` halvings.  ``seed`` and ``step`` key
    the refinement noise stream; standalone calls use stream (0, 0).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = np.asarray(gaussians, dtype=float)
    if g.shape != state.positions.shape:
        raise ValueError("gaussians must match the particle count")
    mode = MODE_REAL_X if state.support is Support.REAL_LINE else MODE_HALF_X
    ok, _, x_new = advance(
        mode, state.positions, dt, g, state.kappa, state.nu,
        seed, step, max_depth, GUARD_FRAC, COLLISION_TOL,
    )
    if not ok:
        raise StepFailure(
            f"no valid step after {max_depth} halvings; "
            "kappa/N/dt regime too stiff"
        )
    return GasState(x_new, state.time + dt, state.support, state.kappa, state.nu)


@dataclass
class GasPath:
    """Macro-grid record of one integrated gas path.

    ``positions`` has shape (n_steps + 1, N); row k is the state at
    ``times[k]``.  ``substep_log`` counts interval halvings taken by the
    adaptive integrator over the whole path.
    """

    times: np.ndarray
    positions: np.ndarray
    support: Support
    kappa: float
    nu: float
    seed: int
    substep_log: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.shape[0] != self.times.size:
            raise ValueError("times and positions disagree on step count")
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must strictly increase from 0")

    @property
    def n_particles(self) -> int:
        return self.positions.shape[1]

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def state(self, k: int) -> GasState:
        return GasState(
            self.positions[k], float(self.times[k]), self.support, self.kappa, self.nu
        )

    @property
    def states(self) -> list[GasState]:
        return [self.state(k) for k in range(self.times.size)]

    def write_csv(self, path) -> None:
        """CSV `t,x1,...,xN` plus a JSON metadata sidecar."""
        path = Path(path)
        n = self.n_particles
        header = "t," + ",".join(f"x{i + 1}" for i in range(n))
        lines = [header]
        for k in range(self.times.size):
            row = [format(self.times[k], ".17g")]
            row += [format(v, ".17g") for v in self.positions[k]]
            lines.append(",".join(row))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
        meta = {
            "domain": self.support.value,
            "kappa": self.kappa,
            "nu": self.nu,
            "seed": self.seed,
            "n_steps": self.n_steps,
        }
        path.with_suffix(".json").write_text(
            json.dumps(meta, indent=2) + "\n", encoding="utf-8", newline="\n"
        )

    @classmethod
    def read_csv(cls, path) -> "GasPath":
        path = Path(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        return cls(
            times=data[:, 0],
            positions=data[:, 1:],
            support=Support(meta["domain"]),
            kappa=float(meta["kappa"]),
            nu=float(meta["nu"]),
            seed=int(meta["seed"]),
        )


def simulate_gas(
    initial: GasState, horizon: float, n_steps: int, seed: int,
    max_depth: int = MAX_DEPTH,
) -> GasPath:
    """Integrate one seeded path on a uniform macro grid.

    Deterministic in (initial, horizon, n_steps, seed); the result is
    bitwise identical whether run alone or inside a batch.
    """
    positions, substeps = simulate_gas_batch(
        initial, horizon, n_steps, [seed], max_depth=max_depth
    )
    times = np.linspace(0.0, horizon, n_steps + 1)
    return GasPath(
        times=times,
        positions=positions[0],
        support=initial.support,
        kappa=initial.kappa,
        nu=initial.nu,
        seed=seed,
        substep_log=int(substeps[0]),
    )


def simulate_gas_batch(
    initial: GasState,
    horizon: float,
    n_steps: int,
    seeds,
    on_failure: str = "raise",
    max_depth: int = MAX_DEPTH,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate many seeds at once; returns (positions, substep counts).

    ``positions`` has shape (S, n_steps + 1, N).  Noise comes from
    per-seed counter-based streams, so each seed's path is independent
    of the batch composition.  StepFailure is annotated with the macro
    step index at which the offending seed got stuck.

    ``on_failure='drop'`` marks stuck seeds instead of raising: their
    substep count is set to -1 and their remaining rows are frozen.
    Near-collision starts put a small probability mass (of order
    resolvable-gap / start-gap) below any fixed bisection depth, so
    campaigns exclude-and-count rather than resample, which would bias
    the law.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if on_failure not in ("raise", "drop"):
        raise ValueError("on_failure must be 'raise' or 'drop'")
    seeds = np.asarray(list(seeds), dtype=np.uint64)
    n = initial.n_particles
    dt = horizon / n_steps
    support, kappa, nu = initial.support, initial.kappa, initial.nu
    half_line = support is Support.HALF_LINE

    noise = np.empty((seeds.size, n_steps, n))
    for si, seed in enumerate(seeds):
        noise[si] = _macro_noise(int(seed), n_steps, n)

    out = np.empty((seeds.size, n_steps + 1, n))
    out[:, 0, :] = initial.positions
    substeps = np.zeros(seeds.size, dtype=np.int64)

    if half_line:
        state = np.broadcast_to(initial.positions**2, (seeds.size, n)).copy()
        mode = MODE_HALF_LAMBDA
    else:
        state = np.broadcast_to(initial.positions, (seeds.size, n)).copy()
        mode = MODE_REAL_X

    eye = np.eye(n, dtype=bool)
    for k in range(n_steps):
        g = noise[:, k, :]
        if half_line:
            prop, ok = _lambda_macro_step(state, g, dt, kappa, nu, eye)
        else:
            prop, ok = _real_macro_step(state, g, dt, kappa, nu, eye)
        ok &= substeps >= 0
        x_next = prop
        for si in np.nonzero(~ok)[0]:
            if substeps[si] < 0:
                x_next[si] = state[si]
                continue
            good, splits, st = advance(
                mode, state[si], dt, g[si], kappa, nu,
                int(seeds[si]), k, max_depth, GUARD_FRAC, COLLISION_TOL,
            )
            if not good:
                if on_failure == "drop":
                    substeps[si] = -1
                    x_next[si] = state[si]
                    continue
                raise StepFailure(
                    f"seed {int(seeds[si])} stuck at macro step {k}: no valid "
                    f"step after {max_depth} halvings; kappa/N/dt regime too stiff",
                    step_index=k,
                )
            x_next[si] = st
            substeps[si] += splits
        state = x_next
        out[:, k + 1, :] = np.sqrt(state) if half_line else state
    return out, substeps


def _real_macro_step(x, g, dt, kappa, nu, eye):
    """Vectorized guarded x-EM proposal on R; returns (proposal, valid mask)."""
    n = x.shape[1]
    b = _drift_array(x, Support.REAL_LINE, kappa, nu)
    clear = _neighbor_clearance(x)
    ok = np.all(np.abs(b) * dt <= GUARD_FRAC * clear, axis=1)
    prop = x + b * dt + np.sqrt(kappa * dt) * g
    if n > 1:
        ok &= np.min(np.diff(prop, axis=1), axis=1) >= COLLISION_TOL
    return prop, ok


def _lambda_macro_step(lam, g, dt, kappa, nu, eye):
    """Vectorized guarded EM proposal for squared half-line coordinates."""
    n = lam.shape[1]
    wall = 8.0 * (nu + 1.0)
    if n > 1:
        diff = lam[:, :, None] - lam[:, None, :]
        inv = np.where(eye, 0.0, 1.0 / np.where(eye, 1.0, diff))
        inter = 16.0 * lam * inv.sum(axis=2)
    else:
        inter = np.zeros_like(lam)
    clear = _neighbor_clearance(lam)
    ok = np.all(np.abs(inter) * dt <= GUARD_FRAC * clear, axis=1)
    prop = lam + (wall + inter) * dt + 2.0 * np.sqrt(kappa * dt * lam) * g
    ok &= prop[:, 0] >= COLLISION_TOL**2
    if n > 1:
        with np.errstate(invalid="ignore"):
            ok &= np.min(
                np.diff(np.sqrt(np.maximum(prop, 0.0)), axis=1), axis=1
            ) >= COLLISION_TOL
    return prop, ok


def _neighbor_clearance(x: np.ndarray) -> np.ndarray:
    """Per-particle distance to the nearest neighbour, shape (S, N)."""
    d = np.full_like(x, np.inf)
    if x.shape[1] > 1:
        gaps = np.diff(x, axis=1)
        d[:, :-1] = gaps
        d[:, 1:] = np.minimum(d[:, 1:], gaps)
    return d


def simulate_free_batch(
    x0: np.ndarray, kappa: float, horizon: float, n_steps: int, seeds
) -> np.ndarray:
    """Interaction-free control driving: independent sqrt(kappa) BMs.

    No ordering constraint is enforced (free particles may cross), so
    the result is a raw (S, n_steps + 1, N) array rather than GasPaths.
    Uses the same per-seed noise streams as :func:`simulate_gas_batch`,
    which couples the control arm to the interacting one.
    """
    x0 = np.asarray(x0, dtype=float)
    seeds = np.asarray(list(seeds), dtype=np.uint64)
    n = x0.size
    dt = horizon / n_steps
    out = np.empty((seeds.size, n_steps + 1, n))
    for si, seed in enumerate(seeds):
        incr = np.sqrt(kappa * dt) * _macro_noise(int(seed), n_steps, n)
        out[si, 0] = x0
        np.cumsum(incr, axis=0, out=incr)
        out[si, 1:] = x0 + incr
    return out
