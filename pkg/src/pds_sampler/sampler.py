"""Langevin samplers: vanilla, annealed, preconditioned (PDS) and solenoidal.

One update of the chain is

    x ← x + (ε²/2)·[M⁻¹M⁻ᵀ ∇log p(x) + ω·S ∇log p(x)] + ε·M⁻¹ z

which reduces to the plain discrete Langevin step when M = I and ω = 0.
Chains are evolved in fixed-size blocks of a batched array; each chain owns
a counter-based random stream derived from the master seed, so results do
not depend on the number of chains or worker threads.
"""

from __future__ import annotations
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .grid import Field, GridLike, GridShape, as_array, like
from .precondition import Preconditioner, SkewOperator, operator_matrix
from .targets import GaussianTarget, GrfTarget, ScoreTarget

logger = logging.getLogger(__name__)

# Sup-norm beyond which a chain is declared divergent
DIVERGENCE_LIMIT = 1e6

# Chains per batched block; fixed so results never depend on thread count
CHAIN_BLOCK = 64

THREADS_ENV = "PDS_THREADS"

DRIFT_MODES = ("score", "literal")

Observer = Callable[[int, np.ndarray], Optional[bool]]


class DivergenceError(RuntimeError):
    """A chain produced non-finite values or left the 1e6 sup-norm ball."""

    def __init__(self, message: str, iteration: Optional[int] = None, sampler: Optional[str] = None):
        self.iteration = iteration
        self.sampler = sampler
        prefix = f"[{sampler}] " if sampler else ""
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"{prefix}{message}{where}")


class ScheduleMode(str, Enum):
    CONSTANT = "constant"
    ANNEALED = "annealed"


@dataclass(frozen=True)
class StepSchedule:
    """Iteration count and per-iteration step sizes.

    Constant: ε_t = step. Annealed: a strictly decreasing σ ladder with the
    iterations split evenly across levels and ε_t = step·σ_t/σ_L, so the
    step variance ε_t² scales as σ_t²/σ_L².

    ``step`` is always the noise scale ε, not the NCSN step size α = ε².
    An NCSN schedule α_t = α·σ_t²/σ_L² is therefore reproduced with
    ``step = sqrt(α)``.
    """

    iterations: int
    step: float
    sigmas: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise ValueError(f"iterations must be a non-negative integer, got {self.iterations}")
        if not self.step > 0:
            raise ValueError(f"step size must be > 0, got {self.step}")
        sigmas = tuple(float(s) for s in self.sigmas)
        if sigmas:
            if any(not s > 0 for s in sigmas):
                raise ValueError(f"annealing sigmas must be > 0, got {sigmas}")
            if any(a <= b for a, b in zip(sigmas, sigmas[1:])):
                raise ValueError(f"annealing sigmas must be strictly decreasing, got {sigmas}")
            if self.iterations and len(sigmas) > self.iterations:
                raise ValueError(f"{len(sigmas)} noise levels need at least as many iterations")
        object.__setattr__(self, "sigmas", sigmas)

    @classmethod
    def constant(cls, iterations: int, step: float) -> "StepSchedule":
        return cls(iterations, step)

    @classmethod
    def geometric(
        cls, iterations: int, step: float, sigma_max: float, sigma_min: float, levels: int
    ) -> "StepSchedule":
        if levels < 1:
            raise ValueError(f"levels must be >= 1, got {levels}")
        if levels == 1:
            return cls(iterations, step, (float(sigma_max),))
        return cls(iterations, step, tuple(np.geomspace(sigma_max, sigma_min, levels)))

    @property
    def mode(self) -> ScheduleMode:
        return ScheduleMode.ANNEALED if self.sigmas else ScheduleMode.CONSTANT

    def plan(self) -> List[Tuple[float, Optional[float]]]:
        """(ε_t, σ_t) for every iteration; σ_t is None for constant schedules."""
        if not self.sigmas:
            return [(float(self.step), None)] * self.iterations
        sigma_last = self.sigmas[-1]
        blocks = np.array_split(np.arange(self.iterations), len(self.sigmas))
        plan: List[Tuple[float, Optional[float]]] = []
        for sigma, block in zip(self.sigmas, blocks):
            plan.extend([(float(self.step * sigma / sigma_last), sigma)] * len(block))
        return plan


@dataclass(frozen=True)
class SamplerConfig:
    schedule: StepSchedule
    preconditioner: Optional[Preconditioner] = None
    skew: Optional[SkewOperator] = None
    omega: float = 0.0
    rng_seed: int = 0
    denoise_final: bool = False
    drift_mode: str = "score"
    checkpoint_stride: int = 0
    keep_states: bool = False
    name: str = "sampler"

    def __post_init__(self) -> None:
        if not self.omega >= 0:
            raise ValueError(f"omega must be >= 0, got {self.omega}")
        if self.omega and self.skew is None:
            raise ValueError("omega is set but no skew operator was given")
        if self.drift_mode not in DRIFT_MODES:
            raise ValueError(f"drift_mode must be one of {DRIFT_MODES}, got {self.drift_mode!r}")
        if self.checkpoint_stride < 0:
            raise ValueError(f"checkpoint_stride must be >= 0, got {self.checkpoint_stride}")

    @property
    def solenoidal(self) -> Optional[Tuple[SkewOperator, float]]:
        if self.skew is None:
            return None
        return self.skew, self.omega


@dataclass
class Trajectory:
    final: Field
    iterations_run: int
    wall_time: float
    checkpoints: List[int] = field(default_factory=list)
    states: Optional[List[Field]] = None


# --- single steps -----------------------------------------------------------

def _check_step(eps: float) -> float:
    if not eps >= 0:
        raise ValueError(f"step size must be >= 0, got {eps}")
    return float(eps)


def _score(target: ScoreTarget, x: np.ndarray, iteration: Optional[int], sampler: Optional[str]):
    s = target.score(x)
    if not np.all(np.isfinite(s)):
        raise DivergenceError("score returned non-finite values", iteration, sampler)
    return s


def _draw(rng: Optional[np.random.Generator], noise, shape: Tuple[int, ...]) -> np.ndarray:
    if noise is not None:
        z = np.asarray(noise, dtype=np.float64)
        if z.shape != shape:
            raise ValueError(f"noise shape {z.shape} does not match state shape {shape}")
        return z
    if rng is None:
        raise ValueError("either rng or noise must be given")
    return rng.standard_normal(shape)


def _langevin(x: np.ndarray, s: np.ndarray, eps: float, z: np.ndarray) -> np.ndarray:
    return x + (eps**2 / 2) * s + eps * z


def _pds(
    x: np.ndarray,
    s: np.ndarray,
    eps: float,
    z: np.ndarray,
    p: Optional[Preconditioner],
    sol: Optional[Tuple[SkewOperator, float]],
    drift_mode: str,
) -> np.ndarray:
    noise = p.inverse(z) if p is not None else z
    rotation = None
    if sol is not None and sol[1] != 0:
        skew, omega = sol
        rotation = omega * skew(s)

    if drift_mode == "literal":
        # precondition the whole Langevin drift h(x) = x + (ε²/2)·score
        h = x + (eps**2 / 2) * s
        d = p.drift(h) if p is not None else h
        if rotation is not None:
            d = d + (eps**2 / 2) * rotation
        return d + eps * noise

    drift = p.drift(s) if p is not None else s
    if rotation is not None:
        drift = drift + rotation
    return _langevin(x, drift, eps, noise)


def vanilla_step(
    x: GridLike,
    target: ScoreTarget,
    eps: float,
    rng: Optional[np.random.Generator] = None,
    noise=None,
) -> GridLike:
    """x + (ε²/2)·score(x) + ε·z with z ~ N(0, I) (or the given noise)."""
    eps = _check_step(eps)
    values = np.asarray(as_array(x), dtype=np.float64)
    s = _score(target, values, None, None)
    z = _draw(rng, noise, values.shape)
    return like(x, _langevin(values, s, eps, z))


def pds_step(
    x: GridLike,
    target: ScoreTarget,
    eps: float,
    p: Optional[Preconditioner],
    sol: Optional[Tuple[SkewOperator, float]] = None,
    rng: Optional[np.random.Generator] = None,
    noise=None,
    drift_mode: str = "score",
) -> GridLike:
    """One preconditioned step: drift through M⁻¹M⁻ᵀ (+ ωS), noise through M⁻¹."""
    eps = _check_step(eps)
    if drift_mode not in DRIFT_MODES:
        raise ValueError(f"drift_mode must be one of {DRIFT_MODES}, got {drift_mode!r}")
    values = np.asarray(as_array(x), dtype=np.float64)
    s = _score(target, values, None, None)
    z = _draw(rng, noise, values.shape)
    return like(x, _pds(values, s, eps, z, p, sol, drift_mode))


# --- chains -----------------------------------------------------------------

def chain_generator(seed: int, chain: int) -> np.random.Generator:
    """Independent Philox stream for one chain, keyed by (seed, chain index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(chain),))))


def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is None:
        raw = os.environ.get(THREADS_ENV, "").strip()
        try:
            workers = int(raw) if raw else 0
        except ValueError:
            logger.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
            workers = 0
    if workers <= 0:
        workers = min(4, os.cpu_count() or 1)
    return workers


class _ChainBlock:
    """A contiguous block of chains evolved as one batched array."""

    def __init__(self, shape: GridShape, config: SamplerConfig, chains: Sequence[int], x0):
        self.config = config
        self.shape = shape
        self.rngs = [chain_generator(config.rng_seed, c) for c in chains]
        if x0 is None:
            self.x = np.stack([rng.standard_normal(shape.as_tuple()) for rng in self.rngs])
        else:
            self.x = np.array(x0, dtype=np.float64, copy=True)

    def advance(self, target: ScoreTarget, eps: float, iteration: int, last: bool) -> None:
        config = self.config
        z = np.stack([rng.standard_normal(self.shape.as_tuple()) for rng in self.rngs])
        if last and config.denoise_final:
            z = np.zeros_like(z)
        s = _score(target, self.x, iteration, config.name)
        self.x = _pds(self.x, s, eps, z, config.preconditioner, config.solenoidal, config.drift_mode)
        peak = float(np.max(np.abs(self.x))) if self.x.size else 0.0
        if not np.isfinite(peak) or peak > DIVERGENCE_LIMIT:
            raise DivergenceError(f"sup-norm {peak:.3e} exceeds {DIVERGENCE_LIMIT:.0e}", iteration, config.name)


def _initial_states(x0, chains: int, shape: GridShape) -> Optional[np.ndarray]:
    if x0 is None:
        return None
    values = np.asarray(as_array(x0), dtype=np.float64)
    if values.shape == shape.as_tuple():
        return np.broadcast_to(values, (chains,) + shape.as_tuple())
    if values.shape != (chains,) + shape.as_tuple():
        raise ValueError(f"x0 shape {values.shape} fits neither one grid nor {chains} chains of {shape}")
    return values


def _checkpoint(iteration: int, total: int, stride: int) -> bool:
    if iteration == total:
        return True
    return stride > 0 and iteration % stride == 0


def run_batch(
    target: ScoreTarget,
    config: SamplerConfig,
    chains: int,
    x0=None,
    observer: Optional[Observer] = None,
    workers: Optional[int] = None,
) -> List[Trajectory]:
    """Run independent chains and return their trajectories in chain order.

    ``observer(iteration, states)`` sees the whole population at every
    checkpoint (multiples of ``checkpoint_stride`` and the last iteration);
    returning True stops every chain at that iteration.
    """
    if chains < 1:
        raise ValueError(f"chains must be >= 1, got {chains}")
    if config.preconditioner is not None and config.preconditioner.shape != target.shape:
        raise ValueError(f"preconditioner shape {config.preconditioner.shape} does not match target {target.shape}")

    shape = target.shape
    start = _initial_states(x0, chains, shape)
    ids = np.arange(chains)
    blocks = [
        _ChainBlock(shape, config, ids[i : i + CHAIN_BLOCK], None if start is None else start[i : i + CHAIN_BLOCK])
        for i in range(0, chains, CHAIN_BLOCK)
    ]
    workers = min(resolve_workers(workers), len(blocks))
    plan = config.schedule.plan()
    total = len(plan)
    stride = config.checkpoint_stride
    levels: Dict[Optional[float], ScoreTarget] = {}
    checkpoints: List[int] = []
    snapshots: List[np.ndarray] = []
    iterations_run = total

    logger.debug(
        "%s: %d chains in %d blocks on %d worker(s), %d iterations",
        config.name, chains, len(blocks), workers, total,
    )
    began = time.perf_counter()
    executor = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="pds-chain") if workers > 1 else None
    try:
        for t, (eps, sigma) in enumerate(plan, start=1):
            if sigma not in levels:
                levels[sigma] = target if sigma is None else target.perturbed(sigma)
            level = levels[sigma]
            last = t == total
            if executor is None:
                for block in blocks:
                    block.advance(level, eps, t, last)
            else:
                futures = [executor.submit(block.advance, level, eps, t, last) for block in blocks]
                for future in futures:
                    future.result()

            if _checkpoint(t, total, stride):
                states = np.concatenate([block.x for block in blocks])
                checkpoints.append(t)
                if config.keep_states:
                    snapshots.append(states.copy())
                logger.debug("%s: checkpoint %d/%d", config.name, t, total)
                if observer is not None and observer(t, states):
                    logger.info("%s: stopped by observer at iteration %d", config.name, t)
                    iterations_run = t
                    break
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
    elapsed = time.perf_counter() - began

    finals = np.concatenate([block.x for block in blocks])
    trajectories = []
    for i in range(chains):
        states = [Field(snap[i]) for snap in snapshots] if config.keep_states else None
        trajectories.append(
            Trajectory(
                final=Field(finals[i]),
                iterations_run=iterations_run,
                wall_time=elapsed,
                checkpoints=list(checkpoints),
                states=states,
            )
        )
    return trajectories


def run(
    target: ScoreTarget,
    config: SamplerConfig,
    x0: Optional[GridLike] = None,
    observer: Optional[Observer] = None,
) -> Trajectory:
    """Run a single chain (chain index 0 of the master seed)."""
    return run_batch(target, config, 1, x0=x0, observer=observer, workers=1)[0]


def finals_array(trajectories: Sequence[Trajectory]) -> np.ndarray:
    return np.stack([as_array(t.final) for t in trajectories])


def stable_step_size(
    target: ScoreTarget,
    preconditioner: Optional[Preconditioner] = None,
    fraction: float = 0.5,
) -> float:
    """ε with ε² = fraction·4/λ_max, λ_max the top eigenvalue of M⁻¹M⁻ᵀΣ⁻¹.

    Every linear mode contracts by |1 - ε²λ/2| per step, so fraction < 1
    keeps the linearized chain stable (solenoidal terms not included).
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    p = preconditioner
    if isinstance(target, GrfTarget) and (p is None or p.uniform_space):
        gain = p.r_inverse_squared if p is not None else 1.0
        lam_max = float(np.max(gain / target.power_unshifted))
    elif isinstance(target, GaussianTarget):
        jacobian = target.precision
        if p is not None and not p.is_identity:
            jacobian = operator_matrix(p.drift, target.shape) @ target.precision
        lam_max = float(np.max(np.real(np.linalg.eigvals(jacobian))))
    else:
        raise ValueError(f"no closed-form curvature for {type(target).__name__}")
    eps = float(np.sqrt(fraction * 4.0 / lam_max))
    logger.info("stable step: lambda_max=%.4g, fraction=%g -> eps=%.4g", lam_max, fraction, eps)
    return eps
