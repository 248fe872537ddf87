"""
Seeded per-index RNG streams and the chunked worker pool behind every ensemble run.

Each trajectory (or unraveled sample) owns the stream
SeedSequence(seed, spawn_key=key). Work is split into fixed-size chunks that
do not depend on the thread count, and results are written into preallocated
arrays by chunk offset, so output is identical for any number of workers.
"""

import concurrent.futures
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .state import QubitState, SimParams, steps_for
from .trajectory import draw_step_noise, propagate_batch

DEFAULT_CHUNK_SIZE = 4096


def stream_for(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the given (seed, index...) key."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def chunk_ranges(total: int, chunk_size: int = DEFAULT_CHUNK_SIZE) -> List[Tuple[int, int]]:
    """Half-open [start, stop) index ranges covering 0..total."""
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1 (got {chunk_size})")
    return [(start, min(start + chunk_size, total)) for start in range(0, total, chunk_size)]


def run_chunked(
    work: Callable[[int, int], None],
    total: int,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    desc: str = "trajectories",
    quiet: bool = False,
):
    """
    Call work(start, stop) for every chunk, on a thread pool when threads > 1.

    `work` must write its results into caller-owned buffers at [start, stop);
    the progress bar advances by the chunk length as chunks finish.
    """
    ranges = chunk_ranges(total, chunk_size)
    with tqdm(total=total, desc=desc, unit="traj", disable=quiet, leave=False) as bar:
        if threads <= 1 or len(ranges) <= 1:
            for start, stop in ranges:
                work(start, stop)
                bar.update(stop - start)
            return
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(work, start, stop): (start, stop) for start, stop in ranges}
            for fut in concurrent.futures.as_completed(futures):
                fut.result()
                start, stop = futures[fut]
                bar.update(stop - start)


@dataclass
class EnsembleResult:
    """
    Q values of an ensemble at each duration checkpoint.

    q[i, j] is the exact Q of trajectory i after checkpoint_steps[j] steps;
    q_continuous holds the continuous-limit (midpoint) statistic.
    """

    q: np.ndarray
    q_continuous: np.ndarray
    checkpoint_steps: Sequence[int]
    final_states: np.ndarray

    @property
    def n_traj(self) -> int:
        return int(self.q.shape[0])


def checkpoint_steps_for(durations: Sequence[float], dt: float) -> List[int]:
    return [steps_for(d, dt) for d in durations]


def simulate_ensemble(
    params: SimParams,
    initial: QubitState,
    n_traj: int,
    checkpoint_steps: Optional[Sequence[int]] = None,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    dephase_extra: float = 0.0,
    quiet: bool = True,
) -> EnsembleResult:
    """
    Run n_traj independent trajectories to the largest checkpoint in one pass.

    Trajectory i draws its noise from stream_for(params.seed, i) exactly as
    generate_trajectory would, so any trajectory of the ensemble can be
    regenerated on its own.
    """
    if n_traj < 1:
        raise ValueError(f"n_traj must be >= 1 (got {n_traj})")
    if checkpoint_steps is None:
        checkpoint_steps = [params.n_steps]
    checkpoint_steps = [int(c) for c in checkpoint_steps]
    n_steps = max(checkpoint_steps) if checkpoint_steps else 0
    eps = params.dt * params.measurement_rate
    initial_row = initial.as_array()

    q = np.zeros((n_traj, len(checkpoint_steps)))
    q_cont = np.zeros_like(q)
    finals = np.empty((n_traj, 3))

    def work(start: int, stop: int):
        size = stop - start
        uniforms = np.empty((size, n_steps))
        normals = np.empty((size, n_steps))
        for row, index in enumerate(range(start, stop)):
            uniforms[row], normals[row] = draw_step_noise(stream_for(params.seed, index), n_steps)
        batch = propagate_batch(
            np.repeat(initial_row[None, :], size, axis=0), n_steps, eps, params.rabi_angle, params.dt,
            dephase_rate=dephase_extra, uniforms=uniforms, normals=normals,
            keep_history=False, checkpoints=checkpoint_steps,
        )
        q[start:stop] = batch.q_at
        q_cont[start:stop] = batch.q_continuous_at
        finals[start:stop] = batch.final

    run_chunked(work, n_traj, threads=threads, chunk_size=chunk_size, quiet=quiet)
    return EnsembleResult(q=q, q_continuous=q_cont, checkpoint_steps=checkpoint_steps, final_states=finals)
