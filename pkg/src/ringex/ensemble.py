"""Ensemble driver: independent realizations sharing one time grid.

Each realization owns two Philox streams derived from the run seed (see
:mod:`.rng`): one for building its initial condition, one for the dynamics.
Realizations are embarrassingly parallel; observers are pure functions of the
engine state evaluated at grid times, reduced to mean and standard error.
Reduction happens in realization-index order regardless of worker count, so
repeated runs are bit-identical (the "fixed order" contract).

Observed values may be real scalars, complex scalars, or arrays.  Scalar
kinds keep the full (realization, time) table so post-hoc ensemble-first
reductions (e.g. complex amplitude ratios) remain possible; array kinds
accumulate a running sum, with an opt-in to keep per-realization values.
"""

from __future__ import annotations

import json
import os
import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .engines import (
    DynamicsSpec,
    WalkerState,
    field_run,
    sca_run,
    walker_run,
    walkers_init,
    walkers_restore,
)

# stream index reserved for initial-condition construction; dynamics streams
# use dyn indices below this, so the two never collide
IC_TAG = (1 << 20) - 1


@dataclass
class Observer:
    """Named reduction evaluated on the engine state at every grid time.

    kind: "scalar" (real), "complex", or "array".  Array observers are
    averaged element-wise; set ``keep_raw`` to also keep every realization's
    value (memory scales with R × grid size × value size).  With ``factory``
    set, ``fn`` is called once on the realization's initial state and must
    return the actual observer — for observables referencing the trajectory's
    own starting configuration (overlaps, amplitude ratios).
    """

    name: str
    fn: object
    kind: str = "scalar"
    keep_raw: bool = False
    factory: bool = False


@dataclass
class TimeSeries:
    times: np.ndarray
    mean: dict
    stderr: dict
    n_realizations: int
    metadata: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def rows(self):
        """Flat (time, observable, mean, stderr, n) rows; complex split re/im."""
        out = []
        for name in sorted(self.mean):
            m = self.mean[name]
            if m.ndim != 1:
                continue  # array observables go to their own files
            se = self.stderr.get(name)
            for ti, t in enumerate(self.times):
                if np.iscomplexobj(m):
                    err = float(se[ti]) if se is not None else float("nan")
                    out.append((t, name + "_re", float(m[ti].real), err))
                    out.append((t, name + "_im", float(m[ti].imag), err))
                else:
                    err = float(se[ti]) if se is not None else float("nan")
                    out.append((t, name, float(m[ti]), err))
        return [(t, n, m, e, self.n_realizations) for (t, n, m, e) in out]


def validate_grid(time_grid, discrete):
    grid = np.asarray(time_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("time grid must be a non-empty 1-d sequence")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("time grid must be strictly increasing")
    if grid[0] < 0:
        raise ValueError("time grid must be non-negative")
    if discrete and not np.all(grid == np.round(grid)):
        raise ValueError("discrete engines need integer grid times")
    return grid


def realization_streams(seed, ic_index, dyn_index=0):
    """(initial-condition generator, dynamics generator) for one realization.

    The IC stream depends only on ``ic_index``, so sub-ensembles of dynamics
    runs over a shared initial condition regenerate it bit-exactly.
    """
    ic_gen = _rng.stream(seed, _rng.composite_index(ic_index, IC_TAG))
    dyn_gen = _rng.stream(seed, _rng.composite_index(ic_index, dyn_index))
    return ic_gen, dyn_gen


# ---------------------------------------------------------------------------
# engine adapters


def _make_state(initial, spec, ic_gen):
    init = initial(ic_gen) if callable(initial) else initial
    if spec.engine == "walkers":
        if isinstance(init, WalkerState):
            return init
        return walkers_init(init)
    if spec.engine == "field_automaton":
        return np.array(init, dtype=np.float64, copy=True)
    return np.array(init, dtype=np.uint8, copy=True)


def _advance(state, n, gen, spec, tally):
    if n <= 0:
        return state
    if spec.engine == "hardcore_sca":
        tally["flips"] += sca_run(state, int(n), gen, spec)
        tally["proposals"] += int(n) * state.shape[0] ** 2
        return state
    if spec.engine == "walkers":
        walker_run(state, int(n), gen)
        return state
    if spec.engine == "field_automaton":
        return field_run(state, int(n), spec.epsilon)
    raise ValueError(f"unknown engine {spec.engine!r}")


def observe_view(state, spec):
    """What observers see: occupancy, the walker state, or the real field."""
    return state


# ---------------------------------------------------------------------------
# accumulation


class _Acc:
    def __init__(self, observers, R, T):
        self.observers = observers
        self.R, self.T = R, T
        self.scalar = {}
        self.arr_sum = {}
        self.arr_raw = {}
        for ob in observers:
            if ob.kind in ("scalar", "complex"):
                dt = np.complex128 if ob.kind == "complex" else np.float64
                self.scalar[ob.name] = np.full((R, T), np.nan, dtype=dt)
        self.done = np.zeros(R, dtype=bool)

    def record(self, ob, r, ti, value):
        if ob.kind in ("scalar", "complex"):
            self.scalar[ob.name][r, ti] = value
            return
        value = np.asarray(value)
        if ob.name not in self.arr_sum:
            self.arr_sum[ob.name] = np.zeros((self.T,) + value.shape, np.float64)
            if ob.keep_raw:
                self.arr_raw[ob.name] = np.zeros(
                    (self.R, self.T) + value.shape, dtype=value.dtype
                )
        self.arr_sum[ob.name][ti] += value
        if ob.keep_raw:
            self.arr_raw[ob.name][r, ti] = value

    def merge_realization(self, r, payload):
        """Fold one realization's worker payload in, keeping index order."""
        for name, row in payload["scalar"].items():
            self.scalar[name][r] = row
        for ob in self.observers:
            if ob.kind == "array" and ob.name in payload["array"]:
                for ti in range(self.T):
                    self.record(ob, r, ti, payload["array"][ob.name][ti])
        self.done[r] = True

    def reduce(self, times, metadata):
        n = int(self.done.sum())
        mean, stderr, raw = {}, {}, {}
        for name, vals in self.scalar.items():
            v = vals[self.done]
            mean[name] = v.mean(axis=0) if n else np.full(self.T, np.nan, v.dtype)
            if n > 1:
                stderr[name] = np.asarray(v.std(axis=0, ddof=1) / np.sqrt(n))
            else:
                stderr[name] = np.full(self.T, np.nan)
            raw[name] = v
        for name, s in self.arr_sum.items():
            mean[name] = s / max(n, 1)
            if name in self.arr_raw:
                raw[name] = self.arr_raw[name][self.done]
        return TimeSeries(
            times=times,
            mean=mean,
            stderr=stderr,
            n_realizations=n,
            metadata=metadata,
            raw=raw,
        )


def _run_one(initial, spec, grid, observers, seed, ic_index, dyn_index):
    """One full realization; returns a picklable payload of observed values."""
    ic_gen, dyn_gen = realization_streams(seed, ic_index, dyn_index)
    state = _make_state(initial, spec, ic_gen)
    tally = {"flips": 0, "proposals": 0}
    T = len(grid)
    scalar = {
        ob.name: np.empty(
            T, np.complex128 if ob.kind == "complex" else np.float64
        )
        for ob in observers
        if ob.kind in ("scalar", "complex")
    }
    array = {ob.name: [None] * T for ob in observers if ob.kind == "array"}
    bound = {
        ob.name: ob.fn(observe_view(state, spec)) if ob.factory else ob.fn
        for ob in observers
    }
    t_prev = 0.0
    for ti, t in enumerate(grid):
        state = _advance(state, t - t_prev, dyn_gen, spec, tally)
        t_prev = t
        view = observe_view(state, spec)
        for ob in observers:
            val = bound[ob.name](view)
            if ob.kind == "array":
                array[ob.name][ti] = np.asarray(val)
            else:
                scalar[ob.name][ti] = val
    abandoned = state.abandoned if isinstance(state, WalkerState) else 0
    return {
        "scalar": scalar,
        "array": array,
        "tally": tally,
        "abandoned": abandoned,
    }


def _worker_entry(args):
    return args[0], _run_one(*args[1:])


def run_ensemble(
    initial,
    spec: DynamicsSpec,
    time_grid,
    observers,
    n_realizations,
    seed=None,
    stream_pairs=None,
    n_workers=None,
    checkpoint_dir=None,
    checkpoint_interval=300.0,
    flush_fn=None,
):
    """Run ``n_realizations`` trajectories and reduce observers over them.

    ``initial`` is a configuration array (shared start) or a callable taking
    the realization's IC generator (random starts).  ``stream_pairs``
    overrides the default flat layout [(r, 0)] with explicit
    (ic_index, dyn_index) pairs — used for sub-ensembles of dynamics runs
    over shared initial conditions.  ``seed`` defaults to ``spec.rng_seed``.

    With ``checkpoint_dir`` set, completed realizations are flushed there at
    most every ``checkpoint_interval`` seconds and an interrupted run resumes
    at the last realization boundary, bit-exactly (each realization depends
    only on its own streams).  On an engine error the partial reduction is
    handed to ``flush_fn(partial_ts, exc)`` before the exception propagates.
    """
    seed = spec.rng_seed if seed is None else seed
    observers = list(observers)
    names = [ob.name for ob in observers]
    if len(set(names)) != len(names):
        raise ValueError("observer names must be unique")
    grid = validate_grid(time_grid, discrete=True)
    R = int(n_realizations)
    if stream_pairs is None:
        stream_pairs = [(r, 0) for r in range(R)]
    if len(stream_pairs) != R:
        raise ValueError("stream_pairs length must equal n_realizations")
    if n_workers is None:
        n_workers = int(os.environ.get("RINGEX_WORKERS", "1"))
    acc = _Acc(observers, R, len(grid))
    tally = {"flips": 0, "proposals": 0, "abandoned": 0}

    r_start = 0
    ck_file = None
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
        ck_file = os.path.join(checkpoint_dir, "ensemble_checkpoint.npz")
        r_start = _load_checkpoint(ck_file, acc, tally, seed, grid)
    last_flush = _time.monotonic()

    t0 = _time.monotonic()
    try:
        if n_workers > 1:
            from concurrent.futures import ProcessPoolExecutor

            jobs = [
                (r, initial, spec, grid, observers, seed, *stream_pairs[r])
                for r in range(r_start, R)
            ]
            with ProcessPoolExecutor(max_workers=n_workers) as pool:
                results = dict(pool.map(_worker_entry, jobs))
            for r in range(r_start, R):
                payload = results[r]
                acc.merge_realization(r, payload)
                _fold_tally(tally, payload)
        else:
            for r in range(r_start, R):
                payload = _run_one(
                    initial, spec, grid, observers, seed, *stream_pairs[r]
                )
                acc.merge_realization(r, payload)
                _fold_tally(tally, payload)
                if ck_file and _time.monotonic() - last_flush > checkpoint_interval:
                    _save_checkpoint(ck_file, acc, tally, seed, grid, r + 1)
                    last_flush = _time.monotonic()
    except Exception as exc:
        if flush_fn is not None:
            flush_fn(acc.reduce(grid, _metadata(spec, seed, tally, t0)), exc)
        raise
    if ck_file and os.path.exists(ck_file):
        os.remove(ck_file)
    return acc.reduce(grid, _metadata(spec, seed, tally, t0))


def _fold_tally(tally, payload):
    tally["flips"] += payload["tally"]["flips"]
    tally["proposals"] += payload["tally"]["proposals"]
    tally["abandoned"] += payload["abandoned"]


def _metadata(spec, seed, tally, t0):
    md = {
        "engine": spec.engine,
        "seed": int(seed),
        "elapsed_s": _time.monotonic() - t0,
        "reduction": "fixed-order",
    }
    if tally["proposals"]:
        md["flip_fraction"] = tally["flips"] / tally["proposals"]
    if tally["abandoned"]:
        md["abandoned_moves"] = int(tally["abandoned"])
    return md


def _save_checkpoint(path, acc, tally, seed, grid, next_r):
    payload = {
        "next_r": np.int64(next_r),
        "done": acc.done,
        "seed": np.int64(seed),
        "grid": grid,
        "tally": np.array(
            [tally["flips"], tally["proposals"], tally["abandoned"]], np.int64
        ),
    }
    for name, v in acc.scalar.items():
        payload["scalar_" + name] = v
    for name, v in acc.arr_sum.items():
        payload["arrsum_" + name] = v
    for name, v in acc.arr_raw.items():
        payload["arrraw_" + name] = v
    tmp = path + ".tmp.npz"
    np.savez_compressed(tmp, **payload)
    os.replace(tmp, path)


def _load_checkpoint(path, acc, tally, seed, grid):
    if not os.path.exists(path):
        return 0
    with np.load(path) as z:
        if int(z["seed"]) != int(seed) or not np.array_equal(z["grid"], grid):
            raise ValueError("checkpoint does not match this run's seed/grid")
        acc.done[:] = z["done"]
        tally["flips"], tally["proposals"], tally["abandoned"] = (
            int(v) for v in z["tally"]
        )
        for name in acc.scalar:
            acc.scalar[name][:] = z["scalar_" + name]
        for key in z.files:
            if key.startswith("arrsum_"):
                acc.arr_sum[key[7:]] = z[key]
            elif key.startswith("arrraw_"):
                acc.arr_raw[key[7:]] = z[key]
        return int(z["next_r"])
