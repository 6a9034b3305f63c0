import numpy as np
import pytest

from ringex.engines import DynamicsSpec
from ringex.ensemble import (
    IC_TAG,
    Observer,
    realization_streams,
    run_ensemble,
    validate_grid,
)
from ringex.observables import diagonal_fourier
from ringex.prep import (
    make_perfect_stripe,
    random_sector_config,
    stripe_walker_counts,
)
from ringex.rng import composite_index

GRID = [0, 2, 8, 16]
SCA = DynamicsSpec(engine="hardcore_sca", rng_seed=7)


def _occ_mean(state):
    return float(state.mean())


def _row_sums(state):
    return state.sum(axis=1).astype(float)


def _amp(state):
    return diagonal_fourier(state, 0.25)


def _walker_total(state):
    return float(state.counts.sum())


def _random_ic(gen):
    return random_sector_config(16, gen)


def _self_overlap_factory(state):
    ref = 2.0 * state.astype(float) - 1.0

    def fn(s):
        return float(np.mean(ref * (2.0 * s.astype(float) - 1.0)))

    return fn


class _Poison:
    """Behaves like _occ_mean until ``limit`` evaluations, then explodes."""

    def __init__(self, limit):
        self.calls = 0
        self.limit = limit

    def __call__(self, state):
        self.calls += 1
        if self.calls > self.limit:
            raise RuntimeError("boom")
        return _occ_mean(state)


# ---------------------------------------------------------------------------


def test_frozen_initial_and_exact_repeat():
    init = make_perfect_stripe(12, [3, 3, 3, 3])
    obs = [Observer("density", _occ_mean)]
    a = run_ensemble(init, SCA, GRID, obs, 3)
    b = run_ensemble(init, SCA, GRID, obs, 3)
    assert np.array_equal(a.mean["density"], b.mean["density"])
    assert np.all(a.mean["density"] == 0.5)  # stripe is frozen
    assert np.all(a.stderr["density"] == 0.0)
    assert a.n_realizations == 3


def test_random_ics_and_observer_kinds():
    obs = [
        Observer("self", _self_overlap_factory, factory=True, keep_raw=True),
        Observer("amp", _amp, kind="complex", keep_raw=True),
        Observer("rows", _row_sums, kind="array"),
    ]
    ts = run_ensemble(_random_ic, SCA, GRID, obs, 4)
    T = len(GRID)
    assert ts.raw["self"].shape == (4, T)
    assert np.all(ts.raw["self"][:, 0] == 1.0)  # factory binds each IC
    assert ts.mean["amp"].dtype.kind == "c"
    assert ts.raw["amp"].shape == (4, T)
    # distinct realizations: their dynamics streams decouple
    assert len({complex(v) for v in ts.raw["amp"][:, -1]}) > 1
    assert ts.mean["rows"].shape == (T, 16)
    assert np.all(ts.mean["rows"] == 8.0)  # conserved sums, every time


def test_shared_ic_stream_pairs():
    obs = [
        Observer("self", _self_overlap_factory, factory=True, keep_raw=True),
        Observer("amp", _amp, kind="complex", keep_raw=True),
    ]
    ts = run_ensemble(
        _random_ic, SCA, GRID, obs, 2, stream_pairs=[(0, 0), (0, 1)]
    )
    # same ic_index: both realizations start from the identical configuration
    assert ts.raw["amp"][0, 0] == ts.raw["amp"][1, 0]
    # different dyn_index: they decorrelate afterwards
    assert ts.raw["amp"][0, -1] != ts.raw["amp"][1, -1]


def test_parallel_matches_serial_exactly():
    obs = [
        Observer("density", _occ_mean),
        Observer("amp", _amp, kind="complex"),
        Observer("rows", _row_sums, kind="array"),
    ]
    serial = run_ensemble(_random_ic, SCA, GRID, obs, 4, n_workers=1)
    par = run_ensemble(_random_ic, SCA, GRID, obs, 4, n_workers=2)
    for name in ("density", "amp", "rows"):
        assert np.array_equal(serial.mean[name], par.mean[name])
    for name in ("density", "amp"):  # array reductions carry no stderr
        assert np.array_equal(serial.stderr[name], par.stderr[name])
    assert serial.metadata["reduction"] == "fixed-order"


def test_partial_flush_and_checkpoint_resume(tmp_path):
    T = len(GRID)
    captured = {}

    def flusher(ts, exc):
        captured["ts"] = ts
        captured["exc"] = exc

    ck = str(tmp_path / "ck")
    poison = [Observer("probe", _Poison(limit=2 * T))]
    with pytest.raises(RuntimeError, match="boom"):
        run_ensemble(
            _random_ic,
            SCA,
            GRID,
            poison,
            4,
            checkpoint_dir=ck,
            checkpoint_interval=0.0,
            flush_fn=flusher,
        )
    assert isinstance(captured["exc"], RuntimeError)
    assert captured["ts"].n_realizations == 2  # two clean realizations kept
    assert np.all(np.isfinite(captured["ts"].mean["probe"]))

    # resume from the realization boundary with a healthy observer
    clean = [Observer("probe", _occ_mean)]
    resumed = run_ensemble(
        _random_ic, SCA, GRID, clean, 4, checkpoint_dir=ck, checkpoint_interval=0.0
    )
    fresh = run_ensemble(_random_ic, SCA, GRID, clean, 4)
    assert np.array_equal(resumed.mean["probe"], fresh.mean["probe"])
    assert np.array_equal(resumed.stderr["probe"], fresh.stderr["probe"])
    # the checkpoint is cleaned up once the run completes
    assert not (tmp_path / "ck" / "ensemble_checkpoint.npz").exists()


def test_checkpoint_seed_mismatch(tmp_path):
    ck = str(tmp_path / "ck")
    poison = [Observer("probe", _Poison(limit=2 * len(GRID)))]
    with pytest.raises(RuntimeError):
        run_ensemble(
            _random_ic, SCA, GRID, poison, 4,
            checkpoint_dir=ck, checkpoint_interval=0.0,
        )
    clean = [Observer("probe", _occ_mean)]
    with pytest.raises(ValueError, match="checkpoint"):
        run_ensemble(
            _random_ic, SCA, GRID, clean, 4, seed=99,
            checkpoint_dir=ck, checkpoint_interval=0.0,
        )


def test_walker_ensemble_metadata():
    counts = stripe_walker_counts(16, 4, 3)
    spec = DynamicsSpec(engine="walkers", rng_seed=3)
    ts = run_ensemble(counts, spec, [0, 1, 4], [Observer("total", _walker_total)], 2)
    assert ts.metadata["engine"] == "walkers"
    assert ts.metadata["abandoned_moves"] >= 0
    assert np.all(ts.mean["total"] == counts.sum())  # walkers are conserved


def test_sca_metadata_flip_fraction():
    ts = run_ensemble(
        _random_ic, SCA, [0, 4], [Observer("density", _occ_mean)], 2
    )
    assert 0.0 < ts.metadata["flip_fraction"] < 1.0
    assert ts.metadata["elapsed_s"] >= 0.0
    assert ts.metadata["seed"] == 7


def test_series_rows_flatten():
    obs = [Observer("amp", _amp, kind="complex"), Observer("density", _occ_mean)]
    ts = run_ensemble(_random_ic, SCA, [0, 2], obs, 2)
    rows = list(ts.rows())
    names = {r[1] for r in rows}
    assert names == {"amp_re", "amp_im", "density"}
    assert all(r[4] == 2 for r in rows)


def test_validation_errors():
    with pytest.raises(ValueError):
        validate_grid([2, 1], discrete=True)
    with pytest.raises(ValueError):
        validate_grid([-1, 0], discrete=True)
    with pytest.raises(ValueError):
        validate_grid([0, 1.5], discrete=True)
    validate_grid([0.0, 1.5], discrete=False)
    with pytest.raises(ValueError):
        validate_grid([], discrete=True)
    with pytest.raises(ValueError):  # duplicate observer names
        run_ensemble(
            _random_ic, SCA, [0, 1],
            [Observer("x", _occ_mean), Observer("x", _occ_mean)], 1,
        )
    with pytest.raises(ValueError):  # stream_pairs length
        run_ensemble(
            _random_ic, SCA, [0, 1], [Observer("x", _occ_mean)], 2,
            stream_pairs=[(0, 0)],
        )


def test_realization_streams_layout():
    ic_a, dyn_a = realization_streams(5, 2, 0)
    ic_b, dyn_b = realization_streams(5, 2, 3)
    # shared IC stream regenerates identically across dynamics sub-ensembles
    assert np.array_equal(ic_a.random(8), ic_b.random(8))
    assert not np.array_equal(dyn_a.random(8), dyn_b.random(8))
    # the IC tag is reserved; plain dynamics indices stay below it
    assert composite_index(2, IC_TAG) != composite_index(2, 0)
    with pytest.raises(ValueError):
        composite_index(2, IC_TAG + 1)
