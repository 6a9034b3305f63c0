"""Command-line entry point.

Subcommands: ``run`` (declarative spec file -> run directory), ``verify``
(tiered self-checks), plus direct drivers ``anneal``, ``enumerate``, ``ed``,
``pde`` and the post-hoc ``analyze`` (melt onsets and power-law fits from
existing run directories).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, ensemble as ens, observables as obs, prep, runio
from . import fragment as frag
from . import pde as pdemod
from .engines import DynamicsSpec, field_run, field_step
from .lattice import load_config, save_config, sigma
from .rng import stream


# ---------------------------------------------------------------------------
# initial conditions


class InitBuilder:
    """Picklable initial-condition factory for ensemble runs.

    Expensive kinds (annealed waves) are memoized per IC stream so dynamics
    sub-ensembles sharing an initial condition build it once per process.
    """

    def __init__(self, kind, **params):
        self.kind = kind
        self.params = params
        self._cache = {}

    def __getstate__(self):
        return {"kind": self.kind, "params": self.params}

    def __setstate__(self, state):
        self.kind = state["kind"]
        self.params = state["params"]
        self._cache = {}

    def __call__(self, gen):
        p = self.params
        if self.kind == "perturbed_stripe":
            base = prep.make_perfect_stripe(p["L"], p["widths"])
            return prep.perturb_stripe(base, p.get("n_swaps", 1), gen)
        if self.kind == "stripe":
            return prep.make_perfect_stripe(p["L"], p["widths"])
        if self.kind == "square_wave":
            return prep.make_square_wave(p["W"], p.get("n_periods", 1))
        if self.kind == "checkerboard":
            L = p["L"]
            xx, yy = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
            return ((xx + yy) % 2 == 0).astype(np.uint8)
        if self.kind == "random_sector":
            return prep.random_sector_config(p["L"], gen)
        if self.kind == "random_half_filled":
            return prep.random_half_filled_config(p["L"], gen)
        if self.kind == "annealed_wave":
            key = tuple(int(v) for v in gen.bit_generator.state["state"]["key"])
            if key not in self._cache:
                target = prep.WaveTarget(k=p["k"], A=p.get("A", 1.0))
                occ, _info = prep.anneal_density_wave(p["L"], target, gen)
                self._cache[key] = occ
            return self._cache[key].copy()
        if self.kind == "stripe_counts":
            return prep.stripe_walker_counts(p["L"], p["width"], p.get("n_d", 3))
        if self.kind == "stripe_field":
            return prep.stripe_field(p["L"], p["width"], p.get("A", 1.0))
        if self.kind == "file":
            return load_config(p["path"])
        raise ValueError(f"unknown init kind {self.kind!r}")


# observer helpers (module-level so worker processes can pickle them)


def _self_overlap_factory(occ0):
    ref = occ0.copy()
    return lambda occ: frag.overlap(occ, ref)


class AmpObserver:
    """Diagonal Fourier amplitude at fixed k (picklable for worker pools)."""

    def __init__(self, k):
        self.k = k

    def __call__(self, occ):
        return obs.diagonal_fourier(occ, self.k)


class WalkerAmpObserver:
    def __init__(self, k):
        self.k = k

    def __call__(self, state):
        field = state.counts - state.counts.mean()
        return obs.field_diagonal_fourier(field, self.k)


class FieldAmpObserver:
    def __init__(self, k):
        self.k = k

    def __call__(self, g):
        return obs.field_diagonal_fourier(g, self.k)


def _sigma_snapshot(occ):
    return sigma(occ).astype(np.int8)


def _mask_snapshot(occ):
    from .lattice import flippable_mask

    return flippable_mask(occ).astype(np.uint8)


def _build_observers(names, params):
    out = []
    for name in names:
        if name == "overlap":
            out.append(ens.Observer("overlap", _self_overlap_factory, factory=True))
        elif name == "fourier_ratio":
            k = params["k_obs"]
            out.append(ens.Observer("nk", AmpObserver(k), kind="complex"))
        elif name == "flip_density":
            out.append(ens.Observer("flip_density", obs.flippable_density))
        elif name == "sigma_mean":
            out.append(ens.Observer("sigma_mean", _sigma_snapshot, kind="array"))
        elif name == "sigma_raw":
            out.append(
                ens.Observer("sigma_raw", _sigma_snapshot, kind="array", keep_raw=True)
            )
        elif name == "masks":
            out.append(
                ens.Observer("masks", _mask_snapshot, kind="array", keep_raw=True)
            )
        else:
            raise ValueError(f"unknown observer {name!r}")
    return out


def _derive_ratio(ts, name="nk", out_name="fourier_ratio"):
    """Append Re(<n_k(t)>/<n_k(0)>) to a reduced series (ensemble-mean first)."""
    if name not in ts.mean:
        return ts
    amps = ts.mean[name]
    ts.mean[out_name] = np.real(amps / amps[0])
    if name in ts.stderr:
        ts.stderr[out_name] = ts.stderr[name] / abs(amps[0])
    return ts


# ---------------------------------------------------------------------------
# experiment dispatch for `run`


def _dispatch_run(spec: runio.RunSpec, n_workers):
    p = dict(spec.parameters)
    exp = spec.experiment
    run_dir = spec.output_dir
    if exp in ("sca", "walkers", "field"):
        return _run_dynamics(spec, p, n_workers)
    if exp == "pde":
        return _run_pde(spec, p)
    if exp == "anneal":
        return _run_anneal(spec, p)
    if exp == "fragment":
        return _run_fragment(spec, p)
    if exp == "ed":
        return _run_ed(spec, p)
    if exp == "correlator":
        return _run_correlator(spec, p, n_workers)
    if exp == "structure_factor":
        return _run_structure_factor(spec, p, n_workers)
    raise ValueError(f"experiment {exp!r} not wired up")


def _dyn_spec(spec, p, engine):
    return DynamicsSpec(
        engine=engine,
        plaquette_shapes=tuple(p.get("shapes", ("1x1",))),
        accept_prob=p.get("accept_prob", 0.5),
        epsilon=p.get("epsilon", 0.05),
        n_d=p.get("n_d", 3),
        rng_seed=spec.rng_seed,
    )


def _run_dynamics(spec, p, n_workers):
    engine = {"sca": "hardcore_sca", "walkers": "walkers", "field": "field_automaton"}[
        spec.experiment
    ]
    dyn = _dyn_spec(spec, p, engine)
    init = InitBuilder(p["init"]["kind"], **{k: v for k, v in p["init"].items() if k != "kind"})
    if engine == "walkers":
        k = p.get("k_obs") or 1.0 / p["init"]["width"]
        observers = [ens.Observer("nk", WalkerAmpObserver(k), kind="complex")]
        for extra_k in p.get("k_harmonics", []):
            observers.append(
                ens.Observer(f"nk_{extra_k}", WalkerAmpObserver(extra_k), kind="complex")
            )
    elif engine == "field_automaton":
        k = p.get("k_obs") or 1.0 / p["init"]["width"]
        observers = [ens.Observer("nk", FieldAmpObserver(k), kind="complex")]
    else:
        p.setdefault("k_obs", p["init"].get("k"))
        observers = _build_observers(p.get("observers", ["fourier_ratio"]), p)
    ts = ens.run_ensemble(
        init,
        dyn,
        spec.time_grid,
        observers,
        spec.realizations,
        seed=spec.rng_seed,
        n_workers=n_workers,
        checkpoint_dir=spec.output_dir,
        checkpoint_interval=float(p.get("checkpoint_interval", 300.0)),
        flush_fn=_make_flusher(spec.output_dir),
    )
    _derive_ratio(ts)
    snapshots = {}
    for name in ("sigma_raw", "masks"):
        if name in ts.raw:
            snapshots[name] = (ts.raw[name], spec.time_grid)
    return ts, [], snapshots


def _run_pde(spec, p):
    L = p["L_grid"]
    pspec = pdemod.PdeSpec(
        L_grid=L,
        c=p.get("c", pdemod.DEFAULT_C),
        dt=p.get("dt"),
        nonlinear=p.get("nonlinear", False),
        dx=p.get("dx", 1.0),
    )
    if "width" in p:
        g0 = prep.stripe_field(L, p["width"], p.get("A", 1.0))
        k = 1.0 / p["width"]
    else:
        k, A = p["k"], p.get("A", 1.0)
        xx, yy = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
        g0 = A * np.sin(np.pi * k * (xx + yy) * pspec.dx)
    times = np.asarray(spec.time_grid, dtype=float)
    snaps, info = pdemod.pde_integrate(g0, pspec, times)
    amps = np.array([obs.field_diagonal_fourier(s, k) for s in snaps])
    ts = ens.TimeSeries(
        times=times,
        mean={"nk": amps, "max_abs": np.abs(snaps).max(axis=(1, 2))},
        stderr={},
        n_realizations=1,
        metadata={"engine": "pde", **info},
    )
    _derive_ratio(ts)
    return ts, [], {}


def _run_anneal(spec, p):
    target = prep.WaveTarget(k=p["k"], A=p.get("A", 1.0))
    gen = stream(spec.rng_seed)
    occ, info = prep.anneal_density_wave(p["L"], target, gen)
    cfg_path = os.path.join(spec.output_dir, "config.txt")
    save_config(occ, cfg_path, provenance={"experiment": "anneal", **p})
    amps = np.abs(np.fft.fft(obs.diagonal_sums(sigma(occ)))) / p["L"] ** 2
    runio.write_spectrum(
        os.path.join(spec.output_dir, "diagonal_spectrum.csv"),
        amps.reshape(-1, 1),
        {"L": p["L"], "k_target": p["k"], "A": p.get("A", 1.0)},
    )
    with open(os.path.join(spec.output_dir, "anneal_info.json"), "w") as fh:
        json.dump(runio._jsonable(info), fh, indent=1, sort_keys=True)
    return None, ["config.txt", "diagonal_spectrum.csv", "anneal_info.json"], {}


def _seed_config(spec, p):
    init = p["init"]
    gen = stream(spec.rng_seed, ens._rng.composite_index(0, ens.IC_TAG))
    return InitBuilder(init["kind"], **{k: v for k, v in init.items() if k != "kind"})(gen)


def _run_fragment(spec, p):
    seed = _seed_config(spec, p)
    fs = frag.enumerate_fragment(seed, max_size=int(p.get("max_size", 1_000_000)))
    meta = frag.dump_fragment(fs, os.path.join(spec.output_dir, "fragment.txt"))
    print(f"fragment: {meta['n_configs']} configs, complete={meta['complete']}")
    return None, ["fragment.txt", "fragment.txt.json"], {}


def _run_ed(spec, p):
    seed = _seed_config(spec, p)
    fs = frag.enumerate_fragment(seed, max_size=int(p.get("max_size", 200_000)))
    if not fs.complete:
        raise RuntimeError("fragment truncated; raise max_size or shrink the seed")
    res = frag.quantum_evolve(
        fs, spec.time_grid, k=p.get("k"), krylov_dim=int(p.get("krylov_dim", 30))
    )
    mean = {k: v for k, v in res.items() if k != "time"}
    ts = ens.TimeSeries(
        times=res["time"],
        mean=mean,
        stderr={},
        n_realizations=1,
        metadata={"engine": "ed", "n_configs": fs.n_configs},
    )
    return ts, [], {}


def _run_correlator(spec, p, n_workers):
    dyn = _dyn_spec(spec, p, "hardcore_sca")
    init = InitBuilder("annealed_wave", L=p["L"], k=p["k"], A=p.get("A", 1.0))
    n_ic = int(p.get("n_ic", spec.realizations))
    n_dyn = int(p.get("n_dyn", 1))
    pairs = [(ic, d) for ic in range(n_ic) for d in range(n_dyn)]
    observers = [ens.Observer("masks", _mask_snapshot, kind="array", keep_raw=True)]
    ts = ens.run_ensemble(
        init,
        dyn,
        spec.time_grid,
        observers,
        len(pairs),
        seed=spec.rng_seed,
        stream_pairs=pairs,
        n_workers=n_workers,
        flush_fn=_make_flusher(spec.output_dir),
    )
    normalization = p.get("normalization", "global_P2")
    extra = []
    for ti, t in enumerate(spec.time_grid):
        masks = ts.raw["masks"][:, ti]
        C, info = obs.flip_correlator(masks, k=p["k"], normalization=normalization)
        name = f"correlator_t{t}.grid"
        runio.write_grid(
            os.path.join(spec.output_dir, name),
            C,
            {
                "L": p["L"],
                "t": t,
                "normalization": normalization,
                "origin_rule": "diagonals with k*d = 1/4 (mod 2)",
                **{k2: v for k2, v in info.items() if np.isscalar(v)},
            },
        )
        extra.append(name)
    return ts, extra, {}


def _run_structure_factor(spec, p, n_workers):
    dyn = _dyn_spec(spec, p, "hardcore_sca")
    init = InitBuilder("random_half_filled", L=p["L"])
    observers = [
        ens.Observer("sigma_raw", _sigma_snapshot, kind="array", keep_raw=True)
    ]
    grid = spec.time_grid
    if grid[0] != 0:
        raise ValueError("structure factor needs t=0 in the grid (reference time)")
    ts = ens.run_ensemble(
        init,
        dyn,
        grid,
        observers,
        spec.realizations,
        seed=spec.rng_seed,
        n_workers=n_workers,
        flush_fn=_make_flusher(spec.output_dir),
    )
    extra = []
    sig0 = ts.raw["sigma_raw"][:, 0]
    for ti, t in enumerate(grid[1:], start=1):
        C = obs.structure_factor(ts.raw["sigma_raw"][:, ti], sig0)
        name = f"spectrum_t{t}.csv"
        runio.write_spectrum(
            os.path.join(spec.output_dir, name),
            np.abs(C),
            {"L": p["L"], "t": t, "normalized_by": "C(r=0,t)"},
        )
        extra.append(name)
    return ts, extra, {}


def _make_flusher(run_dir):
    def flush(partial_ts, exc):
        os.makedirs(run_dir, exist_ok=True)
        if partial_ts.n_realizations > 0:
            runio.write_series_csv(os.path.join(run_dir, "series.csv"), partial_ts)
        runio.mark_failed(run_dir, exc)

    return flush


# ---------------------------------------------------------------------------
# subcommand mains


def cmd_run(args):
    spec = runio.load_spec(args.spec)
    if args.output_dir:
        spec.output_dir = args.output_dir
    if args.seed is not None:
        spec.rng_seed = args.seed
    runio.start_run_dir(spec)
    try:
        ts, extra, snapshots = _dispatch_run(spec, args.workers)
    except Exception as exc:
        runio.mark_failed(spec.output_dir, exc)
        raise
    runio.finish_run_dir(spec.output_dir, ts, extra_files=extra, snapshots=snapshots)
    print(f"run complete: {spec.output_dir}")
    return 0


def cmd_anneal(args):
    spec = runio.RunSpec(
        experiment="anneal",
        parameters={"L": args.L, "k": args.k, "A": args.A},
        output_dir=args.out,
        rng_seed=args.seed,
    )
    runio.start_run_dir(spec)
    _, extra, _ = _run_anneal(spec, spec.parameters)
    runio.finish_run_dir(spec.output_dir, None, extra_files=extra)
    with open(os.path.join(args.out, "anneal_info.json")) as fh:
        info = json.load(fh)
    print(
        f"anneal: energy {info['final_energy']:.3f}, "
        f"max diagonal deviation {info['max_abs_dev']:.1f}"
    )
    return 0


def cmd_enumerate(args):
    occ = load_config(args.config)
    fs = frag.enumerate_fragment(occ, max_size=args.max_size)
    meta = frag.dump_fragment(fs, args.out)
    line = f"fragment: {meta['n_configs']} configs, complete={meta['complete']}"
    if meta["mean_overlap"] is not None:
        line += f", mean overlap {meta['mean_overlap']:.6f}"
    print(line)
    return 0


def cmd_ed(args):
    spec = runio.RunSpec(
        experiment="ed",
        parameters={
            "init": {"kind": "file", "path": args.config},
            "k": args.k,
            "max_size": args.max_size,
        },
        output_dir=args.out,
        rng_seed=0,
        time_grid=args.times,
    )
    runio.start_run_dir(spec)
    ts, extra, _ = _run_ed(spec, spec.parameters)
    runio.finish_run_dir(spec.output_dir, ts, extra_files=extra)
    print(f"ed run complete: {args.out} ({ts.metadata['n_configs']} configs)")
    return 0


def cmd_pde(args):
    params = {"L_grid": args.L, "nonlinear": args.nonlinear, "c": args.c}
    if args.width:
        params["width"] = args.width
    else:
        params["k"] = args.k
        params["A"] = args.A
    spec = runio.RunSpec(
        experiment="pde",
        parameters=params,
        output_dir=args.out,
        time_grid=args.times,
    )
    runio.start_run_dir(spec)
    ts, extra, _ = _run_pde(spec, spec.parameters)
    runio.finish_run_dir(spec.output_dir, ts, extra_files=extra)
    print(f"pde run complete: {args.out}")
    return 0


def cmd_analyze(args):
    rows = []
    for run_dir in args.run_dirs:
        series = runio.read_series_csv(os.path.join(run_dir, "series.csv"))
        with open(os.path.join(run_dir, "spec.json")) as fh:
            sp = json.load(fh)
        if "fourier_ratio" in series:
            t, ratio, _ = series["fourier_ratio"]
        else:
            t, amps, _ = series["nk"]
            ratio = np.real(amps / amps[0])
        onset = obs.detect_melt_onset(t, ratio, threshold=args.threshold)
        k = sp["parameters"].get("k") or sp["parameters"].get("k_obs")
        rows.append((run_dir, k, onset))
        flag = " (censored)" if onset.censored else ""
        print(f"{run_dir}: k={k} t0={onset.time:.6g}{flag}")
    usable = [(r.time, k) for _d, k, r in rows if k]
    if args.power_law:
        ks = np.array([k for _t, k in usable])
        onsets = [r for _d, _k, r in rows]
        alpha, err, r2, n_used = obs.fit_power_law(1.0 / ks, onsets)
        print(f"power law: t0 ~ (1/k)^({alpha:.2f} +- {err:.2f}), r2={r2:.4f}, n={n_used}")
    return 0


def cmd_verify(args):
    from . import verify as ver

    failures = ver.run_tier(args.level)
    return 1 if failures else 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="ringex", description="ring-exchange lattice dynamics toolkit"
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a declarative run spec")
    p.add_argument("spec", help="path to spec.json")
    p.add_argument("--output-dir", help="override the spec's output_dir")
    p.add_argument("--seed", type=int, help="override the spec's rng_seed")
    p.add_argument(
        "--workers",
        type=int,
        default=int(os.environ.get("RINGEX_WORKERS", "1")),
        help="worker processes (default: RINGEX_WORKERS or 1)",
    )
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("verify", help="run self-check tiers")
    p.add_argument("--level", choices=("fast", "slow"), default="fast")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("anneal", help="generate a density-wave configuration")
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--A", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_anneal)

    p = sub.add_parser("enumerate", help="BFS flip-closure of a configuration")
    p.add_argument("config", help="configuration file (text format)")
    p.add_argument("--max-size", type=int, default=1_000_000)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_enumerate)

    p = sub.add_parser("ed", help="quantum evolution on one fragment")
    p.add_argument("config")
    p.add_argument("--times", type=float, nargs="+", required=True)
    p.add_argument("--k", type=float)
    p.add_argument("--max-size", type=int, default=200_000)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ed)

    p = sub.add_parser("pde", help="integrate the continuum equation")
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--k", type=float)
    p.add_argument("--A", type=float, default=1.0)
    p.add_argument("--width", type=int, help="stripe initial profile instead of a sine")
    p.add_argument("--c", type=float, default=pdemod.DEFAULT_C)
    p.add_argument("--nonlinear", action="store_true")
    p.add_argument("--times", type=float, nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pde)

    p = sub.add_parser("analyze", help="melt onsets / fits from run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--threshold", type=float, default=0.99)
    p.add_argument("--power-law", action="store_true")
    p.set_defaults(fn=cmd_analyze)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
