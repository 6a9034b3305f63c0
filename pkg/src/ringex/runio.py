"""Run-directory plumbing: declarative run specs and on-disk outputs.

A run directory holds the resolved spec (spec.json), the reduced series
(series.csv with columns time,observable,mean,stderr,n_realizations),
optional grid/spectrum/snapshot files, and a manifest listing every output.
Floats are written with repr-exact precision so a repeated run with the
same seed produces byte-identical data files; the manifest also records
wall-clock time and is therefore excluded from byte-for-byte comparisons.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .ensemble import TimeSeries

EXPERIMENTS = (
    "sca",
    "walkers",
    "field",
    "pde",
    "anneal",
    "fragment",
    "ed",
    "correlator",
    "structure_factor",
)


@dataclass
class RunSpec:
    """Declarative description of one run; JSON round-trips exactly."""

    experiment: str
    parameters: dict = field(default_factory=dict)
    output_dir: str = "runs/out"
    rng_seed: int = 0
    realizations: int = 1
    time_grid: list = field(default_factory=list)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(
                f"unknown experiment {self.experiment!r}; one of {EXPERIMENTS}"
            )
        self.time_grid = resolve_grid(self.time_grid)

    def to_json(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        bad = set(doc) - {f for f in cls.__dataclass_fields__}
        missing = {"experiment"} - set(doc)
        if bad or missing:
            raise ValueError(
                f"spec schema error: unknown fields {sorted(bad)}, "
                f"missing fields {sorted(missing)}"
            )
        return cls(**doc)


def resolve_grid(grid):
    """Expand grid shorthand to an explicit sorted list of times.

    Accepts an explicit list, or {"geometric": {"t_max": M, "base": 2,
    "t_min": 1, "with_zero": true}} producing 0, t_min, t_min*base, ... up
    to t_max (t_max always included).
    """
    if isinstance(grid, dict):
        if set(grid) != {"geometric"}:
            raise ValueError("grid shorthand must be {'geometric': {...}}")
        g = dict(grid["geometric"])
        t_max = g.pop("t_max")
        base = g.pop("base", 2.0)
        t_min = g.pop("t_min", 1)
        with_zero = g.pop("with_zero", True)
        if g:
            raise ValueError(f"unknown geometric grid keys {sorted(g)}")
        if base <= 1 or t_min <= 0 or t_max < t_min:
            raise ValueError("need base > 1 and 0 < t_min <= t_max")
        out = [0] if with_zero else []
        t = float(t_min)
        while t < t_max:
            out.append(int(round(t)))
            t *= base
        out.append(int(t_max))
        return sorted(set(out))
    return [float(t) if not float(t).is_integer() else int(t) for t in grid]


def load_spec(path):
    with open(path) as fh:
        return RunSpec.from_json(fh.read())


# ---------------------------------------------------------------------------
# output writers — all floats via %.17g (repr-exact for doubles)

_F = "%.17g"


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return _F % x


def write_series_csv(path, ts: TimeSeries):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "observable", "mean", "stderr", "n_realizations"])
        for t, name, m, e, n in ts.rows():
            w.writerow([_fmt(t), name, _F % m, _F % e, n])
    return path


def read_series_csv(path):
    """series.csv back as {observable: (times, means, stderrs)}; re/im merged."""
    cols = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            cols.setdefault(row["observable"], []).append(
                (float(row["time"]), float(row["mean"]), float(row["stderr"]))
            )
    out = {}
    for name, rows in cols.items():
        t, m, e = (np.array(v) for v in zip(*rows))
        out[name] = (t, m, e)
    for name in [n for n in out if n.endswith("_re")]:
        base = name[:-3]
        im = out.get(base + "_im")
        if im is not None:
            t, re, e = out.pop(name)
            out[base] = (t, re + 1j * im[1], e)
            out.pop(base + "_im")
    return out


def write_grid(path, arr, header: dict):
    """Row-major float grid with a one-line JSON header (correlator maps)."""
    arr = np.asarray(arr, dtype=float)
    head = dict(header)
    head["shape"] = list(arr.shape)
    with open(path, "w") as fh:
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        np.savetxt(fh, arr.reshape(arr.shape[0], -1), fmt=_F)
    return path


def read_grid(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        arr = np.loadtxt(fh, ndmin=2)
    return arr.reshape(header["shape"]), header


def write_spectrum(path, amps, header: dict | None = None):
    """|amplitude| per Fourier mode as (k_x, k_y, |amp|) CSV triples.

    ``amps`` is the L×L mode grid (index = integer mode number, FFT layout).
    """
    amps = np.asarray(amps)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["k_x", "k_y", "amplitude"])
        for kx in range(amps.shape[0]):
            for ky in range(amps.shape[1]):
                w.writerow([kx, ky, _F % abs(amps[kx, ky])])
    return path


def read_spectrum(path):
    with open(path, newline="") as fh:
        first = fh.readline()
        header = json.loads(first[2:]) if first.startswith("# ") else None
        if header is None:
            fh.seek(0)
        rows = list(csv.DictReader(fh))
    n = int(max(int(r["k_x"]) for r in rows)) + 1
    m = int(max(int(r["k_y"]) for r in rows)) + 1
    amps = np.zeros((n, m))
    for r in rows:
        amps[int(r["k_x"]), int(r["k_y"])] = float(r["amplitude"])
    return amps, header


def write_snapshots(path, raw, times):
    """Per-realization array snapshots at grid times, bundled as one npz."""
    payload = {
        f"r{r}_t{_fmt(times[ti])}": raw[r, ti]
        for r in range(raw.shape[0])
        for ti in range(raw.shape[1])
    }
    np.savez_compressed(path, **payload)
    return path


# ---------------------------------------------------------------------------
# run directory assembly


def start_run_dir(spec: RunSpec):
    """Create the output directory and drop the resolved spec into it."""
    os.makedirs(spec.output_dir, exist_ok=True)
    with open(os.path.join(spec.output_dir, "spec.json"), "w") as fh:
        fh.write(spec.to_json() + "\n")
    return spec.output_dir


def finish_run_dir(run_dir, ts: TimeSeries | None = None, extra_files=(),
                   snapshots=None):
    """Write series + manifest; returns the manifest dict.

    ``snapshots`` maps file stem -> (raw array (R,T,...), times).
    """
    files = ["spec.json"]
    if ts is not None:
        write_series_csv(os.path.join(run_dir, "series.csv"), ts)
        files.append("series.csv")
    for stem, (raw, times) in (snapshots or {}).items():
        sub = os.path.join(run_dir, "snapshots")
        os.makedirs(sub, exist_ok=True)
        write_snapshots(os.path.join(sub, stem + ".npz"), raw, times)
        files.append(os.path.join("snapshots", stem + ".npz"))
    files.extend(extra_files)
    manifest = {
        "code_version": __version__,
        "files": sorted(files),
        "series_metadata": _jsonable(ts.metadata) if ts is not None else {},
    }
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def mark_failed(run_dir, exc):
    with open(os.path.join(run_dir, "FAILED"), "w") as fh:
        fh.write(f"{type(exc).__name__}: {exc}\n")


def check_manifest(run_dir):
    """Every output file referenced, no orphans; returns the two sets."""
    with open(os.path.join(run_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    listed = set(manifest["files"]) | {"manifest.json"}
    present = set()
    for root, _dirs, names in os.walk(run_dir):
        for n in names:
            rel = os.path.relpath(os.path.join(root, n), run_dir)
            if rel != "FAILED" and not rel.endswith("_checkpoint.npz"):
                present.add(rel)
    return listed, present


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.integer,)):
            out[k] = int(v)
        elif isinstance(v, (np.floating,)):
            out[k] = float(v)
        else:
            out[k] = v
    return out
