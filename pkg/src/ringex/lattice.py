"""Configurations, plaquette geometry, flippability, conservation bookkeeping.

A configuration is a dense ``uint8`` array ``occ`` of shape ``(L, L)`` with
``occ[x, y]`` the boson number (0 or 1) on site ``(x, y)``; both directions
are periodic.  In the sector studied throughout, every row sum and every
column sum equals ``L/2``.  Spin values are ``sigma = 2*occ - 1``.

Plaquettes are addressed by their bottom-left corner ``(x, y)`` and a shape
tag.  The corner order convention is fixed everywhere as

    (x, y) -> (x+a, y) -> (x+a, y+b) -> (x, y+b)

with ``(a, b) = (1, 1)`` for the elementary square and ``(2, 1)`` / ``(1, 2)``
for the extended rectangles; extended shapes are defined by their four corner
sites only.  A plaquette is *flippable* when exactly one of its two corner
diagonals is occupied and the other is empty; flipping complements the four
corners and conserves every row and column sum.

Serialization is a plain text grid of ``0``/``1`` characters (one lattice row
per line) plus a JSON sidecar with the conserved sums and provenance; the
round trip is bit exact.
"""

from __future__ import annotations

import json
import pathlib

import numpy as np

__all__ = [
    "SHAPES",
    "shape_extent",
    "is_flippable",
    "flip",
    "flippable_mask",
    "h_flippability",
    "conserved_sums",
    "in_sector",
    "sigma",
    "save_config",
    "load_config",
]

#: supported plaquette shapes and their (a, b) corner extents
SHAPES = {"1x1": (1, 1), "2x1": (2, 1), "1x2": (1, 2)}


def shape_extent(shape):
    try:
        return SHAPES[shape]
    except KeyError:
        raise ValueError(f"unknown plaquette shape {shape!r}") from None


def _corners(occ, x, y, shape):
    L = occ.shape[0]
    a, b = shape_extent(shape)
    xa, yb = (x + a) % L, (y + b) % L
    return occ[x, y], occ[xa, y], occ[xa, yb], occ[x, yb]


def is_flippable(occ, x, y, shape="1x1"):
    """True iff the plaquette at bottom-left ``(x, y)`` can be flipped.

    The two flippable corner patterns are ``(1,0,1,0)`` and ``(0,1,0,1)`` in
    the fixed corner order: one diagonal doubly occupied, the other empty.
    """
    n00, n10, n11, n01 = _corners(occ, x % occ.shape[0], y % occ.shape[0], shape)
    return bool(n00 == n11 and n10 == n01 and n00 != n10)


def flip(occ, x, y, shape="1x1"):
    """Return a copy of ``occ`` with the plaquette at ``(x, y)`` flipped.

    Raises ``ValueError`` if the plaquette is not flippable (the move is
    rejected, the input is untouched).  Flipping twice returns the original
    configuration; all row and column sums are preserved.
    """
    L = occ.shape[0]
    x, y = x % L, y % L
    if not is_flippable(occ, x, y, shape):
        raise ValueError(f"plaquette ({x}, {y}, {shape}) is not flippable")
    a, b = shape_extent(shape)
    out = occ.copy()
    xa, yb = (x + a) % L, (y + b) % L
    for cx, cy in ((x, y), (xa, y), (xa, yb), (x, yb)):
        out[cx, cy] ^= 1
    return out


def flippable_mask(occ, shape="1x1"):
    """Boolean L x L array: entry (x, y) marks a flippable plaquette there."""
    a, b = shape_extent(shape)
    n00 = occ
    n10 = np.roll(occ, -a, axis=0)
    n11 = np.roll(n10, -b, axis=1)
    n01 = np.roll(occ, -b, axis=1)
    return (n00 == n11) & (n10 == n01) & (n00 != n10)


def h_flippability(s00, s10, s11, s01):
    """Flippability polynomial on four corner spins (each in {-1, +1}).

    Evaluates, in the fixed corner order ``(s00, s10, s11, s01)``,

        h = 1/4 * [ (s01 - s00) - (s11 - s10)
                    - 1/4 * (s00+s10+s11+s01)
                          * (s00*s10 - s11*s01) * (s00*s01 - s10*s11) ]

    which is -1 for the occupied-main-diagonal pattern (s00 = s11 = +1),
    +1 for the occupied-anti-diagonal pattern (s10 = s01 = +1), and 0 for
    the remaining 14 corner patterns, so ``h != 0`` is exactly flippability
    and the sign records which diagonal is occupied.  Accepts scalars or
    broadcastable arrays.
    """
    s = s00 + s10 + s11 + s01
    quart = (s00 * s10 - s11 * s01) * (s00 * s01 - s10 * s11)
    return ((s01 - s00) - (s11 - s10) - 0.25 * s * quart) / 4.0


def h_field(occ, shape="1x1"):
    """h_flippability evaluated on every plaquette; float L x L array."""
    a, b = shape_extent(shape)
    s = sigma(occ).astype(np.float64)
    s00 = s
    s10 = np.roll(s, -a, axis=0)
    s11 = np.roll(s10, -b, axis=1)
    s01 = np.roll(s, -b, axis=1)
    return h_flippability(s00, s10, s11, s01)


def conserved_sums(occ):
    """(row_sums, col_sums) as integer arrays; row y collects all x."""
    row = occ.sum(axis=0, dtype=np.int64)  # index y
    col = occ.sum(axis=1, dtype=np.int64)  # index x
    return row, col


def in_sector(occ):
    """True when every row and column sum equals L/2."""
    L = occ.shape[0]
    row, col = conserved_sums(occ)
    return bool(np.all(row == L // 2) and np.all(col == L // 2))


def sigma(occ):
    """Spin representation 2n - 1 as int8."""
    return (2 * occ.astype(np.int8) - 1)


# ---------------------------------------------------------------------------
# serialization: text grid + JSON sidecar


def save_config(occ, path, provenance=None):
    """Write ``occ`` as a 0/1 character grid; sidecar goes to ``path + '.json'``.

    One line per lattice row y (so column x is character x of line y).
    """
    path = pathlib.Path(path)
    L = occ.shape[0]
    lines = ["".join("1" if occ[x, y] else "0" for x in range(L)) for y in range(L)]
    path.write_text("\n".join(lines) + "\n")
    row, col = conserved_sums(occ)
    sidecar = {
        "L": int(L),
        "row_sums": [int(v) for v in row],
        "col_sums": [int(v) for v in col],
        "provenance": provenance or {},
    }
    path.with_name(path.name + ".json").write_text(json.dumps(sidecar, indent=1) + "\n")
    return path


def load_config(path):
    """Read a config written by :func:`save_config`; validates the sidecar sums."""
    path = pathlib.Path(path)
    lines = path.read_text().split()
    L = len(lines)
    occ = np.zeros((L, L), dtype=np.uint8)
    for y, line in enumerate(lines):
        if len(line) != L:
            raise ValueError(f"{path}: line {y} has length {len(line)}, expected {L}")
        for x, ch in enumerate(line):
            occ[x, y] = 1 if ch == "1" else 0
    sidecar_path = path.with_name(path.name + ".json")
    if sidecar_path.exists():
        meta = json.loads(sidecar_path.read_text())
        row, col = conserved_sums(occ)
        if meta["L"] != L or list(row) != meta["row_sums"] or list(col) != meta["col_sums"]:
            raise ValueError(f"{path}: sidecar sums do not match grid contents")
    return occ
