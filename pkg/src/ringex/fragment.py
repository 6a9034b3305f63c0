"""Exact enumeration of flip-connected configuration sets and quantum
dynamics restricted to one such set.

A fragment is the closure of a seed configuration under single plaquette
flips.  Keys are the packed occupancy bits (no symmetry reduction — counts
refer to raw configurations).  The quantum side builds the sparse adjacency
Hamiltonian (matrix element 1 between flip-connected members) and evolves
the seed basis state with a Krylov-subspace propagator.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from .lattice import SHAPES, flippable_mask, sigma


def _toggle(occ, x, y, a, b):
    # xor the four plaquette corners in place; caller guarantees flippability
    L = occ.shape[0]
    xa, yb = (x + a) % L, (y + b) % L
    occ[x, y] ^= 1
    occ[xa, y] ^= 1
    occ[xa, yb] ^= 1
    occ[x, yb] ^= 1


def config_key(occ):
    """Canonical bytes key: row-major packed occupancy bits."""
    return np.packbits(occ.reshape(-1)).tobytes()


def key_to_config(key, L):
    occ = np.unpackbits(np.frombuffer(key, dtype=np.uint8), count=L * L)
    return occ.reshape(L, L).copy()


@dataclass
class FragmentSet:
    """Flip-closure of a seed; ``complete`` is False when max_size stopped BFS."""

    seed: np.ndarray
    members: list  # occupancy arrays in BFS discovery order (seed first)
    index: dict  # key -> position in members
    complete: bool
    edges: np.ndarray  # (n_edges, 2) directed pairs discovered during BFS
    shapes: tuple = ("1x1",)

    @property
    def n_configs(self):
        return len(self.members)


def enumerate_fragment(seed, max_size=1_000_000, shapes=("1x1",)):
    """Breadth-first closure of ``seed`` under plaquette flips.

    Stops cleanly once more than ``max_size`` members are found and marks the
    result incomplete rather than silently truncating.  Each directed edge
    (member, flipped member) is recorded once, so the adjacency matrix can be
    assembled without deduplication.
    """
    L = seed.shape[0]
    seed = np.array(seed, dtype=np.uint8, copy=True)
    index = {config_key(seed): 0}
    members = [seed]
    edges = []
    queue = deque([0])
    complete = True
    while queue:
        i = queue.popleft()
        occ = members[i]
        for shape in shapes:
            a, b = SHAPES[shape]
            fm = flippable_mask(occ, shape)
            for x, y in np.argwhere(fm):
                _toggle(occ, x, y, a, b)
                k = config_key(occ)
                j = index.get(k)
                if j is None:
                    if len(members) >= max_size:
                        _toggle(occ, x, y, a, b)
                        complete = False
                        queue.clear()
                        break
                    j = len(members)
                    index[k] = j
                    members.append(occ.copy())
                    queue.append(j)
                edges.append((i, j))
                _toggle(occ, x, y, a, b)  # restore
            else:
                continue
            break
    return FragmentSet(
        seed=seed,
        members=members,
        index=index,
        complete=complete,
        edges=np.array(edges, dtype=np.int64).reshape(-1, 2),
        shapes=tuple(shapes),
    )


# ---------------------------------------------------------------------------
# overlaps


def overlap(config, seed):
    """Centered overlap: mean of sigma_config * sigma_seed, in [-1, 1]."""
    if config.shape != seed.shape:
        raise ValueError("shape mismatch")
    return float(np.mean(sigma(config) * sigma(seed)))


def raw_overlap(config, seed):
    """Occupancy-product form (4/L^2) sum n n', in [0, 2]: centered + 1."""
    if config.shape != seed.shape:
        raise ValueError("shape mismatch")
    L = config.shape[0]
    return float(4.0 * np.sum((config > 0) & (seed > 0)) / L**2)


def mean_overlap(frag: FragmentSet):
    """Fragment average of the centered overlap with the seed.

    Equals the infinite-time average of the overlap under any dynamics that
    samples the fragment uniformly.  Refuses incomplete fragments: a
    truncated average is not the fragment statistic.
    """
    if not frag.complete:
        raise ValueError("fragment enumeration was truncated; overlap undefined")
    ssum = np.zeros_like(frag.seed, dtype=np.int64)
    for occ in frag.members:
        ssum += sigma(occ)
    return float(np.mean(sigma(frag.seed) * ssum) / frag.n_configs)


# ---------------------------------------------------------------------------
# sparse Hamiltonian + Krylov propagation


def hamiltonian(frag: FragmentSet):
    """CSR adjacency matrix: H[i, j] = 1 when one flip connects i and j."""
    n = frag.n_configs
    if frag.edges.size == 0:
        return scipy.sparse.csr_matrix((n, n))
    i, j = frag.edges[:, 0], frag.edges[:, 1]
    H = scipy.sparse.coo_matrix(
        (np.ones(len(i)), (i, j)), shape=(n, n)
    ).tocsr()
    if (H != H.T).nnz != 0:
        raise ValueError("assembled Hamiltonian is not symmetric")
    return H


def _krylov_step(H, psi, dt, m):
    """One exp(-i H dt) application via an m-dimensional Lanczos subspace."""
    n = psi.shape[0]
    m = min(m, n)
    V = np.zeros((m, n), dtype=np.complex128)
    alpha = np.zeros(m)
    beta = np.zeros(m - 1) if m > 1 else np.zeros(0)
    nrm = np.linalg.norm(psi)
    V[0] = psi / nrm
    used = m
    for j in range(m):
        w = H @ V[j]
        alpha[j] = np.real(np.vdot(V[j], w))
        w = w - alpha[j] * V[j]
        if j > 0:
            w = w - beta[j - 1] * V[j - 1]
        # full reorthogonalization: cheap at m <= 30 and keeps T accurate
        w = w - V[: j + 1].T @ (np.conj(V[: j + 1]) @ w)
        if j < m - 1:
            b = np.linalg.norm(w)
            if b < 1e-14:
                used = j + 1
                break
            beta[j] = b
            V[j + 1] = w / b
    evals, evecs = scipy.linalg.eigh_tridiagonal(alpha[:used], beta[: used - 1])
    small = evecs @ (np.exp(-1j * evals * dt) * evecs[0])
    return nrm * (V[:used].T @ small)


def quantum_evolve(frag: FragmentSet, times, k=None, krylov_dim=30,
                   hdt_cap=10.0, norm_tol=1e-8):
    """Evolve the seed basis state and record diagonal expectations.

    Returns a dict of arrays over ``times``: centered overlap expectation,
    Fourier-ratio expectation (for wavenumber ``k``, skipped when None),
    norm-squared and energy expectation.  Substeps keep ||H||*dt below
    ``hdt_cap`` (||H|| bounded by the max flip degree); a substep that drifts
    the norm faster than ``norm_tol`` per unit time is halved and retried.
    """
    H = hamiltonian(frag)
    n = frag.n_configs
    deg = np.diff(H.indptr)
    hnorm = float(deg.max()) if n > 1 else 1.0
    o_diag = np.array([overlap(c, frag.seed) for c in frag.members])
    if k is not None:
        from .observables import diagonal_fourier

        f_diag = np.array([diagonal_fourier(c, k) for c in frag.members])
        f0 = f_diag[0]
        if abs(f0) < 1e-12:
            raise ValueError("seed has zero amplitude at the requested k")
    psi = np.zeros(n, dtype=np.complex128)
    psi[0] = 1.0
    out = {"time": [], "overlap": [], "norm_sq": [], "energy": []}
    if k is not None:
        out["fourier_ratio"] = []
    t = 0.0
    for target in np.asarray(times, dtype=float):
        if target < t:
            raise ValueError("times must be non-decreasing")
        while t < target - 1e-12:
            dt = min(target - t, hdt_cap / hnorm)
            while True:
                cand = _krylov_step(H, psi, dt, krylov_dim)
                drift = abs(np.linalg.norm(cand) - 1.0)
                if drift <= norm_tol * max(dt, 1e-30) or dt < 1e-12:
                    break
                dt *= 0.5
            psi = cand
            t += dt
        p2 = np.abs(psi) ** 2
        out["time"].append(t)
        out["overlap"].append(float(p2 @ o_diag))
        out["norm_sq"].append(float(p2.sum()))
        out["energy"].append(float(np.real(np.vdot(psi, H @ psi))))
        if k is not None:
            out["fourier_ratio"].append(float(np.real((p2 @ f_diag) / f0)))
    return {key: np.array(v) for key, v in out.items()}


# ---------------------------------------------------------------------------
# dumps


def seed_hash(occ):
    return hashlib.sha256(config_key(occ)).hexdigest()[:16]


def dump_fragment(frag: FragmentSet, path):
    """Write sorted hex keys + a JSON summary next to it."""
    keys = sorted(config_key(c).hex() for c in frag.members)
    with open(path, "w") as fh:
        fh.write("\n".join(keys) + "\n")
    meta = {
        "n_configs": frag.n_configs,
        "complete": frag.complete,
        "mean_overlap": mean_overlap(frag) if frag.complete else None,
        "seed_hash": seed_hash(frag.seed),
        "L": int(frag.seed.shape[0]),
        "shapes": list(frag.shapes),
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=1)
    return meta
