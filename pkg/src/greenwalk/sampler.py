"""Path sampling, boundary convergence, and harmonic-measure estimates.

Sampling is split into fixed-size blocks keyed by (seed, block); each
block simulates its paths with NumPy array kernels and reports integer
cell counts.  Integer aggregation is order-independent, so estimates are
identical for any worker count and bit-identical for a fixed seed.

Convergence bookkeeping follows the walk instead of storing full
histories: a free walker's depth-D prefix can only change while its
reduced word is shorter than D+1 letters, so tracking the last step at
which the length dipped that low tells us how long the prefix has been
frozen.  The wreath walker similarly tracks its last visit to the lamp
window that the boundary bins can see.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .boundary import BoundaryApproximant
from .errors import ConvergenceError, SamplingError, UnsupportedGroupError
from .groups import GroupElement, GroupModel
from .measures import MeasureModel
from .rng import BLOCK_SIZE, block_bounds, block_count, block_rng
from .walks import WalkSpec

STABLE_STEPS = 50
ESCAPE_SLACK = 20
WREATH_WINDOW = 2
WREATH_WINDOW_STORE = WREATH_WINDOW + 3
MAX_NONCONVERGED = 0.01


@dataclass(eq=False)
class PathSample:
    """One sampled trajectory; positions[0] is the start."""

    start: GroupElement
    positions: list
    seed: int
    group: GroupModel = None
    converged: BoundaryApproximant | None = None


def sample_path(w: WalkSpec, g: GroupElement, horizon: int, seed: int,
                path_index: int = 0) -> PathSample:
    """Simulate horizon steps from g; keyed by (seed, path_index)."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    G = w.group
    G.check(g)
    rng = block_rng(seed, path_index)
    probs = np.array([p for _, p in w.steps])
    support = [s for s, _ in w.steps]
    draws = rng.choice(len(support), size=horizon, p=probs)
    positions = [g]
    cur = g
    for i in draws:
        cur = G.mul(cur, support[i])
        positions.append(cur)
    return PathSample(start=g, positions=positions, seed=seed, group=G)


# -- boundary convergence -----------------------------------------------------


def boundary_from_path(p: PathSample, depth: int) -> BoundaryApproximant:
    """Boundary point the path converged to, known to `depth`.

    Free case: the depth-letter prefix of the reduced word, required to be
    untouched for the last STABLE_STEPS positions after the word length
    has cleared depth + ESCAPE_SLACK.  Other groups: an escaping
    subsequence of the trajectory tail.
    """
    group = p.group
    if group is None:
        raise ValueError("path sample carries no group model")
    if group.kind == "free":
        return _tree_end_from_path(group, p, depth)
    # generic: strictly escaping subsequence of the tail
    lengths = [_coarse_length(group, x) for x in p.positions]
    if max(lengths) < depth + ESCAPE_SLACK:
        raise ConvergenceError(
            f"path never left the ball of radius {depth + ESCAPE_SLACK}",
            achieved_depth=max(lengths), last_values=tuple(lengths[-3:]),
        )
    elems, best = [], -1
    for x, ln in zip(p.positions, lengths):
        if ln > best:
            elems.append(x)
            best = ln
    tail = [x for x in elems if _coarse_length(group, x) >= 1]
    if len(tail) < 3:
        raise ConvergenceError(
            "escaping subsequence too short", achieved_depth=len(tail),
            last_values=(),
        )
    return BoundaryApproximant.sequence(group, tail[-8:])


def _coarse_length(G: GroupModel, x: GroupElement) -> int:
    hint = G.word_length_hint(x)
    if hint is not None:
        return hint
    if G.kind == "wreath":
        lamps, pos = x.data
        return abs(pos) + len(lamps)
    return 0


def _tree_end_from_path(G: GroupModel, p: PathSample,
                        depth: int) -> BoundaryApproximant:
    words = [x.data for x in p.positions]
    lengths = [len(w) for w in words]
    if max(lengths) < depth + ESCAPE_SLACK:
        raise ConvergenceError(
            f"word length never exceeded {depth + ESCAPE_SLACK}",
            achieved_depth=max(lengths), last_values=tuple(lengths[-3:]),
        )
    final = words[-1]
    if len(final) <= depth:
        raise ConvergenceError(
            f"final word shorter than requested depth {depth}",
            achieved_depth=len(final), last_values=(),
        )
    prefix = final[:depth]
    window = min(STABLE_STEPS, len(words) - 1)
    for w in words[-window:]:
        if len(w) <= depth or w[:depth] != prefix:
            raise ConvergenceError(
                f"prefix still moving in the last {window} steps",
                achieved_depth=depth, last_values=(),
            )
    return BoundaryApproximant.tree_end(G, prefix)


# -- vectorized estimators ----------------------------------------------------


def _free_letter_steps(w: WalkSpec):
    """(letter codes, probabilities) when every step is a single letter."""
    letters, probs = [], []
    for s, p in w.steps:
        if len(s.data) != 1:
            return None
        letters.append(s.data[0])
        probs.append(p)
    return np.array(letters, dtype=np.int8), np.array(probs)


def _free_block(w: WalkSpec, depth: int, seed: int, block: int,
                n_samples: int, horizon: int):
    letters, probs = _free_letter_steps(w)
    lo, hi = block_bounds(block, n_samples)
    nb = hi - lo
    rng = block_rng(seed, block)
    draws = rng.choice(len(letters), size=(nb, horizon), p=probs)
    steps = letters[draws]
    buf = np.zeros((nb, horizon + 1), dtype=np.int8)
    L = np.zeros(nb, dtype=np.int64)
    rows = np.arange(nb)
    last_touch = np.zeros(nb, dtype=np.int64)
    peak = np.zeros(nb, dtype=np.int64)
    for t in range(horizon):
        s = steps[:, t]
        can = (L > 0) & (buf[rows, np.maximum(L - 1, 0)] == -s)
        L = np.where(can, L - 1, L)
        put = ~can
        buf[rows[put], L[put]] = s[put]
        L = np.where(put, L + 1, L)
        np.maximum(peak, L, out=peak)
        last_touch = np.where(L <= depth, t, last_touch)
    ok = ((peak > depth + ESCAPE_SLACK)
          & (horizon - 1 - last_touch >= STABLE_STEPS)
          & (L > depth))
    counts = Counter()
    kept = buf[ok, :depth]
    if kept.size:
        uniq, n = np.unique(kept, axis=0, return_counts=True)
        for row, c in zip(uniq, n):
            counts[tuple(int(v) for v in row)] = int(c)
    return counts, int(nb - int(ok.sum()))


def _wreath_case_steps(w: WalkSpec):
    """Step table (kind, value, prob): kind 0 lamp at pos, 1 translation."""
    table = []
    for s, p in w.steps:
        lamps, pos = s.data
        if pos == 0 and len(lamps) == 1 and lamps[0][0] == 0:
            table.append((0, lamps[0][1], p))
        elif pos in (1, -1) and not lamps:
            table.append((1, pos, p))
        else:
            return None
    return table


def _wreath_block(w: WalkSpec, seed: int, block: int, n_samples: int,
                  horizon: int):
    table = _wreath_case_steps(w)
    q = w.group.params[0]
    lo, hi = block_bounds(block, n_samples)
    nb = hi - lo
    rng = block_rng(seed, block)
    kinds = np.array([k for k, _, _ in table])
    vals = np.array([v for _, v, _ in table])
    probs = np.array([p for _, _, p in table])
    draws = rng.choice(len(table), size=(nb, horizon), p=probs)
    W = WREATH_WINDOW_STORE
    lamps = np.zeros((nb, 2 * W + 1), dtype=np.int16)
    pos = np.zeros(nb, dtype=np.int64)
    rows = np.arange(nb)
    last_touch = np.zeros(nb, dtype=np.int64)
    for t in range(horizon):
        k = kinds[draws[:, t]]
        v = vals[draws[:, t]]
        toggle = (k == 0) & (np.abs(pos) <= W)
        cols = np.clip(pos + W, 0, 2 * W)
        lamps[rows[toggle], cols[toggle]] = (
            lamps[rows[toggle], cols[toggle]] + v[toggle]
        ) % q
        move = k == 1
        pos = np.where(move, pos + v, pos)
        last_touch = np.where(np.abs(pos) <= W, t, last_touch)
    ok = ((np.abs(pos) >= W + 3)
          & (horizon - 1 - last_touch >= STABLE_STEPS))
    counts = Counter()
    kept = np.column_stack((np.sign(pos[ok]).astype(np.int16), lamps[ok]))
    if kept.size:
        uniq, n = np.unique(kept, axis=0, return_counts=True)
        for row, c in zip(uniq, n):
            sign = "+" if row[0] > 0 else "-"
            counts[(sign, tuple(int(v) for v in row[1:]))] = int(c)
    return counts, int(nb - int(ok.sum()))


def _lattice_block(w: WalkSpec, seed: int, block: int, n_samples: int,
                   horizon: int):
    steps = np.array([s.data[0] for s, _ in w.steps])
    probs = np.array([p for _, p in w.steps])
    lo, hi = block_bounds(block, n_samples)
    nb = hi - lo
    rng = block_rng(seed, block)
    draws = rng.choice(len(steps), size=(nb, horizon), p=probs)
    incs = steps[draws]
    pos = np.cumsum(incs, axis=1)
    final = pos[:, -1]
    tail = pos[:, -STABLE_STEPS:]
    sign_stable = (np.all(tail > 0, axis=1) | np.all(tail < 0, axis=1))
    ok = (np.abs(final) >= ESCAPE_SLACK) & sign_stable
    counts = Counter()
    pos_count = int(np.sum(ok & (final > 0)))
    neg_count = int(np.sum(ok & (final < 0)))
    counts["+inf"] = pos_count
    counts["-inf"] = neg_count
    return counts, int(nb - pos_count - neg_count)


def default_horizon(G: GroupModel, depth: int) -> int:
    if G.kind == "free":
        return 2 * (depth + ESCAPE_SLACK) + STABLE_STEPS + 64
    if G.kind == "wreath":
        return 320
    return 256


def harmonic_measure_estimate(w: WalkSpec, depth: int, n_samples: int,
                              seed: int, workers: int = 1,
                              horizon: int | None = None) -> MeasureModel:
    """Exit distribution of the walk on its boundary model.

    Free groups return a depth-D cylinder measure, lattices (d=1) the
    two-end bins, wreath groups window bins (drift sign, lamp pattern on
    [-5, 5], reported at window 2); per-cell standard errors are binomial
    in the converged count.  A non-convergence rate above 1% aborts with
    the rate in the report.
    """
    if n_samples < 1000:
        raise ValueError("need at least 1000 samples")
    G = w.group
    if horizon is None:
        horizon = default_horizon(G, depth)
    if G.kind == "free":
        if _free_letter_steps(w) is None:
            raise UnsupportedGroupError(
                "fast estimator needs single-letter steps; longer supports "
                "are out of scope"
            )
        runner = lambda b: _free_block(w, depth, seed, b, n_samples, horizon)
    elif G.kind == "wreath":
        if _wreath_case_steps(w) is None:
            raise UnsupportedGroupError(
                "wreath estimator needs lamp-at-origin and unit translation "
                "steps"
            )
        runner = lambda b: _wreath_block(w, seed, b, n_samples, horizon)
    elif G.kind == "lattice" and G.params[0] == 1:
        runner = lambda b: _lattice_block(w, seed, b, n_samples, horizon)
    else:
        raise UnsupportedGroupError(
            f"no boundary model for sampling on {G.spec()}"
        )
    nblocks = block_count(n_samples)
    counts = Counter()
    bad = 0
    if workers <= 1:
        for c, b in map(runner, range(nblocks)):
            counts.update(c)
            bad += b
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for c, b in pool.map(runner, range(nblocks)):
                counts.update(c)
                bad += b
    n_conv = n_samples - bad
    rate = bad / n_samples
    if rate > MAX_NONCONVERGED:
        raise SamplingError(
            f"non-convergence rate {rate:.3%} above "
            f"{MAX_NONCONVERGED:.0%}",
            report={"nonconverged": rate, "n_samples": n_samples,
                    "horizon": horizon},
        )
    if n_conv <= 0:
        raise SamplingError("no converged paths", report={"rate": rate})
    masses = {cell: c / n_conv for cell, c in counts.items()}
    se = {cell: math.sqrt(m * (1.0 - m) / n_conv)
          for cell, m in masses.items()}
    if G.kind == "free":
        return MeasureModel.cylinder(G, depth, masses, se, nonconverged=rate,
                                     note=f"harmonic estimate, n={n_samples}",
                                     n_eff=n_conv)
    note = (f"harmonic estimate, n={n_samples}, window "
            f"[-{WREATH_WINDOW_STORE},{WREATH_WINDOW_STORE}]"
            if G.kind == "wreath" else f"harmonic estimate, n={n_samples}")
    return MeasureModel.binned(G, masses, se, nonconverged=rate, note=note,
                               n_eff=n_conv)


# -- identity checks on estimated measures -------------------------------------


def rn_identity_check(t, nu: MeasureModel, g: GroupElement, B):
    """Residual and z-score of nu(g^{-1} B) = integral over B of K(g, .).

    B is a cylinder word tuple on the free boundary.  The integral uses
    exact tree kernels on subcells fine enough that K(g, .) is constant,
    so the only stochastic error is the Monte Carlo mass error.
    """
    from .conformal import conformality_residual

    res, err = conformality_residual(t, nu, 1.0, g, B)
    z = res / err if err > 0 else (0.0 if res <= 1e-12 else math.inf)
    return res, z


def stationarity_residual(w: WalkSpec, m: MeasureModel, B):
    """|sum_s mu(s) m(s^{-1}B) - m(B)| with its standard error."""
    from .conformal import cell_pullback_mass

    base, base_se = cell_pullback_mass(m, w.group.identity(), B)
    total = 0.0
    var = base_se**2
    for s, p in w.steps:
        val, se = cell_pullback_mass(m, s, B)
        total += p * val
        var += (p * se) ** 2
    return abs(total - base), math.sqrt(var)
