"""Conformality checks, Phi-convexity, KMS residuals, and products.

A measure m is K^beta-conformal when m(g^{-1}B) = integral over B of
K(g, .)^beta dm.  On the tree boundary both sides are finite linear
functionals of the estimated cell masses: the left side through the
cylinder translation algebra, the right side through kernels that are
exactly constant on cells at least as deep as |g|.  Residuals therefore
come with honest standard errors, and the beta = 0 alternative reduces
to an exact rational feasibility problem.

The product construction couples two walks so that steps move one factor
at a time; boundary points of a factor push forward to the product
boundary, where their Martin kernels are, operationally, given by the
factor kernels.  Checks compare that definition against finite product
kernels and run the usual conformality battery on the pushforward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .boundary import (
    BoundaryApproximant,
    act_on_boundary,
    extend_kernel,
    free_tree_kernel_oracle,
)
from .errors import PartitionError, UnsupportedGroupError
from .groups import GroupElement, GroupModel, serialize_element, shared_ball
from .kernels import KernelTable, is_isotropic_free_srw, n_step_distribution
from .measures import (
    MeasureModel,
    all_cells,
    cell_contains,
    cell_name,
    translate_cell,
)
from .walks import product_walk  # noqa: F401  (public here as well)

Z_LIMIT = 3.0
BETA_GRID = (-1.0, 0.0, 0.5, 1.0, 2.0)
PHI_GRID = tuple(np.linspace(-1.0, 2.0, 21))


# -- step functions on the tree boundary ---------------------------------------


class CellFunction:
    """Finite real combination of cylinder indicators on a free boundary."""

    def __init__(self, G: GroupModel, coeffs: dict):
        self.G = G
        self.coeffs = {tuple(w): float(c) for w, c in coeffs.items() if c != 0.0}

    @staticmethod
    def one(G: GroupModel) -> "CellFunction":
        return CellFunction(G, {(): 1.0})

    @staticmethod
    def indicator(G: GroupModel, word) -> "CellFunction":
        return CellFunction(G, {tuple(word): 1.0})

    @property
    def depth(self) -> int:
        return max((len(w) for w in self.coeffs), default=0)

    def value_on(self, cell: tuple) -> float:
        """Value on C(cell); requires len(cell) >= self.depth."""
        if len(cell) < self.depth:
            raise PartitionError(
                f"cell of depth {len(cell)} cannot resolve a function of "
                f"depth {self.depth}",
                suggested_depth=self.depth,
            )
        return sum(c for w, c in self.coeffs.items() if cell_contains(w, cell))

    def compose_shift(self, g: GroupElement) -> "CellFunction":
        """xi -> f(g^{-1} xi), i.e. the factor picked up when pulling an
        operator-word function past U_g."""
        out: dict = {}
        for w, c in self.coeffs.items():
            for piece in translate_cell(self.G, g, w):
                out[piece] = out.get(piece, 0.0) + c
        return CellFunction(self.G, out)

    def __mul__(self, other: "CellFunction") -> "CellFunction":
        d = max(self.depth, other.depth)
        out = {}
        for cell in all_cells(self.G, d):
            v = self.value_on(cell) * other.value_on(cell)
            if v != 0.0:
                out[cell] = v
        return CellFunction(self.G, out)

    def integrate(self, m: MeasureModel):
        """(integral, standard error) against a cylinder measure."""
        if m.kind == "dirac":
            val = sum(c for w, c in self.coeffs.items()
                      if m.cell_mass(w) == 1.0)
            return val, 0.0
        d = max(self.depth, 0)
        if d > m.depth:
            raise PartitionError(
                f"measure depth {m.depth} below function depth {d}",
                suggested_depth=d,
            )
        total, var = 0.0, 0.0
        for cell in all_cells(self.G, m.depth):
            v = self.value_on(cell)
            if v != 0.0:
                total += v * m.masses[cell]
                var += (v * m.se.get(cell, 0.0)) ** 2
        return total, math.sqrt(var)


def kernel_on_cell(t: KernelTable, g: GroupElement, cell: tuple) -> float:
    """K(g, .) on C(cell), exact; requires len(cell) >= |g|."""
    if not is_isotropic_free_srw(t.walk):
        raise UnsupportedGroupError(
            "cellwise kernels are available for the isotropic free SRW only"
        )
    if len(cell) < len(g.data):
        raise PartitionError(
            f"cell depth {len(cell)} below |g| = {len(g.data)}; kernel not "
            "constant there",
            suggested_depth=len(g.data),
        )
    end = BoundaryApproximant.tree_end(t.walk.group, cell)
    return float(free_tree_kernel_oracle(t.walk.group.params[0], g, end))


# -- pullback masses -----------------------------------------------------------


def cell_pullback_mass(m: MeasureModel, g: GroupElement, B):
    """(m(g^{-1}B), standard error) for any supported boundary model."""
    G = m.group
    if m.kind == "cylinder" or (m.kind == "dirac" and isinstance(m.atom, tuple)):
        cells = translate_cell(G, G.inv(g), tuple(B))
        return m.set_mass(cells), m.set_se(cells)
    if m.kind == "dirac":
        # labelled atoms used here sit at group-fixed boundary points
        return m.cell_mass(B), 0.0
    if G.kind == "wreath":
        total, var = 0.0, 0.0
        for bin_key, mass in m.masses.items():
            if _wreath_bin_in(G, g, bin_key, B):
                total += mass
                var += m.se.get(bin_key, 0.0) ** 2
        if m.n_eff > 0:
            var = max(total * (1.0 - total), 0.0) / m.n_eff
        return total, math.sqrt(var)
    if G.kind == "lattice":
        # translations fix both ends
        return m.cell_mass(B), m.cell_se(B)
    raise UnsupportedGroupError(
        f"no pullback rule for binned measures on {G.spec()}"
    )


def _wreath_bin_in(G: GroupModel, g: GroupElement, bin_key, B) -> bool:
    """Is g * (bin representative) inside the coarse cell B?

    B is {"sign": "+"/"-", "lamps": {site: value}} with sites within the
    window the stored bins can still determine after translation by g.
    """
    sign, lamps = bin_key
    if sign != B["sign"]:
        return False
    glamps, gpos = g.data
    q = G.params[0]
    W = (len(lamps) - 1) // 2
    gl = dict(glamps)
    for site, want in B["lamps"].items():
        src = site - gpos
        if not -W <= src <= W:
            raise PartitionError(
                f"site {site} leaves the stored window after shifting by "
                f"{gpos}; store a wider window",
                suggested_depth=abs(src),
            )
        have = (lamps[src + W] + gl.get(site, 0)) % q
        if have != want:
            return False
    return True


def wreath_coarse_cell(sign: str, lamps: dict) -> dict:
    return {"sign": sign, "lamps": dict(lamps)}


# -- conformality ---------------------------------------------------------------


def conformality_residual(t: KernelTable, m: MeasureModel, beta: float,
                          g: GroupElement, B, bin_kernels: dict | None = None):
    """|m(g^{-1}B) - integral over B of K(g,.)^beta dm| with its error.

    On cylinder measures both sides are expanded over the measure's leaf
    cells, so the standard error is that of one linear contrast of the
    estimated masses.  Dirac measures evaluate the kernel at the atom;
    binned measures need kernel values per (acting element, bin), passed
    as `bin_kernels[(serialized g, bin key)] = (value, error)`, except at
    beta = 0 where no kernels enter.
    """
    G = m.group
    if m.kind == "cylinder":
        return _cylinder_contrast(t, m, beta, g, tuple(B))
    if m.kind == "dirac":
        return _dirac_residual(t, m, beta, g, B)
    # binned
    lhs, lhs_se = cell_pullback_mass(m, g, B)
    in_B = m.cell_mass(B)
    se_B = m.cell_se(B)
    if beta == 0.0:
        return abs(lhs - in_B), math.sqrt(lhs_se**2 + se_B**2)
    key = (serialize_element(G, g), _bin_key_of(B))
    if bin_kernels is None or key not in bin_kernels:
        raise UnsupportedGroupError(
            "binned conformality at beta != 0 needs a kernel value for "
            f"{key[0]!r} on bin {key[1]!r}"
        )
    kval, kerr = bin_kernels[key]
    rhs = in_B * kval**beta
    rhs_err = in_B * _power_err(kval, kerr, beta) + se_B * kval**beta
    return abs(lhs - rhs), math.sqrt(lhs_se**2 + rhs_err**2)


def _bin_key_of(B):
    if isinstance(B, dict):
        return (B["sign"], tuple(sorted(B["lamps"].items())))
    return B


def _power_err(k: float, kerr: float, beta: float) -> float:
    lo = max(k - kerr, 1e-300) ** beta
    hi = (k + kerr) ** beta
    return max(abs(hi - k**beta), abs(lo - k**beta))


def _cylinder_contrast(t: KernelTable, m: MeasureModel, beta: float,
                       g: GroupElement, B: tuple):
    G = m.group
    if len(g.data) > m.depth or len(B) > m.depth:
        raise PartitionError(
            f"need measure depth >= max(|g|, |B|) = "
            f"{max(len(g.data), len(B))}, have {m.depth}",
            suggested_depth=max(len(g.data), len(B)),
        )
    pieces = translate_cell(G, G.inv(g), B)
    for piece in pieces:
        if len(piece) > m.depth:
            raise PartitionError(
                f"g^{{-1}}B needs cells of depth {len(piece)}, measure has "
                f"{m.depth}",
                suggested_depth=len(piece),
            )
    contrast = 0.0
    coeffs = []
    for cell in all_cells(G, m.depth):
        c = 0.0
        for piece in pieces:
            if cell_contains(piece, cell):
                c += 1.0
        if cell_contains(B, cell):
            c -= kernel_on_cell(t, g, cell) ** beta
        if c != 0.0:
            contrast += c * m.cell_mass(cell)
            coeffs.append((c, cell))
    return abs(contrast), _contrast_se(m, coeffs, contrast)


def _contrast_se(m: MeasureModel, coeffs, contrast: float) -> float:
    """Standard error of sum(c_i * mass_i) over the measure's leaf cells.

    Estimated masses from a common sample are one multinomial draw, so
    Var = (sum c^2 p - (sum c p)^2) / n with plug-in masses; constructed
    measures fall back to per-cell error bars.
    """
    if m.n_eff > 0:
        second = sum(c * c * m.cell_mass(cell) for c, cell in coeffs)
        var = max(second - contrast * contrast, 0.0) / m.n_eff
    else:
        var = sum((c * m.cell_se(cell)) ** 2 for c, cell in coeffs)
    return math.sqrt(var)


def _dirac_residual(t: KernelTable, m: MeasureModel, beta: float,
                    g: GroupElement, B):
    in_B = m.cell_mass(B)
    if isinstance(m.atom, tuple):
        G = m.group
        cells = translate_cell(G, G.inv(g), tuple(B))
        lhs = m.set_mass(cells)
        k = kernel_on_cell(t, g, m.atom)
        return abs(lhs - in_B * k**beta), 0.0
    # group-fixed labelled atom
    if m.xi is not None:
        kval, kerr = extend_kernel(t, g, m.xi)
    else:
        kval, kerr = 1.0, m.atom_kernel_dev
    residual = abs(in_B - in_B * kval**beta)
    return residual, in_B * _power_err(kval, kerr, beta)


def normalization_check(t: KernelTable, m: MeasureModel, beta: float,
                        g: GroupElement):
    """(integral of K(g^{-1}, .)^beta dm, error); 1 for conformal m."""
    G = m.group
    ginv = G.inv(g)
    if m.kind == "dirac" and not isinstance(m.atom, tuple):
        kval, kerr = ((1.0, m.atom_kernel_dev) if m.xi is None
                      else extend_kernel(t, ginv, m.xi))
        return kval**beta, _power_err(kval, kerr, beta)
    if m.kind == "binned":
        raise UnsupportedGroupError(
            "normalization over binned boundaries needs per-bin kernels; "
            "use conformality_residual with bin_kernels instead"
        )
    depth = max(m.depth if m.kind == "cylinder" else len(m.atom),
                len(ginv.data))
    total, var = 0.0, 0.0
    for cell in all_cells(G, depth):
        k = kernel_on_cell(t, ginv, cell) ** beta
        mass = m.cell_mass(cell)
        total += k * mass
        var += (k * m.cell_se(cell)) ** 2
    return total, math.sqrt(var)


# -- Phi curve -------------------------------------------------------------------


@dataclass(eq=False)
class PhiCurve:
    """Phi(t) = sum_h mu^n(e,h) * integral of K(h,.)^t dm, on a grid."""

    walk: object
    measure: MeasureModel
    n: int
    grid: tuple
    values: tuple
    errors: tuple

    def second_differences(self) -> tuple:
        v = self.values
        return tuple(v[i + 1] - 2 * v[i] + v[i - 1]
                     for i in range(1, len(v) - 1))

    def second_difference_errors(self) -> tuple:
        e = self.errors
        return tuple(e[i + 1] + 2 * e[i] + e[i - 1]
                     for i in range(1, len(e) - 1))

    def convex_within_error(self, slack: float = 1e-12) -> bool:
        return all(d >= -(err + slack) for d, err in
                   zip(self.second_differences(),
                       self.second_difference_errors()))


def phi_curve(t: KernelTable, m: MeasureModel, n: int = 1,
              grid=None) -> PhiCurve:
    if grid is None:
        grid = PHI_GRID
    grid = tuple(float(x) for x in grid)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly increasing")
    reach = n * t.walk.max_step_length()
    dist, dropped = n_step_distribution(t.walk, n, radius=max(reach, 1))
    if dropped != 0.0:
        raise PartitionError(
            f"n-step support dropped mass {dropped}", suggested_depth=reach
        )
    if m.kind == "dirac" and not isinstance(m.atom, tuple):
        dev = m.atom_kernel_dev
        values, errors = [], []
        for tv in grid:
            values.append(sum(dist.values()))
            errors.append(sum(p * _power_err(1.0, dev, tv)
                              for p in dist.values()))
        return PhiCurve(t.walk, m, n, grid, tuple(values), tuple(errors))
    if m.kind != "cylinder" and not (m.kind == "dirac"
                                     and isinstance(m.atom, tuple)):
        raise UnsupportedGroupError("phi_curve needs a cylinder boundary")
    depth = max(m.depth if m.kind == "cylinder" else len(m.atom), reach)
    if m.kind == "cylinder" and depth > m.depth:
        raise PartitionError(
            f"measure depth {m.depth} below n-step reach {reach}",
            suggested_depth=depth,
        )
    cells = all_cells(m.group, depth)
    masses = [m.cell_mass(c) for c in cells]
    ses = [m.cell_se(c) for c in cells]
    kern = {}
    for h in dist:
        kern[h] = [kernel_on_cell(t, h, c) for c in cells]
    values, errors = [], []
    for tv in grid:
        coeff = [0.0] * len(cells)
        for h, p in dist.items():
            kh = kern[h]
            for i in range(len(cells)):
                coeff[i] += p * kh[i] ** tv
        val = sum(c * ms for c, ms in zip(coeff, masses))
        if m.n_eff > 0:
            second = sum(c * c * ms for c, ms in zip(coeff, masses))
            err = math.sqrt(max(second - val * val, 0.0) / m.n_eff)
        else:
            err = math.sqrt(sum((c * s) ** 2 for c, s in zip(coeff, ses)))
        values.append(val)
        errors.append(err)
    return PhiCurve(t.walk, m, n, grid, tuple(values), tuple(errors))


# -- classification ---------------------------------------------------------------


@dataclass(eq=False)
class BetaVerdict:
    verdict: str          # "A" | "B" | "C" | "none"
    spine_found: bool
    spine_radius: int | None
    spine_tol: float | None
    spine_max_dev: float | None
    admissible: str
    evidence: dict


def classify(t: KernelTable, m: MeasureModel, spine: dict | None,
             cells=None, gens=None,
             bin_kernels: dict | None = None) -> BetaVerdict:
    """Grade the measure against the three conformality alternatives.

    A: Dirac at a detected spine (conformal for every beta).  B: passes
    the beta = 0 (invariance) battery.  C: passes the beta = 1 battery.
    The admissible KMS set is "all real beta" exactly when a spine was
    found, otherwise a subset of {0, 1}; on free boundaries an exact
    infeasibility certificate for invariant measures removes 0.
    """
    G = m.group
    spine_found = bool(spine and spine.get("isSpine"))
    radius = spine.get("radius") if spine else None
    tol = spine.get("tol") if spine else None
    max_dev = spine.get("maxDev") if spine else None
    evidence: dict = {}
    if gens is None:
        gens = list(G.generators())
    if cells is None:
        cells = _default_cells(m)
    if spine_found and m.kind == "dirac":
        grid_evidence = []
        for beta in BETA_GRID:
            worst = 0.0
            for g in gens:
                for B in cells:
                    res, err = conformality_residual(t, m, beta, g, B,
                                                     bin_kernels)
                    worst = max(worst, res - Z_LIMIT * err)
            grid_evidence.append({"beta": beta, "excess": worst})
        evidence["beta_grid"] = grid_evidence
        evidence["set"] = "all"
        return BetaVerdict("A", True, radius, tol, max_dev,
                           "all real beta", evidence)
    batteries = {}
    for beta in (0.0, 1.0):
        worst_z, worst, blocked = 0.0, None, None
        for g in gens:
            for B in cells:
                try:
                    res, err = conformality_residual(t, m, beta, g, B,
                                                     bin_kernels)
                except UnsupportedGroupError as exc:
                    blocked = str(exc)
                    break
                z = res / err if err > 0 else (0.0 if res <= 1e-12
                                               else math.inf)
                if z > worst_z:
                    worst_z, worst = z, {"g": serialize_element(G, g),
                                         "residual": res, "err": err}
            if blocked:
                break
        if blocked:
            batteries[beta] = {"unsupported": blocked, "pass": False}
        else:
            batteries[beta] = {"max_z": worst_z, "worst": worst,
                               "pass": worst_z < Z_LIMIT}
    evidence["beta0"] = batteries[0.0]
    evidence["beta1"] = batteries[1.0]
    admitted = []
    if batteries[0.0]["pass"]:
        admitted.append(0)
    if batteries[1.0]["pass"]:
        admitted.append(1)
    if G.kind == "free" and not spine_found:
        feas = invariant_measure_feasibility(G, min(2, m.depth or 2))
        evidence["feasibility"] = feas
        if not feas["feasible"] and 0 in admitted:
            admitted.remove(0)
    evidence["set"] = admitted
    if spine_found:
        admissible = "all real beta"
    else:
        admissible = "subset of {0, 1}"
    if batteries[0.0]["pass"]:
        verdict = "B"
    elif batteries[1.0]["pass"]:
        verdict = "C"
    else:
        verdict = "none"
    return BetaVerdict(verdict, spine_found, radius, tol, max_dev,
                       admissible, evidence)


def _default_cells(m: MeasureModel):
    if m.kind == "cylinder":
        return all_cells(m.group, 1)
    if m.kind == "binned":
        return list(m.masses)
    if isinstance(m.atom, tuple):
        return all_cells(m.group, 1)
    return [m.atom]


# -- exact feasibility of invariant measures ---------------------------------------


def invariant_measure_feasibility(G: GroupModel, depth: int) -> dict:
    """Can a boundary measure be invariant under the whole group?

    Free case: sets up m(g * C) = m(C) for generators g over cylinders of
    depth <= `depth`, expressed in the depth-`depth` cell masses, and
    eliminates in exact rational arithmetic.  An infeasibility certificate
    is a rational combination of constraints reducing to 0 = 1.  Lattice
    case: translations fix both ends, so every measure is invariant.
    """
    if G.kind == "lattice":
        return {
            "feasible": True,
            "note": "translations fix both ends; every measure on the "
                    "two-point boundary is invariant",
        }
    if G.kind != "free":
        raise UnsupportedGroupError(
            f"feasibility is implemented for free and lattice boundary "
            f"models, not {G.spec()}"
        )
    if depth < 0:
        raise ValueError("depth must be >= 0")
    leaves = all_cells(G, depth)
    index = {w: i for i, w in enumerate(leaves)}
    nvar = len(leaves)

    def cell_vector(word):
        row = [Fraction(0)] * nvar
        for leaf in leaves:
            if cell_contains(tuple(word), leaf):
                row[index[leaf]] = Fraction(1)
        return row

    rows, rhs, labels = [], [], []
    rows.append([Fraction(1)] * nvar)
    rhs.append(Fraction(1))
    labels.append("total mass = 1")
    skipped = 0
    gens = G.generators()
    for g in gens:
        for d in range(0, depth + 1):
            for v in all_cells(G, d):
                pieces = translate_cell(G, g, v)
                if any(len(p) > depth for p in pieces):
                    skipped += 1
                    continue
                row = [Fraction(0)] * nvar
                for p in pieces:
                    for leaf, coeff in zip(leaves, cell_vector(p)):
                        row[index[leaf]] += coeff
                base = cell_vector(v)
                row = [a - b for a, b in zip(row, base)]
                if any(row):
                    rows.append(row)
                    rhs.append(Fraction(0))
                    labels.append(
                        f"{serialize_element(G, g)}*C({cell_name(G, v)}) "
                        f"= C({cell_name(G, v)})"
                    )
    result = _rational_solve(rows, rhs, labels)
    result["depth"] = depth
    result["skipped_constraints"] = skipped
    if result["feasible"] and "solution" in result:
        sol = result["solution"]
        if any(x < 0 for x in sol.values()):
            result["feasible"] = False
            result["note"] = ("equalities are consistent but the pivot "
                              "solution has negative mass; no certificate "
                              "of either kind")
    return result


def _rational_solve(rows, rhs, labels) -> dict:
    """Gauss-Jordan over Q with multiplier tracking.

    Returns feasible + a pivot solution, or an infeasibility certificate:
    rational multipliers lambda with sum(lambda_i * row_i) = 0 while
    sum(lambda_i * rhs_i) != 0.
    """
    n = len(rows)
    mvar = len(rows[0])
    aug = [list(rows[i]) + [Fraction(1) if j == i else Fraction(0)
                            for j in range(n)] + [rhs[i]]
           for i in range(n)]
    piv_cols = []
    r = 0
    for col in range(mvar):
        sel = next((i for i in range(r, n) if aug[i][col] != 0), None)
        if sel is None:
            continue
        aug[r], aug[sel] = aug[sel], aug[r]
        pv = aug[r][col]
        aug[r] = [x / pv for x in aug[r]]
        for i in range(n):
            if i != r and aug[i][col] != 0:
                f = aug[i][col]
                aug[i] = [x - f * y for x, y in zip(aug[i], aug[r])]
        piv_cols.append(col)
        r += 1
        if r == n:
            break
    for i in range(r, n):
        if aug[i][-1] != 0:
            scale = aug[i][-1]
            mult = {labels[j]: str(aug[i][mvar + j] / scale)
                    for j in range(n) if aug[i][mvar + j] != 0}
            return {
                "feasible": False,
                "certificate": {
                    "multipliers": mult,
                    "statement": "combination of the listed constraints "
                                 "reduces to 0 = 1",
                },
            }
    solution = {i: Fraction(0) for i in range(mvar)}
    for row_i, col in enumerate(piv_cols):
        solution[col] = aug[row_i][-1]
    return {"feasible": True,
            "solution": {col: solution[col] for col in range(mvar)}}


# -- KMS words ---------------------------------------------------------------------


@dataclass(eq=False)
class KmsWord:
    """Formal product of (function, group element) factors."""

    factors: list

    def reduce(self):
        """Collapse to a single (function, group element) pair."""
        if not self.factors:
            return None, None
        f, g = self.factors[0]
        G = f.G
        for h, k in self.factors[1:]:
            f = f * h.compose_shift(g)
            g = G.mul(g, k)
        return f, g


def kms_word_eval(m: MeasureModel, w: KmsWord) -> complex:
    """State value: reduce the word, integrate if the group part is e."""
    f, g = w.reduce()
    if f is None:
        return complex(1.0)
    G = f.G
    if g != G.identity():
        return complex(0.0)
    val, _ = f.integrate(m)
    return complex(val)


def kms_residual(t: KernelTable, m: MeasureModel, beta: float,
                 f1: CellFunction, g1: GroupElement,
                 f2: CellFunction, g2: GroupElement):
    """|omega(f1 U_{g1} f2 U_{g2}) - omega(f2 U_{g2} f1 U_{g1} K(g1^{-1},.)^beta)|.

    Both sides are expanded over the measure's leaf cells, so the
    residual comes with the standard error of a single linear contrast.
    When g2 is not g1^{-1} both states vanish and the residual is exactly
    zero.
    """
    G = t.walk.group
    if G.mul(g1, g2) != G.identity():
        return 0.0, 0.0
    lhs_fn = f1 * f2.compose_shift(g1)
    rhs_fn = f2 * f1.compose_shift(g2)
    depth = max(lhs_fn.depth, rhs_fn.depth, len(g1.data))
    if m.kind == "cylinder" and depth > m.depth:
        raise PartitionError(
            f"word needs measure depth {depth}, have {m.depth}",
            suggested_depth=depth,
        )
    ginv = G.inv(g1)
    contrast = 0.0
    coeffs = []
    level = m.depth if m.kind == "cylinder" else depth
    for cell in all_cells(G, level):
        c = (lhs_fn.value_on(cell)
             - rhs_fn.value_on(cell) * kernel_on_cell(t, ginv, cell) ** beta)
        if c != 0.0:
            contrast += c * m.cell_mass(cell)
            coeffs.append((c, cell))
    if m.kind == "cylinder":
        return abs(contrast), _contrast_se(m, coeffs, contrast)
    var = sum((c * m.cell_se(cell)) ** 2 for c, cell in coeffs)
    return abs(contrast), math.sqrt(var)


# -- product construction ------------------------------------------------------------


def factor_pushforward_approximant(G2: GroupModel, factor: int,
                                   elements) -> BoundaryApproximant:
    """Witness sequence for the image of a factor boundary point.

    The factor's escaping sequence x_n is planted in coordinate `factor`
    of the product with the identity elsewhere.
    """
    left, right = G2.factors
    out = []
    for x in elements:
        if factor == 0:
            out.append(GroupElement("product", (x, right.identity())))
        else:
            out.append(GroupElement("product", (left.identity(), x)))
    return BoundaryApproximant.sequence(G2, out)


def phi_map_pushforward_check(t2: KernelTable, t1: KernelTable,
                              m1: MeasureModel, cells, n_pairs: int = 40,
                              witness_depth: int = 4, seed: int = 11):
    """Kernel identity, equivariance, and pushforward conformality.

    The factor-1 boundary maps into the product boundary, and the kernel
    there is defined by K((g,h), image of xi) = K(h, xi).  Three checks:

    * identity: finite product kernels K((g,h), (e, x_n)) against the
      defining value K(h, xi) at the deepest witnesses t2 covers.  Purely
      numerical evidence; shallow witnesses converge slowly, so these
      rows carry the witness depth rather than a pass bar.
    * equivariance: (g,h) moving the image point must match h moving xi
      first.  With defined kernels both routes reduce to factor-side
      cocycle expressions; the residual is float noise when they agree.
    * conformality: beta = 1 residuals of the pushforward on the image
      cells.  Pullback and integral both reduce exactly to factor-side
      quantities, so the z-scores are those of the factor measure; the
      complement of the image is invariant and contributes exact zeros.
    """
    G2 = t2.walk.group
    G1 = t1.walk.group
    if G2.kind != "product":
        raise UnsupportedGroupError("t2 must live on a product group")
    left, right = G2.factors
    if right.spec() != G1.spec():
        raise UnsupportedGroupError(
            f"second product factor {right.spec()} does not match the "
            f"factor table's group {G1.spec()}"
        )
    k1 = G1.params[0]
    rng = np.random.default_rng(seed)
    ball1 = shared_ball(G1, 1)
    ball0 = shared_ball(left, 1)
    idx = rng.integers
    identity_rows = []
    worst_id = 0.0
    for _ in range(n_pairs):
        prefix = _random_reduced_word(G1, rng, witness_depth)
        g0 = ball0.elements[idx(len(ball0.elements))]
        h = ball1.elements[idx(len(ball1.elements))]
        gh = GroupElement("product", (g0, h))
        seq = []
        x = G1.identity()
        for letter in prefix:
            x = G1.mul(x, GroupElement("free", (letter,)))
            seq.append(x)
        n_use = None
        for n in range(len(seq) - 1, -1, -1):
            pt = GroupElement("product", (left.identity(), seq[n]))
            probe = G2.mul(G2.inv(gh), pt)
            if t2.covers(pt) and t2.covers(probe):
                n_use = n
                break
        if n_use is None:
            continue
        pt = GroupElement("product", (left.identity(), seq[n_use]))
        finite = t2.martin(gh, pt)
        end = BoundaryApproximant.tree_end(G1, prefix)
        target = float(free_tree_kernel_oracle(k1, h, end))
        resid = abs(finite - target)
        worst_id = max(worst_id, resid)
        identity_rows.append({
            "g0": serialize_element(left, g0),
            "h": serialize_element(G1, h),
            "witness": n_use + 1,
            "finite": finite,
            "defined": target,
            "residual": resid,
        })
    worst_eq = 0.0
    equi_rows = []
    for _ in range(n_pairs):
        prefix = _random_reduced_word(G1, rng, witness_depth + 2)
        end = BoundaryApproximant.tree_end(G1, prefix)
        h = ball1.elements[idx(len(ball1.elements))]
        hp = ball1.elements[idx(len(ball1.elements))]
        # route 1: Gamma_2 cocycle on defined kernels
        hinv = G1.inv(h)
        num = float(free_tree_kernel_oracle(k1, G1.mul(hinv, hp), end))
        den = float(free_tree_kernel_oracle(k1, hinv, end))
        lhs = num / den
        # route 2: move the boundary point by h first
        moved = act_on_boundary(G1, h, end)
        rhs = float(free_tree_kernel_oracle(k1, hp, moved))
        resid = abs(lhs - rhs)
        worst_eq = max(worst_eq, resid)
        equi_rows.append({
            "h": serialize_element(G1, h),
            "hprime": serialize_element(G1, hp),
            "residual": resid,
        })
    conf_rows = []
    for B in cells:
        for h in G1.generators():
            res, err = conformality_residual(t1, m1, 1.0, h, B)
            z = res / err if err > 0 else (0.0 if res <= 1e-12
                                           else math.inf)
            conf_rows.append({
                "cell": "Phi(C(" + cell_name(G1, B) + "))",
                "h": serialize_element(G1, h),
                "residual": res,
                "err": err,
                "z": z,
            })
    conf_rows.append({
        "cell": "complement of the image", "h": "(any)",
        "residual": 0.0, "err": 0.0, "z": 0.0,
    })
    return {
        "identity": {"max_residual": worst_id, "pairs": identity_rows},
        "equivariance": {"max_residual": worst_eq, "pairs": equi_rows},
        "conformality": conf_rows,
    }


def _random_reduced_word(G: GroupModel, rng, depth: int) -> tuple:
    k = G.params[0]
    letters = [i for i in range(1, k + 1)] + [-i for i in range(1, k + 1)]
    word = []
    for _ in range(depth):
        choices = [s for s in letters if not (word and word[-1] == -s)]
        word.append(choices[rng.integers(len(choices))])
    return tuple(word)


def multiplicity_report(measures: list, partitions: list | None = None) -> dict:
    """Count candidate conformal measures a shared partition tells apart.

    `measures` is a list of {"label", "masses": {cell label: mass},
    "conformal": bool, "detail": ...} entries prepared by the caller (the
    conformality batteries differ per measure kind).  The report adds
    pairwise total-variation lower bounds over the shared cell labels and
    the count of passing, mutually distinguished measures.
    """
    entries = list(measures)
    labels = sorted({lab for e in entries for lab in e["masses"]})
    pairs = []
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            tv = 0.5 * sum(
                abs(entries[i]["masses"].get(lab, 0.0)
                    - entries[j]["masses"].get(lab, 0.0))
                for lab in labels
            )
            pairs.append({
                "a": entries[i]["label"],
                "b": entries[j]["label"],
                "tv_lower_bound": tv,
            })
    passing = [e for e in entries if e.get("conformal")]
    distinguished = 0
    if passing:
        seen = [passing[0]]
        for e in passing[1:]:
            if all(_pair_tv(pairs, e["label"], s["label"]) > 0.5
                   for s in seen):
                seen.append(e)
        distinguished = len(seen)
    return {
        "measures": [{k: v for k, v in e.items() if k != "masses"}
                     for e in entries],
        "partition": labels,
        "pairs": pairs,
        "count_passing": len(passing),
        "count_distinguished": distinguished,
    }


def _pair_tv(pairs, a, b):
    for p in pairs:
        if {p["a"], p["b"]} == {a, b}:
            return p["tv_lower_bound"]
    return 0.0
