"""Measures on boundary models: cylinder algebras, bins, and atoms.

Free-group boundaries carry the cylinder algebra of reduced-word
prefixes.  Translating a cylinder by a group element stays inside the
algebra but may need deeper cells: g * C(v) is C(gv) when the product
keeps at least one letter of v, and otherwise splits into the cells of
v's one-letter extensions, handled by a short recursion.  Boundaries
without a word structure (the two ends of Z, the binned wreath boundary,
product partitions) use labelled cells instead.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

from .errors import PartitionError, UnsupportedGroupError
from .groups import GroupElement, GroupModel, parse_element, serialize_element

MASS_TOL = 1e-9


# -- cylinder words on the tree boundary --------------------------------------


def all_cells(G: GroupModel, depth: int) -> list:
    """Reduced words of exactly `depth` letters; depth 0 is the whole
    boundary."""
    if G.kind != "free":
        raise UnsupportedGroupError("cylinder cells exist on free groups only")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    k = G.params[0]
    letters = [i for i in range(1, k + 1)] + [-i for i in range(1, k + 1)]
    words = [()]
    for _ in range(depth):
        words = [w + (s,) for w in words for s in letters if not (w and w[-1] == -s)]
    return words


def cell_children(G: GroupModel, word: tuple) -> list:
    k = G.params[0]
    letters = [i for i in range(1, k + 1)] + [-i for i in range(1, k + 1)]
    return [word + (s,) for s in letters if not (word and word[-1] == -s)]


def cell_name(G: GroupModel, word: tuple) -> str:
    return serialize_element(G, GroupElement("free", tuple(word)))


def parse_cell(G: GroupModel, text: str) -> tuple:
    return parse_element(G, text).data


def translate_cell(G: GroupModel, g: GroupElement, word: tuple) -> list:
    """g * C(word) as a disjoint union of cells, returned as word tuples.

    When multiplying g onto the prefix cancels the whole prefix the image
    is no longer a single cylinder, so the cell is split into its
    one-letter extensions and the translation recurses; each extension
    either survives as C(g * extension) or splits again.  Recursion stops
    once prefixes outlast |g|.
    """
    word = tuple(word)
    if not word:
        return [()]
    out = []

    def visit(v: tuple):
        u = G.mul(g, GroupElement("free", v))
        if len(u.data) == len(g.data) - len(v):
            # the whole prefix cancelled into g; children decide
            for child in cell_children(G, v):
                visit(child)
        else:
            out.append(u.data)

    visit(word)
    return out


def cell_contains(prefix: tuple, word: tuple) -> bool:
    """True when C(word) is inside C(prefix)."""
    return len(word) >= len(prefix) and word[: len(prefix)] == prefix


# -- measure models ------------------------------------------------------------


@dataclass(eq=False)
class MeasureModel:
    """A measure on one of the supported boundary models.

    kind "cylinder": masses per depth-D reduced word on the free boundary.
    kind "binned": masses per named cell of a measurable partition (two
    ends of Z, wreath window bins, product factor cells).
    kind "dirac": unit atom; `atom` names the binned cell carrying it, or
    a word prefix on the free boundary, and `xi` keeps the approximant.
    """

    kind: str
    group: GroupModel
    depth: int = 0
    masses: dict = field(default_factory=dict)
    se: dict = field(default_factory=dict)
    nonconverged: float = 0.0
    xi: object = None
    atom: object = None
    note: str = ""
    # converged sample count; lets aggregated cells use the exact binomial
    # standard error instead of a root-sum over children
    n_eff: int = 0
    # for dirac atoms at scanned spine points: the spine scan's maxDev,
    # bounding how far K(g, atom) may sit from 1
    atom_kernel_dev: float = 0.0

    # -- constructors ---------------------------------------------------------

    @staticmethod
    def cylinder(G: GroupModel, depth: int, masses: dict, se: dict | None = None,
                 nonconverged: float = 0.0, note: str = "",
                 n_eff: int = 0) -> "MeasureModel":
        cells = all_cells(G, depth)
        filled = {w: float(masses.get(w, 0.0)) for w in cells}
        total = sum(filled.values())
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"cylinder masses sum to {total}, not 1")
        if any(v < -MASS_TOL for v in filled.values()):
            raise ValueError("negative cell mass")
        se = {w: float((se or {}).get(w, 0.0)) for w in cells}
        return MeasureModel("cylinder", G, depth=depth, masses=filled, se=se,
                            nonconverged=nonconverged, note=note, n_eff=n_eff)

    @staticmethod
    def binned(G: GroupModel, masses: dict, se: dict | None = None,
               nonconverged: float = 0.0, note: str = "",
               n_eff: int = 0) -> "MeasureModel":
        total = sum(masses.values())
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"bin masses sum to {total}, not 1")
        if any(v < -MASS_TOL for v in masses.values()):
            raise ValueError("negative bin mass")
        se = {k: float((se or {}).get(k, 0.0)) for k in masses}
        return MeasureModel("binned", G, masses=dict(masses), se=se,
                            nonconverged=nonconverged, note=note, n_eff=n_eff)

    @staticmethod
    def dirac(G: GroupModel, xi, atom, note: str = "",
              atom_kernel_dev: float = 0.0) -> "MeasureModel":
        """Unit atom at xi; `atom` is the word prefix (free) or bin label
        that contains it."""
        return MeasureModel("dirac", G, xi=xi, atom=atom, note=note,
                            atom_kernel_dev=atom_kernel_dev)

    # -- mass queries ----------------------------------------------------------

    def total_mass(self) -> float:
        if self.kind == "dirac":
            return 1.0
        return sum(self.masses.values())

    def cell_mass(self, cell) -> float:
        """Mass of one cell: a word tuple (any depth <= D) or bin label."""
        if self.kind == "dirac":
            return 1.0 if self._atom_in(cell) else 0.0
        if self.kind == "binned":
            if cell not in self.masses:
                raise PartitionError(f"unknown bin {cell!r}", suggested_depth=0)
            return self.masses[cell]
        word = tuple(cell)
        if len(word) > self.depth:
            raise PartitionError(
                f"cell at depth {len(word)} finer than measure depth "
                f"{self.depth}; re-estimate deeper",
                suggested_depth=len(word),
            )
        return sum(m for w, m in self.masses.items()
                   if cell_contains(word, w))

    def cell_se(self, cell) -> float:
        if self.kind == "dirac":
            return 0.0
        if self.kind == "binned":
            return self.se.get(cell, 0.0)
        word = tuple(cell)
        if self.n_eff > 0:
            m = self.cell_mass(cell)
            return math.sqrt(max(m * (1.0 - m), 0.0) / self.n_eff)
        var = sum(self.se[w] ** 2 for w in self.masses
                  if cell_contains(word, w))
        return math.sqrt(var)

    def set_mass(self, cells) -> float:
        """Mass of a disjoint union of cells."""
        return sum(self.cell_mass(c) for c in cells)

    def set_se(self, cells) -> float:
        if self.kind == "cylinder" and self.n_eff > 0:
            p = self.set_mass(cells)
            return math.sqrt(max(p * (1.0 - p), 0.0) / self.n_eff)
        return math.sqrt(sum(self.cell_se(c) ** 2 for c in cells))

    def _atom_in(self, cell) -> bool:
        if self.group.kind == "free" and isinstance(self.atom, tuple):
            word = tuple(cell)
            prefix = self.atom
            cut = min(len(word), len(prefix))
            if word[:cut] != prefix[:cut]:
                return False
            if len(word) > len(prefix):
                raise PartitionError(
                    f"atom known to depth {len(prefix)} cannot decide a "
                    f"depth-{len(word)} cell",
                    suggested_depth=len(word),
                )
            return True
        return cell == self.atom

    def max_cell_mass(self) -> float:
        """Atom diagnostic: the largest single-cell mass."""
        if self.kind == "dirac":
            return 1.0
        return max(self.masses.values())

    def cells(self) -> list:
        if self.kind == "dirac":
            return [self.atom]
        return sorted(self.masses, key=_cell_sort_key)

    # -- serialization ---------------------------------------------------------

    def to_json_dict(self) -> dict:
        cells = []
        if self.kind == "dirac":
            atom = (cell_name(self.group, self.atom)
                    if isinstance(self.atom, tuple) else str(self.atom))
            return {
                "kind": "dirac",
                "group": self.group.spec(),
                "atom": atom,
                "xi": self.xi.serialize() if self.xi is not None else None,
                "note": self.note,
            }
        for c in self.cells():
            name = cell_name(self.group, c) if self.kind == "cylinder" else str(c)
            cells.append({"cyl": name, "mass": self.masses[c],
                          "se": self.se.get(c, 0.0)})
        return {
            "kind": self.kind,
            "group": self.group.spec(),
            "depth": self.depth,
            "cells": cells,
            "nonconverged": self.nonconverged,
            "note": self.note,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["cyl", "mass", "se"])
        d = self.to_json_dict()
        for cell in d.get("cells", []):
            w.writerow([cell["cyl"], repr(cell["mass"]), repr(cell["se"])])
        w.writerow(["nonconverged", repr(d.get("nonconverged", 0.0)), ""])
        return buf.getvalue()


def _cell_sort_key(cell):
    if isinstance(cell, tuple):
        return (0, len(cell), cell)
    return (1, 0, str(cell))


def measure_from_json(G: GroupModel, data) -> MeasureModel:
    if isinstance(data, str):
        data = json.loads(data)
    kind = data.get("kind", "cylinder")
    if kind == "dirac":
        raise UnsupportedGroupError(
            "dirac measures are built from approximants, not JSON"
        )
    masses, se = {}, {}
    for cell in data["cells"]:
        key = parse_cell(G, cell["cyl"]) if kind == "cylinder" else cell["cyl"]
        masses[key] = float(cell["mass"])
        se[key] = float(cell.get("se", 0.0))
    nonconv = float(data.get("nonconverged", 0.0))
    note = data.get("note", "")
    if kind == "cylinder":
        return MeasureModel.cylinder(G, int(data["depth"]), masses, se,
                                     nonconv, note)
    return MeasureModel.binned(G, masses, se, nonconv, note)


def uniform_depth1_measure(G: GroupModel) -> MeasureModel:
    """Uniform mass on the depth-1 cylinders of a free boundary."""
    cells = all_cells(G, 1)
    n = len(cells)
    return MeasureModel.cylinder(G, 1, {w: 1.0 / n for w in cells},
                                 note="uniform depth-1")


def two_point_cells() -> list:
    return ["+inf", "-inf"]


def tree_exit_measure(G: GroupModel, depth: int) -> MeasureModel:
    """Exit law of the isotropic free SRW, exactly.

    By symmetry the first letter is uniform over the 2k directed
    generators and every later letter is uniform over the 2k - 1
    non-backtracking continuations, so C(w) carries
    (1/2k) * (1/(2k-1))^(|w|-1).
    """
    if G.kind != "free":
        raise UnsupportedGroupError("tree exit law needs a free group")
    k = G.params[0]
    masses = {}
    for w in all_cells(G, depth):
        masses[w] = (1.0 / (2 * k)) * (2 * k - 1) ** (-(len(w) - 1))
    return MeasureModel.cylinder(G, depth, masses, note="exact exit law")
