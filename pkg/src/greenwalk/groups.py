"""Canonical group models and word-metric balls.

Supported groups: free groups F_k (reduced words), lattices Z^d (integer
vectors), wreath products Z_q wr Z (finitely supported lamp configurations
together with a position), and direct products of any two of these.

Elements are immutable and hashable; every model fixes one canonical
representation per element, so dict/set membership is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .errors import ConfigError, RepresentationError, ResourceLimitError

BALL_CAP_DEFAULT = 5_000_000

_LETTERS = "abcdefghijklmnopqrstuvwxyz"


@dataclass(frozen=True)
class GroupElement:
    """One canonical group element.

    data layout by kind:
      free     -- reduced word, tuple of nonzero ints (+i generator, -i inverse)
      lattice  -- tuple of d ints
      wreath   -- (lamps, pos): lamps is a tuple of (site, value) pairs sorted
                  by site with values in 1..q-1; pos is an int
      product  -- (left element, right element)
    """

    kind: str
    data: tuple

    def __repr__(self):
        return f"GroupElement({self.kind}, {self.data!r})"


@dataclass(frozen=True)
class GroupModel:
    """A group together with its canonical generating set."""

    kind: str
    params: tuple
    factors: tuple = ()

    # -- constructors -------------------------------------------------------

    @staticmethod
    def free(k: int) -> "GroupModel":
        if k < 2:
            raise ConfigError(f"free group rank must be >= 2, got {k}", "k")
        return GroupModel("free", (k,))

    @staticmethod
    def lattice(d: int) -> "GroupModel":
        if d < 1:
            raise ConfigError(f"lattice dimension must be >= 1, got {d}", "d")
        return GroupModel("lattice", (d,))

    @staticmethod
    def wreath(q: int) -> "GroupModel":
        if q < 2:
            raise ConfigError(f"wreath lamp order must be >= 2, got {q}", "q")
        return GroupModel("wreath", (q,))

    @staticmethod
    def product(left: "GroupModel", right: "GroupModel") -> "GroupModel":
        return GroupModel("product", (), (left, right))

    # -- basics --------------------------------------------------------------

    def spec(self) -> str:
        if self.kind == "free":
            return f"free:{self.params[0]}"
        if self.kind == "lattice":
            return f"lattice:{self.params[0]}"
        if self.kind == "wreath":
            return f"wreath:{self.params[0]}"
        return f"product({self.factors[0].spec()},{self.factors[1].spec()})"

    def identity(self) -> GroupElement:
        if self.kind == "free":
            return GroupElement("free", ())
        if self.kind == "lattice":
            return GroupElement("lattice", (0,) * self.params[0])
        if self.kind == "wreath":
            return GroupElement("wreath", ((), 0))
        return GroupElement(
            "product",
            (self.factors[0].identity(), self.factors[1].identity()),
        )

    def check(self, a: GroupElement) -> None:
        """Reject elements that are not in canonical form for this group."""
        if a.kind != self.kind:
            raise RepresentationError(
                f"element kind {a.kind!r} does not match group {self.spec()!r}"
            )
        if self.kind == "free":
            k = self.params[0]
            word = a.data
            for s in word:
                if not isinstance(s, int) or s == 0 or abs(s) > k:
                    raise RepresentationError(
                        f"letter {s!r} out of range for {self.spec()}"
                    )
            for x, y in zip(word, word[1:]):
                if x == -y:
                    raise RepresentationError(
                        f"word {word!r} is not reduced"
                    )
        elif self.kind == "lattice":
            if len(a.data) != self.params[0] or not all(
                isinstance(x, int) for x in a.data
            ):
                raise RepresentationError(
                    f"expected {self.params[0]} integer coordinates, got "
                    f"{a.data!r}"
                )
        elif self.kind == "wreath":
            q = self.params[0]
            lamps, pos = a.data
            if not isinstance(pos, int) or list(lamps) != sorted(lamps):
                raise RepresentationError(f"malformed wreath data {a.data!r}")
            for site, val in lamps:
                if not isinstance(site, int) or not 1 <= val <= q - 1:
                    raise RepresentationError(
                        f"lamp ({site!r}, {val!r}) out of range for "
                        f"{self.spec()}"
                    )
        else:
            self.factors[0].check(a.data[0])
            self.factors[1].check(a.data[1])

    # -- group operations ----------------------------------------------------

    def mul(self, a: GroupElement, b: GroupElement) -> GroupElement:
        self.check(a)
        self.check(b)
        if self.kind == "free":
            return GroupElement("free", _free_concat(a.data, b.data))
        if self.kind == "lattice":
            return GroupElement(
                "lattice", tuple(x + y for x, y in zip(a.data, b.data))
            )
        if self.kind == "wreath":
            q = self.params[0]
            lamps_a, pos_a = a.data
            lamps_b, pos_b = b.data
            merged = dict(lamps_a)
            for site, val in lamps_b:
                s = site + pos_a
                v = (merged.get(s, 0) + val) % q
                if v:
                    merged[s] = v
                else:
                    merged.pop(s, None)
            return GroupElement(
                "wreath", (tuple(sorted(merged.items())), pos_a + pos_b)
            )
        left = self.factors[0].mul(a.data[0], b.data[0])
        right = self.factors[1].mul(a.data[1], b.data[1])
        return GroupElement("product", (left, right))

    def inv(self, a: GroupElement) -> GroupElement:
        self.check(a)
        if self.kind == "free":
            return GroupElement("free", tuple(-x for x in reversed(a.data)))
        if self.kind == "lattice":
            return GroupElement("lattice", tuple(-x for x in a.data))
        if self.kind == "wreath":
            q = self.params[0]
            lamps, pos = a.data
            flipped = tuple(
                sorted((site - pos, (q - val) % q) for site, val in lamps)
            )
            return GroupElement("wreath", (flipped, -pos))
        return GroupElement(
            "product",
            (self.factors[0].inv(a.data[0]), self.factors[1].inv(a.data[1])),
        )

    # -- generators ----------------------------------------------------------

    def generators(self) -> tuple[GroupElement, ...]:
        """Canonical symmetric generating set, duplicate-free.

        wreath: translations by +/-1 plus every lamp increment at the
        current position (for q=2 the single flip is its own inverse).
        """
        if self.kind == "free":
            k = self.params[0]
            gens = []
            for i in range(1, k + 1):
                gens.append(GroupElement("free", (i,)))
                gens.append(GroupElement("free", (-i,)))
            return tuple(gens)
        if self.kind == "lattice":
            d = self.params[0]
            gens = []
            for i in range(d):
                for sign in (1, -1):
                    vec = [0] * d
                    vec[i] = sign
                    gens.append(GroupElement("lattice", tuple(vec)))
            return tuple(gens)
        if self.kind == "wreath":
            q = self.params[0]
            gens = [
                GroupElement("wreath", ((), 1)),
                GroupElement("wreath", ((), -1)),
            ]
            for u in range(1, q):
                gens.append(GroupElement("wreath", (((0, u),), 0)))
            return tuple(gens)
        lid = self.factors[0].identity()
        rid = self.factors[1].identity()
        gens = [
            GroupElement("product", (s, rid))
            for s in self.factors[0].generators()
        ]
        gens += [
            GroupElement("product", (lid, s))
            for s in self.factors[1].generators()
        ]
        return tuple(gens)

    def word_length_hint(self, a: GroupElement) -> int | None:
        """Exact word length when a closed form exists, else None."""
        self.check(a)
        if self.kind == "free":
            return len(a.data)
        if self.kind == "lattice":
            return sum(abs(x) for x in a.data)
        if self.kind == "product":
            lh = self.factors[0].word_length_hint(a.data[0])
            rh = self.factors[1].word_length_hint(a.data[1])
            if lh is None or rh is None:
                return None
            return lh + rh
        return None


def _free_concat(a: tuple, b: tuple) -> tuple:
    """Concatenate two reduced words, cancelling at the junction."""
    out = list(a)
    for x in b:
        if out and out[-1] == -x:
            out.pop()
        else:
            out.append(x)
    return tuple(out)


# -- serialization ------------------------------------------------------------


def serialize_element(G: GroupModel, a: GroupElement) -> str:
    G.check(a)
    if G.kind == "free":
        if not a.data:
            return "e"
        k = G.params[0]
        if k <= 26:
            return "".join(
                _LETTERS[x - 1] if x > 0 else _LETTERS[-x - 1].upper()
                for x in a.data
            )
        return ".".join(f"{x:+d}" for x in a.data)
    if G.kind == "lattice":
        return "(" + ",".join(str(x) for x in a.data) + ")"
    if G.kind == "wreath":
        lamps, pos = a.data
        body = ",".join(f"{site}:{val}" for site, val in lamps)
        return "{" + body + "}@" + str(pos)
    left = serialize_element(G.factors[0], a.data[0])
    right = serialize_element(G.factors[1], a.data[1])
    return "[" + left + ";" + right + "]"


def parse_element(G: GroupModel, text: str) -> GroupElement:
    text = text.strip()
    try:
        return _parse_element(G, text)
    except (ValueError, IndexError) as exc:
        raise ConfigError(
            f"cannot parse element {text!r} for group {G.spec()!r}: {exc}",
            "elem",
        ) from None


def _parse_element(G: GroupModel, text: str) -> GroupElement:
    if G.kind == "free":
        k = G.params[0]
        if text == "e" or text == "":
            return G.identity()
        if "." in text or text.lstrip("+-").isdigit() and k > 26:
            letters = [int(p) for p in text.split(".")]
        else:
            letters = []
            for ch in text:
                idx = _LETTERS.find(ch.lower())
                if idx < 0 or idx >= k:
                    raise ValueError(f"letter {ch!r} out of range for F_{k}")
                letters.append(-(idx + 1) if ch.isupper() else idx + 1)
        word = _free_concat((), tuple(letters))
        if len(word) != len(letters):
            raise ValueError("word is not reduced")
        return GroupElement("free", word)
    if G.kind == "lattice":
        d = G.params[0]
        inner = text.strip()
        if inner.startswith("(") and inner.endswith(")"):
            inner = inner[1:-1]
        parts = [p for p in inner.split(",") if p.strip() != ""]
        if len(parts) != d:
            raise ValueError(f"expected {d} coordinates, got {len(parts)}")
        return GroupElement("lattice", tuple(int(p) for p in parts))
    if G.kind == "wreath":
        q = G.params[0]
        if "}@" not in text or not text.startswith("{"):
            raise ValueError("expected '{site:val,...}@pos'")
        body, pos_s = text[1:].split("}@", 1)
        lamps = {}
        if body:
            for item in body.split(","):
                site_s, val_s = item.split(":")
                site, val = int(site_s), int(val_s) % q
                if val == 0:
                    raise ValueError(f"lamp value at {site} reduces to zero")
                if site in lamps:
                    raise ValueError(f"duplicate lamp site {site}")
                lamps[site] = val
        return GroupElement("wreath", (tuple(sorted(lamps.items())), int(pos_s)))
    if not (text.startswith("[") and text.endswith("]")):
        raise ValueError("expected '[left;right]'")
    inner = text[1:-1]
    depth = 0
    for i, ch in enumerate(inner):
        if ch in "[{(":
            depth += 1
        elif ch in "]})":
            depth -= 1
        elif ch == ";" and depth == 0:
            left = _parse_element(G.factors[0], inner[:i])
            right = _parse_element(G.factors[1], inner[i + 1 :])
            return GroupElement("product", (left, right))
    raise ValueError("missing top-level ';' separator")


def parse_group(spec: str) -> GroupModel:
    """Parse a group spec: free:k, lattice:d, wreath:q, product(a,b)."""
    spec = spec.strip()
    if spec.startswith("product(") and spec.endswith(")"):
        inner = spec[len("product(") : -1]
        depth = 0
        for i, ch in enumerate(inner):
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
            elif ch == "," and depth == 0:
                return GroupModel.product(
                    parse_group(inner[:i]), parse_group(inner[i + 1 :])
                )
        raise ConfigError(f"malformed product spec {spec!r}", "group")
    if ":" in spec:
        head, _, arg = spec.partition(":")
        try:
            n = int(arg)
        except ValueError:
            raise ConfigError(f"non-integer parameter in {spec!r}", "group") from None
        if head == "free":
            return GroupModel.free(n)
        if head == "lattice":
            return GroupModel.lattice(n)
        if head == "wreath":
            return GroupModel.wreath(n)
    raise ConfigError(f"unknown group spec {spec!r}", "group")


# -- balls --------------------------------------------------------------------


class Ball:
    """All elements of word length <= radius, in a deterministic order.

    elements are sorted lexicographically by their serialized canonical
    form; `length` maps each element to its word length and `index` to its
    position in `elements`.
    """

    def __init__(self, group: GroupModel, radius: int,
                 elements: list, length: dict):
        self.group = group
        self.radius = radius
        self.elements = tuple(elements)
        self.length = length
        self.index = {a: i for i, a in enumerate(self.elements)}

    def __len__(self):
        return len(self.elements)

    def __contains__(self, a):
        return a in self.index

    def sphere_sizes(self) -> list[int]:
        sizes = [0] * (self.radius + 1)
        for a, d in self.length.items():
            sizes[d] += 1
        return sizes


def ball_enumerate(G: GroupModel, radius: int,
                   cap: int = BALL_CAP_DEFAULT) -> Ball:
    """Breadth-first enumeration of the ball B(e, radius).

    Raises ResourceLimitError when more than `cap` elements would be
    produced; the generating set is the canonical one from `generators()`.
    """
    if radius < 0:
        raise ConfigError(f"ball radius must be >= 0, got {radius}", "radius")
    gens = G.generators()
    e = G.identity()
    length = {e: 0}
    frontier = [e]
    for dist in range(1, radius + 1):
        nxt = []
        for a in frontier:
            for s in gens:
                b = G.mul(a, s)
                if b not in length:
                    length[b] = dist
                    nxt.append(b)
                    if len(length) > cap:
                        raise ResourceLimitError(
                            f"ball of radius {radius} on {G.spec()} exceeds "
                            f"cap of {cap} elements",
                            cap_name="ball_cap",
                            cap_value=cap,
                        )
        frontier = nxt
    ordered = sorted(length, key=lambda a: serialize_element(G, a))
    return Ball(G, radius, ordered, length)


@lru_cache(maxsize=64)
def _cached_ball(spec: str, radius: int, cap: int) -> Ball:
    return ball_enumerate(parse_group(spec), radius, cap)


def shared_ball(G: GroupModel, radius: int, cap: int = BALL_CAP_DEFAULT) -> Ball:
    """Memoised ball for repeated table builds on the same group."""
    return _cached_ball(G.spec(), radius, cap)
