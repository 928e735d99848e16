"""SELFIES <-> molecular graph for the supported chemistry subset.

Decoding follows the SELFIES derivation rules: every atom symbol is bonded
to the previous atom with the largest bond order its remaining valence
allows, branch and ring symbols read their length from the following index
symbols, and derivation stops when the current atom has no valence left.
Any symbol string over the supported alphabet therefore decodes to a
valence-legal graph.
"""

import re

from ..errors import UnsupportedFeature, UnsupportedToken
from .graph import Atom, MolecularGraph, capacity, dfs_forest, implicit_h, parse_smiles, to_smiles

_SYMBOL = re.compile(r"\[[^\[\]]*\]")
_ATOM = re.compile(
    r"^\[(?P<bond>[=#/\\]?)(?P<iso>\d*)(?P<el>[A-Z][a-z]?)(?P<chir>@{0,2})"
    r"(?P<h>(?:H\d)?)(?P<charge>(?:[+-]\d+)?)\]$"
)
_BRANCH = re.compile(r"^\[(?P<bond>[=#]?)Branch(?P<n>[123])\]$")
_RING = re.compile(r"^\[(?P<bond>[=#]?)Ring(?P<n>[123])\]$")
_BOND_ORDER = {"": 1, "=": 2, "#": 3}
_ORGANIC_SYMBOLS = {"C", "N", "O", "S", "P", "F", "Cl", "Br", "I"}

INDEX_ALPHABET = (
    "[C]", "[Ring1]", "[Ring2]",
    "[Branch1]", "[=Branch1]", "[#Branch1]",
    "[Branch2]", "[=Branch2]", "[#Branch2]",
    "[O]", "[N]", "[=N]", "[=C]", "[#C]", "[S]", "[P]",
)
_INDEX_CODE = {s: i for i, s in enumerate(INDEX_ALPHABET)}


def split_selfies(text):
    """Split into bracketed symbols; '.' is kept as its own symbol."""
    out = []
    pos = 0
    for m in _SYMBOL.finditer(text):
        gap = text[pos:m.start()]
        for ch in gap:
            if ch != ".":
                raise UnsupportedToken(f"text outside brackets: {gap!r}")
            out.append(".")
        out.append(m.group(0))
        pos = m.end()
    for ch in text[pos:]:
        if ch != ".":
            raise UnsupportedToken(f"text outside brackets: {text[pos:]!r}")
        out.append(".")
    return out


def _atom_symbol(symbol):
    """Parse an atom symbol into (bond order, Atom, organic flag) or raise."""
    m = _ATOM.match(symbol)
    if m is None:
        raise UnsupportedToken(f"unsupported symbol {symbol}")
    if m["bond"] in ("/", "\\") or m["chir"]:
        raise UnsupportedToken(f"stereo symbols are not decoded: {symbol}")
    if m["iso"]:
        raise UnsupportedToken(f"isotopes are not supported: {symbol}")
    el = m["el"]
    order = _BOND_ORDER[m["bond"]]
    body = symbol[1 + len(m["bond"]):-1]
    if body in _ORGANIC_SYMBOLS:
        return order, Atom(el), True
    h = int(m["h"][1:]) if m["h"] else 0
    charge = int(m["charge"]) if m["charge"] else 0
    try:
        cap = capacity(el, charge)
    except UnsupportedFeature:
        raise UnsupportedToken(f"unsupported atom {symbol}") from None
    if h > cap:
        raise UnsupportedToken(f"too many hydrogens: {symbol}")
    return order, Atom(el, charge, h), False


def _atom_capacity(atom):
    return capacity(atom.element, atom.charge) - atom.h


class _Decoder:
    def __init__(self, symbols):
        self.symbols = symbols
        self.pos = 0
        self.g = MolecularGraph()
        self.organic = []
        self.rings = []

    def next(self):
        if self.pos >= len(self.symbols):
            return None
        s = self.symbols[self.pos]
        self.pos += 1
        return s

    def read_index(self, n):
        value = 0
        for _ in range(n):
            s = self.next()
            value = value * len(INDEX_ALPHABET) + _INDEX_CODE.get(s, 0)
        return value

    def derive(self, max_symbols, state, root):
        """Derive up to ``max_symbols`` symbols starting from ``root``."""
        used = 0
        prev = root
        while state is not None and used < max_symbols:
            symbol = self.next()
            if symbol is None:
                break
            used += 1
            branch = _BRANCH.match(symbol)
            ring = _RING.match(symbol)
            if branch:
                if state <= 1:
                    continue
                init = min(state - 1, _BOND_ORDER[branch["bond"]])
                n = int(branch["n"])
                q = self.read_index(n)
                used += n + self.derive(q + 1, init, prev)
                state -= init
            elif ring:
                if state == 0:
                    continue
                order = min(_BOND_ORDER[ring["bond"]], state)
                n = int(ring["n"])
                q = self.read_index(n)
                used += n
                self.rings.append((max(0, prev - (q + 1)), prev, order))
                state -= order
                if state == 0:
                    state = None
            elif symbol == "[epsilon]":
                state = 0 if state == 0 else None
            else:
                order, atom, organic = _atom_symbol(symbol)
                cap = _atom_capacity(atom)
                if state == 0:
                    order = 0
                order = min(order, state, cap)
                left = cap - order
                if order == 0:
                    if state == 0:
                        prev = self.g.add_atom(atom)
                        if organic:
                            self.organic.append(prev)
                else:
                    idx = self.g.add_atom(atom)
                    if organic:
                        self.organic.append(idx)
                    self.g.add_bond(prev, idx, order)
                    prev = idx
                state = left if left > 0 else None
        while used < max_symbols and self.next() is not None:
            used += 1
        return used

    def close_rings(self):
        g = self.g
        for left, right, order in self.rings:
            if left == right:
                continue
            lfree = _atom_capacity(g.atoms[left]) - g.valence(left)
            rfree = _atom_capacity(g.atoms[right]) - g.valence(right)
            if lfree <= 0 or rfree <= 0:
                continue
            order = min(order, lfree, rfree)
            if right in g.adj[left]:
                new = min(order + g.adj[left][right], 3)
                g.adj[left][right] = new
                g.adj[right][left] = new
            else:
                g.add_bond(left, right, order)


def decode_selfies(text):
    """Decode a SELFIES string into a ``MolecularGraph``."""
    symbols = split_selfies(text)
    fragments = [[]]
    for s in symbols:
        if s == ".":
            fragments.append([])
        elif s != "[nop]":
            # padding symbols never count toward branch or ring lengths
            fragments[-1].append(s)
    dec = None
    rings = []
    g = MolecularGraph()
    organic = []
    for frag in fragments:
        # validate every atom-like symbol up front, even ones derivation skips
        for s in frag:
            if not (s == "[epsilon]" or _BRANCH.match(s) or _RING.match(s)):
                _atom_symbol(s)
        dec = _Decoder(frag)
        dec.g = g
        dec.organic = organic
        dec.rings = rings
        dec.derive(float("inf"), 0, None)
    if dec is not None:
        dec.close_rings()
    for idx in organic:
        a = g.atoms[idx]
        a.h = implicit_h(a.element, g.valence(idx))
    return g


def selfies_to_smiles(text):
    return to_smiles(decode_selfies(text))


# --------------------------------------------------------------------------
# encoder
# --------------------------------------------------------------------------

def _index_symbols(value):
    if value == 0:
        return [INDEX_ALPHABET[0]]
    base = len(INDEX_ALPHABET)
    digits = []
    while value:
        digits.append(INDEX_ALPHABET[value % base])
        value //= base
    return digits[::-1]


_BOND_PREFIX = {1: "", 2: "=", 3: "#"}


def _atom_token(atom, valence_used, bond_order):
    prefix = _BOND_PREFIX[bond_order] if bond_order else ""
    if atom.element == "H" and atom.h == 0 and atom.charge == 0:
        return f"[{prefix}H]"
    if atom.element in _ORGANIC_SYMBOLS and atom.charge == 0 and atom.h == implicit_h(atom.element, valence_used):
        return f"[{prefix}{atom.element}]"
    body = atom.element + f"H{atom.h}" * (atom.h > 0 or atom.charge == 0)
    if atom.charge:
        body += f"{atom.charge:+d}"
    return f"[{prefix}{body}]"


def encode_graph(g):
    """Encode a ``MolecularGraph`` as SELFIES."""
    g.check_valence()
    roots, order, children, closures = dfs_forest(g)
    pre = {v: k for k, v in enumerate(order)}
    if len(g.atoms) > 4096:
        raise UnsupportedFeature("molecule too large to encode")

    def chain(start, in_order):
        tokens = []
        v, bond = start, in_order
        while True:
            tokens.append(_atom_token(g.atoms[v], g.valence(v), bond))
            for u in closures[v]:
                q = _index_symbols(pre[v] - pre[u] - 1)
                if len(q) > 3:
                    raise UnsupportedFeature("ring closure too long to encode")
                tokens.append(f"[{_BOND_PREFIX[g.adj[v][u]]}Ring{len(q)}]")
                tokens.extend(q)
            kids = children[v]
            for w in kids[:-1]:
                sub = chain(w, g.adj[v][w])
                q = _index_symbols(len(sub) - 1)
                if len(q) > 3:
                    raise UnsupportedFeature("branch too long to encode")
                tokens.append(f"[{_BOND_PREFIX[g.adj[v][w]]}Branch{len(q)}]")
                tokens.extend(q)
                tokens.extend(sub)
            if not kids:
                return tokens
            v, bond = kids[-1], g.adj[v][kids[-1]]

    parts = ["".join(chain(root, 0)) for root in roots]
    return ".".join(parts)


def smiles_to_selfies(text):
    return encode_graph(parse_smiles(text))
