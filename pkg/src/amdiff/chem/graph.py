"""Molecular graph, SMILES reading/writing and formula bookkeeping.

Only the subset the package needs is handled: the organic atoms
C N O S P F Cl Br I (plus bracketed H), formal charges, single/double/triple
bonds, branches, ring closures and dot-separated fragments. Aromatic
lowercase atoms, isotopes and atom classes are rejected. Tetrahedral and
double-bond stereo marks are read and dropped; the graph keeps a per-atom
``chiral`` flag but the writer never emits stereo.
"""

from collections import Counter
from dataclasses import dataclass, replace

import networkx as nx

from ..errors import SmilesSyntaxError, UnsupportedFeature, ValenceError

ELEMENTS = ("C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "H")
ORGANIC = ("C", "N", "O", "S", "P", "F", "Cl", "Br", "I")
NORMAL_VALENCES = {
    "C": (4,), "N": (3, 5), "O": (2,), "S": (2, 4, 6), "P": (3, 5),
    "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,), "H": (1,),
}
# bonding capacities (explicit H included) of the string grammar
CAPACITY = {
    ("H", 0): 1, ("F", 0): 1, ("Cl", 0): 1, ("Br", 0): 1, ("I", 0): 1,
    ("O", 0): 2, ("O", 1): 3, ("O", -1): 1,
    ("N", 0): 3, ("N", 1): 4, ("N", -1): 2,
    ("C", 0): 4, ("C", 1): 3, ("C", -1): 3,
    ("P", 0): 5, ("P", 1): 4, ("P", -1): 6,
    ("S", 0): 6, ("S", 1): 5, ("S", -1): 5,
}
ATOMIC_MASS = {
    "H": 1.008, "C": 12.011, "N": 14.007, "O": 15.999, "F": 18.998,
    "P": 30.974, "S": 32.06, "Cl": 35.45, "Br": 79.904, "I": 126.904,
}


def implicit_h(element, valence_used):
    """Hydrogens an unbracketed SMILES atom carries at a given bond-order sum."""
    for v in NORMAL_VALENCES[element]:
        if v >= valence_used:
            return v - valence_used
    return 0


def capacity(element, charge):
    try:
        return CAPACITY[(element, charge)]
    except KeyError:
        raise UnsupportedFeature(f"unsupported atom {element} with charge {charge:+d}") from None


@dataclass
class Atom:
    element: str
    charge: int = 0
    h: int = 0
    chiral: bool = False


class MolecularGraph:
    """Heavy-atom graph with explicit per-atom hydrogen counts."""

    def __init__(self):
        self.atoms = []
        self.adj = []  # list of {neighbor: bond order}

    def __len__(self):
        return len(self.atoms)

    def copy(self):
        g = MolecularGraph()
        g.atoms = [replace(a) for a in self.atoms]
        g.adj = [dict(d) for d in self.adj]
        return g

    def add_atom(self, atom):
        self.atoms.append(atom)
        self.adj.append({})
        return len(self.atoms) - 1

    def add_bond(self, i, j, order=1):
        if i == j:
            raise ValenceError("self bond")
        if j in self.adj[i]:
            raise ValenceError(f"atoms {i} and {j} already bonded")
        self.adj[i][j] = order
        self.adj[j][i] = order

    def remove_bond(self, i, j):
        del self.adj[i][j]
        del self.adj[j][i]

    def bond_order(self, i, j):
        return self.adj[i].get(j, 0)

    def neighbors(self, i):
        return list(self.adj[i])

    def valence(self, i):
        return sum(self.adj[i].values())

    def bonds(self):
        for i, nbrs in enumerate(self.adj):
            for j, order in nbrs.items():
                if i < j:
                    yield i, j, order

    def remove_atoms(self, doomed):
        """Delete atoms and their bonds; returns old->new index map."""
        doomed = set(doomed)
        keep = [i for i in range(len(self.atoms)) if i not in doomed]
        remap = {old: new for new, old in enumerate(keep)}
        self.atoms = [self.atoms[i] for i in keep]
        self.adj = [{remap[j]: o for j, o in self.adj[i].items() if j in remap} for i in keep]
        return remap

    def merge(self, other):
        """Append a disjoint copy of ``other``; returns the index offset."""
        offset = len(self.atoms)
        for a in other.atoms:
            self.atoms.append(replace(a))
        for nbrs in other.adj:
            self.adj.append({j + offset: o for j, o in nbrs.items()})
        return offset

    # -- checks and descriptors ------------------------------------------

    def valence_problems(self):
        out = []
        for i, a in enumerate(self.atoms):
            cap = capacity(a.element, a.charge)
            used = self.valence(i) + a.h
            if used > cap:
                out.append((i, a.element, used, cap))
        return out

    def check_valence(self):
        bad = self.valence_problems()
        if bad:
            i, el, used, cap = bad[0]
            raise ValenceError(f"atom {i} ({el}) uses {used} bonds, capacity {cap}")

    def formula(self):
        c = Counter()
        for a in self.atoms:
            c[a.element] += 1
            c["H"] += a.h
        return +c

    def formula_string(self):
        """Hill-order formula, charge ignored."""
        c = self.formula()
        parts = []
        order = (["C", "H"] + sorted(k for k in c if k not in ("C", "H"))) if "C" in c else sorted(c)
        for el in order:
            n = c.get(el, 0)
            if n:
                parts.append(el if n == 1 else f"{el}{n}")
        return "".join(parts)

    def molecular_weight(self):
        return sum(ATOMIC_MASS[el] * n for el, n in self.formula().items())

    def to_networkx(self):
        g = nx.Graph()
        for i, a in enumerate(self.atoms):
            g.add_node(i, element=a.element, charge=a.charge, h=a.h)
        for i, j, o in self.bonds():
            g.add_edge(i, j, order=o)
        return g

    def components(self):
        seen = [False] * len(self.atoms)
        comps = []
        for s in range(len(self.atoms)):
            if seen[s]:
                continue
            stack, comp = [s], []
            seen[s] = True
            while stack:
                v = stack.pop()
                comp.append(v)
                for w in self.adj[v]:
                    if not seen[w]:
                        seen[w] = True
                        stack.append(w)
            comps.append(sorted(comp))
        return comps

    def ring_count(self):
        return sum(1 for _ in self.bonds()) - len(self.atoms) + len(self.components())


def is_isomorphic(a, b):
    em = nx.algorithms.isomorphism
    return nx.is_isomorphic(
        a.to_networkx(), b.to_networkx(),
        node_match=em.categorical_node_match(["element", "charge", "h"], [None, 0, 0]),
        edge_match=em.categorical_edge_match("order", 1),
    )


# --------------------------------------------------------------------------
# SMILES reader
# --------------------------------------------------------------------------

_BOND_CHARS = {"-": 1, "=": 2, "#": 3, "/": 1, "\\": 1}


def _parse_bracket(text, pos):
    end = text.find("]", pos)
    if end < 0:
        raise SmilesSyntaxError(f"unclosed bracket atom at {pos}")
    body = text[pos + 1:end]
    i = 0
    if i < len(body) and body[i].isdigit():
        raise UnsupportedFeature(f"isotopes not supported: [{body}]")
    if i < len(body) and body[i].islower():
        raise UnsupportedFeature(f"aromatic atoms not supported: [{body}]")
    if body[i:i + 2] in ("Cl", "Br"):
        el, i = body[i:i + 2], i + 2
    elif i < len(body) and body[i].isupper():
        el = body[i]
        i += 1
        if i < len(body) and body[i].islower():
            raise UnsupportedFeature(f"element not supported: [{body}]")
    else:
        raise SmilesSyntaxError(f"bad bracket atom [{body}]")
    if el not in ELEMENTS:
        raise UnsupportedFeature(f"element not supported: {el}")
    chiral = False
    while i < len(body) and body[i] == "@":
        chiral = True
        i += 1
    h = 0
    if i < len(body) and body[i] == "H":
        i += 1
        h = 1
        if i < len(body) and body[i].isdigit():
            j = i
            while j < len(body) and body[j].isdigit():
                j += 1
            h = int(body[i:j])
            i = j
    charge = 0
    if i < len(body) and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        j = i + 1
        while j < len(body) and body[j] == body[i]:
            j += 1
        if j > i + 1:
            charge = sign * (j - i)
            i = j
        else:
            k = j
            while k < len(body) and body[k].isdigit():
                k += 1
            charge = sign * (int(body[j:k]) if k > j else 1)
            i = k
    if i < len(body) and body[i] == ":":
        raise UnsupportedFeature(f"atom classes not supported: [{body}]")
    if i != len(body):
        raise SmilesSyntaxError(f"bad bracket atom [{body}]")
    return Atom(el, charge, h, chiral), end + 1


def parse_smiles(text):
    """Read a SMILES string into a ``MolecularGraph``."""
    g = MolecularGraph()
    organic_atoms = []
    stack = []
    prev = None
    pending_bond = None
    rings = {}
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "[":
            atom, i = _parse_bracket(text, i)
            idx = g.add_atom(atom)
        elif ch in "CNOSPFIB" or text[i:i + 2] in ("Cl", "Br"):
            if text[i:i + 2] in ("Cl", "Br"):
                el, i = text[i:i + 2], i + 2
            else:
                el, i = ch, i + 1
            if el not in ORGANIC:
                raise UnsupportedFeature(f"element not supported: {el}")
            idx = g.add_atom(Atom(el))
            organic_atoms.append(idx)
        elif ch in "cnospb":
            raise UnsupportedFeature("aromatic (lowercase) atoms not supported; use a Kekule form")
        elif ch in _BOND_CHARS:
            if pending_bond is not None:
                raise SmilesSyntaxError(f"two bond symbols in a row at {i}")
            pending_bond = _BOND_CHARS[ch]
            i += 1
            continue
        elif ch in "$:":
            raise UnsupportedFeature(f"bond type {ch!r} not supported")
        elif ch == "(":
            if prev is None:
                raise SmilesSyntaxError(f"branch without an atom at {i}")
            stack.append(prev)
            i += 1
            continue
        elif ch == ")":
            if not stack or pending_bond is not None:
                raise SmilesSyntaxError(f"unbalanced ')' at {i}")
            prev = stack.pop()
            i += 1
            continue
        elif ch.isdigit() or ch == "%":
            if prev is None:
                raise SmilesSyntaxError(f"ring closure without an atom at {i}")
            if ch == "%":
                if len(text[i + 1:i + 3]) < 2 or not text[i + 1:i + 3].isdigit():
                    raise SmilesSyntaxError(f"bad ring label at {i}")
                label, i = int(text[i + 1:i + 3]), i + 3
            else:
                label, i = int(ch), i + 1
            if label in rings:
                other, order = rings.pop(label)
                if order and pending_bond and order != pending_bond:
                    raise SmilesSyntaxError(f"conflicting ring bond orders for label {label}")
                g.add_bond(other, prev, pending_bond or order or 1)
            else:
                rings[label] = (prev, pending_bond)
            pending_bond = None
            continue
        elif ch == ".":
            if pending_bond is not None or stack:
                raise SmilesSyntaxError(f"misplaced '.' at {i}")
            prev = None
            i += 1
            continue
        elif ch.isspace():
            raise SmilesSyntaxError(f"whitespace inside SMILES at {i}")
        else:
            raise SmilesSyntaxError(f"unexpected character {ch!r} at {i}")
        # atom just added
        if prev is not None:
            g.add_bond(prev, idx, pending_bond or 1)
        elif pending_bond is not None:
            raise SmilesSyntaxError(f"bond with no preceding atom at {i}")
        pending_bond = None
        prev = idx
    if rings:
        raise SmilesSyntaxError(f"unclosed ring labels {sorted(rings)}")
    if stack:
        raise SmilesSyntaxError("unbalanced '('")
    if pending_bond is not None:
        raise SmilesSyntaxError("dangling bond at end")
    for idx in organic_atoms:
        a = g.atoms[idx]
        a.h = implicit_h(a.element, g.valence(idx))
    return g


# --------------------------------------------------------------------------
# traversal shared by the SMILES writer and the SELFIES encoder
# --------------------------------------------------------------------------

def dfs_forest(g):
    """Depth-first spanning forest.

    Returns ``(roots, order, children, closures)``: preorder of atoms,
    children in visit order, and ``closures[v]`` listing ring-closure
    partners ``u`` visited before ``v`` (non-tree edges), so each ring bond
    appears exactly once, at its later endpoint.
    """
    n = len(g.atoms)
    visited = [False] * n
    order, roots = [], []
    children = [[] for _ in range(n)]
    closures = [[] for _ in range(n)]
    pre = [-1] * n
    for root in range(n):
        if visited[root]:
            continue
        roots.append(root)
        # iterative DFS that mirrors the recursive visit order
        visited[root] = True
        pre[root] = len(order)
        order.append(root)
        stack = [(root, -1, iter(g.adj[root]))]
        while stack:
            v, parent, it = stack[-1]
            advanced = False
            for w in it:
                if w == parent:
                    continue
                if visited[w]:
                    if pre[w] < pre[v]:
                        closures[v].append(w)
                    continue
                visited[w] = True
                pre[w] = len(order)
                order.append(w)
                children[v].append(w)
                stack.append((w, v, iter(g.adj[w])))
                advanced = True
                break
            if not advanced:
                stack.pop()
    return roots, order, children, closures


def _atom_smiles(a, valence_used):
    if a.element in ORGANIC and a.charge == 0 and a.h == implicit_h(a.element, valence_used):
        return a.element
    s = "[" + a.element
    if a.h:
        s += "H" if a.h == 1 else f"H{a.h}"
    if a.charge:
        s += ("+" if a.charge > 0 else "-") + (str(abs(a.charge)) if abs(a.charge) > 1 else "")
    return s + "]"


_BOND_SYMBOL = {1: "", 2: "=", 3: "#"}


def to_smiles(g):
    """Write a SMILES string (no stereo) for the graph."""
    roots, order, children, closures = dfs_forest(g)
    # ring labels: open at the earlier endpoint, close at the later one
    opens = [[] for _ in range(len(g.atoms))]
    for v in range(len(g.atoms)):
        for u in closures[v]:
            opens[u].append(v)
    label_of = {}
    free = []
    next_label = [1]

    def take_label():
        if free:
            free.sort()
            return free.pop(0)
        lab = next_label[0]
        next_label[0] += 1
        return lab

    def fmt(lab):
        return str(lab) if lab < 10 else f"%{lab:02d}"

    out = []
    for root in roots:
        if out:
            out.append(".")
        # explicit stack of (kind, payload) to avoid recursion limits
        work = [("atom", (root, None))]
        while work:
            kind, payload = work.pop()
            if kind == "text":
                out.append(payload)
                continue
            v, parent = payload
            if parent is not None:
                out.append(_BOND_SYMBOL[g.adj[parent][v]])
            out.append(_atom_smiles(g.atoms[v], g.valence(v)))
            released = []
            for u in closures[v]:
                lab = label_of.pop((u, v))
                out.append(fmt(lab))
                released.append(lab)
            for w in opens[v]:
                lab = take_label()
                label_of[(v, w)] = lab
                out.append(_BOND_SYMBOL[g.adj[v][w]] + fmt(lab))
            free.extend(released)
            kids = children[v]
            if kids:
                work.append(("atom", (kids[-1], v)))
                for w in reversed(kids[:-1]):
                    work.append(("text", ")"))
                    work.append(("atom", (w, v)))
                    work.append(("text", "("))
    return "".join(out)
