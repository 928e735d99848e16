"""Peptide specifications to molecules and back.

Forward: residue templates are joined head to tail by amide bonds, then
intrachain bonds are added, then terminal groups are grafted. The result is
written as SMILES and converted to SELFIES.

Reverse (canonical-style linear peptides): every amide C(=O)-N bond whose
nitrogen carries another carbon is cut, the fragments are matched against
the registry by graph isomorphism, and the fragments are chained N to C.

Stereo marks in templates are read and dropped; the molecules are
constitutional graphs.
"""

import re
from dataclasses import dataclass, field
from importlib import resources

import networkx as nx
from networkx.algorithms import isomorphism as iso

from .chem.graph import Atom, MolecularGraph, parse_smiles, to_smiles
from .chem.selfies import decode_selfies, smiles_to_selfies
from .errors import (
    AmbiguousDecomposition,
    DataError,
    MissingAttachmentSite,
    NotAPeptide,
    SiteNotReactive,
    TerminusConsumed,
    UnknownModification,
    UnknownResidue,
    UnsupportedBondType,
    ValenceError,
)

CANONICAL = tuple("arndcqehilkmfPstwyvg")
_SITES = re.compile(r"^(?:[NCO]=\d+)(?:;[NCO]=\d+)*$")


@dataclass
class Residue:
    code: str
    smiles: str
    graph: MolecularGraph
    n_site: int
    c_site: int
    o_site: int


@dataclass
class Registry:
    residues: dict
    rejects: list = field(default_factory=list)
    declared: int = None
    n_mods: dict = field(default_factory=dict)
    c_mods: dict = field(default_factory=dict)

    def __contains__(self, code):
        return code in self.residues

    def get(self, code):
        try:
            return self.residues[code]
        except KeyError:
            raise UnknownResidue(f"unknown residue {code!r}") from None

    def report(self):
        lines = [f"declared records: {self.declared}",
                 f"loaded: {len(self.residues)}",
                 f"quarantined: {len(self.rejects)}"]
        lines += [f"  {code}\t{reason}" for code, reason in self.rejects]
        return "\n".join(lines)


def _unescape(code):
    out, i = [], 0
    while i < len(code):
        ch = code[i]
        if ch == "\\" and i + 1 < len(code):
            nxt = code[i + 1]
            out.append("\t" if nxt == "t" else nxt)
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _hydroxyl(g, c):
    """The leaving O of a carboxyl carbon: single-bonded OH or O-, degree 1."""
    if g.atoms[c].element != "C":
        return None
    has_oxo = any(g.atoms[j].element == "O" and o == 2 for j, o in g.adj[c].items())
    if not has_oxo:
        return None
    for j, o in g.adj[c].items():
        a = g.atoms[j]
        if a.element == "O" and o == 1 and len(g.adj[j]) == 1 and (
                (a.h == 1 and a.charge == 0) or (a.h == 0 and a.charge == -1)):
            return j
    return None


def find_sites(g):
    """(n_site, c_site, o_site): the carboxyl and amine closest to each other.

    Every carboxyl carbon is tried; from its carbon neighbour a breadth-first
    search finds the nearest nitrogen that still carries an H. Ties go to the
    lowest atom indices.
    """
    best = None
    for c in range(len(g.atoms)):
        o = _hydroxyl(g, c)
        if o is None:
            continue
        for alpha in g.adj[c]:
            if g.atoms[alpha].element != "C":
                continue
            dist = {alpha: 0}
            queue = [alpha]
            for v in queue:
                for w in g.adj[v]:
                    if w not in dist and w != c:
                        dist[w] = dist[v] + 1
                        queue.append(w)
            for n, d in dist.items():
                a = g.atoms[n]
                if a.element == "N" and a.h >= 1 and a.charge == 0:
                    key = (d, c, n)
                    if best is None or key < best[0]:
                        best = (key, (n, c, o))
    if best is None:
        raise MissingAttachmentSite("no carboxyl/amine pair found")
    return best[1]


def make_residue(code, smiles, sites=None):
    g = parse_smiles(smiles)
    g.check_valence()
    if len(g.components()) != 1:
        raise MissingAttachmentSite(f"{code}: template has several fragments")
    auto = None
    chosen = {}
    if sites:
        for part in sites.split(";"):
            k, v = part.split("=")
            chosen[k] = int(v)
    if set(chosen) != {"N", "C", "O"}:
        auto = find_sites(g)
    n = chosen.get("N", auto[0] if auto else None)
    c = chosen.get("C", auto[1] if auto else None)
    o = chosen.get("O", _hydroxyl(g, c) if "C" in chosen else auto[2])
    for idx in (n, c, o):
        if idx is None or not 0 <= idx < len(g.atoms):
            raise MissingAttachmentSite(f"{code}: attachment site out of range")
    if g.atoms[n].element != "N" or g.atoms[n].h < 1:
        raise MissingAttachmentSite(f"{code}: atom {n} is not an amine with H")
    if o not in g.adj[c] or g.atoms[o].element != "O":
        raise MissingAttachmentSite(f"{code}: atom {o} is not a hydroxyl on atom {c}")
    return Residue(code, smiles, g, n, c, o)


def _data_path(name):
    return resources.files("amdiff").joinpath("data", name)


def load_registry(path=None, mods_path=None):
    """Read the residue file; templates that fail validation are quarantined."""
    text = (open(path, encoding="utf-8").read() if path is not None
            else _data_path("residues.tsv").read_text(encoding="utf-8"))
    residues, rejects, declared = {}, [], None
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("#count\t"):
            declared = int(line.split("\t")[1])
            continue
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            rejects.append((f"line {lineno}", "missing SMILES field"))
            continue
        code = _unescape(parts[0]).strip()
        smiles = parts[1]
        sites = parts[2].strip() if len(parts) > 2 and parts[2].strip() else None
        if sites and not _SITES.match(sites):
            rejects.append((code, f"bad sites field {sites!r}"))
            continue
        if code in residues:
            rejects.append((code, "duplicate code"))
            continue
        try:
            residues[code] = make_residue(code, smiles, sites)
        except DataError as e:
            rejects.append((code, f"{type(e).__name__}: {e}"))
    reg = Registry(residues, rejects, declared)
    reg.n_mods, reg.c_mods = load_modifications(mods_path)
    return reg


def load_modifications(path=None):
    text = (open(path, encoding="utf-8").read() if path is not None
            else _data_path("modifications.tsv").read_text(encoding="utf-8"))
    n_mods, c_mods = {}, {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        side, code, smiles = line.split("\t")[:3]
        g = parse_smiles(smiles)
        if g.atoms[0].h < 1:
            raise ValueError(f"modification {code}: first atom has no H to give up")
        (n_mods if side == "N" else c_mods)[code] = g
    return n_mods, c_mods


_DEFAULT = None


def default_registry():
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_registry()
    return _DEFAULT


# --------------------------------------------------------------------------
# forward
# --------------------------------------------------------------------------

@dataclass
class PeptideSpec:
    residues: list
    bonds: list = field(default_factory=list)  # (i, j, type), 1-based residue positions
    n_term: str = None
    c_term: str = None

    def __post_init__(self):
        seen = set()
        for i, j, kind in self.bonds:
            key = (min(i, j), max(i, j), kind)
            if key in seen:
                raise ValueError(f"duplicate bond {kind}({i},{j})")
            seen.add(key)


@dataclass
class Assembly:
    """Graph under construction, with per-residue atom bookkeeping.

    ``sites[k]`` maps role names ('N', 'C', 'O', and atom indices of the
    template) to atom indices in ``graph``. Atoms to delete are collected in
    ``doomed`` and removed once at the end.
    """
    graph: MolecularGraph
    offsets: list
    residues: list
    doomed: set = field(default_factory=set)
    n_free: bool = True
    c_free: bool = True

    def atom(self, k, template_idx):
        return self.offsets[k] + template_idx

    def n_site(self, k):
        return self.atom(k, self.residues[k].n_site)

    def c_site(self, k):
        return self.atom(k, self.residues[k].c_site)

    def o_site(self, k):
        return self.atom(k, self.residues[k].o_site)


def _take_h(g, i, what):
    if g.atoms[i].h < 1:
        raise SiteNotReactive(f"{what}: atom {i} ({g.atoms[i].element}) has no H to give up")
    g.atoms[i].h -= 1


def _amide(asm, c, o, n):
    """Join carboxyl carbon ``c`` (dropping its OH ``o``) to amine ``n``."""
    g = asm.graph
    if o in asm.doomed:
        raise SiteNotReactive(f"carboxyl at atom {c} already used")
    _take_h(g, n, "amide nitrogen")
    asm.doomed.add(o)
    g.remove_bond(c, o)
    g.add_bond(c, n, 1)


def assemble_backbone(residues, reg):
    if not residues:
        raise ValueError("a peptide needs at least one residue")
    templates = [reg.get(code) for code in residues]
    g = MolecularGraph()
    offsets = [g.merge(r.graph) for r in templates]
    asm = Assembly(g, offsets, templates)
    for k in range(len(templates) - 1):
        _amide(asm, asm.c_site(k), asm.o_site(k), asm.n_site(k + 1))
    return asm


def _side_atoms(asm, k):
    """Template atom indices of residue k outside its backbone N, C, O."""
    r = asm.residues[k]
    return [asm.atom(k, i) for i in range(len(r.graph.atoms)) if i not in (r.n_site, r.c_site, r.o_site)]


def _disulfide(asm, i, j):
    g = asm.graph
    sites = []
    for k in (i, j):
        thiols = [a for a in _side_atoms(asm, k) if g.atoms[a].element == "S" and g.atoms[a].h >= 1]
        if not thiols:
            raise SiteNotReactive(f"residue {k + 1} ({asm.residues[k].code}) has no free thiol")
        sites.append(thiols[0])
    for s in sites:
        g.atoms[s].h -= 1
    g.add_bond(sites[0], sites[1], 1)


def _head_to_tail(asm, i, j):
    last = len(asm.residues) - 1
    if {i, j} != {0, last} or last == 0:
        raise SiteNotReactive("head-to-tail bonds join the first and the last residue")
    if not (asm.n_free and asm.c_free):
        raise TerminusConsumed("a terminus is already used")
    _amide(asm, asm.c_site(last), asm.o_site(last), asm.n_site(0))
    asm.n_free = asm.c_free = False


def _side_chain_lactam(asm, i, j):
    g = asm.graph

    def acid(k):
        for a in _side_atoms(asm, k):
            o = _hydroxyl(g, a)
            if o is not None and o not in asm.doomed:
                return a, o
        return None

    def amine(k):
        for a in _side_atoms(asm, k):
            at = g.atoms[a]
            if at.element == "N" and at.h >= 1 and at.charge == 0 and not any(
                    _hydroxyl(g, nb) is not None or _is_carbonyl(g, nb) for nb in g.adj[a]):
                return a
        return None

    for a, b in ((i, j), (j, i)):
        n, ca = amine(a), acid(b)
        if n is not None and ca is not None:
            _amide(asm, ca[0], ca[1], n)
            return
    raise SiteNotReactive(f"residues {i + 1} and {j + 1} lack a side-chain amine/acid pair")


def _is_carbonyl(g, c):
    return g.atoms[c].element == "C" and any(
        g.atoms[j].element == "O" and o == 2 for j, o in g.adj[c].items())


BOND_TYPES = {
    "disulfide": _disulfide,
    "head_to_tail": _head_to_tail,
    "side_chain_lactam": _side_chain_lactam,
}


def register_bond_type(name, fn):
    """Add an intrachain bond type. ``fn(assembly, i, j)`` gets 0-based residue indices."""
    BOND_TYPES[name] = fn


def apply_intrachain_bonds(asm, bonds):
    n = len(asm.residues)
    for i, j, kind in bonds:
        if kind not in BOND_TYPES:
            raise UnsupportedBondType(f"unsupported intrachain bond type {kind!r}")
        if not (1 <= i <= n and 1 <= j <= n) or i == j:
            raise SiteNotReactive(f"bond sites ({i}, {j}) out of range for {n} residues")
        BOND_TYPES[kind](asm, i - 1, j - 1)
    return asm


def _graft(g, site, mod):
    off = g.merge(mod)
    _take_h(g, off, "modification")
    g.add_bond(site, off, 1)


def apply_terminal_mods(asm, n_term, c_term, reg):
    g = asm.graph
    if n_term is not None:
        if n_term not in reg.n_mods:
            raise UnknownModification(f"unknown N-terminal modification {n_term!r}")
        if not asm.n_free:
            raise TerminusConsumed("N-terminus is bonded")
        n = asm.n_site(0)
        _take_h(g, n, "N-terminal amine")
        _graft(g, n, reg.n_mods[n_term])
        asm.n_free = False
    if c_term is not None:
        if c_term not in reg.c_mods:
            raise UnknownModification(f"unknown C-terminal modification {c_term!r}")
        if not asm.c_free:
            raise TerminusConsumed("C-terminus is bonded")
        last = len(asm.residues) - 1
        c, o = asm.c_site(last), asm.o_site(last)
        asm.doomed.add(o)
        g.remove_bond(c, o)
        off = g.merge(reg.c_mods[c_term])
        _take_h(g, off, "modification")
        g.add_bond(c, off, 1)
        asm.c_free = False
    return asm


def build_graph(spec, reg=None):
    reg = default_registry() if reg is None else reg
    asm = assemble_backbone(spec.residues, reg)
    apply_intrachain_bonds(asm, spec.bonds)
    apply_terminal_mods(asm, spec.n_term, spec.c_term, reg)
    g = asm.graph
    g.remove_atoms(asm.doomed)
    try:
        g.check_valence()
    except ValenceError as e:
        raise SiteNotReactive(f"assembled peptide breaks valence: {e}") from None
    return g


def peptide_to_smiles(spec, reg=None):
    return to_smiles(build_graph(spec, reg))


def peptide_to_selfies(spec, reg=None):
    return smiles_to_selfies(peptide_to_smiles(spec, reg))


# --------------------------------------------------------------------------
# text format
# --------------------------------------------------------------------------

def parse_sequence(text):
    """'ac[TYR-Bzl]k' -> ['a', 'c', 'TYR-Bzl', 'k']."""
    out, i = [], 0
    while i < len(text):
        ch = text[i]
        if ch == "[":
            end = text.find("]", i)
            if end < 0:
                raise UnknownResidue(f"unclosed '[' at {i}")
            out.append(text[i + 1:end])
            i = end + 1
        elif ch.isspace():
            i += 1
        else:
            out.append(ch)
            i += 1
    return out


def format_sequence(codes):
    return "".join(c if len(c) == 1 else f"[{c}]" for c in codes)


def parse_bonds(text):
    """'disulfide:2-7;head_to_tail:1-9' -> [(2, 7, 'disulfide'), (1, 9, 'head_to_tail')]."""
    out = []
    for part in filter(None, (p.strip() for p in (text or "").split(";"))):
        m = re.fullmatch(r"([A-Za-z_]+):(\d+)-(\d+)", part)
        if m is None:
            raise UnsupportedBondType(f"cannot read bond {part!r}")
        out.append((int(m[2]), int(m[3]), m[1]))
    return out


# --------------------------------------------------------------------------
# reverse
# --------------------------------------------------------------------------

_NODE_MATCH = iso.categorical_node_match(["element", "charge", "h", "role"], [None, 0, 0, ""])
_EDGE_MATCH = iso.categorical_edge_match("order", 1)


def _labelled(g, roles):
    nx_g = g.to_networkx()
    for i in nx_g.nodes:
        nx_g.nodes[i]["role"] = roles.get(i, "")
        a = nx_g.nodes[i]
        a["label"] = f"{a['element']}{a['charge']}h{a['h']}{a['role']}"
    for _, _, d in nx_g.edges(data=True):
        d["label"] = str(d["order"])
    return nx_g


_TEMPLATE_INDEX = {}


def _template_index(reg, roles):
    """WL-hash buckets of templates with the given backbone roles marked."""
    key = (id(reg), roles)
    if key not in _TEMPLATE_INDEX:
        buckets = {}
        for code, r in reg.residues.items():
            marks = {}
            if "n" in roles:
                marks[r.n_site] = "n"
            if "c" in roles:
                # the peptide side keeps C but loses the hydroxyl
                marks[r.c_site] = "c"
            g = r.graph
            if "c" in roles:
                g = g.copy()
                g.remove_bond(r.c_site, r.o_site)
                remap = g.remove_atoms([r.o_site])
                marks = {remap[k]: v for k, v in marks.items()}
            if "n" in roles:
                g = g.copy()
                idx = [k for k, v in marks.items() if v == "n"][0]
                g.atoms[idx].h -= 1
            nx_g = _labelled(g, marks)
            h = nx.weisfeiler_lehman_graph_hash(nx_g, node_attr="label", edge_attr="label")
            buckets.setdefault(h, []).append((code, nx_g))
        _TEMPLATE_INDEX[key] = buckets
    return _TEMPLATE_INDEX[key]


def _match_fragment(nx_frag, roles, reg):
    h = nx.weisfeiler_lehman_graph_hash(nx_frag, node_attr="label", edge_attr="label")
    hits = [code for code, tg in _template_index(reg, roles).get(h, [])
            if nx.is_isomorphic(nx_frag, tg, node_match=_NODE_MATCH, edge_match=_EDGE_MATCH)]
    if not hits:
        raise NotAPeptide("a fragment matches no registry residue")
    canon = [c for c in hits if c in CANONICAL]
    if len(canon) == 1:
        return canon[0]
    if len(canon) > 1 or len(hits) > 1:
        raise AmbiguousDecomposition(f"fragment matches several residues: {sorted(hits)}")
    return hits[0]


def _peptide_bonds(g):
    """Amide bonds (carbonyl C, N) where N also bears another carbon."""
    out = []
    for c in range(len(g.atoms)):
        if not _is_carbonyl(g, c) or g.atoms[c].charge != 0:
            continue
        if sum(1 for j, o in g.adj[c].items() if g.atoms[j].element == "O" and o == 2) != 1:
            continue
        for n, o in g.adj[c].items():
            if o != 1 or g.atoms[n].element != "N" or g.atoms[n].charge != 0:
                continue
            if any(g.atoms[w].element == "C" and w != c for w in g.adj[n]):
                out.append((c, n))
    return out


def graph_to_peptide(g, reg=None):
    reg = default_registry() if reg is None else reg
    if not g.atoms or len(g.components()) != 1:
        raise NotAPeptide("expected one connected molecule")
    cuts = _peptide_bonds(g)
    work = g.copy()
    for c, n in cuts:
        work.remove_bond(c, n)
    comps = work.components()
    comp_of = {a: k for k, comp in enumerate(comps) for a in comp}
    if len(comps) != len(cuts) + 1:
        raise NotAPeptide("amide bonds do not form a chain")
    nxt, prv = {}, {}
    c_role, n_role = {}, {}
    for c, n in cuts:
        a, b = comp_of[c], comp_of[n]
        if a in nxt or b in prv or a == b:
            raise NotAPeptide("amide bonds branch or close a ring")
        nxt[a], prv[b] = b, a
        c_role[a], n_role[b] = c, n
    starts = [k for k in range(len(comps)) if k not in prv]
    if len(starts) != 1:
        raise NotAPeptide("no unique N-terminal residue")
    order = [starts[0]]
    while order[-1] in nxt:
        order.append(nxt[order[-1]])
    if len(order) != len(comps):
        raise NotAPeptide("amide chain is not linear")
    codes = []
    for k in order:
        comp = comps[k]
        local = {a: i for i, a in enumerate(comp)}
        frag = MolecularGraph()
        for a in comp:
            frag.add_atom(Atom(work.atoms[a].element, work.atoms[a].charge, work.atoms[a].h))
        for a in comp:
            for b, o in work.adj[a].items():
                if local[a] < local.get(b, -1):
                    frag.add_bond(local[a], local[b], o)
        marks = {}
        if k in n_role:
            marks[local[n_role[k]]] = "n"
        if k in c_role:
            marks[local[c_role[k]]] = "c"
        roles = "".join(sorted(set(marks.values())))
        codes.append(_match_fragment(_labelled(frag, marks), roles, reg))
    return PeptideSpec(codes)


def selfies_to_peptide(s, reg=None):
    return graph_to_peptide(decode_selfies(s), reg)
