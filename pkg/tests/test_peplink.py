from collections import Counter

import numpy as np
import pytest
from rdkit import Chem
from rdkit.Chem.rdMolDescriptors import CalcMolFormula

from amdiff.chem import decode_selfies, is_isomorphic, parse_smiles, smiles_to_selfies
from amdiff.errors import (
    NotAPeptide, SiteNotReactive, TerminusConsumed, UnknownModification, UnknownResidue, UnsupportedBondType,
)
from amdiff.peplink import (
    CANONICAL, PeptideSpec, apply_intrachain_bonds, apply_terminal_mods, assemble_backbone, build_graph,
    default_registry, format_sequence, load_registry, parse_bonds, parse_sequence, peptide_to_selfies,
    peptide_to_smiles, register_bond_type, selfies_to_peptide,
)


@pytest.fixture(scope="module")
def reg():
    return default_registry()


def rdkit_formula(smiles):
    return CalcMolFormula(Chem.MolFromSmiles(smiles))


def formula(spec):
    return build_graph(spec).formula_string()


def test_single_alanine(reg):
    g = build_graph(PeptideSpec(["a"]))
    assert is_isomorphic(g, parse_smiles("C[C@H](C(=O)O)N"))


def test_dialanine_formula(reg):
    smi = peptide_to_smiles(PeptideSpec(["a", "a"]))
    assert formula(PeptideSpec(["a", "a"])) == "C6H12N2O3"
    assert rdkit_formula(smi) == "C6H12N2O3"


@pytest.mark.parametrize("seed", range(5))
def test_amide_count_and_mass_balance(reg, seed):
    rng = np.random.default_rng(seed)
    codes = list(rng.choice(CANONICAL, size=rng.integers(1, 11)))
    g = build_graph(PeptideSpec(codes))
    total = Counter()
    for c in codes:
        total.update(reg.get(c).graph.formula())
    water = Counter({"H": 2 * (len(codes) - 1), "O": len(codes) - 1})
    assert g.formula() == +(total - water)
    assert not g.valence_problems()
    amides = 0
    for i, a in enumerate(g.atoms):
        if a.element == "C" and any(g.atoms[j].element == "O" and o == 2 for j, o in g.adj[i].items()):
            amides += sum(1 for j in g.adj[i] if g.atoms[j].element == "N")
    side_amides = sum(c in "nq" for c in codes)  # Asn/Gln carry a side-chain amide
    assert amides == len(codes) - 1 + side_amides


def test_disulfide(reg):
    open_form = PeptideSpec(["c", "c"])
    closed = PeptideSpec(["c", "c"], [(1, 2, "disulfide")])
    g = build_graph(closed)
    ss = [(i, j) for i, j, _ in g.bonds() if g.atoms[i].element == g.atoms[j].element == "S"]
    assert len(ss) == 1
    assert build_graph(open_form).formula()["H"] - g.formula()["H"] == 2
    assert rdkit_formula(peptide_to_smiles(closed)) == "C6H10N2O3S2"
    assert rdkit_formula(peptide_to_smiles(open_form)) == "C6H12N2O3S2"


def test_no_bonds_is_identity(reg):
    asm = assemble_backbone(["a", "c"], reg)
    before = [(a.element, a.h) for a in asm.graph.atoms]
    apply_intrachain_bonds(asm, [])
    apply_terminal_mods(asm, None, None, reg)
    assert [(a.element, a.h) for a in asm.graph.atoms] == before


def test_head_to_tail(reg):
    spec = PeptideSpec(["a", "a", "a"], [(1, 3, "head_to_tail")])
    g = build_graph(spec)
    assert g.ring_count() == 1
    assert rdkit_formula(peptide_to_smiles(spec)) == "C9H15N3O3"
    # no free amine H2 and no carboxylic acid left
    assert not any(a.element == "N" and a.h == 2 for a in g.atoms)
    assert not any(a.element == "O" and a.h == 1 for a in g.atoms)
    with pytest.raises(TerminusConsumed):
        build_graph(PeptideSpec(["a", "a", "a"], [(1, 3, "head_to_tail")], n_term="ac"))


def test_side_chain_lactam(reg):
    spec = PeptideSpec(["k", "a", "e"], [(1, 3, "side_chain_lactam")])
    g = build_graph(spec)
    open_g = build_graph(PeptideSpec(["k", "a", "e"]))
    assert g.ring_count() == 1
    diff = open_g.formula()
    diff.subtract(g.formula())
    assert +diff == Counter({"H": 2, "O": 1})


def test_terminal_mods(reg):
    assert formula(PeptideSpec(["a"], c_term="amid")) == "C3H8N2O"
    assert rdkit_formula(peptide_to_smiles(PeptideSpec(["a"], c_term="amid"))) == "C3H8N2O"
    free = build_graph(PeptideSpec(["a"])).formula()
    acetyl = build_graph(PeptideSpec(["a"], n_term="ac")).formula()
    acetyl.subtract(free)
    assert +acetyl == Counter({"C": 2, "H": 2, "O": 1})
    with pytest.raises(UnknownModification):
        build_graph(PeptideSpec(["a"], n_term="zzz"))


def test_bond_errors(reg):
    with pytest.raises(UnsupportedBondType):
        build_graph(PeptideSpec(["c", "c"], [(1, 2, "thioether")]))
    with pytest.raises(SiteNotReactive):
        build_graph(PeptideSpec(["a", "a"], [(1, 2, "disulfide")]))
    with pytest.raises(SiteNotReactive):
        build_graph(PeptideSpec(["c", "c"], [(1, 5, "disulfide")]))


def test_registry_extensible(reg):
    def noop(asm, i, j):
        pass

    register_bond_type("noop_test", noop)
    assert formula(PeptideSpec(["a", "a"], [(1, 2, "noop_test")])) == "C6H12N2O3"


def test_unknown_residue():
    with pytest.raises(UnknownResidue):
        peptide_to_selfies(PeptideSpec(["ZZZ"]))


def test_selfies_decodes_to_alanine():
    s = peptide_to_selfies(PeptideSpec(["a"]))
    assert is_isomorphic(decode_selfies(s), parse_smiles("CC(C(=O)O)N"))


def test_reverse_examples():
    assert selfies_to_peptide(peptide_to_selfies(PeptideSpec(["a", "a"]))).residues == ["a", "a"]
    assert selfies_to_peptide(peptide_to_selfies(PeptideSpec(["g", "a"]))).residues == ["g", "a"]
    assert selfies_to_peptide(peptide_to_selfies(PeptideSpec(["a", "g"]))).residues == ["a", "g"]
    with pytest.raises(NotAPeptide):
        selfies_to_peptide(smiles_to_selfies("C1=CC=CC=C1"))


def test_round_trip_random(reg):
    rng = np.random.default_rng(0)
    for _ in range(100):
        codes = list(rng.choice(CANONICAL, size=rng.integers(1, 9)))
        assert selfies_to_peptide(peptide_to_selfies(PeptideSpec(codes))).residues == codes


def test_registry_report(reg):
    assert reg.declared == 424
    assert len(reg.residues) + len(reg.rejects) == reg.declared
    assert all(code in reg for code in CANONICAL)
    text = reg.report()
    assert "quarantined" in text and str(len(reg.rejects)) in text
    for code, reason in reg.rejects:
        assert reason


def test_registry_file_with_sites(tmp_path):
    path = tmp_path / "res.tsv"
    path.write_text("#count\t2\n"
                    "x\tNCC(=O)O\tN=0;C=2;O=4\n"
                    "y\tC[Xe]\n", encoding="utf-8")
    r = load_registry(path)
    assert "x" in r and [c for c, _ in r.rejects] == ["y"]


def test_sequence_text_helpers():
    assert parse_sequence("ac[TYR-Bzl]k") == ["a", "c", "TYR-Bzl", "k"]
    assert format_sequence(["a", "TYR-Bzl"]) == "a[TYR-Bzl]"
    assert parse_bonds("disulfide:2-7;head_to_tail:1-9") == [(2, 7, "disulfide"), (1, 9, "head_to_tail")]


def test_non_canonical_residues_assemble(reg):
    rng = np.random.default_rng(3)
    codes = sorted(c for c in reg.residues if c not in CANONICAL)
    for code in rng.choice(codes, size=40, replace=False):
        g = build_graph(PeptideSpec(["a", code, "g"]))
        assert not g.valence_problems()
        assert Chem.MolFromSmiles(peptide_to_smiles(PeptideSpec(["a", code, "g"]))) is not None
