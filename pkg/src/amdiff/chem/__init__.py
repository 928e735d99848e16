from .graph import Atom, MolecularGraph, parse_smiles, to_smiles, is_isomorphic
from .selfies import selfies_to_smiles, smiles_to_selfies, decode_selfies, encode_graph, split_selfies

__all__ = [
    "Atom", "MolecularGraph", "parse_smiles", "to_smiles", "is_isomorphic",
    "selfies_to_smiles", "smiles_to_selfies", "decode_selfies", "encode_graph", "split_selfies",
]
