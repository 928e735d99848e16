"""Strain-wise cross-validation folds."""

from collections import defaultdict

import numpy as np

from ..errors import TooFewStrains


def species_of(strain):
    """Genus and species: the first two words of a strain name."""
    return " ".join(strain.split()[:2])


def strain_wise_splits(records, k=3, seed=0, species_fn=species_of):
    """k folds of (train indices, test indices) with strains held out whole.

    ``records`` are (molecule, strain, label) tuples. Within each species the
    strains are shuffled and cut into k near-equal groups; fold f tests group
    f of every species.
    """
    by_species = defaultdict(set)
    for _, strain, *_ in records:
        by_species[species_fn(strain)].add(strain)
    rng = np.random.default_rng(seed)
    fold_of = {}
    for sp in sorted(by_species):
        strains = sorted(by_species[sp])
        if len(strains) < k:
            raise TooFewStrains(f"species {sp!r} has {len(strains)} strains, need {k}")
        order = rng.permutation(len(strains))
        for f, group in enumerate(np.array_split(order, k)):
            for i in group:
                fold_of[strains[i]] = f
    strain_fold = np.array([fold_of[r[1]] for r in records], dtype=np.int64)
    idx = np.arange(len(records))
    return [(idx[strain_fold != f], idx[strain_fold == f]) for f in range(k)]
