"""Data preparation: activity labels, genome and text context, splits, metrics."""

from .genome import (
    GenomeEmbedding,
    GenomeFragment,
    StrainContext,
    fragment_contig,
    pool_fragment_embedding,
    read_fasta,
    scale_genome_embeddings,
)
from .metrics import classification_metrics, regression_metrics
from .mic import MicRecord, binarize_fici, mic_to_label, parse_mic, to_micromolar
from .novelty import max_tanimoto, tanimoto, token_fingerprint
from .splits import strain_wise_splits
from .text import redact_strain_name

__all__ = [
    "GenomeEmbedding", "GenomeFragment", "StrainContext", "fragment_contig",
    "pool_fragment_embedding", "read_fasta", "scale_genome_embeddings",
    "classification_metrics", "regression_metrics",
    "MicRecord", "binarize_fici", "mic_to_label", "parse_mic", "to_micromolar",
    "max_tanimoto", "tanimoto", "token_fingerprint",
    "strain_wise_splits", "redact_strain_name",
]
