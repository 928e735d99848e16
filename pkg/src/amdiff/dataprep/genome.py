"""Genome fragments, pooled fragment embeddings and strain context matrices."""

from dataclasses import dataclass

import numpy as np

from ..errors import AlreadyScaled, DataError, EmptyMatrix, OverflowToInfinity

GENOME_SCALE = 1e14


@dataclass(frozen=True)
class GenomeFragment:
    contig_id: str
    start: int
    end: int
    sequence: str


def read_fasta(path):
    """[(record id, sequence)] from a FASTA file."""
    records, name, chunks = [], None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith(">"):
                if name is not None:
                    records.append((name, "".join(chunks)))
                name, chunks = line[1:].split()[0] if line[1:].strip() else "", []
            else:
                if name is None:
                    raise DataError("sequence data before the first FASTA header")
                chunks.append(line)
    if name is not None:
        records.append((name, "".join(chunks)))
    return records


def fragment_contig(seq, step=10000, window=11000, contig_id=""):
    """Windows at 0, step, 2*step, ... cut at the contig end.

    A window is kept only if it reaches past the end of the previous one.
    """
    if not seq:
        raise DataError("empty contig")
    if not 0 < step < window:
        raise ValueError("need 0 < step < window")
    out, prev_end = [], 0
    for start in range(0, len(seq), step):
        end = min(start + window, len(seq))
        if end > prev_end:
            out.append(GenomeFragment(contig_id, start, end, seq[start:end]))
            prev_end = end
    return out


def pool_fragment_embedding(per_base):
    per_base = np.asarray(per_base, dtype=np.float64)
    if per_base.ndim != 2 or per_base.shape[0] == 0:
        raise EmptyMatrix("need an (L, d) matrix with L >= 1")
    return per_base.mean(axis=0)


@dataclass(frozen=True)
class GenomeEmbedding:
    """Fragment embedding matrix plus whether the 1e14 factor was applied."""
    matrix: np.ndarray
    scaled: bool = False


def scale_genome_embeddings(E):
    """Multiply by 1e14 once. A GenomeEmbedding already scaled is refused."""
    if isinstance(E, GenomeEmbedding):
        if E.scaled:
            raise AlreadyScaled("genome embeddings are already scaled")
        E = E.matrix
    E = np.asarray(E, dtype=np.float64)
    if not np.all(np.isfinite(E)):
        raise DataError("genome embeddings contain non-finite values")
    with np.errstate(over="ignore"):
        out = E * GENOME_SCALE
    if not np.all(np.isfinite(out)):
        raise OverflowToInfinity("scaling overflowed to infinity")
    return GenomeEmbedding(out, True)


@dataclass
class StrainContext:
    strain_id: str
    genome: np.ndarray
    text: np.ndarray

    def __post_init__(self):
        for name in ("genome", "text"):
            m = np.atleast_2d(np.asarray(getattr(self, name), dtype=np.float64))
            if m.shape[0] < 1 or m.shape[1] < 1:
                raise EmptyMatrix(f"{name} matrix needs at least one row")
            if not np.all(np.isfinite(m)):
                raise DataError(f"{name} matrix has non-finite entries")
            setattr(self, name, m)


def save_matrix(path, M, scaled=None):
    """Text matrix: '#shape<TAB>rows<TAB>cols' header, optional '#scaled' flag, rows of numbers."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#shape\t{M.shape[0]}\t{M.shape[1]}\n")
        if scaled is not None:
            fh.write(f"#scaled\t{int(bool(scaled))}\n")
        for row in M:
            fh.write("\t".join(repr(float(x)) for x in row) + "\n")


def load_matrix(path):
    """Returns (matrix, scaled flag or None). ``.npy`` files carry no flag."""
    if str(path).endswith(".npy"):
        return np.load(path), None
    shape, scaled, rows = None, None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#shape"):
                shape = tuple(int(x) for x in line.split()[1:3])
            elif line.startswith("#scaled"):
                scaled = bool(int(line.split()[1]))
            elif line.strip() and not line.startswith("#"):
                rows.append([float(x) for x in line.split()])
    if shape is None:
        raise DataError(f"{path}: missing #shape header")
    M = np.array(rows, dtype=np.float64).reshape(-1, shape[1]) if rows else np.zeros((0, shape[1]))
    if M.shape != shape:
        raise DataError(f"{path}: header says {shape}, data is {M.shape}")
    return M, scaled
