"""Masked discrete diffusion over SELFIES tokens.

Subpackages and modules:

- ``tokens``: vocabulary and tokenization
- ``chem``: molecular graphs, SMILES and SELFIES conversion
- ``diffusion``: noise schedule, forward process, posterior, losses
- ``denoiser``: denoiser contract, enumeration oracle, toy transformer
- ``guidance``: predictor-guided reverse steps
- ``sampler``: plain, guided and remasking generation loops
- ``peplink``: peptide specification to molecule conversion
- ``dataprep``: MIC/FICI rules, genome fragments, splits, metrics
- ``fusion``: molecule-strain cross attention and task heads
"""

__version__ = "0.1.0"
