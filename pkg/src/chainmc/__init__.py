"""Chain-linked integration of overlapping low-rank blocks.

Blocks of a large low-rank matrix observed on overlapping entity sets are
embedded one at a time, aligned on their shared entities and chained to
estimate blocks that were never observed together.
"""

from .aggregate import NoiseEstimate, aggregate, estimate_noise, fuse, redistribute
from .align import AlignmentMap, compose, lsq_align, procrustes
from .blocks import (EntityIndexSet, ObservedBlock, RescaledBlock, compute_overlap,
                     estimate_q, load_manifest, rescale)
from .embed import (Embedding, ResidualScore, Signature, embed, embed_asymmetric,
                    embed_indefinite, embed_psd, residual_score, select_rank)
from .errors import (ChainMCError, DataError, DegenerateSpectrumWarning,
                     NonUniqueAlignmentWarning, NumericalError, SelfOverlapWarning)
from .graph import (build_graph, holistic_recover, kruskal_mst, recoverability,
                    select_chain)
from .inference import (confidence_interval, entry_stderr, normal_quantile, stderr_matrix,
                        variance_components)
from .integrate import (RecoveredBlock, cmmi, cmmi_asymmetric, cmmi_indefinite, cmmi_psd,
                        fit_chain)

__version__ = "0.1.0"

__all__ = [
    "NoiseEstimate",
    "aggregate",
    "estimate_noise",
    "fuse",
    "redistribute",
    "AlignmentMap",
    "compose",
    "lsq_align",
    "procrustes",
    "EntityIndexSet",
    "ObservedBlock",
    "RescaledBlock",
    "compute_overlap",
    "estimate_q",
    "load_manifest",
    "rescale",
    "Embedding",
    "ResidualScore",
    "Signature",
    "embed",
    "embed_asymmetric",
    "embed_indefinite",
    "embed_psd",
    "residual_score",
    "select_rank",
    "ChainMCError",
    "DataError",
    "DegenerateSpectrumWarning",
    "NonUniqueAlignmentWarning",
    "NumericalError",
    "SelfOverlapWarning",
    "build_graph",
    "holistic_recover",
    "kruskal_mst",
    "recoverability",
    "select_chain",
    "confidence_interval",
    "entry_stderr",
    "normal_quantile",
    "stderr_matrix",
    "variance_components",
    "RecoveredBlock",
    "cmmi",
    "cmmi_asymmetric",
    "cmmi_indefinite",
    "cmmi_psd",
    "fit_chain",
]
