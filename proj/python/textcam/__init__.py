"""Text-grounded class activation maps.

Thin re-export of the C++ core. Arrays are float64 NumPy arrays except
bundle tensors (float32) and rendered images (uint8).
"""

from ._core import (
    TextcamError,
    ablate,
    admm_solve,
    build_table,
    color_dominant_mask,
    concept_scores,
    encode_png,
    gap,
    gram_offdiag,
    greedy_relocate,
    group_saliency,
    lda_direction,
    partition_objective,
    read_bundle,
    render,
    run_clevr_protocol,
    saliency,
    select_extremes,
    semantic_representation,
    sparse_objective,
    synth_clevr_features,
    top_k_indices,
    weighted_semantics,
    weights_from_gradients,
    weights_from_head,
    write_bundle,
)

__all__ = [
    "TextcamError",
    "ablate",
    "admm_solve",
    "build_table",
    "color_dominant_mask",
    "concept_scores",
    "encode_png",
    "gap",
    "gram_offdiag",
    "greedy_relocate",
    "group_saliency",
    "lda_direction",
    "partition_objective",
    "read_bundle",
    "render",
    "run_clevr_protocol",
    "saliency",
    "select_extremes",
    "semantic_representation",
    "sparse_objective",
    "synth_clevr_features",
    "top_k_indices",
    "weighted_semantics",
    "weights_from_gradients",
    "weights_from_head",
    "write_bundle",
]
