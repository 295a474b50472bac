"""voxelsam: interactive 3D segmentation workbench.

Precomputes per-slice neural image embeddings along the three Cartesian
axes, serves real-time promptable mask decoding from include/exclude
points, assembles masks into a multi-segment 3D label map, and completes
segments by slice-to-slice shape interpolation.
"""

__version__ = "0.1.0"

from .embedding_cache import (EmbeddingCache, PrecomputeJob, open_cache,
                              precompute, verify_cache)
from .labelmap_store import (LabelMap, MaskSlice, SegmentMeta, export_labelmap,
                             import_labelmap, infer_keyframes)
from .model_runtime import (DecodeResult, StubGraphPair, decode, encode,
                            load_graph, write_stub_models)
from .prompt_engine import (ModelPrompt, PromptPoint, PromptSet,
                            SegmentationSession, accept_mask, decode_prompt,
                            to_model_coords, to_slice_coords)
from .service_api import create_app
from .slice_interpolation import (InterpolationPlan, ShapePair, fill_between,
                                  interpolate_pair, plan_fill, signed_distance)
from .volume_io import (Axis, SliceImage, Volume3D, enhance_contrast,
                        extract_slice, load_volume, rescale_to_uint8,
                        save_volume, slice_shape)

__all__ = [
    "Axis",
    "DecodeResult",
    "EmbeddingCache",
    "InterpolationPlan",
    "LabelMap",
    "MaskSlice",
    "ModelPrompt",
    "PrecomputeJob",
    "PromptPoint",
    "PromptSet",
    "SegmentMeta",
    "SegmentationSession",
    "ShapePair",
    "SliceImage",
    "StubGraphPair",
    "Volume3D",
    "__version__",
    "accept_mask",
    "create_app",
    "decode",
    "decode_prompt",
    "encode",
    "enhance_contrast",
    "export_labelmap",
    "extract_slice",
    "fill_between",
    "import_labelmap",
    "infer_keyframes",
    "interpolate_pair",
    "load_graph",
    "load_volume",
    "open_cache",
    "plan_fill",
    "precompute",
    "rescale_to_uint8",
    "save_volume",
    "signed_distance",
    "slice_shape",
    "to_model_coords",
    "to_slice_coords",
    "verify_cache",
    "write_stub_models",
]
