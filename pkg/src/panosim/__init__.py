"""360 degree video streaming simulator with viewpoint-aware perceptual quality."""

from .jnd import ActionState, JndModel, action_ratio, jnd_360
from .manifest import Manifest, build_manifest, load_manifest, parse_manifest, save_manifest, serialize_manifest
from .pspnr import chunk_pspnr, pmse, pspnr_from_pmse, tile_pmse
from .simulator import Scheme, SessionResult, compare_schemes, mos_from_pspnr, run_session
from .synth import SceneSpec, generate_network_trace, generate_synthetic_video, generate_viewpoint_trace
from .tiling import Tiling, build_tiling, efficiency_scores, group_tiles
from .traces import NetworkTrace, Rect, VideoDescriptor, ViewpointTrace

__version__ = "0.1.0"

__all__ = [
    "ActionState", "JndModel", "Manifest", "NetworkTrace", "Rect", "SceneSpec", "Scheme", "SessionResult", "Tiling",
    "VideoDescriptor", "ViewpointTrace", "action_ratio", "build_manifest", "build_tiling", "chunk_pspnr",
    "compare_schemes", "efficiency_scores", "generate_network_trace", "generate_synthetic_video",
    "generate_viewpoint_trace", "group_tiles", "jnd_360", "load_manifest", "mos_from_pspnr",
    "parse_manifest", "pmse", "pspnr_from_pmse", "run_session", "save_manifest", "serialize_manifest",
    "tile_pmse",
]
