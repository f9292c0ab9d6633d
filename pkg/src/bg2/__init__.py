"""bg2: synthetic blanket occlusion toolkit.

Simulates a blanket over an animated body mesh, bakes the simulation,
renders it as transparent textured layers, composites those over source
frames with occlusion-aware keypoint annotations, and evaluates pose
predictions (PCK / NME) with report tables.
"""

from .bake import BakeConfig, BakeFile, ResetReason, SimSegment, bake_video
from .cloth import (BedBox, ClothGrid, ClothParams, detect_falloff,
                    drape_init, gravity_direction, step)
from .compose import Keypoint2D, KeypointState, alpha_over, annotate
from .geometry import (Camera, MeshCollider, MeshSequence, SequenceCategory,
                       TriMesh, closest_point_on_mesh, project, torso_frame,
                       unproject)
from .manifest import JobManifest, Scene, VideoSpec, load_manifest
from .metrics import (MetricReport, PoseRecord, ReportRow, RigConfig,
                      SkeletonMap, bbox_from_joints, build_report,
                      evaluate_set, nme, pck, remap_skeleton)
from .render import (AreaLight, RenderTarget, cloth_surface, render_layer,
                     shade)
from .texture import (TextureParams, TextureRanges, height, albedo,
                      bump_normal, sample_params, value_noise)

__version__ = "0.1.0"
