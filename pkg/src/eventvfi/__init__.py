"""Align event-camera streams to frame video and interpolate frames with events."""
from .accum import (AccumulationFrame, VoxelGrid, accumulate, accumulate_sequence, frame_abs_diff,
                    normalize_accum, psnr, read_voxel_grid, ssim, to_voxel_grid, write_voxel_grid)
from .align import (AlignConfig, Projection, SpatialRegistration, TemporalAlignment, build_projection,
                    coarse_offset, estimate_scale, estimate_shift, project_event, project_stream,
                    register_features, split_interleaved, temporal_search)
from .event_core import (Event, EventFormatError, EventStream, FrameFormatError, FrameSequence,
                         GrayFrame, RgbFrame, concat_events, parse_events_binary, parse_events_csv,
                         read_events, read_frame, read_sequence, slice_events, to_grayscale,
                         write_events, write_events_binary, write_events_csv, write_frame,
                         write_sequence)
from .interp import (FlowField, InterpolationRequest, blend, calibrate_contrast, estimate_flow,
                     interpolate, refine_warp, synthesis_integrate, upscale_sequence, warp_frame)
from .synth import (EventCameraModel, SceneSpec, SensorView, disc, generate_events,
                    generate_rgb_sequence, rect, render_frame)

__version__ = "0.1.0"
