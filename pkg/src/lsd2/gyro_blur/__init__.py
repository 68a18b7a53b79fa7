"""Gyroscope-driven camera rotation, rolling-shutter PSFs and blur rendering."""
from .blur import apply_blur
from .psf import (DEFAULT_MAX_RADIUS, DEFAULT_SAMPLES, OversizedBlurError, PsfField,
                  PsfKernel, ShutterSpec, homography_at, psf_at, psf_batch, psf_field,
                  row_start_time, splat, trajectories, densify)
from .rotation import (GyroFormatError, GyroSample, GyroTrack, Intrinsics, Rotation,
                       TrackRangeError, constant_track, integrate_rotation, quat_exp,
                       quat_mul, quat_normalize, quat_to_matrix, read_gyro_log,
                       synthetic_shake, write_gyro_log)

__all__ = [
    "apply_blur", "DEFAULT_MAX_RADIUS", "DEFAULT_SAMPLES", "OversizedBlurError", "PsfField",
    "PsfKernel", "ShutterSpec", "homography_at", "psf_at", "psf_batch", "psf_field",
    "row_start_time", "splat", "trajectories", "densify", "GyroFormatError", "GyroSample", "GyroTrack",
    "Intrinsics", "Rotation", "TrackRangeError", "constant_track", "integrate_rotation",
    "quat_exp", "quat_mul", "quat_normalize", "quat_to_matrix", "read_gyro_log",
    "synthetic_shake", "write_gyro_log",
]
