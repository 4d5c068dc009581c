"""Broadband in-air 3D sonar pipeline.

Synthetic scenes are captured as multi-channel 1-bit PDM streams, then turned
into acoustic images and pointclouds through a matched filter, delay-and-sum
beamforming, and envelope detection. The net module streams measurements from
embedded clients to a processing server; bench measures pipeline scaling.
"""

from .arrays import (DelayTable, DirectionGrid, MicArray, aperture_diameter,
                     array_doc, array_from_json, array_to_json, beampattern,
                     direction_grid_2d, direction_grid_3d, grid_array,
                     poisson_disc_array, steering_delays)
from .bench import BenchReport, bench_pipeline, linear_fit_r2
from .dsp import (AcousticImage, ProcessingConfig, delay_and_sum, envelope,
                  fft_convolve, matched_filter, process_measurement)
from .errors import (CapacityError, ClientError, CrcError, FramingError,
                     GenerationError, LengthError, MagicError, ParameterError,
                     StateError, VersionError)
from .fingerprint import canonical_json, fingerprint64
from .imaging import (PointCloud, export_csv, export_pgm,
                      export_pointcloud_csv, extract_pointcloud,
                      image_from_parts, image_metadata)
from .net import (Client, MeasurementPackage, Server, ServerConfig,
                  ServerStats, config_fingerprint, decode_image_payload,
                  decode_package, encode_image_payload, encode_package,
                  run_client, run_server)
from .pdm import (DECIMATION, FS_DECODED, FS_PDM, Measurement, PdmStream,
                  decode_measurement, lowpass_decimate, measurement_from_bytes,
                  measurement_to_bytes, pack_channels, pdm_decode, pdm_encode,
                  read_measurement, unpack_channel, write_measurement)
from .scene import (Reflector, Scene, scene_from_json, scene_to_json,
                    simulate_channels, simulate_measurement)
from .sync import (MarkerDetection, TriggerSchedule, detect_marker,
                   inject_marker, make_schedule)
from .waveform import (Waveform, log_fm_chirp, matched_kernel, sine,
                       waveform_from_params, waveform_to_csv)

__version__ = "0.1.0"

__all__ = [
    "AcousticImage", "BenchReport", "CapacityError", "Client", "ClientError",
    "CrcError", "DECIMATION", "DelayTable", "DirectionGrid", "FS_DECODED",
    "FS_PDM", "FramingError", "GenerationError", "LengthError", "MagicError",
    "MarkerDetection", "Measurement", "MeasurementPackage", "MicArray",
    "ParameterError", "PdmStream", "PointCloud", "ProcessingConfig",
    "Reflector", "Scene", "Server", "ServerConfig", "ServerStats",
    "StateError", "TriggerSchedule", "VersionError", "Waveform",
    "aperture_diameter", "array_doc", "array_from_json", "array_to_json",
    "beampattern", "bench_pipeline", "canonical_json", "config_fingerprint",
    "decode_image_payload", "decode_measurement", "decode_package",
    "delay_and_sum", "detect_marker", "direction_grid_2d", "direction_grid_3d",
    "encode_image_payload", "encode_package", "envelope", "export_csv",
    "export_pgm", "export_pointcloud_csv", "extract_pointcloud",
    "fft_convolve", "fingerprint64", "grid_array", "image_from_parts",
    "image_metadata", "inject_marker", "linear_fit_r2", "log_fm_chirp",
    "lowpass_decimate", "make_schedule", "matched_filter", "matched_kernel",
    "measurement_from_bytes", "measurement_to_bytes", "pack_channels",
    "pdm_decode", "pdm_encode", "poisson_disc_array", "process_measurement",
    "read_measurement", "run_client", "run_server", "scene_from_json",
    "scene_to_json", "simulate_channels", "simulate_measurement", "sine",
    "steering_delays", "unpack_channel", "waveform_from_params",
    "waveform_to_csv", "write_measurement",
]
