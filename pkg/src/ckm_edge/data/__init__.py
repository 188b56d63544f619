"""CKM grids, encodings, file formats, synthetic data and splits."""

from ckm_edge.data.dataset import DatasetSplit, load_dataset, save_dataset, split_regions
from ckm_edge.data.encoding import (
    NO_SIGNAL,
    aoa_sine_to_pixel,
    gain_db_to_pixel,
    pixel_to_aoa_sine,
    pixel_to_aoa_sine_array,
    pixel_to_gain_db,
)
from ckm_edge.data.grid import AOA, GAIN, CkmGrid, project_to_encoding
from ckm_edge.data.io import ObservationRecord, load_grid, save_grid
from ckm_edge.data.synth import SynthParams, synth_generate

__all__ = [
    "AOA",
    "GAIN",
    "NO_SIGNAL",
    "CkmGrid",
    "DatasetSplit",
    "ObservationRecord",
    "SynthParams",
    "aoa_sine_to_pixel",
    "gain_db_to_pixel",
    "load_dataset",
    "load_grid",
    "pixel_to_aoa_sine",
    "pixel_to_aoa_sine_array",
    "pixel_to_gain_db",
    "project_to_encoding",
    "save_dataset",
    "save_grid",
    "split_regions",
    "synth_generate",
]
