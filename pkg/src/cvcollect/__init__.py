"""Bounded-error collection of connected-vehicle data and the baselines it is compared with."""
from .baselines import (BpSolverConfig, basis_pursuit, cs_decode, cs_select, uniform_decode,
                        uniform_encode)
from .ingest import parse_bsm_csv, segment_trips, synth_corpus, synth_trip
from .mpla import MplaEncoder, mpla_decode, mpla_encode, stream_encode
from .transforms import dct_compress, dct_forward, dct_inverse, dct_truncate
from .types import Sample, ThresholdConfig, Transmission, Trip

__version__ = "0.1.0"
