"""Locally differentially private bit-vector encodings for distance estimation and clustering."""

from .core import (BitVector, ConfigError, Dataset, EncodingConfig, HashFamily, InputError, Schema,
                   derive_hash_family, derive_hash_families, validate_dataset)
from .encoder import EncodedDataset, EncodedRecord, Mechanism, bv_encode, dpbv_encode, encode_dataset, encode_record
from .privacy import PrivacyParams, delta_of, error_bound, expected_popcount, s_of
from .distance import (DistanceMatrix, build_distance_matrix, bv_estimate, distance_consistence, dpbv_estimate,
                       expected_hamming, hamming)
from .clustering import ClusterAssignment, dbscan, kcluster, nmi
from .multiparty import Custodian, SimulationParams, simulate

__all__ = [
    "BitVector", "ConfigError", "Dataset", "EncodingConfig", "HashFamily", "InputError", "Schema",
    "derive_hash_family", "derive_hash_families", "validate_dataset",
    "EncodedDataset", "EncodedRecord", "Mechanism", "bv_encode", "dpbv_encode", "encode_dataset", "encode_record",
    "PrivacyParams", "delta_of", "error_bound", "expected_popcount", "s_of",
    "DistanceMatrix", "build_distance_matrix", "bv_estimate", "distance_consistence", "dpbv_estimate",
    "expected_hamming", "hamming",
    "ClusterAssignment", "dbscan", "kcluster", "nmi",
    "Custodian", "SimulationParams", "simulate",
]
