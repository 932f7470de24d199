"""Simulated speckle-based optical PUF with single-pixel readout."""
from .challenge import Challenge, decode_challenge, encode_challenge, generate_challenge, generate_challenges
from .keygen import BinaryKey, ThresholdSpec, build_key, extract_bits
from .measurement import DetectorConfig, GammaFit, fit_gamma, measure_counts, respond, respond_batch
from .protocol import AuthSession, CrpDatabase, CrpRecord, enroll, open_session, verify
from .puf import MisalignmentParams, PufInstance, apply_misalignment, synthesize_puf

__version__ = "0.1.0"

__all__ = [
    "AuthSession",
    "BinaryKey",
    "Challenge",
    "CrpDatabase",
    "CrpRecord",
    "DetectorConfig",
    "GammaFit",
    "MisalignmentParams",
    "PufInstance",
    "ThresholdSpec",
    "apply_misalignment",
    "build_key",
    "decode_challenge",
    "encode_challenge",
    "enroll",
    "extract_bits",
    "fit_gamma",
    "generate_challenge",
    "generate_challenges",
    "measure_counts",
    "open_session",
    "respond",
    "respond_batch",
    "synthesize_puf",
    "verify",
]
