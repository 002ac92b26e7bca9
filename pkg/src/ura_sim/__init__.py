"""Pilot-free unsourced random access over a massive-MIMO uplink.

Sparse common codebook plus LDPC/QPSK transmit chain, a dictionary-learning
receiver that resolves its permutation and scale ambiguities with the code,
and a seeded Monte Carlo harness.
"""
from ._accel import backend, set_backend
from .codebook import Codebook, assign_codewords, extraction_map, generate_codebook
from .config import ScenarioConfig, load_preset, load_scenario
from .dictlearn import DlConfig, atom_budget, dl_decompose, mod_update, omp, sparse_code
from .errors import ConfigurationError, InfeasibleCodebookError, LdpcConstructionError
from .fec import LdpcCode, ldpc_decode_bp, ldpc_encode, make_ldpc, parity_error_count
from .metrics import TrialMetrics, aggregate, pupe, ser
from .phy import channel_apply, draw_scene, encode_user, encode_users, qpsk_demod_llr, qpsk_modulate
from .receiver import KaEstimatorConfig, ReceiverConfig, TrialResult, receive
from .runner import SweepSpec, run_sweep, run_trial, write_results

__version__ = "0.1.0"
