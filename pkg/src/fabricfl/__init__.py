"""fabricfl: a privacy-preserving federated-learning data fabric.

Small models train across simulated clients; weight updates are
aggregated (optionally in the Paillier ciphertext domain) and stored in
a governed, content-addressed data lake with lineage and erasure.
"""

from .architectures import ArchitectureDescriptor, build_descriptor, param_count, propagate_shapes
from .encoding import CipherTensor, FixedPointCodec, decrypt_tensor, decrypt_vector, encrypt_tensor, encrypt_vector
from .federated import (
    RoundReport,
    SessionConfig,
    SessionResult,
    UpdateMetrics,
    WeightUpdate,
    aggregate_fedavg,
    aggregate_fedavg_encrypted,
    aggregate_fedmax,
    aggregate_fedmin,
    run_session,
    scaling_factors,
    split_shards,
)
from .lake import DataLake, ErasureReport, LakeEntry, LineageRecord, MasterDataSet
from .metrics import ConfusionMatrix, EvalReport, confusion, evaluate_scores, roc_auc, summarize
from .models import (
    LogRegClassifier,
    MLPClassifier,
    TinyCNNClassifier,
    evaluate,
    init_model,
)
from .paillier import (
    Ciphertext,
    PaillierKeypair,
    PaillierPublicKey,
    add_ciphertexts,
    decrypt,
    encrypt,
    generate_keypair,
    keypair_from_primes,
    multiply_plain,
)

__version__ = "0.1.0"
