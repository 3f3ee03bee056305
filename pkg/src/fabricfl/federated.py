"""Federated training orchestration.

A session shards the dataset across simulated clients, runs local SGD
per round, and folds the client weight updates into a global model with
a pluggable rule: weighted averaging (plain or in the Paillier
ciphertext domain), or selection of the best client by accuracy or by
loss.  Everything is driven by one root seed, so identical configs give
bit-identical rounds.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .encoding import CipherTensor, FixedPointCodec, decrypt_tensor, encrypt_tensor
from .models import MODEL_KINDS, evaluate, init_model
from .paillier import (
    KeyMismatchError,
    PaillierKeypair,
    add_ciphertexts,
    generate_keypair,
    multiply_plain,
)
from .seeding import derive_seed
from .validation import as_float_array, check_binary_labels, check_consistent_length

AGGREGATORS = ("fedmax", "fedavg", "fedmin", "fedavg_encrypted")

_FACTOR_TOL = 1e-9


class ConfigError(ValueError):
    """Raised for invalid session configuration."""


class SessionError(RuntimeError):
    """Raised when a round fails; carries the failing round index."""

    def __init__(self, round_index: int, message: str):
        super().__init__(f"round {round_index} failed: {message}")
        self.round_index = round_index


@dataclass(frozen=True)
class UpdateMetrics:
    accuracy: float
    loss: float


@dataclass
class ClientState:
    """One simulated client: its data views, model, and latest metrics."""

    client_id: str
    model: Any
    train_indices: np.ndarray
    eval_indices: np.ndarray
    last_metrics: UpdateMetrics | None = None


@dataclass
class WeightUpdate:
    """One client's per-round model delta, plain or encrypted."""

    client_id: str
    round: int
    model_family: str
    payload: list[np.ndarray] | list[CipherTensor]
    scaling_factor: float | None
    metrics: UpdateMetrics

    @property
    def encrypted(self) -> bool:
        return bool(self.payload) and isinstance(self.payload[0], CipherTensor)


@dataclass
class RoundReport:
    round: int
    aggregator: str
    selected_client: str | None
    client_metrics: dict[str, UpdateMetrics]
    global_metrics: UpdateMetrics

    def to_dict(self) -> dict[str, Any]:
        return {
            "round": self.round,
            "aggregator": self.aggregator,
            "selected_client": self.selected_client,
            "clients": {
                cid: {"accuracy": m.accuracy, "loss": m.loss}
                for cid, m in self.client_metrics.items()
            },
            "global": {
                "accuracy": self.global_metrics.accuracy,
                "loss": self.global_metrics.loss,
            },
        }


_CONFIG_KEYS = {
    "model", "aggregator", "rounds", "clients", "local_epochs", "learning_rate",
    "seed", "dataset_path", "lake_path", "encrypt_features", "key_bits",
    "batch_size", "holdout_fraction",
}


@dataclass
class SessionConfig:
    model: str
    aggregator: str
    rounds: int
    clients: int
    learning_rate: float
    seed: int
    local_epochs: int = 1
    dataset_path: str | None = None
    lake_path: str | None = None
    encrypt_features: bool = False
    key_bits: int = 512
    batch_size: int = 32
    holdout_fraction: float = 0.2

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "SessionConfig":
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"model", "aggregator", "rounds", "clients", "learning_rate", "seed"} - set(raw)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        try:
            config = cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        config.validate()
        return config

    @classmethod
    def from_json_file(cls, path: str | Path) -> "SessionConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config document must be a JSON object")
        return cls.from_dict(raw)

    def validate(self) -> None:
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {sorted(MODEL_KINDS)}")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"unknown aggregator {self.aggregator!r}; expected one of {AGGREGATORS}")
        for name, value, minimum in (
            ("rounds", self.rounds, 1),
            ("clients", self.clients, 1),
            ("local_epochs", self.local_epochs, 1),
            ("batch_size", self.batch_size, 1),
        ):
            if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
                raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigError("holdout_fraction must be in [0, 1)")
        if self.key_bits < 16 or self.key_bits % 2:
            raise ConfigError("key_bits must be an even integer >= 16")
        if not isinstance(self.encrypt_features, bool):
            raise ConfigError("encrypt_features must be a boolean")

    @property
    def needs_key(self) -> bool:
        return self.encrypt_features or self.aggregator == "fedavg_encrypted"


@dataclass
class SessionResult:
    round_reports: list[RoundReport]
    model: Any
    test_indices: np.ndarray
    shard_indices: list[np.ndarray]
    client_train_indices: dict[str, np.ndarray]
    keypair: PaillierKeypair | None = None


# --- sharding and scaling --------------------------------------------------


def split_shards(dataset, num_clients: int, seed: int) -> list[np.ndarray]:
    """Shuffle then deal round-robin; returns index arrays into the dataset.

    Shard sizes differ by at most one and together partition the dataset.
    """
    n = len(dataset)
    if num_clients < 1:
        raise ValueError(f"num_clients must be >= 1, got {num_clients}")
    if n < num_clients:
        raise ValueError(f"cannot split {n} samples across {num_clients} clients")
    perm = np.random.default_rng(seed).permutation(n)
    return [perm[i::num_clients] for i in range(num_clients)]


def scaling_factors(shard_sizes) -> list[float]:
    """Per-client data fraction; always sums to 1."""
    sizes = list(shard_sizes)
    if not sizes:
        raise ValueError("shard_sizes must be non-empty")
    if any(s < 1 for s in sizes):
        raise ValueError("every shard size must be >= 1")
    total = sum(sizes)
    return [s / total for s in sizes]


# --- aggregation rules -------------------------------------------------------


def _canonical(updates: list[WeightUpdate]) -> list[WeightUpdate]:
    if not updates:
        raise ValueError("need at least one update to aggregate")
    return sorted(updates, key=lambda u: u.client_id)


def _check_factors(updates: list[WeightUpdate]) -> list[float]:
    factors = []
    for update in updates:
        if update.scaling_factor is None:
            raise ValueError(f"update from {update.client_id} has no scaling factor")
        factors.append(update.scaling_factor)
    if abs(sum(factors) - 1.0) > _FACTOR_TOL:
        raise ValueError(f"scaling factors sum to {sum(factors)!r}, expected 1")
    return factors


def _check_uniform_shapes(updates: list[WeightUpdate]) -> None:
    shapes = [tuple(np.shape(t) if not isinstance(t, CipherTensor) else t.shape for t in u.payload)
              for u in updates]
    if any(s != shapes[0] for s in shapes[1:]):
        raise ValueError("updates carry mismatched tensor shapes")


def aggregate_fedavg(updates: list[WeightUpdate]) -> list[np.ndarray]:
    """Elementwise weighted sum of plain payloads, in canonical client order."""
    ups = _canonical(updates)
    factors = _check_factors(ups)
    if any(u.encrypted for u in ups):
        raise ValueError("aggregate_fedavg requires plain payloads")
    _check_uniform_shapes(ups)
    result = [np.zeros_like(np.asarray(t, dtype=np.float64)) for t in ups[0].payload]
    for factor, update in zip(factors, ups):
        for acc, tensor in zip(result, update.payload):
            acc += factor * np.asarray(tensor, dtype=np.float64)
    return result


def _select(updates: list[WeightUpdate], key, best) -> tuple[list | list[CipherTensor], str]:
    ups = _canonical(updates)
    values = []
    for update in ups:
        if update.metrics is None:
            raise ValueError(f"update from {update.client_id} is missing metrics")
        values.append(key(update.metrics))
    winner = ups[values.index(best(values))]
    payload = winner.payload if winner.encrypted else [np.array(t, dtype=np.float64) for t in winner.payload]
    return payload, winner.client_id


def aggregate_fedmax(updates: list[WeightUpdate]) -> tuple[list, str]:
    """Adopt the unscaled payload of the highest-accuracy client.

    Ties resolve to the lowest client in canonical (ascending id) order.
    """
    return _select(updates, lambda m: m.accuracy, max)


def aggregate_fedmin(updates: list[WeightUpdate]) -> tuple[list, str]:
    """Adopt the unscaled payload of the lowest-loss client."""
    return _select(updates, lambda m: m.loss, min)


def aggregate_fedavg_encrypted(
    updates: list[WeightUpdate], codec: FixedPointCodec
) -> list[CipherTensor]:
    """Weighted average computed entirely on ciphertexts.

    Each ciphertext is raised to the encoded scaling factor and the
    results are multiplied together, which under Paillier is the encrypted
    weighted sum.  The output carries twice the codec scale; decode with
    scale_bits doubled.
    """
    ups = _canonical(updates)
    factors = _check_factors(ups)
    if not all(u.encrypted for u in ups):
        raise ValueError("aggregate_fedavg_encrypted requires ciphertext payloads")
    _check_uniform_shapes(ups)
    key_ids = {t.key_id for u in ups for t in u.payload}
    if len(key_ids) > 1:
        raise KeyMismatchError("updates were encrypted under different keys")
    encoded_factors = [codec.encode(f) for f in factors]
    result: list[CipherTensor] = []
    for tensor_index, reference in enumerate(ups[0].payload):
        accumulated = None
        for enc_factor, update in zip(encoded_factors, ups):
            tensor = update.payload[tensor_index]
            scaled = [multiply_plain(ct, enc_factor) for ct in tensor.values]
            if accumulated is None:
                accumulated = scaled
            else:
                accumulated = [add_ciphertexts(a, b) for a, b in zip(accumulated, scaled)]
        result.append(CipherTensor(shape=reference.shape, values=tuple(accumulated)))
    return result


# --- the session loop --------------------------------------------------------


def _client_id(index: int) -> str:
    return f"client-{index:03d}"


def _client_holdout(shard: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic 80/20 split of a shard into train and eval views."""
    if len(shard) < 2:
        return shard, shard
    perm = np.random.default_rng(seed).permutation(len(shard))
    n_eval = max(1, round(0.2 * len(shard)))
    return shard[perm[n_eval:]], shard[perm[:n_eval]]


def run_session(config: SessionConfig, dataset=None, lake=None) -> SessionResult:
    """Run the full federated loop and return per-round reports.

    dataset is an (X, y) pair; when omitted it is loaded from
    config.dataset_path.  When a lake is given, every client update is
    persisted through it before aggregation.
    """
    config.validate()
    if dataset is None:
        if config.dataset_path is None:
            raise ConfigError("config has no dataset_path and no dataset was passed")
        from .dataio import load_feature_dir

        dataset = load_feature_dir(config.dataset_path)
    X, y = dataset
    X = as_float_array(X, "X", ndim=2)
    y = check_binary_labels(y, "y")
    check_consistent_length(X, y)

    keypair = None
    codec = None
    if config.needs_key:
        key_rng = random.Random(derive_seed(config.seed, "keygen"))
        keypair = generate_keypair(config.key_bits, rng=key_rng)
        codec = FixedPointCodec.for_key(keypair.public)

    if config.encrypt_features:
        from .dataio import cipher_map_values

        if X.size and (X.min() < 0 or X.max() > 1):
            raise ConfigError("encrypt_features requires features in [0, 1]")
        X = cipher_map_values(X, keypair.public, codec, derive_seed(config.seed, "cipher-features"))

    n = len(y)
    perm = np.random.default_rng(derive_seed(config.seed, "holdout")).permutation(n)
    n_test = round(config.holdout_fraction * n)
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    if len(train_idx) < config.clients:
        raise ConfigError("not enough training samples for the requested client count")
    eval_idx = test_idx if len(test_idx) else train_idx

    relative = split_shards(train_idx, config.clients, derive_seed(config.seed, "shards"))
    shards = [train_idx[r] for r in relative]

    hyper = {"learning_rate": config.learning_rate, "batch_size": config.batch_size}
    model_seed = derive_seed(config.seed, "model-init")
    global_model = init_model(config.model, X.shape[1], model_seed, **hyper)

    clients: list[ClientState] = []
    for i, shard in enumerate(shards):
        cid = _client_id(i)
        train_part, eval_part = _client_holdout(shard, derive_seed(config.seed, "client-holdout", cid))
        clients.append(
            ClientState(
                client_id=cid,
                model=init_model(config.model, X.shape[1], model_seed, **hyper),
                train_indices=train_part,
                eval_indices=eval_part,
            )
        )
    factors = scaling_factors([len(c.train_indices) for c in clients])

    reports: list[RoundReport] = []
    for round_index in range(1, config.rounds + 1):
        try:
            report = _run_round(config, round_index, clients, factors, X, y,
                                global_model, keypair, codec, lake, eval_idx)
        except (KeyboardInterrupt, SystemExit):
            raise
        except Exception as exc:
            raise SessionError(round_index, str(exc)) from exc
        reports.append(report)
    return SessionResult(
        round_reports=reports,
        model=global_model,
        test_indices=test_idx,
        shard_indices=shards,
        client_train_indices={c.client_id: c.train_indices for c in clients},
        keypair=keypair,
    )


def _run_round(config, round_index, clients, factors, X, y, global_model,
               keypair, codec, lake, eval_idx) -> RoundReport:
    updates: list[WeightUpdate] = []
    client_metrics: dict[str, UpdateMetrics] = {}
    global_weights = global_model.get_weights()
    for factor, client in zip(factors, clients):
        model = client.model
        model.set_weights(global_weights)
        train, holdout = client.train_indices, client.eval_indices
        loss = 0.0
        for _ in range(config.local_epochs):
            loss = model.train_epoch(X[train], y[train])
        accuracy, _ = evaluate(model, X[holdout], y[holdout])
        metrics = UpdateMetrics(accuracy=accuracy, loss=loss)
        client.last_metrics = metrics
        client_metrics[client.client_id] = metrics

        if config.aggregator == "fedavg_encrypted":
            enc_rng = random.Random(
                derive_seed(config.seed, "encrypt", round_index, client.client_id)
            )
            payload = [
                encrypt_tensor(keypair.public, codec, w, rng=enc_rng)
                for w in model.get_weights()
            ]
        else:
            payload = model.get_weights()
        update = WeightUpdate(
            client_id=client.client_id,
            round=round_index,
            model_family=model.kind,
            payload=payload,
            scaling_factor=factor,
            metrics=metrics,
        )
        if lake is not None:
            lake.put(update)
        updates.append(update)

    selected = None
    if config.aggregator == "fedavg":
        global_model.set_weights(aggregate_fedavg(updates))
    elif config.aggregator == "fedmax":
        weights, selected = aggregate_fedmax(updates)
        global_model.set_weights(weights)
    elif config.aggregator == "fedmin":
        weights, selected = aggregate_fedmin(updates)
        global_model.set_weights(weights)
    else:
        encrypted = aggregate_fedavg_encrypted(updates, codec)
        decoded = [
            decrypt_tensor(keypair, codec, tensor, scale_bits=2 * codec.scale_bits)
            for tensor in encrypted
        ]
        global_model.set_weights(decoded)

    accuracy, loss = evaluate(global_model, X[eval_idx], y[eval_idx])
    return RoundReport(
        round=round_index,
        aggregator=config.aggregator,
        selected_client=selected,
        client_metrics=client_metrics,
        global_metrics=UpdateMetrics(accuracy=accuracy, loss=loss),
    )
