"""Server, aggregator, and client role machines plus round orchestration.

Four modes share one message flow (broadcast, N_c local updates, one
aggregate, next broadcast):

* ``plain``: everything in the clear; the reference behaviour.
* ``sifl-m1``: the server broadcasts immersion-encoded parameters with fresh
  kernel noise each round, clients run the immersed optimizer, the untrusted
  aggregator averages encoded updates, the server decodes and re-encodes.
* ``sifl-m2``: additionally the aggregator widens its average with its own
  keyed coding before the server sees it, so the server handles only
  (n_tilde x p) matrices and never an intermediate plaintext global. Clients
  collapse the widening with the shared right-inverse vector at the start of
  the next round. On the final round the aggregator skips the widening so the
  server's decode yields the trained model.
* ``noisy-baseline``: clip-then-add-noise on uploads, with the distortion
  left in; the comparison point that pays for privacy with accuracy.

Key material per role follows the trust model: the server never holds the
aggregator's keys, the aggregator holds no immersion material, and clients
hold only pi1/pi1_left (via a coding view) plus the shared pi2_right vector.

Everything is deterministic given a master seed: minibatch streams are
derived per (client, round) independent of mode, noise streams per
(party, round).
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import wire
from .coding import AggregatorKeys, ServerKeys, decode_model, encode_aggregate
from .dp import PrivacyParams, sample_noise
from .errors import (
    ConfigError,
    DuplicateClient,
    InvalidArgs,
    KeyMismatch,
    MissingClient,
    ProtocolOrderError,
    ShapeMismatch,
)
from .models import Dataset, accuracy as model_accuracy, loss_and_grad, LinearRegression
from .optim import LocalRunConfig, init_state, plain_local_run, target_local_run
from .seeds import derive_rng

MODE_PLAIN = "plain"
MODE_SIFL_M1 = "sifl-m1"
MODE_SIFL_M2 = "sifl-m2"
MODE_BASELINE = "noisy-baseline"
ALL_MODES = (MODE_PLAIN, MODE_SIFL_M1, MODE_SIFL_M2, MODE_BASELINE)


@dataclass(frozen=True)
class Mode:
    """Protocol variant; the baseline carries its upload-noise deviation."""

    kind: str
    baseline_sigma: float | None = None

    def __post_init__(self):
        if self.kind not in ALL_MODES:
            raise InvalidArgs(f"unknown mode {self.kind!r}")
        if self.kind == MODE_BASELINE and (self.baseline_sigma is None
                                           or self.baseline_sigma <= 0):
            raise InvalidArgs("noisy-baseline needs a positive noise sigma")

    @property
    def encoded(self) -> bool:
        return self.kind in (MODE_SIFL_M1, MODE_SIFL_M2)


# ---------------------------------------------------------------------------
# roles
# ---------------------------------------------------------------------------

@dataclass
class ServerRole:
    mode: Mode
    spec: object
    keys: ServerKeys | None
    privacy: PrivacyParams
    total_rounds: int
    t: int = 0
    w_plain: np.ndarray | None = None   # plain/M1 only; M2 never sees one
    coding_seconds: float = 0.0


@dataclass
class ClientRole:
    client_id: int
    mode: Mode
    spec: object
    data: Dataset
    run_cfg: LocalRunConfig
    opt_kind: object
    coding_view: object | None = None      # pi1/pi1_left operations
    pi2_right: np.ndarray | None = None    # shared by the aggregator (M2)
    t: int = 0


@dataclass
class AggregatorRole:
    mode: Mode
    client_ids: tuple
    keys: AggregatorKeys | None
    privacy: PrivacyParams
    total_rounds: int
    t: int = 0


def _draw_server_noise(role: ServerRole, cols: int, rng) -> np.ndarray:
    k = role.keys.kernel_dim
    return sample_noise(role.privacy.noise_kind, k, cols, role.privacy.sigma1, rng)


def server_init(mode: Mode, spec, keys: ServerKeys | None,
                privacy: PrivacyParams, total_rounds: int, init_rng,
                noise_rng) -> tuple[ServerRole, wire.Message]:
    """Draw the initial model and produce the first broadcast."""
    if mode.encoded:
        if keys is None:
            raise KeyMismatch("SIFL modes need server keys")
        if keys.n != spec.n:
            raise KeyMismatch(f"keys encode n={keys.n} but the model has n={spec.n}")
    role = ServerRole(mode=mode, spec=spec, keys=keys, privacy=privacy,
                      total_rounds=total_rounds)
    w0 = init_rng.uniform(-0.05, 0.05, spec.n)
    role.w_plain = w0
    if not mode.encoded:
        return role, wire.BroadcastPlain(round=0, w=w0)
    start = time.perf_counter()
    r1 = _draw_server_noise(role, 1, noise_rng)[:, 0]
    w_tilde = keys.apply_pi1(w0) + keys.apply_n1(r1)
    role.coding_seconds += time.perf_counter() - start
    return role, wire.BroadcastEncoded(round=0, w_tilde=w_tilde)


def client_round(role: ClientRole, msg, batch_rng,
                 noise_rng=None) -> wire.LocalUpdate:
    """Run one local training pass and produce the upload."""
    if getattr(msg, "round", None) != role.t:
        raise ProtocolOrderError(
            f"client {role.client_id} expected round {role.t}, "
            f"got {type(msg).__name__}(round={getattr(msg, 'round', None)})"
        )
    kind = role.mode.kind
    state = init_state(role.opt_kind, role.spec.n)

    if kind in (MODE_PLAIN, MODE_BASELINE):
        if not isinstance(msg, wire.BroadcastPlain):
            raise ProtocolOrderError(f"unexpected {type(msg).__name__} in {kind} mode")
        if kind == MODE_BASELINE and (role.run_cfg.clip_threshold is None
                                      or noise_rng is None):
            raise InvalidArgs("noisy-baseline needs a clipping threshold and a noise rng")
        w = plain_local_run(role.spec, state, msg.w, role.data, role.run_cfg, batch_rng)
        if kind == MODE_BASELINE:
            w = w + noise_rng.normal(0.0, role.mode.baseline_sigma, w.shape)
        payload = w
    elif kind == MODE_SIFL_M1:
        if not isinstance(msg, wire.BroadcastEncoded):
            raise ProtocolOrderError(f"unexpected {type(msg).__name__} in {kind} mode")
        payload = target_local_run(role.coding_view, role.spec, state, msg.w_tilde,
                                   role.data, role.run_cfg, batch_rng)
    else:  # sifl-m2
        if role.t == 0:
            if not isinstance(msg, wire.BroadcastEncoded):
                raise ProtocolOrderError("first round of sifl-m2 must broadcast a vector")
            w_tilde = msg.w_tilde
        else:
            if not isinstance(msg, wire.BroadcastDoublyEncoded):
                raise ProtocolOrderError("later rounds of sifl-m2 broadcast matrices")
            if msg.w_prime.shape[1] != role.pi2_right.shape[0]:
                raise ShapeMismatch(
                    f"widened broadcast has {msg.w_prime.shape[1]} columns, "
                    f"expected {role.pi2_right.shape[0]}"
                )
            w_tilde = msg.w_prime @ role.pi2_right
        payload = target_local_run(role.coding_view, role.spec, state, w_tilde,
                                   role.data, role.run_cfg, batch_rng)

    update = wire.LocalUpdate(round=role.t, client_id=role.client_id,
                              payload=payload, dataset_size=role.data.m)
    role.t += 1
    return update


def aggregator_round(role: AggregatorRole, updates, rng) -> wire.AggregateToServer:
    """Size-weighted average of the uploads, widened in sifl-m2 except on
    the final round (so the server can decode the finished model)."""
    seen = {}
    for u in updates:
        if not isinstance(u, wire.LocalUpdate):
            raise ShapeMismatch(f"aggregator got {type(u).__name__}")
        if u.round != role.t:
            raise ProtocolOrderError(f"update for round {u.round}, expected {role.t}")
        if u.client_id in seen:
            raise DuplicateClient(f"client {u.client_id} uploaded twice")
        seen[u.client_id] = u
    missing = [cid for cid in role.client_ids if cid not in seen]
    if missing:
        raise MissingClient(f"no update from clients {missing}")
    extra = [cid for cid in seen if cid not in role.client_ids]
    if extra:
        raise ProtocolOrderError(f"updates from unregistered clients {extra}")

    dim = seen[role.client_ids[0]].payload.shape
    total = sum(seen[cid].dataset_size for cid in role.client_ids)
    avg = np.zeros(dim)
    for cid in role.client_ids:
        u = seen[cid]
        if u.payload.shape != dim:
            raise ShapeMismatch(f"client {cid} payload shape {u.payload.shape} != {dim}")
        avg = avg + (u.dataset_size / total) * u.payload

    if role.mode.kind == MODE_SIFL_M2 and role.t < role.total_rounds - 1:
        r2 = sample_noise(role.privacy.noise_kind, avg.shape[0],
                          role.keys.p - 1, role.privacy.sigma2, rng)
        out = wire.AggregateToServer(round=role.t,
                                     payload=encode_aggregate(role.keys, avg, r2))
    else:
        out = wire.AggregateToServer(round=role.t, payload=avg)
    role.t += 1
    return out


def server_round(role: ServerRole, msg: wire.AggregateToServer,
                 noise_rng) -> wire.Message:
    """Decode / re-encode the aggregate and emit the next broadcast or Done."""
    if not isinstance(msg, wire.AggregateToServer) or msg.round != role.t:
        raise ProtocolOrderError(
            f"server expected an aggregate for round {role.t}, got {msg!r}"
        )
    kind = role.mode.kind
    finished = role.t == role.total_rounds - 1
    role.t += 1

    if kind in (MODE_PLAIN, MODE_BASELINE):
        if msg.payload.ndim != 1 or msg.payload.shape[0] != role.spec.n:
            raise ShapeMismatch(f"plain aggregate has shape {msg.payload.shape}")
        role.w_plain = msg.payload
        if finished:
            return wire.Done(round=role.t - 1, w_final=msg.payload)
        return wire.BroadcastPlain(round=role.t, w=msg.payload)

    keys = role.keys
    if kind == MODE_SIFL_M1:
        if msg.payload.ndim != 1 or msg.payload.shape[0] != keys.n_tilde:
            raise ShapeMismatch(f"encoded aggregate has shape {msg.payload.shape}")
        start = time.perf_counter()
        w = decode_model(keys, msg.payload)
        role.w_plain = w
        if finished:
            role.coding_seconds += time.perf_counter() - start
            return wire.Done(round=role.t - 1, w_final=w)
        r1 = _draw_server_noise(role, 1, noise_rng)[:, 0]
        w_tilde = keys.apply_pi1(w) + keys.apply_n1(r1)
        role.coding_seconds += time.perf_counter() - start
        return wire.BroadcastEncoded(round=role.t, w_tilde=w_tilde)

    # sifl-m2: the payload is a widened matrix except on the final round,
    # where the aggregator leaves its coding off and the decode finishes.
    if finished:
        if msg.payload.ndim != 1 or msg.payload.shape[0] != keys.n_tilde:
            raise ShapeMismatch(
                f"final aggregate must be an n_tilde vector, got {msg.payload.shape}"
            )
        start = time.perf_counter()
        w = decode_model(keys, msg.payload)
        role.coding_seconds += time.perf_counter() - start
        return wire.Done(round=role.t - 1, w_final=w)
    if msg.payload.ndim != 2 or msg.payload.shape[0] != keys.n_tilde:
        raise ShapeMismatch(f"widened aggregate has shape {msg.payload.shape}")
    start = time.perf_counter()
    w_bar = decode_model(keys, msg.payload)          # still pi2-masked
    r1 = _draw_server_noise(role, msg.payload.shape[1], noise_rng)
    w_prime = keys.apply_pi1(w_bar) + keys.apply_n1(r1)
    role.coding_seconds += time.perf_counter() - start
    return wire.BroadcastDoublyEncoded(round=role.t, w_prime=w_prime)


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

@dataclass
class RoundTimings:
    local_seconds: float = 0.0
    aggregate_seconds: float = 0.0
    coding_seconds: float = 0.0


@dataclass
class TrainingTrace:
    """Per-round decoded globals and metrics, recorded by an omniscient
    observer with access to every key (a test-harness capability, not a
    role's)."""

    mode: str
    params: list = field(default_factory=list)       # w^0 .. w^T
    losses: list = field(default_factory=list)
    accuracies: list = field(default_factory=list)
    timings: list = field(default_factory=list)      # one RoundTimings per round
    message_counts: list = field(default_factory=list)

    @property
    def final_params(self) -> np.ndarray:
        return self.params[-1]

    def save_npz(self, path) -> None:
        np.savez(
            path,
            mode=np.array(self.mode),
            params=np.asarray(self.params),
            losses=np.asarray(self.losses, dtype=np.float64),
            accuracies=np.asarray(self.accuracies, dtype=np.float64),
        )

    @classmethod
    def load_npz(cls, path) -> "TrainingTrace":
        with np.load(path, allow_pickle=False) as data:
            return cls(
                mode=str(data["mode"]),
                params=list(data["params"]),
                losses=[float(x) for x in data["losses"]],
                accuracies=[float(x) for x in data["accuracies"]],
            )


def observer_decode(msg, server_keys, agg_keys) -> np.ndarray:
    """Recover the plaintext global from any broadcast, using all keys."""
    if isinstance(msg, (wire.BroadcastPlain,)):
        return msg.w
    if isinstance(msg, wire.Done):
        return msg.w_final
    if isinstance(msg, wire.BroadcastEncoded):
        return decode_model(server_keys, msg.w_tilde)
    if isinstance(msg, wire.BroadcastDoublyEncoded):
        return decode_model(server_keys, msg.w_prime) @ agg_keys.pi2_right
    raise ShapeMismatch(f"not a broadcast: {type(msg).__name__}")


def run_training(mode: Mode, spec, client_data, total_rounds: int,
                 run_cfg: LocalRunConfig, opt_kind, server_keys,
                 agg_keys, privacy: PrivacyParams, master_seed: int,
                 transport=None, eval_train: Dataset | None = None,
                 eval_test: Dataset | None = None) -> TrainingTrace:
    """Drive T protocol rounds over a transport and record the trace.

    ``client_data`` is one Dataset per client; clients are numbered from 1.
    All randomness is derived from ``master_seed`` (see :mod:`sifl.seeds`),
    with minibatch streams shared across modes.
    """
    if total_rounds < 0:
        raise ConfigError("total_rounds must be >= 0")
    if not client_data:
        raise ConfigError("need at least one client")
    if mode.kind == MODE_SIFL_M2 and agg_keys is None:
        raise KeyMismatch("sifl-m2 needs aggregator keys")
    transport = transport or wire.InProcessTransport()

    init_rng = derive_rng(master_seed, "init-w0")
    server, first = server_init(mode, spec, server_keys, privacy,
                                total_rounds, init_rng,
                                derive_rng(master_seed, "server-noise", 0))

    trace = TrainingTrace(mode=mode.kind)
    _record(trace, observer_decode(first, server_keys, agg_keys), spec,
            eval_train, eval_test)
    if total_rounds == 0:
        return trace

    n_clients = len(client_data)
    ids = tuple(range(1, n_clients + 1))
    view = server_keys.client_view() if mode.encoded else None
    p2r = agg_keys.pi2_right if mode.kind == MODE_SIFL_M2 else None
    clients = [
        ClientRole(client_id=cid, mode=mode, spec=spec, data=data,
                   run_cfg=run_cfg, opt_kind=opt_kind, coding_view=view,
                   pi2_right=p2r)
        for cid, data in zip(ids, client_data)
    ]
    aggregator = AggregatorRole(mode=mode, client_ids=ids,
                                keys=agg_keys if mode.kind == MODE_SIFL_M2 else None,
                                privacy=privacy, total_rounds=total_rounds)

    transport.send(wire.CH_BROADCAST, first)
    broadcast = transport.recv(wire.CH_BROADCAST)

    for t in range(total_rounds):
        timings = RoundTimings()
        sent = 0

        start = time.perf_counter()
        for client in clients:
            update = client_round(
                client, broadcast,
                derive_rng(master_seed, "batch", client.client_id, t),
                derive_rng(master_seed, "baseline-noise", client.client_id, t)
                if mode.kind == MODE_BASELINE else None,
            )
            transport.send(wire.CH_UPLINK, update)
            sent += 1
        timings.local_seconds = time.perf_counter() - start

        updates = [transport.recv(wire.CH_UPLINK) for _ in range(n_clients)]
        start = time.perf_counter()
        agg_msg = aggregator_round(aggregator, updates,
                                   derive_rng(master_seed, "agg-noise", t))
        timings.aggregate_seconds = time.perf_counter() - start
        transport.send(wire.CH_AGGREGATE, agg_msg)
        sent += 1

        before = server.coding_seconds
        out = server_round(server, transport.recv(wire.CH_AGGREGATE),
                           derive_rng(master_seed, "server-noise", t + 1))
        timings.coding_seconds = server.coding_seconds - before
        transport.send(wire.CH_BROADCAST, out)
        broadcast = transport.recv(wire.CH_BROADCAST)
        sent += 1

        _record(trace, observer_decode(broadcast, server_keys, agg_keys),
                spec, eval_train, eval_test)
        trace.timings.append(timings)
        trace.message_counts.append(sent)

    if not isinstance(broadcast, wire.Done):
        raise ProtocolOrderError("training ended without a Done message")
    return trace


def _record(trace, w, spec, eval_train, eval_test):
    trace.params.append(np.asarray(w, dtype=np.float64))
    loss = np.nan
    acc = np.nan
    if eval_train is not None:
        loss, _ = loss_and_grad(spec, w, eval_train.features, eval_train.labels)
    if eval_test is not None and not isinstance(spec, LinearRegression):
        acc = model_accuracy(spec, w, eval_test)
    trace.losses.append(float(loss))
    trace.accuracies.append(float(acc))
