"""Experiment configuration, execution, and reporting.

A single flat INI file (key = value sections) fully specifies an experiment;
together with the master seed it pins every byte of the outputs. Metrics go
to JSONL (one record per line), timings to CSV, the privacy statement to a
flat name=value text block, and per-mode parameter traces to .npz files for
the equivalence checker.
"""

import configparser
import io
import json
from dataclasses import dataclass, replace

import numpy as np

from .coding import KeyGenConfig, gen_aggregator_keys, gen_server_keys
from .dp import PrivacyParams, make_sensitivity, norm_profile, privacy_report
from .errors import ConfigError, ShapeMismatch
from .models import (
    CsvSchema,
    LinearRegression,
    LogisticRegression,
    Mlp,
    load_csv,
    partition_iid,
    synth_dataset,
)
from .optim import Adam, LocalRunConfig, Momentum, Sgd
from .protocol import MODE_BASELINE, Mode, TrainingTrace, run_training
from .seeds import derive_seed


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"          # synthetic | csv
    kind: str = "blobs"                # blobs | linear
    samples: int = 1000
    test_samples: int = 250
    noise: float = 0.5
    path: str | None = None
    test_path: str | None = None
    has_header: bool = False
    label_col: int = 0


@dataclass(frozen=True)
class KeysConfig:
    extra_dims: int = 4
    p: int = 2
    scale: float = 1.0
    max_condition: float = 1e4
    n: int | None = None               # optional cross-check against the model
    representation: str = "auto"


@dataclass(frozen=True)
class ExperimentConfig:
    modes: tuple
    model: object
    data: DataConfig = DataConfig()
    keys: KeysConfig = KeysConfig()
    optimizer: object = Sgd()
    privacy: PrivacyParams = PrivacyParams()
    clip: float = 1000.0
    baseline_sigma: float | None = None
    rounds: int = 10
    local_iters: int = 2
    clients: int = 10
    batch_size: int | None = None
    master_seed: int = 0


@dataclass(frozen=True)
class MetricsRecord:
    mode: str
    round: int
    train_loss: float
    test_accuracy: float
    local_seconds: float
    aggregate_seconds: float
    coding_seconds: float
    eps_local: float
    eps_global: float

    def to_dict(self, include_timings: bool = True) -> dict:
        d = {
            "type": "metrics",
            "mode": self.mode,
            "round": self.round,
            "train_loss": self.train_loss,
            "test_accuracy": self.test_accuracy,
            "eps_local": self.eps_local,
            "eps_global": self.eps_global,
        }
        if include_timings:
            d.update({
                "local_seconds": self.local_seconds,
                "aggregate_seconds": self.aggregate_seconds,
                "coding_seconds": self.coding_seconds,
            })
        return d


# ---------------------------------------------------------------------------
# config parsing / emission
# ---------------------------------------------------------------------------

_MODEL_KINDS = ("linear", "logistic", "mlp")
_OPT_KINDS = ("sgd", "momentum", "adam")


class _Required:
    pass


_REQUIRED = _Required()


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"bad config syntax: {exc}") from None

    def get(section, key, cast, default=_REQUIRED):
        if not cp.has_option(section, key):
            if default is _REQUIRED:
                raise ConfigError(f"missing [{section}] {key}")
            return default
        raw = cp.get(section, key).strip()
        if raw.lower() in ("none", ""):
            return None
        try:
            if cast is bool:
                if raw.lower() in ("true", "yes", "1"):
                    return True
                if raw.lower() in ("false", "no", "0"):
                    return False
                raise ValueError(raw)
            return cast(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None

    model_kind = get("model", "kind", str)
    if model_kind == "linear":
        model = LinearRegression(d=get("model", "d", int))
    elif model_kind == "logistic":
        model = LogisticRegression(d=get("model", "d", int),
                                   classes=get("model", "classes", int, 2))
    elif model_kind == "mlp":
        layers = get("model", "layers", str)
        try:
            model = Mlp(layers=tuple(int(x) for x in layers.split(",")))
        except ValueError:
            raise ConfigError(f"[model] layers: cannot parse {layers!r}") from None
    else:
        raise ConfigError(f"[model] kind must be one of {_MODEL_KINDS}, got {model_kind!r}")

    opt_kind = get("optimizer", "kind", str, "sgd")
    if opt_kind == "sgd":
        optimizer = Sgd(eta=get("optimizer", "eta", float, 0.01))
    elif opt_kind == "momentum":
        optimizer = Momentum(eta=get("optimizer", "eta", float, 0.01),
                             beta=get("optimizer", "beta", float, 0.9))
    elif opt_kind == "adam":
        optimizer = Adam(eta=get("optimizer", "eta", float, 0.001),
                         beta1=get("optimizer", "beta1", float, 0.9),
                         beta2=get("optimizer", "beta2", float, 0.999),
                         eps=get("optimizer", "eps", float, 1e-8))
    else:
        raise ConfigError(f"[optimizer] kind must be one of {_OPT_KINDS}, got {opt_kind!r}")

    privacy = PrivacyParams(
        noise_kind=get("privacy", "noise", str, "gaussian"),
        sigma1=get("privacy", "sigma1", float, 1e3),
        sigma2=get("privacy", "sigma2", float, 1e3),
        eps_local=get("privacy", "eps_local", float, None),
        delta_local=get("privacy", "delta_local", float, None),
        eps_global=get("privacy", "eps_global", float, None),
        delta_global=get("privacy", "delta_global", float, None),
    )
    baseline_sigma = get("privacy", "baseline_sigma", float, None)

    mode_names = [m.strip() for m in get("experiment", "modes", str).split(",") if m.strip()]
    modes = tuple(
        Mode(kind=name, baseline_sigma=baseline_sigma if name == MODE_BASELINE else None)
        for name in mode_names
    )
    if not modes:
        raise ConfigError("[experiment] modes is empty")

    data = DataConfig(
        source=get("data", "source", str, "synthetic"),
        kind=get("data", "kind", str, "blobs"),
        samples=get("data", "samples", int, 1000),
        test_samples=get("data", "test_samples", int, 250),
        noise=get("data", "noise", float, 0.5),
        path=get("data", "path", str, None),
        test_path=get("data", "test_path", str, None),
        has_header=get("data", "has_header", bool, False),
        label_col=get("data", "label_col", int, 0),
    )
    if data.source not in ("synthetic", "csv"):
        raise ConfigError(f"[data] source must be synthetic or csv, got {data.source!r}")
    if data.source == "csv" and data.path is None:
        raise ConfigError("[data] source=csv needs a path")

    keys = KeysConfig(
        extra_dims=get("keys", "extra_dims", int, 4),
        p=get("keys", "p", int, 2),
        scale=get("keys", "scale", float, 1.0),
        max_condition=get("keys", "max_condition", float, 1e4),
        n=get("keys", "n", int, None),
        representation=get("keys", "representation", str, "auto"),
    )

    return ExperimentConfig(
        modes=modes,
        model=model,
        data=data,
        keys=keys,
        optimizer=optimizer,
        privacy=privacy,
        clip=get("privacy", "clip", float, 1000.0),
        baseline_sigma=baseline_sigma,
        rounds=get("experiment", "rounds", int, 10),
        local_iters=get("experiment", "local_iters", int, 2),
        clients=get("experiment", "clients", int, 10),
        batch_size=get("experiment", "batch_size", int, None),
        master_seed=get("experiment", "master_seed", int, 0),
    )


def emit_config(cfg: ExperimentConfig) -> str:
    """Canonical INI text; parse(emit(parse(x))) == parse(x)."""
    cp = configparser.ConfigParser()
    cp["experiment"] = {
        "modes": ", ".join(m.kind for m in cfg.modes),
        "rounds": str(cfg.rounds),
        "local_iters": str(cfg.local_iters),
        "clients": str(cfg.clients),
        "master_seed": str(cfg.master_seed),
    }
    if cfg.batch_size is not None:
        cp["experiment"]["batch_size"] = str(cfg.batch_size)

    m = cfg.model
    if isinstance(m, LinearRegression):
        cp["model"] = {"kind": "linear", "d": str(m.d)}
    elif isinstance(m, LogisticRegression):
        cp["model"] = {"kind": "logistic", "d": str(m.d), "classes": str(m.classes)}
    else:
        cp["model"] = {"kind": "mlp", "layers": ",".join(str(x) for x in m.layers)}

    d = cfg.data
    cp["data"] = {"source": d.source, "kind": d.kind, "samples": str(d.samples),
                  "test_samples": str(d.test_samples), "noise": repr(d.noise),
                  "has_header": str(d.has_header).lower(),
                  "label_col": str(d.label_col)}
    if d.path is not None:
        cp["data"]["path"] = d.path
    if d.test_path is not None:
        cp["data"]["test_path"] = d.test_path

    k = cfg.keys
    cp["keys"] = {"extra_dims": str(k.extra_dims), "p": str(k.p),
                  "scale": repr(k.scale), "max_condition": repr(k.max_condition),
                  "representation": k.representation}
    if k.n is not None:
        cp["keys"]["n"] = str(k.n)

    o = cfg.optimizer
    if isinstance(o, Sgd):
        cp["optimizer"] = {"kind": "sgd", "eta": repr(o.eta)}
    elif isinstance(o, Momentum):
        cp["optimizer"] = {"kind": "momentum", "eta": repr(o.eta), "beta": repr(o.beta)}
    else:
        cp["optimizer"] = {"kind": "adam", "eta": repr(o.eta), "beta1": repr(o.beta1),
                           "beta2": repr(o.beta2), "eps": repr(o.eps)}

    p = cfg.privacy
    cp["privacy"] = {"noise": p.noise_kind, "sigma1": repr(p.sigma1),
                     "sigma2": repr(p.sigma2), "clip": repr(cfg.clip)}
    for name in ("eps_local", "delta_local", "eps_global", "delta_global"):
        v = getattr(p, name)
        if v is not None:
            cp["privacy"][name] = repr(v)
    if cfg.baseline_sigma is not None:
        cp["privacy"]["baseline_sigma"] = repr(cfg.baseline_sigma)

    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# experiment execution
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    traces: dict                      # mode kind -> TrainingTrace
    report: object                    # PrivacyReport
    keygen_config: KeyGenConfig


def build_keys(cfg: ExperimentConfig):
    n = cfg.model.n
    if cfg.keys.n is not None and cfg.keys.n != n:
        raise ConfigError(
            f"[keys] n={cfg.keys.n} does not match the model's n={n}"
        )
    kg = KeyGenConfig(n=n, n_tilde=n + cfg.keys.extra_dims, p=cfg.keys.p,
                      scale=cfg.keys.scale, max_condition=cfg.keys.max_condition,
                      seed=derive_seed(cfg.master_seed, "keys"))
    server = gen_server_keys(kg, representation=cfg.keys.representation)
    agg = gen_aggregator_keys(kg)
    return kg, server, agg


def build_data(cfg: ExperimentConfig):
    """Training set, per-client datasets, and the evaluation test set."""
    d = cfg.data
    if d.source == "csv":
        schema = CsvSchema(has_header=d.has_header, label_col=d.label_col,
                           integer_labels=not isinstance(cfg.model, LinearRegression))
        train = load_csv(d.path, schema)
        test = load_csv(d.test_path, schema) if d.test_path else train
    else:
        classes = _model_classes(cfg.model)
        seed = derive_seed(cfg.master_seed, "synth")
        dim = _model_dim(cfg.model)
        # one draw for train and test so they share the generating
        # distribution (same blob centres / same true regressor)
        if classes is None:
            pool = synth_dataset("linear", d.samples + d.test_samples, dim,
                                 seed, noise=d.noise)
        else:
            pool = synth_dataset("blobs", d.samples + d.test_samples, dim,
                                 seed, classes=classes, noise=d.noise)
        train = pool.subset(np.arange(d.samples))
        test = pool.subset(np.arange(d.samples, d.samples + d.test_samples))
    if train.d != _model_dim(cfg.model):
        raise ConfigError(
            f"data has {train.d} features but the model expects {_model_dim(cfg.model)}"
        )
    part = partition_iid(train, cfg.clients, derive_seed(cfg.master_seed, "partition"))
    client_data = [train.subset(ix) for ix in part.client_indices]
    return train, client_data, test


def _model_dim(model) -> int:
    if isinstance(model, Mlp):
        return model.layers[0]
    return model.d


def _model_classes(model):
    if isinstance(model, LogisticRegression):
        return model.classes
    if isinstance(model, Mlp):
        return model.layers[-1]
    return None


def run_experiment(cfg: ExperimentConfig, jsonl_path=None, trace_dir=None,
                   include_timings: bool = True) -> ExperimentResult:
    """Run every configured mode and emit metrics.

    Deterministic given the config (timings excluded); the same master seed
    reproduces identical JSONL when timings are suppressed.
    """
    kg, server_keys, agg_keys = build_keys(cfg)
    train, client_data, test = build_data(cfg)
    run_cfg = LocalRunConfig(local_iters=cfg.local_iters,
                             batch_size=cfg.batch_size,
                             clip_threshold=None)

    sizes = [c.m for c in client_data]
    sens = make_sensitivity(cfg.clip, min(sizes), train.m,
                            order=1 if cfg.privacy.noise_kind == "laplace" else 2)
    report = privacy_report(norm_profile(server_keys, agg_keys), sens, cfg.privacy)

    records = []
    traces = {}
    for mode in cfg.modes:
        mode_run_cfg = run_cfg
        if mode.kind == MODE_BASELINE:
            mode_run_cfg = replace(run_cfg, clip_threshold=cfg.clip)
        trace = run_training(
            mode, cfg.model, client_data, cfg.rounds, mode_run_cfg,
            cfg.optimizer,
            server_keys if mode.encoded else None,
            agg_keys if mode.encoded else None,
            cfg.privacy, cfg.master_seed,
            eval_train=train, eval_test=test,
        )
        traces[mode.kind] = trace
        for t in range(len(trace.params)):
            timing = trace.timings[t - 1] if 0 < t <= len(trace.timings) else None
            records.append(MetricsRecord(
                mode=mode.kind, round=t,
                train_loss=trace.losses[t],
                test_accuracy=trace.accuracies[t],
                local_seconds=timing.local_seconds if timing else 0.0,
                aggregate_seconds=timing.aggregate_seconds if timing else 0.0,
                coding_seconds=timing.coding_seconds if timing else 0.0,
                eps_local=report.laplace_eps_local,
                eps_global=report.laplace_eps_global,
            ))

    if jsonl_path is not None:
        write_jsonl(jsonl_path, report, records, include_timings)
    if trace_dir is not None:
        for kind, trace in traces.items():
            trace.save_npz(f"{trace_dir}/trace-{kind}.npz")

    return ExperimentResult(config=cfg, records=records, traces=traces,
                            report=report, keygen_config=kg)


def write_jsonl(path, report, records, include_timings: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        head = {"type": "privacy_report"}
        head.update(report.to_dict())
        fh.write(json.dumps(head, sort_keys=True, separators=(",", ":")) + "\n")
        for rec in records:
            fh.write(json.dumps(rec.to_dict(include_timings), sort_keys=True,
                                separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EquivalenceReport:
    rounds: int
    param_gaps: np.ndarray        # per-round max-abs parameter difference
    accuracy_gaps: np.ndarray
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.param_gaps < self.tol)
                    and np.all(self.accuracy_gaps == 0.0))

    def lines(self):
        out = [f"rounds={self.rounds} tol={self.tol:g}"]
        out.append(f"max param gap={float(np.max(self.param_gaps)):.3e}")
        out.append(f"max accuracy gap={float(np.max(self.accuracy_gaps)):.3e}")
        out.append("equivalence: " + ("pass" if self.passed else "FAIL"))
        return out


def equivalence_report(trace_a: TrainingTrace, trace_b: TrainingTrace,
                       tol: float) -> EquivalenceReport:
    """Per-round parameter and accuracy gaps between two traces."""
    if len(trace_a.params) != len(trace_b.params):
        raise ShapeMismatch(
            f"traces cover {len(trace_a.params) - 1} vs {len(trace_b.params) - 1} rounds"
        )
    gaps = []
    for wa, wb in zip(trace_a.params, trace_b.params):
        if wa.shape != wb.shape:
            raise ShapeMismatch(f"parameter shapes differ: {wa.shape} vs {wb.shape}")
        gaps.append(float(np.max(np.abs(wa - wb))))
    acc_a = np.asarray(trace_a.accuracies)
    acc_b = np.asarray(trace_b.accuracies)
    with np.errstate(invalid="ignore"):
        acc_gap = np.abs(acc_a - acc_b)
    acc_gap = np.where(np.isnan(acc_a) & np.isnan(acc_b), 0.0, acc_gap)
    return EquivalenceReport(rounds=len(gaps) - 1, param_gaps=np.array(gaps),
                             accuracy_gaps=acc_gap, tol=tol)


def timing_report(results: dict) -> str:
    """CSV of mean per-round phase timings, one row per (label, mode)."""
    lines = ["label,mode,rounds,local_seconds,aggregate_seconds,coding_seconds"]
    for label, records in results.items():
        by_mode = {}
        for r in records:
            by_mode.setdefault(r.mode, []).append(r)
        for mode, recs in by_mode.items():
            trained = [r for r in recs if r.round > 0]
            if not trained:
                continue
            mean = lambda f: sum(f(r) for r in trained) / len(trained)
            lines.append(
                f"{label},{mode},{len(trained)},"
                f"{mean(lambda r: r.local_seconds):.6f},"
                f"{mean(lambda r: r.aggregate_seconds):.6f},"
                f"{mean(lambda r: r.coding_seconds):.6f}"
            )
    return "\n".join(lines) + "\n"
