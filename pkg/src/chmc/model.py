"""Feedforward scorer, Adam, the training loop and checkpoints."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import constraint
from .diffgraph import Tape
from .errors import EmptyDataset, InvalidConfig, ShapeMismatch
from .hierarchy import Hierarchy, build_hierarchy, check_consistent
from .metrics import au_prc

CHECKPOINT_VERSION = 1

LOSS_KINDS = ("mcloss", "bce_on_mcm", "bce_plain")
OUTPUT_MODES = ("mcm", "min_ancestors", "raw")
# how predictions are made for each training loss unless overridden
DEFAULT_OUTPUT = {"mcloss": "mcm", "bce_on_mcm": "mcm", "bce_plain": "min_ancestors"}


@dataclass
class NetworkConfig:
    input_dim: int
    hidden_dims: list[int]
    output_dim: int
    hidden_nonlinearity: str = "relu"
    dropout_rate: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        if any(int(d) <= 0 for d in dims):
            raise InvalidConfig(f"all layer sizes must be positive, got {dims}")
        if self.hidden_nonlinearity not in ("tanh", "relu"):
            raise InvalidConfig(f"hidden nonlinearity must be tanh or relu, got {self.hidden_nonlinearity!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfig(f"dropout rate must be in [0, 1), got {self.dropout_rate}")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-5
    batch_size: Optional[int] = 4  # None means full batch
    max_epochs: int = 200
    patience: Optional[int] = 20
    loss_kind: str = "mcloss"
    output: Optional[str] = None  # prediction mode; defaults per loss kind

    def validate(self) -> None:
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidConfig("beta1 and beta2 must lie in (0, 1)")
        if self.patience is not None and self.patience < 1:
            raise InvalidConfig("patience must be at least 1")
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidConfig(f"loss_kind must be one of {LOSS_KINDS}")
        if self.output is not None and self.output not in OUTPUT_MODES:
            raise InvalidConfig(f"output must be one of {OUTPUT_MODES}")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidConfig("batch_size must be positive")
        if self.learning_rate <= 0 or self.max_epochs < 0:
            raise InvalidConfig("learning_rate must be positive and max_epochs non-negative")

    @property
    def output_mode(self) -> str:
        return self.output or DEFAULT_OUTPUT[self.loss_kind]


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def _rngs(seed: int):
    init_seq, train_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(train_seq)


def init_network(cfg: NetworkConfig, rng: np.random.Generator | None = None) -> dict[str, np.ndarray]:
    """Weights (shape (out, in)) and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    cfg.validate()
    if rng is None:
        rng = _rngs(cfg.seed)[0]
    dims = [cfg.input_dim, *cfg.hidden_dims, cfg.output_dim]
    params = {}
    for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / math.sqrt(fan_in)
        params[f"W{k}"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        params[f"b{k}"] = rng.uniform(-bound, bound, size=fan_out)
    return params


def parameter_count(params: dict[str, np.ndarray]) -> int:
    return sum(p.size for p in params.values())


def forward(tape: Tape, nodes: dict, x, cfg: NetworkConfig, training: bool = False, rng=None):
    """Raw sigmoid scores h for a batch; dropout follows every hidden layer."""
    n_layers = len(cfg.hidden_dims) + 1
    a = x
    for k in range(n_layers):
        a = tape.affine(a, nodes[f"W{k}"], nodes[f"b{k}"])
        if k < n_layers - 1:
            a = tape.nonlinearity(a, cfg.hidden_nonlinearity)
            a = tape.dropout(a, cfg.dropout_rate, training, rng)
    return tape.nonlinearity(a, "sigmoid")


@dataclass
class Model:
    net_cfg: NetworkConfig
    params: dict[str, np.ndarray]
    hierarchy: Hierarchy
    output: str = "mcm"

    def raw_scores(self, X, chunk: int = 4096) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.net_cfg.input_dim:
            raise ShapeMismatch(f"expected inputs of width {self.net_cfg.input_dim}, got {X.shape}")
        out = []
        for s in range(0, X.shape[0], chunk):
            tape = Tape()
            nodes = {k: tape.leaf(v, requires_grad=False) for k, v in self.params.items()}
            h = forward(tape, nodes, tape.leaf(X[s:s + chunk], requires_grad=False), self.net_cfg)
            out.append(h.value)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.net_cfg.output_dim))

    def predict(self, X) -> np.ndarray:
        return apply_output(self.raw_scores(X), self.hierarchy, self.output)


def apply_output(h: np.ndarray, hierarchy: Hierarchy, mode: str) -> np.ndarray:
    if mode == "mcm":
        return constraint.mcm_forward(h, hierarchy)
    if mode == "min_ancestors":
        return constraint.post_process_min_ancestors(h, hierarchy)
    if mode == "raw":
        return h
    raise InvalidConfig(f"unknown output mode {mode!r}")


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig):
    """Bias-corrected Adam; weight decay is added to the gradient as an L2 term."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {k} has shape {g.shape}, parameter {p.shape}")
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
    return params, state


def loss_node(tape, h, y, hierarchy, loss_kind):
    if loss_kind == "mcloss":
        return constraint.mcloss_graph(tape, h, y, hierarchy)
    if loss_kind == "bce_on_mcm":
        return constraint.bce_on_mcm_graph(tape, h, y, hierarchy)
    return tape.bce(h, y, reduction="mean")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_auprc: float


@dataclass
class TrainResult:
    model: Model
    log: list[EpochRecord]
    best_epoch: int
    steps: int

    def write_log(self, path: str | Path) -> None:
        write_epoch_log(self.log, path)


def write_epoch_log(log, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_auprc"])
        for r in log:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_auprc)])


def _check_data(X, Y, hierarchy, input_dim):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y)
    if X.shape[0] == 0:
        raise EmptyDataset("training set is empty")
    if X.shape[0] != Y.shape[0] or Y.shape[1] != hierarchy.n or X.shape[1] != input_dim:
        raise ShapeMismatch(f"data shapes X{X.shape} Y{Y.shape} do not fit the configuration")
    check_consistent(Y, hierarchy)
    return X, Y.astype(np.float64)


def train(
    train_set,
    val_set,
    net_cfg: NetworkConfig,
    train_cfg: TrainConfig,
    hierarchy: Hierarchy | None = None,
    epochs: int | None = None,
) -> TrainResult:
    """Train a scorer with Adam.

    ``train_set``/``val_set`` expose ``X`` and ``Y``.  With a patience and a
    validation set, training stops once validation AU(PRC) has not improved
    for ``patience`` epochs and the best parameters are returned.  Otherwise
    the final parameters are returned.  ``epochs`` forces an exact epoch
    count with early stopping disabled.
    """
    net_cfg.validate()
    train_cfg.validate()
    hierarchy = hierarchy if hierarchy is not None else train_set.hierarchy
    X, Y = _check_data(train_set.X, train_set.Y, hierarchy, net_cfg.input_dim)
    if val_set is not None and len(val_set.X):
        Xv, Yv = _check_data(val_set.X, val_set.Y, hierarchy, net_cfg.input_dim)
    else:
        Xv = Yv = None

    init_rng, rng = _rngs(net_cfg.seed)
    params = init_network(net_cfg, init_rng)
    state = AdamState()
    mode = train_cfg.output_mode
    model = Model(net_cfg, params, hierarchy, mode)

    max_epochs = train_cfg.max_epochs if epochs is None else epochs
    patience = train_cfg.patience if (epochs is None and Xv is not None) else None
    N = X.shape[0]
    bs = N if train_cfg.batch_size is None else min(train_cfg.batch_size, N)

    log: list[EpochRecord] = []
    best_auprc, best_epoch, best_params = -np.inf, 0, None
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(N) if bs < N else np.arange(N)
        losses = []
        for s in range(0, N, bs):
            idx = order[s:s + bs]
            tape = Tape()
            nodes = {k: tape.leaf(v) for k, v in params.items()}
            h = forward(tape, nodes, tape.leaf(X[idx], requires_grad=False), net_cfg, True, rng)
            loss = loss_node(tape, h, Y[idx], hierarchy, train_cfg.loss_kind)
            tape.backward(loss)
            grads = {k: (n.grad if n.grad is not None else np.zeros_like(n.value)) for k, n in nodes.items()}
            adam_step(params, grads, state, train_cfg)
            losses.append(float(loss.value))

        val = float("nan")
        if Xv is not None:
            val = au_prc(model.predict(Xv), Yv).area
            if val > best_auprc:
                best_auprc, best_epoch = val, epoch
                if patience is not None:
                    best_params = {k: v.copy() for k, v in params.items()}
        log.append(EpochRecord(epoch, float(np.mean(losses)), val))
        if patience is not None and epoch - best_epoch >= patience:
            break

    if Xv is None:
        best_epoch = len(log)
    if best_params is not None:
        model.params = best_params
    return TrainResult(model, log, best_epoch, state.t)


def retrain_full(net_cfg: NetworkConfig, train_cfg: TrainConfig, data, best_epoch: int,
                 hierarchy: Hierarchy | None = None) -> TrainResult:
    """Fresh model trained for exactly ``best_epoch`` epochs, no early stopping."""
    return train(data, None, net_cfg, train_cfg, hierarchy, epochs=best_epoch)


# ---- checkpoints -----------------------------------------------------------

def save_checkpoint(model: Model, path: str | Path, extra: dict | None = None) -> None:
    h = model.hierarchy
    meta = {
        "version": CHECKPOINT_VERSION,
        "net_cfg": asdict(model.net_cfg),
        "output": model.output,
        "class_names": list(h.names),
        "edges": [[h.names[p], h.names[c]] for p, c in h.edges],
        "extra": extra or {},
    }
    arrays = {f"param__{k}": v for k, v in model.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path: str | Path) -> Model:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise InvalidConfig(f"unsupported checkpoint version {meta.get('version')}")
        params = {k[len("param__"):]: z[k].copy() for k in z.files if k.startswith("param__")}
    cfg = NetworkConfig(**meta["net_cfg"])
    h = build_hierarchy(meta["class_names"], [tuple(e) for e in meta["edges"]])
    return Model(cfg, params, h, meta["output"])
