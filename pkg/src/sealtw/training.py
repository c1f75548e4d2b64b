"""Supervised and semi-supervised training with the SEAL regularizer.

The backbone is a softmax classifier (optionally with one tanh hidden layer)
with hand-written gradients, trained by SGD with momentum under the cosine
schedule ``lr0 * cos(7 pi s / (16 S))``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .hierarchy import (HierarchySpec, balanced_tree, from_json_dict, random_tree,
                        star_tree, to_json_dict)
from .objective import seal_batch, update_hierarchy


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


# -- model -----------------------------------------------------------------

def _log_softmax(Z):
    Z = Z - Z.max(axis=-1, keepdims=True)
    return Z - np.log(np.sum(np.exp(Z), axis=-1, keepdims=True))


def softmax(Z):
    return np.exp(_log_softmax(np.asarray(Z, dtype=np.float64)))


@dataclass(eq=False)
class LinearModel:
    """Softmax classifier ``softmax(W h + b)`` where ``h`` is the (optionally
    tanh-transformed) standardized input."""

    weight: np.ndarray
    bias: np.ndarray
    hidden_weight: np.ndarray | None = None
    hidden_bias: np.ndarray | None = None
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    @classmethod
    def init(cls, num_features, num_classes, hidden=0, seed=0, scale=0.01,
             input_mean=None, input_scale=None):
        rng = np.random.default_rng(seed)
        if hidden:
            hw = rng.standard_normal((hidden, num_features)) / math.sqrt(num_features)
            hb = np.zeros(hidden)
            w = scale * rng.standard_normal((num_classes, hidden))
        else:
            hw = hb = None
            w = scale * rng.standard_normal((num_classes, num_features))
        return cls(w, np.zeros(num_classes), hw, hb, input_mean, input_scale)

    @property
    def num_features(self):
        return (self.hidden_weight if self.hidden_weight is not None else self.weight).shape[1]

    @property
    def num_classes(self):
        return self.weight.shape[0]

    def param_names(self):
        names = ["weight", "bias"]
        if self.hidden_weight is not None:
            names += ["hidden_weight", "hidden_bias"]
        return names

    def _inputs(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.num_features:
            raise ValueError(f"expected {self.num_features} features, got {X.shape[1]}")
        if self.input_mean is not None:
            X = (X - self.input_mean) / self.input_scale
        return X

    def _forward(self, X):
        X = self._inputs(X)
        H = np.tanh(X @ self.hidden_weight.T + self.hidden_bias) if self.hidden_weight is not None else X
        return X, H, H @ self.weight.T + self.bias

    def logits(self, X):
        return self._forward(X)[2]

    def predict_proba(self, X):
        return softmax(self.logits(X))

    def backward(self, X, G):
        """Parameter gradients given ``G = dLoss/dlogits`` (already batch-averaged)."""
        X, H, _ = self._forward(X)
        grads = {"weight": G.T @ H, "bias": G.sum(axis=0)}
        if self.hidden_weight is not None:
            dpre = (G @ self.weight) * (1.0 - H * H)
            grads["hidden_weight"] = dpre.T @ X
            grads["hidden_bias"] = dpre.sum(axis=0)
        return grads

    def copy(self):
        return LinearModel(*(None if getattr(self, f.name) is None else getattr(self, f.name).copy()
                             for f in fields(self)))

    def to_dict(self):
        return {f.name: None if getattr(self, f.name) is None else getattr(self, f.name).tolist()
                for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        return cls(**{f.name: None if d.get(f.name) is None else np.asarray(d[f.name], dtype=np.float64)
                      for f in fields(cls)})


def forward(model, x):
    """Class probabilities for one feature vector (or a batch of rows)."""
    x = np.asarray(x, dtype=np.float64)
    p = model.predict_proba(x)
    return p[0] if x.ndim == 1 else p


# -- config ----------------------------------------------------------------

_JSON_ALIASES = {"lambda": "lam"}


@dataclass
class TrainConfig:
    lam: float = 0.003
    gamma: float = 1.0
    tau: float = 0.95
    mu_ratio: int = 7
    batch_size: int = 64
    steps: int = 1000
    lr0: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 0.0
    schedule: str = "cosine"
    a2_step_size: float = 0.01
    hierarchy_update: str = "pgd"
    seed: int = 0
    sigma_weak: float = 0.3
    sigma_strong: float = 1.0
    dropout_strong: float = 0.1
    seal_on_labeled: bool = True
    label_smoothing: float = 0.0
    hidden: int = 0
    standardize: bool = True
    num_latent: int = 3
    tree: str = "balanced"
    branching: int = 2
    tree_depth: int | None = None
    init_concentration: float = 1.0

    def errors(self):
        e = []
        if self.lam < 0:
            e.append("lambda must be >= 0")
        if self.gamma < 0:
            e.append("gamma must be >= 0")
        if not 0.0 <= self.tau <= 1.0:
            e.append("tau must lie in [0, 1]")
        if self.mu_ratio < 1:
            e.append("mu_ratio must be >= 1")
        if self.batch_size < 1:
            e.append("batch_size must be >= 1")
        if self.steps < 0:
            e.append("steps must be >= 0")
        if self.lr0 <= 0:
            e.append("lr0 must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            e.append("momentum must lie in [0, 1)")
        if self.schedule not in ("cosine", "constant"):
            e.append(f"schedule must be 'cosine' or 'constant', got {self.schedule!r}")
        if self.a2_step_size < 0:
            e.append("a2_step_size must be >= 0")
        if self.hierarchy_update not in ("pgd", "softmax", "frozen"):
            e.append(f"hierarchy_update must be pgd, softmax or frozen, got {self.hierarchy_update!r}")
        if self.sigma_weak < 0:
            e.append("sigma_weak must be >= 0")
        if not self.sigma_strong > self.sigma_weak:
            e.append("sigma_strong must exceed sigma_weak")
        if not 0.0 <= self.dropout_strong < 1.0:
            e.append("dropout_strong must lie in [0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            e.append("label_smoothing must lie in [0, 1)")
        if self.hidden < 0:
            e.append("hidden must be >= 0")
        if self.num_latent < 1:
            e.append("num_latent must be >= 1")
        if self.tree not in ("balanced", "random", "star"):
            e.append(f"tree must be balanced, random or star, got {self.tree!r}")
        if self.branching < 1:
            e.append("branching must be >= 1")
        return e

    def validate(self):
        errs = self.errors()
        if errs:
            raise ConfigError(errs)
        return self

    @classmethod
    def from_dict(cls, d):
        """Build a config, reporting every problem at once."""
        known = {f.name: f for f in fields(cls)}
        kwargs, errs = {}, []
        for key, value in d.items():
            name = _JSON_ALIASES.get(key, key)
            if name not in known:
                errs.append(f"unknown config key {key!r}")
                continue
            default = known[name].default
            try:
                if value is None or default is None:
                    kwargs[name] = value if value is None else int(value)
                elif isinstance(default, bool):
                    if not isinstance(value, bool):
                        raise TypeError
                    kwargs[name] = value
                elif isinstance(default, int):
                    if isinstance(value, bool) or float(value) != int(value):
                        raise TypeError
                    kwargs[name] = int(value)
                elif isinstance(default, float):
                    if isinstance(value, bool):
                        raise TypeError
                    kwargs[name] = float(value)
                else:
                    kwargs[name] = str(value)
            except (TypeError, ValueError):
                errs.append(f"{key}: invalid value {value!r}")
        cfg = cls(**kwargs)
        errs += cfg.errors()
        if errs:
            raise ConfigError(errs)
        return cfg

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


def cosine_lr(step, total, base=0.03):
    """``base * cos(7 pi step / (16 total))``."""
    if total <= 0:
        return base
    return base * math.cos(7.0 * math.pi * step / (16.0 * total))


def learning_rate(config, step):
    if config.schedule == "constant":
        return config.lr0
    return cosine_lr(step, config.steps, config.lr0)


def build_prior(config, num_classes, seed=None, observed_names=()):
    """Soft hierarchy with a random simplex-valued assignment over the configured prior."""
    seed = config.seed if seed is None else seed
    kw = dict(observed_names=observed_names)
    if config.tree == "star" or config.num_latent == 1:
        spec = star_tree(num_classes, **kw)
        return spec.with_A2(spec.A2, soft=True)
    if config.tree == "balanced":
        return balanced_tree(config.num_latent, num_classes, config.branching, soft=True, seed=seed,
                             concentration=config.init_concentration, **kw)
    return random_tree(config.num_latent, num_classes, seed=seed, depth=config.tree_depth,
                       soft=True, concentration=config.init_concentration, **kw)


# -- losses ----------------------------------------------------------------

def _targets(y, K, smoothing=0.0):
    T = np.zeros((len(y), K))
    T[np.arange(len(y)), y] = 1.0
    if smoothing:
        T = (1.0 - smoothing) * T + smoothing / K
    return T


def label_smoothing_ce(prediction, target_index, alpha=0.1):
    """Cross-entropy of ``prediction`` against ``(1 - alpha) onehot + alpha / K``."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    p = np.asarray(prediction, dtype=np.float64)
    t = _targets([target_index], p.size, alpha)[0]
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    return float(-np.sum(np.where(t > 0, t * logp, 0.0)))


def _softmax_vjp(P, g):
    return P * (g - np.sum(P * g, axis=1, keepdims=True))


# -- training steps --------------------------------------------------------

@dataclass(eq=False)
class TrainState:
    model: LinearModel
    spec: HierarchySpec
    velocity: dict = field(default_factory=dict)
    step: int = 0


@dataclass
class LossBreakdown:
    ce: float
    phi: float
    psi: float = 0.0
    phi_u: float = 0.0
    total: float = 0.0
    lr: float = 0.0
    accuracy: float = 0.0
    retained_fraction: float = 0.0


@dataclass(eq=False)
class PseudoBatch:
    mask: np.ndarray
    labels: np.ndarray
    confidence: np.ndarray
    strong_views: np.ndarray | None = None

    @property
    def retained_fraction(self):
        return float(self.mask.mean()) if self.mask.size else 0.0


def pseudo_label(model, weak_views, tau):
    """Argmax pseudo-labels for weak views whose top probability reaches ``tau``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    P = model.predict_proba(weak_views)
    conf = P.max(axis=1)
    mask = conf >= tau
    return PseudoBatch(mask=mask, labels=np.argmax(P, axis=1)[mask], confidence=conf)


def augment(x, kind, config, rng):
    """Gaussian jitter (weak) or jitter plus random feature dropout (strong)."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "weak":
        return x + config.sigma_weak * rng.standard_normal(x.shape)
    if kind == "strong":
        out = x + config.sigma_strong * rng.standard_normal(x.shape)
        keep = rng.random(x.shape) >= config.dropout_strong
        return out * keep
    raise ValueError(f"unknown augmentation kind {kind!r}")


def _ce_terms(model, X, y, smoothing):
    Z = model.logits(X)
    logP = _log_softmax(Z)
    P = np.exp(logP)
    T = _targets(y, model.num_classes, smoothing)
    ce = -np.sum(T * logP, axis=1)
    return P, ce, P - T


def _seal_terms(spec, P, y, learn_a2):
    T = _targets(y, P.shape[1])
    losses, gp, ga2 = seal_batch(spec, P, T, need_a2=learn_a2)
    return losses, _softmax_vjp(P, gp), ga2


def _apply_sgd(state, X, G, config, lr):
    model = state.model.copy()
    grads = model.backward(X, G)
    velocity = {}
    for name in model.param_names():
        g = grads[name]
        if config.weight_decay:
            g = g + config.weight_decay * getattr(model, name)
        v = state.velocity.get(name)
        v = g if v is None else config.momentum * v + g
        velocity[name] = v
        setattr(model, name, getattr(model, name) - lr * v)
    return model, velocity


def _learns_hierarchy(spec, config):
    return spec.soft and config.hierarchy_update != "frozen" and config.lam > 0 and config.a2_step_size > 0


def supervised_step(state, X, y, config):
    """One step on ``mean CE + lambda * mean SEAL`` plus one step on ``A2``.

    The A2 step uses the gradient of the mean SEAL term scaled only by
    ``a2_step_size``. Returns ``(new_state, LossBreakdown)``.
    """
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("labeled batch is empty")
    lr = learning_rate(config, state.step)
    B = len(y)
    learn = _learns_hierarchy(state.spec, config)
    P, ce, G = _ce_terms(state.model, X, y, config.label_smoothing)
    G = G / B
    phi_vals, seal_g, ga2 = _seal_terms(state.spec, P, y, learn)
    if config.lam > 0:
        G = G + (config.lam / B) * seal_g
    model, velocity = _apply_sgd(state, X, G, config, lr)
    spec = state.spec
    if learn:
        spec = update_hierarchy(spec, ga2 / B, config.a2_step_size, config.hierarchy_update)
    ce_m, phi_m = float(ce.mean()), float(phi_vals.mean())
    br = LossBreakdown(ce=ce_m, phi=phi_m, total=ce_m + config.lam * phi_m, lr=lr,
                       accuracy=float(np.mean(np.argmax(P, axis=1) == y)))
    return TrainState(model, spec, velocity, state.step + 1), br


def semisup_step(state, X, y, X_unlabeled, config, rng):
    """One FixMatch-style step on ``L + gamma * (Psi + lambda * Phi_u)``.

    ``L`` is the supervised objective (cross-entropy plus ``lambda * Phi`` on
    the labeled batch when ``seal_on_labeled``). Pseudo-labels come from weak
    views under the current parameters and are held constant; ``Psi`` and
    ``Phi_u`` average over the retained strong views only.
    """
    if config.gamma == 0:
        return supervised_step(state, X, y, config)
    y = np.asarray(y)
    lr = learning_rate(config, state.step)
    K = state.model.num_classes
    B = len(y)
    learn = _learns_hierarchy(state.spec, config)
    seal_l = config.lam > 0 and config.seal_on_labeled

    weak = augment(X_unlabeled, "weak", config, rng)
    strong = augment(X_unlabeled, "strong", config, rng)
    pb = pseudo_label(state.model, weak, config.tau)
    pb.strong_views = strong[pb.mask]

    P, ce, G = _ce_terms(state.model, X, y, config.label_smoothing)
    G = G / B
    phi_vals, seal_g, ga2_l = _seal_terms(state.spec, P, y, learn and seal_l)
    if seal_l:
        G = G + (config.lam / B) * seal_g
    ga2 = ga2_l / B if (learn and seal_l) else np.zeros_like(state.spec.A2)

    R = int(pb.mask.sum())
    psi = phi_u = 0.0
    Xall, Gall = X, G
    if R:
        Pu, ce_u, Gu = _ce_terms(state.model, pb.strong_views, pb.labels, 0.0)
        Gu = (config.gamma / R) * Gu
        phi_u_vals, seal_gu, ga2_u = _seal_terms(state.spec, Pu, pb.labels, learn)
        if config.lam > 0:
            Gu = Gu + (config.gamma * config.lam / R) * seal_gu
        if learn:
            ga2 = ga2 + (config.gamma / R) * ga2_u
        psi, phi_u = float(ce_u.mean()), float(phi_u_vals.mean())
        Xall = np.concatenate([X, pb.strong_views])
        Gall = np.concatenate([G, Gu])

    model, velocity = _apply_sgd(state, Xall, Gall, config, lr)
    spec = state.spec
    if learn:
        spec = update_hierarchy(spec, ga2, config.a2_step_size, config.hierarchy_update)
    ce_m, phi_m = float(ce.mean()), float(phi_vals.mean())
    sup = ce_m + (config.lam * phi_m if config.seal_on_labeled else 0.0)
    br = LossBreakdown(ce=ce_m, phi=phi_m, psi=psi, phi_u=phi_u,
                       total=sup + config.gamma * psi + config.gamma * config.lam * phi_u,
                       lr=lr, accuracy=float(np.mean(np.argmax(P, axis=1) == y)),
                       retained_fraction=pb.retained_fraction)
    return TrainState(model, spec, velocity, state.step + 1), br


# -- evaluation and loops --------------------------------------------------

@dataclass
class EvalResult:
    accuracy: float
    per_class_accuracy: list
    ce: float
    phi: float | None = None


def evaluate(model, X, y, spec=None):
    """Accuracy, per-class accuracy (NaN for absent classes) and mean losses."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    logP = _log_softmax(model.logits(X))
    pred = np.argmax(logP, axis=1)
    per_class = []
    for c in range(model.num_classes):
        sel = y == c
        per_class.append(float(np.mean(pred[sel] == c)) if sel.any() else float("nan"))
    ce = float(-np.mean(logP[np.arange(len(y)), y]))
    phi = None
    if spec is not None:
        phi = float(seal_batch(spec, np.exp(logP), _targets(y, model.num_classes), need_a2=False)[0].mean())
    return EvalResult(float(np.mean(pred == y)), per_class, ce, phi)


@dataclass(eq=False)
class TrainResult:
    state: TrainState
    history: list


def init_state(dataset, config, spec=None):
    rng = np.random.default_rng([config.seed, 1])
    K, d = dataset.num_classes, dataset.feature_dim
    mean = scale = None
    if config.standardize:
        pool = np.concatenate([dataset.labeled.X, dataset.unlabeled.X])
        mean = pool.mean(axis=0)
        scale = pool.std(axis=0)
        scale[scale == 0] = 1.0
    model = LinearModel.init(d, K, config.hidden, seed=int(rng.integers(2**31)),
                             input_mean=mean, input_scale=scale)
    if spec is None:
        spec = build_prior(config, K, seed=int(rng.integers(2**31)),
                           observed_names=dataset.class_names)
    elif spec.num_observed != K:
        raise ValueError(f"tree has {spec.num_observed} observed labels, data has {K} classes")
    return TrainState(model, spec)


def fit(dataset, config, mode="supervised", spec=None, callback=None):
    """Train for ``config.steps`` steps; ``callback(step, breakdown, state)`` sees every step."""
    config.validate()
    if mode not in ("supervised", "semisup"):
        raise ValueError(f"unknown mode {mode!r}")
    state = init_state(dataset, config, spec)
    rng = np.random.default_rng([config.seed, 2])
    Xl, yl = dataset.labeled
    Xu = dataset.unlabeled.X
    if len(yl) == 0:
        raise ValueError("dataset has no labeled samples")
    semisup = mode == "semisup" and len(Xu) > 0
    history = []
    for _ in range(config.steps):
        idx = rng.integers(0, len(yl), size=config.batch_size)
        if semisup:
            uidx = rng.integers(0, len(Xu), size=config.batch_size * config.mu_ratio)
            state, br = semisup_step(state, Xl[idx], yl[idx], Xu[uidx], config, rng)
        else:
            state, br = supervised_step(state, Xl[idx], yl[idx], config)
        history.append(br)
        if callback is not None:
            callback(state.step - 1, br, state)
    return TrainResult(state, history)


def metrics_record(step, br):
    return {"step": step, "lr": br.lr, "ce": br.ce, "psi": br.psi, "phi": br.phi,
            "phi_u": br.phi_u, "total": br.total, "accuracy": br.accuracy,
            "retained_fraction": br.retained_fraction}


def save_checkpoint(path, state, config=None, extra=None):
    payload = {"model": state.model.to_dict(), "tree": to_json_dict(state.spec), "step": state.step}
    if config is not None:
        payload["config"] = config.to_dict()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path):
    """Return ``(model, spec, payload)`` from a checkpoint file."""
    payload = json.loads(Path(path).read_text())
    try:
        model = LinearModel.from_dict(payload["model"]) if "model" in payload else None
        spec = from_json_dict(payload["tree"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"invalid checkpoint {path}: {exc}") from None
    return model, spec, payload
