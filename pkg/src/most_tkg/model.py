"""MOST: time-aware relational encoder plus meta-relational decoder.

Vectors of length ``d`` are read as ``d/2`` interleaved complex numbers by the
rotation score.  All array math goes through :mod:`most_tkg.autodiff` so the
same code path serves training (under a tape) and evaluation (plain numpy).
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import (
    EXTRAPOLATION,
    INTERPOLATION,
    BackgroundGraph,
    NeighborSample,
    Quadruple,
    add_reciprocals,
    build_neighbor_index,
    sample_neighbors,
)

ABLATIONS = ("a1", "a2", "b1", "b2", "c2")

SEARCH_SPACE = {
    "variant": ("ta", "td"),
    "d": (50, 100, 200),
    "layers": (1, 2),
    "activation": ("tanh", "relu", "leaky-relu"),
    "dropout": (0.2, 0.3, 0.5),
    "k": (64, 128, 512),
    "batch": (64, 128),
}

SCORE_CLAMP = 1e-12


class DegenerateRelationError(ValueError):
    pass


class CheckpointMismatchError(ValueError):
    pass


@dataclass
class HyperConfig:
    d: int = 100
    dt: int | None = None
    layers: int = 1
    activation: str = "relu"
    dropout: float = 0.2
    k: int = 512
    strategy: str = "nearest"
    variant: str = "ta"
    batch: int = 64
    episodes: int = 10000
    lr: float = 1e-3
    seed: int = 0
    ablations: tuple[str, ...] = ()
    eval_interval: int = 250
    resample_support: bool = True
    complex_score: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    omega_min: float = 0.1
    omega_max: float = 1000.0
    gate_init: float = 1.0
    leaky_slope: float = 0.01
    # Reproduces the printed (1 - y)(1 - log p) term; comparison only.
    literal_loss: bool = field(default=False, repr=False)

    def __post_init__(self):
        self.ablations = tuple(sorted(set(a.lower() for a in self.ablations)))
        self.variant = self.variant.lower()
        self.validate()

    def validate(self) -> None:
        if self.d < 2 or self.d % 2:
            raise ValueError("d must be a positive even number")
        if self.time_dim < 1:
            raise ValueError("dt must be >= 1")
        if self.layers not in (1, 2):
            raise ValueError("layers must be 1 or 2")
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.strategy not in ("nearest", "random", "all"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.variant not in ("ta", "td"):
            raise ValueError("variant must be 'ta' or 'td'")
        if self.batch < 1 or self.episodes < 0 or self.lr < 0 or self.eval_interval < 1:
            raise ValueError("batch, episodes, lr and eval_interval must be non-negative (batch, interval >= 1)")
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablation flags {sorted(unknown)}")
        if {"a1", "a2"} <= set(self.ablations):
            raise ValueError("a1 and a2 are mutually exclusive")

    def off_grid(self) -> list[str]:
        """Names of settings outside the reference search grid."""
        return [key for key, allowed in SEARCH_SPACE.items() if getattr(self, key) not in allowed]

    @property
    def time_dim(self) -> int:
        return self.d if self.dt is None else self.dt

    @property
    def neighbor_strategy(self) -> str:
        if "a1" in self.ablations:
            return "all"
        if "a2" in self.ablations:
            return "random"
        return self.strategy

    @property
    def query_time(self) -> bool:
        return "b2" not in self.ablations

    @property
    def encoder_time(self) -> bool:
        return "c2" not in self.ablations

    @property
    def l2_norm(self) -> bool:
        return "b1" in self.ablations

    def activation_fn(self) -> Callable[[Tensor], Tensor]:
        if self.activation == "leaky-relu":
            return lambda x: ad.leaky_relu(x, self.leaky_slope)
        return ad.ACTIVATIONS[self.activation]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ablations"] = list(self.ablations)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "HyperConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        raw = dict(raw)
        if "ablations" in raw:
            raw["ablations"] = tuple(raw["ablations"])
        return cls(**raw)


# -------------------------------------------------------------------- params


class ModelParams:
    """Named trainable tensors plus the frequent-relation row lookup."""

    def __init__(self, tensors: dict[str, Tensor], frequent: Sequence[int], num_relations: int):
        self.tensors = dict(tensors)
        self.frequent = tuple(sorted(frequent))
        self.num_relations = num_relations
        rows = np.full(2 * num_relations, -1, dtype=np.int64)
        for i, r in enumerate(self.frequent):
            rows[r] = i
            rows[r + num_relations] = len(self.frequent) + i
        self.relation_rows = rows

    def __getattr__(self, name: str) -> Tensor:
        try:
            return self.__dict__["tensors"][name]
        except KeyError:
            raise AttributeError(name) from None

    def __iter__(self):
        return iter(self.tensors.values())

    def items(self):
        return self.tensors.items()

    @property
    def agg_weights(self) -> list[Tensor]:
        return [self.tensors[f"agg_W{i}"] for i in range(self.num_layers)]

    @property
    def num_layers(self) -> int:
        return sum(1 for k in self.tensors if k.startswith("agg_W"))

    @property
    def num_entities(self) -> int:
        return self.entity.shape[0]

    def rows_for(self, relations: np.ndarray) -> np.ndarray:
        rows = self.relation_rows[np.asarray(relations, dtype=np.int64)]
        if (rows < 0).any():
            raise ValueError("neighbor record uses a relation without an embedding")
        return rows

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: Tensor(v.value.copy(), requires_grad=True, name=k) for k, v in self.tensors.items()},
            self.frequent,
            self.num_relations,
        )

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.tensors.items()}


def init_params(config: HyperConfig, num_entities: int, frequent: Sequence[int], num_relations: int,
                num_timestamps: int, seed: int | None = None) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights, log-spaced time frequencies, unit gates."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    d, dt = config.d, config.time_dim
    hidden = 2 * d

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    base = 2.0 * math.pi / max(num_timestamps, 1)
    arrays = {
        "entity": uniform((num_entities, d), d),
        "relation": uniform((2 * len(frequent), d), d),
    }
    for layer in range(config.layers):
        arrays[f"agg_W{layer}"] = uniform((d, d), d)
    arrays.update(
        enc_W=uniform((d, d + dt), d + dt),
        enc_b=np.zeros(d),
        qry_W=uniform((d, d + dt), d + dt),
        qry_b=np.zeros(d),
        omega=np.geomspace(config.omega_min, config.omega_max, dt) * base,
        phi=np.zeros(dt),
        delta1=np.asarray(config.gate_init),
        delta2=np.asarray(config.gate_init),
        mlp_W1=uniform((hidden, 2 * d), 2 * d),
        mlp_b1=np.zeros(hidden),
        mlp_W2=uniform((hidden, hidden), hidden),
        mlp_b2=np.zeros(hidden),
        mlp_W3=uniform((d, hidden), hidden),
        mlp_b3=np.zeros(d),
    )
    tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
    return ModelParams(tensors, frequent, num_relations)


# ---------------------------------------------------------------- components


def encode_time(t, omega, phi) -> Tensor:
    """sqrt(1/d_t) * cos(omega * t + phi); ``t`` scalar -> (d_t,), vector -> (n, d_t)."""
    t = np.asarray(t, dtype=np.float64)
    omega, phi = ad.as_tensor(omega), ad.as_tensor(phi)
    dt = omega.shape[0]
    arg = ad.add(ad.mul(t[..., None], omega), phi)
    if t.ndim == 0:
        arg = ad.reshape(arg, (dt,))
    return ad.scalar_mul(ad.cos(arg), math.sqrt(1.0 / dt))


def feed_forward(h, time_vec, W, b) -> Tensor:
    """One linear layer over the concatenation ``h || time_vec``."""
    x = ad.concat([h, time_vec], axis=-1)
    if x.value.ndim == 1:
        return ad.add(ad.matmul(W, x), b)
    return ad.add(ad.matmul(x, ad.transpose(W)), b)


def aggregate_entity(h_e, neighbor_h, sample: NeighborSample, params: ModelParams, layer: int,
                     config: HyperConfig, training: bool = False, rng=None) -> Tensor:
    """One encoder step: h_e + delta1 * act(mean_n W (f(h_n || time(n)) * h_rel(n))).

    ``neighbor_h`` holds the layer-``layer`` representations of the sampled
    neighbors, row-aligned with ``sample``.  An empty sample returns ``h_e``.
    """
    if layer >= params.num_layers:
        raise ValueError(f"layer {layer} >= configured layers {params.num_layers}")
    if len(sample) == 0:
        return h_e
    n, dt = len(sample), config.time_dim
    if config.encoder_time:
        tau = sample.times if config.variant == "ta" else sample.t0 - sample.times
        time_vec = encode_time(tau, params.omega, params.phi)
    else:
        time_vec = Tensor(np.zeros((n, dt)))
    hidden = feed_forward(neighbor_h, time_vec, params.enc_W, params.enc_b)
    h_rel = ad.take_rows(params.relation, params.rows_for(sample.relations))
    messages = ad.matmul(ad.mul(hidden, h_rel), ad.transpose(params.agg_weights[layer]))
    messages = ad.dropout(messages, config.dropout, rng, training)
    act = config.activation_fn()
    return ad.add(h_e, ad.mul(params.delta1, act(ad.mean_rows(messages))))


def relation_meta(h_s0, h_o0, params: ModelParams, config: HyperConfig, training: bool = False,
                  rng=None) -> Tensor:
    """Three-layer perceptron over ``h_s0 || h_o0``; the last layer is linear."""
    act = config.activation_fn()
    x = ad.concat([h_s0, h_o0])
    x = act(ad.add(ad.matmul(params.mlp_W1, x), params.mlp_b1))
    x = ad.dropout(x, config.dropout, rng, training)
    x = act(ad.add(ad.matmul(params.mlp_W2, x), params.mlp_b2))
    x = ad.dropout(x, config.dropout, rng, training)
    return ad.add(ad.matmul(params.mlp_W3, x), params.mlp_b3)


def inject_query_time(h_e, t_q, t_0, params: ModelParams, config: HyperConfig) -> Tensor:
    """h_e + delta2 * f(h_e || time(t_q)) (TA) or time(t_q - t_0) (TD)."""
    if not config.query_time:
        return ad.as_tensor(h_e)
    tau = t_q if config.variant == "ta" else np.asarray(t_q) - t_0
    time_vec = encode_time(tau, params.omega, params.phi)
    return ad.add(h_e, ad.mul(params.delta2, feed_forward(h_e, time_vec, params.qry_W, params.qry_b)))


def norm_regularize(h_r, l2: bool = False) -> Tensor:
    """Divide by the largest complex modulus (or by the euclidean norm when ``l2``)."""
    h_r = ad.as_tensor(h_r)
    if not np.any(h_r.value):
        raise DegenerateRelationError("meta representation is the zero vector")
    norm = ad.l2_norm(h_r) if l2 else ad.complex_inf_norm(h_r)
    return ad.div(h_r, norm)


def rotate(h, rotation, complex_score: bool = True) -> Tensor:
    return ad.complex_mul(h, rotation) if complex_score else ad.mul(h, rotation)


def score(h_sq, h_r_tilde, h_ec, complex_score: bool = True) -> Tensor:
    """sigmoid(Re <h_sq * h_r, conj(h_ec)>) for one candidate."""
    return ad.sigmoid(ad.hermitian_dot(rotate(h_sq, h_r_tilde, complex_score), h_ec))


def bce_loss(scores, truth: Sequence[int], weights: Sequence[float], literal: bool = False) -> Tensor:
    """Binary cross entropy averaged over all candidates of each query.

    ``scores`` is (queries, entities); each query's mean is scaled by its
    weight (1 / (2 |Q_r|) for a relation with |Q_r| query quadruples) and the
    weighted sum is negated.
    """
    scores = ad.as_tensor(scores)
    if scores.value.ndim != 2:
        raise ValueError("scores must be a (queries, entities) matrix")
    if np.any(scores.value < 0.0) or np.any(scores.value > 1.0) or not np.all(np.isfinite(scores.value)):
        raise ValueError("scores must lie in [0, 1]")
    n, num_entities = scores.shape
    y = np.zeros((n, num_entities))
    y[np.arange(n), np.asarray(truth, dtype=np.int64)] = 1.0
    p = ad.clip(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    log_p = ad.log(p)
    if literal:
        negative = ad.mul(1.0 - y, ad.sub(1.0, log_p))
    else:
        negative = ad.mul(1.0 - y, ad.log(ad.sub(1.0, p)))
    terms = ad.add(ad.mul(y, log_p), negative)
    per_query = ad.scalar_mul(ad.sum(terms, axis=1), 1.0 / num_entities)
    return ad.scalar_mul(ad.sum(ad.mul(per_query, np.asarray(weights, dtype=np.float64))), -1.0)


# --------------------------------------------------------------------- model


@dataclass
class LPQuery:
    subject: int
    relation: int
    time: int
    truth: int
    owner: int


@dataclass
class TaskOutput:
    queries: list[LPQuery]
    logits: Tensor
    scores: Tensor


class MOST:
    """Parameters, configuration and the observable background of one dataset."""

    def __init__(self, params: ModelParams, config: HyperConfig, background: BackgroundGraph,
                 num_relations: int, mode: str = INTERPOLATION):
        self.params = params
        self.config = config
        self.mode = mode
        self.num_relations = num_relations
        augmented = add_reciprocals(background.quads, num_relations)
        frequent = set(background.frequent) | {r + num_relations for r in background.frequent}
        self.index = build_neighbor_index(BackgroundGraph(augmented, frozenset(frequent)), params.num_entities)
        # replaceable hook: (index, e, t0, k, mode, strategy, seed) -> NeighborSample
        self.sampler = sample_neighbors

    @property
    def num_entities(self) -> int:
        return self.params.num_entities

    def sample(self, e: int, t0: int, rng=None) -> NeighborSample:
        cfg = self.config
        seed = rng if rng is not None else np.random.default_rng((cfg.seed, e, t0))
        return self.sampler(self.index, e, t0, cfg.k, self.mode, cfg.neighbor_strategy, seed)

    def encode_support(self, support: Quadruple, training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        """Layer-L encodings of the support subject and object at time t0."""
        p, cfg, t0 = self.params, self.config, support.t
        samples: dict[int, NeighborSample] = {}
        memo: dict[tuple[int, int], Tensor] = {}

        def neighbors(e):
            if e not in samples:
                samples[e] = self.sample(e, t0, rng if training else None)
            return samples[e]

        def encode(e, level):
            key = (e, level)
            if key in memo:
                return memo[key]
            if level == 0:
                out = ad.take_rows(p.entity, e)
            else:
                smp = neighbors(e)
                if level == 1:
                    nbr = ad.take_rows(p.entity, smp.entities)
                elif len(smp):
                    nbr = ad.stack([encode(int(x), level - 1) for x in smp.entities])
                else:
                    nbr = None
                out = aggregate_entity(encode(e, level - 1), nbr, smp, p, level - 1, cfg, training, rng)
            memo[key] = out
            return out

        return encode(support.s, cfg.layers), encode(support.o, cfg.layers)

    def meta_relations(self, support: Quadruple, training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        """Normalized meta representations of the relation and its reciprocal."""
        h_s, h_o = self.encode_support(support, training, rng)
        l2 = self.config.l2_norm
        forward = norm_regularize(relation_meta(h_s, h_o, self.params, self.config, training, rng), l2)
        backward = norm_regularize(relation_meta(h_o, h_s, self.params, self.config, training, rng), l2)
        return forward, backward

    def lp_queries(self, quads: Sequence[Quadruple]) -> list[LPQuery]:
        fwd = [LPQuery(q.s, q.r, q.t, q.o, q.r) for q in quads]
        rev = [LPQuery(q.o, q.r + self.num_relations, q.t, q.s, q.r) for q in quads]
        return fwd + rev

    def forward_task(self, support: Quadruple, queries: Sequence[Quadruple], training: bool = False,
                     rng=None) -> TaskOutput:
        """Score every entity for both directions of each query quadruple.

        Rows ``0..n-1`` answer (s, r, ?, t); rows ``n..2n-1`` answer
        (o, r^-1, ?, t).
        """
        p, cfg = self.params, self.config
        lp = self.lp_queries(queries)
        n = len(queries)
        rot_fwd, rot_rev = self.meta_relations(support, training, rng)
        rotations = ad.take_rows(ad.stack([rot_fwd, rot_rev]), np.repeat([0, 1], n))
        subjects = np.array([q.subject for q in lp], dtype=np.int64)
        h_sq = ad.take_rows(p.entity, subjects)
        if not cfg.query_time:
            rotated = rotate(h_sq, rotations, cfg.complex_score)
            logits = ad.hermitian_dot(rotated, p.entity)
        else:
            # f(h || time) = W_h h + W_t time + b, so candidates share W_h h and
            # differ from each other only by the per-query offset W_t time + b.
            times = np.array([q.time for q in lp], dtype=np.float64)
            tau = times if cfg.variant == "ta" else times - support.t
            time_vec = encode_time(tau, p.omega, p.phi)
            d = cfg.d
            w_h = ad.slice_cols(p.qry_W, 0, d)
            w_t = ad.slice_cols(p.qry_W, d, d + cfg.time_dim)
            offset = ad.add(ad.matmul(time_vec, ad.transpose(w_t)), p.qry_b)
            h_sq = ad.add(h_sq, ad.mul(p.delta2, ad.add(ad.matmul(h_sq, ad.transpose(w_h)), offset)))
            cand = ad.add(p.entity, ad.mul(p.delta2, ad.matmul(p.entity, ad.transpose(w_h))))
            rotated = rotate(h_sq, rotations, cfg.complex_score)
            shared = ad.hermitian_dot(rotated, cand)
            per_query = ad.mul(p.delta2, ad.sum(ad.mul(rotated, offset), axis=1))
            logits = ad.add(shared, ad.reshape(per_query, (2 * n, 1)))
        return TaskOutput(lp, logits, ad.sigmoid(logits))

    def loss(self, out: TaskOutput) -> Tensor:
        n_quads = len(out.queries) // 2
        weights = np.full(len(out.queries), 1.0 / (2 * n_quads))
        truth = [q.truth for q in out.queries]
        return bce_loss(out.scores, truth, weights, literal=self.config.literal_loss)


# ---------------------------------------------------------------- checkpoint


def save_checkpoint(path, params: ModelParams, config: HyperConfig, extra: dict | None = None) -> None:
    header = {
        "config": config.to_dict(),
        "frequent": list(params.frequent),
        "num_relations": params.num_relations,
        "num_entities": params.num_entities,
        **(extra or {}),
    }
    buf = io.BytesIO()
    np.savez(buf, __header__=np.array(json.dumps(header)), **{k: v.value for k, v in params.items()})
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, dataset=None) -> tuple[ModelParams, HyperConfig, dict]:
    """Read a checkpoint; with ``dataset`` given, verify vocab-dependent shapes."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        arrays = {k: data[k].astype(np.float64) for k in data.files if k != "__header__"}
    config = HyperConfig.from_dict(header["config"])
    params = ModelParams({k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()},
                         header["frequent"], header["num_relations"])
    expected = init_params(config, header["num_entities"], header["frequent"], header["num_relations"], 1).shapes()
    if params.shapes() != expected:
        raise CheckpointMismatchError(f"checkpoint arrays {params.shapes()} do not match config {expected}")
    if dataset is not None:
        problems = []
        if params.num_entities != dataset.num_entities:
            problems.append(f"entity table has {params.num_entities} rows, dataset has {dataset.num_entities} entities")
        if params.num_relations != dataset.num_relations:
            problems.append(f"checkpoint built for {params.num_relations} relations, dataset has {dataset.num_relations}")
        if set(params.frequent) != set(dataset.background.frequent):
            problems.append("frequent relation sets differ")
        if problems:
            raise CheckpointMismatchError("; ".join(problems))
    return params, config, header
