"""Deep-network driver: greedy layerwise RBM pre-training with forward
propagation jobs between layers, autoencoder unrolling, and backprop
fine-tuning where each mapper computes one case's full gradient and the
reducers sum per weight id.

Every batch update can be computed two ways that agree bit-for-bit: as a
map/reduce job through the engine, or through the in-core runners that
fold the same per-case kernels in the same canonical order. Training
commands default to the in-core path; `use_engine` routes every batch
through real jobs.
"""

import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np

from . import rbm
from .engine import JobSpec, MapReduceEngine, Record
from .errors import ConfigError, FormatError, IntegrityError, ShapeError, TruncationError
from .linalg import sigmoid_map
from .rbm import CdHyperParams, LayerWeights

MODES = ("autoencoder", "classifier")
NUM_CLASSES = 10


@dataclass(frozen=True)
class TrainingCase:
    """One input vector with its stable id and optional class label. The
    id seeds the per-case sampling rng, so it must survive subsetting and
    propagation unchanged."""

    case_id: int
    pixels: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        p = np.ascontiguousarray(self.pixels, dtype=np.float64)
        p.flags.writeable = False
        object.__setattr__(self, "pixels", p)


@dataclass(frozen=True)
class NetworkConfig:
    """Stack layout and training knobs. num_nodes runs input to top, e.g.
    (784, 256, 64, 30) for the autoencoder or (784, 500, 500, 10) for the
    classifier (whose last entry is the class count; that layer is a
    randomly initialized head rather than a pretrained RBM)."""

    num_nodes: tuple
    max_epoch: int
    hp: CdHyperParams = field(default_factory=CdHyperParams)
    seed: int = 0
    workers: int = 1
    mode: str = "autoencoder"
    batch_size: int = 100  # 0 means full batch
    finetune_epochs: int = 15
    finetune_lr: Optional[float] = None  # defaults to hp.learning_rate
    top_linear: bool = False
    use_engine: bool = False

    def __post_init__(self):
        object.__setattr__(self, "num_nodes", tuple(int(n) for n in self.num_nodes))
        if len(self.num_nodes) < 2:
            raise ConfigError("num_nodes: need at least input and one layer")
        if any(n < 1 for n in self.num_nodes):
            raise ConfigError(f"num_nodes: all sizes must be >= 1, got {self.num_nodes}")
        if self.mode not in MODES:
            raise ConfigError(f"mode: must be one of {MODES}, got {self.mode!r}")
        if self.mode == "classifier" and self.num_nodes[-1] != NUM_CLASSES:
            raise ConfigError(
                f"num_nodes: classifier stack must end in {NUM_CLASSES} "
                f"class units, got {self.num_nodes[-1]}")
        if self.max_epoch < 1:
            raise ConfigError(f"max_epoch: must be >= 1, got {self.max_epoch}")
        if self.finetune_epochs < 0:
            raise ConfigError(f"finetune_epochs: must be >= 0, got {self.finetune_epochs}")
        if self.seed < 0:
            raise ConfigError(f"seed: must be >= 0, got {self.seed}")
        if self.workers < 1:
            raise ConfigError(f"workers: must be >= 1, got {self.workers}")
        if self.batch_size < 0:
            raise ConfigError(f"batch_size: must be >= 0, got {self.batch_size}")
        if self.finetune_lr is not None and self.finetune_lr < 0:
            raise ConfigError(f"finetune_lr: must be >= 0, got {self.finetune_lr}")

    @property
    def num_layers(self) -> int:
        return len(self.num_nodes)

    @property
    def rbm_nodes(self) -> tuple:
        """Node counts covered by RBM pre-training (the classifier head is
        excluded; it starts random)."""
        return self.num_nodes if self.mode == "autoencoder" else self.num_nodes[:-1]


@dataclass(frozen=True)
class NetworkWeights:
    """An ordered stack of layers. mode tracks what the stack currently
    is: a pretrained "stack", an unrolled "autoencoder" (encoder_depth
    marks the code layer) or a head-bearing "classifier"."""

    layers: tuple
    mode: str = "stack"
    encoder_depth: Optional[int] = None
    top_linear: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        for pos, layer in enumerate(self.layers):
            if layer.layer != pos:
                raise IntegrityError(
                    f"layer index {layer.layer} at position {pos}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.num_hid != b.num_vis:
                raise ShapeError(
                    f"layer {a.layer} outputs {a.num_hid} units but layer "
                    f"{b.layer} expects {b.num_vis}")

    @property
    def input_size(self) -> int:
        return self.layers[0].num_vis

    @property
    def code_size(self) -> int:
        k = self.encoder_depth if self.encoder_depth is not None else len(self.layers)
        return self.layers[k - 1].num_hid


def activations(net: NetworkWeights) -> tuple:
    """Per-layer activation names for the forward pass."""
    acts = ["sigmoid"] * len(net.layers)
    if net.mode == "classifier":
        acts[-1] = "softmax"
    if net.top_linear:
        code_pos = (net.encoder_depth if net.encoder_depth is not None
                    else len(net.layers)) - 1
        if net.mode != "classifier":
            acts[code_pos] = "linear"
    return tuple(acts)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid_map(z)
    if kind == "linear":
        return z
    return _softmax(z)


def forward_case(net: NetworkWeights, pixels: np.ndarray) -> list:
    """Activations [a0, a1, ..., aL] for one case (a0 is the input)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.shape != (net.input_size,):
        raise ShapeError(f"expected {net.input_size} inputs, got {pixels.shape}")
    acts = activations(net)
    a = [pixels]
    for layer, kind in zip(net.layers, acts):
        a.append(_activate(a[-1] @ layer.w + layer.hbias, kind))
    return a


def forward_batch(net: NetworkWeights, x: np.ndarray) -> np.ndarray:
    """Vectorized forward pass over a case matrix (evaluation only; the
    training paths stay per-case so job and in-core results match)."""
    a = np.asarray(x, dtype=np.float64)
    for layer, kind in zip(net.layers, activations(net)):
        a = _activate(a @ layer.w + layer.hbias, kind)
    return a


def classify(net: NetworkWeights, pixels: np.ndarray):
    if net.mode != "classifier":
        raise ConfigError(f"classify needs a classifier network, got {net.mode!r}")
    probs = forward_case(net, pixels)[-1]
    return int(np.argmax(probs)), probs


def encode(net: NetworkWeights, pixels: np.ndarray) -> np.ndarray:
    k = net.encoder_depth if net.encoder_depth is not None else len(net.layers)
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.shape != (net.input_size,):
        raise ShapeError(f"expected {net.input_size} inputs, got {pixels.shape}")
    acts = activations(net)
    a = pixels
    for layer, kind in zip(net.layers[:k], acts[:k]):
        a = _activate(a @ layer.w + layer.hbias, kind)
    return a


def decode(net: NetworkWeights, code: np.ndarray) -> np.ndarray:
    if net.encoder_depth is None:
        raise ConfigError("decode needs an unrolled autoencoder")
    k = net.encoder_depth
    code = np.asarray(code, dtype=np.float64)
    if code.shape != (net.code_size,):
        raise ShapeError(f"expected a {net.code_size}-dim code, got {code.shape}")
    acts = activations(net)
    a = code
    for layer, kind in zip(net.layers[k:], acts[k:]):
        a = _activate(a @ layer.w + layer.hbias, kind)
    return a


def unroll(net: NetworkWeights) -> NetworkWeights:
    """Mirror a pretrained stack into encoder + decoder halves. Decoder
    layer weights start as the transposes of their encoder twins (biases
    swap roles) and are untied from then on."""
    if net.mode != "stack":
        raise ConfigError(f"unroll expects a pretrained stack, got {net.mode!r}")
    k = len(net.layers)
    layers = list(net.layers)
    for pos, enc in enumerate(reversed(net.layers)):
        layers.append(LayerWeights(
            layer=k + pos, num_vis=enc.num_hid, num_hid=enc.num_vis,
            w=enc.w.T, vbias=enc.hbias, hbias=enc.vbias))
    return NetworkWeights(layers, mode="autoencoder", encoder_depth=k,
                          top_linear=net.top_linear)


def attach_classifier_head(net: NetworkWeights, seed: int,
                           num_classes: int = NUM_CLASSES) -> NetworkWeights:
    if net.mode != "stack":
        raise ConfigError(f"head attaches to a pretrained stack, got {net.mode!r}")
    head = rbm.randomize_weights(net.layers[-1].num_hid, num_classes,
                                 seed, layer=len(net.layers))
    return NetworkWeights(net.layers + (head,), mode="classifier")


# ---------------------------------------------------------------------------
# Backprop

def case_target(net: NetworkWeights, case: TrainingCase) -> np.ndarray:
    if net.mode == "classifier":
        if case.label is None:
            raise FormatError(f"case {case.case_id}: classifier training needs a label")
        t = np.zeros(net.layers[-1].num_hid)
        t[case.label] = 1.0
        return t
    return case.pixels


def case_gradients(net: NetworkWeights, pixels: np.ndarray,
                   target: np.ndarray) -> list:
    """Loss gradients [(dw, dbias), ...] per layer for one case.

    Cross-entropy against sigmoid (autoencoder) or softmax (classifier)
    outputs, so the output delta is simply (activation - target)."""
    acts = activations(net)
    a = forward_case(net, pixels)
    delta = a[-1] - target
    grads = [None] * len(net.layers)
    for l in range(len(net.layers) - 1, -1, -1):
        grads[l] = (np.outer(a[l], delta), delta)
        if l > 0:
            back = delta @ net.layers[l].w.T
            if acts[l - 1] == "sigmoid":
                back = back * a[l] * (1.0 - a[l])
            delta = back
    return grads


def case_loss(net: NetworkWeights, pixels: np.ndarray, target: np.ndarray,
              eps: float = 1e-12) -> float:
    """Cross-entropy of one case (the quantity whose gradient backprop
    computes; used directly by the finite-difference checks)."""
    out = forward_case(net, pixels)[-1]
    out = np.clip(out, eps, 1.0 - eps)
    if net.mode == "classifier":
        return float(-np.log(out[int(np.argmax(target))]))
    return float(-np.sum(target * np.log(out) + (1.0 - target) * np.log(1.0 - out)))


def gradient_record_count(net: NetworkWeights) -> int:
    return sum(l.num_vis * l.num_hid + l.num_hid for l in net.layers)


# ---------------------------------------------------------------------------
# Network serialization (broadcast payloads; the weight file reuses this)

_MODE_TAGS = {"stack": 0, "autoencoder": 1, "classifier": 2}
_TAG_MODES = {v: k for k, v in _MODE_TAGS.items()}


def pack_network(net: NetworkWeights) -> bytes:
    head = struct.pack("<BBiI", _MODE_TAGS[net.mode], int(net.top_linear),
                       -1 if net.encoder_depth is None else net.encoder_depth,
                       len(net.layers))
    return head + b"".join(rbm.pack_layer(l) for l in net.layers)


def unpack_network(buf: bytes, offset: int = 0):
    if len(buf) < offset + 10:
        raise TruncationError(f"network header truncated at byte {len(buf)}")
    mode_tag, top_linear, depth, count = struct.unpack_from("<BBiI", buf, offset)
    if mode_tag not in _TAG_MODES:
        raise FormatError(f"unknown network mode tag {mode_tag}")
    pos = offset + 10
    layers = []
    for _ in range(count):
        layer, pos = rbm.unpack_layer(buf, pos)
        layers.append(layer)
    net = NetworkWeights(layers, mode=_TAG_MODES[mode_tag],
                         encoder_depth=None if depth < 0 else depth,
                         top_linear=bool(top_linear))
    return net, pos


# One-slot broadcast cache, same idea as rbm.cached_layer.
_net_cache = None


def cached_network(buf: bytes) -> NetworkWeights:
    global _net_cache
    cached = _net_cache
    if cached is not None and cached[0] is buf:
        return cached[1]
    net, _ = unpack_network(buf)
    _net_cache = (buf, net)
    return net


# ---------------------------------------------------------------------------
# Job functions

PROP_MAPPER_CONFIG = ("num_vis", "num_hid")


def prop_mapper(record, broadcast: bytes, config: dict) -> list:
    """Forward one case through the broadcast layer; emits the propagated
    case keyed by its id, value as space-separated decimals."""
    case_id, _label, pixels = rbm.decode_case_value(record[1])
    weights = rbm.cached_layer(broadcast)
    if pixels.shape[0] != int(config["num_vis"]):
        raise FormatError(
            f"case {case_id}: expected {config['num_vis']} inputs, "
            f"got {pixels.shape[0]}")
    z = pixels @ weights.w + weights.hbias
    out = z if config.get("linear_hidden", "0") == "1" else sigmoid_map(z)
    value = " ".join(repr(v) for v in out.tolist()).encode()
    return [(b"%d" % case_id, value)]


def prop_reducer(key: bytes, values: list, config: dict):
    if len(values) != 1:
        raise IntegrityError(
            f"case {key.decode()} reached the reducer {len(values)} times")
    return (key, values[0])


def backprop_mapper(record, broadcast: bytes, config: dict) -> list:
    """Full-network gradient for one case; emits one record per parameter
    (weight matrices and forward biases of every layer)."""
    case_id, label, pixels = rbm.decode_case_value(record[1])
    net = cached_network(broadcast)
    if pixels.shape != (net.input_size,):
        raise FormatError(
            f"case {case_id}: expected {net.input_size} pixels, got {pixels.shape[0]}")
    target = case_target(net, TrainingCase(case_id, pixels, label))
    grads = case_gradients(net, pixels, target)
    out = []
    for layer, (dw, db) in zip(net.layers, grads):
        keys = _grad_keys(layer.layer, layer.num_vis, layer.num_hid)
        flat = np.concatenate([dw.ravel(), db])
        out.extend(zip(keys, (repr(v).encode() for v in flat.tolist())))
    return out


@lru_cache(maxsize=64)
def _grad_keys(layer: int, num_vis: int, num_hid: int) -> tuple:
    keys = [b"%d:w:%d:%d" % (layer, i, j)
            for i in range(num_vis) for j in range(num_hid)]
    keys += [b"%d:hbias:0:%d" % (layer, j) for j in range(num_hid)]
    return tuple(keys)


def build_engine() -> MapReduceEngine:
    """Engine with the three standard jobs registered."""
    eng = MapReduceEngine()
    eng.register_mapper("rbm", rbm.rbm_mapper, rbm.RBM_MAPPER_CONFIG)
    eng.register_mapper("prop", prop_mapper, PROP_MAPPER_CONFIG)
    eng.register_mapper("backprop", backprop_mapper)
    eng.register_reducer("sum", rbm.rbm_reducer)
    eng.register_reducer("identity", prop_reducer)
    return eng


def case_records(cases) -> list:
    """Job input records: empty key, the case serialized as the value."""
    return [Record(b"", rbm.encode_case_value(c.case_id, c.label, c.pixels))
            for c in cases]


def rbm_job_spec(cases, weights: LayerWeights, hp: CdHyperParams,
                 job_seed: int, workers: int, linear_hidden: bool = False) -> JobSpec:
    config = {
        "num_vis": str(weights.num_vis),
        "num_hid": str(weights.num_hid),
        "seed": str(job_seed),
        "lr": repr(hp.learning_rate),
        "cd_steps": str(hp.cd_steps),
        "linear_hidden": "1" if linear_hidden else "0",
    }
    return JobSpec(case_records(cases), rbm.pack_layer(weights),
                   "rbm", "sum", workers, config)


def prop_job_spec(cases, weights: LayerWeights, workers: int,
                  linear_hidden: bool = False) -> JobSpec:
    config = {
        "num_vis": str(weights.num_vis),
        "num_hid": str(weights.num_hid),
        "linear_hidden": "1" if linear_hidden else "0",
    }
    return JobSpec(case_records(cases), rbm.pack_layer(weights),
                   "prop", "identity", workers, config)


def backprop_job_spec(cases, net: NetworkWeights, workers: int) -> JobSpec:
    return JobSpec(case_records(cases), pack_network(net),
                   "backprop", "sum", workers, {})


def parse_gradient_output(output, net: NetworkWeights) -> list:
    """Summed gradient records back into [(sum_dw, sum_db), ...] arrays."""
    sums = [(np.zeros((l.num_vis, l.num_hid)), np.zeros(l.num_hid))
            for l in net.layers]
    seen = 0
    for key, value in output:
        wid = rbm.parse_weight_key(key)
        if not 0 <= wid.layer < len(net.layers):
            raise IntegrityError(f"gradient for unknown layer {wid.layer}")
        layer = net.layers[wid.layer]
        sw, sb = sums[wid.layer]
        if wid.kind == "w" and 0 <= wid.i < layer.num_vis and 0 <= wid.j < layer.num_hid:
            sw[wid.i, wid.j] = float(value)
        elif wid.kind == "hbias" and wid.i == 0 and 0 <= wid.j < layer.num_hid:
            sb[wid.j] = float(value)
        else:
            raise IntegrityError(f"gradient id {wid} is out of range")
        seen += 1
    if seen != gradient_record_count(net):
        raise IntegrityError(
            f"job produced {seen} gradient sums, expected {gradient_record_count(net)}")
    return sums


def sum_case_gradients(cases, net: NetworkWeights) -> list:
    """In-core equivalent of one backprop job: fold per-case gradients in
    input order (bit-identical to the job output)."""
    sums = [(np.zeros((l.num_vis, l.num_hid)), np.zeros(l.num_hid))
            for l in net.layers]
    for case in cases:
        grads = case_gradients(net, case.pixels, case_target(net, case))
        for (sw, sb), (dw, db) in zip(sums, grads):
            sw += dw
            sb += db
    return sums


# ---------------------------------------------------------------------------
# Drivers

def derive_job_seed(seed: int, layer: int, epoch: int, batch: int) -> int:
    """Stable per-job seed; mappers then key their rng by (job seed, case id)."""
    ss = np.random.SeedSequence((seed, layer, epoch, batch))
    return int(ss.generate_state(1)[0])


def minibatches(items, batch_size: int):
    if batch_size <= 0 or batch_size >= len(items):
        yield items
        return
    for start in range(0, len(items), batch_size):
        yield items[start:start + batch_size]


def _check_cases(data, input_size: int):
    if not data:
        raise ConfigError("training data is empty")
    for c in data:
        if c.pixels.shape != (input_size,):
            raise ShapeError(
                f"case {c.case_id}: expected {input_size} pixels, "
                f"got {c.pixels.shape[0]}")


def _propagate(cases, weights: LayerWeights, cfg: NetworkConfig,
               engine: Optional[MapReduceEngine], linear_hidden: bool) -> list:
    """Next-layer inputs for every case, preserving ids and labels."""
    if cfg.use_engine and engine is not None:
        result = engine.run_job(prop_job_spec(cases, weights, cfg.workers,
                                              linear_hidden))
        by_id = {int(key): np.fromiter(map(float, value.split()), dtype=np.float64)
                 for key, value in result.output}
        # job output is sorted by key bytes; restore the input order
        return [TrainingCase(c.case_id, by_id[c.case_id], c.label) for c in cases]
    out = []
    for c in cases:
        z = c.pixels @ weights.w + weights.hbias
        a = z if linear_hidden else sigmoid_map(z)
        out.append(TrainingCase(c.case_id, a, c.label))
    return out


def cases_matrix(cases) -> np.ndarray:
    return np.stack([c.pixels for c in cases])


def pretrain(data, cfg: NetworkConfig, test=None,
             engine: Optional[MapReduceEngine] = None, on_epoch=None) -> NetworkWeights:
    """Greedy layerwise pre-training. Each layer is trained for
    cfg.max_epoch epochs of mini-batch RBM updates, then one propagation
    pass produces the next layer's inputs. Deterministic for a fixed seed
    at any worker count."""
    nodes = cfg.rbm_nodes
    _check_cases(data, nodes[0])
    if cfg.use_engine and engine is None:
        engine = build_engine()
    train = list(data)
    held = list(test) if test else []
    layers = []
    for li in range(len(nodes) - 1):
        linear_hidden = cfg.top_linear and li == len(nodes) - 2 and cfg.mode == "autoencoder"
        weights = rbm.randomize_weights(nodes[li], nodes[li + 1], cfg.seed, layer=li)
        velocity = None
        for epoch in range(cfg.max_epoch):
            hp = cfg.hp.at_epoch(epoch)
            for bi, batch in enumerate(minibatches(train, cfg.batch_size)):
                job_seed = derive_job_seed(cfg.seed, li, epoch, bi)
                if cfg.use_engine:
                    spec = rbm_job_spec(batch, weights, hp, job_seed,
                                        cfg.workers, linear_hidden)
                    sums = rbm.parse_summed_output(engine.run_job(spec).output, weights)
                else:
                    pairs = [(c.case_id, c.pixels) for c in batch]
                    sums = rbm.sum_case_deltas(pairs, weights, hp, job_seed,
                                               linear_hidden)
                weights, velocity = rbm.apply_summed(weights, sums, len(batch),
                                                     hp, velocity)
            if on_epoch is not None:
                train_mse = rbm.reconstruction_mse(weights, cases_matrix(train))
                test_mse = (rbm.reconstruction_mse(weights, cases_matrix(held))
                            if held else float("nan"))
                on_epoch(li, epoch, train_mse, test_mse)
        layers.append(weights)
        if li < len(nodes) - 2:
            train = _propagate(train, weights, cfg, engine, linear_hidden)
            if held:
                held = _propagate(held, weights, cfg, engine, linear_hidden)
    return NetworkWeights(layers, mode="stack", top_linear=cfg.top_linear)


def finetune(net: NetworkWeights, data, cfg: NetworkConfig, test=None,
             engine: Optional[MapReduceEngine] = None, on_epoch=None) -> NetworkWeights:
    """Backprop fine-tuning: per batch, mappers emit each case's full
    gradient, reducers sum per weight id, and the driver applies the
    batch-averaged plain-SGD step."""
    if net.mode not in MODES:
        raise ConfigError(
            f"finetune needs an unrolled autoencoder or a classifier, got {net.mode!r}")
    _check_cases(data, net.input_size)
    if cfg.use_engine and engine is None:
        engine = build_engine()
    lr = cfg.hp.learning_rate if cfg.finetune_lr is None else cfg.finetune_lr
    train = list(data)
    for epoch in range(cfg.finetune_epochs):
        for batch in minibatches(train, cfg.batch_size):
            if cfg.use_engine:
                spec = backprop_job_spec(batch, net, cfg.workers)
                sums = parse_gradient_output(engine.run_job(spec).output, net)
            else:
                sums = sum_case_gradients(batch, net)
            scale = lr / len(batch)
            layers = [
                LayerWeights(l.layer, l.num_vis, l.num_hid,
                             l.w - scale * sw, l.vbias, l.hbias - scale * sb)
                for l, (sw, sb) in zip(net.layers, sums)
            ]
            net = replace(net, layers=tuple(layers))
        if on_epoch is not None:
            on_epoch(epoch, *_finetune_metrics(net, train, test))
    return net


def _finetune_metrics(net, train, test):
    if net.mode == "classifier":
        tr = misclassified(net, train)
        te = misclassified(net, test) if test else -1
    else:
        tr = reconstruction_mse(net, cases_matrix(train))
        te = reconstruction_mse(net, cases_matrix(test)) if test else float("nan")
    return tr, te


def reconstruction_mse(net: NetworkWeights, x: np.ndarray) -> float:
    """Per-pixel squared reconstruction error of the full network."""
    out = forward_batch(net, x)
    diff = out - x
    return float(np.mean(diff * diff))


def misclassified(net: NetworkWeights, cases) -> int:
    x = cases_matrix(cases)
    probs = forward_batch(net, x)
    predicted = np.argmax(probs, axis=1)
    labels = np.array([c.label for c in cases])
    return int(np.sum(predicted != labels))


def mean_loss(net: NetworkWeights, cases) -> float:
    return float(np.mean([case_loss(net, c.pixels, case_target(net, c))
                          for c in cases]))
