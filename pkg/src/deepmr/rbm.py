"""Restricted Boltzmann machine training by contrastive divergence.

One training case yields a positive phase (data-driven statistics), a
negative phase (reconstruction-driven statistics after one or more
alternating sampling steps) and a per-parameter update. The mapper wraps
that computation for one case and emits one keyed record per parameter;
the reducer sums updates per key; apply_updates folds the averaged sums
into the layer with momentum and weight decay.

Wire formats: weight ids are text keys "layer:kind:i:j" with kind one of
w|vbias|hbias; update values are decimal text (shortest round-tripping
form, so parsing reproduces the computed float bit-exactly).
"""

import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, FormatError, IntegrityError, ShapeError, TruncationError
from .linalg import sigmoid_map

KINDS = ("w", "vbias", "hbias")


class WeightId(NamedTuple):
    layer: int
    kind: str
    i: int
    j: int


class WeightDelta(NamedTuple):
    weight_id: WeightId
    delta: float


def _frozen(a, shape) -> np.ndarray:
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.shape != shape:
        raise ShapeError(f"expected shape {shape}, got {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LayerWeights:
    """Weight matrix plus visible/hidden bias vectors for one layer.

    Arrays are frozen after construction; training produces new values
    instead of mutating, which keeps broadcast payloads safe to share.
    """

    layer: int
    num_vis: int
    num_hid: int
    w: np.ndarray
    vbias: np.ndarray
    hbias: np.ndarray

    def __post_init__(self):
        if self.num_vis < 1 or self.num_hid < 1:
            raise ConfigError(
                f"layer dims must be >= 1, got {self.num_vis}x{self.num_hid}")
        object.__setattr__(self, "w", _frozen(self.w, (self.num_vis, self.num_hid)))
        object.__setattr__(self, "vbias", _frozen(self.vbias, (self.num_vis,)))
        object.__setattr__(self, "hbias", _frozen(self.hbias, (self.num_hid,)))
        if not (np.isfinite(self.w).all() and np.isfinite(self.vbias).all()
                and np.isfinite(self.hbias).all()):
            raise ValueError(f"layer {self.layer} weights contain non-finite entries")


@dataclass(frozen=True)
class CdHyperParams:
    learning_rate: float = 0.1
    momentum: float = 0.5
    momentum_late: float = 0.9
    momentum_switch_epoch: int = 5
    weight_decay: float = 0.0002
    cd_steps: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("momentum", "momentum_late"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ConfigError(f"{name} must be in [0,1), got {v}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.cd_steps < 1:
            raise ConfigError(f"cd_steps must be >= 1, got {self.cd_steps}")

    def at_epoch(self, epoch: int) -> "CdHyperParams":
        """Momentum schedule: the late value once epoch reaches the switch."""
        if epoch >= self.momentum_switch_epoch and self.momentum != self.momentum_late:
            return CdHyperParams(self.learning_rate, self.momentum_late,
                                 self.momentum_late, self.momentum_switch_epoch,
                                 self.weight_decay, self.cd_steps)
        return self


@dataclass
class UpdateState:
    """Per-parameter velocity carried between batches (momentum memory)."""

    w: np.ndarray
    vbias: np.ndarray
    hbias: np.ndarray

    @classmethod
    def zeros(cls, num_vis: int, num_hid: int) -> "UpdateState":
        return cls(np.zeros((num_vis, num_hid)), np.zeros(num_vis), np.zeros(num_hid))


def randomize_weights(num_vis: int, num_hid: int, seed: int, layer: int = 0) -> LayerWeights:
    """Fresh layer: weights i.i.d. Gaussian(0, 0.1), biases zero."""
    if num_vis < 1 or num_hid < 1:
        raise ConfigError(f"layer dims must be >= 1, got {num_vis}x{num_hid}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, layer)))
    w = rng.normal(0.0, 0.1, size=(num_vis, num_hid))
    return LayerWeights(layer, num_vis, num_hid, w, np.zeros(num_vis), np.zeros(num_hid))


def getposphase(case: np.ndarray, weights: LayerWeights, rng,
                linear_hidden: bool = False):
    """Positive phase: hidden probabilities from the data, a Bernoulli
    sample of them, and the data-side statistics outer(case, hid_prob)."""
    case = np.asarray(case, dtype=np.float64)
    if case.shape != (weights.num_vis,):
        raise ShapeError(
            f"case length {case.shape} does not match numVis {weights.num_vis}")
    z = case @ weights.w + weights.hbias
    if linear_hidden:
        hid_prob = z
        hid_state = z  # linear code units carry their activation, no sampling
    else:
        hid_prob = sigmoid_map(z)
        hid_state = (rng.random(weights.num_hid) < hid_prob).astype(np.float64)
    pos_stats = np.outer(case, hid_prob)
    return hid_prob, hid_state, pos_stats


def getnegphase(hid_state: np.ndarray, weights: LayerWeights, rng,
                cd_steps: int = 1, linear_hidden: bool = False):
    """Negative phase: alternate hidden -> visible -> hidden. The visible
    reconstruction is mean-field (real-valued, never re-sampled); hidden
    states are re-sampled between steps when cd_steps > 1."""
    hid_state = np.asarray(hid_state, dtype=np.float64)
    if hid_state.shape != (weights.num_hid,):
        raise ShapeError(
            f"hidden state length {hid_state.shape} does not match numHid "
            f"{weights.num_hid}")
    h = hid_state
    vis_recon = hid_recon_prob = None
    for step in range(cd_steps):
        vis_recon = sigmoid_map(weights.w @ h + weights.vbias)
        z = vis_recon @ weights.w + weights.hbias
        hid_recon_prob = z if linear_hidden else sigmoid_map(z)
        if step < cd_steps - 1:
            if linear_hidden:
                h = hid_recon_prob
            else:
                h = (rng.random(weights.num_hid) < hid_recon_prob).astype(np.float64)
    neg_stats = np.outer(vis_recon, hid_recon_prob)
    return vis_recon, hid_recon_prob, neg_stats


def _delta_arrays(pos_stats, neg_stats, case, vis_recon, hid_prob,
                  hid_recon_prob, hp: CdHyperParams):
    lr = hp.learning_rate
    dw = lr * (pos_stats - neg_stats)
    dvbias = lr * (case - vis_recon)
    dhbias = lr * (hid_prob - hid_recon_prob)
    return dw, dvbias, dhbias


def update(pos_stats, neg_stats, case, vis_recon, hid_prob, hid_recon_prob,
           hp: CdHyperParams, layer: int = 0):
    """The per-case parameter update as explicit (weight id, delta) pairs:
    one per weight matrix entry (row-major), then visible biases, then
    hidden biases. Weight decay is applied later, at apply time."""
    if pos_stats.shape != neg_stats.shape:
        raise ShapeError(f"stats shapes differ: {pos_stats.shape} vs {neg_stats.shape}")
    dw, dvbias, dhbias = _delta_arrays(
        pos_stats, neg_stats, case, vis_recon, hid_prob, hid_recon_prob, hp)
    num_vis, num_hid = dw.shape
    deltas = [WeightDelta(WeightId(layer, "w", i, j), dw[i, j])
              for i in range(num_vis) for j in range(num_hid)]
    deltas += [WeightDelta(WeightId(layer, "vbias", i, 0), dvbias[i])
               for i in range(num_vis)]
    deltas += [WeightDelta(WeightId(layer, "hbias", 0, j), dhbias[j])
               for j in range(num_hid)]
    return deltas


def case_deltas(case: np.ndarray, weights: LayerWeights, hp: CdHyperParams,
                rng, linear_hidden: bool = False):
    """One full CD update for one case, as dense arrays (dw, dvbias, dhbias)."""
    hid_prob, hid_state, pos_stats = getposphase(case, weights, rng, linear_hidden)
    vis_recon, hid_recon_prob, neg_stats = getnegphase(
        hid_state, weights, rng, hp.cd_steps, linear_hidden)
    return _delta_arrays(pos_stats, neg_stats, case, vis_recon, hid_prob,
                         hid_recon_prob, hp)


# ---------------------------------------------------------------------------
# Wire formats

def weight_key(layer: int, kind: str, i: int, j: int) -> bytes:
    return b"%d:%s:%d:%d" % (layer, kind.encode(), i, j)


def parse_weight_key(key: bytes) -> WeightId:
    try:
        layer, kind, i, j = key.split(b":")
        kind = kind.decode()
        if kind not in KINDS:
            raise ValueError(f"unknown kind {kind!r}")
        return WeightId(int(layer), kind, int(i), int(j))
    except ValueError as exc:
        raise FormatError(f"bad weight id key {key!r}: {exc}") from exc


@lru_cache(maxsize=32)
def layer_keys(layer: int, num_vis: int, num_hid: int) -> tuple:
    """All weight id keys of a layer in canonical emission order."""
    keys = [b"%d:w:%d:%d" % (layer, i, j)
            for i in range(num_vis) for j in range(num_hid)]
    keys += [b"%d:vbias:%d:0" % (layer, i) for i in range(num_vis)]
    keys += [b"%d:hbias:0:%d" % (layer, j) for j in range(num_hid)]
    return tuple(keys)


def encode_case_value(case_id: int, label, pixels: np.ndarray) -> bytes:
    """Job input/trace encoding of one training case:
    ``case_id|label|p0 p1 p2 ...`` with decimal pixel values ("-" when
    unlabeled). Decoding reproduces every float bit-exactly."""
    lab = b"-" if label is None else b"%d" % label
    body = " ".join(repr(p) for p in pixels.tolist()).encode()
    return b"%d|%s|%s" % (case_id, lab, body)


def decode_case_value(value: bytes):
    try:
        head, lab, body = value.split(b"|", 2)
        case_id = int(head)
    except ValueError as exc:
        raise FormatError(f"unparseable training case record: {exc}") from exc
    label = None if lab == b"-" else int(lab)
    try:
        pixels = np.fromiter(map(float, body.split()), dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"case {case_id}: bad pixel value: {exc}") from exc
    return case_id, label, pixels


def pack_layer(weights: LayerWeights) -> bytes:
    """Compact little-endian layer serialization, used both for job
    broadcast payloads and inside the weight file."""
    head = struct.pack("<iii", weights.layer, weights.num_vis, weights.num_hid)
    return head + weights.w.tobytes() + weights.vbias.tobytes() + weights.hbias.tobytes()


def unpack_layer(buf: bytes, offset: int = 0):
    """Inverse of pack_layer; returns (LayerWeights, next_offset).

    Arrays are copied out of the buffer: beyond lifetime independence,
    aligned memory keeps BLAS kernels (and so bit-level results)
    independent of where a payload happened to sit in the byte stream.
    """
    if len(buf) < offset + 12:
        raise TruncationError(f"layer header truncated at byte {len(buf)}")
    layer, num_vis, num_hid = struct.unpack_from("<iii", buf, offset)
    if num_vis < 1 or num_hid < 1:
        raise FormatError(f"layer {layer} has invalid dims {num_vis}x{num_hid}")
    pos = offset + 12
    need = 8 * (num_vis * num_hid + num_vis + num_hid)
    if len(buf) < pos + need:
        raise TruncationError(
            f"layer {layer} payload truncated at byte {len(buf)}, "
            f"needs {pos + need}")
    w = np.frombuffer(buf, dtype="<f8", count=num_vis * num_hid,
                      offset=pos).reshape(num_vis, num_hid).copy()
    pos += 8 * num_vis * num_hid
    vbias = np.frombuffer(buf, dtype="<f8", count=num_vis, offset=pos).copy()
    pos += 8 * num_vis
    hbias = np.frombuffer(buf, dtype="<f8", count=num_hid, offset=pos).copy()
    pos += 8 * num_hid
    return LayerWeights(layer, num_vis, num_hid, w, vbias, hbias), pos


# One-slot cache: a job broadcasts one payload, mappers see it once per
# record. Holding the buffer itself keeps the identity key valid.
_layer_cache = None


def cached_layer(buf: bytes) -> LayerWeights:
    global _layer_cache
    cached = _layer_cache
    if cached is not None and cached[0] is buf:
        return cached[1]
    weights, _ = unpack_layer(buf)
    _layer_cache = (buf, weights)
    return weights


# ---------------------------------------------------------------------------
# The job functions

RBM_MAPPER_CONFIG = ("num_vis", "num_hid", "seed", "lr", "cd_steps")


def case_rng(job_seed: int, case_id: int):
    """Per-case generator: stochastic feature detectors stay reproducible
    under any parallel schedule because sampling depends only on
    (job seed, case id)."""
    return np.random.default_rng(np.random.SeedSequence((job_seed, case_id)))


def rbm_mapper(record, broadcast: bytes, config: dict) -> list:
    """Train on one case against the broadcast weights and emit one
    (weight id, update) record per parameter."""
    case_id, _label, pixels = decode_case_value(record[1])
    weights = cached_layer(broadcast)
    num_vis, num_hid = int(config["num_vis"]), int(config["num_hid"])
    if pixels.shape != (num_vis,):
        raise FormatError(
            f"case {case_id}: expected {num_vis} pixels, got {pixels.shape[0]}")
    hp = CdHyperParams(learning_rate=float(config["lr"]),
                       cd_steps=int(config["cd_steps"]))
    linear_hidden = config.get("linear_hidden", "0") == "1"
    rng = case_rng(int(config["seed"]), case_id)
    dw, dvbias, dhbias = case_deltas(pixels, weights, hp, rng, linear_hidden)
    flat = np.concatenate([dw.ravel(), dvbias, dhbias])
    keys = layer_keys(weights.layer, num_vis, num_hid)
    values = [repr(v).encode() for v in flat.tolist()]
    return list(zip(keys, values))


def rbm_reducer(key: bytes, values: list, config: dict):
    """Sum the updates for one weight id, left to right in the canonical
    presentation order."""
    total = 0.0
    for v in values:
        total += float(v)
    return (key, repr(total).encode())


def sum_case_deltas(cases, weights: LayerWeights, hp: CdHyperParams,
                    job_seed: int, linear_hidden: bool = False):
    """Single-process equivalent of one RBM job: fold per-case updates in
    input order. Bit-identical to running the job through the engine
    because the accumulation order matches the reducer's and the record
    encoding round-trips exactly."""
    sw = np.zeros((weights.num_vis, weights.num_hid))
    svb = np.zeros(weights.num_vis)
    shb = np.zeros(weights.num_hid)
    for case_id, pixels in cases:
        rng = case_rng(job_seed, case_id)
        dw, dvb, dhb = case_deltas(pixels, weights, hp, rng, linear_hidden)
        sw += dw
        svb += dvb
        shb += dhb
    return sw, svb, shb


def parse_summed_output(output, weights: LayerWeights):
    """Turn a finished RBM job's (weight id, sum) records back into dense
    arrays. Unknown or out-of-range ids mean the shuffle lost integrity."""
    sw = np.zeros((weights.num_vis, weights.num_hid))
    svb = np.zeros(weights.num_vis)
    shb = np.zeros(weights.num_hid)
    seen = 0
    for key, value in output:
        wid = parse_weight_key(key)
        _check_id(wid, weights)
        if wid.kind == "w":
            sw[wid.i, wid.j] = float(value)
        elif wid.kind == "vbias":
            svb[wid.i] = float(value)
        else:
            shb[wid.j] = float(value)
        seen += 1
    expected = weights.num_vis * weights.num_hid + weights.num_vis + weights.num_hid
    if seen != expected:
        raise IntegrityError(f"job produced {seen} sums, expected {expected}")
    return sw, svb, shb


def _check_id(wid: WeightId, weights: LayerWeights):
    if wid.kind not in KINDS:
        raise IntegrityError(f"weight id {wid} has unknown kind")
    if wid.layer != weights.layer:
        raise IntegrityError(f"weight id {wid} does not belong to layer {weights.layer}")
    if wid.kind == "w":
        ok = 0 <= wid.i < weights.num_vis and 0 <= wid.j < weights.num_hid
    elif wid.kind == "vbias":
        ok = wid.j == 0 and 0 <= wid.i < weights.num_vis
    else:
        ok = wid.i == 0 and 0 <= wid.j < weights.num_hid
    if not ok:
        raise IntegrityError(f"weight id {wid} is out of range for "
                             f"{weights.num_vis}x{weights.num_hid}")


def apply_summed(weights: LayerWeights, sums, batch_size: int,
                 hp: CdHyperParams, velocity: Optional[UpdateState] = None):
    """Fold batch-summed updates into the layer:
    velocity = momentum * velocity + sum/batch - lr*decay*w (decay on the
    weight matrix only), then weights += velocity."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if velocity is None:
        velocity = UpdateState.zeros(weights.num_vis, weights.num_hid)
    sw, svb, shb = sums
    vw = hp.momentum * velocity.w + sw / batch_size \
        - hp.learning_rate * hp.weight_decay * weights.w
    vvb = hp.momentum * velocity.vbias + svb / batch_size
    vhb = hp.momentum * velocity.hbias + shb / batch_size
    new = LayerWeights(weights.layer, weights.num_vis, weights.num_hid,
                       weights.w + vw, weights.vbias + vvb, weights.hbias + vhb)
    return new, UpdateState(vw, vvb, vhb)


def apply_updates(weights: LayerWeights, summed, batch_size: int,
                  hp: CdHyperParams, velocity: Optional[UpdateState] = None):
    """apply_summed over explicit WeightDelta pairs (ids are validated)."""
    sw = np.zeros((weights.num_vis, weights.num_hid))
    svb = np.zeros(weights.num_vis)
    shb = np.zeros(weights.num_hid)
    for wid, delta in summed:
        _check_id(WeightId(*wid), weights)
        if wid[1] == "w":
            sw[wid[2], wid[3]] += delta
        elif wid[1] == "vbias":
            svb[wid[2]] += delta
        else:
            shb[wid[3]] += delta
    return apply_summed(weights, (sw, svb, shb), batch_size, hp, velocity)


def reconstruction_mse(weights: LayerWeights, cases_matrix: np.ndarray) -> float:
    """Mean-field one-step reconstruction error of a batch (rows are
    cases), the quantity tracked per epoch in the pre-training reports."""
    h = sigmoid_map(cases_matrix @ weights.w + weights.hbias)
    recon = sigmoid_map(h @ weights.w.T + weights.vbias)
    diff = cases_matrix - recon
    return float(np.mean(diff * diff))
