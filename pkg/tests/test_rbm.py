import math

import numpy as np
import pytest

from deepmr import data, deepnet, rbm
from deepmr.engine import JobSpec, Record
from deepmr.errors import ConfigError, FormatError, IntegrityError, ShapeError


def scalar_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_cd1(case, weights, lr, rng):
    """Hand-rolled CD-1 reference: plain Python loops and math.exp, the
    same single Bernoulli draw, kept independent of the array code."""
    nv, nh = weights.num_vis, weights.num_hid
    w, vb, hb = weights.w, weights.vbias, weights.hbias
    hid_prob = [scalar_sigmoid(sum(case[i] * w[i][j] for i in range(nv)) + hb[j])
                for j in range(nh)]
    u = rng.random(nh)
    hid_state = [1.0 if u[j] < hid_prob[j] else 0.0 for j in range(nh)]
    vis_recon = [scalar_sigmoid(sum(w[i][j] * hid_state[j] for j in range(nh)) + vb[i])
                 for i in range(nv)]
    hid_recon = [scalar_sigmoid(sum(vis_recon[i] * w[i][j] for i in range(nv)) + hb[j])
                 for j in range(nh)]
    dw = [[lr * (case[i] * hid_prob[j] - vis_recon[i] * hid_recon[j])
           for j in range(nh)] for i in range(nv)]
    dvb = [lr * (case[i] - vis_recon[i]) for i in range(nv)]
    dhb = [lr * (hid_prob[j] - hid_recon[j]) for j in range(nh)]
    return np.array(dw), np.array(dvb), np.array(dhb)


def test_randomize_weights_deterministic():
    a = rbm.randomize_weights(6, 4, seed=9)
    b = rbm.randomize_weights(6, 4, seed=9)
    assert np.array_equal(a.w, b.w)
    assert np.array_equal(a.vbias, b.vbias) and np.array_equal(a.hbias, b.hbias)
    c = rbm.randomize_weights(6, 4, seed=10)
    assert not np.array_equal(a.w, c.w)


def test_randomize_weights_statistics():
    w = rbm.randomize_weights(100, 100, seed=0).w
    assert abs(w.mean()) < 0.01
    assert abs(w.std() - 0.1) < 0.01
    assert np.array_equal(rbm.randomize_weights(3, 2, seed=0).vbias, np.zeros(3))


def test_randomize_weights_rejects_zero_dims():
    with pytest.raises(ConfigError):
        rbm.randomize_weights(0, 4, seed=1)


def test_posphase_zero_weights():
    weights = rbm.LayerWeights(0, 3, 5, np.zeros((3, 5)), np.zeros(3), np.zeros(5))
    rng = np.random.default_rng(0)
    hid_prob, hid_state, pos = rbm.getposphase(np.array([0.2, 0.8, 0.5]), weights, rng)
    assert np.array_equal(hid_prob, np.full(5, 0.5))
    assert set(np.unique(hid_state)) <= {0.0, 1.0}
    assert pos.shape == (3, 5)


def test_posphase_scalar_case():
    weights = rbm.LayerWeights(0, 2, 1, np.array([[1.0], [-1.0]]),
                               np.zeros(2), np.zeros(1))
    hid_prob, _, _ = rbm.getposphase(np.array([1.0, 0.0]), weights,
                                     np.random.default_rng(0))
    assert abs(hid_prob[0] - scalar_sigmoid(1.0)) < 1e-15


def test_posphase_shape_error():
    weights = rbm.randomize_weights(4, 3, seed=1)
    with pytest.raises(ShapeError):
        rbm.getposphase(np.zeros(5), weights, np.random.default_rng(0))


def test_negphase_zero_weights():
    weights = rbm.LayerWeights(0, 3, 2, np.zeros((3, 2)), np.zeros(3), np.zeros(2))
    vis, hid2, neg = rbm.getnegphase(np.array([1.0, 0.0]), weights,
                                     np.random.default_rng(0))
    assert np.array_equal(vis, np.full(3, 0.5))
    assert neg.shape == (3, 2)


def test_cd1_matches_scalar_reference():
    weights = rbm.randomize_weights(2, 2, seed=5)
    case = np.array([0.9, 0.1])
    hp = rbm.CdHyperParams(learning_rate=0.3)
    got = rbm.case_deltas(case, weights, hp, np.random.default_rng(77))
    want = scalar_cd1(case, weights, 0.3, np.random.default_rng(77))
    for g, w in zip(got, want):
        assert np.max(np.abs(g - w)) < 1e-12


def test_update_fixed_point_and_zero_lr():
    weights = rbm.randomize_weights(3, 2, seed=2)
    case = np.array([0.5, 0.5, 0.5])
    stats = np.ones((3, 2)) * 0.25
    hp = rbm.CdHyperParams(learning_rate=0.1)
    same = rbm.update(stats, stats, case, case, np.zeros(2), np.zeros(2), hp)
    assert all(d.delta == 0.0 for d in same)
    # learning_rate validates as > 0, so a zero step comes from equal stats
    hp_small = rbm.CdHyperParams(learning_rate=1e-30)
    tiny = rbm.update(stats + 1.0, stats, case, case, np.zeros(2), np.zeros(2), hp_small)
    assert all(abs(d.delta) <= 1e-30 for d in tiny)


def test_update_pairs_match_mapper_records():
    weights = rbm.randomize_weights(4, 3, seed=8)
    case = np.random.default_rng(1).random(4)
    hp = rbm.CdHyperParams()
    job_seed = 123

    rng = rbm.case_rng(job_seed, 0)
    hid_prob, hid_state, pos = rbm.getposphase(case, weights, rng)
    vis, hid2, neg = rbm.getnegphase(hid_state, weights, rng)
    pairs = rbm.update(pos, neg, case, vis, hid_prob, hid2, hp, layer=weights.layer)

    record = Record(b"", rbm.encode_case_value(0, None, case))
    config = {"num_vis": "4", "num_hid": "3", "seed": str(job_seed),
              "lr": repr(hp.learning_rate), "cd_steps": "1"}
    emitted = rbm.rbm_mapper(record, rbm.pack_layer(weights), config)

    assert len(emitted) == len(pairs) == 4 * 3 + 4 + 3
    for (key, value), delta in zip(emitted, pairs):
        assert rbm.parse_weight_key(key) == delta.weight_id
        assert float(value) == delta.delta


def test_mapper_emission_cardinality():
    weights = rbm.randomize_weights(7, 5, seed=3)
    case = np.random.default_rng(2).random(7)
    record = Record(b"", rbm.encode_case_value(4, 1, case))
    config = {"num_vis": "7", "num_hid": "5", "seed": "9", "lr": "0.1",
              "cd_steps": "1"}
    out = rbm.rbm_mapper(record, rbm.pack_layer(weights), config)
    assert len(out) == 7 * 5 + 7 + 5


def test_mapper_rejects_malformed_case():
    weights = rbm.randomize_weights(4, 2, seed=3)
    config = {"num_vis": "4", "num_hid": "2", "seed": "0", "lr": "0.1",
              "cd_steps": "1"}
    short = Record(b"", rbm.encode_case_value(17, None, np.zeros(3)))
    with pytest.raises(FormatError, match="case 17"):
        rbm.rbm_mapper(short, rbm.pack_layer(weights), config)
    garbage = Record(b"", b"not|a|case at all")
    with pytest.raises(FormatError):
        rbm.rbm_mapper(garbage, rbm.pack_layer(weights), config)


def test_reducer_folds_left_to_right():
    assert float(rbm.rbm_reducer(b"k", [b"0.1", b"-0.05"], {})[1]) == \
        pytest.approx(0.05, abs=1e-15)
    assert rbm.rbm_reducer(b"k", [b"0.125"], {})[1] == b"0.125"

    rng = np.random.default_rng(11)
    values = [repr(v).encode() for v in rng.standard_normal(60).tolist()]
    total = 0.0
    for v in values:
        total += float(v)
    assert float(rbm.rbm_reducer(b"k", values, {})[1]) == total


def test_apply_zero_sums_is_identity():
    weights = rbm.randomize_weights(5, 4, seed=6)
    zeros = (np.zeros((5, 4)), np.zeros(5), np.zeros(4))
    hp = rbm.CdHyperParams(weight_decay=0.0)
    new, vel = rbm.apply_summed(weights, zeros, 10, hp)
    assert np.array_equal(new.w, weights.w)
    assert np.array_equal(vel.w, np.zeros((5, 4)))


def test_apply_plain_add():
    weights = rbm.randomize_weights(3, 3, seed=7)
    sums = (np.full((3, 3), 0.5), np.full(3, -0.25), np.full(3, 1.0))
    hp = rbm.CdHyperParams(momentum=0.0, weight_decay=0.0)
    new, _ = rbm.apply_summed(weights, sums, 1, hp)
    assert np.array_equal(new.w, weights.w + 0.5)
    assert np.array_equal(new.vbias, weights.vbias - 0.25)
    assert np.array_equal(new.hbias, weights.hbias + 1.0)


def test_apply_momentum_matches_scalar_recurrence():
    weights = rbm.randomize_weights(2, 2, seed=8)
    hp = rbm.CdHyperParams(momentum=0.5, weight_decay=0.01)
    rng = np.random.default_rng(3)
    s1 = tuple(rng.standard_normal(s) for s in ((2, 2), 2, 2))
    s2 = tuple(rng.standard_normal(s) for s in ((2, 2), 2, 2))
    batch = 4

    step1, vel1 = rbm.apply_summed(weights, s1, batch, hp)
    step2, _ = rbm.apply_summed(step1, s2, batch, hp, vel1)

    lr, m, d = hp.learning_rate, hp.momentum, hp.weight_decay
    for i in range(2):
        for j in range(2):
            w0 = weights.w[i, j]
            v1 = m * 0.0 + s1[0][i, j] / batch - lr * d * w0
            w1 = w0 + v1
            v2 = m * v1 + s2[0][i, j] / batch - lr * d * w1
            w2 = w1 + v2
            assert abs(step2.w[i, j] - w2) < 1e-12
        b0 = weights.vbias[i]
        v1 = s1[1][i] / batch
        v2 = m * v1 + s2[1][i] / batch  # no decay on biases
        assert abs(step2.vbias[i] - (b0 + v1 + v2)) < 1e-12


def test_apply_updates_rejects_unknown_weight_id():
    weights = rbm.randomize_weights(3, 2, seed=1)
    bogus = [rbm.WeightDelta(rbm.WeightId(0, "w", 5, 0), 0.1)]
    with pytest.raises(IntegrityError):
        rbm.apply_updates(weights, bogus, 1, rbm.CdHyperParams())
    wrong_layer = [rbm.WeightDelta(rbm.WeightId(3, "w", 0, 0), 0.1)]
    with pytest.raises(IntegrityError):
        rbm.apply_updates(weights, wrong_layer, 1, rbm.CdHyperParams())


def test_layer_pack_roundtrip():
    weights = rbm.randomize_weights(9, 4, seed=12, layer=2)
    back, consumed = rbm.unpack_layer(rbm.pack_layer(weights))
    assert consumed == len(rbm.pack_layer(weights))
    assert back.layer == 2
    assert np.array_equal(back.w, weights.w)
    assert np.array_equal(back.vbias, weights.vbias)
    assert np.array_equal(back.hbias, weights.hbias)


def reference_executor(records, mapper, reducer, broadcast, config):
    """Single-threaded map -> group -> reduce, written independently of
    the engine."""
    groups = {}
    for rec in records:
        for key, value in mapper(rec, broadcast, config):
            groups.setdefault(key, []).append(value)
    out = [reducer(key, values, config) for key, values in groups.items()]
    return sorted(out, key=lambda r: r[0])


@pytest.mark.parametrize("workers", [1, 3])
def test_rbm_job_equals_reference_executor(workers, tiny_cases):
    weights = rbm.randomize_weights(12, 5, seed=14)
    hp = rbm.CdHyperParams()
    spec = deepnet.rbm_job_spec(tiny_cases, weights, hp, job_seed=55,
                                workers=workers)
    engine_out = deepnet.build_engine().run_job(spec).output
    reference = reference_executor(spec.input, rbm.rbm_mapper, rbm.rbm_reducer,
                                   spec.broadcast, spec.config)
    assert engine_out == reference


def test_job_matches_incore_sum(tiny_cases):
    weights = rbm.randomize_weights(12, 5, seed=15)
    hp = rbm.CdHyperParams()
    spec = deepnet.rbm_job_spec(tiny_cases, weights, hp, job_seed=70, workers=2)
    sums_job = rbm.parse_summed_output(
        deepnet.build_engine().run_job(spec).output, weights)
    sums_core = rbm.sum_case_deltas([(c.case_id, c.pixels) for c in tiny_cases],
                                    weights, hp, job_seed=70)
    for a, b in zip(sums_job, sums_core):
        assert np.array_equal(a, b)


def test_reconstruction_error_descends(train_dataset):
    cases = data.subset(train_dataset, 200, seed=1).cases
    cfg = deepnet.NetworkConfig(num_nodes=(784, 64), max_epoch=10,
                                hp=rbm.CdHyperParams(), seed=3, batch_size=50)
    errors = []
    deepnet.pretrain(cases, cfg,
                     on_epoch=lambda layer, epoch, tr, te: errors.append(tr))
    assert len(errors) == 10
    assert errors[-1] < 0.7 * errors[0]


def test_weights_stay_finite_over_fifty_epochs(train_dataset):
    cases = data.subset(train_dataset, 30, seed=2).cases
    cfg = deepnet.NetworkConfig(num_nodes=(784, 12), max_epoch=50,
                                hp=rbm.CdHyperParams(), seed=4, batch_size=10)
    stack = deepnet.pretrain(cases, cfg)
    for layer in stack.layers:
        assert np.isfinite(layer.w).all()
        assert np.isfinite(layer.vbias).all() and np.isfinite(layer.hbias).all()
