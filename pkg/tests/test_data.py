import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pourlstm.data import (
    CONSTANT_FEATURES,
    INPUT_FEATURES,
    CorpusError,
    Dataset,
    MotionSequence,
    NormStats,
    format_prediction_csv,
    normalize_apply,
    normalize_fit,
    pad_and_mask,
    parse_corpus,
    pour_onset,
    read_prediction_csv,
    split,
    split_indices,
    split_sizes,
    synth_generate,
    write_corpus,
)


def record(T=3, **over):
    rec = {
        "theta": [float(i) for i in range(T)],
        "force": [1.0 - 0.1 * i for i in range(T)],
        "f_init": 1.0, "f_empty": 0.2, "f_final": 0.5,
        "d_cup": 80.0, "h_cup": 100.0, "d_ctn": 70.0, "h_ctn": 120.0, "rho": 1.0,
    }
    rec.update(over)
    return json.dumps(rec)


def test_parse_minimal_record():
    ds = parse_corpus([record(3)])
    assert len(ds) == 1
    assert len(ds[0]) == 3
    assert ds[0].h_ctn == 120.0


def test_parse_length_mismatch_names_line():
    lines = [record(3), record(5, force=[1.0, 2.0, 3.0, 4.0])]
    with pytest.raises(CorpusError, match="line 2") as exc:
        parse_corpus(lines)
    assert exc.value.line == 2


def test_parse_missing_key():
    rec = json.loads(record())
    del rec["rho"]
    with pytest.raises(CorpusError, match="line 1.*rho"):
        parse_corpus([json.dumps(rec)])


@pytest.mark.parametrize("bad", ['{"theta": [NaN]', record(2, d_cup=-1.0), record(2, f_init=float("inf")), "[1, 2]"])
def test_parse_rejects_invalid(bad):
    with pytest.raises(CorpusError):
        parse_corpus(["", bad])


def test_parse_nonfinite_series():
    text = record(2).replace('"theta": [0.0, 1.0]', '"theta": [0.0, NaN]')
    with pytest.raises(CorpusError, match="finite"):
        parse_corpus([text])


def test_parse_1307_sequences(tmp_path):
    ds = synth_generate(1307, seed=0, t_range=(2, 4))
    path = tmp_path / "c.jsonl"
    write_corpus(ds, path)
    assert len(parse_corpus(path)) == 1307


def test_write_parse_round_trip_is_bitwise():
    ds = synth_generate(6, seed=11, t_range=(1, 30), noise=0.01)
    buf = io.StringIO()
    write_corpus(ds, buf)
    back = parse_corpus(io.StringIO(buf.getvalue()))
    for a, b in zip(ds.sequences, back.sequences):
        assert a.theta.tobytes() == b.theta.tobytes()
        assert a.force.tobytes() == b.force.tobytes()
        assert a.constants == b.constants


@settings(max_examples=40)
@given(st.lists(st.floats(-1e300, 1e300, allow_nan=False), min_size=1, max_size=8), st.floats(1e-300, 1e300))
def test_round_trip_arbitrary_floats(vals, pos):
    seq = MotionSequence(vals, vals[::-1], 1.0, 0.1, 0.5, pos, pos, pos, pos, -pos)
    buf = io.StringIO()
    write_corpus(Dataset([seq]), buf)
    back = parse_corpus(io.StringIO(buf.getvalue()))[0]
    assert back.theta.tobytes() == seq.theta.tobytes()
    assert back.force.tobytes() == seq.force.tobytes()
    assert back.constants == seq.constants


def test_pad_to_1099():
    ds = synth_generate(3, seed=0, t_range=(300, 1000))
    ds.sequences.append(synth_generate(1, seed=1, t_range=(1099, 1099))[0])
    b = pad_and_mask(ds)
    assert b.inputs.shape == (4, 1099, 9)
    assert b.targets.shape == (4, 1099, 1)


def test_pad_explicit_length():
    ds = synth_generate(1, seed=0, t_range=(300, 300))
    b = pad_and_mask(ds, 1099)
    assert b.mask[0].sum() == 300
    assert np.all(b.inputs[0, 300:] == 0)
    assert np.all(b.targets[0, 300:] == 0)
    with pytest.raises(ValueError):
        pad_and_mask(ds, 299)


def test_pad_unseen_834():
    ds = synth_generate(5, seed=3, t_range=(200, 833))
    ds.sequences.append(synth_generate(1, seed=4, t_range=(834, 834))[0])
    assert pad_and_mask(ds).t_max == 834


def test_padding_invariants(small_corpus, small_batch):
    b = small_batch
    for i, s in enumerate(small_corpus.sequences):
        x, y = b.unpad(i)
        np.testing.assert_array_equal(x[:, 0], s.theta)
        np.testing.assert_array_equal(y[:, 0], s.force)
        assert np.all(x[:, 1:] == np.array(s.constants))
        np.testing.assert_array_equal(b.mask[i], np.arange(b.t_max) < len(s))
    assert np.all(b.inputs[~b.mask] == 0)
    assert np.all(b.targets[~b.mask] == 0)


def test_feature_order():
    assert INPUT_FEATURES == ("theta", "f_init", "f_empty", "f_final", "d_cup", "h_cup", "d_ctn", "h_ctn", "rho")
    assert CONSTANT_FEATURES == INPUT_FEATURES[1:]


def test_split_table_sizes():
    assert split_sizes(1307) == (1045, 196, 66)
    assert split_sizes(20) == (16, 3, 1)
    with pytest.raises(ValueError):
        split_sizes(2)
    with pytest.raises(ValueError):
        split_sizes(100, (0.8, 0.15, 0.1))


@given(st.integers(3, 3000), st.integers(0, 2**31))
def test_split_partitions(n, seed):
    parts = split_indices(n, seed=seed)
    joined = np.concatenate(parts)
    assert sorted(joined.tolist()) == list(range(n))
    assert tuple(len(p) for p in parts) == split_sizes(n)


def test_split_deterministic_and_ordered(small_corpus):
    a = split_indices(50, seed=3)
    b = split_indices(50, seed=3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    tr, va, te = split_indices(20, shuffle=False)
    assert tr.tolist() == list(range(16)) and te.tolist() == [19]
    parts = split(small_corpus, seed=1)
    assert [len(p) for p in parts] == [9, 1, 2]


def test_normalize_midpoint_and_extrapolation():
    seqs = [MotionSequence([100.0, 200.0], [1.0, 1.0], 1.0, 0.1, 0.5, 1, 1, 1, 1, 1)]
    batch = pad_and_mask(Dataset(seqs), 3)
    stats = normalize_fit(batch)
    assert stats.mins[0] == 100.0 and stats.maxs[0] == 200.0
    probe = pad_and_mask(Dataset([MotionSequence([150.0, 250.0, 50.0], [0.0] * 3, 1, 0.1, 0.5, 1, 1, 1, 1, 1)]))
    out = normalize_apply(probe, stats)
    np.testing.assert_allclose(out.inputs[0, :, 0], [0.5, 1.5, -0.5])
    # every constant feature has zero range in the fitted set
    assert set(stats.degenerate) == set(CONSTANT_FEATURES)
    assert np.all(out.inputs[0, :, 1:] == 0)


def test_normalize_keeps_padding_and_targets(small_batch):
    stats = normalize_fit(small_batch)
    out = normalize_apply(small_batch, stats)
    assert np.all(out.inputs[~out.mask] == 0)
    assert out.targets.tobytes() == small_batch.targets.tobytes()
    real = out.inputs[out.mask]
    assert real.min() >= 0.0 and real.max() <= 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10_000))
def test_normalize_fit_apply_unit_range(n, seed):
    batch = pad_and_mask(synth_generate(n, seed=seed, t_range=(1, 20), noise=0.05))
    out = normalize_apply(batch, normalize_fit(batch))
    real = out.inputs[out.mask]
    assert real.min() >= 0.0 and real.max() <= 1.0


def test_norm_stats_json_round_trip(small_corpus):
    stats = normalize_fit(small_corpus)
    d = json.loads(json.dumps(stats.to_dict()))
    assert list(d) == list(INPUT_FEATURES)
    back = NormStats.from_dict(d)
    assert back.mins.tobytes() == stats.mins.tobytes()
    assert back.maxs.tobytes() == stats.maxs.tobytes()


def test_synth_noise_free_monotone():
    ds = synth_generate(40, seed=2, t_range=(2, 200))
    for s in ds.sequences:
        assert np.all(np.diff(s.force) <= 0)
        assert np.all(np.diff(s.theta) >= 0)
        assert s.theta[0] == 0.0
        assert s.f_empty < s.f_final < s.f_init


def test_synth_endpoints():
    ds = synth_generate(40, seed=9, t_range=(50, 120))
    for s in ds.sequences:
        span = s.f_init - s.f_final
        assert abs(s.force[0] - s.f_init) <= 0.01 * span
        assert abs(s.force[-1] - s.f_final) <= 0.01 * span
        assert s.theta[-1] == pytest.approx(120.0)
        assert 30.0 <= pour_onset(s.d_ctn, s.h_ctn) <= 90.0


def test_synth_deterministic():
    a = synth_generate(5, seed=4, noise=0.01)
    b = synth_generate(5, seed=4, noise=0.01)
    for x, y in zip(a.sequences, b.sequences):
        assert x.force.tobytes() == y.force.tobytes()
        assert x.theta.tobytes() == y.theta.tobytes()
    assert a.provenance == "synthetic"
    with pytest.raises(ValueError):
        synth_generate(0)


def test_prediction_csv_round_trip():
    actual = np.array([0.1, 1 / 3, 2.5e-17])
    pred = np.array([np.pi, -0.0, 1e300])
    text = format_prediction_csv(actual, pred)
    assert text.splitlines()[0] == "t,actual,predicted"
    t, a, p = read_prediction_csv(text)
    assert t.tolist() == [0, 1, 2]
    assert a.tobytes() == actual.tobytes()
    assert p.tobytes() == pred.tobytes()
