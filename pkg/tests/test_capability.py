import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopmm import capability as cmod
from coopmm import geometry as geo
from coopmm.errors import ChecksumMismatch, EmptyMap, FormatError, InvalidResolution, VersionMismatch

COARSE = dict(res_t=0.2, res_r=np.pi / 4)


@pytest.fixture(scope="module")
def coarse(model):
    return {t: cmod.construct_cm(model, thres=t, **COARSE) for t in (0.1, 0.4)}


def tiny_map():
    idx = np.array([[5, 0, 3, 0, 0, 2], [5, 1, 3, 0, 0, 2], [-2, 4, 1, 1, -1, 8]])
    vals = np.array([0.5, 0.75, 0.9], dtype=np.float32)
    return cmod._from_sparse(0.1, np.pi / 8, 0.4, idx, vals, {"model": "tiny"})


# -- keys and lookup -------------------------------------------------------------------


def test_nearest_multiple_rounding():
    assert cmod.round_index(0.51, 0.1) == 5
    assert cmod.round_index(0.55, 0.1) == 6
    assert cmod.round_index(-0.04, 0.1) == 0
    m = tiny_map()
    assert m.query([0.51, 0.0, 0.3, 0.0, 0.0, np.pi / 4]) == pytest.approx(0.5)
    assert m.query([0.51, 0.12, 0.31, 0.02, -0.02, np.pi / 4 + 0.1]) == pytest.approx(0.75)


def test_yaw_is_periodic():
    m = tiny_map()
    # yaw index 8 is pi; -pi wraps onto it
    pose = [-0.2, 0.4, 0.1, np.pi / 8, -np.pi / 8, -np.pi]
    assert m.query(pose) == pytest.approx(0.9)
    pose[5] = np.pi + 2 * np.pi
    assert m.query(pose) == pytest.approx(0.9)


def test_missing_key_is_none():
    m = tiny_map()
    assert m.query([3.0, 3.0, 3.0, 0, 0, 0]) is None
    assert m.query([0.5, 0.0, 0.3, 0, 0, 0]) is None
    assert np.isnan(m.query_batch([[3.0, 3.0, 3.0, 0, 0, 0]])[0])


def test_scalar_and_batch_queries_agree(coarse, rng):
    m = coarse[0.1]
    keys, _ = m.entries()
    lo, hi = keys.min(axis=0) - 0.3, keys.max(axis=0) + 0.3
    poses = rng.uniform(lo, hi, size=(3000, 6))
    poses[:1000] = keys[rng.integers(0, len(keys), 1000)] + rng.uniform(-0.09, 0.09, (1000, 6))
    batch = m.query_batch(poses)
    for p, b in zip(poses, batch):
        s = m.query(p)
        assert (s is None and np.isnan(b)) or s == pytest.approx(b)


def test_stored_keys_query_to_their_value(coarse):
    m = coarse[0.4]
    keys, vals = m.entries()
    for k, v in zip(keys, vals):
        assert m.query(k) == pytest.approx(float(v))
    assert cmod.query_cm(m, geo.Pose6(keys[0][:3], keys[0][3:])) == pytest.approx(float(vals[0]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_query_is_stable_inside_a_cell(seed):
    m = tiny_map()
    rng = np.random.default_rng(seed)
    keys, vals = m.entries()
    i = rng.integers(0, len(keys))
    jitter = np.concatenate([rng.uniform(-0.049, 0.049, 3), rng.uniform(-0.19, 0.19, 3)])
    assert m.query(keys[i] + jitter) == pytest.approx(float(vals[i]))


# -- construction -------------------------------------------------------------------


def test_threshold_orders_entry_sets(coarse):
    lo, hi = coarse[0.1], coarse[0.4]
    assert lo.entry_count > hi.entry_count > 0
    k_lo = {tuple(k) for k in lo.entry_indices()[0].tolist()}
    k_hi = {tuple(k) for k in hi.entry_indices()[0].tolist()}
    assert k_hi <= k_lo
    assert np.all(hi.entries()[1] >= 0.4)
    assert np.all(lo.entries()[1] >= 0.1)


def test_threshold_near_one_leaves_nothing(model):
    with pytest.raises(EmptyMap):
        cmod.construct_cm(model, thres=0.999, **COARSE)


def test_bad_resolution(model):
    with pytest.raises(InvalidResolution):
        cmod.construct_cm(model, res_t=0.0)
    with pytest.raises(InvalidResolution):
        cmod.construct_cm(model, res_r=-1.0)


def test_construction_is_deterministic(model, coarse):
    again = cmod.construct_cm(model, thres=0.4, **COARSE)
    a, b = coarse[0.4].entry_indices(), again.entry_indices()
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_coarse_keys_reverify(model, coarse):
    rep = cmod.verify_cm(coarse[0.4], model, n=40, seed=1)
    assert rep["checked"] == 40
    assert rep["fraction"] >= 0.9


# -- persistence -------------------------------------------------------------------


def test_save_load_round_trip(coarse, tmp_path):
    m = coarse[0.4]
    p = tmp_path / "m.cm"
    cmod.save_cm(m, p)
    back = cmod.load_cm(p)
    assert back.entry_count == m.entry_count
    a, b = m.entries(), back.entries()
    assert np.allclose(a[0], b[0], atol=1e-6)
    assert np.array_equal(a[1], b[1])
    assert back.res_t == m.res_t and back.res_r == m.res_r and back.thres == m.thres


def test_truncated_file(coarse, tmp_path):
    p = tmp_path / "m.cm"
    cmod.save_cm(coarse[0.4], p)
    p.write_bytes(p.read_bytes()[:-100])
    with pytest.raises(FormatError):
        cmod.load_cm(p)


def test_corrupted_byte(coarse, tmp_path):
    p = tmp_path / "m.cm"
    cmod.save_cm(coarse[0.4], p)
    data = bytearray(p.read_bytes())
    data[-40] ^= 0xFF
    p.write_bytes(bytes(data))
    with pytest.raises(ChecksumMismatch):
        cmod.load_cm(p)


def test_wrong_magic_and_version(coarse, tmp_path):
    p = tmp_path / "m.cm"
    cmod.save_cm(coarse[0.4], p)
    data = bytearray(p.read_bytes())
    bad = bytes(b"XXXXXXXX" + data[8:])
    p.write_bytes(bad)
    with pytest.raises(FormatError):
        cmod.load_cm(p)
    data[8] = 7
    p.write_bytes(bytes(data))
    with pytest.raises(VersionMismatch):
        cmod.load_cm(p)


# -- statistics -------------------------------------------------------------------


def test_stats_match_linear_scan(coarse):
    m = coarse[0.1]
    st_ = cmod.cm_stats(m)
    keys, vals = [], []
    it = np.nditer(m.values, flags=["multi_index"])
    for v in it:
        if not np.isnan(v):
            keys.append(m.key_coordinates(np.array(it.multi_index) + m.origin)[0])
            vals.append(float(v))
    keys = np.array(keys)
    assert st_["entry_count"] == len(vals)
    assert st_["mean_metric"] == pytest.approx(np.mean(vals), rel=1e-6)
    assert np.allclose(st_["bounding_box"]["min"], keys.min(axis=0))
    assert np.allclose(st_["bounding_box"]["max"], keys.max(axis=0))


def test_stats_of_empty_map():
    m = cmod._from_sparse(0.1, np.pi / 8, 0.4, np.zeros((0, 6), dtype=np.int64),
                          np.zeros(0, dtype=np.float32), {})
    st_ = cmod.cm_stats(m)
    assert st_["entry_count"] == 0 and st_["mean_defined"] is False
    assert m.query([0, 0, 0, 0, 0, 0]) is None
