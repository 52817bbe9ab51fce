import itertools

import numpy as np
import pytest

from daforge.data import (SOURCE, TARGET, BadMagicError, CellRangeError, Dataset, DomainByteError,
                          LabelRangeError, SynthSpec, TruncatedError, decode, dumps_wmd,
                          generate_synth, load_wmd, loads_wmd, make_batches, one_hot_encode,
                          save_wmd, stratified_split, subsample_target)


def tiny(n_per_class=(2, 2), shape=(4, 5), domain=TARGET, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(n_per_class)), n_per_class)
    maps = rng.integers(0, 3, size=(len(labels),) + shape)
    return Dataset(maps, labels, tuple(f"c{i}" for i in range(len(n_per_class))), domain)


# -- one-hot ----------------------------------------------------------------

def test_one_hot_single_cell():
    np.testing.assert_array_equal(one_hot_encode(np.array([[2]]))[0, 0], [0, 0, 1])


def test_one_hot_constant_map():
    x = one_hot_encode(np.zeros((4, 4), dtype=np.uint8))
    assert np.all(x[..., 0] == 1) and np.all(x[..., 1:] == 0)


@pytest.mark.parametrize("seed", range(20))
def test_one_hot_decode_round_trip(seed):
    grid = np.random.default_rng(seed).integers(0, 3, size=(7, 9))
    x = one_hot_encode(grid)
    assert x.sum() == grid.size
    np.testing.assert_array_equal(decode(x), grid)


def test_one_hot_rejects_bad_code():
    with pytest.raises(CellRangeError):
        one_hot_encode(np.array([[0, 3]]))


# -- WMD --------------------------------------------------------------------

def test_wmd_empty_round_trip(tmp_path):
    ds = Dataset(np.zeros((0, 3, 4), dtype=np.uint8), np.zeros(0, dtype=int), ("a", "b"), SOURCE)
    save_wmd(ds, tmp_path / "e.wmd")
    back = load_wmd(tmp_path / "e.wmd")
    assert back.equals(ds) and len(back) == 0 and back.shape == (3, 4)


def test_wmd_two_sample_bytes():
    ds = Dataset(np.array([[[0, 1], [2, 1]], [[1, 1], [0, 2]]]), [1, 0], ("x", "y"), TARGET)
    blob = dumps_wmd(ds)
    expected = (b"WMD1" + bytes([1, 2]) + (2).to_bytes(2, "little") + (2).to_bytes(2, "little")
                + (2).to_bytes(4, "little") + bytes([1, 0, 1, 2, 1]) + bytes([0, 1, 1, 0, 2]))
    assert blob == expected
    assert dumps_wmd(loads_wmd(blob, ["x", "y"])) == blob


def test_wmd_file_round_trip_byte_identical(tmp_path):
    ds = tiny((3, 4, 1), shape=(6, 6))
    save_wmd(ds, tmp_path / "a.wmd")
    back = load_wmd(tmp_path / "a.wmd")
    assert back.equals(ds)
    save_wmd(back, tmp_path / "b.wmd")
    assert (tmp_path / "a.wmd").read_bytes() == (tmp_path / "b.wmd").read_bytes()
    assert (tmp_path / "a.names").read_text() == "c0\nc1\nc2\n"


def test_wmd_bad_magic():
    blob = bytearray(dumps_wmd(tiny()))
    blob[0:4] = b"XMD1"
    with pytest.raises(BadMagicError, match="offset 0"):
        loads_wmd(bytes(blob))


def test_wmd_truncated():
    blob = dumps_wmd(tiny())
    with pytest.raises(TruncatedError):
        loads_wmd(blob[:-3])
    with pytest.raises(TruncatedError):
        loads_wmd(blob[:8])


def test_wmd_label_out_of_range_reports_offset():
    blob = bytearray(dumps_wmd(tiny()))
    rec = 1 + 4 * 5
    blob[14 + 2 * rec] = 7
    with pytest.raises(LabelRangeError) as exc:
        loads_wmd(bytes(blob))
    assert exc.value.offset == 14 + 2 * rec


def test_wmd_cell_out_of_range_reports_offset():
    blob = bytearray(dumps_wmd(tiny()))
    blob[14 + 1 + 3] = 9
    with pytest.raises(CellRangeError) as exc:
        loads_wmd(bytes(blob))
    assert exc.value.offset == 18


def test_wmd_bad_domain_byte():
    blob = bytearray(dumps_wmd(tiny()))
    blob[4] = 5
    with pytest.raises(DomainByteError):
        loads_wmd(bytes(blob))


# -- stratified split -------------------------------------------------------

WM811K_COUNTS = {"center": 90, "donut": 1, "edge-loc": 296, "edge-ring": 31, "local": 297,
                 "near-full": 16, "random": 74, "scratch": 72, "none": 13489}


def wm811k_like():
    names = tuple(WM811K_COUNTS)
    labels = np.repeat(np.arange(len(names)), list(WM811K_COUNTS.values()))
    maps = np.zeros((len(labels), 3, 3), dtype=np.uint8)
    # encode the sample index into the pixels so identities survive subsetting
    idx = np.arange(len(labels))
    for k in range(9):
        maps[:, k // 3, k % 3] = (idx // 3 ** k) % 3
    return Dataset(maps, labels, names, TARGET)


def _ids(ds):
    m = ds.maps.reshape(len(ds), 9).astype(int)
    return set(int(v) for v in m @ 3 ** np.arange(9))


def test_split_paper_counts_share_only_donut():
    ds = wm811k_like()
    train, test = stratified_split(ds, 0.6, seed=0)
    donut = ds.class_names.index("donut")
    assert train.class_counts()[donut] == 1 and test.class_counts()[donut] == 1
    for c, n in enumerate(ds.class_counts()):
        if n > 1:
            assert train.class_counts()[c] == int(np.floor(0.6 * n + 0.5))
            assert train.class_counts()[c] + test.class_counts()[c] == n
    shared = _ids(train) & _ids(test)
    assert len(shared) == 1
    (only,) = shared
    assert only == int(np.flatnonzero(ds.labels == donut)[0])


def test_split_even():
    train, test = stratified_split(tiny((2, 2, 2)), 0.5, seed=3)
    np.testing.assert_array_equal(train.class_counts(), [1, 1, 1])
    np.testing.assert_array_equal(test.class_counts(), [1, 1, 1])


def test_split_seeded():
    ds = tiny((20, 20), seed=1)
    a = stratified_split(ds, 0.6, seed=5)
    b = stratified_split(ds, 0.6, seed=5)
    c = stratified_split(ds, 0.6, seed=6)
    assert a[0].equals(b[0]) and a[1].equals(b[1])
    assert not a[0].equals(c[0])


def test_split_rejects_bad_fraction_and_empty():
    with pytest.raises(ValueError):
        stratified_split(tiny(), 1.0, 0)
    empty = Dataset(np.zeros((0, 2, 2)), [], ("a",), TARGET, (2, 2))
    with pytest.raises(ValueError):
        stratified_split(empty, 0.5, 0)


# -- batching ---------------------------------------------------------------

def test_batches_are_half_and_half():
    src, tgt = tiny((30, 30), domain=SOURCE), tiny((20, 5))
    for batch in itertools.islice(make_batches(src, tgt, 32, seed=0), 10):
        assert len(batch.xs) == 16 and len(batch.xt) == 16
        assert set(np.unique(batch.d)) == {0.0, 1.0}


def test_batches_recycle_small_target():
    src, tgt = tiny((30, 30), domain=SOURCE), tiny((20, 5))
    tgt = subsample_target(tgt, 25, seed=0)
    seen = np.zeros(0)
    for batch in itertools.islice(make_batches(src, tgt, 32, seed=1), 200):
        assert len(batch.xt) == 16
        seen = np.concatenate([seen, batch.yt])
    assert len(seen) == 3200


def test_batches_cover_each_epoch_without_repeats():
    src = tiny((8, 8), domain=SOURCE)
    tgt = Dataset(np.zeros((16, 2, 2)), np.arange(16) % 2, ("a", "b"), TARGET)
    # tag target samples through their pixels
    maps = np.zeros((16, 2, 2), dtype=np.uint8)
    for k in range(4):
        maps[:, k // 2, k % 2] = (np.arange(16) >> k) & 1
    tgt = Dataset(maps, tgt.labels, tgt.class_names, TARGET)
    stream = make_batches(src, tgt, 8, seed=2)
    ids = []
    for batch in itertools.islice(stream, 4):
        bits = decode(batch.xt).reshape(4, 4)
        ids.extend((bits * [1, 2, 4, 8]).sum(axis=1))
    assert sorted(ids) == list(range(16))


def test_batches_validate():
    with pytest.raises(ValueError):
        next(make_batches(tiny(), tiny(), 7, 0))
    empty = Dataset(np.zeros((0, 4, 5)), [], ("a", "b"), TARGET, (4, 5))
    with pytest.raises(ValueError):
        next(make_batches(tiny(), empty, 8, 0))


# -- subsampling ------------------------------------------------------------

def test_subsample_full_is_permutation():
    ds = wm811k_like().subset(np.arange(500))
    sub = subsample_target(ds, len(ds), seed=0)
    assert _ids(sub) == _ids(ds)


def test_subsample_sizes_and_seeds():
    ds = wm811k_like().subset(np.arange(0, 14366, 7))
    subs = [subsample_target(ds, 25, seed=s) for s in range(5)]
    assert all(len(s) == 25 for s in subs)
    assert len({frozenset(_ids(s)) for s in subs}) == 5


def test_subsample_too_many():
    with pytest.raises(ValueError):
        subsample_target(tiny(), 5, 0)


# -- synthetic generator ----------------------------------------------------

def test_synth_shapes_and_classes():
    spec = SynthSpec(source_shape=(16, 16), target_shape=(12, 12), n_classes=4,
                     source_counts=(5, 5, 5, 5), target_counts=(100, 10, 10, 10))
    src, tgt = generate_synth(spec)
    assert src.shape == (16, 16) and tgt.shape == (12, 12)
    assert src.class_names == tgt.class_names and src.n_classes == 4
    assert src.domain == SOURCE and tgt.domain == TARGET
    np.testing.assert_array_equal(tgt.class_counts(), [100, 10, 10, 10])
    np.testing.assert_array_equal(src.class_counts(), [5, 5, 5, 5])


def test_synth_deterministic():
    spec = SynthSpec(source_counts=(3, 3, 3, 3), target_counts=(4, 2, 2, 2), seed=9)
    a, b = generate_synth(spec), generate_synth(spec)
    assert a[0].equals(b[0]) and a[1].equals(b[1])


def test_synth_infeasible_geometry():
    with pytest.raises(ValueError):
        generate_synth(SynthSpec(target_shape=(4, 4)))
    with pytest.raises(ValueError):
        generate_synth(SynthSpec(n_classes=1, source_counts=(1,), target_counts=(1,)))


def test_synth_nine_classes():
    spec = SynthSpec(n_classes=9, source_counts=(2,) * 9, target_counts=(2,) * 9)
    src, _ = generate_synth(spec)
    assert src.class_names[-1] == "none"
