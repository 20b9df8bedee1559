import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degreesketch.hll import (
    CalibrationError,
    HllParams,
    HllSketch,
    Mode,
    ParamsMismatchError,
    alpha,
    calibrate_beta,
    default_cardinality_grid,
    hash64,
    hash64_array,
    hash_key,
    hash_split,
    hash_split_array,
    load_calibration,
    merge,
    read_calibration,
    write_calibration,
)
from oracles import ref_alpha, ref_estimate, ref_hash, ref_registers, ref_split, ref_unhash

u64 = st.integers(min_value=0, max_value=2**64 - 1)
element_lists = st.lists(u64, max_size=120)


# ------------------------------------------------------------------ params


def test_params_derived_fields(p12):
    assert p12.p + p12.q == 64
    assert p12.r == 4096
    assert p12.sparse_limit == 1024
    assert len(p12.beta_coeffs) == 8


@pytest.mark.parametrize("p", [3, 17])
def test_params_reject_out_of_range_prefix(p):
    with pytest.raises(ValueError):
        HllParams(p)


def test_params_reject_wrong_coefficient_count():
    with pytest.raises(ValueError):
        HllParams(12, beta_coeffs=(1.0, 2.0))


def test_params_fail_loudly_without_calibration(monkeypatch, tmp_path):
    import degreesketch.hll as hll

    monkeypatch.setattr(hll, "_calibration_path", lambda p: tmp_path / f"p{p:02d}.txt")
    hll.load_calibration.cache_clear()
    try:
        with pytest.raises(CalibrationError, match="no beta calibration"):
            HllParams(9)
        # An explicit calibration still works.
        assert HllParams(9, beta_coeffs=(0.0,) * 8).r == 512
    finally:
        hll.load_calibration.cache_clear()


@pytest.mark.parametrize("p", range(4, 17))
def test_every_prefix_has_bundled_calibration(p):
    assert len(load_calibration(p)) == 8


# ----------------------------------------------------------------- hashing


def test_hash_frozen_values():
    # Computed with the plain-integer reference in tests/oracles.py.
    key0 = hash_key(0)
    assert hash64(0, key0) == 0x7AB40E090F363A7D
    assert hash64(1, key0) == 0xBFEF8030DDC2D772
    assert hash64(2**63, key0) == 0x3489ADB19631EACD
    assert hash64(7, hash_key(42)) == 0xE874E283470E8B12


@given(st.lists(u64, min_size=1, max_size=50), st.integers(0, 2**64 - 1))
def test_hash_array_matches_scalar(xs, seed):
    key = hash_key(seed)
    got = hash64_array(np.array(xs, dtype=np.uint64), key)
    assert got.tolist() == [ref_hash(x, seed) for x in xs]


@given(st.lists(u64, min_size=1, max_size=50), st.integers(4, 16), st.integers(0, 1000))
def test_hash_split_matches_bit_string_reference(xs, p, seed):
    params = HllParams(p, seed)
    b, r = hash_split_array(np.array(xs, dtype=np.uint64), params)
    for x, bj, rj in zip(xs, b.tolist(), r.tolist()):
        assert (bj, rj) == ref_split(x, p, seed) == hash_split(x, params)


def test_rank_two_when_second_suffix_bit_is_first_one(p12):
    # Element 0 hashes (seed 0) to a word whose suffix starts with "01".
    w = ref_hash(0, 0)
    assert format(w, "064b")[12:14] == "01"
    assert hash_split(0, p12)[1] == 2


def test_all_zero_suffix_gives_top_rank(p12):
    # Invert the hash to find the element with bucket 5 and an all-zero suffix.
    x = ref_unhash(5 << p12.q, 0)
    assert hash_split(x, p12) == (5, p12.q + 1)
    b, r = hash_split_array(np.array([x], dtype=np.uint64), p12)
    assert (b[0], r[0]) == (5, p12.q + 1)


def test_same_bucket_keeps_larger_rank(p12):
    # Brute-force a colliding pair among small integers.
    seen = {}
    pair = None
    for x in range(100000):
        b, r = ref_split(x, 12, 0)
        if b in seen and seen[b][1] != r:
            pair = (seen[b], (x, r))
            break
        seen.setdefault(b, (x, r))
    (x1, r1), (x2, r2) = pair
    both = HllSketch.from_elements(p12, [x1, x2])
    best = HllSketch.from_elements(p12, [x1 if r1 > r2 else x2])
    assert both.same_registers(best)
    elems = list(range(10)) + [x1, x2]
    assert HllSketch.from_elements(p12, elems).registers().tolist() == ref_registers(elems, 12, 0)


# ---------------------------------------------------------------- insertion


def test_insert_twice_is_idempotent(p12):
    sk = HllSketch(p12)
    sk.insert(99)
    before = sk.to_bytes()
    sk.insert(99)
    assert sk.to_bytes() == before


def test_single_insert(p12):
    sk = HllSketch(p12)
    sk.insert(12345)
    assert sk.z == p12.r - 1
    assert np.count_nonzero(sk.registers()) == 1


def _distinct_bucket_elements(params, count):
    out, used = [], set()
    x = 0
    while len(out) < count:
        b, _ = hash_split(x, params)
        if b not in used:
            used.add(b)
            out.append(x)
        x += 1
    return out


def test_saturation_after_quarter_plus_one_buckets(p8):
    elems = _distinct_bucket_elements(p8, p8.r // 4 + 1)
    sk = HllSketch(p8)
    for x in elems[:-1]:
        sk.insert(x)
    assert sk.mode is Mode.SPARSE
    sk.insert(elems[-1])
    assert sk.mode is Mode.DENSE
    assert sk.z == p8.r - len(elems)


def test_batch_insert_saturates_like_scalar(p8):
    elems = _distinct_bucket_elements(p8, p8.r // 4 + 1)
    a = HllSketch.from_elements(p8, elems)
    assert a.mode is Mode.DENSE
    b = HllSketch.from_elements(p8, elems[:-1])
    assert b.mode is Mode.SPARSE


def test_saturate_empty(p12):
    sk = HllSketch(p12)
    sk.saturate()
    assert sk.mode is Mode.DENSE and sk.z == p12.r and not sk.registers().any()


def test_saturate_single_pair(p12):
    sk = HllSketch(p12)
    sk.insert_register(3, 5)
    sk.saturate()
    regs = sk.registers()
    assert regs[3] == 5 and np.count_nonzero(regs) == 1


def test_saturate_dense_is_an_error(p12):
    sk = HllSketch(p12, dense=True)
    with pytest.raises(RuntimeError):
        sk.saturate()


@given(element_lists)
def test_saturate_keeps_registers_and_estimate(elems):
    params = HllParams(8)
    sk = HllSketch.from_elements(params, elems)
    if sk.mode is Mode.DENSE:
        return
    before, est = sk.registers().copy(), sk.estimate()
    sk.saturate()
    assert np.array_equal(sk.registers(), before)
    assert sk.estimate() == est


# ------------------------------------------------------------------ merging


def test_merge_single_is_identity(p12):
    a = HllSketch.from_elements(p12, range(50))
    assert merge(a).same_registers(a)


def test_merge_is_brute_force_union(p12):
    a = HllSketch.from_elements(p12, [1, 2])
    b = HllSketch.from_elements(p12, [2, 3])
    assert merge(a, b).same_registers(HllSketch.from_elements(p12, [1, 2, 3]))
    assert merge(a, b).registers().tolist() == ref_registers([1, 2, 3], 12, 0)


def test_merge_rejects_mismatched_seeds():
    a = HllSketch(HllParams(12, 0))
    b = HllSketch(HllParams(12, 1))
    with pytest.raises(ParamsMismatchError):
        merge(a, b)
    with pytest.raises(ParamsMismatchError):
        a.update(b)


def test_merge_needs_input():
    with pytest.raises(ValueError):
        merge()


def _sketch(params, elems, dense):
    return HllSketch.from_elements(params, elems, dense=dense)


@settings(max_examples=150)
@given(element_lists, element_lists, element_lists, st.booleans(), st.booleans())
def test_merge_monoid(x, y, z, d1, d2):
    params = HllParams(6)
    a, b, c = _sketch(params, x, d1), _sketch(params, y, d2), _sketch(params, z, False)
    empty = HllSketch(params)
    assert merge(merge(a, b), c).same_registers(merge(a, merge(b, c)))
    assert merge(a, b).same_registers(merge(b, a))
    assert merge(a, a).same_registers(a)
    assert merge(a, empty).same_registers(a)


@given(element_lists, st.randoms(use_true_random=False))
def test_insertion_order_invariance(elems, rnd):
    params = HllParams(6)
    shuffled = list(elems)
    rnd.shuffle(shuffled)
    a, b = HllSketch(params), HllSketch(params)
    for x in elems:
        a.insert(x)
    for x in shuffled:
        b.insert(x)
    assert a.same_registers(b)
    assert a.to_bytes() == b.to_bytes()


@given(element_lists, element_lists)
def test_estimate_of_merge_equals_estimate_of_union(x, y):
    params = HllParams(7)
    a, b = HllSketch.from_elements(params, x), HllSketch.from_elements(params, y)
    u = HllSketch.from_elements(params, set(x) | set(y))
    m = merge(a, b)
    assert m.same_registers(u)
    assert m.estimate() == u.estimate()


@given(element_lists)
def test_sparse_and_dense_paths_agree(elems):
    params = HllParams(6)
    sparse = HllSketch(params)
    dense = HllSketch(params, dense=True)
    for x in elems:
        sparse.insert(x)
        dense.insert(x)
    assert np.array_equal(sparse.registers(), dense.registers())
    assert sparse.estimate() == dense.estimate()


@given(element_lists, st.integers(4, 10))
def test_register_invariants(elems, p):
    params = HllParams(p)
    sk = HllSketch.from_elements(params, elems)
    regs = sk.registers()
    assert regs.max(initial=0) <= params.q + 1
    assert sk.z == params.r - np.count_nonzero(regs)
    if sk.mode is Mode.SPARSE:
        assert len(sk.sparse_registers) <= params.r // 4
        assert all(v > 0 for _, v in sk.sparse_registers)


# --------------------------------------------------------------- estimation


def test_empty_estimate_is_zero(p12):
    assert HllSketch(p12).estimate() == 0.0


@given(element_lists)
def test_estimate_matches_reference_formula(elems):
    params = HllParams(8, 3)
    sk = HllSketch.from_elements(params, elems)
    ref = ref_estimate(ref_registers(elems, 8, 3), params.alpha, params.beta_coeffs)
    assert sk.estimate() == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_small_cardinality_within_ten_percent():
    for seed in range(100):
        params = HllParams(12, seed)
        est = HllSketch.from_elements(params, np.arange(100, dtype=np.uint64)).estimate()
        assert abs(est - 100) <= 10, (seed, est)


@pytest.mark.parametrize("p", [8, 12])
@pytest.mark.parametrize("n", [10**3, 10**4, 10**5])
def test_relative_standard_error(p, n):
    rel = []
    for seed in range(100):
        params = HllParams(p, seed)
        rel.append(HllSketch.from_elements(params, np.arange(n, dtype=np.uint64)).estimate() / n - 1)
    assert np.std(rel) <= 1.3 * 1.04 / math.sqrt(1 << p)


# -------------------------------------------------------------------- alpha


def test_alpha_classical_constants():
    assert alpha(16) == pytest.approx(0.673, abs=5e-4)
    assert alpha(32) == pytest.approx(0.697, abs=5e-4)
    assert alpha(64) == pytest.approx(0.709, abs=5e-4)


@pytest.mark.parametrize("r", [16, 64, 512])
def test_alpha_matches_independent_quadrature(r):
    assert alpha(r) == pytest.approx(ref_alpha(r), rel=1e-10)


@pytest.mark.parametrize("p", range(7, 17))
def test_alpha_asymptotic_form(p):
    r = 1 << p
    assert abs(alpha(r) - 0.7213 / (1 + 1.079 / r)) < 1e-4


# -------------------------------------------------------------- calibration


def test_calibration_rejects_single_cardinality():
    with pytest.raises(CalibrationError):
        calibrate_beta(8, 100, [256])


def test_calibration_rejects_grid_without_zero_registers():
    # Far above 5r every register is occupied, so z never varies.
    with pytest.raises(CalibrationError):
        calibrate_beta(4, 100, [5000 + 100 * i for i in range(10)])


def test_calibration_needs_enough_trials():
    with pytest.raises(ValueError):
        calibrate_beta(8, 99)


def test_calibration_is_reproducible():
    a = calibrate_beta(6, 100, rng_seed=11)
    b = calibrate_beta(6, 100, rng_seed=11)
    assert a == b
    assert a != calibrate_beta(6, 100, rng_seed=12)


def test_bundled_calibration_regenerates_exactly():
    assert calibrate_beta(8, 200, default_cardinality_grid(8), rng_seed=8) == load_calibration(8)


def test_calibration_holdout_accuracy():
    # Fresh hash seeds and element ranges never used by the fit.
    r = 4096
    ns = np.unique(np.geomspace(1, 3 * r, 40).astype(int))
    errs = []
    for seed in range(1000, 1030):
        params = HllParams(12, seed)
        start = seed * 10**7
        for n in ns:
            est = HllSketch.from_elements(params, np.arange(start, start + n, dtype=np.uint64)).estimate()
            errs.append(abs(est - n) / n)
    assert np.mean(errs) <= 0.02


def test_calibration_file_roundtrip(tmp_path):
    coeffs = tuple(float(i) / 7 for i in range(8))
    path = tmp_path / "p09.txt"
    write_calibration(path, 9, coeffs)
    lines = path.read_text().splitlines()
    assert lines[0] == "p=9" and len(lines[1].split()) == 8
    assert read_calibration(path) == (9, coeffs)


# ------------------------------------------------------------ serialization


@given(element_lists, st.booleans())
def test_serialization_roundtrip(elems, dense):
    params = HllParams(6)
    sk = HllSketch.from_elements(params, elems, dense=dense)
    data = sk.to_bytes()
    back = HllSketch.from_bytes(params, data)
    assert back.mode == sk.mode and back.same_registers(sk) and back.to_bytes() == data


def test_serialization_layout(p12):
    sk = HllSketch(p12)
    sk.insert_register(7, 3)
    sk.insert_register(2, 9)
    data = sk.to_bytes()
    assert data[0] == Mode.SPARSE
    assert int.from_bytes(data[1:5], "little") == p12.r - 2
    assert int.from_bytes(data[5:9], "little") == 2
    assert data[9:] == bytes([2, 0, 9, 7, 0, 3])
    sk.saturate()
    dense = sk.to_bytes()
    assert dense[0] == Mode.DENSE and len(dense) == 5 + p12.r


def test_deserialization_errors(p12):
    sk = HllSketch.from_elements(p12, range(10))
    data = sk.to_bytes()
    with pytest.raises(ValueError):
        HllSketch.from_bytes(p12, data[:-1])
    bad = bytearray(data)
    bad[1] ^= 1
    with pytest.raises(ValueError):
        HllSketch.from_bytes(p12, bytes(bad))
    bad = bytearray(data)
    bad[0] = 7
    with pytest.raises(ValueError):
        HllSketch.from_bytes(p12, bytes(bad))
