"""Sketch structure behavior: packing, adds, promotion, merge, snapshots."""

import numpy as np
import pytest

import dynsketch as d
from dynsketch import _kernels as K
from dynsketch.hashing import mix13_py, split
from dynsketch.sketch import Sketch, SketchConfig, merge, merge_many


def unique_stream(seed: int, n: int) -> np.ndarray:
    out = np.zeros(n, dtype=np.uint64)
    tsize = 1 << max((2 * n - 1).bit_length(), 4)
    tv = np.zeros(tsize, dtype=np.uint64)
    ts = np.zeros(tsize, dtype=np.int32)
    K.fill_unique_values(np.uint64(seed), out, tv, ts, 1)
    return out


class TestConfig:
    def test_register_array_sizes(self):
        # pinned physical layouts
        assert SketchConfig.for_type("dll4", 2048).register_bytes == 1024
        assert SketchConfig.for_type("ll6", 2048).register_bytes == 2048
        assert SketchConfig.for_type("udll6", 2048).register_bytes == 1640
        assert SketchConfig.for_type("udll5", 2048).register_bytes == 1368
        assert SketchConfig.for_type("udll7", 2048).register_bytes == 1824

    def test_dll4_packs_eight_per_word(self):
        sk = Sketch(SketchConfig.for_type("dll4", 2048))
        assert sk.words.dtype == np.uint32
        assert len(sk.words) == 2048 // 8

    def test_validation(self):
        with pytest.raises(ValueError):
            SketchConfig(bucket_count=2048, bits_per_register=8)  # no such layout
        with pytest.raises(ValueError):
            SketchConfig(bucket_count=1000, bits_per_register=4)  # not a power of 2
        with pytest.raises(ValueError):
            SketchConfig(bucket_count=32, bits_per_register=4)  # too few buckets
        with pytest.raises(ValueError):
            SketchConfig(bucket_count=2048, bits_per_register=4, promotion_mode="late")
        # modulo mode allows arbitrary counts
        SketchConfig(bucket_count=3072, bits_per_register=4, addressing="modulo")

    def test_type_names(self):
        for name in ("ll6", "dll4", "dll3", "udll5", "udll6", "udll7"):
            assert SketchConfig.for_type(name, 2048).type_name == name


class TestPacking:
    @pytest.mark.parametrize("type_name", ["ll6", "dll3", "dll4", "udll5", "udll6", "udll7"])
    def test_register_round_trip(self, type_name):
        cfg = SketchConfig.for_type(type_name, 128)
        _, rpw, fbits = K.PACKING[(cfg.nlz_bits, cfg.history_bits)]
        sk = Sketch(cfg)
        rng = np.random.default_rng(1)
        vals = rng.integers(0, 1 << fbits if type_name != "ll6" else 64, 128)
        for j, v in enumerate(vals):
            K.reg_set(sk.words, j, rpw, fbits, np.uint64(v))
        for j, v in enumerate(vals):
            assert K.reg_get(sk.words, j, rpw, fbits) == v
        # overwrite sweep: last write wins at every (register, value) pair
        for j in [0, 1, 127, 63]:
            for v in range(1 << min(fbits, 6)):
                K.reg_set(sk.words, j, rpw, fbits, np.uint64(v))
                assert K.reg_get(sk.words, j, rpw, fbits) == v


class TestAdd:
    def test_single_add(self):
        sk = Sketch(SketchConfig.for_type("dll4", 2048))
        sk.add(12345)
        p = sk.profile()
        assert p.filled == 1
        assert sk.min_zeros == 0
        assert sk.micro_popcount == 1
        key = mix13_py(12345)
        bucket, nlz = split(key, 2048, bitmask=True)
        assert sk.decoded_ranks()[bucket] == min(nlz, 14)

    def test_add_idempotent(self):
        a = Sketch(SketchConfig.for_type("dll4", 2048))
        b = Sketch(SketchConfig.for_type("dll4", 2048))
        a.add(777)
        b.add(777)
        b.add(777)
        assert a.to_bytes() == b.to_bytes()

    def test_masked_add_leaves_state_unchanged(self):
        sk = Sketch(SketchConfig.for_type("dll4", 2048))
        sk.add_many(unique_stream(5, 200_000))
        assert sk.min_zeros > 0
        before = sk.to_bytes()
        rejects = sk.early_rejects
        # craft a raw value whose hash has its top bit set: above the mask
        raw = next(
            x for x in range(1, 10_000) if mix13_py(x) >> 63 == 1
        )
        sk.add(raw)
        assert sk.to_bytes() == before
        assert sk.early_rejects == rejects + 1

    def test_monotone_floor_and_ranks(self):
        sk = Sketch(SketchConfig.for_type("dll4", 1024))
        stream = unique_stream(11, 50_000)
        prev_mz = 0
        prev_ranks = np.full(1024, -1, dtype=np.int64)
        for chunk in np.split(stream, 10):
            sk.add_many(chunk)
            assert sk.min_zeros >= prev_mz
            ranks = sk.decoded_ranks()
            live = (ranks >= 0) & (prev_ranks >= 0)
            capped = prev_ranks == prev_mz + 14
            assert np.all(ranks[live & ~capped] >= prev_ranks[live & ~capped])
            prev_mz = sk.min_zeros
            prev_ranks = ranks

    def test_promotion_count_bounded(self):
        sk = Sketch(SketchConfig.for_type("dll4", 256))
        n = 100_000
        sk.add_many(unique_stream(3, n))
        assert sk.min_zeros <= np.log2(n) + 2

    def test_ee_counter_only_affects_counters(self):
        cfg_on = SketchConfig.for_type("dll4", 2048, ee_mask=True)
        cfg_off = SketchConfig.for_type("dll4", 2048, ee_mask=False)
        a, b = Sketch(cfg_on), Sketch(cfg_off)
        stream = unique_stream(17, 100_000)
        a.add_many(stream)
        b.add_many(stream)
        assert a.to_bytes() == b.to_bytes()
        assert a.early_rejects > 0
        assert b.early_rejects == 0


class TestPromotion:
    def _uniform_sketch(self, stored: int, type_name="dll4", b=128):
        """A sketch with every register's rank portion at `stored`."""
        cfg = SketchConfig.for_type(type_name, b)
        sk = Sketch(cfg)
        _, rpw, fbits = K.PACKING[(cfg.nlz_bits, cfg.history_bits)]
        for j in range(b):
            K.reg_set(sk.words, j, rpw, fbits, np.uint64(stored << cfg.history_bits))
        sk._recount()
        return sk

    def test_promotion_decrements_without_erasure(self):
        # all registers one step above the floor: exactly one promotion,
        # every register lands on the new floor with its rank intact
        sk = self._uniform_sketch(2)
        assert sk.min_zero_count == 0
        ranks_before = sk.decoded_ranks().copy()
        sk.count_and_decrement()
        assert sk.min_zeros == 1
        assert sk.min_zero_count == 128
        assert np.array_equal(sk.decoded_ranks(), ranks_before)

    def test_chained_promotion(self):
        # two steps above the floor: the first decrement leaves no register
        # at or below the new floor, so promotion chains
        sk = self._uniform_sketch(3)
        sk.count_and_decrement()
        assert sk.min_zeros == 2
        assert sk.min_zero_count == 128
        assert sk.profile().filled == 128

    def test_precondition_enforced(self):
        sk = Sketch(SketchConfig.for_type("dll4", 128))
        with pytest.raises(ValueError):
            sk.count_and_decrement()
        # registers sitting exactly at the floor also gate promotion
        at_floor = self._uniform_sketch(1)
        assert at_floor.min_zero_count == 128
        with pytest.raises(ValueError):
            at_floor.count_and_decrement()

    def test_dll3_overflow_recording(self):
        sk = self._uniform_sketch(2, type_name="dll3")
        # raise ten registers to the 3-bit ceiling
        _, rpw, fbits = K.PACKING[(3, 0)]
        for j in range(10):
            K.reg_set(sk.words, j, rpw, fbits, np.uint64(7))
        sk._recount()
        assert sk.min_zero_count == 0
        sk.count_and_decrement()
        # recorded at the cumulative tier it corrects: old floor + max stored
        key = 0 + 7
        assert sk.overflow[key] == 10 // 2

    def test_history_preserved_on_promotion(self):
        cfg = SketchConfig.for_type("udll6", 64)
        sk = Sketch(cfg)
        _, rpw, fbits = K.PACKING[(4, 2)]
        # register 0 lands on the new floor and stops the chain
        K.reg_set(sk.words, 0, rpw, fbits, np.uint64((2 << 2) | 0b01))
        for j in range(1, 64):
            K.reg_set(sk.words, j, rpw, fbits, np.uint64((3 << 2) | 0b10))
        sk._recount()
        sk.count_and_decrement()
        vals = sk.register_values()
        assert sk.min_zeros == 1
        assert vals[0] == (1 << 2) | 0b01  # history untouched
        assert np.all(vals[1:] == ((2 << 2) | 0b10))


class TestMicroIndex:
    def test_micro_estimate_values(self):
        assert d.micro_estimate(0) == 0.0
        assert d.micro_estimate(32) == pytest.approx(64 * np.log(2.0))
        assert d.micro_estimate(64) == pytest.approx(64 * np.log(128.0))

    def test_micro_updates_stop_after_first_promotion(self):
        sk = Sketch(SketchConfig.for_type("dll4", 128))
        sk.add_many(unique_stream(2, 5000))
        assert sk.min_zeros > 0
        word = sk.micro_index
        sk.add_many(unique_stream(3, 1000))
        assert sk.micro_index == word

    def test_lazy_allocation(self):
        cfg = SketchConfig.for_type("dll4", 2048, lazy_allocation=True)
        sk = Sketch(cfg)
        assert not sk.allocated
        stream = unique_stream(4, 1000)
        n_at_alloc = None
        for i, v in enumerate(stream):
            sk.add(int(v))
            if sk.allocated:
                n_at_alloc = i + 1
                break
        assert n_at_alloc is not None
        assert sk.micro_popcount >= 60
        # the allocating add itself lands in the registers
        assert sk.profile().filled >= 1
        # micro-phase estimates come from the collision word
        fresh = Sketch(cfg)
        fresh.add_many(stream[:50])
        assert not fresh.allocated
        est = d.lc(fresh.profile())
        assert abs(est - 50) < 15

    def test_lazy_requires_micro(self):
        with pytest.raises(ValueError):
            SketchConfig.for_type("dll4", 2048, lazy_allocation=True, micro_index=False)


class TestCrossStructure:
    def test_dll4_decodes_to_ll6_below_overflow(self):
        # the shared-exponent encoding is exact below overflow: ranks within
        # the 4-bit window at arrival time are stored losslessly; a rank can
        # only diverge by clamping at the ceiling in force when it arrived
        max_rel = 14
        for seed in range(5):
            stream = unique_stream(100 + seed, 100_000)
            s4 = Sketch(SketchConfig.for_type("dll4", 2048))
            s6 = Sketch(SketchConfig.for_type("ll6", 2048))
            s4.add_many(stream)
            s6.add_many(stream)
            da, la = s4.decoded_ranks(), s6.decoded_ranks()
            assert s4.min_zeros > 0
            # never clamped: ranks representable at any floor
            low = (la >= 0) & (la <= max_rel)
            assert np.array_equal(da[low], la[low])
            # empties agree exactly
            assert np.array_equal(da < 0, la < 0)
            # any divergence is a clamp: ceiling-valued, below the true rank
            diff = np.nonzero((da >= 0) & (da != la))[0]
            for j in diff:
                assert la[j] > max_rel
                assert max_rel <= da[j] < la[j]
                assert da[j] <= s4.min_zeros + max_rel

    def test_profiles_match(self):
        stream = unique_stream(55, 100_000)
        s4 = Sketch(SketchConfig.for_type("dll4", 2048))
        s6 = Sketch(SketchConfig.for_type("ll6", 2048))
        s4.add_many(stream)
        s6.add_many(stream)
        p4, p6 = s4.profile(), s6.profile()
        # clamped mass can only land at rank >= 14
        assert np.array_equal(p4.counts[:14], p6.counts[:14])
        assert p4.counts[14:].sum() == p6.counts[14:].sum()
        assert p4.empty == p6.empty
        assert p4.micro_popcount == p6.micro_popcount


class TestSnapshot:
    @pytest.mark.parametrize("type_name", ["ll6", "dll3", "dll4", "udll5", "udll6", "udll7"])
    def test_round_trip(self, type_name):
        sk = Sketch(SketchConfig.for_type(type_name, 256))
        sk.add_many(unique_stream(8, 30_000))
        blob = sk.to_bytes()
        back = Sketch.from_bytes(blob)
        assert back.to_bytes() == blob
        assert back.cfg.type_name == type_name
        assert back.min_zeros == sk.min_zeros
        assert back.min_zero_count == sk.min_zero_count
        assert np.array_equal(back.words, sk.words)

    def test_magic_guard(self):
        with pytest.raises(ValueError):
            Sketch.from_bytes(b"NOPE" + bytes(64))

    def test_unallocated_round_trip(self):
        sk = Sketch(SketchConfig.for_type("dll4", 2048, lazy_allocation=True))
        sk.add(1)
        blob = sk.to_bytes()
        back = Sketch.from_bytes(blob)
        assert not back.allocated
        assert back.to_bytes() == blob


class TestMerge:
    def _random_sketch(self, seed, n, type_name="dll4", b=256):
        sk = Sketch(SketchConfig.for_type(type_name, b))
        sk.add_many(unique_stream(seed, n))
        return sk

    def test_identity_and_idempotence(self):
        s = self._random_sketch(1, 50_000)
        empty = Sketch(s.cfg)
        assert merge(s, empty).to_bytes() == s.to_bytes()
        assert merge(empty, s).to_bytes() == s.to_bytes()
        assert merge(s, s).to_bytes() == s.to_bytes()

    @pytest.mark.parametrize("type_name", ["ll6", "dll3", "dll4", "udll6"])
    def test_commutative_associative(self, type_name):
        rng = np.random.default_rng(0)
        for trial in range(20):
            sizes = rng.integers(100, 60_000, 3)
            a = self._random_sketch(trial * 3 + 1, int(sizes[0]), type_name)
            b = self._random_sketch(trial * 3 + 2, int(sizes[1]), type_name)
            c = self._random_sketch(trial * 3 + 3, int(sizes[2]), type_name)
            ab = merge(a, b)
            assert ab.to_bytes() == merge(b, a).to_bytes()
            assert merge(ab, c).to_bytes() == merge(a, merge(b, c)).to_bytes()

    def test_merge_equals_union_stream(self):
        # disjoint halves merged == one sketch fed everything
        stream = unique_stream(9, 80_000)
        a = Sketch(SketchConfig.for_type("dll4", 512))
        b = Sketch(SketchConfig.for_type("dll4", 512))
        full = Sketch(SketchConfig.for_type("dll4", 512))
        a.add_many(stream[::2])
        b.add_many(stream[1::2])
        full.add_many(stream)
        m = merge(a, b)
        # decoded ranks agree wherever expressible; higher ranks may have
        # clamped earlier in a half-sketch (lower floor at arrival time)
        dm, df = m.decoded_ranks(), full.decoded_ranks()
        floor = max(m.min_zeros, full.min_zeros)
        exact = (df >= floor) & (df <= 14)
        assert np.array_equal(dm[exact], df[exact])
        high = np.nonzero(df > 14)[0]
        assert np.all((dm[high] >= 14) & (dm[high] <= df[high]))

    def test_merge_config_mismatch(self):
        a = Sketch(SketchConfig.for_type("dll4", 256))
        b = Sketch(SketchConfig.for_type("dll4", 512))
        with pytest.raises(ValueError):
            merge(a, b)

    def test_merge_many_counts(self):
        parts = [self._random_sketch(i, 1000) for i in range(5)]
        res = merge_many(parts)
        assert res.instances_merged == 5

    def test_min_zeros_is_max(self):
        big = self._random_sketch(1, 200_000, b=128)
        small = self._random_sketch(2, 1_000, b=128)
        assert big.min_zeros > small.min_zeros
        m = merge(big, small)
        assert m.min_zeros >= big.min_zeros

    def test_history_union_on_equal_ranks(self):
        cfg = SketchConfig.for_type("udll6", 64)
        a, b = Sketch(cfg), Sketch(cfg)
        _, rpw, fbits = K.PACKING[(4, 2)]
        K.reg_set(a.words, 0, rpw, fbits, np.uint64((3 << 2) | 0b01))
        K.reg_set(b.words, 0, rpw, fbits, np.uint64((3 << 2) | 0b10))
        a._recount()
        b._recount()
        m = merge(a, b)
        assert int(m.register_values()[0]) == (3 << 2) | 0b11

    def test_higher_rank_history_wins(self):
        cfg = SketchConfig.for_type("udll6", 64)
        a, b = Sketch(cfg), Sketch(cfg)
        _, rpw, fbits = K.PACKING[(4, 2)]
        K.reg_set(a.words, 0, rpw, fbits, np.uint64((5 << 2) | 0b01))
        K.reg_set(b.words, 0, rpw, fbits, np.uint64((3 << 2) | 0b11))
        a._recount()
        b._recount()
        m = merge(a, b)
        assert int(m.register_values()[0]) == (5 << 2) | 0b01
