import json

import numpy as np
import pytest

from rmgd.descriptor import (
    BitCandidateMatrix,
    DescriptorModel,
    Group,
    GroupLayout,
    binary_test,
    candidate_nbytes,
    candidates_from_means,
    extract_candidates,
    extract_descriptor,
    extract_descriptors,
    get_geometry,
)
from rmgd.errors import ConfigError, DataError, ResourceCapError
from rmgd.feature_maps import feature_map
from rmgd.ring_geometry import build_circle_integral, region_means


def small_model(geom, maps=("Int", "Mag"), n=12, seed=0, **kw):
    rng = np.random.default_rng(seed)
    chosen = {m: [geom.pair_from_candidate(int(c)) for c in rng.choice(geom.n_pairs, n, replace=False)]
              for m in maps}
    return DescriptorModel(geom.k, geom.t, chosen, **kw)


class TestCandidates:
    def test_per_bit_recompute(self, rng):
        geom = get_geometry(16, 4)
        px = rng.uniform(0, 255, size=(11, 16, 16))
        cands = extract_candidates(px, "Int", geom)
        assert cands.n_rows == geom.n_pairs and cands.n_patches == 11
        for c in rng.choice(geom.n_pairs, 40, replace=False):
            pair = geom.pair_from_candidate(int(c))
            for j in (0, 5, 10):
                ci = build_circle_integral(px[j], geom)
                assert cands.bit(int(c), j) == binary_test(ci, pair)

    def test_row_subset(self, rng):
        geom = get_geometry(16, 4)
        px = rng.uniform(0, 255, size=(9, 16, 16))
        means = region_means(feature_map(px, "Mag"), geom)
        full = candidates_from_means(means, geom)
        rows = np.array([3, 50, 1000])
        sub = candidates_from_means(means, geom, rows=rows)
        assert np.array_equal(sub, full[rows])
        m = BitCandidateMatrix(sub, 9, "Mag", geom, rows=rows)
        assert m.pair(1) == geom.pair_from_candidate(50)

    def test_strict_comparison(self):
        geom = get_geometry(16, 4)
        cands = extract_candidates(np.full((1, 16, 16), 5.0), "Int", geom)
        assert not cands.bits.any()

    def test_memory_cap(self, rng):
        geom = get_geometry(32, 8)
        assert candidate_nbytes(geom.n_pairs, 8) == geom.n_pairs
        with pytest.raises(ResourceCapError):
            extract_candidates(rng.uniform(size=(8, 32, 32)), "Int", geom, memory_cap=1000)


class TestModel:
    def test_default_groups_and_weights(self, geom8):
        m = small_model(geom8)
        assert m.n_groups == 2 and m.n_bits == 24
        assert np.array_equal(m.effective_weights(), [1, 1])

    def test_json_roundtrip(self, geom8, tmp_path):
        m = small_model(geom8, weights=[0.5, 0.0], provenance={"seed": 3})
        path = m.save(tmp_path / "m.json")
        back = DescriptorModel.load(path)
        assert back.to_json() == m.to_json()
        assert json.loads(path.read_text())["version"] == 1

    def test_validation(self, geom8):
        m = small_model(geom8, maps=("Int",))
        with pytest.raises(ConfigError):
            m.with_groups([Group("Int", 0, 5)])
        with pytest.raises(ConfigError):
            m.with_weights([-1.0])
        with pytest.raises(ConfigError):
            DescriptorModel(32, 8, {"Foo": []})
        pair = geom8.pair_from_candidate(0)
        with pytest.raises(ConfigError):
            DescriptorModel(32, 8, {"Int": [pair, pair]})

    def test_bad_version(self, geom8):
        d = small_model(geom8).to_dict()
        d["version"] = 99
        with pytest.raises(ConfigError):
            DescriptorModel.from_dict(d)


class TestExtract:
    def test_bits_match_binary_tests(self, geom8, rng):
        m = small_model(geom8, maps=("Int", "Chan3"), n=13)
        px = rng.uniform(0, 255, size=(4, 32, 32))
        packed = extract_descriptors(px, m)
        layout = GroupLayout.from_model(m)
        assert layout.n_bytes == 4 and packed.shape == (4, 4)
        for j in range(4):
            d = extract_descriptor(px[j], m)
            assert np.array_equal(d.data, packed[j])
            for gi, g in enumerate(m.groups):
                ci = build_circle_integral(feature_map(px[j], g.map), geom8)
                expect = [binary_test(ci, p) for p in m.maps[g.map][g.start:g.start + g.len]]
                assert d.group_bits(gi).astype(int).tolist() == expect

    def test_constant_patch_is_zero(self, geom8):
        m = small_model(geom8)
        d = extract_descriptor(np.full((32, 32), 9.0), m)
        assert not d.bits().any()
        assert all(set(h) == {"0"} for h in d.hex_groups())

    def test_subgroup_layout_pads_bytes(self, geom8):
        m = small_model(geom8, maps=("Int",), n=12)
        m2 = m.with_groups([Group("Int", 0, 5), Group("Int", 5, 7)])
        lay = GroupLayout.from_model(m2)
        assert lay.byte_offsets.tolist() == [0, 1, 2]
        assert lay.byte_group().tolist() == [0, 1]

    def test_shape_check(self, geom8):
        with pytest.raises(DataError):
            extract_descriptor(np.zeros((16, 16)), small_model(geom8))
