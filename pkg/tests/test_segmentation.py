"""Segmentation: SLIC invariants, score oracle, thresholding, parsing IO."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridinv.embedding import coarse_invert
from hybridinv.errors import ConfigError, StageError
from hybridinv.generator import LatentCode
from hybridinv.metrics import HuberOracle, raw_l2_field
from hybridinv.toydata import noise_patch_instance, reachable_image
from hybridinv.segmentation import (LossMap, ParsingMask, SuperpixelPartition,
                                    binarize, fuse, identity_parsing,
                                    load_parsing, loss_map, make_parsing,
                                    partition_scores, save_parsing, segment,
                                    segment_from_parts, slic_superpixels,
                                    _enforce_connectivity)

from conftest import corpus_images

RNG = np.random.default_rng


def assert_partition_invariants(part):
    labels = part.labels
    # dense cover with contiguous ids
    assert labels.dtype == np.int64
    present = np.unique(labels)
    np.testing.assert_array_equal(present, np.arange(part.count))
    # every partition 4-connected and nonempty
    part.validate()


@pytest.mark.parametrize("k", [1, 10, 100])
def test_slic_invariants_across_corpus(state, k):
    for name, img in corpus_images(state).items():
        part = slic_superpixels(img, k_target=k)
        assert_partition_invariants(part)
        assert part.count >= 1


@pytest.mark.parametrize("compactness", [1.0, 40.0])
def test_slic_compactness_variants(state, compactness):
    img = corpus_images(state)["render"]
    part = slic_superpixels(img, k_target=50, compactness=compactness)
    assert_partition_invariants(part)


def test_slic_argument_validation(state):
    img = corpus_images(state)["render"]
    with pytest.raises(ConfigError, match="k_target"):
        slic_superpixels(img, k_target=0)
    with pytest.raises(ConfigError, match="exceeds pixel count"):
        slic_superpixels(img, k_target=32 * 32 + 1)
    with pytest.raises(ConfigError, match="compactness"):
        slic_superpixels(img, compactness=0.0)


def test_enforce_connectivity_splits_islands():
    assign = np.zeros((8, 8), dtype=np.int64)
    assign[:, 4:] = 1
    assign[0, 0] = 1  # disconnected island of cluster 1, area 1 -> absorbed
    labels = _enforce_connectivity(assign)
    part = SuperpixelPartition(labels, int(labels.max()) + 1)
    assert_partition_invariants(part)
    # island vanished into its dominant neighbor (cluster 0 side)
    assert labels[0, 0] == labels[1, 0] == labels[0, 1]


def test_enforce_connectivity_keeps_large_components():
    assign = np.zeros((8, 8), dtype=np.int64)
    assign[:, 4:] = 1
    labels = _enforce_connectivity(assign)
    assert len(np.unique(labels)) == 2
    assert (labels[:, :4] != labels[:, 4:]).all()


def test_partition_validate_rejects_disconnected():
    labels = np.zeros((4, 4), dtype=np.int64)
    labels[0, 0] = labels[3, 3] = 1
    with pytest.raises(StageError, match="not 4-connected"):
        SuperpixelPartition(labels, 2).validate()


# --- loss map and scores ------------------------------------------------------

def test_loss_map_is_minmax_normalized(state):
    imgs = corpus_images(state)
    lmap = loss_map(imgs["render"], imgs["noise"])
    assert lmap.normalized
    assert lmap.values.min() == 0.0 and lmap.values.max() == 1.0


def test_loss_map_constant_field_becomes_zeros(state):
    img = corpus_images(state)["render"]
    lmap = loss_map(img, img)
    assert lmap.normalized
    assert not lmap.values.any()


def test_loss_map_shape_mismatch():
    with pytest.raises(ConfigError):
        loss_map(np.zeros((3, 8, 8)), np.zeros((3, 8, 4)))


@given(st.integers(2, 8), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_partition_scores_matches_brute_force(n_parts, seed):
    rng = RNG(seed)
    raw = rng.integers(0, n_parts, size=(8, 8))
    _, labels = np.unique(raw, return_inverse=True)
    labels = labels.reshape(8, 8)
    count = int(labels.max()) + 1
    part = SuperpixelPartition(labels.astype(np.int64), count)
    vals = rng.random((8, 8))
    scores = partition_scores(LossMap(vals, normalized=True), part)
    for i in range(count):
        np.testing.assert_allclose(scores[i], vals[labels == i].mean(),
                                   rtol=0, atol=1e-6)


def test_partition_scores_requires_normalized():
    part = SuperpixelPartition(np.zeros((4, 4), dtype=np.int64), 1)
    with pytest.raises(ConfigError, match="normalized"):
        partition_scores(LossMap(np.zeros((4, 4)), normalized=False), part)


# --- binarize / fuse ------------------------------------------------------------

def halves_partition():
    labels = np.zeros((4, 6), dtype=np.int64)
    labels[:, 3:] = 1
    return SuperpixelPartition(labels, 2)


def test_binarize_uses_majority_category_threshold():
    part = halves_partition()
    parse_labels = np.ones((4, 6), dtype=np.int64)  # skin, tau1 = 0.7
    parse_labels[:, 3:] = 3                          # eyes, tau2 = 0.8
    parsing = make_parsing(parse_labels)
    mask = binarize(np.array([0.75, 0.75]), part, parsing)
    assert (mask[:, :3] == 0).all()  # 0.75 >= 0.7 -> out
    assert (mask[:, 3:] == 1).all()  # 0.75 <  0.8 -> in


def test_binarize_majority_wins_in_mixed_partition():
    part = halves_partition()
    parse_labels = np.ones((4, 6), dtype=np.int64)
    parse_labels[:3, 3:] = 4  # nose majority (9 px) over skin (3 px)
    parsing = make_parsing(parse_labels)
    mask = binarize(np.array([0.0, 0.75]), part, parsing)
    assert (mask[:, 3:] == 1).all()  # nose tau 0.8 > 0.75 -> stays in
    mask = binarize(np.array([0.0, 0.85]), part, parsing)
    assert (mask[:, 3:] == 0).all()


def test_binarize_validation():
    part = halves_partition()
    parsing = identity_parsing(4, 6)
    with pytest.raises(ConfigError, match="scores"):
        binarize(np.zeros(3), part, parsing)
    with pytest.raises(ConfigError, match="shape"):
        binarize(np.zeros(2), part, identity_parsing(5, 5))


def test_fuse_is_elementwise_and():
    m_s = np.array([[1, 1], [0, 1]], dtype=np.uint8)
    parse_labels = np.array([[1, 10], [1, 1]], dtype=np.int64)  # occlusion out
    fused = fuse(m_s, make_parsing(parse_labels))
    np.testing.assert_array_equal(fused, [[1, 0], [0, 1]])
    with pytest.raises(ConfigError):
        fuse(np.ones((3, 3), dtype=np.uint8), make_parsing(parse_labels))


def test_segment_from_parts_composition():
    part = halves_partition()
    vals = np.zeros((4, 6))
    vals[:, 3:] = 1.0
    parsing = identity_parsing(4, 6)
    result = segment_from_parts(LossMap(vals, normalized=True), part, parsing)
    np.testing.assert_allclose(result.scores, [0.0, 1.0])
    assert (result.mask[:, 3:] == 0).all() and (result.mask[:, :3] == 1).all()
    np.testing.assert_array_equal(result.mask, result.mask_super * parsing.in_mask())


# --- parsing table ---------------------------------------------------------------

def test_make_parsing_thresholds_and_domains():
    parsing = make_parsing(np.zeros((2, 2), dtype=np.int64), tau1=0.6, tau2=0.9)
    assert parsing.category_threshold["skin"] == 0.6
    assert parsing.category_threshold["mouth"] == 0.9
    assert parsing.category_domain["hair"] == "in"
    assert parsing.category_domain["occlusion"] == "out"
    assert parsing.category_domain["background"] == "out"


def test_parsing_mask_validation():
    with pytest.raises(ConfigError, match="without category"):
        ParsingMask(np.array([[99]]), {0: "skin"}, {"skin": "in"}, {"skin": 0.7})
    with pytest.raises(ConfigError, match="domain"):
        ParsingMask(np.array([[0]]), {0: "skin"}, {}, {"skin": 0.7})
    with pytest.raises(ConfigError, match="in/out"):
        ParsingMask(np.array([[0]]), {0: "skin"}, {"skin": "maybe"}, {"skin": 0.7})
    with pytest.raises(ConfigError, match="threshold"):
        ParsingMask(np.array([[0]]), {0: "skin"}, {"skin": "in"}, {})


def test_identity_parsing_all_in():
    parsing = identity_parsing(3, 5)
    assert parsing.in_mask().all()
    assert (parsing.threshold_raster() == 0.7).all()


def test_parsing_save_load_roundtrip(tmp_path):
    labels = np.ones((6, 6), dtype=np.int64)
    labels[2:4, 2:4] = 10
    parsing = make_parsing(labels, tau1=0.65, tau2=0.85)
    path = tmp_path / "parsing.png"
    save_parsing(path, parsing)
    loaded = load_parsing(path)
    np.testing.assert_array_equal(loaded.labels, labels)
    assert loaded.category_threshold == parsing.category_threshold
    assert loaded.category_domain == parsing.category_domain
    np.testing.assert_array_equal(loaded.in_mask(), parsing.in_mask())


def test_load_parsing_missing_sidecar(tmp_path):
    import cv2
    path = tmp_path / "p.png"
    cv2.imwrite(str(path), np.ones((4, 4), dtype=np.uint8))
    with pytest.raises(ConfigError, match="sidecar"):
        load_parsing(path)


class TestWorkedExamples:
    """Hand-evaluated micro cases for each stage of the mask pipeline."""

    def test_uniform_color_partitions_near_equal_area(self, small):
        img = np.full((3, 32, 32), 0.3, dtype=np.float32)
        part = slic_superpixels(img, k_target=4)
        assert part.count == 4
        expect = 32 * 32 / 4
        assert np.all(np.abs(part.areas() - expect) <= 0.25 * expect)

    def test_loss_map_peaks_in_corrupted_quadrant(self, small):
        coarse = small.synthesize(
            LatentCode.z(RNG(3).standard_normal(small.d_latent)))
        target = coarse.copy()
        target[:, 16:, 16:] += RNG(4).uniform(0.5, 1.0, (3, 16, 16)).astype(
            np.float32)
        lmap = loss_map(target, coarse)
        quad = np.zeros((32, 32), dtype=bool)
        quad[16:, 16:] = True
        y, x = np.unravel_index(np.argmax(lmap.values), lmap.values.shape)
        assert quad[y, x]
        assert lmap.values[quad].mean() > 10 * lmap.values[~quad].mean()

    def test_partition_scores_row_means(self):
        lmap = LossMap(np.array([[0.0, 1.0], [1.0, 1.0]]), normalized=True)
        part = SuperpixelPartition(np.array([[0, 0], [1, 1]]), count=2)
        np.testing.assert_allclose(partition_scores(lmap, part), [0.5, 1.0])

    def test_binarize_uniform_threshold(self):
        part = SuperpixelPartition(np.array([[0, 0], [1, 1]]), count=2)
        parsing = make_parsing(np.ones((2, 2), dtype=np.uint8), tau1=0.7)
        mask = binarize(np.array([0.2, 0.9]), part, parsing)
        np.testing.assert_array_equal(mask, [[1, 1], [0, 0]])

    def test_fuse_elementwise_product(self):
        labels = np.array([[1, 10], [1, 1]], dtype=np.uint8)  # 10 = occlusion
        parsing = make_parsing(labels)
        np.testing.assert_array_equal(parsing.in_mask(), [[1, 0], [1, 1]])
        m_s = np.array([[1, 1], [0, 1]], dtype=np.uint8)
        np.testing.assert_array_equal(fuse(m_s, parsing), [[1, 0], [0, 1]])


class TestDomainRecovery:
    """End-to-end loss-path properties: no ground-truth parsing supplied."""

    def test_noise_patch_flagged_out_of_domain(self, state):
        inst = noise_patch_instance(state, seed=4)
        seg = segment(inst.target, state)
        patch = inst.mask_true == 0
        assert (seg.mask[patch] == 0).mean() >= 0.8

    @pytest.mark.parametrize("seed", [11, 12])
    def test_clean_image_mostly_in_domain(self, state, seed):
        clean, _ = reachable_image(state, seed=seed)
        seg = segment(clean, state)
        assert (seg.mask == 0).mean() <= 0.05

    def test_probe_fit_is_robust_to_the_patch(self, state):
        # the bounded objective must not let the patch warp the rest of
        # the render, or the residual map loses its contrast
        inst = noise_patch_instance(state, seed=8)
        co = coarse_invert(state, inst.target, oracle=HuberOracle())
        d = raw_l2_field(co.coarse_image, inst.target)
        patch = inst.mask_true == 0
        assert np.quantile(d[~patch], 0.95) < 0.05
        assert np.quantile(d[patch], 0.5) > 0.2
