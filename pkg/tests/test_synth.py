import itertools

import numpy as np
import pytest

from svtr2.errors import InputError
from svtr2.msr import compute_bucket
from svtr2.synth import (DEFAULT_ALPHABET, GLYPH_H, GLYPH_W, LEXICON, TEST_ALPHABET, AugmentConfig, GlyphFont,
                         ProfileOptions, SceneSpec, augment, generate, make_dataset, masked_positions, render,
                         sample_seed, template_read)


@pytest.fixture(scope="module")
def font():
    return GlyphFont()


class TestFont:
    def test_default_alphabet_size(self, font):
        assert len(DEFAULT_ALPHABET) == 12 and len(font.charset) == 12

    @pytest.mark.parametrize("alphabet", [DEFAULT_ALPHABET, TEST_ALPHABET])
    def test_bitmaps_unique(self, alphabet):
        f = GlyphFont(alphabet)
        for a, b in itertools.combinations(alphabet, 2):
            assert not np.array_equal(f.glyph(a), f.glyph(b)), (a, b)

    def test_upside_down_glyph_never_equals_another(self):
        # keeps the rotated profile unambiguous: no glyph turned 180 degrees reads as a different glyph
        f = GlyphFont(TEST_ALPHABET)
        for a, b in itertools.permutations(TEST_ALPHABET, 2):
            assert not np.array_equal(np.rot90(f.glyph(a), 2), f.glyph(b)), (a, b)

    def test_glyph_shape(self, font):
        assert all(font.glyph(c).shape == (GLYPH_H, GLYPH_W) for c in DEFAULT_ALPHABET)

    def test_unknown_glyph(self, font):
        with pytest.raises(InputError):
            font.glyph("?")
        with pytest.raises(InputError):
            GlyphFont("ab?")
        with pytest.raises(InputError):
            render(SceneSpec("cab"), 0, font)


class TestRender:
    def test_pixel_exact_tiling(self, font):
        spec = SceneSpec("tea", glyph_scale=2)
        img = render(spec, 0, font).image
        s, m = 2, spec.margin
        assert img.shape == (3, 2 * m + GLYPH_H * s, 2 * m + 3 * (GLYPH_W + 1) * s - s)
        for k, ch in enumerate("tea"):
            left = m + k * (GLYPH_W + 1) * s
            cell = img[0, m:m + GLYPH_H * s, left:left + GLYPH_W * s]
            np.testing.assert_array_equal(cell, np.kron(font.glyph(ch), np.ones((s, s))))
        np.testing.assert_array_equal(img[0], img[1])

    def test_deterministic(self, font):
        spec = SceneSpec("noise", rotation_deg=12.5, curvature=0.5, occlusion_frac=0.2, noise_sigma=0.05)
        np.testing.assert_array_equal(render(spec, 7, font).image, render(spec, 7, font).image)

    def test_rotation_180_flips_both_axes(self, font):
        flat = render(SceneSpec("rat"), 0, font).image
        turned = render(SceneSpec("rat", rotation_deg=180.0), 0, font).image
        np.testing.assert_array_equal(turned, flat[:, ::-1, ::-1])

    def test_rotation_90_makes_text_tall(self, font):
        img = render(SceneSpec("stone", rotation_deg=90.0), 0, font).image
        assert compute_bucket(img.shape[1], img.shape[2]).id == "R1"

    def test_values_in_unit_range(self, font):
        img = render(SceneSpec("idea", rotation_deg=33.0, noise_sigma=0.3), 3, font).image
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_occlusion_masks_whole_character(self, font):
        spec = SceneSpec("chart", occlusion_frac=0.2)
        img = render(spec, 11, font).image[0]
        (k,) = masked_positions(spec, 11)
        s, m = spec.glyph_scale, spec.margin
        left = m + k * (GLYPH_W + 1) * s
        assert not img[m:m + GLYPH_H * s, left:left + GLYPH_W * s].any()
        others = [j for j in range(5) if j != k]
        assert all(img[m:m + GLYPH_H * s, m + j * (GLYPH_W + 1) * s:][:, :GLYPH_W * s].any() for j in others)

    def test_empty_text(self, font):
        with pytest.raises(InputError):
            render(SceneSpec(""), 0, font)


class TestProfiles:
    def test_long_lengths(self, font):
        for spec, sample in generate("long", 10, 0, font):
            assert 26 <= len(spec.text) <= 35 and len(sample.label) == len(spec.text)

    def test_regular_ranges(self, font):
        for spec, _ in generate("regular", 50, 1, font):
            assert 1 <= len(spec.text) <= 8 and -5 <= spec.rotation_deg <= 5

    def test_rotated_angles(self, font):
        for spec, _ in generate("rotated", 50, 2, font):
            nearest = min((90, 180, 270), key=lambda a: abs(spec.rotation_deg - a))
            assert abs(spec.rotation_deg - nearest) <= 10

    def test_curved_range(self, font):
        assert all(0.5 <= spec.curvature <= 1.0 for spec, _ in generate("curved", 30, 3, font))

    def test_occluded_masks_exactly_one(self, font):
        for index, (spec, sample) in enumerate(generate("occluded", 40, 4, font)):
            assert 0.0 < spec.occlusion_frac <= 0.3
            assert len(masked_positions(spec, sample_seed(4, index))) == 1

    def test_mixed_spans_all_buckets(self, font):
        buckets = {compute_bucket(s.height, s.width).id for _, s in generate("mixed", 200, 5, font)}
        assert buckets == {"R1", "R2", "R3", "R4"}

    def test_lexicon_source(self, font):
        words = set(LEXICON)
        specs = [spec for spec, _ in generate("occluded", 30, 6, font, ProfileOptions(text_source="lexicon"))]
        assert all(spec.text in words for spec in specs)

    def test_length_override(self, font):
        opts = ProfileOptions(lengths=(20, 25))
        assert all(20 <= len(spec.text) <= 25 for spec, _ in generate("regular", 20, 7, font, opts))

    def test_unknown_profile(self, font):
        with pytest.raises(InputError):
            generate("blurry", 3, 0, font)

    def test_worker_count_does_not_change_output(self, font, monkeypatch):
        serial = generate("mixed", 12, 9, font)
        monkeypatch.setenv("SVTR2_THREADS", "2")
        parallel = generate("mixed", 12, 9, font)
        for (sa, a), (sb, b) in zip(serial, parallel):
            assert sa == sb
            np.testing.assert_array_equal(a.image, b.image)


class TestMakeDataset:
    def test_byte_identical(self, tmp_path, font):
        a = make_dataset("mixed", 15, 3, tmp_path / "a", font)
        b = make_dataset("mixed", 15, 3, tmp_path / "b", font)
        assert a.read_bytes() == b.read_bytes()
        for line in a.read_text().splitlines():
            rel = line.split("\t")[0]
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
        assert (tmp_path / "a" / "charset.txt").read_text() == "".join(c + "\n" for c in DEFAULT_ALPHABET)


class TestAugment:
    def test_probability_zero_is_identity(self, font):
        sample = render(SceneSpec("loan", noise_sigma=0.02), 0, font)
        out = augment(sample, 5, AugmentConfig(prob=0.0))
        np.testing.assert_array_equal(out.image, sample.image)
        assert out.label == sample.label

    def test_same_seed_same_chain(self, font):
        sample = render(SceneSpec("loan"), 0, font)
        cfg = AugmentConfig(prob=1.0)
        np.testing.assert_array_equal(augment(sample, 5, cfg).image, augment(sample, 5, cfg).image)
        assert not np.array_equal(augment(sample, 5, cfg).image, augment(sample, 6, cfg).image)

    def test_stays_in_unit_range(self, font):
        sample = render(SceneSpec("solar", noise_sigma=0.1), 1, font)
        for seed in range(10):
            img = augment(sample, seed, AugmentConfig(prob=1.0, max_noise=0.5)).image
            assert img.min() >= 0.0 and img.max() <= 1.0


class TestLegibility:
    def test_template_matcher_reads_regular_profile(self, font):
        correct = total = 0
        for spec, sample in generate("regular", 200, 8, font, ProfileOptions(noise_max=0.0)):
            read = template_read(sample, spec, font)
            correct += sum(a == b for a, b in zip(read, spec.text))
            total += len(spec.text)
        assert correct / total >= 0.99
