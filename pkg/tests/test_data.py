import csv

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from cusp.data import (
    AGE_HI,
    AGE_LO,
    DEFAULT_GROUPS,
    STRIPE_F_MAX,
    STRIPE_F_MIN,
    AgedImageRecord,
    ToyFaceSpec,
    age_to_group,
    estimate_age_from_image,
    face_half_width,
    image_to_tensor,
    load_folder,
    make_toy_dataset,
    render_toy_face,
    sample_identity,
    stack_batch,
    stripe_frequency,
    tensor_to_image,
)
from cusp.errors import ContractError


class TestToyParametrization:
    def test_stripe_frequency_endpoints(self):
        assert stripe_frequency(AGE_LO) == pytest.approx(STRIPE_F_MIN)
        assert stripe_frequency(AGE_HI) == pytest.approx(STRIPE_F_MAX)
        mid = (AGE_LO + AGE_HI) / 2
        assert stripe_frequency(mid) == pytest.approx((STRIPE_F_MIN + STRIPE_F_MAX) / 2)

    def test_face_width_grows_with_age(self):
        rng = np.random.default_rng(0)
        spec = sample_identity(rng, age=AGE_LO)
        young = face_half_width(spec)
        old = face_half_width(spec.with_age(AGE_HI))
        assert old - young == pytest.approx(6.0)

    @given(st.floats(min_value=20.0, max_value=69.0))
    def test_age_t_normalization(self, age):
        rng = np.random.default_rng(1)
        spec = sample_identity(rng, age=age)
        assert 0.0 <= spec.age_t <= 1.0

    def test_render_shape_and_range(self):
        rng = np.random.default_rng(2)
        img = render_toy_face(sample_identity(rng), resolution=64)
        assert img.shape == (3, 64, 64)
        assert float(img.min()) >= -1.0 and float(img.max()) <= 1.0


class TestAgeEstimator:
    def test_recovers_age_within_one_unit(self):
        rng = np.random.default_rng(3)
        errors = []
        for _ in range(300):
            spec = sample_identity(rng)
            img = render_toy_face(spec, resolution=64)
            errors.append(abs(estimate_age_from_image(img) - spec.age))
        errors = np.asarray(errors)
        assert errors.max() < 1.0
        assert errors.mean() < 0.5

    def test_output_always_in_range(self):
        torch.manual_seed(0)
        for _ in range(20):
            a = estimate_age_from_image(torch.rand(3, 64, 64) * 2 - 1)
            assert AGE_LO <= a <= AGE_HI

    def test_monotone_in_true_age(self):
        rng = np.random.default_rng(4)
        spec = sample_identity(rng, age=AGE_LO)
        ests = [
            estimate_age_from_image(render_toy_face(spec.with_age(a), 64))
            for a in (20.0, 35.0, 50.0, 65.0)
        ]
        assert all(b > a for a, b in zip(ests, ests[1:]))


class TestGroups:
    def test_partition_covers_range_without_overlap(self):
        for a in range(int(AGE_LO), int(AGE_HI) + 1):
            hits = [g for g in DEFAULT_GROUPS if g.contains(a)]
            assert len(hits) == 1

    def test_centers(self):
        assert [g.center for g in DEFAULT_GROUPS] == [25, 35, 45, 55]

    def test_age_to_group(self):
        assert age_to_group(20) == 0
        assert age_to_group(69) == 3
        with pytest.raises(ContractError):
            age_to_group(19)


class TestDataset:
    def test_deterministic_by_seed(self):
        a = make_toy_dataset(4, seed=9)
        b = make_toy_dataset(4, seed=9)
        c = make_toy_dataset(4, seed=10)
        for ra, rb in zip(a, b):
            assert torch.equal(ra.image, rb.image) and ra.age_label == rb.age_label
        assert any(not torch.equal(ra.image, rc.image) for ra, rc in zip(a, c))

    def test_labels_within_range(self):
        for rec in make_toy_dataset(64, seed=11):
            assert AGE_LO <= rec.age_label <= AGE_HI

    def test_ages_spread_over_groups(self):
        # uniform ages should populate every group; chi-square sanity bound
        recs = make_toy_dataset(400, seed=12)
        counts = np.zeros(len(DEFAULT_GROUPS))
        for r in recs:
            counts[age_to_group(r.age_label)] += 1
        expected = np.array([(g.hi - g.lo + 1) / 50 * 400 for g in DEFAULT_GROUPS])
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < 16.27  # p ~ 0.001 at 3 dof

    def test_record_validates_label(self):
        img = torch.zeros(3, 64, 64)
        with pytest.raises(ContractError):
            AgedImageRecord(source_id="x", image=img, age_label=19)

    def test_stack_batch(self):
        recs = make_toy_dataset(5, seed=13)
        images, ages = stack_batch(recs)
        assert images.shape == (5, 3, 64, 64)
        assert ages.tolist() == [r.age_label for r in recs]


class TestImageIO:
    def test_tensor_round_trip(self):
        recs = make_toy_dataset(1, seed=14)
        img = recs[0].image
        back = image_to_tensor(tensor_to_image(img), 64)
        assert float((back - img).abs().max()) <= 1.0 / 127.5 + 1e-6

    def test_center_crop_rectangular(self):
        from PIL import Image

        wide = Image.new("RGB", (100, 50), (255, 0, 0))
        t = image_to_tensor(wide, 32)
        assert t.shape == (3, 32, 32)


class TestFolderLoading:
    def _write_folder(self, tmp_path, n=3, with_labels=True):
        recs = make_toy_dataset(n, seed=15)
        rows = []
        for i, rec in enumerate(recs):
            name = f"img_{i}.png"
            tensor_to_image(rec.image).save(tmp_path / name)
            rows.append((name, rec.age_label))
        if with_labels:
            with open(tmp_path / "labels.csv", "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["source_id", "age"])
                w.writerows(rows)
        return recs

    def test_round_trip_with_labels(self, tmp_path):
        recs = self._write_folder(tmp_path)
        loaded = list(load_folder(tmp_path, labels_file=tmp_path / "labels.csv"))
        assert len(loaded) == len(recs)
        for got, want in zip(loaded, recs):
            assert got.age_label == want.age_label
            assert float((got.image - want.image).abs().max()) <= 1.0 / 127.5 + 1e-6

    def test_missing_label_is_error(self, tmp_path):
        self._write_folder(tmp_path)
        (tmp_path / "extra.png").write_bytes((tmp_path / "img_0.png").read_bytes())
        with pytest.raises(ContractError):
            list(load_folder(tmp_path, labels_file=tmp_path / "labels.csv"))

    def test_malformed_labels_csv(self, tmp_path):
        self._write_folder(tmp_path, with_labels=False)
        (tmp_path / "labels.csv").write_text("source_id,age\nimg_0.png,not_a_number\n")
        with pytest.raises(ContractError):
            list(load_folder(tmp_path, labels_file=tmp_path / "labels.csv"))

    def test_unreadable_image_skipped_with_warning(self, tmp_path, caplog):
        import logging

        self._write_folder(tmp_path)
        (tmp_path / "broken.png").write_bytes(b"not a png at all")
        with open(tmp_path / "labels.csv", "a", newline="") as f:
            csv.writer(f).writerow(["broken.png", 30])
        with caplog.at_level(logging.WARNING):
            loaded = list(load_folder(tmp_path, labels_file=tmp_path / "labels.csv"))
        assert len(loaded) == 3
        assert any("broken.png" in r.message for r in caplog.records)

    def test_classifier_fallback_when_no_labels(self, tmp_path, tiny_cfg):
        from cusp.networks import AgeClassifier

        self._write_folder(tmp_path, with_labels=False)
        clf = AgeClassifier(tiny_cfg)
        loaded = list(load_folder(tmp_path, resolution=32, classifier=clf))
        assert len(loaded) == 3
        for rec in loaded:
            assert AGE_LO <= rec.age_label <= AGE_HI

    def test_no_labels_and_no_classifier_is_error(self, tmp_path):
        self._write_folder(tmp_path, with_labels=False)
        with pytest.raises(ContractError):
            list(load_folder(tmp_path))
