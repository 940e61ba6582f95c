import numpy as np
import pytest
import torch

from cusp.data import DEFAULT_GROUPS, make_toy_dataset
from cusp.errors import ContractError
from cusp.evaluation import (
    LocalAttributeClient,
    RemoteAttributeClient,
    SweepRow,
    age_mae_corrected,
    default_grid,
    evaluate_model,
    kid,
    monotone_in_sigma_g,
    pooled_features,
    recon_perceptual,
    sweep_sigma,
    write_eval_report,
    write_sweep_csv,
)
from cusp.masking import BlurParams
from cusp.networks import AgeClassifier

from .oracles import kid_scalar, recon_perceptual_scalar


class TestKid:
    def test_all_zero_features_give_zero(self):
        z = torch.zeros(4, 6)
        assert kid(z, z) == pytest.approx(0.0, abs=0)

    def test_symmetry_exact(self):
        torch.manual_seed(0)
        a, b = torch.randn(5, 8), torch.randn(7, 8)
        assert kid(a, b) == kid(b, a)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(1)
        a = torch.tensor(rng.normal(size=(3, 5)))
        b = torch.tensor(rng.normal(size=(3, 5)))
        assert kid(a, b) == pytest.approx(kid_scalar(a.numpy(), b.numpy()), abs=1e-9)

    def test_same_distribution_scores_near_zero(self):
        torch.manual_seed(2)
        a, b = torch.randn(200, 4), torch.randn(200, 4)
        assert abs(kid(a, b)) < 0.05

    def test_permutation_invariance(self):
        torch.manual_seed(3)
        a, b = torch.randn(5, 4), torch.randn(6, 4)
        perm_a, perm_b = a[torch.randperm(5)], b[torch.randperm(6)]
        assert kid(a, b) == pytest.approx(kid(perm_a, perm_b), abs=1e-12)

    def test_separated_sets_score_positive(self):
        torch.manual_seed(4)
        a = torch.randn(8, 4)
        b = torch.randn(8, 4) + 5.0
        assert kid(a, b) > 1.0

    def test_undersized_sets_rejected(self):
        with pytest.raises(ContractError):
            kid(torch.randn(1, 4), torch.randn(5, 4))
        with pytest.raises(ContractError):
            kid(torch.randn(5, 4), torch.randn(5, 3))


class TestAgeMae:
    def _by_group(self):
        return {"20-29": [24.0, 26.0], "50-69": [60.0, 64.0]}

    def test_zero_when_generated_equals_group_mean(self):
        assert age_mae_corrected(self._by_group(), [62.0, 62.0], "50-69") == 0.0

    def test_three_element_oracle(self):
        got = age_mae_corrected(self._by_group(), [61.0, 63.0, 66.0], "50-69")
        # group mean 62: |61-62|, |63-62|, |66-62| -> mean 2.0
        assert got == pytest.approx(2.0, abs=1e-12)

    def test_bias_invariance(self):
        by_group = self._by_group()
        gen = [58.0, 65.0]
        base = age_mae_corrected(by_group, gen, "50-69")
        shifted_groups = {k: [a + 8.23 for a in v] for k, v in by_group.items()}
        shifted_gen = [a + 8.23 for a in gen]
        assert age_mae_corrected(shifted_groups, shifted_gen, "50-69") == pytest.approx(
            base, abs=1e-9
        )

    def test_unknown_or_empty_group(self):
        with pytest.raises(ContractError):
            age_mae_corrected(self._by_group(), [50.0], "30-39")
        with pytest.raises(ContractError):
            age_mae_corrected({"30-39": []}, [50.0], "30-39")
        with pytest.raises(ContractError):
            age_mae_corrected(self._by_group(), [], "50-69")


class TestReconPerceptual:
    def test_zero_at_identity(self, tiny_cfg):
        clf = AgeClassifier(tiny_cfg)
        x = torch.randn(2, 3, 32, 32)
        assert recon_perceptual(x, x, clf) == 0.0

    def test_symmetric(self, tiny_cfg):
        clf = AgeClassifier(tiny_cfg)
        x, y = torch.randn(1, 3, 32, 32), torch.randn(1, 3, 32, 32)
        assert recon_perceptual(x, y, clf) == pytest.approx(
            recon_perceptual(y, x, clf), abs=1e-7
        )

    def test_matches_oracle_recomputation(self, tiny_cfg):
        from cusp.evaluation import _relu_activations

        clf = AgeClassifier(tiny_cfg)
        torch.manual_seed(5)
        x, y = torch.randn(1, 3, 32, 32), torch.randn(1, 3, 32, 32)
        got = recon_perceptual(x, y, clf)
        with torch.no_grad():
            lx = [t.double().numpy() for t in _relu_activations(clf, x)]
            ly = [t.double().numpy() for t in _relu_activations(clf, y)]
        assert got == pytest.approx(recon_perceptual_scalar(lx, ly), abs=1e-6)

    def test_shape_mismatch(self, tiny_cfg):
        clf = AgeClassifier(tiny_cfg)
        with pytest.raises(ContractError):
            recon_perceptual(torch.randn(1, 3, 32, 32), torch.randn(1, 3, 16, 16), clf)


class TestSweep:
    def test_default_grid_size(self):
        grid = default_grid(9.0, steps=3)
        assert len(grid) == 9
        assert grid[0].sigma_m == 0.0 and grid[-1].sigma_g == 9.0

    def test_rows_match_grid(self, tiny_model, tiny_cfg):
        records = make_toy_dataset(8, seed=30, resolution=tiny_cfg.resolution)
        client = LocalAttributeClient(AgeClassifier(tiny_cfg))
        grid = [BlurParams(0, 0), BlurParams(0, 9), BlurParams(9, 9)]
        rows = sweep_sigma(tiny_model, records, grid, client)
        assert len(rows) == 3
        assert [(r.sigma_m, r.sigma_g) for r in rows] == [(0, 0), (0, 9), (9, 9)]

    def test_csv_has_one_row_per_grid_point(self, tmp_path):
        rows = [SweepRow(m, g, 1.0, 2.0) for m in (0, 4.5, 9) for g in (0, 4.5, 9)]
        path = write_sweep_csv(rows, tmp_path / "s.csv")
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "sigma_m,sigma_g,age_mae,recon_perceptual"
        assert len(lines) == 10

    def test_monotone_trend_helper(self):
        rising = [SweepRow(0, g, 0.0, 1.0 + 0.1 * g) for g in (0, 3, 6, 9)]
        assert monotone_in_sigma_g(rising)
        dipping = [SweepRow(0, g, 0.0, v) for g, v in [(0, 1.0), (3, 0.5), (6, 1.2), (9, 1.3)]]
        assert not monotone_in_sigma_g(dipping)
        noise_ok = [SweepRow(0, g, 0.0, v) for g, v in [(0, 1.0), (3, 0.97), (6, 1.2), (9, 1.3)]]
        assert monotone_in_sigma_g(noise_ok, eps=0.05)


class TestEvaluateModel:
    def test_report_structure(self, tiny_model, tiny_cfg, tmp_path):
        records = make_toy_dataset(24, seed=31, resolution=tiny_cfg.resolution)
        client = LocalAttributeClient(AgeClassifier(tiny_cfg))
        report = evaluate_model(tiny_model, records, client)
        assert report.recon_l1 >= 0.0
        assert report.recon_perceptual >= 0.0
        assert all(g.age_mae >= 0 and np.isfinite(g.kid) for g in report.groups)
        seen = {g.group for g in report.groups}
        assert seen <= {g.name for g in DEFAULT_GROUPS}
        paths = write_eval_report(report, tmp_path)
        assert paths["json"].exists() and paths["csv"].exists()
        header = paths["csv"].read_text().splitlines()[0]
        assert header == "group,age_mae,kid,n_real"

    def test_pooled_features_shape(self, tiny_cfg):
        clf = AgeClassifier(tiny_cfg)
        feats = pooled_features(clf, torch.randn(4, 3, 32, 32))
        assert feats.shape == (4, tiny_cfg.classifier_channels[-1])


class TestRemoteClient:
    def test_round_trips_images_over_http(self, monkeypatch):
        import httpx

        calls = []

        def handler(request):
            calls.append(json.loads(request.content.decode()))
            return httpx.Response(200, json={"age": 42.5})

        import json

        transport = httpx.MockTransport(handler)
        real_client = httpx.Client

        def patched(*args, **kwargs):
            kwargs["transport"] = transport
            return real_client(*args, **kwargs)

        monkeypatch.setattr(httpx, "Client", patched)
        client = RemoteAttributeClient("http://svc")
        ages = client.estimate_ages(torch.zeros(2, 3, 16, 16))
        assert ages.tolist() == [42.5, 42.5]
        assert len(calls) == 2
        assert set(calls[0]) == {"image_b64"}
