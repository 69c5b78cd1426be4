import numpy as np
import pytest

from embclust.embeddings import EmbeddingSet, SyntheticSpec, generate_synthetic
from embclust.pipeline import (PipelineConfig, StageCache, apply_overrides,
                               config_hash, format_config, parse_config,
                               preset_config, run_pipeline)


def small_benchmark(seed=3):
    return generate_synthetic(SyntheticSpec(num_clusters=3, points_per_cluster=12,
                                            dim=16, intra_spread=0.08, seed=seed))


def fast_cfg(**overrides):
    cfg = apply_overrides(PipelineConfig(), {
        "k": "10", "seed": "0", "train.epochs": "3",
        "predictor.layers": "1", "predictor.heads": "1", "predictor.dim": "8",
    })
    return apply_overrides(cfg, {k: str(v) for k, v in overrides.items()})


class TestConfigText:
    def test_round_trip(self):
        cfg = fast_cfg()
        text = format_config(cfg)
        assert parse_config(text) == cfg

    def test_dotted_overrides(self):
        cfg = parse_config("k = 25\ntransform.kind = exp\ntrain.lr = 0.5\n")
        assert cfg.k == 25
        assert cfg.transform.kind == "exp"
        assert cfg.train.lr == 0.5

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# a comment\n\nk = 12  # trailing\n")
        assert cfg.k == 12

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            parse_config("nope = 3\n")

    def test_bad_line_rejected(self):
        with pytest.raises(ValueError, match="line 1"):
            parse_config("just some words\n")

    def test_hash_tracks_content(self):
        a = config_hash(fast_cfg())
        b = config_hash(fast_cfg(k=11))
        assert a != b
        assert a == config_hash(fast_cfg())

    def test_presets(self):
        cfg = preset_config("reid")
        assert cfg.k == 40
        assert cfg.eta == 0.88
        with pytest.raises(ValueError, match="unknown preset"):
            preset_config("nope")


class TestRunPipeline:
    def test_single_cluster_everything_together(self):
        emb = generate_synthetic(SyntheticSpec(1, 20, 16, 0.05, seed=1))
        res = run_pipeline(fast_cfg(), emb)
        assert len(set(res.assignment.tolist())) == 1
        assert res.report.pairwise[2] == 1.0

    def test_deterministic_given_seed(self):
        emb = small_benchmark()
        a = run_pipeline(fast_cfg(), emb)
        b = run_pipeline(fast_cfg(), emb)
        assert np.array_equal(a.assignment, b.assignment)
        assert np.array_equal(a.khat, b.khat)
        assert a.report.as_dict() == b.report.as_dict()
        assert a.loss_curve == b.loss_curve

    def test_well_separated_clusters_recovered(self):
        emb = small_benchmark()
        res = run_pipeline(fast_cfg(), emb)
        assert res.report.pairwise[2] > 0.95
        assert res.report.nmi > 0.95

    def test_unsupervised_needs_full_k(self):
        emb = small_benchmark()
        bare = EmbeddingSet(rows=emb.rows)
        with pytest.raises(ValueError, match="labels"):
            run_pipeline(fast_cfg(), bare)
        res = run_pipeline(fast_cfg(use_topk=False), bare)
        assert res.report is None
        assert np.all(res.khat == 10)

    def test_pretrained_model_reused(self):
        emb = small_benchmark()
        first = run_pipeline(fast_cfg(), emb)
        bare = EmbeddingSet(rows=emb.rows)
        res = run_pipeline(fast_cfg(), bare, boundary_model=first.boundary_model)
        assert np.array_equal(res.khat, first.khat)

    def test_threshold_prob_mode(self):
        emb = small_benchmark()
        res = run_pipeline(fast_cfg(threshold_mode="prob", eta=0.5), emb)
        assert res.report.pairwise[2] > 0.9

    def test_pair_mode_trains_scorer(self):
        emb = small_benchmark()
        cfg = fast_cfg(threshold_mode="pair", eta=0.5)
        cfg = apply_overrides(cfg, {"predictor.max_train_pairs": "120"})
        res = run_pipeline(cfg, emb)
        assert res.pair_model is not None
        assert res.report.pairwise[2] > 0.5

    def test_components_method(self):
        emb = small_benchmark()
        res = run_pipeline(fast_cfg(cluster_method="components",
                                    threshold_mode="prob", eta=0.6), emb)
        assert res.report.pairwise[2] > 0.8

    def test_stage_name_attached_to_errors(self):
        emb = small_benchmark()
        bad = fast_cfg(k=50)  # k > n
        with pytest.raises(ValueError, match=r"\[build-graph\]"):
            run_pipeline(bad, emb)

    def test_noise_ratio_runs(self):
        emb = small_benchmark()
        res = run_pipeline(fast_cfg(noise_ratio=0.3), emb)
        assert np.all(res.graph.sims >= 0) and np.all(res.graph.sims <= 1)


class TestStageCache:
    def test_cache_hit_is_bit_exact(self, tmp_path):
        emb = small_benchmark()
        cfg = fast_cfg()
        a = run_pipeline(cfg, emb, cache_dir=tmp_path)
        b = run_pipeline(cfg, emb, cache_dir=tmp_path)
        assert np.array_equal(a.graph.sims, b.graph.sims)
        assert np.array_equal(a.assignment, b.assignment)
        files = list(tmp_path.glob("*.npz"))
        assert files, "expected cached artifacts"

    def test_counts_hits_and_misses(self, tmp_path):
        cache = StageCache(tmp_path)
        calls = []

        def compute():
            calls.append(1)
            return {"x": np.arange(5)}

        first = cache.get_or_compute("k1", compute)
        second = cache.get_or_compute("k1", compute)
        assert len(calls) == 1
        assert cache.hits == 1 and cache.misses == 1
        assert np.array_equal(first["x"], second["x"])

    def test_different_config_different_key(self, tmp_path):
        emb = small_benchmark()
        run_pipeline(fast_cfg(), emb, cache_dir=tmp_path)
        n_before = len(list(tmp_path.glob("*.npz")))
        run_pipeline(fast_cfg(k=11), emb, cache_dir=tmp_path)
        assert len(list(tmp_path.glob("*.npz"))) > n_before
