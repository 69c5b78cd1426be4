from embclust.embeddings import SyntheticSpec, generate_synthetic
from embclust.experiments import (default_ablation_grid, run_ablation,
                                  run_noise_experiment)
from embclust.pipeline import PipelineConfig, apply_overrides


def tiny_benchmark():
    return generate_synthetic(SyntheticSpec(num_clusters=3, points_per_cluster=10,
                                            dim=16, intra_spread=0.1, seed=5))


def tiny_cfg():
    return apply_overrides(PipelineConfig(), {
        "k": "10", "seed": "0", "train.epochs": "2",
        "predictor.layers": "1", "predictor.heads": "1", "predictor.dim": "8",
        "predictor.max_train_pairs": "60",
    })


class TestAblation:
    def test_transform_grid_row_count(self, tmp_path):
        base = tiny_cfg()
        grid = [g for g in default_ablation_grid(base) if g[0] != "sigmoid-d7.5-topk"]
        assert len(grid) == 4
        rows = run_ablation(grid, tiny_benchmark(), out_path=tmp_path / "a.csv")
        assert len(rows) == 4
        text = (tmp_path / "a.csv").read_text().splitlines()
        assert text[0].startswith("name,transform,delta")
        assert len(text) == 5

    def test_default_grid_has_topk_row(self):
        grid = default_ablation_grid(tiny_cfg())
        names = [name for name, _ in grid]
        assert names == ["exp", "sigmoid-d5", "sigmoid-d7.5", "sigmoid-d10",
                         "sigmoid-d7.5-topk"]
        assert [cfg.use_topk for _, cfg in grid] == [False] * 4 + [True]

    def test_threads_preserve_row_order(self, tmp_path):
        grid = default_ablation_grid(tiny_cfg())[:3]
        emb = tiny_benchmark()
        seq = run_ablation(grid, emb)
        par = run_ablation(grid, emb, threads=3)
        assert [r["name"] for r in par] == [r["name"] for r in seq]
        for a, b in zip(seq, par):
            assert a["pairwise_f"] == b["pairwise_f"]


class TestNoiseExperiment:
    def test_row_count_and_order(self, tmp_path):
        cfg = apply_overrides(tiny_cfg(), {"use_topk": "false"})
        rows = run_noise_experiment(cfg, tiny_benchmark(), [0.1, 0.2, 0.4],
                                    out_path=tmp_path / "n.csv")
        assert len(rows) == 6
        assert [(r["ratio"], r["variant"]) for r in rows] == [
            (0.1, "vanilla"), (0.1, "diff"),
            (0.2, "vanilla"), (0.2, "diff"),
            (0.4, "vanilla"), (0.4, "diff"),
        ]
        text = (tmp_path / "n.csv").read_text().splitlines()
        assert text[0] == "ratio,variant,pairwise_f,bcubed_f,nmi"
        assert len(text) == 7

    def test_ratio_zero_matches_clean_pipeline(self):
        from embclust.pipeline import run_pipeline

        cfg = apply_overrides(tiny_cfg(), {"use_topk": "false"})
        emb = tiny_benchmark()
        rows = run_noise_experiment(cfg, emb, [0.0], variants=("diff",))
        clean = run_pipeline(
            apply_overrides(cfg, {"predictor.variant": "diff"}), emb
        )
        assert rows[0]["pairwise_f"] == clean.report.pairwise[2]
