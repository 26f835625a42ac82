import json

import numpy as np
import pytest

from cimage.cli import main
from cimage.config import TrainConfig, sbm_benchmark_config
from cimage.graph import generate_sbm, save_graph
from cimage.pipeline import RunArtifacts, evaluate_node_artifacts, load_embeddings, save_embeddings, train

SMALL = dict(num_factors=4, factor_dim=2, encoder_hidden=8, factor_recon_hidden=4, structure_hidden=4,
             epochs=50, warmup_epochs=20, num_clusters=2, labeled_cap=8, min_labeled=4,
             cluster_threshold=0.5, lr=0.01, seed=3)


@pytest.fixture(scope="module")
def clique_run():
    g = generate_sbm(8, 2, 1.0, 0.0, 4, 0.1, 7)
    return g, train(TrainConfig(**SMALL), g, dataset="cliques")


class TestConfig:
    def test_defaults_follow_cora_setting(self):
        c = TrainConfig()
        assert (c.num_factors, c.factor_dim, c.mask_rate, c.lambda1, c.lambda2) == (16, 32, 0.7, 0.86, 0.4)
        assert (c.encoder_hidden, c.structure_hidden, c.factor_recon_hidden) == (512, 32, 256)
        assert c.cluster_threshold == 0.99

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            TrainConfig.from_dict({"num_factors": 4, "gamma": 1})

    @pytest.mark.parametrize("bad", [dict(num_factors=1), dict(mask_rate=1.0), dict(lambda1=-1.0),
                                     dict(warmup_epochs=300), dict(softmax_axis="rows"), dict(pi=0.3),
                                     dict(structure_positives="none"), dict(epochs=0)])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_json_round_trip_and_hash(self, tmp_path):
        c = sbm_benchmark_config()
        c.to_json(tmp_path / "c.json")
        back = TrainConfig.from_json(tmp_path / "c.json")
        assert back == c
        assert back.config_hash() == c.config_hash()
        assert c.replace(seed=1).config_hash() != c.config_hash()


class TestTrain:
    def test_loss_decreases_and_shapes(self, clique_run):
        g, art = clique_run
        per_epoch = art.metrics["per_epoch"]
        assert len(per_epoch) == 50
        assert per_epoch[-1]["total"] < per_epoch[0]["total"]
        assert art.embeddings.shape == (8, 8)
        assert sorted(art.partition.f1 + art.partition.f2) == [0, 1, 2, 3]
        assert per_epoch[19]["phase"] == "warmup" and per_epoch[20]["phase"] == "joint"
        assert all(row["ch"] == 0.0 for row in per_epoch[:20])

    def test_metrics_schema(self, clique_run):
        _, art = clique_run
        assert list(art.metrics) == ["task", "dataset", "seed", "config_hash", "values", "per_epoch"]
        assert art.metrics["dataset"] == "cliques"
        assert art.metrics["values"]["pseudo_label_accuracy"] == 1.0

    def test_deterministic(self, clique_run):
        g, art = clique_run
        again = train(TrainConfig(**SMALL), g, dataset="cliques")
        assert json.dumps(again.metrics) == json.dumps(art.metrics)
        assert np.array_equal(again.embeddings, art.embeddings)

    def test_graph_not_mutated(self):
        g = generate_sbm(8, 2, 1.0, 0.0, 4, 0.1, 7)
        before = g.fingerprint()
        train(TrainConfig(**{**SMALL, "epochs": 22}), g)
        assert g.fingerprint() == before

    def test_natural_latent_restores_factor_order(self, clique_run):
        _, art = clique_run
        z = art.natural_latent()
        assert np.allclose(np.linalg.norm(z, axis=2), 1.0)
        f1 = z[:, art.partition.f1].reshape(8, -1)
        assert np.array_equal(f1, art.embeddings[:, : art.f1_width])

    def test_link_holdout_and_recompute(self):
        g = generate_sbm(40, 2, 0.5, 0.05, 4, 0.2, 1)
        cfg = TrainConfig(**{**SMALL, "link_holdout": 0.2, "partition_every": 10, "labeled_cap": 40,
                             "min_labeled": 8, "epochs": 45})
        art = train(cfg, g)
        values = art.metrics["values"]
        assert 0.0 <= values["link_auc"] <= 1.0 and 0.0 <= values["link_ap"] <= 1.0
        assert len(art.link_split["test_pos"]) == len(art.link_split["test_neg"])
        assert art.solver["epoch"] == 41


class TestArtifacts:
    def test_embeddings_file(self, tmp_path):
        x = np.random.default_rng(0).normal(size=(3, 5))
        save_embeddings(tmp_path / "e.bin", x)
        blob = (tmp_path / "e.bin").read_bytes()
        assert blob[:4] == b"CIMG" and len(blob) == 4 + 4 + 16 + 15 * 8
        assert np.array_equal(load_embeddings(tmp_path / "e.bin"), x)

    def test_save_load(self, clique_run, tmp_path):
        _, art = clique_run
        art.save(tmp_path / "run")
        back = RunArtifacts.load(tmp_path / "run")
        assert np.array_equal(back.embeddings, art.embeddings)
        assert back.partition.f1 == art.partition.f1
        assert back.metrics == json.loads(json.dumps(art.metrics))
        assert back.params.names() == art.params.names()

    def test_node_evaluation(self, clique_run):
        g, art = clique_run
        rng = np.random.default_rng(0)
        labels = np.repeat([0, 1], [52, 48])
        # reuse the trained artifacts on a larger labeled sample
        art2 = RunArtifacts(art.config, art.params, np.repeat(art.embeddings, [13] * 4 + [12] * 4, axis=0)
                            + 0.01 * rng.normal(size=(100, 8)), art.partition, art.pseudo_labels, art.metrics,
                            art.solver)
        values = evaluate_node_artifacts(art2, labels)["values"]
        assert values["probe_accuracy"] == 1.0
        assert set(values) >= {"acc_f1", "acc_f2", "acc_both", "redundancy_gap", "separability_recon"}


class TestCli:
    def test_end_to_end(self, tmp_path, capsys):
        manifest = tmp_path / "g.json"
        assert main(["gen-sbm", "--nodes", "40", "--communities", "2", "--p-in", "0.5", "--p-out", "0.05",
                     "--seed", "2", "--feat-dim", "4", "--out", str(manifest)]) == 0
        cfg = tmp_path / "c.json"
        TrainConfig(**{**SMALL, "labeled_cap": 40, "min_labeled": 8, "link_holdout": 0.2}).to_json(cfg)
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--graph", str(manifest), "--out", str(out)]) == 0
        for name in RunArtifacts.FILES.values():
            assert (out / name).exists()
        capsys.readouterr()
        assert main(["ci-score", "--artifacts", str(out)]) == 0
        scores = json.loads(capsys.readouterr().out)
        assert set(scores) == {"scores", "f1", "f2", "beta_used", "converged", "iterations"}
        assert main(["ci-score", "--artifacts", str(out), "--recompute"]) == 0
        capsys.readouterr()
        assert main(["eval", "link", "--artifacts", str(out), "--graph", str(manifest)]) == 0
        link = json.loads(capsys.readouterr().out)
        stored = json.loads((out / "metrics.json").read_text())["values"]
        assert link["auc"] == stored["link_auc"]
        assert main(["eval", "node", "--artifacts", str(out), "--graph", str(manifest)]) == 0
        assert (out / "eval_node.json").exists()

    def test_bad_config_reports_error(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"nonsense": 1}))
        g = generate_sbm(8, 2, 1.0, 0.0, 2, 0.1, 0)
        save_graph(g, tmp_path / "g.json")
        rc = main(["train", "--config", str(tmp_path / "c.json"), "--graph", str(tmp_path / "g.json"),
                   "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "unknown config keys" in capsys.readouterr().err
