import json

import numpy as np
import pytest

from tpcgcn.cli import main
from tpcgcn.data import load_split, save_threads, write_embeddings
from tpcgcn.synth import planted_corpus
from tpcgcn.train import TrainConfig


@pytest.fixture()
def workspace(tmp_path):
    corpus = planted_corpus(
        n_topics=2, posts_per_topic=10, comments_per_post=3, dim=16, seed=0,
        label_carrier="both", label_signal=3.0, noise=0.5,
    )
    threads = tmp_path / "threads.jsonl"
    save_threads(corpus.threads, threads)
    embeddings = tmp_path / "emb.tpce"
    write_embeddings(corpus.table, embeddings, format="binary")
    config = tmp_path / "config.json"
    TrainConfig(
        lr=0.02, epochs=40, seed=0, reduced_dim=16, tpc_hidden1=8, tpc_hidden2=2,
        stage_epochs=(10, 10, 10), dtpc_hidden1=6, dtpc_hidden2=4, attn_dim=4,
    ).to_json(config)
    return tmp_path, corpus, threads, embeddings, config


def run(argv):
    return main([str(a) for a in argv])


class TestSplitCommand:
    def test_intra_exact_ratio(self, tmp_path):
        corpus = planted_corpus(n_topics=1, posts_per_topic=6, comments_per_post=0, dim=4)
        threads = tmp_path / "t.jsonl"
        save_threads(corpus.threads, threads)
        out = tmp_path / "split.json"
        assert run(["split", "--threads", threads, "--mode", "intra",
                    "--ratios", "4:1:1", "--seed", 3, "--out", out]) == 0
        split = load_split(out)
        assert (len(split.train), len(split.val), len(split.test)) == (4, 1, 1)

    def test_inter_whole_topics(self, tmp_path):
        corpus = planted_corpus(n_topics=6, posts_per_topic=4, comments_per_post=0, dim=4)
        threads = tmp_path / "t.jsonl"
        save_threads(corpus.threads, threads)
        out = tmp_path / "split.json"
        assert run(["split", "--threads", threads, "--mode", "inter",
                    "--seed", 1, "--out", out]) == 0
        split = load_split(out)
        topic = lambda pid: pid.split("p")[0]
        assert len({topic(p) for p in split.train}) == 4
        assert len({topic(p) for p in split.val}) == 1
        assert len({topic(p) for p in split.test}) == 1

    def test_rerun_byte_identical(self, tmp_path):
        corpus = planted_corpus(n_topics=2, posts_per_topic=6, comments_per_post=1, dim=4)
        threads = tmp_path / "t.jsonl"
        save_threads(corpus.threads, threads)
        out = tmp_path / "split.json"
        args = ["split", "--threads", threads, "--mode", "intra", "--seed", 7, "--out", out]
        assert run(args) == 0
        first = out.read_bytes()
        assert run(args) == 0
        assert out.read_bytes() == first
        manifest = json.loads((tmp_path / "split.json.manifest.json").read_text())
        assert manifest["command"] == "split"
        assert manifest["tool_version"]
        assert len(manifest["inputs"]) == 1

    def test_bad_ratio_exit_code(self, tmp_path, capsys):
        corpus = planted_corpus(n_topics=1, posts_per_topic=4, comments_per_post=0, dim=4)
        threads = tmp_path / "t.jsonl"
        save_threads(corpus.threads, threads)
        code = run(["split", "--threads", threads, "--mode", "intra",
                    "--ratios", "4:1", "--out", tmp_path / "s.json"])
        assert code == 1
        assert "error" in capsys.readouterr().err


class TestTrainCommand:
    def make_split_file(self, threads, tmp_path, mode="intra"):
        out = tmp_path / "split.json"
        assert run(["split", "--threads", threads, "--mode", mode,
                    "--seed", 0, "--out", out]) == 0
        return out

    def test_train_writes_outputs(self, workspace):
        tmp_path, corpus, threads, embeddings, config = workspace
        split = self.make_split_file(threads, tmp_path)
        out_dir = tmp_path / "run1"
        assert run(["train", "--model", "tpcgcn", "--threads", threads,
                    "--embeddings", embeddings, "--split", split,
                    "--config", config, "--out-dir", out_dir]) == 0
        assert (out_dir / "checkpoint.tpck").exists()
        assert (out_dir / "history.jsonl").exists()
        assert (out_dir / "manifest.json").exists()
        assert (out_dir / "config.json").exists()
        first = json.loads((out_dir / "history.jsonl").read_text().splitlines()[0])
        assert {"stage", "epoch", "L_c", "L_t", "val_metric"} <= set(first)

    def test_rerun_identical_history_and_checkpoint(self, workspace):
        tmp_path, corpus, threads, embeddings, config = workspace
        split = self.make_split_file(threads, tmp_path)
        outs = []
        for name in ("a", "b"):
            out_dir = tmp_path / name
            assert run(["train", "--model", "tpcgcn", "--threads", threads,
                        "--embeddings", embeddings, "--split", split,
                        "--config", config, "--out-dir", out_dir]) == 0
            outs.append(out_dir)
        assert (outs[0] / "history.jsonl").read_bytes() == (outs[1] / "history.jsonl").read_bytes()
        assert (outs[0] / "checkpoint.tpck").read_bytes() == (outs[1] / "checkpoint.tpck").read_bytes()

    def test_fallback_embeddings_warns(self, workspace, capsys):
        tmp_path, corpus, threads, embeddings, config = workspace
        split = self.make_split_file(threads, tmp_path)
        assert run(["train", "--model", "tpcgcn", "--threads", threads,
                    "--split", split, "--config", config,
                    "--out-dir", tmp_path / "fb"]) == 0
        assert "bag-of-words" in capsys.readouterr().err

    def test_dtpcgcn_single_topic_rejected(self, tmp_path, capsys):
        corpus = planted_corpus(n_topics=1, posts_per_topic=8, comments_per_post=1, dim=8)
        threads = tmp_path / "t.jsonl"
        save_threads(corpus.threads, threads)
        split = self.make_split_file(threads, tmp_path)
        config = tmp_path / "c.json"
        TrainConfig(lr=0.01, seed=0, reduced_dim=8, dtpc_hidden1=4, dtpc_hidden2=3,
                    attn_dim=3, stage_epochs=(2, 2, 2)).to_json(config)
        code = run(["train", "--model", "dtpcgcn", "--threads", threads,
                    "--split", split, "--config", config,
                    "--out-dir", tmp_path / "x"])
        assert code == 1
        assert "2 topics" in capsys.readouterr().err

    def test_seed_flag_overrides_config(self, workspace):
        tmp_path, corpus, threads, embeddings, config = workspace
        split = self.make_split_file(threads, tmp_path)
        a, b = tmp_path / "s0", tmp_path / "s9"
        run(["train", "--model", "tpcgcn", "--threads", threads, "--embeddings",
             embeddings, "--split", split, "--config", config, "--out-dir", a])
        run(["train", "--model", "tpcgcn", "--threads", threads, "--embeddings",
             embeddings, "--split", split, "--config", config, "--seed", 9,
             "--out-dir", b])
        assert (a / "checkpoint.tpck").read_bytes() != (b / "checkpoint.tpck").read_bytes()
        assert json.loads((b / "manifest.json").read_text())["seed"] == 9


class TestEvalAblateAttention:
    @pytest.fixture()
    def trained(self, workspace):
        tmp_path, corpus, threads, embeddings, config = workspace
        split = tmp_path / "split.json"
        run(["split", "--threads", threads, "--mode", "intra", "--seed", 0,
             "--out", split])
        out_dir = tmp_path / "run"
        run(["train", "--model", "tpcgcn", "--threads", threads, "--embeddings",
             embeddings, "--split", split, "--config", config, "--out-dir", out_dir])
        return tmp_path, threads, embeddings, config, split, out_dir / "checkpoint.tpck"

    def test_eval_prints_accuracy(self, trained, capsys):
        tmp_path, threads, embeddings, config, split, ckpt = trained
        assert run(["eval", "--checkpoint", ckpt, "--threads", threads,
                    "--embeddings", embeddings, "--split", split,
                    "--fold", "train", "--config", config]) == 0
        out = capsys.readouterr().out
        assert "acc 1.000" in out
        assert "Avg. F1" in out

    def test_eval_writes_metrics_json(self, trained):
        tmp_path, threads, embeddings, config, split, ckpt = trained
        out = tmp_path / "metrics.json"
        assert run(["eval", "--checkpoint", ckpt, "--threads", threads,
                    "--embeddings", embeddings, "--split", split,
                    "--fold", "train", "--config", config, "--out", out]) == 0
        obj = json.loads(out.read_text())
        assert {"avg_p", "avg_r", "avg_f1", "acc", "per_class", "n"} <= set(obj)
        assert obj["acc"] == 1.0

    def test_ablate_full_matches_train_eval(self, trained, capsys):
        tmp_path, threads, embeddings, config, split, ckpt = trained
        out = tmp_path / "ablation.json"
        assert run(["ablate", "--variant", "full", "--threads", threads,
                    "--embeddings", embeddings, "--split", split,
                    "--fold", "train", "--config", config, "--out", out]) == 0
        ablation = json.loads(out.read_text())
        assert ablation["full"]["acc"] == 1.0

    def test_attention_pipeline(self, workspace, capsys):
        tmp_path, corpus4, threads, embeddings, config_path = workspace
        # need >= 2 topics for dtpcgcn; the workspace has exactly 2
        split = tmp_path / "split.json"
        run(["split", "--threads", threads, "--mode", "intra", "--seed", 0,
             "--out", split])
        out_dir = tmp_path / "dtpc"
        assert run(["train", "--model", "dtpcgcn", "--threads", threads,
                    "--embeddings", embeddings, "--split", split,
                    "--config", config_path, "--out-dir", out_dir]) == 0
        attn = tmp_path / "attention.jsonl"
        assert run(["attention", "--checkpoint", out_dir / "checkpoint.tpck",
                    "--threads", threads, "--embeddings", embeddings,
                    "--split", split, "--fold", "test", "--config", config_path,
                    "--out", attn]) == 0
        lines = attn.read_text().strip().split("\n")
        assert lines
        for line in lines:
            obj = json.loads(line)
            assert abs(obj["alpha_u"] + obj["alpha_r"] - 1.0) < 1e-9

    def test_attention_rejects_tpcgcn_checkpoint(self, trained, capsys):
        tmp_path, threads, embeddings, config, split, ckpt = trained
        code = run(["attention", "--checkpoint", ckpt, "--threads", threads,
                    "--embeddings", embeddings, "--split", split,
                    "--out", tmp_path / "a.jsonl"])
        assert code == 1

    def test_missing_file_is_runtime_error(self, trained, capsys):
        tmp_path, threads, embeddings, config, split, ckpt = trained
        code = run(["eval", "--checkpoint", tmp_path / "nope.tpck",
                    "--threads", threads, "--split", split])
        assert code == 2
