import math
import random
from pathlib import Path

import numpy as np
import pytest

import hydra_forge as hf

ROOT = Path(__file__).resolve().parents[2]


def test_levenshtein_and_projection():
    assert hf.levenshtein("kitten", "sitting") == 3
    assert hf.levenshtein("", "abc") == 3
    assert hf.project_to_vocab("qzab", ["qaab", "zzzz", "qzzz"]) == "qaab"


def test_threshold_matches_numpy():
    rng = random.Random(3)
    for n in (1, 2, 5, 101):
        xs = [rng.uniform(-1, 1) for _ in range(n)]
        assert hf.adaptive_threshold(xs) == pytest.approx(np.percentile(xs, 25), abs=1e-15)
    assert hf.adaptive_threshold([0.0, 1.0, 2.0, 3.0, 4.0]) == 1.0
    with pytest.raises(hf.DegenerateError):
        hf.adaptive_threshold([])


def test_aggregate_and_hex():
    assert hf.aggregate_over_attackers([1.0, 0.0]) == 0.5
    for x in (0.1, -3.5, 1e-300, math.pi):
        assert hf.parse_hex_double(hf.hex_double(x)) == x
    assert hf.sha256_hex("abc").startswith("ba7816bf")


def test_config_echo_and_errors(tmp_path):
    echo = hf.echo_config()
    assert "[model]" in echo and "embed_dim = 32" in echo
    keys = hf.config_keys()
    assert ("model", "embed_dim", "32") in keys
    bad = tmp_path / "bad.cfg"
    bad.write_text("[model]\nbogus = 1\n")
    with pytest.raises(hf.ConfigError):
        hf.echo_config(bad)
    with pytest.raises(hf.HydraError):
        hf.echo_config(bad)


def test_small_chain_round_trip(tmp_path):
    concepts = tmp_path / "concepts.txt"
    concepts.write_text("cat\ndog\ncar\ntree\n")
    cfg = tmp_path / "chain.cfg"
    cfg.write_text(
        "[model]\nembed_dim = 16\nlatent_dim = 8\nhidden_dim = 32\nsteps = 20\n"
        f"[vocab]\ncorpus = {ROOT / 'data' / 'corpus.txt'}\nconcepts = concepts.txt\npool_size = 2\n"
        "[ga]\npopulation = 8\ngenerations = 3\nn_prompts = 4\n"
        "[data]\nsteps_per_epoch = 20\n[train]\nepochs = 1\n[pretrain]\nsteps = 200\n"
        "[eval]\nn_seeds = 2\n[chain]\nmethods = hydra, eviledit\n"
    )
    out = tmp_path / "run"
    metrics = hf.run_chain(cfg, out)
    assert [m["stage"] for m in metrics] == [1, 2]
    assert all(0.0 <= m["asr"] <= 1.0 for m in metrics)

    files = [out / "checkpoints" / f"stage-{s}.json" for s in range(3)]
    hf.verify_lineage(files)
    last = hf.load_checkpoint(files[-1])
    assert last.stage == 2
    assert last.parent == hf.load_checkpoint(files[1]).hash
    assert last.concepts == ["cat", "dog", "car", "tree"]
    pooled = last.pooled("a photo of cat")
    assert pooled.shape == (16,)
    assert np.all(np.isfinite(last.generate("a photo of cat", 3)))
    with pytest.raises(hf.HydraLookupError):
        last.pooled("a photo of unicorn")

    report = hf.evaluate(last, out / "config.ini")
    assert report["asr"] == metrics[-1]["asr"]
    assert report["acc"] == metrics[-1]["acc"]

    resumed = hf.resume_chain(out, 1, tmp_path / "resumed")
    assert resumed == metrics[1:]
    assert (tmp_path / "resumed" / "metrics.jsonl").read_bytes() == (out / "metrics.jsonl").read_bytes()
