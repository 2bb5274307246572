"""Training engine: epochs, rewards, termination, warm-up, resumption."""

from __future__ import annotations

import json
import logging

import numpy as np
import pytest

from claimsift.annotators import BackendConfig, HttpAnnotator, OracleAnnotator
from claimsift.config import RunConfig
from claimsift.corpus import SynthConfig, generate_synthetic
from claimsift.engine import Trainer, load_run_state_payload
from claimsift.errors import (
    AnnotatorError,
    CheckpointError,
    ConfigError,
    DatasetError,
)
from claimsift.policy import PolicyParams
from claimsift.state import HashedEmbedder

# stance-given-veracity rows that put all mass on the modal stance, so a
# perfectly accurate oracle yields a +1 reward on every labeled claim
PEAKED_STANCES = (
    (0.0, 0.0, 0.0, 1.0),  # non-rumors draw comments
    (1.0, 0.0, 0.0, 0.0),  # true rumors draw support
    (0.0, 1.0, 0.0, 0.0),  # false rumors draw denials
    (0.0, 0.0, 1.0, 0.0),  # unverified rumors draw questions
)


def _make_trainer(dataset=None, **config_kw):
    kwargs = dict(embed_dim=16, hidden_dim=8, max_epochs=3, learning_rate=1e-3)
    kwargs.update(config_kw)
    config = RunConfig(**kwargs)
    if dataset is None:
        dataset = generate_synthetic(
            SynthConfig(n_claims=6, posts_per_claim=4, rng_seed=1)
        )
    sd = OracleAnnotator(rng=np.random.default_rng((config.rng_seed, 10)))
    rv = OracleAnnotator(rng=np.random.default_rng((config.rng_seed, 11)))
    return Trainer(config, dataset, sd, rv, HashedEmbedder(config.embed_dim))


def _constant_policy(trainer, logit):
    """Replace the policy with one whose decisions are effectively constant."""
    state_dim = 3 * trainer.config.embed_dim
    hidden = trainer.config.hidden_dim
    trainer.params = PolicyParams(
        w1=np.ones((hidden, state_dim)), w2=np.full(hidden, float(logit))
    )


class FailingBackend:
    smoothing_alpha = 0.1

    def complete(self, task, prompt):
        raise AnnotatorError("backend down")


# -------------------------------------------------------------- epochs

def test_epoch_report_accounting():
    trainer = _make_trainer()
    n_claims = len(trainer._claims)
    report = trainer.run_epoch()
    assert report.epoch == 1
    assert report.claims_processed == n_claims
    assert report.claims_aborted == 0
    assert report.policy_updates == n_claims
    assert report.posts_annotated == n_claims * 4
    assert report.posts_retained + report.posts_discarded == report.posts_annotated
    assert report.annotator_failures == 0
    assert -1.0 <= report.mean_claim_reward <= 1.0
    assert -1.0 <= report.mean_post_reward <= 1.0
    assert report.wall_time_s >= 0.0
    assert trainer.reports == [report]
    assert len(trainer.buffer) == n_claims
    assert len(trainer.annotation_records) == report.posts_annotated
    assert trainer.optimizer.step == n_claims


def test_max_posts_caps_subsampling():
    trainer = _make_trainer(max_posts=2)
    report = trainer.run_epoch()
    assert report.posts_annotated == len(trainer._claims) * 2
    assert all(len(t.post_steps) == 2 for t in trainer.buffer)


def test_run_epoch_limit_pauses_and_resumes():
    trainer = _make_trainer()
    assert trainer.run_epoch(limit=2) is None
    assert trainer._epoch_active
    report = trainer.run_epoch()
    assert report is not None
    assert report.claims_processed == len(trainer._claims)
    assert len(trainer.reports) == 1


def test_train_runs_to_max_epochs():
    trainer = _make_trainer(max_epochs=2)
    reports = trainer.train()
    assert [r.epoch for r in reports] == [1, 2]
    assert not trainer.terminated
    assert trainer._pretrained


def test_trailing_window_selection():
    trainer = _make_trainer()
    trainer.buffer = ["t1", "t2", "t3"]
    assert trainer._window() == ["t1", "t2", "t3"]
    trainer.config.buffer_window = 2
    assert trainer._window() == ["t2", "t3"]


def test_event_stream_schema():
    trainer = _make_trainer()
    events = []
    trainer.set_event_sink(events.append)
    report = trainer.run_epoch()
    assert len(events) == report.posts_annotated + report.claims_processed
    keys = {"ts", "epoch", "claim_id", "level", "action", "reward", "cosine",
            "p_retain"}
    for event in events:
        assert set(event) == keys
        assert event["epoch"] == 1
        assert event["level"] in ("post", "claim")
        assert event["action"] in ("retain", "discard")
        assert event["reward"] in (-1, 0, 1)
        assert 0.0 <= event["p_retain"] <= 1.0
    assert sum(e["level"] == "claim" for e in events) == report.claims_processed


# ----------------------------------------------------- rewards and gating

def test_nonseed_labels_are_masked():
    trainer = _make_trainer(seed_fraction=0.5, rng_seed=2)
    assert 0 < len(trainer.seed_ids) < len(trainer._claims)
    for claim_id, claim in trainer._claims.items():
        if claim_id in trainer.seed_ids:
            assert claim.veracity is not None
            assert trainer.truth[claim_id] == claim.veracity
        else:
            assert claim.veracity is None
            assert claim_id not in trainer.truth


def test_terminal_credit_broadcasts_claim_reward():
    trainer = _make_trainer(seed_fraction=1.0)
    trainer.run_epoch()
    for trajectory in trainer.buffer:
        assert trajectory.reward_branch == "labeled"
        assert len(trajectory.post_cosines) == len(trajectory.post_steps)
        for step, cosine in zip(trajectory.post_steps, trajectory.post_cosines):
            assert step.reward == trajectory.claim_step.reward
            assert cosine == trajectory.claim_cosine


def test_claim_retention_gates_context_and_finetune():
    trainer = _make_trainer(seed_fraction=0.5, rng_seed=11)
    _constant_policy(trainer, -500.0)
    report = trainer.run_epoch()
    assert report.claims_retained == 0
    assert report.posts_retained == 0
    assert trainer.claim_context.count == 0
    assert report.finetune_stance_examples == 0
    assert report.finetune_veracity_examples == 0
    assert trainer.finetune_stance == [] and trainer.finetune_veracity == []
    assert all(not r["retained"] for r in trainer.annotation_records)
    # starved veracity calls fall back to uniform verdicts, which score 0
    assert report.mean_claim_reward == 0.0


def test_full_retention_collects_examples_with_origins():
    trainer = _make_trainer(seed_fraction=0.5, rng_seed=11)
    _constant_policy(trainer, 500.0)
    report = trainer.run_epoch()
    n_claims = report.claims_processed
    assert report.claims_retained == n_claims
    assert report.posts_retained == report.posts_annotated
    assert trainer.claim_context.count == n_claims
    assert report.finetune_veracity_examples == n_claims
    assert report.finetune_stance_examples == report.posts_retained
    origins = [e.label_origin for e in trainer.finetune_veracity]
    assert origins.count("human") == len(trainer.seed_ids)
    assert origins.count("machine") == n_claims - len(trainer.seed_ids)
    assert all(e.label_origin == "machine" for e in trainer.finetune_stance)
    # reference stance statistics only ever see seed-claim posts
    seed_posts = sum(
        len(t.post_steps) for t in trainer.buffer if t.seed
    )
    assert sum(trainer.references.snapshot().values()) == seed_posts


def test_annotation_record_schema():
    trainer = _make_trainer()
    trainer.run_epoch()
    record = trainer.annotation_records[0]
    assert set(record) == {
        "epoch", "claim_id", "post_id", "post_text", "stance", "explanation",
        "retained",
    }
    assert record["epoch"] == 1
    assert record["stance"] in ("S", "D", "Q", "C")


# ------------------------------------------------------------ termination

def test_claim_level_termination_halts_training():
    dataset = generate_synthetic(SynthConfig(
        n_claims=8, posts_per_claim=3, noise_post_fraction=0.0,
        stance_given_veracity=PEAKED_STANCES, rng_seed=7,
    ))
    config = RunConfig(
        embed_dim=16, hidden_dim=4, seed_fraction=1.0, n_termination=3,
        max_epochs=10, rng_seed=5,
        sd_backend=BackendConfig(oracle_accuracy=1.0),
        rv_backend=BackendConfig(oracle_accuracy=1.0),
    )
    trainer = Trainer(
        config, dataset,
        OracleAnnotator(accuracy=1.0, rng=3),
        OracleAnnotator(accuracy=1.0, rng=4),
        HashedEmbedder(16),
    )
    _constant_policy(trainer, 500.0)
    reports = trainer.train()
    assert len(reports) == 1
    assert reports[0].terminated
    assert reports[0].claims_processed == 3  # three straight unit rewards
    assert trainer.terminated
    with pytest.raises(ConfigError, match="already terminated"):
        trainer.run_epoch()


def test_incremental_rewards_terminate_post_loops():
    dataset = generate_synthetic(SynthConfig(
        n_claims=4, posts_per_claim=6, noise_post_fraction=0.0,
        stance_given_veracity=PEAKED_STANCES, rng_seed=2,
    ))
    config = RunConfig(
        embed_dim=16, hidden_dim=4, seed_fraction=1.0,
        incremental_veracity=True, n_termination_posts=2, max_epochs=1,
        rng_seed=3,
        sd_backend=BackendConfig(oracle_accuracy=1.0),
        rv_backend=BackendConfig(oracle_accuracy=1.0),
    )
    trainer = Trainer(
        config, dataset,
        OracleAnnotator(accuracy=1.0, rng=1),
        OracleAnnotator(accuracy=1.0, rng=2),
        HashedEmbedder(16),
    )
    _constant_policy(trainer, 500.0)
    report = trainer.run_epoch()
    assert report.claims_processed == 4
    assert report.post_terminations == 4
    for trajectory in trainer.buffer:
        assert trajectory.post_terminated
        assert len(trajectory.post_steps) == 2  # halted by the run of +1s
        assert all(s.reward == 1 for s in trajectory.post_steps)


# ---------------------------------------------------------- failure paths

def test_veracity_failure_aborts_claims():
    trainer = _make_trainer()
    trainer.rv = FailingBackend()
    n_claims = len(trainer._claims)
    report = trainer.run_epoch()
    assert report.claims_aborted == n_claims
    assert report.claims_processed == 0
    assert report.policy_updates == 0
    assert report.annotator_failures == n_claims
    assert report.mean_claim_reward == 0.0
    assert trainer.buffer == []


def test_stance_failures_are_counted_per_post():
    trainer = _make_trainer()
    trainer.sd = FailingBackend()
    n_claims = len(trainer._claims)
    report = trainer.run_epoch()
    assert report.annotator_failures == n_claims * 4
    assert report.posts_annotated == 0
    # claims still complete: the veracity oracle answers over an empty set
    assert report.claims_processed == n_claims
    assert all(t.post_steps == () for t in trainer.buffer)


def test_embedder_width_must_match_config():
    dataset = generate_synthetic(
        SynthConfig(n_claims=2, posts_per_claim=2, rng_seed=6)
    )
    config = RunConfig(embed_dim=16, hidden_dim=4)
    with pytest.raises(ConfigError, match="does not match configured"):
        Trainer(
            config, dataset, OracleAnnotator(rng=0), OracleAnnotator(rng=0),
            HashedEmbedder(8),
        )


# -------------------------------------------------------------- warm-up

def test_pretrain_oracle_backends_log_skips(caplog):
    trainer = _make_trainer()
    with caplog.at_level(logging.INFO, logger="claimsift.engine"):
        trainer.pretrain()
        trainer.pretrain()  # second call is a no-op
    messages = [r.message for r in caplog.records]
    assert sum("stance warm-up skipped" in m for m in messages) == 1
    assert sum("veracity warm-up skipped" in m for m in messages) == 1
    assert trainer._pretrained


def _http_sd_trainer(server, pretrain_path=None):
    dataset = generate_synthetic(
        SynthConfig(n_claims=2, posts_per_claim=2, rng_seed=8)
    )
    sd_cfg = BackendConfig(kind="http", endpoint=server.url, timeout=2.0)
    config = RunConfig(
        embed_dim=8, hidden_dim=2, sd_backend=sd_cfg,
        sd_pretrain_path=pretrain_path,
    )
    return Trainer(
        config, dataset, HttpAnnotator(sd_cfg), OracleAnnotator(rng=1),
        HashedEmbedder(8),
    )


def test_pretrain_sends_stance_warmup_over_http(tmp_path, scripted_server):
    rows = [
        {"prompt": "warming a", "target": "Stance: Support, Reason: a"},
        {"prompt": "warming b", "target": "Stance: Deny, Reason: b"},
    ]
    path = tmp_path / "warm.jsonl"
    path.write_text(
        "\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8"
    )
    scripted_server.script("/finetune", payload={"job": "warm-1"})
    trainer = _http_sd_trainer(scripted_server, str(path))
    trainer.pretrain()
    assert trainer._pretrained
    route, body = scripted_server.requests[0]
    assert route == "/finetune"
    assert body["task"] == "stance"
    assert body["origin"] == "pretrain"
    assert body["examples"] == rows


def test_pretrain_requires_stance_warmup_path(scripted_server):
    trainer = _http_sd_trainer(scripted_server, None)
    with pytest.raises(ConfigError, match="sd_pretrain_path: required"):
        trainer.pretrain()


def test_pretrain_warmup_file_errors(tmp_path, scripted_server):
    trainer = _http_sd_trainer(scripted_server, str(tmp_path / "missing.jsonl"))
    with pytest.raises(ConfigError, match="file not found"):
        trainer.pretrain()

    partial = tmp_path / "partial.jsonl"
    partial.write_text('{"prompt": "x"}\n', encoding="utf-8")
    trainer = _http_sd_trainer(scripted_server, str(partial))
    with pytest.raises(DatasetError, match="needs 'prompt' and 'target'") as err:
        trainer.pretrain()
    assert err.value.line == 1

    malformed = tmp_path / "malformed.jsonl"
    malformed.write_text('{"prompt": "a", "target": "b"}\n{oops\n', encoding="utf-8")
    trainer = _http_sd_trainer(scripted_server, str(malformed))
    with pytest.raises(DatasetError, match="malformed JSON") as err:
        trainer.pretrain()
    assert err.value.line == 2


def test_pretrain_sends_seed_claims_for_veracity_warmup(scripted_server):
    dataset = generate_synthetic(
        SynthConfig(n_claims=3, posts_per_claim=2, rng_seed=9)
    )
    rv_cfg = BackendConfig(kind="http", endpoint=scripted_server.url, timeout=2.0)
    config = RunConfig(
        embed_dim=8, hidden_dim=2, seed_fraction=1.0, rv_backend=rv_cfg
    )
    trainer = Trainer(
        config, dataset, OracleAnnotator(rng=1), HttpAnnotator(rv_cfg),
        HashedEmbedder(8),
    )
    scripted_server.script("/finetune", payload={"job": "warm-2"})
    trainer.pretrain()
    _, body = scripted_server.requests[0]
    assert body["task"] == "veracity"
    assert body["origin"] == "pretrain"
    assert len(body["examples"]) == 3
    for example in body["examples"]:
        assert example["target"].startswith("Veracity: ")
        assert example["target"].endswith("seed annotation.")
        assert "(Stance:" not in example["prompt"]


def test_pretrain_requires_seeds_for_http_veracity(scripted_server):
    dataset = generate_synthetic(
        SynthConfig(n_claims=3, posts_per_claim=2, rng_seed=9)
    )
    rv_cfg = BackendConfig(kind="http", endpoint=scripted_server.url, timeout=2.0)
    config = RunConfig(
        embed_dim=8, hidden_dim=2, seed_fraction=0.0, rv_backend=rv_cfg
    )
    trainer = Trainer(
        config, dataset, OracleAnnotator(rng=1), HttpAnnotator(rv_cfg),
        HashedEmbedder(8),
    )
    with pytest.raises(ConfigError, match="no seed claims available"):
        trainer.pretrain()


# ------------------------------------------------------------ persistence

def _fresh_trainer(config, dataset):
    sd = OracleAnnotator(rng=np.random.default_rng((config.rng_seed, 10)))
    rv = OracleAnnotator(rng=np.random.default_rng((config.rng_seed, 11)))
    return Trainer(config, dataset, sd, rv, HashedEmbedder(config.embed_dim))


def test_mid_epoch_resume_is_deterministic(tmp_path):
    dataset = generate_synthetic(
        SynthConfig(n_claims=6, posts_per_claim=4, rng_seed=4)
    )
    config = RunConfig(
        embed_dim=16, hidden_dim=8, max_epochs=2, learning_rate=1e-3,
        use_baseline=True, incremental_veracity=True, buffer_window=2,
        rng_seed=9,
    )
    first = _fresh_trainer(config, dataset)
    first.run_epoch()
    assert first.run_epoch(limit=3) is None  # pause inside epoch 2
    state_path = tmp_path / "run.state"
    first.save_run_state(state_path)
    report_first = first.run_epoch()

    resumed = Trainer.from_run_state(
        state_path, dataset, OracleAnnotator(rng=0), OracleAnnotator(rng=0),
        HashedEmbedder(16),
    )
    report_resumed = resumed.run_epoch()

    da, db = report_first.to_dict(), report_resumed.to_dict()
    da.pop("wall_time_s")
    db.pop("wall_time_s")
    assert da == db
    np.testing.assert_array_equal(first.params.w1, resumed.params.w1)
    np.testing.assert_array_equal(first.params.w2, resumed.params.w2)
    assert first.annotation_records == resumed.annotation_records
    assert len(first.buffer) == len(resumed.buffer)
    assert first.optimizer.step == resumed.optimizer.step


def test_resume_rejects_different_dataset(tmp_path):
    dataset = generate_synthetic(
        SynthConfig(n_claims=4, posts_per_claim=3, rng_seed=5)
    )
    trainer = _fresh_trainer(RunConfig(embed_dim=8, hidden_dim=4), dataset)
    trainer.run_epoch(limit=1)
    path = tmp_path / "partial.state"
    trainer.save_run_state(path)
    other = generate_synthetic(
        SynthConfig(n_claims=5, posts_per_claim=3, rng_seed=5)
    )
    with pytest.raises(CheckpointError, match="different dataset"):
        Trainer.from_run_state(
            path, other, OracleAnnotator(rng=0), OracleAnnotator(rng=0),
            HashedEmbedder(8),
        )


def test_run_state_error_classes(tmp_path):
    dataset = generate_synthetic(
        SynthConfig(n_claims=2, posts_per_claim=2, rng_seed=5)
    )
    trainer = _fresh_trainer(RunConfig(embed_dim=8, hidden_dim=4), dataset)
    good = tmp_path / "good.state"
    trainer.save_run_state(good)
    load_run_state_payload(good)  # sanity: the pristine file verifies
    blob = good.read_bytes()

    short = tmp_path / "short.state"
    short.write_bytes(blob[:10])
    with pytest.raises(CheckpointError, match="truncated run-state file"):
        load_run_state_payload(short)

    clipped = tmp_path / "clipped.state"
    clipped.write_bytes(blob[:-2])
    with pytest.raises(CheckpointError, match="truncated run-state file"):
        load_run_state_payload(clipped)

    magic = tmp_path / "magic.state"
    magic.write_bytes(b"NOTMAGIC" + blob[8:])
    with pytest.raises(CheckpointError, match="not a run-state file"):
        load_run_state_payload(magic)

    version = tmp_path / "version.state"
    mutated = bytearray(blob)
    mutated[8] = 9
    version.write_bytes(bytes(mutated))
    with pytest.raises(CheckpointError, match="unsupported run-state version 9"):
        load_run_state_payload(version)

    corrupt = tmp_path / "corrupt.state"
    mutated = bytearray(blob)
    mutated[25] ^= 0xFF
    corrupt.write_bytes(bytes(mutated))
    with pytest.raises(CheckpointError, match="run-state checksum mismatch"):
        load_run_state_payload(corrupt)
