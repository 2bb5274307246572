"""Two-level reinforcement annotation engine.

Each epoch walks the corpus claim by claim: a claim is epsilon-greedily
drawn (favoring human-labeled seeds), its thread is epsilon-greedily
sub-sampled post by post (favoring chronological order), every annotated
instance gets a retain/discard decision from the selector policy, the claim
is veracity-annotated over the retained posts, hybrid rewards are assigned,
and one policy ascent step runs over a trailing trajectory window. Training
halts early once claim-level rewards stay at +1 for a configured run length.

The full mutable state of a run (policy, optimizer, reward references,
contexts, rng streams, trajectory buffer, mid-epoch progress) serializes to
a single checksummed file, so a killed run resumes bit-for-bit.
"""

from __future__ import annotations

import json
import logging
import pickle
import struct
import time
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .annotators import (
    FineTuneExample,
    StanceAnnotation,
    TASK_STANCE,
    TASK_VERACITY,
    VeracityAnnotation,
    annotate_claim,
    annotate_post,
    fine_tune,
    format_stance_target,
    format_veracity_target,
)
from .config import RunConfig
from .corpus import Claim, Dataset, mask_nonseed_labels, split_seeds
from .errors import AnnotatorError, CheckpointError, ConfigError, DatasetError, ParseError
from .policy import (
    LEVEL_CLAIM,
    LEVEL_POST,
    MovingBaseline,
    OptimizerState,
    RewardBaseline,
    PolicyParams,
    RETAIN,
    Step,
    init_params,
    reinforce_update,
    sample_action,
)
from .prompts import build_stance_prompt, build_veracity_prompt, \
    build_veracity_pretrain_prompt
from .reward import (
    ReferenceStanceStats,
    labeled_claim_reward,
    unlabeled_claim_reward,
)
from .selection import ClaimSampler, PostSampler, TerminationTracker
from .state import ContextAccumulator, build_state, pack_claim_text, pack_post_text

logger = logging.getLogger(__name__)

_RUN_MAGIC = b"CSFTRUN\x01"
_RUN_VERSION = 1


@dataclass
class Trajectory:
    """Everything one claim contributed to learning."""

    claim_id: str
    seed: bool
    claim_step: Step
    post_steps: tuple[Step, ...]
    retained_posts: tuple[tuple[str, StanceAnnotation], ...]
    veracity: VeracityAnnotation
    reward_branch: str
    claim_cosine: float
    post_cosines: tuple[float, ...]
    post_terminated: bool = False


@dataclass
class EpochReport:
    epoch: int
    claims_processed: int
    claims_aborted: int
    claims_retained: int
    posts_annotated: int
    posts_retained: int
    posts_discarded: int
    mean_claim_reward: float
    mean_post_reward: float
    policy_updates: int
    annotator_failures: int
    finetune_stance_examples: int
    finetune_veracity_examples: int
    post_terminations: int
    terminated: bool
    wall_time_s: float

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


def _dataset_fingerprint(dataset: Dataset) -> tuple[int, int, int]:
    ids = ",".join(sorted(c.claim_id for c in dataset.claims))
    return (
        len(dataset.claims),
        dataset.n_posts(),
        zlib.crc32(ids.encode("utf-8")) & 0xFFFFFFFF,
    )


def _load_prompt_target_jsonl(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"sd_pretrain_path: file not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"malformed JSON ({exc.msg})", line=line_no)
            if not isinstance(record, dict) or "prompt" not in record \
                    or "target" not in record:
                raise DatasetError(
                    "warm-up record needs 'prompt' and 'target'", line=line_no
                )
            records.append(
                {"prompt": str(record["prompt"]), "target": str(record["target"])}
            )
    return records


def load_run_state_payload(path: str | Path) -> dict:
    """Read and verify a run-state file, returning its raw payload dict."""
    blob = Path(path).read_bytes()
    if len(blob) < 24:
        raise CheckpointError("truncated run-state file")
    if blob[:8] != _RUN_MAGIC:
        raise CheckpointError("not a run-state file (bad magic)")
    version, body_len = struct.unpack_from("<IQ", blob, 8)
    if version != _RUN_VERSION:
        raise CheckpointError(f"unsupported run-state version {version}")
    if len(blob) != 20 + body_len + 4:
        raise CheckpointError("truncated run-state file")
    (stored_crc,) = struct.unpack_from("<I", blob, 20 + body_len)
    if (zlib.crc32(blob[: 20 + body_len]) & 0xFFFFFFFF) != stored_crc:
        raise CheckpointError("run-state checksum mismatch")
    return pickle.loads(blob[20: 20 + body_len])


class Trainer:
    """Drives selection, annotation, rewards, and policy updates over a corpus."""

    def __init__(
        self,
        config: RunConfig,
        dataset: Dataset,
        sd_backend,
        rv_backend,
        embedder,
        seeds: frozenset[str] | None = None,
    ):
        config.validate()
        if getattr(embedder, "d", None) != config.embed_dim:
            raise ConfigError(
                f"embed_dim: embedder width {getattr(embedder, 'd', None)} "
                f"does not match configured {config.embed_dim}"
            )
        self.config = config
        self.sd = sd_backend
        self.rv = rv_backend
        self.embedder = embedder
        self._fingerprint = _dataset_fingerprint(dataset)
        if seeds is None:
            seeds, _pool = split_seeds(
                dataset,
                config.seed_fraction,
                np.random.default_rng((config.rng_seed, 0)),
            )
        self.seed_ids = frozenset(seeds)
        self.truth = {
            c.claim_id: c.veracity
            for c in dataset.claims
            if c.claim_id in self.seed_ids and c.veracity is not None
        }
        masked = mask_nonseed_labels(dataset, self.seed_ids)
        self._claims = {c.claim_id: c for c in masked.claims}
        self._claim_vecs: dict[str, np.ndarray] = {}

        self.params = init_params(
            3 * config.embed_dim,
            config.hidden_dim,
            np.random.default_rng((config.rng_seed, 2)),
        )
        self.optimizer = OptimizerState(
            learning_rate=config.learning_rate,
            warmup_fraction=config.warmup_fraction,
            batch_size=config.batch_size,
            max_epochs=config.max_epochs,
            planned_updates=config.max_epochs * max(1, len(self._claims)),
        )
        self.baseline = (
            RewardBaseline(
                claim=MovingBaseline(momentum=config.baseline_momentum),
                post=MovingBaseline(momentum=config.baseline_momentum),
            )
            if config.use_baseline else None
        )
        self.references = ReferenceStanceStats()
        self.claim_context = ContextAccumulator(config.embed_dim)
        self.claim_tracker = TerminationTracker(config.n_termination)
        self._action_rng = np.random.default_rng((config.rng_seed, 1))
        self._sampler_rng = np.random.default_rng((config.rng_seed, 3))

        self.buffer: list[Trajectory] = []
        self.reports: list[EpochReport] = []
        self.annotation_records: list[dict] = []
        self.finetune_stance: list[FineTuneExample] = []
        self.finetune_veracity: list[FineTuneExample] = []
        self._epoch_ft_stance: list[FineTuneExample] = []
        self._epoch_ft_veracity: list[FineTuneExample] = []
        self.epoch_index = 0
        self.terminated = False
        self._pretrained = False
        self._epoch_active = False
        self._epoch_sampler: ClaimSampler | None = None
        self._acc: dict | None = None
        self._event_sink: Callable[[dict], None] | None = None

    # ------------------------------------------------------------------ setup

    def set_event_sink(self, sink: Callable[[dict], None] | None) -> None:
        """Receive one dict per decision, suitable for JSONL run logs."""
        self._event_sink = sink

    def _emit(self, **fields) -> None:
        if self._event_sink is not None:
            event = {"ts": time.time(), "epoch": self.epoch_index}
            event.update(fields)
            self._event_sink(event)

    def _claim_embedding(self, claim: Claim) -> np.ndarray:
        vec = self._claim_vecs.get(claim.claim_id)
        if vec is None:
            vec = self.embedder.embed(claim.text)
            self._claim_vecs[claim.claim_id] = vec
        return vec

    def pretrain(self) -> None:
        """One-time warm-up requests before the first epoch.

        HTTP stance backends receive the configured prompt/target corpus;
        HTTP veracity backends receive the seed claims with their trusted
        labels over raw threads. Oracle backends skip with a logged notice.
        """
        if self._pretrained:
            return
        if self.config.sd_backend.kind == "http":
            if not self.config.sd_pretrain_path:
                raise ConfigError(
                    "sd_pretrain_path: required for stance warm-up with an "
                    "http backend"
                )
            records = _load_prompt_target_jsonl(self.config.sd_pretrain_path)
            self.sd.finetune(TASK_STANCE, records, origin="pretrain")
        else:
            logger.info("stance warm-up skipped: oracle backend")
        if self.config.rv_backend.kind == "http":
            examples = []
            for claim_id in sorted(self.seed_ids):
                claim = self._claims[claim_id]
                truth = self.truth.get(claim_id)
                if truth is None:
                    continue
                examples.append(
                    {
                        "prompt": build_veracity_pretrain_prompt(claim),
                        "target": format_veracity_target(truth, "seed annotation."),
                    }
                )
            if not examples:
                raise ConfigError(
                    "seed_fraction: no seed claims available for veracity warm-up "
                    "with an http backend"
                )
            self.rv.finetune(TASK_VERACITY, examples, origin="pretrain")
        else:
            logger.info("veracity warm-up skipped: oracle backend")
        self._pretrained = True

    # ------------------------------------------------------------- claim step

    def _process_claim(self, claim: Claim) -> tuple[Trajectory | None, int]:
        config = self.config
        failures = 0
        truth = self.truth.get(claim.claim_id)
        is_seed = claim.claim_id in self.seed_ids
        claim_vec = self._claim_embedding(claim)
        post_context = ContextAccumulator(config.embed_dim)
        sampler = PostSampler(len(claim.posts), config.epsilon, self._sampler_rng)
        post_tracker = TerminationTracker(config.n_termination_posts)
        cap = min(len(claim.posts), config.max_posts)

        annotated: list[tuple] = []  # (post, annotation, step)
        retained_pairs: list[tuple] = []  # (post, annotation)
        post_cosines: list[float] = []
        post_terminated = False

        while len(annotated) < cap and sampler.remaining > 0:
            index = sampler.sample()
            post = claim.posts[index]
            try:
                annotation = annotate_post(self.sd, claim, post)
            except (ParseError, AnnotatorError) as exc:
                failures += 1
                logger.warning("skipping post %s: %s", post.post_id, exc)
                continue
            state = build_state(
                claim_vec,
                post_context.mean(),
                self.embedder.embed(annotation.explanation),
            )
            step = sample_action(self.params, state, self._action_rng, LEVEL_POST)
            if step.action == RETAIN:
                retained_pairs.append((post, annotation))
                post_context.add(
                    self.embedder.embed(
                        pack_post_text(post.text, annotation.label,
                                       annotation.explanation)
                    )
                )
                if is_seed and truth is not None:
                    self.references.update(truth, annotation.distribution)
            annotated.append((post, annotation, step))

            if config.incremental_veracity:
                outcome = self._incremental_outcome(claim, retained_pairs, truth)
                if outcome is None:
                    failures += 1
                    step.reward = 0
                    post_cosines.append(0.0)
                else:
                    step.reward = outcome.value
                    post_cosines.append(outcome.cosine)
                if post_tracker.observe(step.reward):
                    post_terminated = True
                    break

        try:
            verdict = annotate_claim(self.rv, claim, retained_pairs)
        except (ParseError, AnnotatorError) as exc:
            failures += 1
            logger.warning(
                "aborting claim %s: veracity annotation failed: %s",
                claim.claim_id, exc,
            )
            return None, failures

        claim_state = build_state(
            claim_vec,
            self.claim_context.mean(),
            self.embedder.embed(verdict.explanation),
        )
        claim_step = sample_action(
            self.params, claim_state, self._action_rng, LEVEL_CLAIM
        )

        if truth is not None:
            outcome = labeled_claim_reward(
                verdict.distribution, truth, config.centered_rewards
            )
            claim_step.reward = outcome.value
            if not config.incremental_veracity:
                # terminal credit: each sub-step inherits the claim's reward
                for _post, _annotation, step in annotated:
                    step.reward = outcome.value
                post_cosines = [outcome.cosine] * len(annotated)
        else:
            if not config.incremental_veracity:
                running: list[np.ndarray] = []
                post_cosines = []
                for _post, annotation, step in annotated:
                    if step.action == RETAIN:
                        running.append(annotation.distribution)
                    sub = unlabeled_claim_reward(
                        list(running), verdict.label, self.references,
                        config.centered_rewards,
                    )
                    step.reward = sub.value
                    post_cosines.append(sub.cosine)
            outcome = unlabeled_claim_reward(
                [annotation.distribution for _p, annotation in retained_pairs],
                verdict.label,
                self.references,
                config.centered_rewards,
            )
            claim_step.reward = outcome.value

        if not config.incremental_veracity:
            for _post, _annotation, step in annotated:
                if post_tracker.observe(step.reward):
                    post_terminated = True
                    break

        if claim_step.action == RETAIN:
            self.claim_context.add(
                self.embedder.embed(
                    pack_claim_text(claim.text, verdict.label, verdict.explanation)
                )
            )
            for post, annotation in retained_pairs:
                self._epoch_ft_stance.append(
                    FineTuneExample(
                        task=TASK_STANCE,
                        prompt=build_stance_prompt(claim, post),
                        target=format_stance_target(
                            annotation.label, annotation.explanation
                        ),
                        label_origin="machine",
                    )
                )
            if is_seed and truth is not None:
                target = format_veracity_target(truth, verdict.explanation)
                origin = "human"
            else:
                target = format_veracity_target(verdict.label, verdict.explanation)
                origin = "machine"
            self._epoch_ft_veracity.append(
                FineTuneExample(
                    task=TASK_VERACITY,
                    prompt=build_veracity_prompt(
                        claim, [(p, a.label) for p, a in retained_pairs]
                    ),
                    target=target,
                    label_origin=origin,
                )
            )

        retained_ids = {post.post_id for post, _annotation in retained_pairs}
        for post, annotation, _step in annotated:
            self.annotation_records.append(
                {
                    "epoch": self.epoch_index,
                    "claim_id": claim.claim_id,
                    "post_id": post.post_id,
                    "post_text": post.text,
                    "stance": annotation.label,
                    "explanation": annotation.explanation,
                    "retained": post.post_id in retained_ids,
                }
            )

        trajectory = Trajectory(
            claim_id=claim.claim_id,
            seed=is_seed,
            claim_step=claim_step,
            post_steps=tuple(step for _p, _a, step in annotated),
            retained_posts=tuple(
                (post.post_id, annotation) for post, annotation in retained_pairs
            ),
            veracity=verdict,
            reward_branch=outcome.branch,
            claim_cosine=outcome.cosine,
            post_cosines=tuple(post_cosines),
            post_terminated=post_terminated,
        )
        return trajectory, failures

    def _incremental_outcome(self, claim, retained_pairs, truth):
        try:
            verdict = annotate_claim(self.rv, claim, retained_pairs)
        except (ParseError, AnnotatorError) as exc:
            logger.warning(
                "incremental veracity call failed on %s: %s", claim.claim_id, exc
            )
            return None
        if truth is not None:
            return labeled_claim_reward(
                verdict.distribution, truth, self.config.centered_rewards
            )
        return unlabeled_claim_reward(
            [annotation.distribution for _p, annotation in retained_pairs],
            verdict.label,
            self.references,
            self.config.centered_rewards,
        )

    # ------------------------------------------------------------------ epoch

    def _begin_epoch(self) -> None:
        self.epoch_index += 1
        seed_list = sorted(cid for cid in self._claims if cid in self.seed_ids)
        pool_list = sorted(cid for cid in self._claims if cid not in self.seed_ids)
        self._epoch_sampler = ClaimSampler(
            seed_list, pool_list, self.config.epsilon, self._sampler_rng
        )
        self._acc = {
            "claims_processed": 0,
            "claims_aborted": 0,
            "claims_retained": 0,
            "posts_annotated": 0,
            "posts_retained": 0,
            "claim_reward_sum": 0,
            "post_reward_sum": 0,
            "policy_updates": 0,
            "annotator_failures": 0,
            "post_terminations": 0,
            "wall": 0.0,
        }
        self._epoch_ft_stance = []
        self._epoch_ft_veracity = []
        self._epoch_active = True

    def _window(self) -> list[Trajectory]:
        if self.config.buffer_window is None:
            return self.buffer
        return self.buffer[-self.config.buffer_window:]

    def _step_claim(self) -> None:
        t0 = time.perf_counter()
        acc = self._acc
        claim_id = self._epoch_sampler.sample()
        claim = self._claims[claim_id]
        trajectory, failures = self._process_claim(claim)
        acc["annotator_failures"] += failures
        if trajectory is None:
            acc["claims_aborted"] += 1
            acc["wall"] += time.perf_counter() - t0
            return
        self.buffer.append(trajectory)
        self.claim_tracker.observe(trajectory.claim_step.reward)
        reinforce_update(
            self.params,
            self.optimizer,
            [(t.claim_step, t.post_steps) for t in self._window()],
            baseline=self.baseline,
        )
        acc["policy_updates"] += 1
        acc["claims_processed"] += 1
        acc["claims_retained"] += int(trajectory.claim_step.action == RETAIN)
        acc["posts_annotated"] += len(trajectory.post_steps)
        acc["posts_retained"] += sum(
            1 for s in trajectory.post_steps if s.action == RETAIN
        )
        acc["claim_reward_sum"] += trajectory.claim_step.reward
        acc["post_reward_sum"] += sum(s.reward for s in trajectory.post_steps)
        acc["post_terminations"] += int(trajectory.post_terminated)
        for step, cosine in zip(trajectory.post_steps, trajectory.post_cosines):
            self._emit(
                claim_id=claim_id, level=step.level, action=step.action,
                reward=step.reward, cosine=cosine, p_retain=step.p_retain,
            )
        self._emit(
            claim_id=claim_id,
            level=trajectory.claim_step.level,
            action=trajectory.claim_step.action,
            reward=trajectory.claim_step.reward,
            cosine=trajectory.claim_cosine,
            p_retain=trajectory.claim_step.p_retain,
        )
        acc["wall"] += time.perf_counter() - t0

    def _epoch_has_work(self) -> bool:
        return (
            self._epoch_active
            and not self.claim_tracker.fired
            and self._epoch_sampler.remaining > 0
        )

    def _finish_epoch(self) -> EpochReport:
        acc = self._acc
        self._epoch_active = False
        fine_tune(self.sd, self._epoch_ft_stance)
        fine_tune(self.rv, self._epoch_ft_veracity)
        self.finetune_stance.extend(self._epoch_ft_stance)
        self.finetune_veracity.extend(self._epoch_ft_veracity)
        if self.claim_tracker.fired:
            self.terminated = True
        posts = acc["posts_annotated"]
        claims = acc["claims_processed"]
        report = EpochReport(
            epoch=self.epoch_index,
            claims_processed=claims,
            claims_aborted=acc["claims_aborted"],
            claims_retained=acc["claims_retained"],
            posts_annotated=posts,
            posts_retained=acc["posts_retained"],
            posts_discarded=posts - acc["posts_retained"],
            mean_claim_reward=(acc["claim_reward_sum"] / claims) if claims else 0.0,
            mean_post_reward=(acc["post_reward_sum"] / posts) if posts else 0.0,
            policy_updates=acc["policy_updates"],
            annotator_failures=acc["annotator_failures"],
            finetune_stance_examples=len(self._epoch_ft_stance),
            finetune_veracity_examples=len(self._epoch_ft_veracity),
            post_terminations=acc["post_terminations"],
            terminated=self.terminated,
            wall_time_s=acc["wall"],
        )
        self.reports.append(report)
        self._epoch_ft_stance = []
        self._epoch_ft_veracity = []
        return report

    def run_epoch(self, limit: int | None = None) -> EpochReport | None:
        """Run one epoch, or up to `limit` claim steps of it.

        Returns the EpochReport when the epoch completes, or None when
        paused mid-epoch by `limit` (resume by calling run_epoch again).
        """
        if self.terminated:
            raise ConfigError("training already terminated; nothing to run")
        if not self._epoch_active:
            self._begin_epoch()
        steps = 0
        while self._epoch_has_work() and (limit is None or steps < limit):
            self._step_claim()
            steps += 1
        if self._epoch_has_work():
            return None
        return self._finish_epoch()

    def train(self) -> list[EpochReport]:
        """Warm-up once, then epochs until max_epochs or early termination."""
        self.pretrain()
        while not self.terminated and (
            self._epoch_active or self.epoch_index < self.config.max_epochs
        ):
            self.run_epoch()
        return self.reports

    # ------------------------------------------------------------ persistence

    def save_run_state(self, path: str | Path) -> None:
        """Serialize the complete run state with magic, version, and crc."""
        payload = {
            "config": self.config,
            "fingerprint": self._fingerprint,
            "seed_ids": self.seed_ids,
            "params": self.params,
            "optimizer": self.optimizer,
            "baseline": self.baseline,
            "references": self.references,
            "claim_context": self.claim_context,
            "claim_tracker": self.claim_tracker,
            "action_rng": self._action_rng,
            "sampler_rng": self._sampler_rng,
            "buffer": self.buffer,
            "reports": self.reports,
            "annotation_records": self.annotation_records,
            "finetune_stance": self.finetune_stance,
            "finetune_veracity": self.finetune_veracity,
            "epoch_ft_stance": self._epoch_ft_stance,
            "epoch_ft_veracity": self._epoch_ft_veracity,
            "epoch_index": self.epoch_index,
            "epoch_active": self._epoch_active,
            "epoch_sampler": self._epoch_sampler,
            "acc": self._acc,
            "terminated": self.terminated,
            "pretrained": self._pretrained,
            "backend_states": {
                "sd": self.sd.get_state() if hasattr(self.sd, "get_state") else None,
                "rv": self.rv.get_state() if hasattr(self.rv, "get_state") else None,
            },
        }
        body = pickle.dumps(payload, protocol=4)
        head = _RUN_MAGIC + struct.pack("<IQ", _RUN_VERSION, len(body))
        crc = struct.pack("<I", zlib.crc32(head + body) & 0xFFFFFFFF)
        Path(path).write_bytes(head + body + crc)

    @classmethod
    def from_run_state(
        cls, path: str | Path, dataset: Dataset, sd_backend, rv_backend, embedder
    ) -> "Trainer":
        """Rebuild a Trainer mid-run; backends get their saved rng state back."""
        payload = load_run_state_payload(path)
        if payload["fingerprint"] != _dataset_fingerprint(dataset):
            raise CheckpointError("run state was saved for a different dataset")
        trainer = cls(
            payload["config"], dataset, sd_backend, rv_backend, embedder,
            seeds=payload["seed_ids"],
        )
        trainer.params = payload["params"]
        trainer.optimizer = payload["optimizer"]
        trainer.baseline = payload["baseline"]
        trainer.references = payload["references"]
        trainer.claim_context = payload["claim_context"]
        trainer.claim_tracker = payload["claim_tracker"]
        trainer._action_rng = payload["action_rng"]
        trainer._sampler_rng = payload["sampler_rng"]
        trainer.buffer = payload["buffer"]
        trainer.reports = payload["reports"]
        trainer.annotation_records = payload["annotation_records"]
        trainer.finetune_stance = payload["finetune_stance"]
        trainer.finetune_veracity = payload["finetune_veracity"]
        trainer._epoch_ft_stance = payload["epoch_ft_stance"]
        trainer._epoch_ft_veracity = payload["epoch_ft_veracity"]
        trainer.epoch_index = payload["epoch_index"]
        trainer._epoch_active = payload["epoch_active"]
        trainer._epoch_sampler = payload["epoch_sampler"]
        trainer._acc = payload["acc"]
        trainer.terminated = payload["terminated"]
        trainer._pretrained = payload["pretrained"]
        states = payload["backend_states"]
        if states.get("sd") is not None and hasattr(sd_backend, "set_state"):
            sd_backend.set_state(states["sd"])
        if states.get("rv") is not None and hasattr(rv_backend, "set_state"):
            rv_backend.set_state(states["rv"])
        return trainer
