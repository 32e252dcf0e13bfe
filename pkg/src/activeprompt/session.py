"""The active-prompting loop: step, stop, run, and matched-budget baselines.

A session is a single-writer state machine. Each step selects a query
from the current score map, obtains its label, appends the prompt, and
recomputes mask, features, and scores under the grown prompt set - the
acquisition landscape is conditioned on the prompt history, so nothing
is reused across steps. Trajectories serialize as byte-stable JSON Lines
(floats printed with 9 significant digits).

Stopping (checked before every step, in this order): max mutual
information at or below tau_mi; global predictive entropy at or below
tau_ent; iteration count at the prompt budget. The score-based rules
only apply to strategies that evaluate the posterior ensemble.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .acquisition import (
    CandidatesExhausted,
    ScoreMap,
    StrategyKind,
    mutual_information_map,
    oracle_error_map,
    oracle_select,
    predictive_ensemble,
    predictive_entropy_map,
    random_score_map,
    select_next,
)
from .backbone import FeatureMap, PromptableBackbone
from .core import BinaryMask, ContractViolation, Image, Prompt, PromptSet, iou
from .head import HeadParams, LaplacePosterior, sample_posterior

# Sub-seed tags so the posterior draw and per-iteration random scores
# come from disjoint, reproducible streams.
_SAMPLES_TAG = 0
_RANDOM_TAG = 1


class AnnotatorEnded(RuntimeError):
    """The annotator aborted the session."""


class StopReason(str, Enum):
    MAX_MI_BELOW_THRESHOLD = "max_mi_below_threshold"
    GLOBAL_ENTROPY_BELOW_THRESHOLD = "global_entropy_below_threshold"
    BUDGET_EXHAUSTED = "budget_exhausted"
    ANNOTATOR_ENDED = "annotator_ended"
    CANDIDATES_EXHAUSTED = "candidates_exhausted"


@dataclass(frozen=True)
class StopConfig:
    tau_mi: float | None = 0.01
    tau_ent: float | None = None
    budget: int = 15

    def __post_init__(self):
        if self.tau_mi is not None and self.tau_mi < 0:
            raise ContractViolation("tau_mi must be nonnegative")
        if self.budget < 1:
            raise ContractViolation("budget must be at least 1")


@dataclass(frozen=True)
class StepRecord:
    t: int
    q: tuple[int, int]
    label: int
    iou: float | None
    max_mi: float | None
    h_total: float | None
    mask_sha256: str


@dataclass(frozen=True)
class Trajectory:
    records: tuple[StepRecord, ...]
    stop_reason: StopReason
    strategy: str
    seed: int

    def iou_series(self) -> list[float]:
        out = []
        for r in self.records:
            if r.iou is None:
                raise ContractViolation("trajectory lacks per-iteration IoU")
            out.append(r.iou)
        return out

    def to_jsonl(self) -> str:
        lines = [_record_line(r) for r in self.records]
        lines.append(
            f'{{"stop": "{self.stop_reason.value}", '
            f'"strategy": "{self.strategy}", "seed": {self.seed}}}'
        )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "Trajectory":
        records = []
        stop = None
        for line in text.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            if "stop" in obj:
                stop = obj
            else:
                records.append(
                    StepRecord(
                        t=obj["t"],
                        q=(obj["q"][0], obj["q"][1]),
                        label=obj["label"],
                        iou=obj["iou"],
                        max_mi=obj["max_mi"],
                        h_total=obj["h_total"],
                        mask_sha256=obj["mask_sha256"],
                    )
                )
        if stop is None:
            raise ValueError("trajectory log has no stop line")
        return cls(
            tuple(records),
            StopReason(stop["stop"]),
            stop["strategy"],
            stop["seed"],
        )


def _fmt(v: float | None) -> str:
    return "null" if v is None else format(v, ".9g")


def _record_line(r: StepRecord) -> str:
    return (
        f'{{"t": {r.t}, "q": [{r.q[0]}, {r.q[1]}], "label": {r.label}, '
        f'"iou": {_fmt(r.iou)}, "max_mi": {_fmt(r.max_mi)}, '
        f'"h_total": {_fmt(r.h_total)}, "mask_sha256": "{r.mask_sha256}"}}'
    )


def record_to_dict(r: StepRecord) -> dict:
    return json.loads(_record_line(r))


def mask_digest(mask: BinaryMask) -> str:
    """SHA-256 over the raw row-major 0/1 bytes."""
    return hashlib.sha256(mask.values.tobytes()).hexdigest()


@dataclass(frozen=True, eq=False)
class SessionState:
    """Complete snapshot of one session between steps."""

    image: Image
    gt: BinaryMask | None
    strategy: StrategyKind
    backbone: PromptableBackbone
    samples: tuple[HeadParams, ...]
    seed: int
    stride: int
    prompt_set: PromptSet
    features: FeatureMap
    current_mask: BinaryMask
    current_scores: ScoreMap | None
    max_mi: float | None
    h_total: float | None
    iteration: int
    records: tuple[StepRecord, ...]
    stop_reason: StopReason | None
    replay: tuple[tuple[tuple[int, int], int], ...] | None = None

    @property
    def stopped(self) -> bool:
        return self.stop_reason is not None


def _session_rng_seed(seed: int, tag: int, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed & 0x7FFFFFFFFFFFFFFF, tag, *extra])


def _evaluate(
    backbone: PromptableBackbone,
    image: Image,
    prompts: PromptSet,
    strategy: StrategyKind,
    samples: tuple[HeadParams, ...],
    gt: BinaryMask | None,
    seed: int,
    stride: int,
    iteration: int,
):
    """Recompute mask, features, and strategy scores under the prompt set."""
    out = backbone.predict_mask(image, prompts)
    scores = None
    max_mi = None
    h_total = None
    if strategy.uses_ensemble:
        ens = predictive_ensemble(out.features, list(samples))
        mi = mutual_information_map(ens)
        ent = predictive_entropy_map(ens)
        scores = mi if strategy.name == "bald" else ent
        max_mi = float(mi.values[::stride, ::stride].max())
        h_total = float(ent.values[::stride, ::stride].sum())
    elif strategy.name == "random":
        scores = random_score_map(
            image.shape, _session_rng_seed(seed, _RANDOM_TAG, iteration)
        )
    elif strategy.name == "oracle":
        if gt is None:
            raise ContractViolation("oracle strategy requires a ground-truth mask")
        scores = oracle_error_map(out.mask, gt)
    return out, scores, max_mi, h_total


def _load_replay(path) -> tuple[tuple[tuple[int, int], int], ...]:
    traj = Trajectory.from_jsonl(Path(path).read_text())
    return tuple((r.q, r.label) for r in traj.records)


def init_session(
    image: Image,
    strategy: StrategyKind,
    posterior: LaplacePosterior | None,
    config_seed: int,
    backbone: PromptableBackbone,
    gt: BinaryMask | None = None,
    samples_k: int = 30,
    stride: int = 1,
    seed_prompts: PromptSet | None = None,
) -> SessionState:
    """Session at t=0: empty (or seeded) prompt set, scores already evaluated."""
    samples: tuple[HeadParams, ...] = ()
    if strategy.uses_ensemble:
        if posterior is None:
            raise ContractViolation(f"{strategy.name} strategy requires a posterior")
        samples = tuple(
            sample_posterior(
                posterior, samples_k, _session_rng_seed(config_seed, _SAMPLES_TAG)
            )
        )
    replay = None
    if strategy.name == "human_replay":
        replay = _load_replay(strategy.replay_path)
    prompts = seed_prompts if seed_prompts is not None else PromptSet()
    out, scores, max_mi, h_total = _evaluate(
        backbone, image, prompts, strategy, samples, gt, config_seed, stride, 0
    )
    return SessionState(
        image=image,
        gt=gt,
        strategy=strategy,
        backbone=backbone,
        samples=samples,
        seed=config_seed,
        stride=stride,
        prompt_set=prompts,
        features=out.features,
        current_mask=out.mask,
        current_scores=scores,
        max_mi=max_mi,
        h_total=h_total,
        iteration=prompts.iteration,
        records=(),
        stop_reason=None,
        replay=replay,
    )


def select_query(state: SessionState) -> tuple[int, int] | None:
    """The strategy's next query under the current state; None if exhausted."""
    if state.stopped:
        raise ContractViolation("session already stopped")
    queried = state.prompt_set.locations()
    name = state.strategy.name
    if name == "oracle":
        return oracle_select(state.current_mask, state.gt, queried)
    if name == "human_replay":
        if state.iteration >= len(state.replay):
            return None
        return state.replay[state.iteration][0]
    try:
        return select_next(state.current_scores, queried, stride=state.stride)
    except CandidatesExhausted:
        return None


def apply_label(state: SessionState, q: tuple[int, int], label: int) -> SessionState:
    """Append (q, label) and recompute everything under the grown prompt set."""
    if state.stopped:
        raise ContractViolation("session already stopped")
    r, c = int(q[0]), int(q[1])
    if not (0 <= r < state.image.height and 0 <= c < state.image.width):
        raise ContractViolation(f"query ({r}, {c}) out of bounds")
    prompts = state.prompt_set.add(Prompt(r, c, int(label)))
    out, scores, max_mi, h_total = _evaluate(
        state.backbone,
        state.image,
        prompts,
        state.strategy,
        state.samples,
        state.gt,
        state.seed,
        state.stride,
        prompts.iteration,
    )
    iou_val = iou(out.mask, state.gt) if state.gt is not None else None
    rec = StepRecord(
        t=prompts.iteration,
        q=(r, c),
        label=int(label),
        iou=iou_val,
        max_mi=max_mi,
        h_total=h_total,
        mask_sha256=mask_digest(out.mask),
    )
    return replace(
        state,
        prompt_set=prompts,
        features=out.features,
        current_mask=out.mask,
        current_scores=scores,
        max_mi=max_mi,
        h_total=h_total,
        iteration=prompts.iteration,
        records=state.records + (rec,),
    )


def mark_stopped(state: SessionState, reason: StopReason) -> SessionState:
    return replace(state, stop_reason=reason)


def step(state: SessionState, annotator=None) -> SessionState:
    """One loop iteration: select, label, append, re-evaluate.

    ``annotator(q) -> label`` supplies labels; the simulated default reads
    the ground truth. Replay sessions take both query and label from the
    recorded log. On candidate exhaustion (or a replay log running out)
    the returned state is stopped instead of extended.
    """
    q = select_query(state)
    if q is None:
        reason = (
            StopReason.ANNOTATOR_ENDED
            if state.strategy.name == "human_replay"
            else StopReason.CANDIDATES_EXHAUSTED
        )
        return mark_stopped(state, reason)
    if state.strategy.name == "human_replay":
        label = state.replay[state.iteration][1]
    elif annotator is not None:
        try:
            label = annotator(q)
        except AnnotatorEnded:
            return mark_stopped(state, StopReason.ANNOTATOR_ENDED)
    elif state.gt is not None:
        label = int(state.gt.values[q])
    else:
        raise ContractViolation("no annotator and no ground truth to label with")
    return apply_label(state, q, label)


def check_stop(state: SessionState, config: StopConfig) -> StopReason | None:
    """First stopping rule satisfied, in (max-MI, entropy, budget) order."""
    if state.stop_reason is not None:
        return state.stop_reason
    if (
        config.tau_mi is not None
        and state.max_mi is not None
        and state.max_mi <= config.tau_mi
    ):
        return StopReason.MAX_MI_BELOW_THRESHOLD
    if (
        config.tau_ent is not None
        and state.h_total is not None
        and state.h_total <= config.tau_ent
    ):
        return StopReason.GLOBAL_ENTROPY_BELOW_THRESHOLD
    if state.iteration >= config.budget:
        return StopReason.BUDGET_EXHAUSTED
    return None


def trajectory_of(state: SessionState) -> Trajectory:
    if state.stop_reason is None:
        raise ContractViolation("session has not stopped")
    return Trajectory(state.records, state.stop_reason, state.strategy.name, state.seed)


def run_session(
    image: Image,
    gt: BinaryMask | None,
    strategy: StrategyKind,
    posterior: LaplacePosterior | None,
    config: StopConfig,
    seed: int,
    backbone: PromptableBackbone,
    samples_k: int = 30,
    annotator=None,
    stride: int = 1,
) -> Trajectory:
    """Drive a session from an empty prompt set until a stop rule fires."""
    if gt is None and annotator is None and strategy.name != "human_replay":
        raise ContractViolation("simulated runs need a ground-truth mask")
    state = init_session(
        image,
        strategy,
        posterior,
        seed,
        backbone,
        gt=gt,
        samples_k=samples_k,
        stride=stride,
    )
    while True:
        reason = check_stop(state, config)
        if reason is not None:
            state = mark_stopped(state, reason)
            break
        state = step(state, annotator=annotator)
        if state.stopped:
            break
    return trajectory_of(state)


MATCHED_BASELINES = ("entropy", "random", "oracle")


def run_matched_baselines(
    image: Image,
    gt: BinaryMask,
    posterior: LaplacePosterior | None,
    t_budget: int,
    seed: int,
    backbone: PromptableBackbone,
    samples_k: int = 30,
    stride: int = 1,
) -> list[Trajectory]:
    """Entropy, random, and oracle runs of exactly t_budget iterations.

    Score-threshold stopping is suppressed; only candidate exhaustion may
    end a run early. Seeds are shared with the reference run.
    """
    if t_budget < 1:
        raise ContractViolation("t_budget must be at least 1")
    config = StopConfig(tau_mi=None, tau_ent=None, budget=t_budget)
    out = []
    for name in MATCHED_BASELINES:
        traj = run_session(
            image,
            gt,
            StrategyKind(name),
            posterior,
            config,
            seed,
            backbone,
            samples_k=samples_k,
            stride=stride,
        )
        out.append(traj)
    return out
