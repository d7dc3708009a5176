"""Sequential Bayesian optimization over INR configurations, with a resumable log.

The loop: score a Latin-hypercube design, then repeatedly fit the surrogate,
maximize empirical EI, score the proposal and append it to the log. Every
random choice comes from a substream keyed by ``(seed, purpose, trial
index)``, so an interrupted run resumed from its log replays exactly.

Log format (JSON lines, ``version`` 1): a header record
``{"kind": "header", "version": 1, "settings": {...}, "space": {...}}``
followed by one ``{"kind": "trial", ...}`` record per evaluation.
"""
from __future__ import annotations

import itertools
import json
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from .acquisition import AcquisitionConfig, maximize_acquisition
from .errors import CorruptLog, EmptyRun, SettingsMismatch
from .gp import KernelSpec, fit
from .numerics import derive_seed, make_rng
from .objectives import Score
from .docs import Doc
from .space import (ActivationFamily, Configuration, SearchSpace, encode, real_coordinates,
                    sample_lhs, space_from_doc, space_to_dict)

LOG_VERSION = 1

STREAM_INIT = 0
STREAM_TRIAL = 1
STREAM_FIT = 2
STREAM_ACQ = 3
STREAM_GREEDY = 4

Objective = Callable[[Configuration, int], Any]


@dataclass(frozen=True)
class BOSettings:
    n_init: int = 30
    n_iter: int = 100
    seed: int = 0
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    gp_starts: int = 8
    gp_max_evals: int = 200
    objective: dict = field(default_factory=dict, compare=True)

    def __post_init__(self):
        if self.n_init < 2:
            raise ValueError("n_init must be at least 2")
        if self.n_iter < 0:
            raise ValueError("n_iter must be non-negative")

    @property
    def total(self) -> int:
        return self.n_init + self.n_iter

    def to_dict(self) -> dict:
        return {
            "n_init": self.n_init,
            "n_iter": self.n_iter,
            "seed": self.seed,
            "acquisition": self.acquisition.to_dict(),
            "gp": {"starts": self.gp_starts, "max_evals": self.gp_max_evals},
            "objective": self.objective,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BOSettings":
        acq = data["acquisition"]
        return cls(
            n_init=int(data["n_init"]), n_iter=int(data["n_iter"]), seed=int(data["seed"]),
            acquisition=AcquisitionConfig(
                sample_count=int(acq["samples"]), candidate_count=int(acq["candidates"]),
                feature_count=int(acq["features"]), refine_steps=int(acq["refine_steps"]),
                refine_step_size=float(acq["refine_step_size"])),
            gp_starts=int(data["gp"]["starts"]), gp_max_evals=int(data["gp"]["max_evals"]),
            objective=dict(data.get("objective", {})),
        )


@dataclass(frozen=True)
class TrialRecord:
    index: int
    phase: str
    config: Configuration
    encoded: tuple[float, ...]
    score: float
    metric: str
    diverged: bool
    seed: int
    wall_time: float
    gp: dict | None = None

    def to_dict(self) -> dict:
        return {
            "kind": "trial",
            "index": self.index,
            "phase": self.phase,
            "config": self.config.to_dict(),
            "encoded": list(self.encoded),
            "score": self.score,
            "metric": self.metric,
            "diverged": self.diverged,
            "seed": self.seed,
            "wall_time": self.wall_time,
            "gp": self.gp,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrialRecord":
        return cls(
            index=int(data["index"]), phase=str(data["phase"]),
            config=Configuration.from_dict(data["config"]),
            encoded=tuple(float(v) for v in data["encoded"]), score=float(data["score"]),
            metric=str(data["metric"]), diverged=bool(data["diverged"]), seed=int(data["seed"]),
            wall_time=float(data["wall_time"]), gp=data.get("gp"),
        )


@dataclass
class RunState:
    space: SearchSpace
    settings: BOSettings
    trials: list[TrialRecord] = field(default_factory=list)

    @property
    def status(self) -> str:
        return "complete" if len(self.trials) >= self.settings.total else "running"

    def scores(self) -> np.ndarray:
        return np.array([t.score for t in self.trials])

    def best_so_far(self) -> np.ndarray:
        return np.maximum.accumulate(self.scores()) if self.trials else np.array([])


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, allow_nan=False)


def header_record(space: SearchSpace, settings: BOSettings) -> dict:
    return {"kind": "header", "version": LOG_VERSION, "settings": settings.to_dict(),
            "space": space_to_dict(space)}


class RunLog:
    """Append-only writer; every record is flushed and synced before returning."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def write_header(self, space: SearchSpace, settings: BOSettings) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as fh:
            fh.write(_dumps(header_record(space, settings)) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def append(self, trial: TrialRecord) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(_dumps(trial.to_dict()) + "\n")
            fh.flush()
            os.fsync(fh.fileno())


def _as_score(result: Any) -> Score:
    if isinstance(result, Score):
        score = result
    else:
        score = Score(float(result), "value")
    if not math.isfinite(score.value):
        raise ValueError(f"objective returned a non-finite score {score.value!r}")
    return score


def initial_design(space: SearchSpace, settings: BOSettings) -> list[Configuration]:
    return sample_lhs(space, settings.n_init, make_rng(settings.seed, STREAM_INIT))


def _advance(state: RunState, objective: Objective, log: RunLog | None,
             stop_after: int | None = None,
             on_trial: Callable[[TrialRecord], None] | None = None) -> RunState:
    space, settings = state.space, state.settings
    design = initial_design(space, settings)
    while len(state.trials) < settings.total:
        if stop_after is not None and len(state.trials) >= stop_after:
            break
        i = len(state.trials)
        gp_params = None
        if i < settings.n_init:
            config, phase = design[i], "init"
        else:
            phase = "bo"
            xs = np.array([t.encoded for t in state.trials])
            ys = state.scores()
            previous = state.trials[-1].gp
            warm = KernelSpec.from_dict(space.layout, previous) if previous else None
            model = fit(space, xs, ys, make_rng(settings.seed, STREAM_FIT, i),
                        starts=settings.gp_starts, max_evals=settings.gp_max_evals, warm_start=warm)
            config = maximize_acquisition(model, space, settings.acquisition,
                                          make_rng(settings.seed, STREAM_ACQ, i))
            gp_params = model.kernel.to_dict()
        trial_seed = derive_seed(settings.seed, STREAM_TRIAL, i)
        start = time.perf_counter()
        score = _as_score(objective(config, trial_seed))
        record = TrialRecord(
            index=i, phase=phase, config=config, encoded=tuple(float(v) for v in encode(space, config)),
            score=float(score.value), metric=score.metric, diverged=bool(score.diverged),
            seed=trial_seed, wall_time=time.perf_counter() - start, gp=gp_params)
        if log is not None:
            log.append(record)
        state.trials.append(record)
        if on_trial is not None:
            on_trial(record)
    return state


def run_optimization(space: SearchSpace, objective: Objective, n_init: int, n_iter: int,
                     settings: BOSettings | None = None, seed: int | None = None,
                     log_path: str | Path | None = None, *, stop_after: int | None = None,
                     on_trial: Callable[[TrialRecord], None] | None = None) -> RunState:
    """Run the full design-then-BO loop, logging each trial before the next starts.

    ``stop_after`` halts once that many trials exist (the run stays resumable);
    ``on_trial`` is called after each trial is logged.
    """
    settings = settings or BOSettings()
    settings = replace(settings, n_init=n_init, n_iter=n_iter,
                       seed=settings.seed if seed is None else seed)
    log = None
    if log_path is not None:
        log = RunLog(log_path)
        log.write_header(space, settings)
    state = RunState(space, settings)
    return _advance(state, objective, log, stop_after, on_trial)


def read_log(log_path: str | Path) -> RunState:
    """Parse a run log. A final line without a newline (interrupted write) is ignored."""
    path = Path(log_path)
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise CorruptLog("log is empty", 1)
    lines = text.split("\n")
    complete = lines[:-1]  # the last element is '' or a partial record
    if not complete:
        raise CorruptLog("log has no complete header line", 1)
    try:
        header = json.loads(complete[0])
    except json.JSONDecodeError as exc:
        raise CorruptLog(f"invalid header: {exc.msg}", 1) from None
    if header.get("kind") != "header":
        raise CorruptLog("first record is not a header", 1)
    if header.get("version") != LOG_VERSION:
        raise CorruptLog(f"unsupported log version {header.get('version')!r}", 1)
    try:
        space = space_from_doc(Doc(header["space"], {}, str(path)))
        settings = BOSettings.from_dict(header["settings"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptLog(f"invalid header: {exc}", 1) from None
    state = RunState(space, settings)
    for lineno, line in enumerate(complete[1:], start=2):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            if data.get("kind") != "trial":
                raise ValueError(f"unexpected record kind {data.get('kind')!r}")
            trial = TrialRecord.from_dict(data)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorruptLog(f"invalid trial record: {exc}", lineno) from None
        if trial.index != len(state.trials):
            raise CorruptLog(f"expected trial index {len(state.trials)}, found {trial.index}", lineno)
        try:
            expected = encode(space, trial.config)
        except ValueError as exc:
            raise CorruptLog(f"configuration invalid for the logged space: {exc}", lineno) from None
        if not np.allclose(expected, trial.encoded, rtol=0, atol=1e-12):
            raise CorruptLog("encoded point does not match the configuration", lineno)
        state.trials.append(trial)
    if len(state.trials) > settings.total:
        raise CorruptLog(f"log holds {len(state.trials)} trials but the budget is {settings.total}")
    return state


def _truncate_partial_tail(path: Path) -> None:
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        cut = data.rfind(b"\n") + 1
        with open(path, "r+b") as fh:
            fh.truncate(cut)


def resume(log_path: str | Path, objective: Objective, settings: BOSettings | None = None,
           space: SearchSpace | None = None, *, stop_after: int | None = None,
           on_trial: Callable[[TrialRecord], None] | None = None) -> RunState:
    """Continue a logged run until its budget is spent.

    When ``settings`` or ``space`` are given they must equal the logged ones.
    """
    path = Path(log_path)
    state = read_log(path)
    if settings is not None and settings.to_dict() != state.settings.to_dict():
        raise SettingsMismatch(_diff(settings.to_dict(), state.settings.to_dict()))
    if space is not None and space_to_dict(space) != space_to_dict(state.space):
        raise SettingsMismatch("search space differs from the logged one")
    if state.status == "complete":
        return state
    _truncate_partial_tail(path)
    return _advance(state, objective, RunLog(path), stop_after, on_trial)


def _diff(given: dict, logged: dict, prefix: str = "") -> str:
    for key in sorted(set(given) | set(logged)):
        a, b = given.get(key), logged.get(key)
        if a != b:
            if isinstance(a, dict) and isinstance(b, dict):
                return _diff(a, b, f"{prefix}{key}.")
            return f"setting {prefix}{key} is {a!r} but the log has {b!r}"
    return "settings differ"


def best(run: RunState | Iterable[TrialRecord]) -> tuple[Configuration, TrialRecord]:
    """Highest-scoring trial; ties go to the earliest index."""
    trials = run.trials if isinstance(run, RunState) else list(run)
    if not trials:
        raise EmptyRun("no trials to choose from")
    top = max(range(len(trials)), key=lambda i: (trials[i].score, -i))
    return trials[top].config, trials[top]


# -- greedy baseline and the payoff counterexample ------------------------------------

def greedy_layerwise_baseline(space: SearchSpace, objective: Objective, per_layer_budget: int | None,
                              seed: int, later_layers: str = "defaults") -> tuple[Configuration, Score]:
    """Choose layers one at a time, keeping earlier choices fixed.

    ``per_layer_budget=None`` enumerates every activation of the current layer
    (other fields at space defaults); otherwise that many Latin-hypercube
    draws of the layer's block are scored. Undecided later layers sit at the
    space defaults (``later_layers="defaults"``) or are averaged over every
    combination of their activations (``later_layers="average"``).
    """
    if later_layers not in ("defaults", "average"):
        raise ValueError("later_layers must be 'defaults' or 'average'")
    base = space.default_configuration()
    chosen = list(base.layers)
    rng = make_rng(seed, STREAM_GREEDY)
    counter = itertools.count()

    def score_of(layers) -> Score:
        config = replace(base, layers=tuple(layers))
        return _as_score(objective(config, derive_seed(seed, STREAM_GREEDY, next(counter))))

    final: Score | None = None
    for layer in range(space.layer_count):
        if per_layer_budget is None:
            candidates = [replace(base.layers[layer], activation=a) for a in space.activations[layer]]
        else:
            candidates = [c.layers[layer] for c in sample_lhs(space, per_layer_budget, rng)]
        results = []
        for cand in candidates:
            head = chosen[:layer] + [cand]
            tail_defaults = list(base.layers[layer + 1:])
            if later_layers == "defaults" or not tail_defaults:
                results.append(score_of(head + tail_defaults))
            else:
                acts = [space.activations[j] for j in range(layer + 1, space.layer_count)]
                vals = [score_of(head + [replace(t, activation=a) for t, a in zip(tail_defaults, combo)])
                        for combo in itertools.product(*acts)]
                results.append(Score(float(np.mean([v.value for v in vals])), vals[0].metric))
        pick = max(range(len(candidates)), key=lambda i: (results[i].value, -i))
        chosen[layer] = candidates[pick]
        final = results[pick]
    return replace(base, layers=tuple(chosen)), final


PAYOFF = {("A", "A"): 12.0, ("A", "B"): 5.0, ("B", "A"): 10.0, ("B", "B"): 8.0}
_PAYOFF_LETTERS = {ActivationFamily.SIREN: "A", ActivationFamily.GAUSS: "B"}


def payoff_space() -> SearchSpace:
    """Two layers, two choices each: SIREN stands for A and GAUSS for B."""
    return SearchSpace.uniform(2, (ActivationFamily.SIREN, ActivationFamily.GAUSS), pe_allowed=False)


def payoff_objective(config: Configuration, seed: int = 0) -> Score:
    key = tuple(_PAYOFF_LETTERS[layer.activation] for layer in config.layers)
    return Score(PAYOFF[key], "payoff")


@dataclass(frozen=True)
class PayoffReport:
    greedy_choice: tuple[str, str]
    greedy_value: float
    global_choice: tuple[str, str]
    global_value: float
    layer1_means: dict


def payoff_counterexample() -> PayoffReport:
    """Greedy (averaging over layer 2) versus exhaustive search on the 2x2 payoff table."""
    choices = ("A", "B")
    means = {a: sum(PAYOFF[(a, b)] for b in choices) / len(choices) for a in choices}
    first = max(choices, key=lambda a: (means[a], -choices.index(a)))
    second = max(choices, key=lambda b: (PAYOFF[(first, b)], -choices.index(b)))
    glob = max(PAYOFF, key=lambda k: (PAYOFF[k], -list(PAYOFF).index(k)))
    return PayoffReport((first, second), PAYOFF[(first, second)], glob, PAYOFF[glob], means)


def quadratic_objective(space: SearchSpace, target: float = 0.7) -> Objective:
    """Synthetic objective ``-sum (c_i - target)^2`` over continuous encoded coordinates.

    Categorical and binary choices are ignored; the optimum value is 0.
    """
    idx = real_coordinates(space)

    def objective(config: Configuration, seed: int = 0) -> Score:
        c = encode(space, config)[idx]
        return Score(float(-np.sum((c - target) ** 2)), "neg_sq_dist")

    return objective


__all__ = [
    "BOSettings", "PAYOFF", "PayoffReport", "RunLog", "RunState", "TrialRecord", "best",
    "greedy_layerwise_baseline", "payoff_counterexample", "payoff_objective", "payoff_space",
    "quadratic_objective", "read_log", "resume", "run_optimization",
]
