"""Experiment orchestration: seeded k-shot trials, arm sweeps, aggregation.

An experiment fixes one dataset and one stratified holdout split, then runs
many independent trials over (arm, k, ensemble size) cells. Each trial draws
its own k-shot positives and negative chunk assignment from a seed derived
from the master seed and the cell coordinates, so results are independent of
execution order and worker count. Summaries report sample mean/std per cell
plus error-rate improvement rows in the style of the headline comparisons.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pairbag.calibrate import CalibrationReport, calibration_errors, records_from_scores
from pairbag.data import PairDataset, SyntheticSpec, draw_k_shot, generate_synthetic, load_manifest
from pairbag.ensemble import member_scores, train_ensemble
from pairbag.learner import PretrainedExtractor, SiameseTopology, pretrain_extractor
from pairbag.optimize import TrainConfig
from pairbag.partition import assign_chunks, make_chunk_plan
from pairbag.seeding import (
    ASSIGN_STREAM,
    DRAW_STREAM,
    PLAN_STREAM,
    PRETRAIN_STREAM,
    SOURCE_STREAM,
    SPLIT_STREAM,
    TRAIN_STREAM,
    TRIAL_STREAM,
    derive_seed,
)

ARMS = ("scratch", "transfer")

# Fixed full-batch iteration budgets per (arm, k). Fewer steps on the
# transfer arm both suffice for the frozen-extractor head and keep its
# confidences closer to observed accuracy.
DEFAULT_BUDGETS = (
    ("scratch", 5, 100),
    ("scratch", 50, 130),
    ("transfer", 5, 20),
    ("transfer", 50, 50),
)


class LeakageError(AssertionError):
    """Raised when a base-model training set touches the held-out test set."""


def default_benchmark(
    trials: int = 50, seed: int = 2024, d: int = 16, n_neg: int = 2000
) -> "ExperimentSpec":
    """Desk-scale synthetic benchmark: d=16, 200 positives, 2000 negatives."""
    source = SyntheticSpec(
        d=d, n_pos=200, n_neg=n_neg, separation=8.0, noise_scale=1.0, seed=seed
    )
    return ExperimentSpec(source=source, trials=trials, seed=seed)


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to rerun an experiment bit-for-bit.

    source is a SyntheticSpec or a manifest path. extractor_hidden are the
    extractor's hidden widths between the input and feature layers; budgets
    are (arm, k, iterations) triples, looked up by nearest k per arm.
    """

    source: SyntheticSpec | str
    k_shots: tuple[int, ...] = (5, 50)
    ensemble_sizes: tuple[int, ...] = (1, 5, 10, 15, 20)
    arms: tuple[str, ...] = ARMS
    trials: int = 200
    test_fraction: float = 0.3
    seed: int = 0
    scratch_config: TrainConfig = field(default_factory=lambda: TrainConfig(iterations=0))
    transfer_config: TrainConfig = field(default_factory=lambda: TrainConfig(iterations=0))
    budgets: tuple[tuple[str, int, int], ...] = DEFAULT_BUDGETS
    extractor_hidden: tuple[int, ...] = (128, 64)
    head_hidden: int = 128
    pretrain_budget: int = 300
    source_size: int = 1000
    source_tasks: int = 16

    def __post_init__(self) -> None:
        object.__setattr__(self, "k_shots", tuple(int(k) for k in self.k_shots))
        object.__setattr__(self, "ensemble_sizes", tuple(int(m) for m in self.ensemble_sizes))
        object.__setattr__(self, "arms", tuple(self.arms))
        object.__setattr__(self, "extractor_hidden", tuple(int(h) for h in self.extractor_hidden))
        object.__setattr__(
            self, "budgets", tuple((a, int(k), int(b)) for a, k, b in self.budgets)
        )
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if not self.k_shots or any(k < 1 for k in self.k_shots):
            raise ValueError(f"k_shots must be positive, got {self.k_shots}")
        if not self.ensemble_sizes or any(m < 1 for m in self.ensemble_sizes):
            raise ValueError(f"ensemble_sizes must be positive, got {self.ensemble_sizes}")
        if not self.arms or any(a not in ARMS for a in self.arms):
            raise ValueError(f"arms must be a nonempty subset of {ARMS}, got {self.arms}")
        if len(set(self.arms)) != len(self.arms):
            raise ValueError(f"duplicate arms in {self.arms}")
        if self.pretrain_budget < 0 or self.source_size < 1:
            raise ValueError("pretrain_budget must be >= 0 and source_size >= 1")
        if self.source_tasks < 1:
            raise ValueError(f"source_tasks must be >= 1, got {self.source_tasks}")

    def topology(self, input_dim: int) -> SiameseTopology:
        sizes = (input_dim,) + self.extractor_hidden
        return SiameseTopology(extractor_sizes=sizes, head_hidden=self.head_hidden)

    def arm_config(self, arm: str) -> TrainConfig:
        if arm == "scratch":
            return self.scratch_config
        if arm == "transfer":
            return self.transfer_config
        raise ValueError(f"unknown arm {arm!r}")

    def iteration_budget(self, arm: str, k: int) -> int:
        """Budget for the nearest tabulated k on this arm (ties: smaller k)."""
        rows = [(bk, b) for a, bk, b in self.budgets if a == arm]
        if not rows:
            raise ValueError(f"no iteration budgets for arm {arm!r}")
        return min(rows, key=lambda r: (abs(r[0] - k), r[0]))[1]


@dataclass(frozen=True)
class TrialReport:
    """Outcome of one trial: one ensemble trained and evaluated once."""

    trial_index: int
    arm: str
    k: int
    ensemble_size: int
    accuracy: float
    calibrations: tuple[CalibrationReport, ...]
    leakage_overlap: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.accuracy <= 100.0:
            raise ValueError(f"accuracy must lie in [0, 100], got {self.accuracy}")
        if len(self.calibrations) != self.ensemble_size:
            raise ValueError(
                f"{len(self.calibrations)} calibration reports for "
                f"{self.ensemble_size} base models"
            )
        object.__setattr__(self, "calibrations", tuple(self.calibrations))

    def to_record(self) -> dict:
        return {
            "trial_index": self.trial_index,
            "arm": self.arm,
            "k": self.k,
            "ensemble_size": self.ensemble_size,
            "accuracy": self.accuracy,
            "leakage_overlap": self.leakage_overlap,
            "calibrations": [c.to_record() for c in self.calibrations],
        }

    @classmethod
    def from_record(cls, record: dict) -> "TrialReport":
        return cls(
            trial_index=int(record["trial_index"]),
            arm=str(record["arm"]),
            k=int(record["k"]),
            ensemble_size=int(record["ensemble_size"]),
            accuracy=float(record["accuracy"]),
            calibrations=tuple(
                CalibrationReport.from_record(c) for c in record["calibrations"]
            ),
            leakage_overlap=int(record["leakage_overlap"]),
        )


@dataclass(frozen=True)
class CellSummary:
    """Sample statistics for one (arm, k, ensemble size) cell."""

    arm: str
    k: int
    ensemble_size: int
    trials: int
    mean_acc: float
    std_acc: float
    mean_rms_cal: float
    std_rms_cal: float
    mean_mad_cal: float
    std_mad_cal: float

    @property
    def mean_error(self) -> float:
        return 100.0 - self.mean_acc


@dataclass(frozen=True)
class ImprovementRow:
    """One error-rate-improvement comparison between two summary cells.

    kind "ensemble": same arm and k, |M| grows from from_size to to_size.
    kind "transfer": same k and |M|, scratch errors against transfer errors.
    """

    kind: str
    arm: str
    k: int
    from_size: int
    to_size: int
    improvement: float

    def describe(self) -> str:
        if self.kind == "ensemble":
            return (
                f"{self.arm} k={self.k}: |M|={self.from_size} -> |M|={self.to_size} "
                f"error improved {self.improvement:.1f}%"
            )
        return (
            f"k={self.k} |M|={self.to_size}: scratch -> transfer "
            f"error improved {self.improvement:.1f}%"
        )


@dataclass(frozen=True)
class SweepSummary:
    """Per-cell statistics plus the improvement comparisons."""

    cells: tuple[CellSummary, ...]
    improvements: tuple[ImprovementRow, ...]

    def cell(self, arm: str, k: int, ensemble_size: int) -> CellSummary:
        for c in self.cells:
            if (c.arm, c.k, c.ensemble_size) == (arm, k, ensemble_size):
                return c
        raise KeyError(f"no cell (arm={arm}, k={k}, ensemble_size={ensemble_size})")


def error_rate_improvement(e_new: float, e_old: float) -> float:
    """Percent improvement of error rate e_new over baseline e_old.

    Both arguments are error rates in percent; returns 100 * (1 - e_new/e_old).
    """
    if e_old <= 0.0:
        raise ValueError(f"baseline error rate must be > 0, got {e_old}")
    return 100.0 * (1.0 - e_new / e_old)


def split_holdout(
    dataset: PairDataset, test_fraction: float, seed: int
) -> tuple[PairDataset, PairDataset]:
    """Stratified disjoint train/test split, deterministic by seed."""
    train_idx, test_idx = split_indices(dataset, test_fraction, seed)
    return dataset.subset(train_idx), dataset.subset(test_idx)


def split_indices(
    dataset: PairDataset, test_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Row indices (train, test) of the stratified holdout split.

    Per class, round(count * fraction) rows go to test; both splits must
    keep both classes or the fraction is rejected.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train_parts, test_parts = [], []
    for cls_indices in (dataset.positives, dataset.negatives):
        n = len(cls_indices)
        n_test = round(n * test_fraction)
        if n_test < 1 or n_test >= n:
            raise ValueError(
                f"test_fraction {test_fraction} leaves a class empty "
                f"(class size {n}, test share {n_test})"
            )
        shuffled = rng.permutation(cls_indices)
        test_parts.append(shuffled[:n_test])
        train_parts.append(shuffled[n_test:])
    train_idx = np.sort(np.concatenate(train_parts))
    test_idx = np.sort(np.concatenate(test_parts))
    return train_idx, test_idx


@dataclass(frozen=True, eq=False)
class ExperimentContext:
    """Dataset, split, and pretrained extractor shared by every trial."""

    dataset: PairDataset
    train_idx: np.ndarray
    test_idx: np.ndarray
    train: PairDataset
    test: PairDataset
    pretrained: PretrainedExtractor | None


def load_source_dataset(spec: ExperimentSpec) -> PairDataset:
    if isinstance(spec.source, SyntheticSpec):
        return generate_synthetic(spec.source)
    return load_manifest(spec.source)


def build_context(spec: ExperimentSpec) -> ExperimentContext:
    """Materialize the dataset, the holdout split, and the frozen extractor."""
    dataset = load_source_dataset(spec)
    split_seed = derive_seed(spec.seed, SPLIT_STREAM)
    train_idx, test_idx = split_indices(dataset, spec.test_fraction, split_seed)
    train = dataset.subset(train_idx)
    test = dataset.subset(test_idx)
    pretrained = None
    if "transfer" in spec.arms:
        pretrained = _pretrain(spec, dataset.dim)
    return ExperimentContext(
        dataset=dataset,
        train_idx=train_idx,
        test_idx=test_idx,
        train=train,
        test=test,
        pretrained=pretrained,
    )


def _pretrain(spec: ExperimentSpec, input_dim: int) -> PretrainedExtractor:
    """Train the extractor on an auxiliary balanced source mixture, then freeze.

    The source task pools several synthetic tasks with their own seeds, so
    their change directions all differ from the target task's; the extractor
    has to learn generic change detection rather than one direction, which
    is what makes its features transferable.
    """
    if isinstance(spec.source, SyntheticSpec):
        separation, noise = spec.source.separation, spec.source.noise_scale
    else:
        separation, noise = 8.0, 1.0
    per_task = max(1, spec.source_size // spec.source_tasks)
    parts = [
        generate_synthetic(
            SyntheticSpec(
                d=input_dim,
                n_pos=per_task,
                n_neg=per_task,
                separation=separation,
                noise_scale=noise,
                seed=derive_seed(spec.seed, SOURCE_STREAM, task),
            )
        )
        for task in range(spec.source_tasks)
    ]
    source = PairDataset(
        pre=np.concatenate([p.pre for p in parts]),
        post=np.concatenate([p.post for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
    )
    return pretrain_extractor(
        source,
        spec.topology(input_dim),
        spec.pretrain_budget,
        derive_seed(spec.seed, PRETRAIN_STREAM),
    )


def trial_seed_for(spec: ExperimentSpec, arm: str, k: int, m: int, trial_index: int) -> int:
    return derive_seed(spec.seed, TRIAL_STREAM, ARMS.index(arm), k, m, trial_index)


def run_trial(
    spec: ExperimentSpec,
    arm: str,
    k: int,
    m: int,
    trial_seed: int,
    trial_index: int = 0,
    context: ExperimentContext | None = None,
) -> TrialReport:
    """Train one ensemble on fresh k-shot/chunk draws and evaluate it.

    Draw, plan, assignment, and training seeds all derive from trial_seed.
    Raises before any training if m chunks of size k do not fit in the
    train-split negatives, and LeakageError if any base-model training row
    maps into the test set.
    """
    if arm not in ARMS:
        raise ValueError(f"unknown arm {arm!r}")
    ctx = context if context is not None else build_context(spec)
    capacity = len(ctx.train.negatives) // k
    if m > capacity:
        raise ValueError(
            f"infeasible trial: m={m} base models need {m} chunks but only "
            f"{capacity} chunks of size k={k} fit in {len(ctx.train.negatives)} "
            "train negatives"
        )
    draw = draw_k_shot(ctx.train, k, derive_seed(trial_seed, DRAW_STREAM))
    plan = make_chunk_plan(ctx.train, k, derive_seed(trial_seed, PLAN_STREAM))
    assignment = assign_chunks(plan, m, derive_seed(trial_seed, ASSIGN_STREAM))

    budget = spec.iteration_budget(arm, k)
    config = dataclasses.replace(
        spec.arm_config(arm),
        iterations=budget,
        seed=derive_seed(trial_seed, TRAIN_STREAM),
    )
    ensemble = train_ensemble(
        ctx.train,
        draw,
        plan,
        assignment,
        config,
        mode=arm,
        topology=spec.topology(ctx.train.dim),
        pretrained=ctx.pretrained,
    )

    # Leakage guard: map train-relative D_i rows to original dataset rows
    # and demand an empty intersection with the test rows.
    overlap = 0
    for i in range(1, m + 1):
        d_i = np.concatenate([draw.indices, plan.chunk(int(assignment.assigned[i - 1]))])
        original = ctx.train_idx[d_i]
        overlap += int(np.intersect1d(original, ctx.test_idx).size)
    if overlap:
        raise LeakageError(f"{overlap} training rows leaked into the test set")

    per_model = member_scores(ensemble, ctx.test.pre, ctx.test.post)
    predictions = (per_model.mean(axis=0) >= 0.5).astype(np.int64)
    accuracy = 100.0 * float(np.mean(predictions == ctx.test.labels))
    calibrations = tuple(
        calibration_errors(records_from_scores(scores, ctx.test.labels))
        for scores in per_model
    )
    return TrialReport(
        trial_index=trial_index,
        arm=arm,
        k=k,
        ensemble_size=m,
        accuracy=accuracy,
        calibrations=calibrations,
        leakage_overlap=overlap,
    )


def _check_feasible(spec: ExperimentSpec, ctx: ExperimentContext) -> None:
    n_neg = len(ctx.train.negatives)
    n_pos = len(ctx.train.positives)
    for k in spec.k_shots:
        if k > n_pos:
            raise ValueError(f"k={k} exceeds the {n_pos} train positives")
        capacity = n_neg // k
        for m in spec.ensemble_sizes:
            if m > capacity:
                raise ValueError(
                    f"infeasible spec: k={k}, |M|={m} needs {m} chunks but the "
                    f"train split holds only {capacity}"
                )


_WORKER_CTX: tuple[ExperimentSpec, ExperimentContext] | None = None


def _worker_init(spec: ExperimentSpec) -> None:
    # Rebuilding the context per worker is deterministic, so no arrays
    # travel between processes.
    global _WORKER_CTX
    _WORKER_CTX = (spec, build_context(spec))


def _worker_run(job: tuple[str, int, int, int, int]) -> dict:
    arm, k, m, trial_index, trial_seed = job
    spec, ctx = _WORKER_CTX
    report = run_trial(spec, arm, k, m, trial_seed, trial_index=trial_index, context=ctx)
    return report.to_record()


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> list[TrialReport]:
    """Run every (arm, k, |M|, trial) cell of the spec.

    Worker count only changes wall time: per-trial seeds are derived from
    the master seed, and results are returned in canonical cell order.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    ctx = build_context(spec)
    _check_feasible(spec, ctx)
    jobs = [
        (arm, k, m, t, trial_seed_for(spec, arm, k, m, t))
        for arm in spec.arms
        for k in spec.k_shots
        for m in spec.ensemble_sizes
        for t in range(spec.trials)
    ]
    if workers == 1:
        reports = [
            run_trial(spec, arm, k, m, seed, trial_index=t, context=ctx)
            for arm, k, m, t, seed in jobs
        ]
    else:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init, initargs=(spec,)
        ) as pool:
            reports = [TrialReport.from_record(r) for r in pool.map(_worker_run, jobs)]
    reports.sort(key=lambda r: (r.arm, r.k, r.ensemble_size, r.trial_index))
    return reports


def summarize(reports: list[TrialReport]) -> SweepSummary:
    """Cell statistics plus ensemble-gain and transfer-gain improvements.

    Cells span the cross product of the arms, k values, and ensemble sizes
    present in the reports; a missing or single-report cell is an error.
    """
    if not reports:
        raise ValueError("no trial reports to summarize")
    arms = sorted({r.arm for r in reports})  # scratch before transfer
    ks = sorted({r.k for r in reports})
    sizes = sorted({r.ensemble_size for r in reports})
    grouped: dict[tuple[str, int, int], list[TrialReport]] = {}
    for r in reports:
        grouped.setdefault((r.arm, r.k, r.ensemble_size), []).append(r)

    cells = []
    for arm in arms:
        for k in ks:
            for m in sizes:
                cell_reports = grouped.get((arm, k, m), [])
                if len(cell_reports) < 2:
                    raise ValueError(
                        f"cell (arm={arm}, k={k}, ensemble_size={m}) has "
                        f"{len(cell_reports)} reports, need >= 2"
                    )
                acc = np.array([r.accuracy for r in cell_reports])
                rms = np.array(
                    [c.rms_error for r in cell_reports for c in r.calibrations]
                )
                mad = np.array(
                    [c.mad_error for r in cell_reports for c in r.calibrations]
                )
                cells.append(
                    CellSummary(
                        arm=arm,
                        k=k,
                        ensemble_size=m,
                        trials=len(cell_reports),
                        mean_acc=float(acc.mean()),
                        std_acc=float(acc.std(ddof=1)),
                        mean_rms_cal=float(rms.mean()),
                        std_rms_cal=float(rms.std(ddof=1)) if rms.size > 1 else 0.0,
                        mean_mad_cal=float(mad.mean()),
                        std_mad_cal=float(mad.std(ddof=1)) if mad.size > 1 else 0.0,
                    )
                )

    summary = SweepSummary(cells=tuple(cells), improvements=())
    improvements = []
    m_low, m_high = sizes[0], sizes[-1]
    if m_low != m_high:
        for arm in arms:
            for k in ks:
                base = summary.cell(arm, k, m_low)
                best = summary.cell(arm, k, m_high)
                if base.mean_error > 0.0:
                    improvements.append(
                        ImprovementRow(
                            kind="ensemble",
                            arm=arm,
                            k=k,
                            from_size=m_low,
                            to_size=m_high,
                            improvement=error_rate_improvement(
                                best.mean_error, base.mean_error
                            ),
                        )
                    )
    if "scratch" in arms and "transfer" in arms:
        for k in ks:
            for m in sizes:
                base = summary.cell("scratch", k, m)
                new = summary.cell("transfer", k, m)
                if base.mean_error > 0.0:
                    improvements.append(
                        ImprovementRow(
                            kind="transfer",
                            arm="transfer",
                            k=k,
                            from_size=m,
                            to_size=m,
                            improvement=error_rate_improvement(
                                new.mean_error, base.mean_error
                            ),
                        )
                    )
    return SweepSummary(cells=tuple(cells), improvements=tuple(improvements))


# --- results files -----------------------------------------------------------

SUMMARY_COLUMNS = (
    "arm",
    "k",
    "ensemble_size",
    "mean_acc",
    "std_acc",
    "mean_rms_cal",
    "std_rms_cal",
    "mean_mad_cal",
    "std_mad_cal",
)


def write_reports_jsonl(reports: list[TrialReport], path: str | Path) -> None:
    """One TrialReport JSON object per line, in the given order."""
    path = Path(path)
    lines = [json.dumps(r.to_record(), sort_keys=True) for r in reports]
    path.write_text("\n".join(lines) + "\n")


def load_reports_jsonl(path: str | Path) -> list[TrialReport]:
    path = Path(path)
    reports = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            reports.append(TrialReport.from_record(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"{path} line {lineno}: malformed trial report: {exc}") from exc
    if not reports:
        raise ValueError(f"{path}: no trial reports found")
    return reports


def summary_csv(summary: SweepSummary) -> str:
    """CSV rendering of the cell table; full float precision via repr."""
    lines = [",".join(SUMMARY_COLUMNS)]
    for c in summary.cells:
        lines.append(
            f"{c.arm},{c.k},{c.ensemble_size},{c.mean_acc!r},{c.std_acc!r},"
            f"{c.mean_rms_cal!r},{c.std_rms_cal!r},{c.mean_mad_cal!r},{c.std_mad_cal!r}"
        )
    return "\n".join(lines) + "\n"


def write_summary_csv(summary: SweepSummary, path: str | Path) -> None:
    Path(path).write_text(summary_csv(summary))
