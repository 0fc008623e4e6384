"""Command-line front end: generate data, run sweeps, render reports.

Subcommands: `generate` (synthetic dataset in manifest format), `sweep`
(full experiment grid to JSON-lines + CSV), `report` (re-render results with
error-rate improvements and the calibration table), and `calibrate`
(|M|=1 calibration measurement only). Configuration is an INI file whose
defaults are all pre-filled; flags override the seed and trial count. Every
output is deterministic given config + seed.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from pairbag.data import SyntheticSpec, generate_synthetic, save_manifest
from pairbag.harness import (
    CellSummary,
    ExperimentSpec,
    ImprovementRow,
    SUMMARY_COLUMNS,
    SweepSummary,
    error_rate_improvement,
    load_reports_jsonl,
    run_experiment,
    summarize,
    summary_csv,
    write_reports_jsonl,
    write_summary_csv,
)
from pairbag.optimize import TrainConfig

log = logging.getLogger("pairbag")

DEFAULT_INI = """
[data]
d = 16
n_pos = 200
n_neg = 2000
separation = 8.0
noise_scale = 1.0
manifest =

[model]
extractor_hidden = 128, 64
head_hidden = 128

[train]
learning_rate = 0.001
alpha = 0.1
temperature = 0.0
adam_beta1 = 0.9
adam_beta2 = 0.999
adam_eps = 1e-8

[budgets]
scratch_5 = 100
scratch_50 = 130
transfer_5 = 20
transfer_50 = 50

[experiment]
k_shots = 5, 50
ensemble_sizes = 1, 5, 10, 15, 20
arms = scratch, transfer
trials = 200
test_fraction = 0.3
seed = 2024
pretrain_budget = 300
source_size = 1000
source_tasks = 16
"""


@dataclass(frozen=True)
class CliConfig:
    """Parsed command-line state shared by the subcommands."""

    subcommand: str
    config_path: str | None
    out_dir: Path
    workers: int
    verbosity: int

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def load_config(path: str | None) -> configparser.ConfigParser:
    """Built-in defaults, overlaid with the user's INI file when given."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string(DEFAULT_INI)
    if path is not None:
        with open(path) as handle:
            parser.read_file(handle)
    return parser


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in text.split(",") if part.strip())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _budgets(cfg: configparser.ConfigParser) -> tuple[tuple[str, int, int], ...]:
    rows = []
    for key, value in cfg.items("budgets"):
        arm, _, k = key.rpartition("_")
        if not arm:
            raise ValueError(f"budget key {key!r} is not of the form <arm>_<k>")
        rows.append((arm, int(k), int(value)))
    return tuple(sorted(rows))


def build_spec(
    cfg: configparser.ConfigParser,
    seed: int | None = None,
    trials: int | None = None,
) -> ExperimentSpec:
    """Translate an INI config (plus flag overrides) into an ExperimentSpec."""
    exp = cfg["experiment"]
    master_seed = seed if seed is not None else exp.getint("seed")
    manifest = cfg.get("data", "manifest", fallback="").strip()
    if manifest:
        source: SyntheticSpec | str = manifest
    else:
        source = SyntheticSpec(
            d=cfg.getint("data", "d"),
            n_pos=cfg.getint("data", "n_pos"),
            n_neg=cfg.getint("data", "n_neg"),
            separation=cfg.getfloat("data", "separation"),
            noise_scale=cfg.getfloat("data", "noise_scale"),
            seed=master_seed,
        )
    train = TrainConfig(
        iterations=0,
        learning_rate=cfg.getfloat("train", "learning_rate"),
        alpha=cfg.getfloat("train", "alpha"),
        temperature=cfg.getfloat("train", "temperature"),
        adam_beta1=cfg.getfloat("train", "adam_beta1"),
        adam_beta2=cfg.getfloat("train", "adam_beta2"),
        adam_eps=cfg.getfloat("train", "adam_eps"),
    )
    return ExperimentSpec(
        source=source,
        k_shots=_int_list(exp["k_shots"]),
        ensemble_sizes=_int_list(exp["ensemble_sizes"]),
        arms=_str_list(exp["arms"]),
        trials=trials if trials is not None else exp.getint("trials"),
        test_fraction=exp.getfloat("test_fraction"),
        seed=master_seed,
        scratch_config=train,
        transfer_config=train,
        budgets=_budgets(cfg),
        extractor_hidden=_int_list(cfg.get("model", "extractor_hidden")),
        head_hidden=cfg.getint("model", "head_hidden"),
        pretrain_budget=exp.getint("pretrain_budget"),
        source_size=exp.getint("source_size"),
        source_tasks=exp.getint("source_tasks"),
    )


# --- rendering ----------------------------------------------------------------


def _render_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def render_cell_table(summary: SweepSummary) -> str:
    """Accuracy table: one row per k, one column per arm/|M| cell."""
    arms = sorted({c.arm for c in summary.cells})
    ks = sorted({c.k for c in summary.cells})
    sizes = sorted({c.ensemble_size for c in summary.cells})
    header = ["k"] + [f"{arm} |M|={m}" for arm in arms for m in sizes]
    rows = []
    for k in ks:
        row = [str(k)]
        for arm in arms:
            for m in sizes:
                cell = summary.cell(arm, k, m)
                row.append(f"{cell.mean_acc:.2f} ({cell.std_acc:.2f})")
        rows.append(row)
    return _render_table(header, rows)


def render_calibration_table(summary: SweepSummary) -> str:
    """Calibration table over base models, rows = k, columns = arm metrics."""
    arms = sorted({c.arm for c in summary.cells})
    ks = sorted({c.k for c in summary.cells})
    m0 = min(c.ensemble_size for c in summary.cells)
    header = ["k"]
    for arm in arms:
        header += [f"{arm} RMS", f"{arm} MAD"]
    rows = []
    for k in ks:
        row = [str(k)]
        for arm in arms:
            cell = summary.cell(arm, k, m0)
            row.append(f"{cell.mean_rms_cal:.2f} (+-{cell.std_rms_cal:.2f})")
            row.append(f"{cell.mean_mad_cal:.2f} (+-{cell.std_mad_cal:.2f})")
        rows.append(row)
    return _render_table(header, rows)


def improvements_csv(summary: SweepSummary) -> str:
    lines = ["kind,arm,k,from_size,to_size,improvement"]
    for r in summary.improvements:
        lines.append(
            f"{r.kind},{r.arm},{r.k},{r.from_size},{r.to_size},{r.improvement!r}"
        )
    return "\n".join(lines) + "\n"


def load_summary_csv(path: Path) -> SweepSummary:
    """Rebuild a SweepSummary from a summary/report cells CSV."""
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines or lines[0].split(",") != list(SUMMARY_COLUMNS):
        raise ValueError(f"{path}: not a summary CSV (bad header)")
    if len(lines) == 1:
        raise ValueError(f"{path}: summary CSV has no rows")
    cells = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(SUMMARY_COLUMNS):
            raise ValueError(f"{path} line {lineno}: expected {len(SUMMARY_COLUMNS)} fields")
        try:
            cells.append(
                CellSummary(
                    arm=parts[0],
                    k=int(parts[1]),
                    ensemble_size=int(parts[2]),
                    trials=0,
                    mean_acc=float(parts[3]),
                    std_acc=float(parts[4]),
                    mean_rms_cal=float(parts[5]),
                    std_rms_cal=float(parts[6]),
                    mean_mad_cal=float(parts[7]),
                    std_mad_cal=float(parts[8]),
                )
            )
        except ValueError as exc:
            raise ValueError(f"{path} line {lineno}: {exc}") from exc
    summary = SweepSummary(cells=tuple(cells), improvements=())
    return SweepSummary(cells=tuple(cells), improvements=_improvements_from_cells(summary))


def _improvements_from_cells(summary: SweepSummary) -> tuple[ImprovementRow, ...]:
    arms = sorted({c.arm for c in summary.cells})
    ks = sorted({c.k for c in summary.cells})
    sizes = sorted({c.ensemble_size for c in summary.cells})
    rows = []
    if sizes[0] != sizes[-1]:
        for arm in arms:
            for k in ks:
                base = summary.cell(arm, k, sizes[0])
                best = summary.cell(arm, k, sizes[-1])
                if base.mean_error > 0.0:
                    rows.append(
                        ImprovementRow(
                            kind="ensemble",
                            arm=arm,
                            k=k,
                            from_size=sizes[0],
                            to_size=sizes[-1],
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
                    rows.append(
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
    return tuple(rows)


# --- subcommands ---------------------------------------------------------------


def cmd_generate(cli: CliConfig, args: argparse.Namespace) -> int:
    cfg = load_config(cli.config_path)
    seed = args.seed if args.seed is not None else cfg.getint("experiment", "seed")
    spec = SyntheticSpec(
        d=cfg.getint("data", "d"),
        n_pos=cfg.getint("data", "n_pos"),
        n_neg=cfg.getint("data", "n_neg"),
        separation=cfg.getfloat("data", "separation"),
        noise_scale=cfg.getfloat("data", "noise_scale"),
        seed=seed,
    )
    dataset = generate_synthetic(spec)
    cli.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = save_manifest(dataset, cli.out_dir)
    print(
        f"wrote {len(dataset)} pairs ({len(dataset.positives)} positive, "
        f"{len(dataset.negatives)} negative, d={dataset.dim}) to {manifest}"
    )
    return 0


def cmd_sweep(cli: CliConfig, args: argparse.Namespace) -> int:
    cfg = load_config(cli.config_path)
    spec = build_spec(cfg, seed=args.seed, trials=args.trials)
    log.info(
        "sweep: %d arms x %d k x %d sizes x %d trials",
        len(spec.arms), len(spec.k_shots), len(spec.ensemble_sizes), spec.trials,
    )
    reports = run_experiment(spec, workers=cli.workers)
    summary = summarize(reports)
    cli.out_dir.mkdir(parents=True, exist_ok=True)
    write_reports_jsonl(reports, cli.out_dir / "results.jsonl")
    write_summary_csv(summary, cli.out_dir / "summary.csv")
    print(render_cell_table(summary))
    print()
    for row in summary.improvements:
        print(row.describe())
    print(f"\nwrote {cli.out_dir / 'results.jsonl'} and {cli.out_dir / 'summary.csv'}")
    return 0


def cmd_report(cli: CliConfig, args: argparse.Namespace) -> int:
    results = Path(args.results)
    if results.suffix == ".csv":
        summary = load_summary_csv(results)
    else:
        summary = summarize(load_reports_jsonl(results))
    out_dir = cli.out_dir if args.out is not None else results.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report_cells.csv").write_text(summary_csv(summary))
    (out_dir / "report_improvements.csv").write_text(improvements_csv(summary))
    print(render_cell_table(summary))
    print()
    print(render_calibration_table(summary))
    print()
    for row in summary.improvements:
        print(row.describe())
    return 0


def cmd_calibrate(cli: CliConfig, args: argparse.Namespace) -> int:
    cfg = load_config(cli.config_path)
    cfg.set("experiment", "ensemble_sizes", "1")
    spec = build_spec(cfg, seed=args.seed, trials=args.trials)
    reports = run_experiment(spec, workers=cli.workers)
    summary = summarize(reports)
    cli.out_dir.mkdir(parents=True, exist_ok=True)
    write_reports_jsonl(reports, cli.out_dir / "calibration.jsonl")
    lines = ["arm,k,mean_rms,std_rms,mean_mad,std_mad"]
    for c in summary.cells:
        lines.append(
            f"{c.arm},{c.k},{c.mean_rms_cal!r},{c.std_rms_cal!r},"
            f"{c.mean_mad_cal!r},{c.std_mad_cal!r}"
        )
    (cli.out_dir / "calibration.csv").write_text("\n".join(lines) + "\n")
    print(render_calibration_table(summary))
    print(f"\nwrote {cli.out_dir / 'calibration.jsonl'} and {cli.out_dir / 'calibration.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pairbag",
        description="Balanced bagging-by-partitioning for k-shot pair classification.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p: argparse.ArgumentParser, out_default: str) -> None:
        p.add_argument("--config", help="INI config file (defaults are built in)")
        p.add_argument("--out", help=f"output directory (default: {out_default})")
        p.add_argument("--workers", type=_positive_int, default=1,
                       help="parallel trial workers (default: 1)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--trials", type=_positive_int, help="override the trial count")
        p.add_argument("-v", "--verbose", action="count", default=0,
                       help="increase log verbosity")
        p.set_defaults(out_default=out_default)

    p_gen = sub.add_parser("generate", help="write a synthetic dataset in manifest format")
    common(p_gen, "dataset")
    p_gen.set_defaults(func=cmd_generate)

    p_sweep = sub.add_parser("sweep", help="run the full experiment grid")
    common(p_sweep, "results")
    p_sweep.set_defaults(func=cmd_sweep)

    p_rep = sub.add_parser("report", help="render results as tables and CSV")
    common(p_rep, "results")
    p_rep.add_argument("--results", required=True,
                       help="results.jsonl from sweep, or a summary CSV")
    p_rep.set_defaults(func=cmd_report)

    p_cal = sub.add_parser("calibrate", help="measure |M|=1 calibration only")
    common(p_cal, "results")
    p_cal.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cli = CliConfig(
            subcommand=args.subcommand,
            config_path=args.config,
            out_dir=Path(args.out if args.out is not None else args.out_default),
            workers=args.workers,
            verbosity=args.verbose,
        )
        return args.func(cli, args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
