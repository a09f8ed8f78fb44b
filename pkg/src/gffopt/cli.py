"""``gffopt`` command line: dataset, surrogate, calibration, optimization, sweep.

Every subcommand reads the same run configuration (JSON file plus flag
overrides). Outputs land under ``--out`` and carry the SHA-256 of the
configuration, either as a ``# config_sha256=...`` first line (CSV) or a
``config_sha256`` key (JSON). Files are written as ``<name>.partial`` and
renamed once complete.

Exit codes: 0 success, 1 usage error, 2 computation failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import sys
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import edfa, link, optimizer, perf
from .nn import network_to_dict
from .exceptions import (
    CalibrationError,
    GFFInfeasibleError,
    NonFiniteGradientError,
    ShapeError,
    UsageError,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_COMPUTE, EXIT_IO = 0, 1, 2, 3
STAGES = ("gen", "train", "calibrate", "optimize", "report")
REFERENCE_GFF_REDUCTION_PCT = 86.0
REFERENCE_GAIN_PCT_F7 = 100.0 * 3.5 / 31.3


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    dataset: str | None = None  # existing CSV; generated under ``out`` when absent
    count: int = edfa.DEFAULT_ROWS
    surrogate_hidden: int = 100
    surrogate_epochs: int = 60
    surrogate_lr: float = 3e-3
    surrogate_split: float = 0.8
    target_km: float = link.TARGET_KM
    f_list: list = field(default_factory=lambda: list(range(2, 11)))
    nf_db: float | str = "calibrate"
    target_capacity_tbps: float = perf.CONVENTIONAL_CAPACITY_TBPS
    gamma_per_w_km: float = 1.3
    beta2_ps2_per_km: float = -21.7
    episodes: int = 100
    max_steps: int = 300
    lr: float = 3e-4

    # path fields do not change any result, so they are left out of the hash
    _UNHASHED = ("out", "dataset")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(doc) - known
        if extra:
            raise UsageError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not isinstance(self.seed, int) or self.seed < 0:
            raise UsageError("seed must be a non-negative integer")
        if self.count < 1 or self.episodes < 0 or self.max_steps < 1:
            raise UsageError("count, episodes and max_steps must be positive")
        if not self.f_list or any(int(f) != f or f < 1 for f in self.f_list):
            raise UsageError(f"f_list must hold integers >= 1, got {self.f_list}")
        if not (self.nf_db == "calibrate" or isinstance(self.nf_db, (int, float))):
            raise UsageError("nf_db must be a number or 'calibrate'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        doc = {k: v for k, v in self.to_dict().items() if k not in self._UNHASHED}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    @property
    def nli(self) -> perf.NliParams:
        return perf.NliParams(self.gamma_per_w_km, self.beta2_ps2_per_km)


def stage_seed(root: int, label: str) -> int:
    """Independent per-stage seed from the root seed and a fixed label."""
    ss = np.random.SeedSequence(root, spawn_key=(zlib.crc32(label.encode()),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _f_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--f", type=_f_list, dest="f_list", help="GFF frequencies, e.g. 2,3,7")
    common.add_argument("--episodes", type=int)
    common.add_argument("--max-steps", type=int, dest="max_steps")
    common.add_argument("--quiet", action="store_true")

    p = _Parser(prog="gffopt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    g = sub.add_parser("gen-data", parents=[common], help="write the synthetic amplifier dataset")
    g.add_argument("--count", type=int)
    sub.add_parser("train-edfa", parents=[common], help="fit the amplifier surrogate")
    sub.add_parser("calibrate", parents=[common], help="fit the noise figure to the conventional link")
    sub.add_parser("optimize", parents=[common], help="run the launch-spectrum optimizer for each f")
    sub.add_parser("report", parents=[common], help="assemble the sweep table from optimizer outputs")
    sub.add_parser("sweep", parents=[common], help="optimize and report over the f list")
    pl = sub.add_parser("pipeline", parents=[common], help="all stages in order")
    pl.add_argument("--count", type=int)
    return p


def load_config(args) -> RunConfig:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"{args.config}: not valid JSON ({e})")
        if not isinstance(doc, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
    for key in ("seed", "out", "f_list", "episodes", "max_steps", "count"):
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    return RunConfig.from_dict(doc)


class Run:
    """Output layout and helpers for one configuration."""

    def __init__(self, cfg: RunConfig, quiet: bool = False):
        self.cfg = cfg
        self.quiet = quiet
        self.out = Path(cfg.out)
        self.digest = cfg.digest()

    def say(self, msg: str) -> None:
        if not self.quiet:
            print(msg, flush=True)

    def path(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    @property
    def dataset_path(self) -> Path:
        return Path(self.cfg.dataset) if self.cfg.dataset else self.path("dataset.csv")

    def publish(self, path: Path, writer) -> Path:
        """Run ``writer(tmp_path)`` then move the finished file into place."""
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".partial")
        writer(tmp)
        os.replace(tmp, path)
        return path

    def write_json(self, path: Path, doc: dict) -> Path:
        doc = dict(doc, config_sha256=self.digest)
        return self.publish(path, lambda p: p.write_text(json.dumps(doc, indent=1, sort_keys=True)))

    @property
    def comment(self) -> str:
        return f"config_sha256={self.digest}"

    def read_json(self, path: Path) -> dict:
        doc = json.loads(path.read_text())
        if doc.get("config_sha256") != self.digest:
            log.warning("%s was produced by a different configuration", path)
        return doc


# -- stages -------------------------------------------------------------------


def stage_gen(run: Run) -> Path:
    cfg = run.cfg
    ds = edfa.generate_dataset(cfg.count, seed=stage_seed(cfg.seed, "gen"))
    path = run.publish(run.path("dataset.csv"), lambda p: edfa.write_dataset_csv(ds, p, run.comment))
    chk = ds.check()
    run.say(f"[gen] {len(ds)} rows -> {path}")
    run.say("[gen] constraint violations: " + ", ".join(f"{k}={v}" for k, v in chk.items()))
    return path


def stage_train(run: Run) -> edfa.SurrogateModel:
    cfg = run.cfg
    ds = edfa.read_dataset_csv(run.dataset_path)
    model, held_out = edfa.train_surrogate(
        ds,
        split=cfg.surrogate_split,
        seed=stage_seed(cfg.seed, "train"),
        hidden=cfg.surrogate_hidden,
        epochs=cfg.surrogate_epochs,
        lr=cfg.surrogate_lr,
    )
    run.write_json(run.path("surrogate.json"), model.to_dict())
    run.say(f"[train] {len(ds)} rows, held-out RMSE {held_out:.4f} dB, train RMSE {model.rmse_db['train']:.4f} dB")
    return model


def load_surrogate(run: Run) -> edfa.SurrogateModel:
    return edfa.SurrogateModel.from_dict(run.read_json(run.path("surrogate.json")))


def stage_calibrate(run: Run, model=None) -> perf.Calibration:
    cfg = run.cfg
    model = model or load_surrogate(run)
    params = cfg.nli
    if cfg.nf_db == "calibrate":
        cal = perf.calibrate_noise_figure(model, cfg.target_capacity_tbps, params=params)
    else:
        nf = float(cfg.nf_db)
        rep = perf.evaluate(link.LaunchProfile.flat(perf.CALIBRATION_TOP_DBM), link.design_link(1), model, nf, params)
        cal = perf.Calibration(nf, rep.capacity_tbps, cfg.target_capacity_tbps, 0,
                               perf.nli_noise_fraction(model, nf, 18.0, params))
    run.write_json(run.path("calibration.json"), cal.to_dict())
    run.say(
        f"[calibrate] nf {cal.nf_db:.4f} dB -> {cal.capacity_tbps:.3f} Tb/s conventional "
        f"({cal.iterations} bisection steps); NLI share at 18 dBm TOP {100 * cal.nli_fraction_18dbm:.1f}%"
    )
    return cal


def load_calibration(run: Run) -> perf.Calibration:
    doc = run.read_json(run.path("calibration.json"))
    doc.pop("config_sha256", None)
    return perf.Calibration(**doc)


def optimize_one(run: Run, f: int, model, cal: perf.Calibration) -> dict:
    cfg = run.cfg
    design = link.design_link(f, target_km=cfg.target_km)
    env = optimizer.LinkEnv(design, model, cal.nf_db, cfg.nli)
    ep = optimizer.EpisodeConfig(cfg.episodes, cfg.max_steps, 1.0, cfg.lr, stage_seed(cfg.seed, f"optimize-f{f}"))
    res = optimizer.train(env, ep)
    d = run.path(f"f{f}")
    run.publish(d / "training_log.csv", lambda p: optimizer.write_training_log(res, p, run.comment))
    pol = dict(network_to_dict(res.policy.net), kind="policy")
    run.write_json(d / "policy.json", pol)
    summary = dict(design.summary(), best_capacity_tbps=res.best_capacity, evaluations=res.evaluations,
                   envelope_violations=env.runner.envelope_violations)
    if res.best_spectrum is None:
        summary["feasible"] = False
        run.say(f"[optimize] f={f}: {design.amplifiers} amplifiers, no feasible spectrum visited")
    else:
        summary["feasible"] = True
        run.publish(d / "spectrum.csv", lambda p: optimizer.write_spectrum(res.best_spectrum, p, comment=run.comment))
        rep = optimizer.evaluate_optimized(res.best_spectrum, design, model, cal.nf_db, cfg.nli)
        doc = rep.to_dict()
        doc["metadata"]["optimized_excursion_db"] = res.best_spectrum.excursion_db
        run.write_json(d / "report.json", doc)
        run.say(
            f"[optimize] f={f}: {design.amplifiers} amplifiers, best {rep.capacity_tbps:.3f} Tb/s, "
            f"excursion {res.best_spectrum.excursion_db:.2f} dB"
        )
    run.write_json(d / "summary.json", summary)
    return summary


def stage_optimize(run: Run, model=None, cal=None) -> None:
    model = model or load_surrogate(run)
    cal = cal or load_calibration(run)
    for f in sorted(set(run.cfg.f_list)):
        optimize_one(run, f, model, cal)


SWEEP_COLUMNS = [
    "f",
    "amplifiers",
    "gffs",
    "flat_capacity_tbps",
    "optimized_capacity_tbps",
    "gain_vs_conventional_pct",
    "gff_reduction_pct",
]


def sweep_row(design: link.LinkDesign, flat_tbps: float, opt_tbps: float, conventional_tbps: float,
              conventional_gffs: int) -> dict:
    return {
        "f": design.gff_frequency,
        "amplifiers": design.amplifiers,
        "gffs": design.gffs,
        "flat_capacity_tbps": flat_tbps,
        "optimized_capacity_tbps": opt_tbps,
        "gain_vs_conventional_pct": 100.0 * (opt_tbps / conventional_tbps - 1.0),
        "gff_reduction_pct": 100.0 * (1.0 - design.gffs / conventional_gffs),
    }


def _capacity_or_nan(launch, design, model, nf, params) -> float:
    try:
        return perf.evaluate(launch, design, model, nf, params).capacity_tbps
    except GFFInfeasibleError:
        return math.nan


def stage_report(run: Run, model=None, cal=None) -> list[dict]:
    cfg = run.cfg
    model = model or load_surrogate(run)
    cal = cal or load_calibration(run)
    flat = link.LaunchProfile.flat(perf.CALIBRATION_TOP_DBM)
    conv = link.design_link(1, target_km=cfg.target_km)
    conv_tbps = perf.evaluate(flat, conv, model, cal.nf_db, cfg.nli).capacity_tbps
    rows = []
    for f in sorted(set(cfg.f_list)):
        design = link.design_link(f, target_km=cfg.target_km)
        spectrum_csv = run.path(f"f{f}", "spectrum.csv")
        opt_tbps = math.nan
        if spectrum_csv.exists():
            opt_tbps = _capacity_or_nan(optimizer.read_spectrum(spectrum_csv), design, model, cal.nf_db, cfg.nli)
        flat_tbps = _capacity_or_nan(flat, design, model, cal.nf_db, cfg.nli)
        rows.append(sweep_row(design, flat_tbps, opt_tbps, conv_tbps, conv.gffs))

    def write(p):
        with open(p, "w", newline="") as fh:
            fh.write(f"# {run.comment}\n")
            w = csv.DictWriter(fh, SWEEP_COLUMNS)
            w.writeheader()
            for r in rows:
                w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})

    path = run.publish(run.path("sweep.csv"), write)
    run.say(f"[report] conventional flat launch {conv_tbps:.3f} Tb/s over {conv.amplifiers} amplifiers")
    for r in rows:
        run.say(
            f"[report] f={r['f']:>2}: {r['amplifiers']} amps, {r['gffs']} GFFs, flat {r['flat_capacity_tbps']:.3f}, "
            f"optimized {r['optimized_capacity_tbps']:.3f} Tb/s, gain {r['gain_vs_conventional_pct']:+.1f}%"
        )
    summary = {"conventional_capacity_tbps": conv_tbps, "rows": rows}
    f7 = next((r for r in rows if r["f"] == 7), None)
    if f7 is not None:
        summary["f7"] = {
            "gff_reduction_pct": f7["gff_reduction_pct"],
            "reference_gff_reduction_pct": REFERENCE_GFF_REDUCTION_PCT,
            "gain_vs_conventional_pct": f7["gain_vs_conventional_pct"],
            "reference_gain_pct": REFERENCE_GAIN_PCT_F7,
        }
        run.say(
            f"[report] f=7: GFF reduction {f7['gff_reduction_pct']:.1f}% (reference {REFERENCE_GFF_REDUCTION_PCT:.0f}%), "
            f"capacity gain {f7['gain_vs_conventional_pct']:+.1f}% (reference {REFERENCE_GAIN_PCT_F7:.1f}%)"
        )
    run.write_json(run.path("summary.json"), summary)
    run.say(f"[report] sweep table -> {path}")
    return rows


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


# -- entry point ----------------------------------------------------------------


def run_command(args) -> None:
    cfg = load_config(args)
    run = Run(cfg, args.quiet)
    run.out.mkdir(parents=True, exist_ok=True)
    run.write_json(run.path("config.json"), cfg.to_dict())
    cmd = args.command
    stage = cmd
    try:
        if cmd == "gen-data":
            stage_gen(run)
        elif cmd == "train-edfa":
            stage_train(run)
        elif cmd == "calibrate":
            stage_calibrate(run)
        elif cmd == "optimize":
            stage_optimize(run)
        elif cmd == "report":
            stage_report(run)
        elif cmd == "sweep":
            model, cal = load_surrogate(run), load_calibration(run)
            stage = "optimize"
            stage_optimize(run, model, cal)
            stage = "report"
            stage_report(run, model, cal)
        elif cmd == "pipeline":
            run.say("stages: " + " -> ".join(STAGES))
            stage = "gen"
            if cfg.dataset is None:
                stage_gen(run)
            stage = "train"
            model = stage_train(run)
            stage = "calibrate"
            cal = stage_calibrate(run, model)
            stage = "optimize"
            stage_optimize(run, model, cal)
            stage = "report"
            stage_report(run, model, cal)
    except Exception as e:
        e.stage = stage
        raise


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"gffopt: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        run_command(args)
    except UsageError as e:
        print(f"gffopt: usage error{_where(e)}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CalibrationError, GFFInfeasibleError, NonFiniteGradientError, ShapeError, FloatingPointError) as e:
        print(f"gffopt: computation failed{_where(e)}: {e}", file=sys.stderr)
        return EXIT_COMPUTE
    except OSError as e:
        print(f"gffopt: I/O error{_where(e)}: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _where(e) -> str:
    stage = getattr(e, "stage", None)
    return f" in stage {stage}" if stage else ""


if __name__ == "__main__":
    sys.exit(main())
