# main.py

import asyncio
import argparse
import functools
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

from dotenv import load_dotenv
from pydantic import ValidationError

from config import (
    COUPLING_COLUMNS,
    COVARIANCE_COLUMNS,
    DEFAULT_CONFIG_PATH,
    DEFAULT_OUT_DIR,
    EXPERIMENTS,
    LEMMA_COLUMNS,
    NS_COLUMNS,
    POTENTIAL_COLUMNS,
    RI_COLUMNS,
    RUNG_COLUMNS,
    TV_COLUMNS,
)
from models.potential import SceneTables
from models.run_config import RunConfig
from models.samples import NsSample, RiSample
from utils.analysis_utils import (
    ExperimentError,
    covariance_experiment,
    covariance_rows,
    covariance_tv_consistency,
    lemma_ladder,
    lemma_rows,
    lemma_suite,
    rung_rows,
    scaling_experiment,
    scene_tables_for,
    trace_tv_experiment,
    tv_rows,
)
from utils.coupling_utils import coupling_rows, estimate_coupling_failure
from utils.data_utils import OutputPathError, ensure_dir, run_header, save_json, save_rows_to_csv, save_to_gzipped_pickle
from utils.lattice_utils import SceneValidationError, make_configuration, parse_k1_spec
from utils.potential_utils import build_scene_tables, potential_rows
from utils.process_utils import build_ns, build_ri
from utils.replica_utils import run_replicas
from utils.rng_utils import ReplicaStreams, seed_derive
from utils.tracking_utils import log_artifacts, log_metrics, tracked_run

# Load environment variables
load_dotenv()

# --- Logging Setup ---
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(module)s - %(message)s',
    datefmt='%Y-%m-%d %H:%M:%S'
)
logger = logging.getLogger(__name__)


# --- Replica tasks ---
def sample_ri_task(tables: SceneTables, seed: int, replica: int, lean: bool = True) -> RiSample:
    return build_ri(tables, ReplicaStreams(seed, replica), lean=lean)


def sample_ns_task(tables: SceneTables, seed: int, replica: int, method: str = "slt", lean: bool = True) -> NsSample:
    return build_ns(tables, ReplicaStreams(seed, replica), method=method, lean=lean)


def ri_row(sample: RiSample, replica: int, seed: int) -> dict:
    return {
        "replica": replica, "seed": seed, "N1": sample.N1, "Theta": sample.Theta, "N2": sample.N2,
        "Ntot": sample.Ntot, "T": sample.T, "trace": sample.trace.occupied,
    }


def ns_row(sample: NsSample, replica: int, seed: int) -> dict:
    return {"replica": replica, "seed": seed, "Nprime": sample.Nprime, "trace": sample.trace.occupied}


# --- Subcommands ---
def scene_tables(cfg: RunConfig) -> SceneTables:
    K1 = parse_k1_spec(cfg.scene.k1, cfg.scene.d)
    scene = make_configuration(K1, tuple(cfg.scene.xhat), cfg.scene.u)
    return build_scene_tables(scene, rng=seed_derive(cfg.engine.seed, 0, "tables").generator)


class Outputs:
    """Collects written files; every file carries the same run header."""

    def __init__(self, out_dir: str, cfg: RunConfig, fmt: str):
        self.out_dir = ensure_dir(out_dir)
        self.header = run_header(cfg.config_hash(), cfg.engine.seed)
        self.fmt = fmt
        self.paths: List[str] = []

    def table(self, name: str, rows: List[dict], columns: List[str]) -> None:
        if self.fmt == "json":
            self.summary(name, rows)
            return
        self.paths.append(save_rows_to_csv(rows, columns, os.path.join(self.out_dir, f"{name}.csv"), self.header))

    def summary(self, name: str, payload) -> None:
        self.paths.append(save_json(payload, os.path.join(self.out_dir, f"{name}.json"), self.header))


def cmd_potential(cfg: RunConfig, out: Outputs, args) -> Dict[str, float]:
    tables = scene_tables(cfg)
    out.table("potential", potential_rows(tables), POTENTIAL_COLUMNS)
    metrics = {
        "cap": tables.eq.cap, "cap_K1": tables.eq_K1.cap, "q": tables.escape.q, "E_T1": tables.mean_T1,
        "E_T_direct": tables.mean_T_direct, "E_Theta": tables.mean_theta, "E_N": tables.mean_total,
        "a_d": tables.green_a_d, "a_d_closed_form": tables.green_a_d_closed_form,
        "equilibrium_residual": tables.eq.residual,
    }
    out.summary("potential_summary", {**metrics, "exit_method": tables.kernels.exit_method})
    return metrics


def cmd_sample(cfg: RunConfig, out: Outputs, args) -> Dict[str, float]:
    tables = scene_tables(cfg)
    engine = cfg.engine
    lean = engine.memory_lean and not args.dump
    if args.process == "ri":
        task, to_row, columns = functools.partial(sample_ri_task, lean=lean), ri_row, RI_COLUMNS
    else:
        task = functools.partial(sample_ns_task, method=engine.ns_method, lean=lean)
        to_row, columns = ns_row, NS_COLUMNS
    samples = run_replicas(task, tables, engine.seed, engine.replicas, engine.threads)
    rows = [to_row(s, i, engine.seed) for i, s in enumerate(samples)]
    out.table(f"samples_{args.process}", rows, columns)
    if args.dump:
        out.paths.append(save_to_gzipped_pickle(samples, f"samples_{args.process}", out.out_dir))
    count = "Ntot" if args.process == "ri" else "Nprime"
    mean = sum(r[count] for r in rows) / len(rows)
    logger.info(f"Mean excursion count {mean:.4f} (exact {tables.mean_total:.4f})")
    return {"mean_count": mean, "E_N": tables.mean_total}


def cmd_couple(cfg: RunConfig, out: Outputs, args) -> Dict[str, float]:
    tables = scene_tables(cfg)
    engine = cfg.engine
    summary, outcomes = estimate_coupling_failure(
        tables, engine.replicas, engine.seed, threads=engine.threads, keep_records=args.dump
    )
    out.table("coupling", coupling_rows(outcomes), COUPLING_COLUMNS)
    out.summary("coupling_summary", summary)
    if args.dump:
        out.paths.append(save_to_gzipped_pickle(outcomes, "coupling_records", out.out_dir))
    return {"phat": summary.phat, "ci_low": summary.ci_low, "ci_high": summary.ci_high}


def cmd_experiment(cfg: RunConfig, out: Outputs, args) -> Dict[str, float]:
    engine, exp = cfg.engine, cfg.experiment
    K1 = parse_k1_spec(cfg.scene.k1, cfg.scene.d)
    u = cfg.scene.u
    name = args.experiment

    if name == "lemmas":
        report = lemma_suite(lemma_ladder(K1, exp.lemma_radii, u))
        out.table("lemmas", lemma_rows(report), LEMMA_COLUMNS)
        out.summary("lemmas_summary", report.model_dump(exclude={"rungs"}))
        return {"escape_slope": report.escape_fit.slope if report.escape_fit else float("nan")}

    if name == "scaling":
        reports = scaling_experiment(
            K1, u, exp.distances, engine.replicas, engine.seed, engine.threads, exp.levels, exp.radii
        )
        for kind, report in reports.items():
            out.table(f"scaling_{kind}", rung_rows(report), RUNG_COLUMNS)
        out.summary("scaling_summary", {kind: r.model_dump(exclude={"ladder"}) for kind, r in reports.items()})
        return {f"{kind}_slope": r.fitted_slope for kind, r in reports.items()}

    ladder = [scene_tables_for(K1, dist, u, engine.seed) for dist in exp.distances]
    if name == "tv":
        reports = [trace_tv_experiment(t, engine.replicas, engine.seed, engine.threads) for t in ladder]
        out.table("trace_tv", tv_rows(reports), TV_COLUMNS)
        out.summary("trace_tv_summary", reports)
        return {"all_consistent": float(all(r.consistent for r in reports))}

    reports = [covariance_experiment(t, exp.f1, exp.f2, engine.replicas, engine.seed, engine.threads) for t in ladder]
    consistency = covariance_tv_consistency(ladder[0], engine.replicas, engine.seed, engine.threads)
    out.table("covariance", covariance_rows(reports), COVARIANCE_COLUMNS)
    out.summary("covariance_summary", {"consistency": consistency, "holds": consistency.holds})
    return {"max_abs_cov": consistency.max_abs_cov, "consistency_holds": float(consistency.holds)}


COMMANDS = {"potential": cmd_potential, "sample": cmd_sample, "couple": cmd_couple, "experiment": cmd_experiment}


# --- Argument parsing ---
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="noodlesoup - random interlacements versus noodle soup on two distant sets of Z^d."
    )
    parser.add_argument('--config', default=None, help=f'Scene/engine INI file (default: {DEFAULT_CONFIG_PATH} if present).')
    parser.add_argument('--seed', type=int, default=None, help='Master seed.')
    parser.add_argument('--replicas', type=int, default=None, help='Number of replicas.')
    parser.add_argument('--threads', type=int, default=None, help='Worker processes.')
    parser.add_argument('--out', default=None, help='Output directory.')
    parser.add_argument('--format', choices=['csv', 'json'], default='csv', help='Format of the per-row tables.')
    parser.add_argument('--dump', action='store_true', help='Also dump full samples as gzipped pickles.')
    parser.add_argument('--track', action='store_true', help='Log parameters, metrics and outputs to mlflow.')
    parser.add_argument('--verbose', action='store_true', help='Debug logging.')

    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('potential', help='Potential tables of the scene.')
    sample = sub.add_parser('sample', help='Standalone samples of one process.')
    sample.add_argument('process', choices=['ri', 'ns'])
    sub.add_parser('couple', help='Coupled replicas and the coupling failure frequency.')
    experiment = sub.add_parser('experiment', help='Experiment reports.')
    experiment.add_argument('experiment', choices=EXPERIMENTS)
    return parser


def load_run_config(args) -> RunConfig:
    path = args.config or (DEFAULT_CONFIG_PATH if os.path.exists(DEFAULT_CONFIG_PATH) else None)
    cfg = RunConfig.from_file(path) if path else RunConfig()
    return cfg.with_overrides(
        seed=args.seed,
        replicas=args.replicas,
        threads=args.threads,
        experiment=getattr(args, "experiment", None),
    )


def _fail(code: int, error: Exception) -> int:
    print(json.dumps({"error": type(error).__name__, "message": str(error)}), file=sys.stderr)
    return code


async def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        cfg = load_run_config(args)
        out = Outputs(args.out or os.getenv("NOODLESOUP_OUT_DIR", DEFAULT_OUT_DIR), cfg, args.format)
        run_name = args.command if args.command not in ("sample", "experiment") else (
            f"{args.command}-{getattr(args, 'process', None) or args.experiment}"
        )
        logging.info(f"🚀 {run_name}: seed={cfg.engine.seed} replicas={cfg.engine.replicas} threads={cfg.engine.threads}")
        with tracked_run(args.track, run_name, {**cfg.scene.model_dump(), **cfg.engine.model_dump()}):
            metrics = await asyncio.to_thread(COMMANDS[args.command], cfg, out, args)
            log_metrics(args.track, metrics)
            log_artifacts(args.track, out.paths)
    except (ValidationError, SceneValidationError, ExperimentError) as e:
        return _fail(2, e)
    except OutputPathError as e:
        return _fail(3, e)
    except Exception as e:
        logging.error(f"❌ {type(e).__name__}: {e}", exc_info=True)
        return _fail(1, e)

    for path in out.paths:
        logging.info(f"📦 Wrote {path}")
    return 0


def run(argv: Optional[Sequence[str]] = None) -> int:
    return asyncio.run(main(argv))


if __name__ == "__main__":
    sys.exit(run())
