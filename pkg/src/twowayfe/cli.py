"""Command-line entry point wiring the library into reproducible pipelines.

Every command reads a declarative JSON config (overridable by flags, with
flags > file > defaults), writes its artifacts atomically into --out, and
drops a run manifest recording the resolved configuration, input digests,
seeds, and outputs. Exit codes: 0 success, 2 config error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from dataclasses import asdict

from . import __version__
from .correct import corrected_decomposition
from .decompose import between_within_split, decompose_variance
from .diagnose import EVENT_TIMES, event_study, subsample_plot
from .errors import ConfigError, DataError, NumericalError, TwoWayError
from .network import (
    ConnectedSet,
    build_graph,
    connected_set_summary,
    largest_connected_set,
    leave_one_out_connected_set,
)
from .panel import Panel, load_panel, restrict_panel, write_panel
from .simulate import SimConfig, simulate_panel, truth_components
from .solver import Estimates, SolverConfig, estimate

SCHEMA_VERSION = 1
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4

COMMANDS = (
    "validate",
    "connect",
    "estimate",
    "decompose",
    "correct",
    "subsample",
    "eventstudy",
    "simulate",
    "pipeline",
)


# -- atomic artifact plumbing -------------------------------------------


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: str, obj) -> None:
    obj = dict(obj)
    obj.setdefault("schema_version", SCHEMA_VERSION)
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_rows(path: str, header, rows, delimiter=",") -> None:
    lines = [delimiter.join(str(h) for h in header)]
    lines += [delimiter.join(str(v) for v in row) for row in rows]
    _atomic_write(path, "\n".join(lines) + "\n")


def _digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Collects outputs and writes the per-directory manifest."""

    def __init__(self, command: str, out_dir: str, config: dict, inputs: list):
        self.command = command
        self.out_dir = out_dir
        self.config = config
        self.inputs = inputs
        self.outputs: list[str] = []
        self.started = time.time()
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        full = os.path.join(self.out_dir, name)
        self.outputs.append(name)
        return full

    def finish(self) -> None:
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "tool_version": __version__,
            "config": self.config,
            "inputs": {p: _digest(p) for p in self.inputs if p and os.path.exists(p)},
            "seed": self.config.get("seed"),
            "duration_seconds": round(time.time() - self.started, 3),
            "outputs": sorted(self.outputs),
        }
        _atomic_write(
            os.path.join(self.out_dir, "manifest.json"),
            json.dumps(manifest, indent=2, sort_keys=True) + "\n",
        )


# -- config handling -----------------------------------------------------


def _load_config(args) -> dict:
    config: dict = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        try:
            with open(args.config, encoding="utf-8") as fh:
                config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config parse failure: {exc}") from exc
        if not isinstance(config, dict):
            raise ConfigError("config file must hold a JSON object")
    for key, value in vars(args).items():
        if key in ("command", "config", "func") or value is None:
            continue
        config[key] = value
    return config


def _solver_config(config: dict) -> SolverConfig:
    return SolverConfig(
        method=config.get("method", "zigzag"),
        tol=float(config.get("tol", 1e-10)),
        max_iter=int(config.get("max_iter", 10000)),
        normalization=config.get("normalization", "mean_zero"),
        reference_firm=config.get("reference_firm"),
    )


def _schema(config: dict) -> dict:
    schema = dict(config.get("columns", {}))
    if "covariates" in config:
        schema["covariates"] = list(config["covariates"])
    return schema


def _read_panel(config: dict) -> Panel:
    path = config.get("panel")
    if not path:
        raise ConfigError("a panel file is required (--panel)")
    panel, _ = load_panel(path, _schema(config), config.get("delimiter", ","))
    return panel


def _read_set(path: str) -> ConnectedSet:
    if not os.path.exists(path):
        raise ConfigError(f"connected-set file not found: {path}")
    firms, workers = set(), set()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("entity_type"):
            raise ConfigError(f"not a membership file: {path}")
        for line in fh:
            entity, ext_id = line.rstrip("\n").split(",", 1)
            if entity == "firm":
                firms.add(ext_id)
            elif entity == "worker":
                workers.add(ext_id)
    if not firms or not workers:
        raise DataError(f"membership file {path} lists no firms or no workers")
    return ConnectedSet(
        firms=frozenset(firms), workers=frozenset(workers), kind="largest_connected"
    )


# -- per-command artifact writers ------------------------------------------


def _emit_membership(run: Run, name: str, conn: ConnectedSet, panel: Panel) -> None:
    rows = [("firm", f) for f in sorted(conn.firms)]
    rows += [("worker", w) for w in sorted(conn.workers)]
    _write_rows(run.path(f"{name}.csv"), ("entity_type", "external_id"), rows)
    _write_json(run.path(f"{name}_summary.json"), connected_set_summary(panel, conn))


def _emit_estimates(run: Run, est: Estimates) -> None:
    panel = est.panel
    _write_rows(
        run.path("alpha.csv"),
        ("worker", "alpha"),
        [(panel.worker_ids[i], repr(float(est.alpha[i]))) for i in range(panel.n_workers)],
    )
    _write_rows(
        run.path("psi.csv"),
        ("firm", "psi"),
        [(panel.firm_ids[j], repr(float(est.psi[j]))) for j in range(panel.n_firms)],
    )
    _write_rows(
        run.path("beta.csv"),
        ("covariate", "beta"),
        [
            (panel.covariate_names[k], repr(float(est.beta[k])))
            for k in range(panel.covariate_count)
        ],
    )
    _write_json(
        run.path("fit.json"),
        {
            "n_obs": panel.n_obs,
            "n_workers": panel.n_workers,
            "n_firms": panel.n_firms,
            "dof": est.dof,
            "iterations": est.iterations,
            "rss": est.rss,
            "normalization": est.normalization,
            "method": est.method,
        },
    )


def _estimation_inputs(config: dict) -> tuple[Panel, ConnectedSet]:
    panel = _read_panel(config)
    if config.get("set"):
        return panel, _read_set(config["set"])
    conn = largest_connected_set(build_graph(panel))
    covers_all = (
        len(conn.firms) == panel.n_firms and len(conn.workers) == panel.n_workers
    )
    if not covers_all:
        raise DataError(
            "panel is not a single connected set; run `connect` first and pass "
            "the membership file via --set"
        )
    return panel, conn


# -- commands -------------------------------------------------------------


def cmd_validate(config: dict, out_dir: str) -> None:
    run = Run("validate", out_dir, config, [config.get("panel", "")])
    panel, report = load_panel(
        config.get("panel", ""), _schema(config), config.get("delimiter", ",")
    )
    write_panel(panel, run.path("panel.csv"), config.get("delimiter", ","))
    _write_json(run.path("validation_report.json"), report.to_json_dict())
    run.finish()


def cmd_connect(config: dict, out_dir: str) -> None:
    run = Run("connect", out_dir, config, [config.get("panel", "")])
    panel = _read_panel(config)
    graph = build_graph(panel)
    kind = config.get("kind", "largest")
    if kind not in ("largest", "leave_one_out", "both"):
        raise ConfigError(f"unknown connect kind {kind!r}")
    if kind in ("largest", "both"):
        _emit_membership(run, "connected_set", largest_connected_set(graph), panel)
    if kind in ("leave_one_out", "both"):
        _emit_membership(
            run, "leave_one_out_set", leave_one_out_connected_set(graph, panel), panel
        )
    run.finish()


def cmd_estimate(config: dict, out_dir: str) -> None:
    run = Run("estimate", out_dir, config, [config.get("panel", ""), config.get("set", "")])
    panel, conn = _estimation_inputs(config)
    est = estimate(panel, conn, _solver_config(config))
    _emit_estimates(run, est)
    run.finish()


def cmd_decompose(config: dict, out_dir: str) -> None:
    run = Run("decompose", out_dir, config, [config.get("panel", ""), config.get("set", "")])
    panel, conn = _estimation_inputs(config)
    est_panel = restrict_panel(panel, conn.workers, conn.firms)
    est = estimate(est_panel, None, _solver_config(config))
    dec = decompose_variance(est_panel, est, bool(config.get("include_covariates", False)))
    _write_json(run.path("decomposition.json"), dec.to_json_dict())
    split = between_within_split(est_panel)
    _write_json(
        run.path("between_within.json"),
        {
            "between_firm_variance": split.between_firm_variance,
            "within_firm_variance": split.within_firm_variance,
            "total": split.total,
        },
    )
    run.finish()


def cmd_correct(config: dict, out_dir: str) -> None:
    run = Run("correct", out_dir, config, [config.get("panel", ""), config.get("set", "")])
    panel = _read_panel(config)
    method = config.get("correction", "homoskedastic_trace")
    backend = config.get("backend", "exact")
    probes = int(config.get("probes", 100))
    seed = int(config.get("seed", 0))
    graph = build_graph(panel)
    if method == "leave_out":
        conn = leave_one_out_connected_set(graph, panel)
    else:
        conn = largest_connected_set(graph)
    est_panel = restrict_panel(panel, conn.workers, conn.firms)
    est = estimate(est_panel, None, _solver_config(config))
    dec = corrected_decomposition(
        est_panel, est, method, backend=backend, probes=probes, seed=seed
    )
    out = dec.to_json_dict()
    out["estimation_set"] = connected_set_summary(panel, conn)
    out["method"] = method
    out["backend"] = backend
    out["probes"] = probes if backend == "stochastic" else 0
    out["seed"] = seed
    _write_json(run.path(f"corrected_{method}.json"), out)
    plug = decompose_variance(est_panel, est)
    _write_json(run.path("plug_in.json"), plug.to_json_dict())
    run.finish()


def cmd_subsample(config: dict, out_dir: str) -> None:
    run = Run("subsample", out_dir, config, [config.get("panel", "")])
    panel = _read_panel(config)
    shares = config.get("shares", [0.1, 0.2, 0.5, 1.0])
    if isinstance(shares, str):
        shares = [float(s) for s in shares.split(",")]
    points = subsample_plot(
        panel,
        shares=shares,
        replicates=int(config.get("replicates", 1)),
        seed=int(config.get("seed", 0)),
        solver_config=_solver_config(config) if config.get("method") else None,
        threads=int(config.get("threads", 1)),
    )
    _write_rows(
        run.path("subsample.csv"),
        (
            "share_kept",
            "replicate",
            "seed",
            "n_workers",
            "n_firms",
            "n_obs",
            "avg_movers_per_firm",
            "corr_alpha_psi",
            "var_psi",
            "cov2",
            "failed",
        ),
        [
            (
                pt.share_kept,
                pt.replicate,
                pt.seed,
                pt.n_workers,
                pt.n_firms,
                pt.n_obs,
                repr(pt.avg_movers_per_firm),
                repr(pt.corr_alpha_psi),
                repr(pt.var_psi),
                repr(pt.cov2),
                int(pt.failed),
            )
            for pt in points
        ],
    )
    run.finish()


def cmd_eventstudy(config: dict, out_dir: str) -> None:
    run = Run("eventstudy", out_dir, config, [config.get("panel", "")])
    panel = _read_panel(config)
    ranking = config.get("ranking", "firm_mean_wage")
    estimates = None
    if ranking == "estimated_psi":
        conn = largest_connected_set(build_graph(panel))
        panel = restrict_panel(panel, conn.workers, conn.firms)
        estimates = estimate(panel, None, _solver_config(config))
    table = event_study(panel, ranking, int(config.get("quartiles", 4)), estimates)
    rows = []
    for (oq, dq), means in sorted(table.cell_means.items()):
        for et, mean in zip(EVENT_TIMES, means):
            rows.append((oq, dq, et, repr(float(mean)), table.cell_counts[(oq, dq)]))
    _write_rows(
        run.path("eventstudy.csv"),
        ("origin_quartile", "destination_quartile", "event_time", "mean_log_wage", "cell_count"),
        rows,
    )
    run.finish()


def cmd_simulate(config: dict, out_dir: str) -> None:
    run = Run("simulate", out_dir, config, [])
    sim_keys = SimConfig.__dataclass_fields__.keys()
    sim_kwargs = {k: config[k] for k in sim_keys if k in config}
    if "beta_true" in sim_kwargs:
        sim_kwargs["beta_true"] = tuple(sim_kwargs["beta_true"])
    if "noise_sigma2_range" in sim_kwargs:
        sim_kwargs["noise_sigma2_range"] = tuple(sim_kwargs["noise_sigma2_range"])
    try:
        sim_config = SimConfig(**sim_kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad simulate config: {exc}") from exc
    panel, truth = simulate_panel(sim_config)
    write_panel(panel, run.path("panel.csv"))
    rows = [("worker", w, repr(float(a))) for w, a in zip(truth.worker_ids, truth.alpha)]
    rows += [("firm", f, repr(float(p))) for f, p in zip(truth.firm_ids, truth.psi)]
    _write_rows(run.path("truth.csv"), ("entity_type", "external_id", "effect"), rows)
    conn = largest_connected_set(build_graph(panel))
    summary = truth_components(truth, conn, panel).to_json_dict()
    summary["config"] = asdict(sim_config)
    summary["config"]["beta_true"] = list(sim_config.beta_true)
    summary["config"]["noise_sigma2_range"] = list(sim_config.noise_sigma2_range)
    _write_json(run.path("truth_summary.json"), summary)
    run.finish()


def cmd_pipeline(config: dict, out_dir: str) -> None:
    """validate -> connect -> estimate -> decompose -> correct, with per-stage
    artifact directories under --out."""
    base = dict(config)
    cmd_validate(base, os.path.join(out_dir, "validate"))
    clean = dict(base)
    clean["panel"] = os.path.join(out_dir, "validate", "panel.csv")
    clean.pop("columns", None)

    cmd_connect({**clean, "kind": "both"}, os.path.join(out_dir, "connect"))
    set_file = os.path.join(out_dir, "connect", "connected_set.csv")
    cmd_estimate({**clean, "set": set_file}, os.path.join(out_dir, "estimate"))
    cmd_decompose({**clean, "set": set_file}, os.path.join(out_dir, "decompose"))
    cmd_correct(
        {**clean, "correction": "homoskedastic_trace"}, os.path.join(out_dir, "correct")
    )
    if bool(config.get("leave_out", False)):
        cmd_correct(
            {**clean, "correction": "leave_out"}, os.path.join(out_dir, "correct_leave_out")
        )
    run = Run("pipeline", out_dir, config, [config.get("panel", "")])
    run.finish()


HANDLERS = {
    "validate": cmd_validate,
    "connect": cmd_connect,
    "estimate": cmd_estimate,
    "decompose": cmd_decompose,
    "correct": cmd_correct,
    "subsample": cmd_subsample,
    "eventstudy": cmd_eventstudy,
    "simulate": cmd_simulate,
    "pipeline": cmd_pipeline,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twowayfe",
        description="Worker and firm effects from linked employer-employee panels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--panel", help="input panel file")
        p.add_argument("--delimiter", help="field delimiter (default comma)")
        p.add_argument("--seed", type=int, help="top-level random seed")
        p.add_argument("--threads", type=int, help="parallelism cap (default 1)")
        if name in ("estimate", "decompose", "correct", "subsample", "eventstudy", "pipeline"):
            p.add_argument("--method", help="solver method")
            p.add_argument("--tol", type=float, help="solver tolerance")
            p.add_argument("--set", help="membership file from `connect`")
        if name == "connect":
            p.add_argument("--kind", help="largest | leave_one_out | both")
        if name == "correct":
            p.add_argument("--correction", help="homoskedastic_trace | leave_out")
            p.add_argument("--backend", help="exact | stochastic")
            p.add_argument("--probes", type=int, help="stochastic probe count")
        if name == "subsample":
            p.add_argument("--shares", help="comma-separated shares in (0, 1]")
            p.add_argument("--replicates", type=int)
        if name == "eventstudy":
            p.add_argument("--ranking", help="estimated_psi | firm_mean_wage")
            p.add_argument("--quartiles", type=int)
        if name == "pipeline":
            p.add_argument(
                "--leave-out", dest="leave_out", action="store_const", const=True,
                help="also run the leave-out correction stage",
            )
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args)
        out_dir = config.pop("out")
        HANDLERS[args.command](config, out_dir)
        return 0
    except ConfigError as exc:
        _report_error("config", args.command, exc)
        return EXIT_CONFIG
    except DataError as exc:
        _report_error("data", args.command, exc)
        return EXIT_DATA
    except NumericalError as exc:
        _report_error("numerical", args.command, exc)
        return EXIT_NUMERICAL
    except TwoWayError as exc:  # safety net for future subclasses
        _report_error("data", args.command, exc)
        return EXIT_DATA


def _report_error(kind: str, command: str, exc: Exception) -> None:
    sys.stdout.write(
        json.dumps(
            {
                "schema_version": SCHEMA_VERSION,
                "error": {"kind": kind, "command": command, "message": str(exc)},
            }
        )
        + "\n"
    )


if __name__ == "__main__":
    sys.exit(main())
