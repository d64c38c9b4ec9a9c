"""Experiment orchestration over run directories.

A run directory contains:

    config.txt        canonical config snapshot (written first)
    metrics.jsonl     one JSON object per pruning iteration, appended
    summary.json      final status (complete | exhausted | diverged)
    checkpoints/      init.nqsp, rewind.nqsp, iter_NNNN.nqsp [, final.nqsp]

Every checkpoint and metrics row embeds the config hash, so artifacts
from different configs cannot be mixed silently.  Runs are resumable
from the last complete iteration and reproduce an uninterrupted run
bit-for-bit (all randomness is derived from the seed and step counters).
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .observables import MetricsRecord
from .oracle import MAX_ENUM_SPINS, lanczos_ground_energy, toric_ground_energy
from .pruning import TrajectoryState, make_ticket, run_iterative_pruning, train_ticket
from .runconfig import ConfigError, ExperimentConfig, load_config
from .sr import TrainingDiverged

METRICS_SCHEMA_VERSION = 1
CSV_COLUMNS = ["iteration", "n", "rho", "E", "var", "stat_err", "rel_err", "abs_err_per_spin", "m_x", "m_z", "fidelity"]


class ResumeRefusal(RuntimeError):
    pass


class NumericalFailure(RuntimeError):
    pass


@dataclass
class RunArtifacts:
    run_dir: Path
    config: ExperimentConfig
    metrics: list[MetricsRecord]
    status: str


class RunLock:
    """Exclusive ownership of a run directory (stale locks are reclaimed)."""

    def __init__(self, run_dir: Path):
        self.path = Path(run_dir) / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            pid = None
            try:
                pid = int(self.path.read_text().strip())
            except (ValueError, OSError):
                pass
            if pid is not None and _pid_alive(pid):
                raise RuntimeError(f"run directory is locked by running process {pid}") from None
            self.path.unlink(missing_ok=True)
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        with os.fdopen(fd, "w") as f:
            f.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def reference_energy(config: ExperimentConfig) -> float | None:
    """Exact ground energy when available at this size, else None."""
    if config.model_type == "toric":
        return toric_ground_energy(config.L)
    if config.lattice().n_sites <= MAX_ENUM_SPINS:
        return lanczos_ground_energy(config.hamiltonian()).energy
    return None


def _checkpoint_path(run_dir: Path, iteration: int) -> Path:
    return run_dir / "checkpoints" / f"iter_{iteration:04d}.nqsp"


def _read_metrics(run_dir: Path, config_hash: str | None = None, repair: bool = False) -> tuple[list[dict], int]:
    """Parse metrics.jsonl; returns (rows, skipped).  With repair=True a
    trailing partial line is truncated away."""
    path = run_dir / "metrics.jsonl"
    if not path.exists():
        return [], 0
    raw = path.read_bytes()
    rows: list[dict] = []
    skipped = 0
    good_bytes = 0
    for line in raw.splitlines(keepends=True):
        complete = line.endswith(b"\n")
        try:
            row = json.loads(line.decode("utf-8"))
            if not isinstance(row, dict) or "iteration" not in row:
                raise ValueError("not a metrics row")
        except (ValueError, UnicodeDecodeError):
            if complete:
                skipped += 1
                good_bytes += len(line)
            # a partial trailing line is dropped silently (crash remnant)
            continue
        if config_hash is not None and row.get("config") != config_hash:
            skipped += 1
            good_bytes += len(line)
            continue
        rows.append(row)
        good_bytes += len(line)
    if repair and good_bytes != len(raw):
        with open(path, "r+b") as f:
            f.truncate(good_bytes)
    return rows, skipped


def _append_metrics(run_dir: Path, record: MetricsRecord, config_hash: str) -> None:
    row = {"v": METRICS_SCHEMA_VERSION, "config": config_hash}
    row.update(record.to_row())
    with open(run_dir / "metrics.jsonl", "a", encoding="utf-8") as f:
        f.write(json.dumps(row) + "\n")
        f.flush()
        os.fsync(f.fileno())


def _write_summary(run_dir: Path, status: str, config_hash: str, iterations: int, e_ref: float | None, detail: str | None = None) -> None:
    payload = {"status": status, "config": config_hash, "iterations": iterations, "e_ref": e_ref}
    if detail:
        payload["detail"] = detail
    (run_dir / "summary.json").write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def _prepare_run_dir(config: ExperimentConfig, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "checkpoints").mkdir(exist_ok=True)
    snapshot = run_dir / "config.txt"
    if snapshot.exists():
        existing = load_config(snapshot)
        if existing.config_hash() != config.config_hash():
            raise ResumeRefusal(f"config.txt in {run_dir} does not match the requested configuration (hash {existing.config_hash()} != {config.config_hash()})")
    else:
        snapshot.write_text(config.to_text(), encoding="utf-8")


def _load_resume_state(run_dir: Path, config: ExperimentConfig) -> TrajectoryState | None:
    """State of the last complete iteration, or None for a fresh start."""
    ckpt_dir = run_dir / "checkpoints"
    if not (ckpt_dir / "rewind.nqsp").exists():
        if (run_dir / "metrics.jsonl").exists():
            raise ResumeRefusal(f"{run_dir} has a metrics log but no rewind checkpoint; cannot reconstruct state")
        return None
    config_hash = config.config_hash()
    rows, _ = _read_metrics(run_dir, config_hash=None, repair=True)
    for row in rows:
        if row.get("config") != config_hash:
            raise ResumeRefusal(f"metrics row for iteration {row.get('iteration')} carries config hash {row.get('config')}, expected {config_hash}")
    init_ansatz, init_extra = load_checkpoint(ckpt_dir / "init.nqsp")
    rewind_ansatz, rewind_extra = load_checkpoint(ckpt_dir / "rewind.nqsp")
    for name, extra in (("init", init_extra), ("rewind", rewind_extra)):
        if extra.get("config") != config_hash:
            raise ResumeRefusal(f"{name} checkpoint carries config hash {extra.get('config')}, expected {config_hash}")
    complete = 0
    for row in rows:
        it = int(row["iteration"])
        if not _checkpoint_path(run_dir, it).exists():
            raise ResumeRefusal(f"metrics row for iteration {it} has no matching checkpoint in {run_dir}")
        complete = max(complete, it)
    if complete == 0:
        ansatz = rewind_ansatz
    else:
        ansatz, extra = load_checkpoint(_checkpoint_path(run_dir, complete))
        if extra.get("config") != config_hash:
            raise ResumeRefusal(f"iteration {complete} checkpoint carries config hash {extra.get('config')}, expected {config_hash}")
    return TrajectoryState(iteration=complete, ansatz=ansatz, theta_init=init_ansatz.theta, theta_wr=rewind_ansatz.theta)


def run(config: ExperimentConfig, run_dir: str | Path | None = None) -> RunArtifacts:
    """Execute (or continue) the pruning experiment described by config."""
    if run_dir is None:
        run_dir = config.output_dir
    if run_dir is None:
        raise ConfigError(["output_dir is required"])
    run_dir = Path(run_dir)
    _prepare_run_dir(config, run_dir)
    config_hash = config.config_hash()
    with RunLock(run_dir):
        summary_path = run_dir / "summary.json"
        if summary_path.exists():
            summary = json.loads(summary_path.read_text())
            if summary.get("config") == config_hash and summary.get("status") in ("complete", "exhausted"):
                rows, _ = _read_metrics(run_dir, config_hash)
                return RunArtifacts(run_dir, config, [MetricsRecord.from_row(_strip(r)) for r in rows], summary["status"])
        e_ref = reference_energy(config)
        ham = config.hamiltonian()
        arch = config.arch()
        schedule = config.prune
        seed = config.seed
        resume_state = _load_resume_state(run_dir, config)

        def on_pretrained(ansatz, theta_init, theta_wr):
            from .ansatz import MaskedAnsatz

            extra = {"config": config_hash, "iteration": 0, "global_step": schedule.pre_steps, "seed": seed}
            save_checkpoint(run_dir / "checkpoints" / "init.nqsp", MaskedAnsatz(arch, theta_init), extra)
            save_checkpoint(run_dir / "checkpoints" / "rewind.nqsp", ansatz, extra)

        def on_iteration(record, ansatz):
            extra = {
                "config": config_hash,
                "iteration": record.iteration,
                "global_step": schedule.pre_steps + record.iteration * schedule.steps_per_iteration,
                "seed": seed,
            }
            save_checkpoint(_checkpoint_path(run_dir, record.iteration), ansatz, extra)
            _append_metrics(run_dir, record.metrics, config_hash)

        try:
            traj = run_iterative_pruning(
                arch,
                ham,
                schedule,
                config.sampler,
                config.sr,
                seed=seed,
                e_ref=e_ref,
                on_pretrained=on_pretrained,
                on_iteration=on_iteration,
                resume_from=resume_state,
            )
        except TrainingDiverged as exc:
            save_checkpoint(run_dir / "checkpoints" / "diverged.nqsp", exc.snapshot, {"config": config_hash, "step": exc.step, "seed": seed})
            _write_summary(run_dir, "diverged", config_hash, 0, e_ref, detail=str(exc))
            raise NumericalFailure(f"pre-training diverged: {exc}") from exc

        rows, _ = _read_metrics(run_dir, config_hash)
        iterations = max((int(r["iteration"]) for r in rows), default=0)
        if traj.diverged:
            _write_summary(run_dir, "diverged", config_hash, iterations, e_ref, detail=traj.diverged)
            raise NumericalFailure(traj.diverged)
        status = "exhausted" if traj.exhausted else "complete"
        _write_summary(run_dir, status, config_hash, iterations, e_ref)
        return RunArtifacts(run_dir, config, [MetricsRecord.from_row(_strip(r)) for r in rows], status)


def _strip(row: dict) -> dict:
    return {k: v for k, v in row.items() if k not in ("v", "config")}


def resume(run_dir: str | Path) -> RunArtifacts:
    """Continue a partial run from its last complete iteration."""
    run_dir = Path(run_dir)
    snapshot = run_dir / "config.txt"
    if not snapshot.exists():
        raise ResumeRefusal(f"{run_dir} has no config.txt snapshot")
    try:
        config = load_config(snapshot)
    except ConfigError as exc:
        raise ResumeRefusal(f"{run_dir}/config.txt does not parse: {exc}") from exc
    summary_path = run_dir / "summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        if summary.get("config") != config.config_hash():
            raise ResumeRefusal(f"summary config hash {summary.get('config')} does not match snapshot {config.config_hash()}")
        if summary.get("status") in ("complete", "exhausted"):
            rows, _ = _read_metrics(run_dir, config.config_hash())
            return RunArtifacts(run_dir, config, [MetricsRecord.from_row(_strip(r)) for r in rows], summary["status"])
    if not (run_dir / "checkpoints" / "rewind.nqsp").exists():
        raise ResumeRefusal(f"{run_dir} has no complete iteration to resume from (missing rewind checkpoint)")
    return run(config, run_dir)


class _CheckpointTrajectory:
    """Trajectory view over a run directory, for ticket construction."""

    def __init__(self, run_dir: Path, config: ExperimentConfig):
        self.run_dir = Path(run_dir)
        self.config = config
        self.arch = config.arch()
        init_ansatz, _ = load_checkpoint(self.run_dir / "checkpoints" / "init.nqsp")
        rewind_ansatz, _ = load_checkpoint(self.run_dir / "checkpoints" / "rewind.nqsp")
        self.theta_init = init_ansatz.theta
        self.theta_wr = rewind_ansatz.theta

    def record_for(self, iteration: int):
        from types import SimpleNamespace

        path = _checkpoint_path(self.run_dir, iteration)
        if not path.exists():
            raise ResumeRefusal(f"no checkpoint for iteration {iteration} in {self.run_dir}")
        ansatz, _ = load_checkpoint(path)
        return SimpleNamespace(mask=ansatz.mask)


def run_ticket(
    source_dir: str | Path,
    variant: str,
    iteration: int,
    seed: int = 0,
    steps: int = 1000,
    output_dir: str | Path | None = None,
    use_rewind_init: bool = False,
) -> tuple[MetricsRecord, Path | None]:
    """Train a ticket taken from a stored pruning run."""
    source_dir = Path(source_dir)
    config = load_config(source_dir / "config.txt")
    traj = _CheckpointTrajectory(source_dir, config)
    ticket = make_ticket(variant, traj, iteration, seed=seed, use_rewind_init=use_rewind_init)
    e_ref = reference_energy(config)
    metrics, _result = train_ticket(
        ticket, config.hamiltonian(), config.sampler, config.sr, steps, seed=seed, e_ref=e_ref, iteration=iteration
    )
    out = None
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "checkpoints").mkdir(exist_ok=True)
        from dataclasses import replace

        from .runconfig import TicketConfig

        tconfig = replace(
            config,
            ticket=TicketConfig(variant=variant, iteration=iteration, seed=seed, steps=steps, use_rewind_init=use_rewind_init),
            output_dir=str(out),
        )
        (out / "config.txt").write_text(tconfig.to_text(), encoding="utf-8")
        save_checkpoint(out / "checkpoints" / "final.nqsp", ticket, {"config": tconfig.config_hash(), "iteration": iteration, "seed": seed})
        _append_metrics(out, metrics, tconfig.config_hash())
        _write_summary(out, "complete", tconfig.config_hash(), iteration, e_ref)
    return metrics, out


def export_curves(run_dir: str | Path, stream=None) -> tuple[int, int]:
    """Write the scaling-curve CSV for a run; returns (rows, skipped)."""
    if stream is None:
        stream = sys.stdout
    run_dir = Path(run_dir)
    if not (run_dir / "metrics.jsonl").exists():
        raise FileNotFoundError(f"{run_dir} has no metrics log")
    rows, skipped = _read_metrics(run_dir)
    stream.write(",".join(CSV_COLUMNS) + "\n")
    n_written = 0
    for row in sorted(rows, key=lambda r: int(r["iteration"])):
        try:
            vals = [row[c] if c in row and row[c] is not None else "" for c in CSV_COLUMNS]
        except KeyError:
            skipped += 1
            continue
        stream.write(",".join(str(v) for v in vals) + "\n")
        n_written += 1
    return n_written, skipped


def observe_run(run_dir: str | Path, iteration: int | None = None, checkpoint: str | Path | None = None, n_samples: int | None = None, seed: int = 0) -> dict:
    """Sampled observables for a stored checkpoint of a run."""
    from dataclasses import replace as dc_replace

    from .hamiltonian import local_energies
    from .observables import absolute_error_per_spin, energy_stats, magnetization_x, magnetization_z, relative_error
    from .sampler import sample_batch

    run_dir = Path(run_dir)
    config = load_config(run_dir / "config.txt")
    if checkpoint is None:
        if iteration is None:
            checkpoint = run_dir / "checkpoints" / "rewind.nqsp"
        else:
            checkpoint = _checkpoint_path(run_dir, iteration)
    ansatz, extra = load_checkpoint(checkpoint)
    ham = config.hamiltonian()
    scfg = dc_replace(config.sampler, seed=seed)
    if n_samples is not None:
        scfg = dc_replace(scfg, n_samples=n_samples, n_chains=min(scfg.n_chains, n_samples))
    batch = sample_batch(ansatz, scfg)
    e_loc = local_energies(ham, ansatz, batch.configs, batch.log_psis)
    energy, var, stat_err = energy_stats(e_loc)
    out = {
        "checkpoint": str(checkpoint),
        "n": ansatz.ones,
        "rho": ansatz.ones / ansatz.n_sites,
        "E": energy,
        "var": var,
        "stat_err": stat_err,
        "m_x": magnetization_x(ansatz, batch),
        "m_z": magnetization_z(batch),
        "acceptance_rate": batch.acceptance_rate,
    }
    e_ref = reference_energy(config)
    if e_ref is not None:
        out["e_ref"] = e_ref
        out["rel_err"] = relative_error(energy, e_ref)
        out["abs_err_per_spin"] = absolute_error_per_spin(energy, e_ref, ansatz.n_sites)
    return out
