"""Experiment configuration: flat dotted-key text files, validation,
canonical rendering/hashing, and the built-in hyperparameter presets.

Config format: one `section.key=value` per line, `#` comments and blank
lines ignored, no nesting beyond two levels, e.g.

    model.type=tfim
    model.L=4
    model.kappa=3.04438
    arch.type=ffnn
    arch.alpha=8
    sampler.N_s=1024
    sr.eta=8e-3
    sr.lambda=1e-4
    prune.p_r=0.12
    prune.I=51
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

from .ansatz import ArchitectureSpec, FeedForward, ShallowConv
from .hamiltonian import Hamiltonian, ToricCode, TransverseFieldIsing
from .lattice import BOUNDARIES, SquareLattice, ToricLattice
from .pruning import RESETS, STRATEGIES, TICKET_VARIANTS, PruneSchedule
from .sampler import RULES, SamplerConfig
from .sr import SOLVERS, SRConfig


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in errors))
        self.errors = errors


@dataclass(frozen=True)
class TicketConfig:
    variant: str
    iteration: int
    seed: int = 0
    steps: int = 1000
    use_rewind_init: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    model_type: str = "tfim"  # "tfim" | "toric"
    L: int = 4
    boundary: str = "open"
    kappa: float = 3.04438
    arch_type: str = "ffnn"  # "ffnn" | "cnn"
    alpha: float = 8.0
    n_f: int = 4
    k_d: int = 3
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    sr: SRConfig = field(default_factory=SRConfig)
    prune: PruneSchedule = field(default_factory=lambda: PruneSchedule(n_iterations=51))
    ticket: TicketConfig | None = None
    output_dir: str | None = None

    # -- domain objects -----------------------------------------------------

    def lattice(self):
        if self.model_type == "toric":
            return ToricLattice(self.L)
        return SquareLattice(self.L, self.boundary)

    def hamiltonian(self) -> Hamiltonian:
        if self.model_type == "toric":
            return ToricCode(self.lattice())
        return TransverseFieldIsing(self.lattice(), self.kappa)

    def arch(self) -> ArchitectureSpec:
        if self.arch_type == "cnn":
            return ShallowConv(self.lattice(), self.n_f, self.k_d)
        return FeedForward(self.lattice(), self.alpha)

    def default_rule(self) -> str:
        return "mixed_plaquette" if self.model_type == "toric" else "single_flip"

    @property
    def seed(self) -> int:
        return self.sampler.seed

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, sampler=replace(self.sampler, seed=seed))

    # -- canonical text, hash -------------------------------------------------

    def to_items(self) -> dict[str, str]:
        items = {
            "model.type": self.model_type,
            "model.L": str(self.L),
            "arch.type": self.arch_type,
            "sampler.N_s": str(self.sampler.n_samples),
            "sampler.n_chains": str(self.sampler.n_chains),
            "sampler.burn_in_sweeps": str(self.sampler.burn_in_sweeps),
            "sampler.rule": self.sampler.rule,
            "sampler.seed": str(self.sampler.seed),
            "sr.eta": repr(self.sr.eta),
            "sr.lambda": repr(self.sr.diag_shift),
            "sr.solver": self.sr.solver,
            "sr.cg_tol": repr(self.sr.cg_tol),
            "sr.cg_max_iter": str(self.sr.cg_max_iter),
            "sr.dense_threshold": str(self.sr.dense_threshold),
            "prune.p_r": repr(self.prune.p_r),
            "prune.I": str(self.prune.n_iterations),
            "prune.j": str(self.prune.pre_steps),
            "prune.k": str(self.prune.steps_per_iteration),
            "prune.strategy": self.prune.strategy,
            "prune.reset": self.prune.reset,
        }
        if self.model_type == "tfim":
            items["model.boundary"] = self.boundary
            items["model.kappa"] = repr(self.kappa)
        if self.arch_type == "ffnn":
            items["arch.alpha"] = repr(self.alpha)
        else:
            items["arch.n_f"] = str(self.n_f)
            items["arch.k_d"] = str(self.k_d)
        if self.sampler.sweep_length is not None:
            items["sampler.sweep_length"] = str(self.sampler.sweep_length)
        if self.ticket is not None:
            items["ticket.variant"] = self.ticket.variant
            items["ticket.iteration"] = str(self.ticket.iteration)
            items["ticket.seed"] = str(self.ticket.seed)
            items["ticket.steps"] = str(self.ticket.steps)
            items["ticket.use_rewind_init"] = str(self.ticket.use_rewind_init).lower()
        if self.output_dir is not None:
            items["output_dir"] = self.output_dir
        return items

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in sorted(self.to_items().items()))

    def config_hash(self) -> str:
        """Hash of everything except output_dir (runs may be relocated)."""
        items = {k: v for k, v in self.to_items().items() if k != "output_dir"}
        text = "".join(f"{k}={v}\n" for k, v in sorted(items.items()))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_KEY_TYPES: dict[str, type | object] = {
    "model.type": ("tfim", "toric"),
    "model.L": int,
    "model.boundary": BOUNDARIES,
    "model.kappa": float,
    "arch.type": ("ffnn", "cnn"),
    "arch.alpha": float,
    "arch.n_f": int,
    "arch.k_d": int,
    "sampler.N_s": int,
    "sampler.n_chains": int,
    "sampler.burn_in_sweeps": int,
    "sampler.sweep_length": int,
    "sampler.rule": RULES,
    "sampler.seed": int,
    "sr.eta": float,
    "sr.lambda": float,
    "sr.solver": SOLVERS,
    "sr.cg_tol": float,
    "sr.cg_max_iter": int,
    "sr.dense_threshold": int,
    "prune.p_r": float,
    "prune.I": int,
    "prune.j": int,
    "prune.k": int,
    "prune.strategy": STRATEGIES,
    "prune.reset": RESETS,
    "ticket.variant": TICKET_VARIANTS,
    "ticket.iteration": int,
    "ticket.seed": int,
    "ticket.steps": int,
    "ticket.use_rewind_init": _parse_bool,
    "output_dir": str,
}


def parse_config_items(items: dict[str, str]) -> ExperimentConfig:
    """Build a validated ExperimentConfig from flat key/value strings."""
    errors: list[str] = []
    values: dict[str, object] = {}
    for key, raw in items.items():
        spec = _KEY_TYPES.get(key)
        if spec is None:
            errors.append(f"unknown key {key!r}")
            continue
        raw = raw.strip()
        try:
            if isinstance(spec, tuple):
                val = raw.replace("-", "_") if key == "ticket.variant" else raw
                if val not in spec:
                    raise ValueError(f"must be one of {spec}")
                values[key] = val
            else:
                values[key] = spec(raw)
        except ValueError as exc:
            errors.append(f"{key}: {exc}")
    if errors:
        raise ConfigError(errors)

    def get(key, default=None):
        return values.get(key, default)

    model_type = get("model.type", "tfim")
    try:
        sampler = SamplerConfig(
            n_samples=get("sampler.N_s", 1024),
            n_chains=get("sampler.n_chains", 16),
            burn_in_sweeps=get("sampler.burn_in_sweeps", 10),
            sweep_length=get("sampler.sweep_length"),
            rule=get("sampler.rule", "mixed_plaquette" if model_type == "toric" else "single_flip"),
            seed=get("sampler.seed", 0),
        )
    except ValueError as exc:
        errors.append(f"sampler: {exc}")
        sampler = SamplerConfig()
    try:
        sr = SRConfig(
            eta=get("sr.eta", 8e-3),
            diag_shift=get("sr.lambda", 1e-4),
            solver=get("sr.solver", "dense_cholesky"),
            cg_tol=get("sr.cg_tol", 1e-6),
            cg_max_iter=get("sr.cg_max_iter", 1000),
            dense_threshold=get("sr.dense_threshold", 4096),
        )
    except ValueError as exc:
        errors.append(f"sr: {exc}")
        sr = SRConfig()
    try:
        prune = PruneSchedule(
            n_iterations=get("prune.I", 51),
            p_r=get("prune.p_r", 0.05 if get("arch.type", "ffnn") == "cnn" else 0.12),
            pre_steps=get("prune.j", 10_000),
            steps_per_iteration=get("prune.k", 1_000),
            strategy=get("prune.strategy", "magnitude"),
            reset=get("prune.reset", "rewind"),
        )
    except ValueError as exc:
        errors.append(f"prune: {exc}")
        prune = PruneSchedule(n_iterations=51)
    ticket = None
    if any(k.startswith("ticket.") for k in values):
        if "ticket.variant" not in values or "ticket.iteration" not in values:
            errors.append("ticket: variant and iteration are required")
        else:
            ticket = TicketConfig(
                variant=get("ticket.variant"),
                iteration=get("ticket.iteration"),
                seed=get("ticket.seed", 0),
                steps=get("ticket.steps", 1000),
                use_rewind_init=get("ticket.use_rewind_init", False),
            )
    cfg = ExperimentConfig(
        model_type=model_type,
        L=get("model.L", 4),
        boundary=get("model.boundary", "open"),
        kappa=get("model.kappa", 3.04438),
        arch_type=get("arch.type", "ffnn"),
        alpha=get("arch.alpha", 8.0),
        n_f=get("arch.n_f", 4),
        k_d=get("arch.k_d", 3),
        sampler=sampler,
        sr=sr,
        prune=prune,
        ticket=ticket,
        output_dir=get("output_dir"),
    )
    if model_type == "toric" and get("model.boundary") is not None:
        errors.append("model.boundary: toric lattices are always periodic")
    try:
        cfg.hamiltonian()
        cfg.arch()
    except ValueError as exc:
        errors.append(f"model/arch: {exc}")
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config_text(text: str) -> ExperimentConfig:
    items: dict[str, str] = {}
    errors: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected key=value, got {line!r}")
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        if key in items:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        items[key] = value.strip()
    if errors:
        raise ConfigError(errors)
    return parse_config_items(items)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())


# -- built-in presets (hyperparameter tables of the reference experiments) ---

_BASE_TFIM_10 = {"model.type": "tfim", "model.L": "10", "model.kappa": "3.04438"}


def _ffnn_preset(model: dict, alpha: str, iters: str, lam: str = "1e-4", extra: dict | None = None) -> dict:
    d = dict(model)
    d.update({"arch.type": "ffnn", "arch.alpha": alpha, "prune.p_r": "0.12", "prune.I": iters,
              "prune.j": "10000", "prune.k": "1000", "sampler.N_s": "1024", "sr.eta": "8e-3", "sr.lambda": lam})
    d.update(extra or {})
    return d


PRESETS: dict[str, dict[str, str]] = {
    "fig1-cnn": {
        **_BASE_TFIM_10,
        "arch.type": "cnn", "arch.n_f": "4", "arch.k_d": "3",
        "prune.p_r": "0.05", "prune.I": "31", "prune.j": "10000", "prune.k": "1000",
        "sampler.N_s": "1024", "sr.eta": "8e-3", "sr.lambda": "1e-3",
    },
    "fig1-ffnn": _ffnn_preset(_BASE_TFIM_10, "5", "65"),
    "fig2-alpha1": _ffnn_preset(_BASE_TFIM_10, "1", "54"),
    "fig2-alpha2.5": _ffnn_preset(_BASE_TFIM_10, "2.5", "60"),
    "fig2-alpha5": _ffnn_preset(_BASE_TFIM_10, "5", "65"),
    "fig2-kappa-0.1": _ffnn_preset({**_BASE_TFIM_10, "model.kappa": "0.1"}, "5", "65"),
    "fig2-kappa-1": _ffnn_preset({**_BASE_TFIM_10, "model.kappa": "1"}, "5", "65"),
    "fig2-kappa-2": _ffnn_preset({**_BASE_TFIM_10, "model.kappa": "2"}, "5", "65"),
    "fig2-kappa-4": _ffnn_preset({**_BASE_TFIM_10, "model.kappa": "4"}, "5", "65"),
    "fig2-kappa-5": _ffnn_preset({**_BASE_TFIM_10, "model.kappa": "5"}, "5", "65"),
    "fig2-kappa-6": _ffnn_preset({**_BASE_TFIM_10, "model.kappa": "6"}, "5", "65"),
    "fig3-4x4": _ffnn_preset({"model.type": "tfim", "model.L": "4", "model.kappa": "3.04438"}, "8", "51"),
    "fig3-5x5": _ffnn_preset({"model.type": "tfim", "model.L": "5", "model.kappa": "3.04438"}, "8", "58"),
    "fig3-6x6": _ffnn_preset({"model.type": "tfim", "model.L": "6", "model.kappa": "3.04438"}, "8", "64"),
    "fig3-7x7": _ffnn_preset({"model.type": "tfim", "model.L": "7", "model.kappa": "3.04438"}, "8", "69"),
    "fig3-8x8": _ffnn_preset({"model.type": "tfim", "model.L": "8", "model.kappa": "3.04438"}, "8", "65"),
    "fig3-9x9": _ffnn_preset({"model.type": "tfim", "model.L": "9", "model.kappa": "3.04438"}, "8", "74"),
    "fig3-10x10": _ffnn_preset(_BASE_TFIM_10, "8", "74"),
    "fig4-toric-4n": _ffnn_preset({"model.type": "toric", "model.L": "3"}, "4", "47", lam="1e-3"),
    "fig4-toric": _ffnn_preset({"model.type": "toric", "model.L": "3"}, "8", "53", lam="1e-3"),
    "fig4-toric-16n": _ffnn_preset({"model.type": "toric", "model.L": "3"}, "16", "58", lam="1e-3"),
    "fig4-toric-32n": _ffnn_preset({"model.type": "toric", "model.L": "3"}, "32", "64", lam="1e-3"),
}


def preset_config(name: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError([f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"])
    items = dict(PRESETS[name])
    items.update(overrides or {})
    return parse_config_items(items)
