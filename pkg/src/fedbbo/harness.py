"""Experiment orchestration: config, round loop, event log, persistence.

A run is fully determined by its config plus a master seed.  Every random
draw comes from a substream named by (agent, round, purpose), so per-agent
work can be farmed out to threads without touching the results, and
frameworks that share nothing degenerate bit-exactly to independent runs.

The event log is newline-delimited JSON with a fixed field order per record
kind; message payloads carry designs, densities, weights, or
log-hyperparameters, never raw observations.  Wall-clock time lives in a
separate meta file so logs stay byte-comparable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import yaml

from .acquisition import Utility, eta_default, maximize_acquisition, posterior_score_fn
from .benchmarks import BlackBoxFamily, FamilySpec, RegretTrace, evaluate, make_family
from .conditioned import (
    SharedDesign,
    SharedDesignSet,
    SharedDensity,
    TrustedComparator,
    density_weighted_decision,
    lcb_maximizer,
    local_decision_conditioned,
    posterior_mean_max,
    thompson_density,
)
from .consensus import ConsensusMatrix, WSchedule, consensus_mix, uniform_consensus
from .domain import Dataset, Domain, latin_hypercube
from .fed_gp import FedConfig, global_objective, local_update
from .gp import GPFitError, GPHyperparams, gp_fit
from .rff import blr_fit, blr_sample_weights, rff_build
from .rff_sharing import DpConfig, MixSchedule, WeightMessage, dp_average, mix_schedule_eval, ts_decision
from .rng import substream

__all__ = [
    "FRAMEWORKS",
    "SCHEMA_VERSION",
    "ConfigError",
    "ExperimentConfig",
    "RunRecord",
    "config_from_dict",
    "config_to_dict",
    "load_config",
    "inject_expert_designs",
    "run_experiment",
    "load_record",
    "replay",
    "decision_trace",
    "scan_payloads_for_responses",
    "run_bench",
]

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FRAMEWORKS = (
    "independent",
    "consensus",
    "shared_designs",
    "shared_density",
    "rff_sharing",
    "fed_surrogate_bo",
)
PAYLOAD_KINDS = (
    "candidate_design",
    "shared_design",
    "density",
    "weights",
    "theta",
    "comparator_bool",
)
_GP_UTILITIES = ("improvement", "ucb", "lcb_maximizer")


class ConfigError(ValueError):
    """Invalid experiment config; ``errors`` lists '<field path>: <problem>'."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass(frozen=True)
class Budgets:
    candidates: int = 512
    rs_budget: int = 512
    n_samples: int = 256
    rff_features: int = 256
    fed_rounds: int = 5
    fed_steps: int = 1
    density_draws: int = 64
    density_grid: int = 256


@dataclass(frozen=True)
class Schedules:
    w: str = "linear_decay_to_identity"
    p: str = "linear"
    p_rate: float = 3.0
    eta: Optional[float] = None  # None -> confidence schedule eta_default(t, d)
    beta: float = 2.0
    density_kind: str = "kde"
    density_bandwidth: float = 0.08
    density_scale: float = 0.1


@dataclass(frozen=True)
class PrivacyConfig:
    share_noise_sd: float = 0.0
    dp: Optional[DpConfig] = None


@dataclass(frozen=True)
class FedSettings:
    step_size: float = 0.05
    minibatch: Optional[int] = None


@dataclass(frozen=True)
class ExperimentConfig:
    framework: str
    n_agents: int = 1
    rounds: int = 10
    n_init: int = 3
    seed: int = 0
    init_mode: str = "latin"
    utility_kind: str = "improvement"
    family: FamilySpec = field(default_factory=FamilySpec)
    gp: GPHyperparams = field(
        default_factory=lambda: GPHyperparams(1.0, np.array([0.2]), 1e-4)
    )
    budgets: Budgets = field(default_factory=Budgets)
    schedules: Schedules = field(default_factory=Schedules)
    privacy: PrivacyConfig = field(default_factory=PrivacyConfig)
    fed: FedSettings = field(default_factory=FedSettings)
    per_agent_rounds: Optional[tuple[int, ...]] = None
    expert_designs: Optional[tuple[tuple[float, ...], ...]] = None
    out_dir: Optional[str] = None
    threads: int = 1
    schema_version: int = SCHEMA_VERSION


def _get(d: dict, key: str, default):
    v = d.get(key, default)
    return default if v is None else v


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate a config; raises ConfigError listing every problem
    with its field path."""
    errors: list[str] = []

    def fail(path, msg):
        errors.append(f"{path}: {msg}")

    def need_num(d, key, path, lo=None, hi=None, integer=False, default=None):
        v = _get(d, key, default)
        if v is None:
            fail(path, "is required")
            return default
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            fail(path, f"must be a number, got {type(v).__name__}")
            return default
        if integer and int(v) != v:
            fail(path, "must be an integer")
            return default
        v = int(v) if integer else float(v)
        if lo is not None and v < lo:
            fail(path, f"must be >= {lo}")
            return default
        if hi is not None and v > hi:
            fail(path, f"must be <= {hi}")
            return default
        return v

    if not isinstance(raw, dict):
        raise ConfigError(["config: must be a mapping"])

    schema = need_num(raw, "schema_version", "schema_version", integer=True, default=SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        fail("schema_version", f"unsupported version {schema}, expected {SCHEMA_VERSION}")

    framework = _get(raw, "framework", None)
    if framework not in FRAMEWORKS:
        fail("framework", f"must be one of {FRAMEWORKS}, got {framework!r}")
        framework = "independent"

    k = need_num(raw, "agents", "agents", lo=1, integer=True, default=1)
    t = need_num(raw, "rounds", "rounds", lo=1, integer=True, default=10)
    n_init = need_num(raw, "n_init", "n_init", lo=1, integer=True, default=3)
    seed = need_num(raw, "seed", "seed", integer=True, default=0)
    init_mode = _get(raw, "init_mode", "latin")
    if init_mode not in ("latin", "partitioned"):
        fail("init_mode", f"must be 'latin' or 'partitioned', got {init_mode!r}")
        init_mode = "latin"

    fam_d = _get(raw, "family", {})
    if not isinstance(fam_d, dict):
        fail("family", "must be a mapping")
        fam_d = {}
    base = _get(fam_d, "base", "multi_bump")
    dim = need_num(fam_d, "dim", "family.dim", lo=1, hi=6, integer=True, default=2)
    het = need_num(fam_d, "heterogeneity", "family.heterogeneity", lo=0.0, default=0.0)
    noise_sd = need_num(fam_d, "noise_sd", "family.noise_sd", lo=0.0, default=0.01)
    adversarial = bool(_get(fam_d, "adversarial", False))
    family = None
    try:
        family = FamilySpec(
            base=base, dim=dim or 2, n_agents=k or 1,
            heterogeneity=het or 0.0, noise_sd=noise_sd or 0.0, adversarial=adversarial,
        )
    except ValueError as e:
        fail("family", str(e))

    gp_d = _get(raw, "gp", {})
    if not isinstance(gp_d, dict):
        fail("gp", "must be a mapping")
        gp_d = {}
    sf2 = need_num(gp_d, "signal_variance", "gp.signal_variance", default=1.0)
    ls_raw = _get(gp_d, "lengthscales", 0.2)
    sn2 = need_num(gp_d, "noise_variance", "gp.noise_variance", lo=0.0, default=1e-4)
    gp_h = None
    try:
        ls = np.atleast_1d(np.asarray(ls_raw, dtype=float))
        gp_h = GPHyperparams(sf2 or 1.0, ls, sn2 if sn2 is not None else 1e-4).with_dim(dim or 2)
    except (TypeError, ValueError) as e:
        fail("gp.lengthscales" if gp_h is None and sf2 else "gp", str(e))

    util_d = _get(raw, "utility", {})
    if not isinstance(util_d, dict):
        fail("utility", "must be a mapping")
        util_d = {}
    utility_kind = _get(util_d, "kind", "thompson" if framework == "rff_sharing" else "improvement")
    if utility_kind not in _GP_UTILITIES + ("thompson",):
        fail("utility.kind", f"unknown kind {utility_kind!r}")
    if framework == "rff_sharing" and utility_kind != "thompson":
        fail("utility.kind", "rff_sharing requires 'thompson'")
    if framework == "shared_density" and utility_kind != "improvement":
        fail("utility.kind", "shared_density requires the nonnegative 'improvement' utility")
    if framework in ("consensus", "shared_designs", "fed_surrogate_bo") and utility_kind == "thompson":
        fail("utility.kind", f"'thompson' is not supported by {framework}")

    b_d = _get(raw, "budgets", {})
    if not isinstance(b_d, dict):
        fail("budgets", "must be a mapping")
        b_d = {}
    budgets = Budgets(
        candidates=need_num(b_d, "candidates", "budgets.candidates", lo=1, integer=True, default=512) or 512,
        rs_budget=need_num(b_d, "rs_budget", "budgets.rs_budget", lo=1, integer=True, default=512) or 512,
        n_samples=need_num(b_d, "n_samples", "budgets.n_samples", lo=1, integer=True, default=256) or 256,
        rff_features=need_num(b_d, "rff_features", "budgets.rff_features", lo=1, integer=True, default=256) or 256,
        fed_rounds=need_num(b_d, "fed_rounds", "budgets.fed_rounds", lo=0, integer=True, default=5),
        fed_steps=need_num(b_d, "fed_steps", "budgets.fed_steps", lo=0, integer=True, default=1),
        density_draws=need_num(b_d, "density_draws", "budgets.density_draws", lo=1, integer=True, default=64) or 64,
        density_grid=need_num(b_d, "density_grid", "budgets.density_grid", lo=2, integer=True, default=256) or 256,
    )

    s_d = _get(raw, "schedules", {})
    if not isinstance(s_d, dict):
        fail("schedules", "must be a mapping")
        s_d = {}
    w_kind = _get(s_d, "w", "linear_decay_to_identity")
    if w_kind not in ("linear_decay_to_identity", "constant"):
        fail("schedules.w", f"must be 'linear_decay_to_identity' or 'constant', got {w_kind!r}")
        w_kind = "linear_decay_to_identity"
    p_kind = _get(s_d, "p", "linear")
    if p_kind not in ("linear", "exponential"):
        fail("schedules.p", f"must be 'linear' or 'exponential', got {p_kind!r}")
        p_kind = "linear"
    eta_raw = s_d.get("eta", None)
    eta = None
    if eta_raw is not None:
        eta = need_num(s_d, "eta", "schedules.eta", lo=0.0)
    density_kind = _get(s_d, "density", "kde")
    if density_kind not in ("kde", "gaussian"):
        fail("schedules.density", f"must be 'kde' or 'gaussian', got {density_kind!r}")
        density_kind = "kde"
    schedules = Schedules(
        w=w_kind,
        p=p_kind,
        p_rate=need_num(s_d, "p_rate", "schedules.p_rate", lo=1e-9, default=3.0) or 3.0,
        eta=eta,
        beta=need_num(s_d, "beta", "schedules.beta", lo=0.0, default=2.0),
        density_kind=density_kind,
        density_bandwidth=need_num(s_d, "density_bandwidth", "schedules.density_bandwidth", lo=1e-9, default=0.08) or 0.08,
        density_scale=need_num(s_d, "density_scale", "schedules.density_scale", lo=1e-9, default=0.1) or 0.1,
    )

    p_d = _get(raw, "privacy", {})
    if not isinstance(p_d, dict):
        fail("privacy", "must be a mapping")
        p_d = {}
    dp_cfg = None
    dp_d = p_d.get("dp", None)
    if dp_d is not None:
        if not isinstance(dp_d, dict):
            fail("privacy.dp", "must be a mapping or null")
        else:
            clip = need_num(dp_d, "clip_norm", "privacy.dp.clip_norm", lo=1e-12)
            nsd = need_num(dp_d, "noise_sd", "privacy.dp.noise_sd", lo=0.0, default=0.0)
            sub = dp_d.get("subset_size", None)
            if sub is not None:
                sub = need_num(dp_d, "subset_size", "privacy.dp.subset_size", lo=1, integer=True)
            if clip is not None:
                dp_cfg = DpConfig(clip, nsd if nsd is not None else 0.0, sub)
    privacy = PrivacyConfig(
        share_noise_sd=need_num(p_d, "share_noise_sd", "privacy.share_noise_sd", lo=0.0, default=0.0) or 0.0,
        dp=dp_cfg,
    )

    f_d = _get(raw, "fed", {})
    if not isinstance(f_d, dict):
        fail("fed", "must be a mapping")
        f_d = {}
    mb = f_d.get("minibatch", None)
    if mb is not None:
        mb = need_num(f_d, "minibatch", "fed.minibatch", lo=1, integer=True)
    fed = FedSettings(
        step_size=need_num(f_d, "step_size", "fed.step_size", lo=1e-12, default=0.05) or 0.05,
        minibatch=mb,
    )
    if framework == "fed_surrogate_bo" and gp_h is not None and gp_h.noise_variance <= 0:
        fail("gp.noise_variance", "fed_surrogate_bo requires noise_variance > 0")
    if framework == "rff_sharing" and gp_h is not None and gp_h.noise_variance <= 0:
        fail("gp.noise_variance", "rff_sharing requires noise_variance > 0")

    par = raw.get("per_agent_rounds", None)
    per_agent_rounds = None
    if par is not None:
        if not isinstance(par, (list, tuple)) or len(par) != (k or 1):
            fail("per_agent_rounds", f"must be a list of {k} round budgets")
        else:
            ok = all(isinstance(v, int) and not isinstance(v, bool) and 0 <= v <= (t or 1) for v in par)
            if not ok:
                fail("per_agent_rounds", f"entries must be integers in [0, {t}]")
            else:
                per_agent_rounds = tuple(int(v) for v in par)

    experts = raw.get("expert_designs", None)
    expert_designs = None
    if experts is not None:
        try:
            arr = np.asarray(experts, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != (dim or 2):
                raise ValueError
            expert_designs = tuple(tuple(float(v) for v in row) for row in arr)
        except (TypeError, ValueError):
            fail("expert_designs", f"must be a list of designs of dim {dim}")

    out_dir = raw.get("out_dir", None)
    if out_dir is not None and not isinstance(out_dir, str):
        fail("out_dir", "must be a string path")
        out_dir = None
    threads = need_num(raw, "threads", "threads", lo=1, integer=True, default=1) or 1

    extra = set(raw) - {
        "schema_version", "framework", "agents", "rounds", "n_init", "seed",
        "init_mode", "family", "gp", "utility", "budgets", "schedules",
        "privacy", "fed", "per_agent_rounds", "expert_designs", "out_dir", "threads",
    }
    for key in sorted(extra):
        fail(key, "unknown field")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        framework=framework, n_agents=k, rounds=t, n_init=n_init, seed=seed,
        init_mode=init_mode, utility_kind=utility_kind, family=family, gp=gp_h,
        budgets=budgets, schedules=schedules, privacy=privacy, fed=fed,
        per_agent_rounds=per_agent_rounds, expert_designs=expert_designs,
        out_dir=out_dir, threads=threads,
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Round-trippable plain-dict form (also the hashed canonical form)."""
    d = {
        "schema_version": cfg.schema_version,
        "framework": cfg.framework,
        "agents": cfg.n_agents,
        "rounds": cfg.rounds,
        "n_init": cfg.n_init,
        "seed": cfg.seed,
        "init_mode": cfg.init_mode,
        "family": {
            "base": cfg.family.base,
            "dim": cfg.family.dim,
            "heterogeneity": cfg.family.heterogeneity,
            "noise_sd": cfg.family.noise_sd,
            "adversarial": cfg.family.adversarial,
        },
        "gp": {
            "signal_variance": cfg.gp.signal_variance,
            "lengthscales": [float(v) for v in cfg.gp.lengthscales],
            "noise_variance": cfg.gp.noise_variance,
        },
        "utility": {"kind": cfg.utility_kind},
        "budgets": {
            "candidates": cfg.budgets.candidates,
            "rs_budget": cfg.budgets.rs_budget,
            "n_samples": cfg.budgets.n_samples,
            "rff_features": cfg.budgets.rff_features,
            "fed_rounds": cfg.budgets.fed_rounds,
            "fed_steps": cfg.budgets.fed_steps,
            "density_draws": cfg.budgets.density_draws,
            "density_grid": cfg.budgets.density_grid,
        },
        "schedules": {
            "w": cfg.schedules.w,
            "p": cfg.schedules.p,
            "p_rate": cfg.schedules.p_rate,
            "eta": cfg.schedules.eta,
            "beta": cfg.schedules.beta,
            "density": cfg.schedules.density_kind,
            "density_bandwidth": cfg.schedules.density_bandwidth,
            "density_scale": cfg.schedules.density_scale,
        },
        "privacy": {
            "share_noise_sd": cfg.privacy.share_noise_sd,
            "dp": None
            if cfg.privacy.dp is None
            else {
                "clip_norm": cfg.privacy.dp.clip_norm,
                "noise_sd": cfg.privacy.dp.noise_sd,
                "subset_size": cfg.privacy.dp.subset_size,
            },
        },
        "fed": {"step_size": cfg.fed.step_size, "minibatch": cfg.fed.minibatch},
        "per_agent_rounds": list(cfg.per_agent_rounds) if cfg.per_agent_rounds else None,
        "expert_designs": [list(row) for row in cfg.expert_designs] if cfg.expert_designs else None,
        "out_dir": cfg.out_dir,
        "threads": cfg.threads,
    }
    return d


def config_hash(cfg: ExperimentConfig) -> str:
    d = config_to_dict(cfg)
    d.pop("out_dir")  # where results land does not change what they are
    d.pop("threads")
    canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return config_from_dict(raw or {})


def inject_expert_designs(cfg: ExperimentConfig, path) -> ExperimentConfig:
    """Return a config whose shared-design sets receive the listed designs.

    The file is YAML: either a bare list of designs or a mapping with a
    ``designs`` key.  Designs persist for every recipient each round until
    the recipient's screening first accepts them.
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    rows = raw.get("designs") if isinstance(raw, dict) else raw
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != cfg.family.dim:
        raise ConfigError([f"expert_designs: must be a list of designs of dim {cfg.family.dim}"])
    d = config_to_dict(cfg)
    d["expert_designs"] = [list(map(float, row)) for row in arr]
    return config_from_dict(d)


# ---------------------------------------------------------------------------
# run records


@dataclass
class RunRecord:
    """Everything one run produced; replayable from config + seed."""

    config: dict
    config_hash: str
    events: list[dict]
    designs: np.ndarray  # (T, K, d), NaN where an agent was frozen
    responses: np.ndarray  # (T, K)
    regret: np.ndarray  # (T, K)
    wall_clock: float = 0.0
    out_dir: Optional[Path] = None

    @property
    def final_regret(self) -> np.ndarray:
        return self.regret[-1]

    def message_events(self) -> list[dict]:
        return [e for e in self.events if e["kind"] == "message"]

    def bytes_per_round(self) -> np.ndarray:
        out = np.zeros(self.regret.shape[0])
        for e in self.message_events():
            out[e["round"] - 1] += e["bytes"]
        return out

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "events.jsonl").open("w") as fh:
            for e in self.events:
                fh.write(json.dumps(e, separators=(",", ":")) + "\n")
        with (out / "summary.csv").open("w") as fh:
            dim = self.designs.shape[2]
            cols = ["round", "agent"] + [f"x{j}" for j in range(dim)] + ["response", "regret"]
            fh.write(",".join(cols) + "\n")
            for t in range(self.designs.shape[0]):
                for k in range(self.designs.shape[1]):
                    if np.isnan(self.responses[t, k]):
                        continue
                    row = [str(t + 1), str(k)]
                    row += [repr(float(v)) for v in self.designs[t, k]]
                    row += [repr(float(self.responses[t, k])), repr(float(self.regret[t, k]))]
                    fh.write(",".join(row) + "\n")
        with (out / "meta.json").open("w") as fh:
            json.dump({"wall_clock_s": self.wall_clock, "config_hash": self.config_hash}, fh)
        self.out_dir = out
        return out


def decision_trace(record: RunRecord) -> list[str]:
    """Canonical serialization of the init and decision events; two runs are
    trace-identical iff these lists match exactly."""
    return [
        json.dumps(e, separators=(",", ":"))
        for e in record.events
        if e["kind"] in ("init", "decision")
    ]


def _payload_floats(obj):
    if isinstance(obj, float):
        yield obj
    elif isinstance(obj, dict):
        for v in obj.values():
            yield from _payload_floats(v)
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            yield from _payload_floats(v)


def scan_payloads_for_responses(record: RunRecord) -> list[dict]:
    """Return message events whose payload leaks an observed response value.

    The scan is exact float matching against every response the run
    observed (init and round evaluations).
    """
    observed = {
        e["response"] for e in record.events if e["kind"] in ("init", "decision")
    }
    leaks = []
    for e in record.message_events():
        if e["payload_kind"] not in PAYLOAD_KINDS:
            leaks.append(e)
            continue
        if any(v in observed for v in _payload_floats(e["payload"])):
            leaks.append(e)
    return leaks


# ---------------------------------------------------------------------------
# the round loop


def _design_list(x) -> list[float]:
    return [float(v) for v in np.asarray(x, dtype=float).reshape(-1)]


def _message(round_, sender, recipient, payload_kind, payload) -> dict:
    return {
        "kind": "message",
        "round": round_,
        "sender": sender,
        "recipient": recipient,
        "payload_kind": payload_kind,
        "payload": payload,
        "bytes": len(json.dumps(payload, separators=(",", ":"))),
    }


def _map_agents(fns: Sequence[Callable], threads: int) -> list:
    if threads <= 1:
        return [fn() for fn in fns]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn) for fn in fns]
        return [f.result() for f in futures]


def _resolve_threads(cfg: ExperimentConfig, threads: Optional[int]) -> int:
    if threads is not None:
        return max(1, threads)
    env = os.environ.get("FEDBBO_THREADS")
    if cfg.threads and cfg.threads > 1:
        return cfg.threads
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning("ignoring non-integer FEDBBO_THREADS=%r", env)
    return 1


class _Runner:
    """State for one experiment; ``run`` drives the round loop."""

    def __init__(self, cfg: ExperimentConfig, threads: Optional[int] = None):
        self.cfg = cfg
        self.threads = _resolve_threads(cfg, threads)
        self.fam: BlackBoxFamily = make_family(cfg.family, cfg.seed)
        self.dom: Domain = self.fam.domain
        self.k = cfg.n_agents
        self.seed = cfg.seed
        self.datasets = [Dataset(dim=self.dom.dim, owner=i) for i in range(self.k)]
        self.events: list[dict] = []
        self.comparator = TrustedComparator()
        self.posts: list = [None] * self.k
        self.blrs: list = [None] * self.k

        needs_map = cfg.framework == "rff_sharing" or cfg.utility_kind == "thompson"
        self.feature_map = None
        if needs_map:
            map_seed = int(substream(self.seed, "rff_map").integers(1 << 62))
            self.feature_map = rff_build(map_seed, cfg.budgets.rff_features, cfg.gp)

        if cfg.framework == "consensus":
            self.w_schedule = WSchedule(kind=cfg.schedules.w, horizon=cfg.rounds)
            self.W = self.w_schedule.start(self.k)
        if cfg.framework == "rff_sharing":
            self.mix = MixSchedule(kind=cfg.schedules.p, horizon=cfg.rounds, rate=cfg.schedules.p_rate)
        if cfg.framework == "fed_surrogate_bo":
            self.theta = cfg.gp.to_log_vector()
            self.fed_rows: list[tuple] = []
        self.expert_pools = [
            [np.asarray(row, dtype=float) for row in (cfg.expert_designs or ())]
            for _ in range(self.k)
        ]

    # -- helpers ------------------------------------------------------------

    def rng(self, *path) -> np.random.Generator:
        return substream(self.seed, *path)

    def note(self, round_, agent, text, **extra):
        e = {"kind": "note", "round": round_, "agent": agent, "note": text}
        e.update(extra)
        self.events.append(e)

    def eta_at(self, t: int) -> float:
        if self.cfg.schedules.eta is not None:
            return self.cfg.schedules.eta
        return eta_default(t, self.dom.dim)

    def utility_for(self, agent: int, t: int) -> Utility:
        kind = self.cfg.utility_kind
        if kind == "improvement":
            incumbent = float(np.max(self.datasets[agent].y))
            return Utility("improvement", incumbent=incumbent)
        if kind in ("ucb", "lcb_maximizer"):
            return Utility(kind, eta=self.eta_at(t))
        return Utility("thompson")

    def active(self, agent: int, t: int) -> bool:
        if self.cfg.per_agent_rounds is None:
            return True
        return t <= self.cfg.per_agent_rounds[agent]

    # -- stages -------------------------------------------------------------

    def initialize(self):
        cfg = self.cfg
        for k in range(self.k):
            rng = self.rng(k, "init")
            if cfg.init_mode == "latin":
                X0 = latin_hypercube(self.dom, cfg.n_init, rng)
            else:
                lo = self.dom.lower.copy()
                hi = self.dom.upper.copy()
                width = (hi[0] - lo[0]) / self.k
                lo[0] += k * width
                hi[0] = lo[0] + width
                X0 = latin_hypercube(Domain(lo, hi), cfg.n_init, rng)
            eval_rng = self.rng(k, "init_eval")
            for x in X0:
                y = evaluate(self.fam, k, x, eval_rng)
                self.datasets[k].append(x, y)
                self.events.append(
                    {
                        "kind": "init",
                        "round": 0,
                        "agent": k,
                        "design": _design_list(x),
                        "response": float(y),
                    }
                )

    def fit_all(self, t: int):
        def fit_one(k):
            try:
                return gp_fit(self.cfg.gp, self.datasets[k])
            except GPFitError as e:
                return e

        if self.cfg.framework == "fed_surrogate_bo":
            results = _map_agents(
                [lambda k=k: personalize_or_error(self.theta, self.datasets[k]) for k in range(self.k)],
                self.threads,
            )
        else:
            results = _map_agents([lambda k=k: fit_one(k) for k in range(self.k)], self.threads)
        self.posts = []
        for k, res in enumerate(results):
            if isinstance(res, GPFitError):
                self.posts.append(None)
                self.note(t, k, "fit_failed_fallback", error=str(res))
            else:
                self.posts.append(res)
        if self.cfg.framework == "rff_sharing" or self.cfg.utility_kind == "thompson":
            self.blrs = _map_agents(
                [
                    lambda k=k: blr_fit(self.feature_map, self.datasets[k], self.cfg.gp.noise_variance)
                    for k in range(self.k)
                ],
                self.threads,
            )

    def plain_decision(self, k: int, t: int) -> np.ndarray:
        rng = self.rng(k, t, "acq")
        if self.cfg.utility_kind == "thompson":
            return ts_decision(
                self.blrs[k], [], self.feature_map, 1.0, self.dom,
                self.cfg.budgets.candidates, rng,
            ).design
        if self.posts[k] is None:
            return self.dom.sample(self.rng(k, t, "fallback"), 1)[0]
        score = posterior_score_fn(self.posts[k], self.utility_for(k, t))
        return maximize_acquisition(score, self.dom, self.cfg.budgets.candidates, rng).design

    # -- frameworks ---------------------------------------------------------

    def round_independent(self, t: int) -> np.ndarray:
        designs = _map_agents(
            [lambda k=k: self.plain_decision(k, t) for k in range(self.k)], self.threads
        )
        return np.stack(designs)

    def round_consensus(self, t: int) -> np.ndarray:
        cfg = self.cfg

        def candidate(k):
            if self.posts[k] is None:
                return self.dom.sample(self.rng(k, t, "acq"), 1)[0], True
            util = self.utility_for(k, t)
            score = posterior_score_fn(self.posts[k], util)
            res = maximize_acquisition(score, self.dom, cfg.budgets.candidates, self.rng(k, t, "acq"))
            return res.design, False

        results = _map_agents([lambda k=k: candidate(k) for k in range(self.k)], self.threads)
        candidates = np.stack([r[0] for r in results])
        for k, (_, fellback) in enumerate(results):
            if fellback:
                self.note(t, k, "fit_failed_fallback")
        if cfg.privacy.share_noise_sd > 0:
            for k in range(self.k):
                noise = self.rng(k, t, "share").normal(0.0, cfg.privacy.share_noise_sd, self.dom.dim)
                candidates[k] = self.dom.clip(candidates[k] + noise)
        for k in range(self.k):
            self.events.append(
                _message(t, k, "cloud", "candidate_design", {"design": _design_list(candidates[k])})
            )
        mixed = consensus_mix(self.W, candidates, self.dom)
        for k in range(self.k):
            self.events.append(
                _message(t, "cloud", k, "candidate_design", {"design": _design_list(mixed[k])})
            )
        self.W = self.w_schedule.step(self.W)
        return mixed

    def round_shared_designs(self, t: int) -> np.ndarray:
        cfg = self.cfg
        eta = self.eta_at(t)

        def sender_lcb(k):
            if self.posts[k] is None:
                return None
            return lcb_maximizer(self.posts[k], eta, self.dom, cfg.budgets.candidates, self.rng(k, t, "share"))

        def recipient_delta(k):
            if self.posts[k] is None:
                return None
            return posterior_mean_max(self.posts[k], self.dom, cfg.budgets.candidates, self.rng(k, t, "delta")).value

        lcbs = _map_agents([lambda k=k: sender_lcb(k) for k in range(self.k)], self.threads)
        deltas = _map_agents([lambda k=k: recipient_delta(k) for k in range(self.k)], self.threads)

        shared_sets: list[SharedDesignSet] = []
        expert_index: list[list[int]] = []
        for k in range(self.k):
            items: list[SharedDesign] = []
            if deltas[k] is not None:
                for j in range(self.k):
                    if j == k or lcbs[j] is None:
                        continue
                    ok = self.comparator.greater(lcbs[j].value, deltas[k])
                    self.events.append(
                        _message(t, j, k, "comparator_bool", {"result": bool(ok)})
                    )
                    if ok:
                        items.append(SharedDesign(lcbs[j].design, j))
                        self.events.append(
                            _message(t, j, k, "shared_design", {"design": _design_list(lcbs[j].design)})
                        )
                first_expert = len(items)
                for x in self.expert_pools[k]:
                    items.append(SharedDesign(x, "expert"))
                expert_index.append(list(range(first_expert, len(items))))
            else:
                expert_index.append([])
            shared_sets.append(
                SharedDesignSet(items=items, threshold=deltas[k] if deltas[k] is not None else -np.inf, recipient=k)
            )

        def decide(k):
            if self.posts[k] is None:
                return self.dom.sample(self.rng(k, t, "fallback"), 1)[0], None
            design, cond = local_decision_conditioned(
                self.posts[k], shared_sets[k], self.utility_for(k, t), self.dom,
                cfg.budgets.candidates, cfg.budgets.n_samples, cfg.budgets.rs_budget,
                self.rng(k, t, "acq"), self.rng(k, t, "rs"),
            )
            return design, cond

        results = _map_agents([lambda k=k: decide(k) for k in range(self.k)], self.threads)
        designs = np.stack([r[0] for r in results])
        for k, (_, cond) in enumerate(results):
            if cond is None:
                self.note(t, k, "fit_failed_fallback")
                continue
            if cond.constraints.items:
                dropped = len(cond.constraints.items) - len(cond.surviving)
                if dropped:
                    self.note(t, k, "constraints_discarded", count=dropped)
                # an expert design is consumed once screening accepts it
                consumed = [
                    i for i in expert_index[k]
                    if i < len(cond.screen_accept_counts) and cond.screen_accept_counts[i] > 0
                ]
                if consumed:
                    kept = []
                    offset = expert_index[k][0] if expert_index[k] else 0
                    for local_i, x in enumerate(self.expert_pools[k]):
                        if offset + local_i in consumed:
                            self.note(t, k, "expert_design_consumed", design=_design_list(x))
                        else:
                            kept.append(x)
                    self.expert_pools[k] = kept
        return designs

    def round_shared_density(self, t: int) -> np.ndarray:
        cfg = self.cfg

        def build_density(k):
            if self.posts[k] is None:
                return None
            rng = self.rng(k, t, "density")
            if cfg.schedules.density_kind == "kde":
                return thompson_density(
                    self.posts[k], cfg.budgets.density_draws, self.dom,
                    cfg.schedules.density_bandwidth, rng, grid_size=cfg.budgets.density_grid,
                    jitter_sd=cfg.privacy.share_noise_sd, source=k,
                )
            center = lcb_maximizer(self.posts[k], self.eta_at(t), self.dom, cfg.budgets.candidates, rng).design
            if cfg.privacy.share_noise_sd > 0:
                center = self.dom.clip(center + rng.normal(0.0, cfg.privacy.share_noise_sd, self.dom.dim))
            return SharedDensity(kind="gaussian", source=k, center=center, scale=cfg.schedules.density_scale)

        densities = _map_agents([lambda k=k: build_density(k) for k in range(self.k)], self.threads)
        for k, pi in enumerate(densities):
            if pi is None:
                self.note(t, k, "fit_failed_fallback")
                continue
            payload = (
                {"kind": "kde", "points": [_design_list(p) for p in pi.points], "bandwidth": pi.bandwidth}
                if pi.kind == "kde"
                else {"kind": "gaussian", "center": _design_list(pi.center), "scale": pi.scale}
            )
            self.events.append(_message(t, k, "broadcast", "density", payload))

        def decide(k):
            if self.posts[k] is None:
                return self.dom.sample(self.rng(k, t, "fallback"), 1)[0]
            peer_densities = [pi for j, pi in enumerate(densities) if j != k and pi is not None]
            res = density_weighted_decision(
                self.posts[k], peer_densities, cfg.schedules.beta, cfg.rounds,
                self.utility_for(k, t), self.dom, cfg.budgets.candidates, self.rng(k, t, "acq"),
            )
            return res.design

        return np.stack(_map_agents([lambda k=k: decide(k) for k in range(self.k)], self.threads))

    def round_rff_sharing(self, t: int) -> np.ndarray:
        cfg = self.cfg
        p_t = mix_schedule_eval(self.mix, t)
        draws = _map_agents(
            [
                lambda k=k: blr_sample_weights(self.blrs[k], self.rng(k, t, "share"))
                for k in range(self.k)
            ],
            self.threads,
        )
        weight_msgs = [WeightMessage(w, source=k, round=t) for k, w in enumerate(draws)]
        for k, msg in enumerate(weight_msgs):
            self.events.append(
                _message(t, k, "broadcast", "weights", {"round": t, "weights": _design_list(msg.weights)})
            )
        peers_per_agent: list[list[WeightMessage]] = []
        for k in range(self.k):
            others = [m for j, m in enumerate(weight_msgs) if j != k]
            if cfg.privacy.dp is not None and others:
                avg = dp_average(others, cfg.privacy.dp, self.rng(k, t, "dp"))
                self.events.append(
                    _message(t, "cloud", k, "weights", {"round": t, "weights": _design_list(avg.weights)})
                )
                peers_per_agent.append([avg])
            else:
                peers_per_agent.append(others)

        def decide(k):
            return ts_decision(
                self.blrs[k], peers_per_agent[k], self.feature_map, p_t, self.dom,
                cfg.budgets.candidates, self.rng(k, t, "acq"),
            )

        results = _map_agents([lambda k=k: decide(k) for k in range(self.k)], self.threads)
        for k, res in enumerate(results):
            if not peers_per_agent[k] and p_t < 1.0:
                self.note(t, k, "own_weights_forced_no_peers")
            if not res.used_own:
                self.note(t, k, "peer_weights_used", source=res.peer_source)
        return np.stack([r.design for r in results])

    def round_fed_surrogate(self, t: int) -> np.ndarray:
        cfg = self.cfg
        fed_cfg = FedConfig(
            rounds=cfg.budgets.fed_rounds,
            local_steps=cfg.budgets.fed_steps,
            step_size=cfg.fed.step_size,
            minibatch=cfg.fed.minibatch,
        )
        weights = fed_cfg.resolve_weights(self.datasets)
        theta = self.theta
        for r in range(fed_cfg.rounds):
            updates = _map_agents(
                [
                    lambda k=k, th=theta: local_update(
                        th, self.datasets[k], fed_cfg.local_steps, fed_cfg.step_size,
                        fed_cfg.minibatch, self.rng(k, t, "fed", r),
                    )
                    for k in range(self.k)
                ],
                self.threads,
            )
            for k, up in enumerate(updates):
                self.events.append(
                    _message(t, k, "cloud", "theta", {"fed_round": r, "theta": _design_list(up)})
                )
            theta = np.sum([w * u for w, u in zip(weights, updates)], axis=0)
            self.events.append(
                _message(t, "cloud", "broadcast", "theta", {"fed_round": r, "theta": _design_list(theta)})
            )
        self.theta = theta
        objective = global_objective(theta, self.datasets, weights)
        self.note(t, None, "fed_objective", value=float(objective))
        self.fed_rows.append((t, float(objective), [float(v) for v in theta]))
        # refit with the learned shared hyperparameters before deciding
        self.fit_all(t)
        designs = _map_agents(
            [lambda k=k: self.plain_decision(k, t) for k in range(self.k)], self.threads
        )
        return np.stack(designs)

    # -- main loop ----------------------------------------------------------

    def run(self) -> RunRecord:
        cfg = self.cfg
        start = time.perf_counter()
        cfg_dict = config_to_dict(cfg)
        chash = config_hash(cfg)
        self.events.append(
            {"kind": "header", "schema": SCHEMA_VERSION, "config": cfg_dict, "config_hash": chash}
        )
        self.initialize()
        trace = RegretTrace(self.k)
        for k in range(self.k):
            for x in self.datasets[k].X:
                trace.update(self.fam, k, x)

        T, K, d = cfg.rounds, self.k, self.dom.dim
        designs = np.full((T, K, d), np.nan)
        responses = np.full((T, K), np.nan)
        regret = np.full((T, K), np.nan)

        step = {
            "independent": self.round_independent,
            "consensus": self.round_consensus,
            "shared_designs": self.round_shared_designs,
            "shared_density": self.round_shared_density,
            "rff_sharing": self.round_rff_sharing,
            "fed_surrogate_bo": self.round_fed_surrogate,
        }[cfg.framework]

        last_regret = np.array([trace.best_seen[k] for k in range(K)])
        last_regret = np.maximum(self.fam.true_max - last_regret, 0.0)
        for t in range(1, T + 1):
            if cfg.framework != "fed_surrogate_bo":
                self.fit_all(t)
            chosen = step(t)
            for k in range(K):
                if not self.active(k, t):
                    self.note(t, k, "budget_exhausted")
                    regret[t - 1, k] = last_regret[k]
                    continue
                x = chosen[k]
                y = evaluate(self.fam, k, x, self.rng(k, t, "eval"))
                self.datasets[k].append(x, y)
                r = trace.update(self.fam, k, x)
                designs[t - 1, k] = x
                responses[t - 1, k] = y
                regret[t - 1, k] = r
                last_regret[k] = r
                self.events.append(
                    {
                        "kind": "decision",
                        "round": t,
                        "agent": k,
                        "design": _design_list(x),
                        "response": float(y),
                        "regret": float(r),
                    }
                )

        self.events.append(
            {
                "kind": "summary",
                "rounds": T,
                "final_regret": [float(v) for v in regret[-1]],
            }
        )
        record = RunRecord(
            config=cfg_dict,
            config_hash=chash,
            events=self.events,
            designs=designs,
            responses=responses,
            regret=regret,
            wall_clock=time.perf_counter() - start,
        )
        if cfg.out_dir:
            out = record.save(cfg.out_dir)
            if cfg.framework == "fed_surrogate_bo":
                with (out / "fed_trace.csv").open("w") as fh:
                    p = len(self.fed_rows[0][2]) if self.fed_rows else 0
                    fh.write(",".join(["round", "objective"] + [f"theta_{i}" for i in range(p)]) + "\n")
                    for row in self.fed_rows:
                        fh.write(",".join([str(row[0]), repr(row[1])] + [repr(v) for v in row[2]]) + "\n")
        return record


def personalize_or_error(theta, data):
    from .fed_gp import personalize

    try:
        return personalize(theta, data)
    except GPFitError as e:
        return e


def run_experiment(cfg: ExperimentConfig, threads: Optional[int] = None) -> RunRecord:
    """Run one experiment; writes files when the config names an out_dir."""
    return _Runner(cfg, threads=threads).run()


# ---------------------------------------------------------------------------
# loading and replay


def load_record(path) -> RunRecord:
    """Load a RunRecord from a run directory or an events.jsonl path."""
    p = Path(path)
    events_path = p / "events.jsonl" if p.is_dir() else p
    events = []
    with events_path.open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(json.loads(line))
    if not events or events[0].get("kind") != "header":
        raise ValueError(f"{events_path}: not a run record (missing header)")
    cfg_dict = events[0]["config"]
    T, K, d = cfg_dict["rounds"], cfg_dict["agents"], cfg_dict["family"]["dim"]
    designs = np.full((T, K, d), np.nan)
    responses = np.full((T, K), np.nan)
    regret = np.full((T, K), np.nan)
    for e in events:
        if e["kind"] == "decision":
            t, k = e["round"] - 1, e["agent"]
            designs[t, k] = e["design"]
            responses[t, k] = e["response"]
            regret[t, k] = e["regret"]
    wall = 0.0
    meta = events_path.parent / "meta.json"
    if meta.exists():
        wall = json.loads(meta.read_text()).get("wall_clock_s", 0.0)
    return RunRecord(
        config=cfg_dict,
        config_hash=events[0]["config_hash"],
        events=events,
        designs=designs,
        responses=responses,
        regret=regret,
        wall_clock=wall,
        out_dir=events_path.parent,
    )


def replay(path, tol: float = 1e-12) -> RunRecord:
    """Recompute the regret trace from the logged designs and check it
    matches the stored one within ``tol``; raises ValueError on mismatch."""
    record = load_record(path)
    cfg = config_from_dict(record.config)
    fam = make_family(cfg.family, cfg.seed)
    best = np.full(cfg.n_agents, -np.inf)
    for e in record.events:
        if e["kind"] == "init":
            k = e["agent"]
            best[k] = max(best[k], fam.f_single(k, np.asarray(e["design"])))
        elif e["kind"] == "decision":
            k = e["agent"]
            best[k] = max(best[k], fam.f_single(k, np.asarray(e["design"])))
            expect = max(float(fam.true_max[k] - best[k]), 0.0)
            if abs(expect - e["regret"]) > tol:
                raise ValueError(
                    f"replay mismatch at round {e['round']} agent {k}: "
                    f"stored {e['regret']!r}, recomputed {expect!r}"
                )
    return record


# ---------------------------------------------------------------------------
# benchmark grids


def run_bench(suite: dict, out_dir, threads: Optional[int] = None) -> list[dict]:
    """Run a frameworks x heterogeneity x seeds grid and write a summary table.

    The suite mapping needs ``base`` (a config mapping without framework,
    heterogeneity, or seed), plus lists ``frameworks``, ``heterogeneity``,
    and ``seeds``.
    """
    for key in ("base", "frameworks", "heterogeneity", "seeds"):
        if key not in suite:
            raise ConfigError([f"suite.{key}: is required"])
    rows = []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for framework in suite["frameworks"]:
        for h in suite["heterogeneity"]:
            for seed in suite["seeds"]:
                raw = json.loads(json.dumps(suite["base"]))
                raw["framework"] = framework
                raw.setdefault("family", {})["heterogeneity"] = float(h)
                raw["seed"] = int(seed)
                raw["out_dir"] = None
                cfg = config_from_dict(raw)
                rec = run_experiment(cfg, threads=threads)
                for k, r in enumerate(rec.final_regret):
                    rows.append(
                        {
                            "framework": framework,
                            "heterogeneity": float(h),
                            "seed": int(seed),
                            "agent": k,
                            "final_regret": float(r),
                        }
                    )
    with (out / "bench_summary.csv").open("w") as fh:
        fh.write("framework,heterogeneity,seed,agent,final_regret\n")
        for row in rows:
            fh.write(
                f"{row['framework']},{row['heterogeneity']!r},{row['seed']},"
                f"{row['agent']},{row['final_regret']!r}\n"
            )
    return rows
