"""Experiment configuration: JSON in, validated model objects out.

Every section and key is checked against a fixed schema; unknown keys are
rejected. Errors carry the dotted key path (``dcp.n1_set[2]``). Defaults are
filled in so that :meth:`ExperimentConfig.resolved` is a complete,
self-describing config that reloads to an identical experiment.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Union

import numpy as np

from .channel import ChannelModel, new_markov
from .dcp import DcpConfig, OraclePolicy, StaticPolicy
from .errors import ConfigInvalid
from .rates import RateModel
from .sim import DEFAULT_A_MAX, DEFAULT_WINDOW, MIN_VERDICT_SAMPLES, ArrivalProcess
from .solver import AlgorithmVariant, FactorG, FactorGPTAS, GapDecay, RandomizedH

# section -> {key: default}; a default of ... marks the key as required
_SCHEMA: dict[str, dict[str, Any]] = {
    "channel": {"states": ..., "T": ...},
    "rates": {"n0": ..., "p_total": ...},
    "dcp": {"n_c": ..., "alpha": ..., "l1": ..., "n1_set": ...},
    "arrivals": {"base": ..., "loads": ..., "a_max": DEFAULT_A_MAX},
    "sim": {"horizon": 20_000_000, "window": DEFAULT_WINDOW, "replications": 3, "seed": 0},
    "analysis": {
        "grid": 180,
        "mc_samples": 100_000,
        "seed": 0,
        "weight_angles": 181,
        "rinf": {"delta": None, "rho_phi": 0.0, "k_max": 1000},
    },
}
MANIFEST_KEY = "dcpsim_version"
_TOP = {"name": "experiment", "policy": "dcp", "solver": ...}
_SOLVER_KEYS = {
    "gap_decay": {"beta"},
    "factor_g": {"xi", "zeta"},
    "factor_g_ptas": {"beta_p", "n_users"},
    "randomized_h": {"base", "h"},
}


def _fail(path: str, message: str):
    raise ConfigInvalid(path, message)


def _check_keys(obj: Any, allowed, path: str, required=()) -> None:
    if not isinstance(obj, dict):
        _fail(path, f"expected an object, got {type(obj).__name__}")
    for k in obj:
        if k not in allowed:
            _fail(f"{path}.{k}" if path else k, "unknown key")
    for k in required:
        if k not in obj:
            _fail(f"{path}.{k}" if path else k, "missing required key")


def _number(v: Any, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(path, f"expected a number, got {v!r}")
    return float(v)


def _integer(v: Any, path: str, lo: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(path, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        _fail(path, f"must be >= {lo}, got {v}")
    return int(v)


def _fill(section: dict, defaults: dict, path: str) -> dict:
    required = [k for k, d in defaults.items() if d is ...]
    _check_keys(section, defaults, path, required)
    out = {}
    for k, d in defaults.items():
        if isinstance(d, dict):
            out[k] = _fill(section.get(k, {}), d, f"{path}.{k}")
        else:
            out[k] = copy.deepcopy(section.get(k, d))
    return out


def _variant(spec: Any, path: str) -> AlgorithmVariant:
    _check_keys(spec, {"kind"} | set().union(*_SOLVER_KEYS.values()), path, ["kind"])
    kind = spec["kind"]
    if kind not in _SOLVER_KEYS:
        _fail(f"{path}.kind", f"unknown solver kind {kind!r}; expected one of {sorted(_SOLVER_KEYS)}")
    _check_keys(spec, {"kind"} | _SOLVER_KEYS[kind], path, sorted(_SOLVER_KEYS[kind]))
    try:
        if kind == "gap_decay":
            return GapDecay(_number(spec["beta"], f"{path}.beta"))
        if kind == "factor_g":
            return FactorG(_number(spec["xi"], f"{path}.xi"), _number(spec["zeta"], f"{path}.zeta"))
        if kind == "factor_g_ptas":
            return FactorGPTAS(_number(spec["beta_p"], f"{path}.beta_p"), _integer(spec["n_users"], f"{path}.n_users"))
        base = _variant(spec["base"], f"{path}.base")
        h = spec["h"]
        if not isinstance(h, list):
            _fail(f"{path}.h", "expected a list of probabilities")
        return RandomizedH(base, tuple(_number(x, f"{path}.h[{i}]") for i, x in enumerate(h)))
    except ConfigInvalid:
        raise
    except ValueError as exc:
        _fail(path, str(exc))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    channel: ChannelModel
    rates: RateModel
    policy_name: str
    dcp: DcpConfig
    variant: AlgorithmVariant
    base_rate: tuple[float, ...]
    a_max: float
    loads: tuple[float, ...]
    horizon: int
    window: int
    replications: int
    seed: int
    grid: int
    mc_samples: int
    analysis_seed: int
    weight_angles: int
    rinf_delta: float
    rinf_rho_phi: float
    rinf_k_max: int
    raw: dict

    @property
    def policy(self):
        if self.policy_name == "dcp":
            return self.dcp
        if self.policy_name == "oracle":
            return OraclePolicy()
        return StaticPolicy(int(self.policy_name.split(":", 1)[1]), self.variant)

    def arrivals(self, load: float) -> ArrivalProcess:
        return ArrivalProcess(tuple(load * a for a in self.base_rate), self.a_max)

    def run_seed(self, load_index: int, replication: int) -> int:
        """Stream seed of one (load, replication) run, derived from the root seed."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(load_index, replication))
        return int(ss.generate_state(1, dtype=np.uint64)[0])

    def resolved(self) -> dict:
        return copy.deepcopy(self.raw)

    def with_overrides(self, **sections) -> "ExperimentConfig":
        """New config with keys replaced, e.g. ``with_overrides(sim={"horizon": 10**6})``."""
        raw = self.resolved()
        for sec, vals in sections.items():
            if isinstance(vals, dict):
                raw.setdefault(sec, {}).update(vals)
            else:
                raw[sec] = vals
        return from_dict(raw)


def from_dict(data: Any) -> ExperimentConfig:
    _check_keys(data, set(_TOP) | set(_SCHEMA), "", [k for k, d in _TOP.items() if d is ...])
    raw: dict[str, Any] = {k: copy.deepcopy(data.get(k, d)) for k, d in _TOP.items()}
    for sec, defaults in _SCHEMA.items():
        if sec not in data and any(d is ... for d in defaults.values()):
            _fail(sec, "missing required section")
        raw[sec] = _fill(data.get(sec, {}), defaults, sec)

    if not isinstance(raw["name"], str) or not raw["name"]:
        _fail("name", "expected a non-empty string")

    ch = raw["channel"]
    try:
        channel = new_markov(ch["states"], ch["T"])
    except (ValueError, TypeError) as exc:
        _fail("channel", str(exc))
    if channel.n_users != 2:
        _fail("channel.states", f"exactly two users are supported, got {channel.n_users}")

    try:
        rates = RateModel(_number(raw["rates"]["n0"], "rates.n0"), _number(raw["rates"]["p_total"], "rates.p_total"))
    except ConfigInvalid:
        raise
    except ValueError as exc:
        _fail("rates", str(exc))

    variant = _variant(raw["solver"], "solver")

    d = raw["dcp"]
    n_c = _integer(d["n_c"], "dcp.n_c", 1)
    alpha = _number(d["alpha"], "dcp.alpha")
    if not alpha > 0:
        _fail("dcp.alpha", f"must be > 0, got {alpha}")
    l1 = _integer(d["l1"], "dcp.l1", 1)
    if l1 & (l1 - 1):
        _fail("dcp.l1", f"must be a power of two, got {l1}")
    if not isinstance(d["n1_set"], list) or not d["n1_set"]:
        _fail("dcp.n1_set", "expected a non-empty list of frame lengths")
    n1_set = []
    for i, n1 in enumerate(d["n1_set"]):
        n1 = _integer(n1, f"dcp.n1_set[{i}]", 1)
        if n_c % n1:
            _fail(f"dcp.n1_set[{i}]", f"frame length {n1} does not divide n_c = {n_c}")
        n1_set.append(n1)
    if len(set(n1_set)) != len(n1_set):
        _fail("dcp.n1_set", "duplicate frame lengths")
    dcp = DcpConfig(n_c, alpha, l1, tuple(n1_set), variant)

    policy = raw["policy"]
    if policy not in ("dcp", "oracle"):
        if not (isinstance(policy, str) and policy.startswith("static:") and policy[7:].isdigit() and int(policy[7:]) >= 1):
            _fail("policy", f"expected 'dcp', 'oracle' or 'static:<N1>', got {policy!r}")

    a = raw["arrivals"]
    a_max = _number(a["a_max"], "arrivals.a_max")
    if not a_max > 0:
        _fail("arrivals.a_max", f"must be > 0, got {a_max}")
    if not isinstance(a["base"], list) or len(a["base"]) != channel.n_users:
        _fail("arrivals.base", f"expected {channel.n_users} mean rates")
    base = tuple(_number(x, f"arrivals.base[{i}]") for i, x in enumerate(a["base"]))
    if not isinstance(a["loads"], list) or not a["loads"]:
        _fail("arrivals.loads", "expected a non-empty list of load factors")
    loads = tuple(_number(x, f"arrivals.loads[{i}]") for i, x in enumerate(a["loads"]))
    for i, g in enumerate(loads):
        if g < 0:
            _fail(f"arrivals.loads[{i}]", f"must be >= 0, got {g}")
    for i, b in enumerate(base):
        if b < 0:
            _fail(f"arrivals.base[{i}]", f"must be >= 0, got {b}")
        if b * max(loads) > a_max:
            _fail(f"arrivals.base[{i}]", f"peak mean {b * max(loads)} exceeds a_max = {a_max}")

    s = raw["sim"]
    horizon = _integer(s["horizon"], "sim.horizon", 1)
    window = _integer(s["window"], "sim.window", 1)
    reps = _integer(s["replications"], "sim.replications", 1)
    seed = _integer(s["seed"], "sim.seed", 0)
    if horizon // window < MIN_VERDICT_SAMPLES:
        _fail("sim.window", f"horizon / window must give at least {MIN_VERDICT_SAMPLES} windows")

    an = raw["analysis"]
    grid = _integer(an["grid"], "analysis.grid", 1)
    mc = _integer(an["mc_samples"], "analysis.mc_samples", 1)
    an_seed = _integer(an["seed"], "analysis.seed", 0)
    w_angles = _integer(an["weight_angles"], "analysis.weight_angles", 2)
    ri = an["rinf"]
    delta = dcp.delta if ri["delta"] is None else _number(ri["delta"], "analysis.rinf.delta")
    if not 0 < delta <= 1:
        _fail("analysis.rinf.delta", f"must lie in (0, 1], got {delta}")
    rho = _number(ri["rho_phi"], "analysis.rinf.rho_phi")
    if not 0 <= rho < 1:
        _fail("analysis.rinf.rho_phi", f"must lie in [0, 1), got {rho}")
    k_max = _integer(ri["k_max"], "analysis.rinf.k_max", 1000)

    return ExperimentConfig(
        name=raw["name"], channel=channel, rates=rates, policy_name=policy, dcp=dcp, variant=variant,
        base_rate=base, a_max=a_max, loads=loads, horizon=horizon, window=window, replications=reps,
        seed=seed, grid=grid, mc_samples=mc, analysis_seed=an_seed, weight_angles=w_angles,
        rinf_delta=delta, rinf_rho_phi=rho, rinf_k_max=k_max, raw=raw,
    )


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigInvalid("", f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid("", f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if isinstance(data, dict) and MANIFEST_KEY in data:
        # a run manifest carries the fully resolved config it was produced from
        data = data["config"]
    return from_dict(data)


def bundled_config_path(name: str) -> Path:
    """Path of a config shipped with the package (``example1``, ``example2``)."""
    p = Path(__file__).with_name("configs") / f"{name}.cfg"
    if not p.exists():
        raise FileNotFoundError(f"no bundled config named {name!r}")
    return p

