"""Scenario configuration: JSON loading, validation, presets and the price path."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from ..chainsim import COIN, SIM_BLOCK_INTERVAL, SIM_EPOCH_LEN, SIM_GENESIS_BITS
from ..lockers import UNIT, EconParams, PriceQuote, frac

PRESET_NAMES = (
    "honest-run",
    "thief-locker",
    "lazy-locker",
    "fake-root-attack",
    "timestamp-attack",
    "price-crash-liquidation",
    "censorship-self-submit",
    "reservation-expiry",
)

ROLES = ("relayer", "teleporter", "locker", "disputer", "slasher", "user")

PROFILES = {
    "relayer": {"honest", "fake_root_at_height", "timestamp_attacker", "noop"},
    "teleporter": {"honest", "censor_teleporters", "noop"},
    "locker": {"honest", "thief_at_tick", "lazy_ignore_unwraps", "noop"},
    "disputer": {"honest", "griefer", "noop"},
    "slasher": {"honest", "noop"},
    "user": {"honest", "noop"},
}

ACTION_KINDS = {"lock", "unwrap", "reserve"}


class InvalidConfig(ValueError):
    pass


def btc_to_sats(x: Any) -> int:
    return int(frac(x) * COIN)


def tokens_to_units(x: Any) -> int:
    return int(frac(x) * UNIT)


@dataclass(frozen=True)
class AgentSpec:
    role: str
    name: str
    profile: str = "honest"
    params: dict = field(default_factory=dict)

    def get(self, key: str, default: Any = None) -> Any:
        return self.params.get(key, default)


@dataclass(frozen=True)
class PricePath:
    breakpoints: tuple[tuple[int, Fraction, Fraction], ...]

    def price_at(self, tick: int, timestamp: int = 0) -> PriceQuote:
        """Step interpolation: the last breakpoint at or before ``tick``."""
        chosen = self.breakpoints[0]
        for bp in self.breakpoints:
            if bp[0] <= tick:
                chosen = bp
            else:
                break
        return PriceQuote(chosen[1], chosen[2], timestamp)


@dataclass
class ScenarioConfig:
    name: str
    seed: int
    bridge: str
    duration_ticks: int
    tick_seconds: int
    agents: list[AgentSpec]
    price_path: PricePath
    econ: EconParams
    fees: dict
    bridge_params: dict
    chain: dict
    proxy: dict
    description: str = ""

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        try:
            return cls._from_dict(raw)
        except InvalidConfig:
            raise
        except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
            raise InvalidConfig(f"{type(exc).__name__}: {exc}") from exc

    @classmethod
    def _from_dict(cls, raw: dict) -> "ScenarioConfig":
        if not isinstance(raw, dict):
            raise InvalidConfig("scenario must be a JSON object")
        known = {"name", "description", "seed", "bridge", "duration_ticks", "tick_seconds",
                 "agents", "price_path", "econ", "fees", "bridge_params", "chain", "proxy"}
        unknown = set(raw) - known
        if unknown:
            raise InvalidConfig(f"unknown keys: {sorted(unknown)}")
        seed = int(raw.get("seed", 0))
        if not 0 <= seed < 1 << 64:
            raise InvalidConfig("seed must be a 64-bit unsigned integer")
        bridge = raw.get("bridge", "spv")
        if bridge not in ("spv", "optimistic"):
            raise InvalidConfig(f"bridge must be spv or optimistic, not {bridge!r}")
        duration = int(raw.get("duration_ticks", 200))
        tick_seconds = int(raw.get("tick_seconds", 120))
        if duration <= 0 or tick_seconds <= 0:
            raise InvalidConfig("duration_ticks and tick_seconds must be positive")

        agents = []
        names = set()
        for entry in raw.get("agents", []):
            role = entry["role"]
            if role not in ROLES:
                raise InvalidConfig(f"unknown role {role!r}")
            profile = entry.get("profile", "honest")
            if profile not in PROFILES[role]:
                raise InvalidConfig(f"profile {profile!r} not valid for role {role}")
            name = entry["name"]
            if name in names:
                raise InvalidConfig(f"duplicate agent name {name!r}")
            names.add(name)
            params = {k: v for k, v in entry.items() if k not in ("role", "name", "profile")}
            for action in params.get("actions", []):
                if action.get("do") not in ACTION_KINDS:
                    raise InvalidConfig(f"unknown action {action.get('do')!r} for {name}")
            agents.append(AgentSpec(role, name, profile, params))
        lockers = {a.name for a in agents if a.role == "locker"}
        for a in agents:
            for action in a.get("actions", []):
                if "locker" in action and action["locker"] not in lockers:
                    raise InvalidConfig(f"{a.name} references unknown locker {action['locker']!r}")

        path = raw.get("price_path", [[0, 1, 1]])
        bps = []
        for tick, btc, coll in sorted(path, key=lambda p: p[0]):
            btc, coll = frac(btc), frac(coll)
            if btc <= 0 or coll <= 0:
                raise InvalidConfig("prices must be strictly positive")
            bps.append((int(tick), btc, coll))
        if not bps:
            raise InvalidConfig("price_path needs at least one breakpoint")

        econ_raw = dict(raw.get("econ", {}))
        econ_known = {"collateralization_ratio", "liquidation_ratio", "discount_ratio",
                      "theft_grace", "unwrap_deadline"}
        if set(econ_raw) - econ_known:
            raise InvalidConfig(f"unknown econ keys: {sorted(set(econ_raw) - econ_known)}")
        try:
            econ = EconParams(**econ_raw)
        except Exception as exc:
            raise InvalidConfig(str(exc)) from exc

        def _section(key: str, allowed: set) -> dict:
            sec = dict(raw.get(key, {}))
            bad = set(sec) - allowed
            if bad:
                raise InvalidConfig(f"unknown {key} keys: {sorted(bad)}")
            return sec

        fees = _section("fees", {"mint_fee_base", "mint_fee_max", "burn_fee_max", "ratio_knee"})
        bridge_params = _section("bridge_params", {
            "finalization_number", "challenge_period", "proof_period", "relayer_bond",
            "disputer_bond", "max_future_drift"})
        chain = _section("chain", {"epoch_len", "block_interval", "genesis_bits", "genesis_time"})
        chain.setdefault("epoch_len", SIM_EPOCH_LEN)
        chain.setdefault("block_interval", SIM_BLOCK_INTERVAL)
        bits = chain.get("genesis_bits", SIM_GENESIS_BITS)
        chain["genesis_bits"] = int(bits, 16) if isinstance(bits, str) else int(bits)
        chain.setdefault("genesis_time", 1_700_000_000)
        proxy = _section("proxy", {"reservation_window", "reservation_deposit"})

        return cls(name=str(raw.get("name", "scenario")), seed=seed, bridge=bridge,
                   duration_ticks=duration, tick_seconds=tick_seconds, agents=agents,
                   price_path=PricePath(tuple(bps)), econ=econ, fees=fees,
                   bridge_params=bridge_params, chain=chain, proxy=proxy,
                   description=str(raw.get("description", "")))

    def price_at(self, tick: int) -> PriceQuote:
        return self.price_path.price_at(tick, self.chain["genesis_time"] + tick * self.tick_seconds)


def load_scenario(source: "str | Path", seed: Optional[int] = None) -> ScenarioConfig:
    """Load a scenario from a JSON file path or a preset name."""
    text = None
    path = Path(source)
    if path.is_file():
        text = path.read_text()
    elif str(source) in PRESET_NAMES:
        text = preset_text(str(source))
    else:
        raise InvalidConfig(f"no scenario file or preset named {source!r}")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"malformed scenario JSON: {exc}") from exc
    if seed is not None:
        if not isinstance(raw, dict):
            raise InvalidConfig("scenario must be a JSON object")
        raw["seed"] = seed
    return ScenarioConfig.from_dict(raw)


def preset_text(name: str) -> str:
    if name not in PRESET_NAMES:
        raise InvalidConfig(f"unknown preset {name!r}")
    return resources.files("telebtc.sim").joinpath("presets", f"{name}.json").read_text()


def load_preset(name: str, seed: Optional[int] = None) -> ScenarioConfig:
    raw = json.loads(preset_text(name))
    if seed is not None:
        raw["seed"] = seed
    return ScenarioConfig.from_dict(raw)
