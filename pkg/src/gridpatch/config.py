"""Run configuration: a flat key-value text file over dataclass defaults.

Config files hold ``key = value`` lines ('#' starts a comment).  Values are
coerced to the declared field type; unknown keys are an error.  Every command
writes its resolved configuration next to its outputs so a run can be
reproduced from the output directory alone.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .data import SynthProfile


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # global
    seed: int = 0
    out: str = "runs/default"

    # synthetic series
    num_units: int = 18
    num_days: int = 4000
    base_capacity: float = 90.0
    base_spread: float = 0.25
    level: float = 0.62
    seasonal_amp: float = 0.22
    weekly_amp: float = 0.05
    noise_amp: float = 0.12
    noise_rho: float = 0.72
    lull_rate: float = 0.012
    lull_depth: float = 0.55
    lull_days_min: int = 3
    lull_days_max: int = 7

    # grid case
    case_buses: int = 126
    case_gens: int = 54
    case_branches: int = 185
    case_loads: int = 91

    # forecaster
    d_model: int = 32
    heads: int = 2
    enc_blocks: int = 2
    dec_blocks: int = 1
    input_len: int = 56
    decoder_len: int = 28
    horizon: int = 15
    train_epochs: int = 4
    train_lr: float = 1e-3
    max_windows_per_epoch: int = 512

    # confidence
    mu: float = 5.0

    # dispatching necessity
    omega_p: float = 1.0
    phi_r: float = 0.8
    phi_l: float = 0.8
    n_dis: int = 40

    # agent
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    replay_capacity: int = 20000
    noise_start: float = 0.2
    noise_end: float = 0.02
    hidden: int = 128
    n_hidden: int = 2
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    episodes: int = 300
    episode_len_cap: int = 60
    eval_episodes: int = 10
    horizon_mode: str = "long"   # "long" = 10-day forecast block, "short" = 1-day
    omega_r: float = 2.0

    # eval-forecast sweep
    sweep_inputs: str = "48,56,64,72,80,88,96"
    sweep_horizons: str = "15,20,25,30"
    sweep_epochs: int = 2
    sweep_windows_per_epoch: int = 256
    train_in_place: bool = True

    # ablation
    ablate_episodes: int = 40

    def synth_profile(self) -> SynthProfile:
        return SynthProfile(
            base_capacity=self.base_capacity, base_spread=self.base_spread,
            level=self.level, seasonal_amp=self.seasonal_amp, weekly_amp=self.weekly_amp,
            noise_amp=self.noise_amp, noise_rho=self.noise_rho, lull_rate=self.lull_rate,
            lull_depth=self.lull_depth, lull_days_min=self.lull_days_min,
            lull_days_max=self.lull_days_max,
        )

    @property
    def forecast_days(self) -> int:
        if self.horizon_mode == "long":
            return 10
        if self.horizon_mode == "short":
            return 1
        if self.horizon_mode == "none":
            return 0
        raise ConfigError(f"horizon_mode must be long/short/none, got {self.horizon_mode!r}")

    def sweep_grid(self) -> list[tuple[int, int]]:
        ins = [int(v) for v in self.sweep_inputs.split(",") if v.strip()]
        hors = [int(v) for v in self.sweep_horizons.split(",") if v.strip()]
        return [(i, h) for i in ins for h in hors]


_COERCER = {int: int, float: float, str: str,
            bool: lambda v: v.strip().lower() in ("1", "true", "yes", "on")}


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    by_name = {f.name: f for f in fields(RunConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in by_name:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        ftype = by_name[key].type
        coerce = _COERCER[{"int": int, "float": float, "str": str, "bool": bool}[ftype]
                          if isinstance(ftype, str) else ftype]
        try:
            setattr(cfg, key, coerce(val))
        except ValueError:
            raise ConfigError(f"line {lineno}: cannot parse {val!r} as {ftype}") from None
    return cfg


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), base)


def dump_config(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"
