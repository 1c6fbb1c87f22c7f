"""Training configuration and the flat ``key = value`` config-file format."""
import dataclasses
from dataclasses import dataclass, field

from splatkit.raster import ALPHA_MIN


class ConfigError(ValueError):
    pass


def _default_lrs():
    return {
        "mu": 1.6e-4,
        "mu_final": 1.6e-6,
        "sh_dc": 2.5e-3,
        "sh_rest": 2.5e-3 / 20.0,
        "opacity_logit": 5e-2,
        "log_scale": 5e-3,
        "rot": 1e-3,
    }


@dataclass
class TrainConfig:
    iterations: int = 30000
    K: int = 10
    lam: float = 0.2
    tau: float = 0.5
    tau_d: float = 5.0
    tau_p: float = 0.9
    beta: float = 1.0
    tau_alpha: float = ALPHA_MIN
    densify_from: int = 500
    densify_until: int = 15000
    densify_every: int = 500
    prune_every_early: int = 500
    prune_every_late: int = 3000
    grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    min_opacity: float = 0.005
    late_min_opacity: float = 0.1
    max_screen_size: float = 20.0
    big_world_fraction: float = 0.1
    size_prune_after: int = 3000
    opacity_reset_every: int = 0
    lazy_opt_enabled: bool = False
    lazy_opt_start: int = 15000
    lazy_opt_switch: int = 20000
    lazy_opt_interval_15k: int = 32
    lazy_opt_interval_20k: int = 64
    use_vcd: bool = True
    use_vcp: bool = True
    use_cb: bool = True
    abs_grad_split: bool = True
    densify: bool = True
    prune: bool = True
    sh_degree: int = 3
    float64: bool = False
    workers: int = 1
    seed: int = 0
    lrs: dict = field(default_factory=_default_lrs)

    def __post_init__(self):
        self.validate()

    def validate(self):
        checks = [
            (self.iterations >= 0, "iterations must be >= 0"),
            (self.K >= 1, "K must be >= 1"),
            (0.0 <= self.lam <= 1.0, "lam must lie in [0, 1]"),
            (0.0 < self.tau < 1.0, "tau must lie in (0, 1)"),
            (self.tau_d >= 0.0, "tau_d must be >= 0"),
            (0.0 <= self.tau_p <= 1.0, "tau_p must lie in [0, 1]"),
            (0.0 < self.beta <= 1.0, "beta must lie in (0, 1]"),
            (0.0 < self.tau_alpha < 1.0, "tau_alpha must lie in (0, 1)"),
            (self.densify_every > 0 and self.prune_every_early > 0 and self.prune_every_late > 0,
             "event cadences must be positive"),
            (self.densify_until >= self.densify_from, "densify_until must be >= densify_from"),
            ((self.densify_until - self.densify_from) % self.densify_every == 0,
             "densify_every must divide densify_until - densify_from"),
            (0 <= self.sh_degree <= 3, "sh_degree must lie in 0..3"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _coerce(key, text, kind):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(float(text)) if "e" in text.lower() else int(text)
        if kind is float:
            if "/" in text:
                num, den = text.split("/")
                return float(num) / float(den)
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {text!r}") from None
    return text


def parse_config_text(text, base=None):
    """Parse ``key = value`` lines (``#`` comments) over ``base``.

    Learning rates use ``lr.<group> = value``. Unknown keys raise :class:`ConfigError`
    naming the key.
    """
    base = base or TrainConfig()
    values = {}
    lrs = dict(base.lrs)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key.startswith("lr."):
            group = key[3:]
            if group not in lrs:
                raise ConfigError(f"unknown config key: {key!r}")
            lrs[group] = _coerce(key, val, float)
            continue
        if key not in _FIELDS or key == "lrs":
            raise ConfigError(f"unknown config key: {key!r}")
        kind = type(getattr(base, key))
        values[key] = _coerce(key, val, kind)
    return base.replace(lrs=lrs, **values)


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config_text(fh.read(), base)


def dump_config(cfg):
    lines = []
    for name in _FIELDS:
        if name == "lrs":
            continue
        lines.append(f"{name} = {getattr(cfg, name)}")
    lines += [f"lr.{k} = {v!r}" for k, v in cfg.lrs.items()]
    return "\n".join(lines) + "\n"
