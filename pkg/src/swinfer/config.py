"""Run configuration: flat ``key = value`` text files.

Format: UTF-8, one ``key = value`` per line, ``#`` starts a comment,
blank lines ignored, lists comma-separated. Unknown keys are rejected;
every field has a documented default. `parse_config(serialize_config(c))`
reproduces `c` exactly.
"""

from dataclasses import dataclass, fields

from .errors import ConfigError
from .model import SwinConfig


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got '{text}'")


def _parse_int_list(text: str) -> tuple[int, ...]:
    if not text.strip():
        return ()
    return tuple(int(x) for x in text.split(","))


def _parse_float_list(text: str) -> tuple[float, ...]:
    if not text.strip():
        return ()
    return tuple(float(x) for x in text.split(","))


def _parse_str_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


@dataclass
class RunConfig:
    """Everything a training or evaluation run depends on.

    Architecture fields mirror SwinConfig; optimizer, data and output
    fields configure the harness around it. The shipped defaults are
    the CPU-trainable toy model.
    """

    # architecture
    image_size: int = 64
    patch_size: int = 4
    in_channels: int = 3
    embed_dim: int = 24
    depths: tuple[int, ...] = (1, 1, 2, 1)
    num_heads: tuple[int, ...] = (2, 4, 6, 8)
    window_size: int = 4
    mlp_ratio: float = 4.0
    num_classes: int = 7
    se_reduction: int = 4
    use_se: bool = True
    drop_rate: float = 0.0
    # optimizer
    base_lr: float = 1e-3
    momentum: float = 0.9
    rho: float = 0.05
    sam_enabled: bool = True
    epochs: int = 25
    batch_size: int = 16
    # data
    data_sources: tuple[str, ...] = ()
    split_fractions: tuple[float, ...] = (0.8, 0.1, 0.1)
    seed: int = 0
    # run
    precision: int = 32
    output_dir: str = "runs/toy"

    def swin(self) -> SwinConfig:
        cfg = SwinConfig(
            image_size=self.image_size,
            patch_size=self.patch_size,
            in_channels=self.in_channels,
            embed_dim=self.embed_dim,
            depths=self.depths,
            num_heads=self.num_heads,
            window_size=self.window_size,
            mlp_ratio=self.mlp_ratio,
            num_classes=self.num_classes,
            se_reduction=self.se_reduction,
            use_se=self.use_se,
            drop_rate=self.drop_rate,
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        self.swin()
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.rho < 0:
            raise ConfigError(f"rho must be >= 0, got {self.rho}")
        if len(self.split_fractions) != 3:
            raise ConfigError("split_fractions needs exactly 3 values")


_PARSERS = {
    int: int,
    float: float,
    bool: _parse_bool,
    str: str,
    tuple[int, ...]: _parse_int_list,
    tuple[float, ...]: _parse_float_list,
    tuple[str, ...]: _parse_str_list,
}


def _field_types() -> dict[str, type]:
    return {f.name: f.type for f in fields(RunConfig)}


def parse_assignments(pairs: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    """Apply string key=value assignments on top of `base` (or defaults)."""
    cfg = base if base is not None else RunConfig()
    types = _field_types()
    for key, raw in pairs.items():
        if key not in types:
            raise ConfigError(f"unknown config key '{key}'")
        parser = _PARSERS[types[key]]
        try:
            setattr(cfg, key, parser(raw))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for '{key}': {raw}") from exc
    return cfg


def parse_config(text: str) -> RunConfig:
    pairs = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected 'key = value', got '{line}'")
        key, value = stripped.split("=", 1)
        pairs[key.strip()] = value.strip()
    return parse_assignments(pairs)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}"
             for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"
