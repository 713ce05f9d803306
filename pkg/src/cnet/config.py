"""Run configuration: a flat UTF-8 ``key=value`` file.

Blank lines and ``#`` comments are ignored; unknown keys are rejected so a
typo cannot silently fall back to a default.  parse(serialize(parse(text)))
is the identity.
"""

from dataclasses import dataclass, fields
from fractions import Fraction

from .data import AugmentSpec
from .errors import ConfigError
from .model import CNetConfig


def _parse_bool(s: str) -> bool:
    if s in ("true", "false"):
        return s == "true"
    raise ConfigError(f"expected true/false, got {s!r}")


def _parse_int_tuple(s: str) -> tuple:
    return tuple(int(v) for v in s.split(","))


def _parse_size(s: str) -> tuple:
    h, sep, w = s.partition("x")
    return (int(h), int(w)) if sep else (int(h), int(h))


def _parse_names(s: str) -> tuple:
    names = tuple(n.strip() for n in s.split(","))
    if len(names) != 2 or not all(names):
        raise ConfigError(f"class_names needs exactly two names, got {s!r}")
    return names


_fmt_plain = str
_fmt_bool = lambda b: "true" if b else "false"
_fmt_tuple = lambda t: ",".join(map(str, t))
_fmt_size = lambda t: f"{t[0]}x{t[1]}"


@dataclass(frozen=True)
class RunConfig:
    data_dir: str = ""
    class_names: tuple = ("benign", "malignant")
    group_filter: str = ""
    input_size: tuple = (224, 224)
    input_channels: int = 3
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    outer_convs_per_block: tuple = (2, 2, 4, 4)
    outer_filters: tuple = (64, 128, 256, 256)
    middle_convs_per_block: int = 4
    middle_filters: int = 256
    middle_blocks: int = 2
    inner_convs: int = 2
    inner_filters: int = 256
    fc_units: int = 1024
    dropout_middle: float = 0.25
    dropout_fc: float = 0.5
    width_scale: Fraction = Fraction(1)
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    augment: bool = True
    horizontal_flip: bool = True
    vertical_flip: bool = True
    shear: float = 0.2
    zoom: float = 0.2
    width_shift: float = 0.2
    height_shift: float = 0.2
    rotation_degrees: float = 40.0


# key -> (parser, formatter); every RunConfig field appears exactly once.
_CODECS = {
    "data_dir": (str, _fmt_plain),
    "class_names": (_parse_names, _fmt_tuple),
    "group_filter": (str, _fmt_plain),
    "input_size": (_parse_size, _fmt_size),
    "input_channels": (int, _fmt_plain),
    "batch_size": (int, _fmt_plain),
    "epochs": (int, _fmt_plain),
    "seed": (int, _fmt_plain),
    "outer_convs_per_block": (_parse_int_tuple, _fmt_tuple),
    "outer_filters": (_parse_int_tuple, _fmt_tuple),
    "middle_convs_per_block": (int, _fmt_plain),
    "middle_filters": (int, _fmt_plain),
    "middle_blocks": (int, _fmt_plain),
    "inner_convs": (int, _fmt_plain),
    "inner_filters": (int, _fmt_plain),
    "fc_units": (int, _fmt_plain),
    "dropout_middle": (float, repr),
    "dropout_fc": (float, repr),
    "width_scale": (Fraction, _fmt_plain),
    "learning_rate": (float, repr),
    "beta1": (float, repr),
    "beta2": (float, repr),
    "eps_hat": (float, repr),
    "augment": (_parse_bool, _fmt_bool),
    "horizontal_flip": (_parse_bool, _fmt_bool),
    "vertical_flip": (_parse_bool, _fmt_bool),
    "shear": (float, repr),
    "zoom": (float, repr),
    "width_shift": (float, repr),
    "height_shift": (float, repr),
    "rotation_degrees": (float, repr),
}

assert set(_CODECS) == {f.name for f in fields(RunConfig)}


def parse_run_config(text: str) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        if key not in _CODECS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        parser, _ = _CODECS[key]
        try:
            values[key] = parser(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return RunConfig(**values)


def load_run_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_run_config(fh.read())


def serialize_run_config(rc: RunConfig) -> str:
    lines = []
    for key in sorted(_CODECS):
        _, fmt = _CODECS[key]
        lines.append(f"{key}={fmt(getattr(rc, key))}")
    return "\n".join(lines) + "\n"


def to_cnet_config(rc: RunConfig) -> CNetConfig:
    return CNetConfig(
        input_size=rc.input_size,
        input_channels=rc.input_channels,
        outer_convs_per_block=rc.outer_convs_per_block,
        outer_filters=rc.outer_filters,
        middle_convs_per_block=rc.middle_convs_per_block,
        middle_filters=rc.middle_filters,
        middle_blocks=rc.middle_blocks,
        inner_convs=rc.inner_convs,
        inner_filters=rc.inner_filters,
        fc_units=rc.fc_units,
        dropout_middle=rc.dropout_middle,
        dropout_fc=rc.dropout_fc,
        width_scale=rc.width_scale,
    )


def to_augment_spec(rc: RunConfig):
    if not rc.augment:
        return None
    return AugmentSpec(
        horizontal_flip=rc.horizontal_flip,
        vertical_flip=rc.vertical_flip,
        shear=rc.shear,
        zoom=rc.zoom,
        width_shift=rc.width_shift,
        height_shift=rc.height_shift,
        rotation_degrees=rc.rotation_degrees,
    )
