"""Run configuration in a flat ``key = value`` text format.

Example::

    # tiny image run
    kind = image
    dataset = data/faces
    output_dir = runs/tiny
    encoder.R = 16
    decoder.sigma_levels = 32, 8
    train.steps = 500

Top-level keys are ``kind``, ``dataset`` and ``output_dir``; everything else
is ``section.field`` with sections ``encoder``, ``decoder``, ``train`` and
``scene`` (procedural light-field scenes).  Relative output directories are
resolved against ``$LAINR_OUTPUT_ROOT`` when it is set.
"""

import dataclasses
import os
from dataclasses import dataclass, field

from .data import SceneSpec
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .training import TrainConfig

OUTPUT_ROOT_ENV = "LAINR_OUTPUT_ROOT"
KINDS = ("image", "lightfield")
SYNTHETIC_PREFIX = "synthetic:"


@dataclass
class RunConfig:
    kind: str = "image"
    dataset: str = ""
    output_dir: str = "runs/default"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}", field="kind")
        if not self.dataset:
            raise ConfigError("dataset path is required", field="dataset")
        if self.dataset.startswith(SYNTHETIC_PREFIX) and self.kind != "lightfield":
            raise ConfigError("synthetic scenes need kind = lightfield", field="dataset")
        self.decoder = dataclasses.replace(self.decoder, d_in=6 if self.kind == "lightfield" else 2)
        for section in ("encoder", "decoder", "train"):
            try:
                getattr(self, section).validate()
            except ConfigError as exc:
                name = exc.field or section
                if not name.startswith(section):
                    name = f"{section}.{name}"
                raise ConfigError(str(exc), field=name) from None
        return self

    def resolved_output_dir(self):
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not os.path.isabs(self.output_dir):
            return os.path.join(root, self.output_dir)
        return self.output_dir

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        dec = dict(d["decoder"])
        dec["sigma_levels"] = tuple(dec["sigma_levels"])
        return cls(kind=d["kind"], dataset=d["dataset"], output_dir=d["output_dir"],
                   encoder=EncoderConfig(**d["encoder"]), decoder=DecoderConfig(**dec),
                   train=TrainConfig(**d["train"]), scene=SceneSpec(**d["scene"]))


def _convert(key, raw, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(x) for x in raw.replace(",", " ").split())
        return raw
    except ValueError:
        kind = type(default).__name__
        raise ConfigError(f"cannot parse {raw!r} as {kind}", field=key) from None


def parse_config(text):
    """Parse config text into a validated :class:`RunConfig`."""
    cfg = RunConfig()
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key}", field=key)
        seen.add(key)
        if "." in key:
            section, name = key.split(".", 1)
            target = getattr(cfg, section, None)
            if not dataclasses.is_dataclass(target) or name not in {f.name for f in dataclasses.fields(target)}:
                raise ConfigError(f"line {lineno}: unknown key {key}", field=key)
            setattr(target, name, _convert(key, raw, getattr(target, name)))
        else:
            if key not in ("kind", "dataset", "output_dir"):
                raise ConfigError(f"line {lineno}: unknown key {key}", field=key)
            setattr(cfg, key, raw)
    return cfg.validate()


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}", field="config") from exc
    return parse_config(text)


def format_config(cfg):
    """Render a config back into the text format (round-trips via parse)."""
    lines = [f"kind = {cfg.kind}", f"dataset = {cfg.dataset}", f"output_dir = {cfg.output_dir}"]
    for section in ("encoder", "decoder", "train", "scene"):
        for f in dataclasses.fields(getattr(cfg, section)):
            value = getattr(getattr(cfg, section), f.name)
            if isinstance(value, tuple):
                value = ", ".join(repr(float(v)) for v in value)
            lines.append(f"{section}.{f.name} = {value}")
    return "\n".join(lines) + "\n"
