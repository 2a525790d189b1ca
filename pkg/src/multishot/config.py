"""Run configuration: one JSON document, dotted-path overrides, stable hash."""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

from .codec import CodecConfig
from .dataset import CurateConfig, SynthParams
from .diffusion import TrainRecipe
from .errors import ConfigError
from .model import ModelConfig


@dataclass
class SynthSection:
    n_videos: int = 160
    # mostly varied backgrounds so that most curated samples contain visible cuts
    params: SynthParams = field(default_factory=lambda: SynthParams(home_bg_rate=0.1))


@dataclass
class EvalSection:
    metrics: tuple = ("ic", "bc", "ta", "msde")
    cut_threshold: float = 3.0
    cut_window: int = 15
    backend: str = "toy"
    embed_command: str = None
    sampling_steps: int = 50


@dataclass
class RunConfig:
    """Everything a pipeline run depends on.

    The defaults are the desk configuration: 8x8 frames at 4 frames per
    token-frame with 1x1 spatial patches, so one token carries a 2x2x4
    pixel block.
    """

    seed: int = 0
    frame_size: int = 8
    codec: CodecConfig = field(default_factory=lambda: CodecConfig(f_p_h=1, f_p_w=1))
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainRecipe = field(default_factory=lambda: TrainRecipe.desk(batch_size=24))
    synth: SynthSection = field(default_factory=SynthSection)
    curate: CurateConfig = field(default_factory=lambda: CurateConfig(n_samples=900, method2_share=0.75))
    eval: EvalSection = field(default_factory=EvalSection)
    out: str = "runs/default"

    def to_dict(self):
        return _plain(asdict(self))

    def hash(self):
        """sha256 over the canonical JSON of every field except ``out``."""
        d = self.to_dict()
        d.pop("out", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d):
        return _build(cls, d)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump({**self.to_dict(), "config_hash": self.hash()}, fh, indent=2, sort_keys=True)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _build(cls, d):
    if not isinstance(d, dict):
        raise ConfigError(f"expected an object for {cls.__name__}, got {type(d).__name__}")
    names = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(names) - {"config_hash"}
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    base = cls()
    kwargs = {}
    for name, f in names.items():
        if name not in d:
            continue
        current = getattr(base, name)
        value = d[name]
        if is_dataclass(current):
            kwargs[name] = _build(type(current), {**_plain(asdict(current)), **value})
        elif isinstance(current, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, overrides=()):
    """Defaults, then the JSON file, then ``key.path=value`` overrides.

    Override values are parsed as JSON when possible, else kept as strings.
    """
    data = RunConfig().to_dict()
    if path:
        with open(path) as fh:
            _merge(data, json.load(fh))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"override path {key!r} does not exist")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"override path {key!r} does not exist")
        node[parts[-1]] = value
    data.pop("config_hash", None)
    return RunConfig.from_dict(data)


def _merge(dst, src):
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _merge(dst[k], v)
        else:
            dst[k] = v
