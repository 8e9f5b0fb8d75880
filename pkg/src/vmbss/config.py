"""Flat key=value config files and the resolved pipeline configuration.

Config files are plain text: one ``section.key = value`` per line, ``#``
comments, values parsed as int, float, bool, or string. The same flat
mapping round-trips through the pipeline manifest, so a finished run can be
reproduced from its manifest alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .cacgmm import ScConfig, default_sc_stft
from .fcp import FcpConfig
from .iva import IvaConfig, default_iva_stft
from .losses import LossWeights
from .scene import SceneSpec
from .separator import SeparatorConfig
from .signals import ConfigError, StftConfig

DEMIXERS = ("iva", "sc", "none")


def default_stage_stft(sample_rate: int = 8000) -> StftConfig:
    """Separator-stage analysis settings: 64 ms window, 16 ms hop."""
    return StftConfig.from_milliseconds(64.0, 16.0, sample_rate)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one experiment run needs, resolved to concrete values."""

    scene: SceneSpec = field(default_factory=SceneSpec)
    stft: StftConfig = field(default_factory=default_stage_stft)
    demixer: str = "iva"
    iva: IvaConfig = field(default_factory=IvaConfig)
    sc: ScConfig = field(default_factory=ScConfig)
    separator: SeparatorConfig = field(default_factory=SeparatorConfig)
    output_dir: str = "runs"
    num_scenes: int = 1
    base_seed: int = 0

    def __post_init__(self):
        if self.demixer not in DEMIXERS:
            raise ConfigError(f"demixer must be one of {DEMIXERS}")
        if self.num_scenes < 1:
            raise ConfigError("num_scenes must be at least 1")


def parse_value(text: str):
    """Parse a config value: int, then float, then bool, else string."""
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into a flat mapping."""
    mapping: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        mapping[key] = parse_value(value)
    return mapping


def load_config(path: str | Path) -> dict:
    return parse_config_text(Path(path).read_text())


def _pick(mapping: dict, prefix: str, allowed: set[str]) -> dict:
    out = {}
    for key, value in mapping.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1:]
        if name not in allowed:
            raise ConfigError(f"unknown config key {key!r}")
        out[name] = value
    return out


def _stft_from(params: dict, default: StftConfig) -> StftConfig:
    """Build an StftConfig from window_length/hop_length/fft_size overrides."""
    names = ("window_length", "hop_length", "fft_size")
    if not any(n in params for n in names):
        return default
    kwargs = {n: params[n] for n in names if n in params}
    kwargs.setdefault("window_length", default.window_length)
    kwargs.setdefault("hop_length", default.hop_length)
    return StftConfig(**kwargs)


# the delay-range pair is flattened to two scalar keys in config files
_SCENE_KEYS = ({f.name for f in fields(SceneSpec)} - {"direct_delay_range"}
               | {"direct_delay_min", "direct_delay_max"})
_STFT_KEYS = {"window_length", "hop_length", "fft_size"}
_IVA_KEYS = {"n_src", "n_iter", "eps", "drop_lowest_energy"} | _STFT_KEYS
_SC_KEYS = {"n_classes", "n_iter", "eps", "seed", "drop_lowest_energy"} | _STFT_KEYS
_FCP_KEYS = {"past_taps", "future_taps", "tikhonov"}
_LOSS_KEYS = {"w_r", "w_i", "w_m", "alpha", "beta", "isms_enabled"}
_SEPARATOR_KEYS = {"init", "max_steps", "step_size", "fcp_refresh_every",
                   "early_stop_rel_tol", "seed"}
_TOP_KEYS = {"demixer", "output_dir", "num_scenes", "base_seed"}


def pipeline_config_from_mapping(mapping: dict) -> PipelineConfig:
    """Resolve a flat mapping into a PipelineConfig, rejecting unknown keys."""
    known_prefixes = ("scene", "stft", "iva", "sc", "fcp", "loss", "separator")
    for key in mapping:
        head = key.split(".", 1)[0]
        if key not in _TOP_KEYS and head not in known_prefixes:
            raise ConfigError(f"unknown config key {key!r}")

    scene_params = _pick(mapping, "scene", _SCENE_KEYS)
    lo = scene_params.pop("direct_delay_min", None)
    hi = scene_params.pop("direct_delay_max", None)
    if lo is not None or hi is not None:
        default = SceneSpec.direct_delay_range
        scene_params["direct_delay_range"] = (
            int(lo) if lo is not None else default[0],
            int(hi) if hi is not None else default[1])
    scene = SceneSpec(**scene_params)
    sample_rate = scene.sample_rate
    stft_cfg = _stft_from(_pick(mapping, "stft", _STFT_KEYS),
                          default_stage_stft(sample_rate))

    iva_params = _pick(mapping, "iva", _IVA_KEYS)
    iva_stft = _stft_from(iva_params, default_iva_stft(sample_rate))
    iva_cfg = IvaConfig(stft=iva_stft,
                        **{k: v for k, v in iva_params.items()
                           if k not in _STFT_KEYS})

    sc_params = _pick(mapping, "sc", _SC_KEYS)
    sc_stft = _stft_from(sc_params, default_sc_stft(sample_rate))
    sc_cfg = ScConfig(stft=sc_stft,
                      **{k: v for k, v in sc_params.items()
                         if k not in _STFT_KEYS})

    fcp_cfg = FcpConfig(**_pick(mapping, "fcp", _FCP_KEYS))
    loss_params = _pick(mapping, "loss", _LOSS_KEYS)
    isms_enabled = bool(loss_params.pop("isms_enabled", False))
    weights = LossWeights(**loss_params)

    sep_cfg = SeparatorConfig(loss_weights=weights, fcp=fcp_cfg,
                              isms_enabled=isms_enabled,
                              **_pick(mapping, "separator", _SEPARATOR_KEYS))

    return PipelineConfig(
        scene=scene, stft=stft_cfg,
        demixer=str(mapping.get("demixer", "iva")),
        iva=iva_cfg, sc=sc_cfg, separator=sep_cfg,
        output_dir=str(mapping.get("output_dir", "runs")),
        num_scenes=int(mapping.get("num_scenes", 1)),
        base_seed=int(mapping.get("base_seed", 0)),
    )


def pipeline_config_to_mapping(cfg: PipelineConfig) -> dict:
    """Flatten a PipelineConfig back to the key=value mapping (manifest form)."""
    out: dict = {}
    for f in fields(SceneSpec):
        if f.name == "direct_delay_range":
            out["scene.direct_delay_min"] = cfg.scene.direct_delay_range[0]
            out["scene.direct_delay_max"] = cfg.scene.direct_delay_range[1]
        else:
            out[f"scene.{f.name}"] = getattr(cfg.scene, f.name)
    for name in sorted(_STFT_KEYS):
        out[f"stft.{name}"] = getattr(cfg.stft, name)
    out["demixer"] = cfg.demixer
    for name in sorted(_IVA_KEYS - _STFT_KEYS):
        out[f"iva.{name}"] = getattr(cfg.iva, name)
    for name in sorted(_STFT_KEYS):
        out[f"iva.{name}"] = getattr(cfg.iva.stft, name)
        out[f"sc.{name}"] = getattr(cfg.sc.stft, name)
    for name in sorted(_SC_KEYS - _STFT_KEYS):
        out[f"sc.{name}"] = getattr(cfg.sc, name)
    for name in sorted(_FCP_KEYS):
        out[f"fcp.{name}"] = getattr(cfg.separator.fcp, name)
    for name in sorted(_LOSS_KEYS - {"isms_enabled"}):
        out[f"loss.{name}"] = getattr(cfg.separator.loss_weights, name)
    out["loss.isms_enabled"] = cfg.separator.isms_enabled
    for name in sorted(_SEPARATOR_KEYS):
        out[f"separator.{name}"] = getattr(cfg.separator, name)
    out["output_dir"] = cfg.output_dir
    out["num_scenes"] = cfg.num_scenes
    out["base_seed"] = cfg.base_seed
    return out


def apply_overrides(cfg: PipelineConfig, **overrides) -> PipelineConfig:
    """Replace top-level fields (output_dir, base_seed, ...) on a config."""
    clean = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **clean) if clean else cfg
