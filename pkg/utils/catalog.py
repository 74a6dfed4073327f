"""
Module for loading GPU, model and calibrated-profile catalogs
"""

import logging
from typing import Any, Dict, Mapping, Optional

import yaml

import config
from planner.errors import ConfigError
from planner.gpu_power import GpuSpec
from planner.kv_capacity import KvSharding, scale_budget
from planner.perf_model import GpuProfile, ModelSpec, build_computed_profile, build_manual_profile
from utils.helpers import deep_merge

logger = logging.getLogger(__name__)


def load_yaml(path: str) -> Dict[str, Any]:
    """Read a YAML (or JSON) mapping file"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    return data


def _merge_entries(base: Mapping[str, Any], overrides: Optional[Mapping[str, Any]]) -> Dict[str, Any]:
    merged = dict(base)
    for name, entry in (overrides or {}).items():
        if not isinstance(entry, Mapping):
            raise ConfigError(f"catalog override '{name}' must be a mapping")
        merged[name] = deep_merge(merged.get(name, {}), entry)
    return merged


class Catalog:
    """GPU, model and profile entries with user overrides merged by name"""

    def __init__(self, gpus: Mapping[str, Any], models: Mapping[str, Any], profiles: Mapping[str, Any]):
        self.gpu_entries = dict(gpus)
        self.model_entries = dict(models)
        self.profile_entries = dict(profiles)

    @classmethod
    def load(cls, gpu_overrides: Optional[Mapping[str, Any]] = None,
             model_overrides: Optional[Mapping[str, Any]] = None,
             profile_overrides: Optional[Mapping[str, Any]] = None,
             gpu_path: str = config.GPU_CATALOG_PATH,
             model_path: str = config.MODEL_CATALOG_PATH,
             profile_path: str = config.PROFILE_CATALOG_PATH) -> "Catalog":
        catalog = cls(
            _merge_entries(load_yaml(gpu_path), gpu_overrides),
            _merge_entries(load_yaml(model_path), model_overrides),
            _merge_entries(load_yaml(profile_path), profile_overrides),
        )
        logger.debug(f"Catalog: {len(catalog.gpu_entries)} GPUs, {len(catalog.model_entries)} models, "
                     f"{len(catalog.profile_entries)} profiles")
        return catalog

    def gpu(self, name: str) -> GpuSpec:
        if name not in self.gpu_entries:
            raise ConfigError(f"unknown GPU '{name}' (known: {', '.join(sorted(self.gpu_entries))})")
        return GpuSpec.from_dict(name, self.gpu_entries[name])

    def model(self, name: str) -> ModelSpec:
        if name not in self.model_entries:
            raise ConfigError(f"unknown model '{name}' (known: {', '.join(sorted(self.model_entries))})")
        return ModelSpec.from_dict(name, self.model_entries[name])

    def manual_profile(self, name: str, _seen: tuple = ()) -> GpuProfile:
        """Calibrated profile; scale_from entries derive their budget recursively"""
        if name not in self.profile_entries:
            raise ConfigError(f"unknown profile '{name}' (known: {', '.join(sorted(self.profile_entries))})")
        if name in _seen:
            raise ConfigError(f"profile '{name}' has a circular scale_from chain")
        entry = self.profile_entries[name]
        try:
            if "scale_from" in entry:
                base = self.manual_profile(entry["scale_from"], _seen + (name,))
                budget = scale_budget(base.kv_token_budget, float(entry["vram_ratio"]))
            else:
                budget = int(entry["kv_token_budget"])
            x0 = entry.get("x0")
            return build_manual_profile(
                gpu=self.gpu(entry["gpu"]),
                model=self.model(entry["model"]),
                w_ms=float(entry["w_ms"]),
                h0_ms=float(entry["h0_ms"]),
                l_calib=int(entry.get("l_calib", config.DEFAULT_L_CALIB)),
                kv_token_budget=budget,
                x0=float(x0) if x0 is not None else None,
                label=name,
            )
        except KeyError as e:
            raise ConfigError(f"profile '{name}' is missing field {e}") from e
        except (TypeError, ValueError) as e:
            raise ConfigError(f"profile '{name}' is invalid: {e}") from e

    def profile(self, subject: str, **computed: Any) -> GpuProfile:
        """
        Resolve a subject to a profile

        Args:
            subject: A calibrated profile name, or 'GPU:MODEL' for a computed one
            **computed: Keyword arguments for build_computed_profile

        Returns:
            GpuProfile
        """
        if subject in self.profile_entries:
            return self.manual_profile(subject)
        if ":" not in subject:
            raise ConfigError(
                f"unknown subject '{subject}': expected a profile name "
                f"({', '.join(sorted(self.profile_entries))}) or GPU:MODEL"
            )
        gpu_name, model_name = subject.split(":", 1)
        if "kv_sharding" in computed:
            computed["kv_sharding"] = KvSharding(computed["kv_sharding"])
        return build_computed_profile(self.gpu(gpu_name), self.model(model_name), label=subject, **computed)
