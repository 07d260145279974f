"""Run configuration: strict YAML/JSON loading, schema validation and the
builders that turn a validated document into testbed, estimator and region
objects."""
from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional

import jsonschema
import yaml

from ppscert import canonical
from ppscert.errors import ConfigError, PPSError
from ppscert.estimators.base import EstimatorConfig
from ppscert.testbeds import make_bed


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e-3`` (no dot, unsigned exponent) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)

ESTIMATOR_FIELDS = (
    "n", "confidence", "bound", "proposal", "rho", "max_levels", "levels", "factor",
    "moves", "block_size", "epsilon", "gev_method", "min_acceptance",
)


@lru_cache(maxsize=1)
def schema() -> dict:
    return json.loads(resources.files("ppscert").joinpath("config_schema.json").read_text())


def _reject_duplicates(loader, node, deep=False):
    keys = [loader.construct_object(k, deep=deep) for k, _ in node.value]
    dup = {k for k in keys if keys.count(k) > 1}
    if dup:
        raise ConfigError(f"duplicate keys: {sorted(map(str, dup))}")
    return loader.construct_mapping(node, deep)


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _reject_duplicates)


def parse(text: str) -> Any:
    try:
        return yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML/JSON: {exc}") from None


def validate(doc: Any) -> dict:
    """Check ``doc`` against the schema; the error names the offending path."""
    if not isinstance(doc, Mapping):
        raise ConfigError("config must be a mapping at the top level")
    validator = jsonschema.Draft7Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{where}: {e.message}")
        raise ConfigError("config failed schema validation:\n  " + "\n  ".join(lines))
    for key in ("theta", "confidence"):
        if key in doc and not math.isfinite(float(doc[key])):
            raise ConfigError(f"{key} must be finite")
    return dict(doc)


@dataclass(frozen=True)
class RunConfig:
    """A validated configuration document and what it builds."""

    doc: Mapping[str, Any]

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls(validate(parse(text)))

    @classmethod
    def from_path(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text)

    @classmethod
    def from_mapping(cls, doc: Mapping) -> "RunConfig":
        return cls(validate(copy.deepcopy(dict(doc))))

    # -- plain fields -----------------------------------------------------------------
    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    @property
    def theta(self) -> Optional[float]:
        return None if "theta" not in self.doc else float(self.doc["theta"])

    @property
    def confidence(self) -> float:
        return float(self.doc.get("confidence", 0.95))

    @property
    def method(self) -> str:
        return self.doc["estimator"]["method"]

    @property
    def law(self) -> str:
        return self.doc["estimator"].get("law", "true")

    @property
    def region_block(self) -> Optional[dict]:
        return self.doc.get("region")

    @property
    def gap_block(self) -> Optional[dict]:
        return self.doc.get("gap")

    @property
    def surrogate_knob(self) -> dict:
        return dict((self.gap_block or {}).get("surrogate", {}))

    @property
    def digest(self) -> str:
        return canonical.digest(self.doc)

    def document(self) -> dict:
        return copy.deepcopy(dict(self.doc))

    def with_seed(self, seed: int) -> "RunConfig":
        doc = self.document()
        doc["seed"] = int(seed)
        return RunConfig.from_mapping(doc)

    def with_value(self, axis: str, value: float) -> "RunConfig":
        """Copy with the numeric field at dotted path ``axis`` set to ``value``."""
        doc = self.document()
        parts = axis.split(".")
        node = doc
        for p in parts[:-1]:
            if not isinstance(node, dict):
                raise ConfigError(f"sweep axis {axis!r} does not name a config field")
            node = node.setdefault(p, {})
        leaf = parts[-1]
        if not isinstance(node, dict):
            raise ConfigError(f"sweep axis {axis!r} does not name a config field")
        current = node.get(leaf)
        if current is not None and (isinstance(current, bool) or not isinstance(current, (int, float))):
            raise ConfigError(f"sweep axis {axis!r} is not numeric (current value {current!r})")
        if axis in ("testbed.id", "estimator.method") or leaf in ("method", "id", "law", "bound", "gev_method"):
            raise ConfigError(f"sweep axis {axis!r} is not numeric")
        if isinstance(current, int) or (current is None and _integral_field(axis)):
            if float(value) != int(value):
                raise ConfigError(f"sweep axis {axis!r} takes integers, got {value}")
            value = int(value)
        node[leaf] = value
        return RunConfig.from_mapping(doc)

    # -- builders ---------------------------------------------------------------------
    def bed(self):
        tb = self.doc["testbed"]
        return _build(lambda: make_bed(tb["id"], tb.get("params", {})), "testbed")

    def estimator_config(self, n: Optional[int] = None, confidence: Optional[float] = None) -> EstimatorConfig:
        block = self.doc["estimator"]
        kwargs = {k: block[k] for k in ESTIMATOR_FIELDS if k in block}
        kwargs.setdefault("confidence", self.confidence)
        if n is not None:
            kwargs["n"] = n
        if confidence is not None:
            kwargs["confidence"] = confidence
        if "levels" in kwargs:
            kwargs["levels"] = tuple(kwargs["levels"])
        return _build(lambda: EstimatorConfig(seed=self.seed, **kwargs), "estimator")

    def gap_config(self) -> EstimatorConfig:
        block = self.gap_block or {}
        return self.estimator_config(n=block.get("n"), confidence=block.get("confidence")).with_(bound="clopper_pearson")

    def check_surrogate(self, bed) -> None:
        if self.surrogate_knob:
            _build(lambda: bed.surrogate(self.surrogate_knob), "gap/surrogate")

    def proposal(self, bed):
        if self.method != "IS":
            return None
        return _build(lambda: bed.proposal(self.doc["estimator"].get("proposal", {})), "estimator/proposal")

    def estimation_law(self, bed, law: Optional[str] = None):
        """The law the estimator samples: the true law, or the full surrogate."""
        if (law or self.law) == "surrogate" and self.surrogate_knob:
            return _build(lambda: bed.surrogate(self.surrogate_knob), "gap/surrogate")
        return bed.distribution()

    def region(self, bed):
        from ppscert.region import empty_region, verify_region

        block = self.region_block
        if block is None:
            return empty_region(bed.bed_id)
        return _build(lambda: verify_region(bed, **block), "region")


_INT_FIELDS = {"n", "max_levels", "factor", "moves", "block_size", "size", "horizon", "dim",
               "horizon_steps", "reaction_delay", "quad_max_level", "onset_bins", "mag_bins", "seed"}


def _integral_field(axis: str) -> bool:
    return axis.split(".")[-1] in _INT_FIELDS


def _build(fn, where: str):
    try:
        return fn()
    except PPSError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
