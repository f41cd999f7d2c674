"""Experiment configuration: one INI file fully determines an experiment.

The file is flat and human-editable, with one section per pipeline stage
(experiment, corpus, clicks, em, train). Every field has a default, so a
config file only states what it changes; unknown sections or keys are
rejected rather than silently ignored. The canonical serialization has a
fixed section and key order, which makes the config hash stable and lets
reruns compare byte-for-byte.

Presets pin the protocols behind the standard experiments: the alpha
sweep, the two-outlier variant, the plain position-bias sanity check,
and the replay of a real examination table.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping

from .clicksim import CLICK_MODELS, PLACEMENT_MODES
from .ranker import ESTIMATOR_KINDS

CONFIG_SCHEMA_VERSION = 1

PRESET_NAMES = ("rq2_real_table", "rq3_sweep", "rq4_two_outliers", "pbm_sanity")

# section -> ordered field names; the canonical file layout
_SECTIONS: dict[str, tuple[str, ...]] = {
    "experiment": (
        "name",
        "n_runs",
        "base_seed",
        "n_clicks",
        "estimators",
        "output_dir",
    ),
    "corpus": (
        "n_queries",
        "docs_per_query",
        "feature_dim",
        "train_fraction",
        "test_fraction",
        "production_fraction",
    ),
    "clicks": (
        "click_model",
        "alpha",
        "alpha_sweep",
        "sigma",
        "eta",
        "top_k",
        "p_abnormal",
        "placement",
        "outlier_positions",
        "propensity_table",
    ),
    "em": (
        "em_iterations",
        "em_label_mode",
        "em_regression_rounds",
        "em_learning_rate",
    ),
    "train": (
        "production_rounds",
        "ranker_rounds",
        "ranker_learning_rate",
        "weight_cap",
        "ndcg_k",
    ),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a multi-run experiment needs, one flat record."""

    name: str = "experiment"
    n_runs: int = 8
    base_seed: int = 0
    n_clicks: int = 100_000
    estimators: tuple[str, ...] = ("naive", "pbm", "opbm")
    output_dir: str = "results"

    n_queries: int = 2000
    docs_per_query: int = 10
    feature_dim: int = 8
    train_fraction: float = 0.8
    test_fraction: float = 0.2
    production_fraction: float = 0.01

    click_model: str = "opbm_g"
    alpha: float = 0.75
    alpha_sweep: tuple[float, ...] = ()
    sigma: float = 1.0
    eta: float = 1.0
    top_k: int = 10
    p_abnormal: float = 0.5
    placement: str = "uniform"
    outlier_positions: tuple[int, ...] = ()
    propensity_table: str = ""

    em_iterations: int = 20
    em_label_mode: str = "sample"
    em_regression_rounds: int = 300
    em_learning_rate: float = 0.2

    production_rounds: int = 1
    ranker_rounds: int = 300
    ranker_learning_rate: float = 0.2
    weight_cap: float = 1e4
    ndcg_k: int = 10

    def __post_init__(self) -> None:
        if self.n_runs < 1:
            raise ValueError("n_runs must be at least 1")
        if not self.estimators:
            raise ValueError("estimator list must be nonempty")
        for kind in self.estimators:
            if kind not in ESTIMATOR_KINDS:
                raise ValueError(
                    "unknown estimator %r (expected one of %s)"
                    % (kind, ", ".join(ESTIMATOR_KINDS))
                )
        if self.n_clicks < 1:
            raise ValueError("n_clicks must be positive")
        if self.click_model not in CLICK_MODELS:
            raise ValueError(
                "unknown click model %r (expected one of %s)"
                % (self.click_model, ", ".join(CLICK_MODELS))
            )
        if self.placement not in PLACEMENT_MODES:
            raise ValueError(
                "unknown placement %r (expected one of %s)"
                % (self.placement, ", ".join(PLACEMENT_MODES))
            )
        if self.alpha_sweep and self.click_model not in ("opbm_g", "opbm_mg"):
            raise ValueError("alpha_sweep only applies to the Gaussian click models")
        if self.click_model == "opbm_real" and not self.propensity_table:
            raise ValueError(
                "click model opbm_real needs propensity_table "
                "(path to a rank,signature,theta CSV)"
            )
        if self.placement == "fixed" and not self.outlier_positions:
            raise ValueError("fixed placement needs outlier_positions")

    @property
    def alphas(self) -> tuple[float, ...]:
        """The alpha grid: the sweep when present, else the single value."""
        return self.alpha_sweep if self.alpha_sweep else (self.alpha,)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "%.12g" % value
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def _parse_value(text: str, field_type, field_name: str):
    text = text.strip()
    if field_type is int:
        return int(text)
    if field_type is float:
        return float(text)
    if field_type is str:
        return text
    # tuple fields: comma separated, empty string means empty tuple
    if not text:
        return ()
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if field_name in ("alpha_sweep",):
        return tuple(float(p) for p in parts)
    if field_name in ("outlier_positions",):
        return tuple(int(p) for p in parts)
    return tuple(parts)


def to_ini(config: ExperimentConfig) -> str:
    """Canonical INI text: fixed section/key order, schema version first."""
    lines = ["[experiment]", "schema_version = %d" % CONFIG_SCHEMA_VERSION]
    for section, names in _SECTIONS.items():
        if section != "experiment":
            lines.append("")
            lines.append("[%s]" % section)
        for name in names:
            lines.append("%s = %s" % (name, _format_value(getattr(config, name))))
    return "\n".join(lines) + "\n"


def from_ini(text: str) -> ExperimentConfig:
    """Parse config text, rejecting unknown sections, keys, or schema."""
    parser = configparser.ConfigParser()
    parser.read_string(text)
    field_types = {f.name: f.type for f in fields(ExperimentConfig)}
    # dataclass field types arrive as strings under future annotations
    type_lookup = {"int": int, "float": float, "str": str}
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValueError(
                "unknown config section [%s] (expected %s)"
                % (section, ", ".join(_SECTIONS))
            )
        for key, raw in parser[section].items():
            if key == "schema_version":
                if section != "experiment":
                    raise ValueError("schema_version belongs in [experiment]")
                if int(raw) != CONFIG_SCHEMA_VERSION:
                    raise ValueError(
                        "config schema_version %s is not supported (expected %d)"
                        % (raw, CONFIG_SCHEMA_VERSION)
                    )
                continue
            if key not in _SECTIONS[section]:
                raise ValueError(
                    "unknown key %r in section [%s]" % (key, section)
                )
            declared = field_types[key]
            ftype = type_lookup.get(str(declared), tuple)
            values[key] = _parse_value(raw, ftype, key)
    return ExperimentConfig(**values)


def load_config(path: str | Path) -> ExperimentConfig:
    return from_ini(Path(path).read_text(encoding="utf-8"))


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(to_ini(config), encoding="utf-8")


def config_hash(config: ExperimentConfig) -> str:
    """sha256 over the canonical text, minus the output location.

    The hash identifies the experiment, and where results land does not
    change what they are.
    """
    lines = [
        line
        for line in to_ini(config).splitlines()
        if not line.startswith("output_dir")
    ]
    digest = hashlib.sha256("\n".join(lines).encode("utf-8"))
    return digest.hexdigest()


def apply_overrides(
    config: ExperimentConfig, overrides: Mapping[str, str]
) -> ExperimentConfig:
    """Replace fields from a flat ``key=value`` string mapping (CLI --set)."""
    field_types = {f.name: f.type for f in fields(ExperimentConfig)}
    type_lookup = {"int": int, "float": float, "str": str}
    parsed = {}
    for key, raw in overrides.items():
        if key not in field_types:
            raise ValueError("unknown config key %r" % key)
        ftype = type_lookup.get(str(field_types[key]), tuple)
        parsed[key] = _parse_value(raw, ftype, key)
    return replace(config, **parsed)


_PROTOCOL = dict(
    n_queries=2000,
    docs_per_query=10,
    feature_dim=8,
    n_clicks=300_000,
    n_runs=8,
    base_seed=21,
    top_k=10,
    em_iterations=20,
    em_regression_rounds=300,
    em_learning_rate=0.2,
    production_rounds=1,
    ranker_rounds=300,
    ranker_learning_rate=0.2,
)


def preset(name: str, overrides: Mapping[str, str] | None = None) -> ExperimentConfig:
    """A fully specified standard experiment, by name.

    ``rq3_sweep`` varies the outlier bias severity over a fixed alpha
    grid; ``rq4_two_outliers`` plants two outliers at ranks 4 and 9 under
    the mean-mixture model; ``pbm_sanity`` turns outliers off entirely so
    the outlier-aware estimators must reduce to plain position bias;
    ``rq2_real_table`` replays clicks through a user-supplied examination
    table (pass propensity_table=<csv> as an override).
    """
    if name == "rq3_sweep":
        config = ExperimentConfig(
            name=name,
            click_model="opbm_g",
            alpha_sweep=(0.0, 0.25, 0.5, 0.75, 1.0),
            sigma=1.0,
            p_abnormal=0.5,
            placement="uniform",
            estimators=("naive", "pbm", "opbm"),
            output_dir="results/rq3_sweep",
            **_PROTOCOL,
        )
    elif name == "rq4_two_outliers":
        config = ExperimentConfig(
            name=name,
            click_model="opbm_mg",
            alpha=0.75,
            sigma=1.0,
            p_abnormal=0.5,
            placement="fixed",
            outlier_positions=(4, 9),
            estimators=("naive", "pbm", "opbm_lazy", "opbm"),
            output_dir="results/rq4_two_outliers",
            **_PROTOCOL,
        )
    elif name == "pbm_sanity":
        config = ExperimentConfig(
            name=name,
            click_model="opbm_g",
            alpha=0.75,
            sigma=1.0,
            p_abnormal=0.0,
            placement="none",
            estimators=("naive", "pbm", "opbm"),
            output_dir="results/pbm_sanity",
            **{**_PROTOCOL, "n_clicks": 100_000},
        )
    elif name == "rq2_real_table":
        merged = dict(overrides or {})
        if "propensity_table" not in merged:
            raise ValueError(
                "preset rq2_real_table needs a propensity_table override "
                "pointing at the examination table CSV"
            )
        config = ExperimentConfig(
            name=name,
            click_model="opbm_real",
            p_abnormal=0.5,
            placement="uniform",
            estimators=("naive", "pbm", "opbm", "oracle"),
            output_dir="results/rq2_real_table",
            propensity_table=merged.pop("propensity_table"),
            **_PROTOCOL,
        )
        return apply_overrides(config, merged)
    else:
        raise ValueError(
            "unknown preset %r (expected one of %s)" % (name, ", ".join(PRESET_NAMES))
        )
    if overrides:
        config = apply_overrides(config, overrides)
    return config
