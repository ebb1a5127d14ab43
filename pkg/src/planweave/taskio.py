"""Task input documents and artifact output.

Three documents define a task bundle: the feature specification config
(FSC) describing the output dataset to build, the dataframe registry
(DFR) cataloguing input datasets, and run.yaml wiring paths, planner
settings and the optional harness section.  computation_logic is opaque
prose and is carried into prompts verbatim, never parsed.

Unknown fields in any document are preserved (so parse -> serialize is
semantically lossless) but flagged as warnings.
"""
from __future__ import annotations

import difflib
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import IoError, MissingFile, ParseError, RefError
from .model import (
    KIND_CONFIG_YAML,
    KIND_FEATURE_SCRIPT,
    KIND_TESTCASE_DEFINITIONS,
    KIND_TEST_SCRIPT,
    ShortTermMemory,
)

log = logging.getLogger(__name__)

DEFAULT_HITL_ANSWER = "Human help is not available for this run."
DEFAULT_HITL_TIMEOUT = 300.0
DEFAULT_CALL_BUDGET = 200
DEFAULT_HARNESS_TIMEOUT = 120.0

# Well-known optional schema file for the config_generator's success
# check, looked up under input_root_dir.
CONFIG_SCHEMA_FILENAME = "config_schema.yaml"

_ENV_PATH_FIELDS = (
    "input_root_dir", "output_root_dir", "codebase", "fsc_path", "dfr_path",
    "feature_scripts_dir", "test_scripts_path", "codebase_readme_path",
    "feature_configs_dir",
)


def _load_yaml(text: str, path: str | None = None) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ParseError(
            f"invalid YAML: {exc.problem or exc}",
            path=path,
            line=None if mark is None else mark.line + 1,
            column=None if mark is None else mark.column + 1,
        ) from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"invalid YAML: {exc}", path=path) from exc


def _require(mapping: dict, key: str, where: str,
             path: str | None = None) -> Any:
    if not isinstance(mapping, dict) or key not in mapping:
        raise ParseError(f"missing required field {key!r} in {where}",
                         path=path)
    return mapping[key]


def _split_known(mapping: dict, known: tuple[str, ...], where: str,
                 warnings: list[str]) -> dict:
    extras = {k: v for k, v in mapping.items() if k not in known}
    for key in extras:
        warnings.append(f"unknown field {key!r} in {where}")
    return extras


@dataclass
class FeatureRef:
    """A dataset.column reference from the FSC."""

    dataset: str
    column: str
    raw: str

    @classmethod
    def parse(cls, raw: Any, where: str) -> "FeatureRef":
        if not isinstance(raw, str) or "." not in raw:
            raise RefError(str(raw),
                           f"source column in {where} must have the shape "
                           "dataset.column")
        dataset, column = raw.split(".", 1)
        if not dataset or not column:
            raise RefError(raw, f"malformed source column in {where}")
        return cls(dataset=dataset, column=column, raw=raw)


@dataclass
class PrimaryKey:
    name: str
    source_columns: list[FeatureRef]
    extras: dict = field(default_factory=dict)

    def to_mapping(self) -> dict:
        out = {"name": self.name,
               "source_columns": [r.raw for r in self.source_columns]}
        out.update(self.extras)
        return out


@dataclass
class FeatureSpec:
    name: str
    source_columns: list[FeatureRef]
    computation_logic: str
    feature_description: str
    extras: dict = field(default_factory=dict)

    def to_mapping(self) -> dict:
        out = {
            "name": self.name,
            "source_columns": [r.raw for r in self.source_columns],
            "computation_logic": self.computation_logic,
            "feature_description": self.feature_description,
        }
        out.update(self.extras)
        return out


@dataclass
class OutputDataset:
    name: str
    version: Any
    bucket_dev: str
    bucket_prod: str
    suffix: str
    extras: dict = field(default_factory=dict)
    bucket_extras: dict = field(default_factory=dict)

    def to_mapping(self) -> dict:
        bucket = {"dev": self.bucket_dev, "prod": self.bucket_prod}
        bucket.update(self.bucket_extras)
        out = {"name": self.name, "version": self.version,
               "bucket": bucket, "suffix": self.suffix}
        out.update(self.extras)
        return out


@dataclass
class FeatureSpecConfig:
    """Parsed FSC document."""

    name: str
    primary_keys: list[PrimaryKey]
    features: list[FeatureSpec]
    output_dataset: OutputDataset
    extras: dict = field(default_factory=dict)

    def all_refs(self) -> list[FeatureRef]:
        refs: list[FeatureRef] = []
        for pk in self.primary_keys:
            refs.extend(pk.source_columns)
        for feat in self.features:
            refs.extend(feat.source_columns)
        return refs

    def to_mapping(self) -> dict:
        out = {
            "name": self.name,
            "primary_keys": [pk.to_mapping() for pk in self.primary_keys],
            "features": [f.to_mapping() for f in self.features],
            "output_dataset": self.output_dataset.to_mapping(),
        }
        out.update(self.extras)
        return out


@dataclass
class DatasetFeature:
    feature_name: str
    feature_description: str
    extras: dict = field(default_factory=dict)

    def to_mapping(self) -> dict:
        out = {"feature_name": self.feature_name,
               "feature_description": self.feature_description}
        out.update(self.extras)
        return out


@dataclass
class DatasetEntry:
    name: str
    bucket_dev: str
    bucket_prod: str
    suffix: str
    format: str
    partition_pattern: str
    features: list[DatasetFeature]
    extras: dict = field(default_factory=dict)
    bucket_extras: dict = field(default_factory=dict)

    def to_mapping(self) -> dict:
        bucket = {"dev": self.bucket_dev, "prod": self.bucket_prod}
        bucket.update(self.bucket_extras)
        out = {
            "name": self.name,
            "bucket": bucket,
            "suffix": self.suffix,
            "format": self.format,
            "partition_pattern": self.partition_pattern,
            "features": [f.to_mapping() for f in self.features],
        }
        out.update(self.extras)
        return out


@dataclass
class DataFrameRegistry:
    """Parsed DFR document: the input dataset catalog."""

    datasets: list[DatasetEntry]
    extras: dict = field(default_factory=dict)

    def names(self) -> set[str]:
        return {d.name for d in self.datasets}

    def to_mapping(self) -> dict:
        out = {"datasets": [d.to_mapping() for d in self.datasets]}
        out.update(self.extras)
        return out


@dataclass
class EnvConfig:
    input_root_dir: str
    output_root_dir: str
    codebase: str
    fsc_path: str
    dfr_path: str
    feature_scripts_dir: str
    reusable_code_paths: list[str]
    test_scripts_path: str
    codebase_readme_path: str
    feature_configs_dir: str
    extras: dict = field(default_factory=dict)

    def to_mapping(self) -> dict:
        out = {f: getattr(self, f) for f in _ENV_PATH_FIELDS}
        out["reusable_code_paths"] = list(self.reusable_code_paths)
        out.update(self.extras)
        return out


@dataclass
class PlannerSettings:
    llm: str
    max_iterations: int
    call_budget: int = DEFAULT_CALL_BUDGET
    hitl_default_answer: str = DEFAULT_HITL_ANSWER
    hitl_timeout_seconds: float = DEFAULT_HITL_TIMEOUT
    llm_api_key_env: str | None = None
    extras: dict = field(default_factory=dict)

    def to_mapping(self) -> dict:
        out: dict[str, Any] = {"llm": self.llm,
                               "max_iterations": self.max_iterations}
        if self.call_budget != DEFAULT_CALL_BUDGET:
            out["call_budget"] = self.call_budget
        if self.hitl_default_answer != DEFAULT_HITL_ANSWER:
            out["hitl_default_answer"] = self.hitl_default_answer
        if self.hitl_timeout_seconds != DEFAULT_HITL_TIMEOUT:
            out["hitl_timeout_seconds"] = self.hitl_timeout_seconds
        if self.llm_api_key_env is not None:
            out["llm_api_key_env"] = self.llm_api_key_env
        out.update(self.extras)
        return out


@dataclass
class HarnessSettings:
    """Optional run.yaml section; simulated by default so nothing runs
    arbitrary generated code unless explicitly configured."""

    kind: str = "simulated"
    timeout_seconds: float = DEFAULT_HARNESS_TIMEOUT
    commands: dict[str, str] = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_mapping(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.timeout_seconds != DEFAULT_HARNESS_TIMEOUT:
            out["timeout_seconds"] = self.timeout_seconds
        if self.commands:
            out["commands"] = dict(self.commands)
        out.update(self.extras)
        return out


@dataclass
class RunConfig:
    env: EnvConfig
    planner: PlannerSettings
    harness: HarnessSettings = field(default_factory=HarnessSettings)
    extras: dict = field(default_factory=dict)
    harness_declared: bool = False

    def to_mapping(self) -> dict:
        out: dict[str, Any] = {"env": self.env.to_mapping(),
                               "planner": self.planner.to_mapping()}
        if self.harness_declared:
            out["harness"] = self.harness.to_mapping()
        out.update(self.extras)
        return out


@dataclass
class TaskSpec:
    """A fully loaded task bundle."""

    run: RunConfig
    fsc: FeatureSpecConfig
    dfr: DataFrameRegistry
    fsc_text: str
    dfr_text: str
    readme: str
    reusable_sources: list[tuple[str, str]]   # (declared path, content)
    config_schema: dict | None
    root: Path                                 # directory of run.yaml
    warnings: list[str] = field(default_factory=list)

    def resolve(self, declared: str) -> Path:
        p = Path(declared)
        return p if p.is_absolute() else (self.root / p)

    @property
    def script_name(self) -> str:
        return f"{self.fsc.name}.py"


def parse_fsc(text: str, *, path: str | None = None,
              warnings: list[str] | None = None) -> FeatureSpecConfig:
    warnings = warnings if warnings is not None else []
    doc = _load_yaml(text, path)
    if not isinstance(doc, dict):
        raise ParseError("FSC must be a mapping", path=path)
    name = _require(doc, "name", "FSC", path)
    pk_raw = _require(doc, "primary_keys", "FSC", path)
    feat_raw = _require(doc, "features", "FSC", path)
    out_raw = _require(doc, "output_dataset", "FSC", path)
    if not isinstance(pk_raw, list) or not pk_raw:
        raise ParseError("FSC primary_keys must be a non-empty list",
                         path=path)
    if not isinstance(feat_raw, list) or not feat_raw:
        raise ParseError("FSC features must be a non-empty list", path=path)

    primary_keys = []
    for i, item in enumerate(pk_raw):
        where = f"FSC primary_keys[{i}]"
        pk_name = _require(item, "name", where, path)
        cols = _require(item, "source_columns", where, path)
        refs = [FeatureRef.parse(c, where) for c in (cols or [])]
        extras = _split_known(item, ("name", "source_columns"), where,
                              warnings)
        primary_keys.append(PrimaryKey(pk_name, refs, extras))

    features = []
    for i, item in enumerate(feat_raw):
        where = f"FSC features[{i}]"
        f_name = _require(item, "name", where, path)
        cols = _require(item, "source_columns", where, path)
        refs = [FeatureRef.parse(c, where) for c in (cols or [])]
        logic = str(_require(item, "computation_logic", where, path))
        desc = str(item.get("feature_description", ""))
        extras = _split_known(
            item, ("name", "source_columns", "computation_logic",
                   "feature_description"), where, warnings)
        features.append(FeatureSpec(f_name, refs, logic, desc, extras))

    where = "FSC output_dataset"
    bucket = _require(out_raw, "bucket", where, path)
    output = OutputDataset(
        name=_require(out_raw, "name", where, path),
        version=_require(out_raw, "version", where, path),
        bucket_dev=str(_require(bucket, "dev", where + ".bucket", path)),
        bucket_prod=str(_require(bucket, "prod", where + ".bucket", path)),
        suffix=str(_require(out_raw, "suffix", where, path)),
        extras=_split_known(out_raw, ("name", "version", "bucket", "suffix"),
                            where, warnings),
        bucket_extras=_split_known(bucket, ("dev", "prod"),
                                   where + ".bucket", warnings),
    )
    extras = _split_known(
        doc, ("name", "primary_keys", "features", "output_dataset"),
        "FSC", warnings)
    return FeatureSpecConfig(name, primary_keys, features, output, extras)


def parse_dfr(text: str, *, path: str | None = None,
              warnings: list[str] | None = None) -> DataFrameRegistry:
    warnings = warnings if warnings is not None else []
    doc = _load_yaml(text, path)
    if not isinstance(doc, dict):
        raise ParseError("DFR must be a mapping", path=path)
    ds_raw = _require(doc, "datasets", "DFR", path)
    if not isinstance(ds_raw, list) or not ds_raw:
        raise ParseError("DFR datasets must be a non-empty list", path=path)
    datasets: list[DatasetEntry] = []
    seen: set[str] = set()
    for i, item in enumerate(ds_raw):
        where = f"DFR datasets[{i}]"
        name = _require(item, "name", where, path)
        if name in seen:
            raise ParseError(f"duplicate dataset name {name!r} in DFR",
                             path=path)
        seen.add(name)
        bucket = _require(item, "bucket", where, path)
        feats_raw = _require(item, "features", where, path)
        if not isinstance(feats_raw, list) or not feats_raw:
            raise ParseError(f"{where} must declare at least one feature",
                             path=path)
        feats = []
        for j, f in enumerate(feats_raw):
            fwhere = f"{where}.features[{j}]"
            feats.append(DatasetFeature(
                feature_name=_require(f, "feature_name", fwhere, path),
                feature_description=str(f.get("feature_description", "")),
                extras=_split_known(
                    f, ("feature_name", "feature_description"), fwhere,
                    warnings),
            ))
        datasets.append(DatasetEntry(
            name=name,
            bucket_dev=str(_require(bucket, "dev", where + ".bucket", path)),
            bucket_prod=str(_require(bucket, "prod", where + ".bucket",
                                     path)),
            suffix=str(item.get("suffix", "")),
            format=str(_require(item, "format", where, path)),
            partition_pattern=str(item.get("partition_pattern", "")),
            features=feats,
            extras=_split_known(
                item, ("name", "bucket", "suffix", "format",
                       "partition_pattern", "features"), where, warnings),
            bucket_extras=_split_known(bucket, ("dev", "prod"),
                                       where + ".bucket", warnings),
        ))
    extras = _split_known(doc, ("datasets",), "DFR", warnings)
    return DataFrameRegistry(datasets, extras)


def parse_run(text: str, *, path: str | None = None,
              warnings: list[str] | None = None) -> RunConfig:
    warnings = warnings if warnings is not None else []
    doc = _load_yaml(text, path)
    if not isinstance(doc, dict):
        raise ParseError("run config must be a mapping", path=path)
    env_raw = _require(doc, "env", "run config", path)
    planner_raw = _require(doc, "planner", "run config", path)

    env_values: dict[str, Any] = {}
    for key in _ENV_PATH_FIELDS:
        value = _require(env_raw, key, "run env", path)
        if not isinstance(value, str) or not value:
            raise ParseError(f"run env field {key!r} must be a non-empty "
                             "path string", path=path)
        env_values[key] = value
    reusable = _require(env_raw, "reusable_code_paths", "run env", path)
    if not isinstance(reusable, list):
        raise ParseError("run env reusable_code_paths must be a list",
                         path=path)
    env = EnvConfig(
        reusable_code_paths=[str(p) for p in reusable],
        extras=_split_known(
            env_raw, _ENV_PATH_FIELDS + ("reusable_code_paths",),
            "run env", warnings),
        **env_values,
    )

    llm = _require(planner_raw, "llm", "run planner", path)
    max_iter = _require(planner_raw, "max_iterations", "run planner", path)
    try:
        max_iter = int(max_iter)
    except (TypeError, ValueError):
        raise ParseError("run planner max_iterations must be an integer",
                         path=path) from None
    if max_iter < 1:
        raise ParseError("run planner max_iterations must be >= 1",
                         path=path)
    known_planner = ("llm", "max_iterations", "call_budget",
                     "hitl_default_answer", "hitl_timeout_seconds",
                     "llm_api_key_env")
    planner = PlannerSettings(
        llm=str(llm),
        max_iterations=max_iter,
        call_budget=int(planner_raw.get("call_budget", DEFAULT_CALL_BUDGET)),
        hitl_default_answer=str(planner_raw.get(
            "hitl_default_answer", DEFAULT_HITL_ANSWER)),
        hitl_timeout_seconds=float(planner_raw.get(
            "hitl_timeout_seconds", DEFAULT_HITL_TIMEOUT)),
        llm_api_key_env=planner_raw.get("llm_api_key_env"),
        extras=_split_known(planner_raw, known_planner, "run planner",
                            warnings),
    )

    harness_declared = "harness" in doc
    harness = HarnessSettings()
    if harness_declared:
        h_raw = doc["harness"] or {}
        kind = str(h_raw.get("kind", "simulated"))
        if kind not in ("simulated", "subprocess"):
            raise ParseError(f"harness kind must be 'simulated' or "
                             f"'subprocess', got {kind!r}", path=path)
        commands = h_raw.get("commands", {}) or {}
        if not isinstance(commands, dict):
            raise ParseError("harness commands must be a mapping", path=path)
        harness = HarnessSettings(
            kind=kind,
            timeout_seconds=float(h_raw.get("timeout_seconds",
                                            DEFAULT_HARNESS_TIMEOUT)),
            commands={str(k): str(v) for k, v in commands.items()},
            extras=_split_known(h_raw, ("kind", "timeout_seconds",
                                        "commands"), "run harness",
                                warnings),
        )

    extras = _split_known(doc, ("env", "planner", "harness"), "run config",
                          warnings)
    return RunConfig(env=env, planner=planner, harness=harness,
                     extras=extras, harness_declared=harness_declared)


def load_task(run_path: str | Path) -> TaskSpec:
    """Load and cross-validate a task bundle from its run.yaml path.

    Relative paths resolve against the run file's directory.  Every
    declared path must exist except output_root_dir, which is created on
    demand at write time.
    """
    run_path = Path(run_path)
    if not run_path.exists():
        raise MissingFile(str(run_path))
    warnings: list[str] = []
    run = parse_run(run_path.read_text(encoding="utf-8"),
                    path=str(run_path), warnings=warnings)
    root = run_path.parent

    def resolve(declared: str) -> Path:
        p = Path(declared)
        return p if p.is_absolute() else (root / p)

    checked = [run.env.input_root_dir, run.env.codebase, run.env.fsc_path,
               run.env.dfr_path, run.env.feature_scripts_dir,
               run.env.test_scripts_path, run.env.codebase_readme_path,
               run.env.feature_configs_dir]
    checked.extend(run.env.reusable_code_paths)
    for declared in checked:
        if not resolve(declared).exists():
            raise MissingFile(declared)

    fsc_text = resolve(run.env.fsc_path).read_text(encoding="utf-8")
    dfr_text = resolve(run.env.dfr_path).read_text(encoding="utf-8")
    fsc = parse_fsc(fsc_text, path=run.env.fsc_path, warnings=warnings)
    dfr = parse_dfr(dfr_text, path=run.env.dfr_path, warnings=warnings)

    # Every FSC source-column ref must name a dataset known to the DFR.
    known = dfr.names()
    for ref in fsc.all_refs():
        if ref.dataset not in known:
            raise RefError(ref.raw,
                           "FSC source column names a dataset missing from "
                           "the DFR")

    readme = resolve(run.env.codebase_readme_path).read_text(
        encoding="utf-8")
    reusable_sources = []
    for declared in run.env.reusable_code_paths:
        p = resolve(declared)
        if p.is_dir():
            for sub in sorted(p.rglob("*.py")):
                rel = f"{declared.rstrip('/')}/{sub.relative_to(p)}"
                reusable_sources.append(
                    (rel, sub.read_text(encoding="utf-8")))
        else:
            reusable_sources.append(
                (declared, p.read_text(encoding="utf-8")))

    schema = None
    schema_path = resolve(run.env.input_root_dir) / CONFIG_SCHEMA_FILENAME
    if schema_path.exists():
        schema_doc = _load_yaml(schema_path.read_text(encoding="utf-8"),
                                str(schema_path))
        if not isinstance(schema_doc, dict):
            raise ParseError("config schema must be a mapping",
                             path=str(schema_path))
        schema = schema_doc

    for message in warnings:
        log.warning("%s: %s", run_path, message)

    return TaskSpec(run=run, fsc=fsc, dfr=dfr, fsc_text=fsc_text,
                    dfr_text=dfr_text, readme=readme,
                    reusable_sources=reusable_sources, config_schema=schema,
                    root=root, warnings=warnings)


@dataclass
class ManifestEntry:
    kind: str
    path: str
    sha256: str


@dataclass
class ArtifactManifest:
    entries: list[ManifestEntry]
    patch_path: Path
    manifest_path: Path


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _unified_diff(old: str, new: str, rel: str) -> str:
    diff = difflib.unified_diff(
        old.splitlines(keepends=True), new.splitlines(keepends=True),
        fromfile=f"a/{rel}", tofile=f"b/{rel}")
    return "".join(diff)


def write_artifacts(task: TaskSpec, memory: ShortTermMemory, *,
                    out_dir: str | Path | None = None) -> ArtifactManifest:
    """Write the latest artifact of each repo-mapped kind, plus a patch
    bundle and a manifest under the output root.

    Kind -> destination: config_yaml -> feature_configs_dir/<name>.yaml,
    feature_script -> feature_scripts_dir/<name>.py, testcase_definitions
    -> test_scripts_path/<name>_testcases.json, test_script ->
    test_scripts_path/test_<name>.py.  Other kinds stay in memory.  All
    writes are confined to the output root and those three declared
    directories.  Empty memory yields an empty manifest and patch.
    """
    out_root = Path(out_dir) if out_dir is not None \
        else task.resolve(task.run.env.output_root_dir)
    try:
        out_root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output root {out_root}: {exc}") \
            from exc

    name = task.fsc.name
    destinations = [
        (KIND_CONFIG_YAML,
         task.resolve(task.run.env.feature_configs_dir) / f"{name}.yaml"),
        (KIND_FEATURE_SCRIPT,
         task.resolve(task.run.env.feature_scripts_dir) / f"{name}.py"),
        (KIND_TESTCASE_DEFINITIONS,
         task.resolve(task.run.env.test_scripts_path)
         / f"{name}_testcases.json"),
        (KIND_TEST_SCRIPT,
         task.resolve(task.run.env.test_scripts_path) / f"test_{name}.py"),
    ]
    allowed_roots = [
        out_root.resolve(),
        task.resolve(task.run.env.feature_configs_dir).resolve(),
        task.resolve(task.run.env.feature_scripts_dir).resolve(),
        task.resolve(task.run.env.test_scripts_path).resolve(),
    ]
    codebase = task.resolve(task.run.env.codebase).resolve()

    entries: list[ManifestEntry] = []
    patches: list[str] = []
    for kind, dest in destinations:
        if kind not in memory.artifacts:
            continue
        content = memory.artifacts[kind]
        if not content.endswith("\n"):
            content += "\n"
        resolved = dest.resolve()
        if not any(resolved.is_relative_to(root) for root in allowed_roots):
            raise IoError(f"artifact path escapes allowed directories: "
                          f"{resolved}")
        old = dest.read_text(encoding="utf-8") if dest.exists() else ""
        try:
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_text(content, encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot write artifact {dest}: {exc}") from exc
        try:
            rel = str(resolved.relative_to(codebase))
        except ValueError:
            rel = dest.name
        if old != content:
            patches.append(_unified_diff(old, content, rel))
        entries.append(ManifestEntry(kind=kind, path=str(dest),
                                     sha256=_sha256(content)))

    patch_path = out_root / "changes.patch"
    manifest_path = out_root / "manifest.yaml"
    try:
        patch_path.write_text("".join(patches), encoding="utf-8")
        manifest_doc = {
            "entries": [{"kind": e.kind, "path": e.path, "sha256": e.sha256}
                        for e in entries],
            "patch": patch_path.name,
        }
        manifest_path.write_text(
            yaml.safe_dump(manifest_doc, sort_keys=True), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write manifest under {out_root}: {exc}") \
            from exc
    return ArtifactManifest(entries=entries, patch_path=patch_path,
                            manifest_path=manifest_path)
