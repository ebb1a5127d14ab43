"""Task-bundle parsing, cross-validation, round-trips and artifact
writing."""
import hashlib

import pytest
import yaml

from planweave.errors import IoError, MissingFile, ParseError, RefError
from planweave.model import ShortTermMemory
from planweave.taskio import (
    FeatureRef,
    load_task,
    parse_dfr,
    parse_fsc,
    parse_run,
    write_artifacts,
)
from tests.test_model import _actor_step


def test_round_trip_fsc_dfr_run(t0):
    """Parse -> to_mapping -> re-parse must be semantically stable: the
    second parse produces an identical mapping."""
    fsc_text = (t0 / "input" / "fsc.yaml").read_text()
    dfr_text = (t0 / "input" / "dfr.yaml").read_text()
    run_text = (t0 / "run.yaml").read_text()

    fsc = parse_fsc(fsc_text)
    dfr = parse_dfr(dfr_text)
    run = parse_run(run_text)

    fsc2 = parse_fsc(yaml.safe_dump(fsc.to_mapping(), sort_keys=False))
    dfr2 = parse_dfr(yaml.safe_dump(dfr.to_mapping(), sort_keys=False))
    run2 = parse_run(yaml.safe_dump(run.to_mapping(), sort_keys=False))

    assert fsc2.to_mapping() == fsc.to_mapping()
    assert dfr2.to_mapping() == dfr.to_mapping()
    assert run2.to_mapping() == run.to_mapping()


def test_unknown_fields_survive_round_trip_with_warning():
    text = """
name: f
primary_keys:
  - name: id
    source_columns: [ds.id]
features:
  - name: x
    source_columns: [ds.col]
    computation_logic: count
owner_team: fraud
output_dataset:
  name: out
  version: 1
  suffix: v1
  bucket: {dev: d, prod: p}
"""
    warnings: list[str] = []
    fsc = parse_fsc(text, warnings=warnings)
    assert fsc.extras == {"owner_team": "fraud"}
    assert any("owner_team" in w for w in warnings)
    again = parse_fsc(yaml.safe_dump(fsc.to_mapping()))
    assert again.extras == {"owner_team": "fraud"}


def test_fsc_missing_required_field():
    with pytest.raises(ParseError) as exc:
        parse_fsc("name: f\nfeatures: [{name: x}]\n")
    assert "primary_keys" in str(exc.value)


@pytest.mark.parametrize("raw", ["nodot", "", ".col", "ds.", 7])
def test_feature_ref_rejects_malformed(raw):
    with pytest.raises(RefError):
        FeatureRef.parse(raw, "test")


def test_feature_ref_splits_on_first_dot():
    ref = FeatureRef.parse("ds.col.sub", "test")
    assert (ref.dataset, ref.column) == ("ds", "col.sub")


def test_dfr_duplicate_dataset_rejected():
    text = """
datasets:
  - name: a
    format: parquet
    bucket: {dev: d, prod: p}
    features: [{feature_name: x}]
  - name: a
    format: parquet
    bucket: {dev: d, prod: p}
    features: [{feature_name: y}]
"""
    with pytest.raises(ParseError) as exc:
        parse_dfr(text)
    assert "duplicate" in str(exc.value)


def test_run_missing_max_iterations_is_parse_error(t0):
    doc = yaml.safe_load((t0 / "run.yaml").read_text())
    del doc["planner"]["max_iterations"]
    with pytest.raises(ParseError) as exc:
        parse_run(yaml.safe_dump(doc))
    assert "max_iterations" in str(exc.value)


@pytest.mark.parametrize("value", [0, -3, "soon"])
def test_run_max_iterations_must_be_positive_int(t0, value):
    doc = yaml.safe_load((t0 / "run.yaml").read_text())
    doc["planner"]["max_iterations"] = value
    with pytest.raises(ParseError):
        parse_run(yaml.safe_dump(doc))


def test_run_harness_kind_validated(t0):
    doc = yaml.safe_load((t0 / "run.yaml").read_text())
    doc["harness"] = {"kind": "telepathy"}
    with pytest.raises(ParseError):
        parse_run(yaml.safe_dump(doc))


def test_load_task_missing_declared_file(t0):
    (t0 / "input" / "fsc.yaml").unlink()
    with pytest.raises(MissingFile) as exc:
        load_task(t0 / "run.yaml")
    assert "fsc" in str(exc.value)


def test_load_task_missing_run_file(tmp_path):
    with pytest.raises(MissingFile):
        load_task(tmp_path / "absent.yaml")


def test_load_task_dangling_fsc_ref_is_ref_error(t0):
    fsc_path = t0 / "input" / "fsc.yaml"
    doc = yaml.safe_load(fsc_path.read_text())
    doc["features"][0]["source_columns"] = ["phantom_dataset.amount"]
    fsc_path.write_text(yaml.safe_dump(doc))
    with pytest.raises(RefError) as exc:
        load_task(t0 / "run.yaml")
    assert "phantom_dataset" in str(exc.value)


def test_load_task_reads_whole_bundle(t0):
    task = load_task(t0 / "run.yaml")
    assert task.fsc.name == "user_txn_rollup"
    assert task.script_name == "user_txn_rollup.py"
    assert task.dfr.names() == {"transactions", "users"}
    paths = [p for p, _ in task.reusable_sources]
    assert any(p.endswith("io_helpers.py") for p in paths)
    assert task.config_schema is not None
    assert "required_fields" in task.config_schema
    assert task.run.harness.kind == "simulated"


def test_write_artifacts_destinations_and_manifest(t0):
    task = load_task(t0 / "run.yaml")
    memory = ShortTermMemory()
    memory.append(_actor_step(0, "config_generator", True, artifacts=[
        ("config_yaml", "feature_name: user_txn_rollup")]))
    memory.append(_actor_step(1, "utils_retriever", True, artifacts=[
        ("selected_utils", "[]")]))
    memory.append(_actor_step(2, "code_generator", True, artifacts=[
        ("feature_script", "print('hi')\n")]))
    memory.append(_actor_step(3, "testcase_generator", True, artifacts=[
        ("testcase_definitions", "[]")]))
    memory.append(_actor_step(4, "testcase_coder", True, artifacts=[
        ("test_script", "def test_ok():\n    assert True\n")]))

    manifest = write_artifacts(task, memory)

    config = t0 / "repo" / "feature_configs" / "user_txn_rollup.yaml"
    script = t0 / "repo" / "feature_scripts" / "user_txn_rollup.py"
    tests_json = t0 / "repo" / "tests" / "user_txn_rollup_testcases.json"
    test_script = t0 / "repo" / "tests" / "test_user_txn_rollup.py"
    for path in (config, script, tests_json, test_script):
        assert path.exists(), path
    # content normalized to end with exactly the written newline
    assert config.read_text() == "feature_name: user_txn_rollup\n"
    # selected_utils is memory-only, never written to the repo
    assert not list((t0 / "repo").rglob("*selected*"))

    doc = yaml.safe_load(manifest.manifest_path.read_text())
    assert doc["patch"] == "changes.patch"
    by_kind = {e["kind"]: e for e in doc["entries"]}
    assert set(by_kind) == {"config_yaml", "feature_script",
                            "testcase_definitions", "test_script"}
    digest = hashlib.sha256(config.read_bytes()).hexdigest()
    assert by_kind["config_yaml"]["sha256"] == digest

    patch = manifest.patch_path.read_text()
    assert "--- a/feature_configs/user_txn_rollup.yaml" in patch
    assert "+++ b/feature_configs/user_txn_rollup.yaml" in patch
    assert "+feature_name: user_txn_rollup" in patch

    # unchanged re-write produces an empty patch
    again = write_artifacts(task, memory)
    assert again.patch_path.read_text() == ""


def test_write_artifacts_empty_memory(t0):
    task = load_task(t0 / "run.yaml")
    manifest = write_artifacts(task, ShortTermMemory())
    assert manifest.entries == []
    assert manifest.patch_path.read_text() == ""
    assert yaml.safe_load(manifest.manifest_path.read_text())["entries"] == []


def test_write_artifacts_confinement(t0, tmp_path):
    task = load_task(t0 / "run.yaml")
    task.run.env.feature_configs_dir = str(tmp_path.parent / "outside")
    memory = ShortTermMemory()
    memory.append(_actor_step(0, "config_generator", True, artifacts=[
        ("config_yaml", "x: 1")]))
    # a redeclared directory is itself an allowed root, so this still
    # writes; confinement guards symlinked escapes from the roots
    (tmp_path.parent / "outside").mkdir(exist_ok=True)
    write_artifacts(task, memory)
    assert (tmp_path.parent / "outside" / "user_txn_rollup.yaml").exists()


def test_write_artifacts_unwritable_root(t0):
    task = load_task(t0 / "run.yaml")
    task.run.env.output_root_dir = "/proc/definitely/not/writable"
    with pytest.raises(IoError):
        write_artifacts(task, ShortTermMemory())
