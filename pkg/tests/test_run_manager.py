"""
Tests for run directories and manifests
"""

import pytest

from errors import SchemaError
from run_manager import MANIFEST_NAME, RunManager, file_digest, load_manifest, verify_inputs


def test_fresh_run_directory_is_named_after_the_command(tmp_path):
    run = RunManager(tmp_path, command="train")
    assert run.run_dir.parent == tmp_path
    assert run.run_id.startswith("train_")
    assert run.run_dir.is_dir()


def test_manifest_records_inputs_outputs_and_seeds(tmp_path):
    data = tmp_path / "interactions.csv"
    data.write_text("user_id,item_id\n")
    run = RunManager(tmp_path / "runs", tmp_path / "runs" / "r1", command="prepare")
    run.add_input(data)
    run.path("dataset.jsonl").write_text("{}\n")

    manifest_path = run.write_manifest(["prepare", "--input", str(data)], {"data": {"n_core": 10}}, {"train": 7})
    assert manifest_path.name == MANIFEST_NAME
    manifest = load_manifest(run.run_dir)
    assert manifest.run_id == "r1"
    assert manifest.seeds == {"train": 7}
    assert manifest.inputs == {str(data): file_digest(data)}
    assert manifest.outputs["dataset.jsonl"] == str(run.run_dir / "dataset.jsonl")
    verify_inputs(manifest)

    assert run.list_runs() == [
        {"run_id": "r1", "command": "prepare", "path": str(run.run_dir.absolute()), "outputs": 1}
    ]


def test_changed_or_missing_inputs_are_detected(tmp_path):
    data = tmp_path / "interactions.csv"
    data.write_text("a\n")
    run = RunManager(tmp_path / "runs", tmp_path / "runs" / "r", command="prepare")
    run.add_input(data)
    manifest = load_manifest(run.write_manifest([], {}, {}))

    data.write_text("b\n")
    with pytest.raises(SchemaError):
        verify_inputs(manifest)
    data.unlink()
    with pytest.raises(SchemaError):
        verify_inputs(manifest)


def test_digest_depends_on_content_only(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    a.write_text("same")
    b.write_text("same")
    assert file_digest(a) == file_digest(b)
    assert len(file_digest(a)) == 64
