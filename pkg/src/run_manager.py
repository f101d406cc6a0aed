"""
Run Manager
Run directories, artifact paths and the manifest that ties a run to its inputs
"""

import hashlib
import json
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Union

import structlog
from pydantic import BaseModel

from errors import SchemaError

logger = structlog.get_logger(__name__)

CODE_VERSION = "1.0.0"
MANIFEST_NAME = "manifest.json"


class RunManifest(BaseModel):
    run_id: str
    command: str
    argv: List[str]
    config: Dict
    seeds: Dict[str, int]
    inputs: Dict[str, str] = {}
    outputs: Dict[str, str] = {}
    code_version: str = CODE_VERSION


def file_digest(path: Union[str, Path]) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


def verify_inputs(manifest: RunManifest):
    """Recompute the input digests of a manifest; raise SchemaError on any change"""
    for path, digest in manifest.inputs.items():
        if not Path(path).is_file():
            raise SchemaError(f"input {path} of run {manifest.run_id} is missing")
        if file_digest(path) != digest:
            raise SchemaError(f"input {path} changed since run {manifest.run_id}")


class RunManager:
    """
    Owns one run directory under the runs root

    Every artifact a command writes is registered as an output, every file
    it reads as an input, and both end up in ``manifest.json``.
    """

    def __init__(self, runs_dir: Union[str, Path], run_dir: Optional[Union[str, Path]] = None, command: str = "run"):
        self.runs_dir = Path(runs_dir)
        if run_dir is None:
            stamp = datetime.now().strftime("%Y%m%d_%H%M%S_%f")
            run_dir = self.runs_dir / f"{command}_{stamp}"
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.inputs: Dict[str, str] = {}
        self.outputs: Dict[str, str] = {}
        logger.info("run directory ready", run_dir=str(self.run_dir.absolute()))

    @property
    def run_id(self) -> str:
        return self.run_dir.name

    def path(self, name: str) -> Path:
        """Path of an artifact inside the run directory, registered as an output"""
        out = self.run_dir / name
        out.parent.mkdir(parents=True, exist_ok=True)
        self.outputs[name] = str(out)
        return out

    def add_input(self, path: Union[str, Path]):
        path = Path(path)
        self.inputs[str(path)] = file_digest(path)

    def write_manifest(self, argv: List[str], config: Dict, seeds: Dict[str, int]) -> Path:
        manifest = RunManifest(
            run_id=self.run_id,
            command=self.command,
            argv=list(argv),
            config=config,
            seeds=seeds,
            inputs=dict(self.inputs),
            outputs=dict(self.outputs),
        )
        out = self.run_dir / MANIFEST_NAME
        try:
            out.write_text(manifest.model_dump_json(indent=2) + "\n")
        except OSError as e:
            logger.error("could not write manifest", path=str(out), error=str(e))
            raise
        logger.info("manifest written", path=str(out), outputs=len(self.outputs))
        return out

    def list_runs(self) -> List[Dict]:
        """Every run under the runs root that has a manifest"""
        runs = []
        for manifest_path in sorted(self.runs_dir.glob(f"*/{MANIFEST_NAME}")):
            data = json.loads(manifest_path.read_text())
            runs.append(
                {
                    "run_id": data.get("run_id"),
                    "command": data.get("command"),
                    "path": str(manifest_path.parent.absolute()),
                    "outputs": len(data.get("outputs", {})),
                }
            )
        return runs


def load_manifest(path: Union[str, Path]) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    return RunManifest.model_validate_json(path.read_text())
