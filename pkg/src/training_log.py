"""
Training Log
Per-epoch loss and validation record, written as it is produced
"""

import json
from pathlib import Path
from typing import Dict, List, Optional, Union

import pandas as pd
import structlog
from pydantic import BaseModel

from errors import SchemaError

logger = structlog.get_logger(__name__)

FIELDS = ["epoch", "l1", "l2", "l_dis", "joint", "val_gauc"]


class EpochRecord(BaseModel):
    epoch: int
    l1: float
    l2: float
    l_dis: float
    joint: float
    val_gauc: Optional[float] = None

    def to_line(self) -> str:
        # repr keeps every bit so identical runs give identical files
        values = [str(self.epoch)] + [
            "nan" if v is None else repr(float(v)) for v in (self.l1, self.l2, self.l_dis, self.joint, self.val_gauc)
        ]
        return "\t".join(values)


class TrainingLog:
    """Epoch records of one training run"""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        """
        Args:
            path: TSV file to stream records to (truncated on creation);
                records are only kept in memory when omitted
        """
        self.records: List[EpochRecord] = []
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("\t".join(FIELDS) + "\n")

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: EpochRecord):
        self.records.append(record)
        if self.path is None:
            return
        try:
            with open(self.path, "a") as f:
                f.write(record.to_line() + "\n")
        except OSError as e:
            logger.error("could not append epoch record", path=str(self.path), error=str(e))
            raise

    @classmethod
    def read(cls, path: Union[str, Path]) -> "TrainingLog":
        path = Path(path)
        frame = pd.read_csv(path, sep="\t", float_precision="round_trip")
        if list(frame.columns) != FIELDS:
            raise SchemaError(f"{path}: not a training log (columns {list(frame.columns)})")
        log = cls()
        for row in frame.to_dict(orient="records"):
            gauc = row["val_gauc"]
            row["val_gauc"] = None if pd.isna(gauc) else gauc
            log.records.append(EpochRecord(**row))
        return log

    def get_statistics(self) -> Dict:
        """Best epoch by validation GAUC and the last joint loss"""
        scored = [r for r in self.records if r.val_gauc is not None]
        best = max(scored, key=lambda r: r.val_gauc, default=None)
        return {
            "epochs": len(self.records),
            "best_epoch": best.epoch if best else None,
            "best_val_gauc": best.val_gauc if best else None,
            "final_joint": self.records[-1].joint if self.records else None,
        }

    def export_to_json(self, output_path: Union[str, Path]) -> Path:
        output_path = Path(output_path)
        export_data = {
            "statistics": self.get_statistics(),
            "epochs": [r.model_dump() for r in self.records],
        }
        with open(output_path, "w") as f:
            json.dump(export_data, f, indent=2)
        logger.info("training log exported", path=str(output_path))
        return output_path
