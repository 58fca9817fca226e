import csv
import json
import logging
from typing import Any, Dict, Generic, Iterable, List, Optional, Sequence, Type, TypeVar, Union

from path import Path
from pydantic import BaseModel

from utils import _current_timestamp

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)


def load_json_file(
    filepath: Union[str, Path], model: Optional[Type[M]] = None
) -> Union[dict, list, M, List[M]]:
    """Reads JSON, validating each object against `model` when one is given."""
    filepath = Path(filepath)
    if not filepath.exists():
        raise FileNotFoundError(f"File not found: {filepath}")
    text = filepath.read_text(encoding="utf-8")
    data = json.loads(text) if text.strip() else []
    if model is None:
        return data
    if isinstance(data, list):
        return [model.model_validate(item) for item in data]
    return model.model_validate(data)


def _jsonable(data: Any) -> Any:
    if isinstance(data, BaseModel):
        return data.model_dump(mode="json")
    if isinstance(data, (list, tuple)):
        return [_jsonable(item) for item in data]
    return data


def save_json_file(filepath: Union[str, Path], data: Any, indent: int = 2) -> None:
    filepath = Path(filepath)
    if filepath.parent:
        filepath.parent.makedirs_p()
    # sorted keys keep repeated runs byte-identical
    text = json.dumps(_jsonable(data), indent=indent, sort_keys=True)
    filepath.write_text(text + "\n", encoding="utf-8")


def save_csv_rows(
    filepath: Union[str, Path],
    columns: Sequence[str],
    rows: Iterable[Sequence[Any]],
) -> None:
    """Writes floats with repr so traces keep full precision."""
    filepath = Path(filepath)
    if filepath.parent:
        filepath.parent.makedirs_p()
    with open(filepath, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    logger.debug(f"Wrote {filepath}")


def load_csv_rows(filepath: Union[str, Path]) -> List[Dict[str, str]]:
    with open(Path(filepath), "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


R = TypeVar("R", bound=Dict[str, Any])


class JsonRecordStore(Generic[R]):
    """Append-only list of dict records persisted as one JSON array."""

    def __init__(self, json_file: Union[str, Path]):
        self.json_file = Path(json_file)
        self.records: List[R] = []
        self.load()

    def load(self) -> List[R]:
        if not self.json_file.exists():
            self.records = []
            return self.records
        try:
            self.records = list(load_json_file(self.json_file))
        except (OSError, ValueError) as e:
            logger.error(f"Error: reading {self.json_file}: {e}")
            raise
        return self.records

    def save(self) -> None:
        try:
            save_json_file(self.json_file, self.records)
        except OSError as e:
            logger.error(f"Error: saving {self.json_file}: {e}")
            raise

    def append(self, record: R) -> R:
        self.load()
        self.records.append(record)
        self.save()
        return record


class RunStore(JsonRecordStore[Dict[str, Any]]):
    """Index of CLI invocations kept next to the reports in the output directory."""

    def __init__(self, out_dir: Union[str, Path]):
        super().__init__(Path(out_dir) / "runs.json")

    def _get_next_run_id(self) -> int:
        return max((r.get("run_id", 0) for r in self.records), default=0) + 1

    def record_run(
        self,
        command: str,
        config_path: Optional[str],
        outcome: str,
        exit_code: int,
        outputs: List[str],
    ) -> Dict[str, Any]:
        self.load()
        entry = self.append(
            {
                "run_id": self._get_next_run_id(),
                "command": command,
                "config": None if config_path is None else str(config_path),
                "outcome": outcome,
                "exit_code": exit_code,
                "outputs": outputs,
                "timestamp": _current_timestamp(),
            }
        )
        logger.info(f"Recorded run {entry['run_id']}: {command} -> {outcome}")
        return entry
