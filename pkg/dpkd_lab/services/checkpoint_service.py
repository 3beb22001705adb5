"""
Checkpoint persistence for sequence models using Repository pattern
"""
import json
import logging
from pathlib import Path
from typing import Union

from exceptions import ParseError, SchemaError
from models.seq_model import SeqModel

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class CheckpointRepository:
    """Repository pattern for model checkpoint files"""

    def __init__(self, root: Union[str, Path] = '.'):
        self.root = Path(root)

    def _resolve(self, name: Union[str, Path]) -> Path:
        path = Path(name)
        return path if path.is_absolute() else self.root / path

    def save(self, model: SeqModel, name: Union[str, Path]) -> Path:
        path = self._resolve(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        document = {'schema_version': SCHEMA_VERSION, **model.to_dict()}
        path.write_text(json.dumps(document, indent=1) + '\n', encoding='utf-8')
        logger.debug(f"Checkpoint saved to {path}")
        return path

    def load(self, name: Union[str, Path]) -> SeqModel:
        path = self._resolve(name)
        try:
            document = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise ParseError(f"Malformed checkpoint {path}: {e.msg}", line=e.lineno)
        version = document.get('schema_version')
        if version != SCHEMA_VERSION:
            raise SchemaError('schema_version', message=f"Unsupported checkpoint schema version {version!r}")
        for key in ('vocab', 'order', 'logits'):
            if key not in document:
                raise SchemaError(key)
        return SeqModel.from_dict(document)


def save_checkpoint(model: SeqModel, path: Union[str, Path]) -> Path:
    return CheckpointRepository().save(model, path)


def load_checkpoint(path: Union[str, Path]) -> SeqModel:
    return CheckpointRepository().load(path)
