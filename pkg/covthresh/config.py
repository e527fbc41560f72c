"""
JSON-backed configuration records.
"""
import json
from dataclasses import asdict, fields
from typing import Any, Dict, Type, TypeVar

from covthresh.errors import InputError

T = TypeVar('T', bound='FromDictMixin')


class FromDictMixin:
    """
    For frozen dataclasses built from parsed JSON objects. Unknown keys are an error; lists are
    turned into tuples so the record stays hashable.
    """

    @classmethod
    def from_dict(cls: Type[T], d: Dict[str, Any]) -> T:
        if not isinstance(d, dict):
            raise InputError(f"{cls.__name__}: expected a JSON object, got {type(d).__name__}.")
        known = [f.name for f in fields(cls)]
        for key in d:
            if key not in known:
                raise InputError(f"{cls.__name__}: unknown key '{key}'; expected one of {known}.")
        kwargs = {k: _freeze(v) for k, v in d.items()}
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise InputError(f"{cls.__name__}: {e}") from e

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _freeze(v):
    if isinstance(v, list):
        return tuple(_freeze(x) for x in v)
    return v
