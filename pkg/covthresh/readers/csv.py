"""
Readers for comma-separated observation and matrix files.

Layer 1 is pandas.read_csv with every cell kept as a string; layer 2 checks each cell and turns
missing-value markers into NaN. Errors name the file, the 1-based line and the column.
"""
import pathlib
from typing import TextIO, Union

import numpy as np
import pandas as pd

from covthresh.errors import MalformedInput
from covthresh.estimators import MISSING_MARKERS_ON_READ, ObsMatrix
from covthresh.matcore import SymMatrix

SYMMETRY_TOL = 1e-9

PathOrStream = Union[str, pathlib.Path, TextIO]


def _source_name(filepath_or_buffer: PathOrStream) -> str:
    if isinstance(filepath_or_buffer, (str, pathlib.Path)):
        return str(filepath_or_buffer)
    return getattr(filepath_or_buffer, 'name', '<stream>')


def _read_cells(filepath_or_buffer: PathOrStream, sep: str, filename: str) -> pd.DataFrame:
    try:
        df = pd.read_csv(filepath_or_buffer, sep=sep, header=None, dtype=str,
                         keep_default_na=False, na_values=[], skip_blank_lines=True)
    except pd.errors.EmptyDataError as e:
        raise MalformedInput(f"File '{filename}' is empty.") from e
    except pd.errors.ParserError as e:
        raise MalformedInput(f"File '{filename}' could not be parsed: {str(e).strip()}") from e
    return df.apply(lambda col: col.str.strip())


def _is_number(x: str) -> bool:
    return not np.isnan(pd.to_numeric(x, errors='coerce'))


def _is_illegal_value_in_numeric_column(x: str) -> bool:
    if x in MISSING_MARKERS_ON_READ:
        return False
    value = pd.to_numeric(x, errors='coerce')
    return not np.isfinite(value)


def _to_float(x: str) -> float:
    # exact for %.17g text
    return np.nan if x in MISSING_MARKERS_ON_READ else float(x)


def _to_floats(df: pd.DataFrame, filename: str, names, first_line: int) -> np.ndarray:
    for j, col in enumerate(df.columns):
        bad = df[col].apply(_is_illegal_value_in_numeric_column)
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            raise MalformedInput(f"Illegal value '{df[col].iloc[i]}' in file '{filename}', "
                                 f"line {first_line + i}, column '{names[j]}'.")
    return df.apply(lambda col: col.apply(_to_float)).to_numpy(dtype=float)


def read_obs_csv(filepath_or_buffer: PathOrStream, sep: str = ',') -> ObsMatrix:
    """
    Reads an n x p observation matrix, one observation per line.

    The first line is taken as a header of variable names if any of its cells is neither a number
    nor a missing-value marker ('NA', 'NaN', 'nan' or empty).
    :raises MalformedInput: on ragged lines or cells that are neither numbers nor missing markers.
    """
    filename = _source_name(filepath_or_buffer)
    df = _read_cells(filepath_or_buffer, sep, filename)
    first = df.iloc[0]
    has_header = any(not _is_number(c) and c not in MISSING_MARKERS_ON_READ for c in first)
    if has_header:
        names = list(first)
        if len(set(names)) != len(names):
            raise MalformedInput(f"Duplicate variable names in header of file '{filename}'.")
        df = df.iloc[1:].reset_index(drop=True)
        if df.empty:
            raise MalformedInput(f"File '{filename}' has a header but no observations.")
    else:
        names = [f'x{j}' for j in range(df.shape[1])]
    values = _to_floats(df, filename, names, 2 if has_header else 1)
    return ObsMatrix(values, columns=names)


def read_sym_csv(filepath_or_buffer: PathOrStream, sep: str = ',') -> SymMatrix:
    """
    Reads a full p x p symmetric matrix without header. Asymmetry up to 1e-9 relative to the largest
    entry is accepted and averaged away.
    """
    filename = _source_name(filepath_or_buffer)
    df = _read_cells(filepath_or_buffer, sep, filename)
    names = [str(j) for j in range(df.shape[1])]
    a = _to_floats(df, filename, names, 1)
    if a.shape[0] != a.shape[1]:
        raise MalformedInput(f"Matrix in file '{filename}' is {a.shape[0]} x {a.shape[1]}, "
                             f"not square.")
    if np.isnan(a).any():
        i, j = np.argwhere(np.isnan(a))[0]
        raise MalformedInput(f"Missing entry in file '{filename}', line {i + 1}, column {j}.")
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.T).max() > SYMMETRY_TOL * scale:
        i, j = np.unravel_index(np.argmax(np.abs(a - a.T)), a.shape)
        raise MalformedInput(f"Matrix in file '{filename}' is not symmetric: entries ({i}, {j}) "
                             f"and ({j}, {i}) differ.")
    return SymMatrix(a, symmetrize=True)
