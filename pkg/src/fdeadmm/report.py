"""CSV and plain-text tables, and binary solution dumps."""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "SOLVE_COLUMNS",
    "BENCH_COLUMNS",
    "DUMP_MAGIC",
    "FIELD_IDS",
    "fmt",
    "solve_row",
    "write_table",
    "write_dump",
    "read_dump",
]

SOLVE_COLUMNS = (
    "n", "N", "alpha", "beta1", "beta2", "gamma", "delta", "rho",
    "E_l2", "dual_inf", "pcg_avg", "admm_iters", "wall_seconds", "status",
)
BENCH_COLUMNS = ("n", "N", "apply_B_seconds", "precond_seconds", "peak_bytes")

DUMP_MAGIC = b"FDEADMM1"
FIELD_IDS = {"y": 1, "u": 2, "z_y": 3, "z_u": 4, "p": 5, "w_y": 6, "w_u": 7}
_HEADER = struct.Struct("<8sQQQ")  # magic, n, field id, reserved


def fmt(value) -> str:
    """Shortest round-tripping text for floats, plain ``str`` otherwise."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def solve_row(spec, cfg, result) -> dict:
    return {
        "n": spec.n,
        "N": spec.n ** 3,
        "alpha": spec.alpha,
        "beta1": spec.beta1,
        "beta2": spec.beta2,
        "gamma": spec.gamma,
        "delta": cfg.delta,
        "rho": cfg.rho,
        "E_l2": result.misfit,
        "dual_inf": result.dual_inf,
        "pcg_avg": result.pcg_avg,
        "admm_iters": result.admm_iters,
        "wall_seconds": result.wall_seconds,
        "status": result.status,
    }


def _plain(rows, columns) -> str:
    cells = [list(columns)] + [[fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    return "".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) + "\n" for row in cells)


def write_table(path, rows, columns, fmt_name: str = "csv") -> None:
    """Write ``rows`` (dicts) with a fixed column order; ``path=None`` returns the text."""
    if fmt_name == "plain":
        text = _plain(rows, columns)
    elif fmt_name == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r.get(c, "")) for c in columns])
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown report format {fmt_name!r}")
    if path is None:
        return text
    Path(path).write_text(text)
    return text


def write_dump(directory, name: str, n: int, values: np.ndarray) -> Path:
    """Raw little-endian float64 dump with a 32-byte header and a manifest line."""
    directory = Path(directory)
    values = np.ascontiguousarray(values, dtype="<f8").ravel()
    if values.size != n ** 3:
        raise ValueError(f"{name}: expected {n ** 3} values, got {values.size}")
    path = directory / f"{name}.bin"
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DUMP_MAGIC, n, FIELD_IDS[name], 0))
        fh.write(values.tobytes())
    with open(directory / "manifest.txt", "a") as fh:
        fh.write(f"{path.name} field={name} id={FIELD_IDS[name]} n={n} dtype=float64-le "
                 f"layout=(t,x1,x2) header_bytes={_HEADER.size}\n")
    return path


def read_dump(path) -> tuple[str, int, np.ndarray]:
    raw = Path(path).read_bytes()
    magic, n, fid, _ = _HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    name = {v: k for k, v in FIELD_IDS.items()}[fid]
    return name, n, np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).copy()
