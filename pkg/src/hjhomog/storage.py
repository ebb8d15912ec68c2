"""On-disk artifacts: CSV field exports, the binary slab format, JSON
reports, content hashes, and the effective-table cache.

Slab layout: a 32-byte fixed header -- magic ``HJPL`` (4 bytes), u16
version, u8 ndims, u8 reserved, then f64 h, f64 dt, f64 eps -- followed by
ndims little-endian u32 extents and the float64 payload in C order.  Writes
are bit-exact functions of the data, so identical runs produce identical
files.

Hashes are 64-bit FNV-1a over canonical serializations; they key the table
cache, not security.
"""

from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hjhomog.metric import EffectiveTables

__all__ = [
    "fnv1a64",
    "write_field_csv",
    "write_slab",
    "read_slab",
    "write_report",
    "save_tables",
    "load_tables",
    "table_cache_key",
    "tables_cached",
]

SLAB_MAGIC = b"HJPL"
SLAB_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes | str) -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def fnv_hex(data: bytes | str) -> str:
    return f"{fnv1a64(data):016x}"


# ---------------------------------------------------------------------------
# Field exports
# ---------------------------------------------------------------------------


def write_field_csv(field, path: str | Path, times: list[float] | None = None) -> None:
    """Rows x,y,t,value over admissible nodes at the requested times
    (default: every stored slice)."""
    grid = field.grid
    xs, ys = grid.axes()
    adm = grid.admissible
    ii, jj = np.nonzero(adm)
    if times is None:
        steps = range(field.values.shape[0])
    else:
        steps = [int(round(t / field.dt)) for t in times]
    with open(path, "w") as f:
        f.write("x,y,t,value\n")
        for k in steps:
            t = k * field.dt
            vals = field.values[k][ii, jj]
            for x, y, v in zip(xs[ii], ys[jj], vals):
                f.write(f"{x!r},{y!r},{t!r},{v!r}\n")


def write_slab(
    path: str | Path,
    payload: np.ndarray,
    h: float,
    dt: float,
    eps: float,
) -> None:
    arr = np.ascontiguousarray(payload, dtype=np.float64)
    if arr.ndim > 255:
        raise ValueError("too many dimensions for the slab header")
    with open(path, "wb") as f:
        f.write(SLAB_MAGIC)
        f.write(struct.pack("<HBB", SLAB_VERSION, arr.ndim, 0))
        f.write(struct.pack("<ddd", h, dt, eps))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes(order="C"))


def read_slab(path: str | Path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != SLAB_MAGIC:
            raise ValueError(f"not a slab file (magic {magic!r})")
        version, ndims, _ = struct.unpack("<HBB", f.read(4))
        if version != SLAB_VERSION:
            raise ValueError(f"unsupported slab version {version}")
        h, dt, eps = struct.unpack("<ddd", f.read(24))
        dims = struct.unpack(f"<{ndims}I", f.read(4 * ndims))
        payload = np.frombuffer(f.read(), dtype=np.float64).reshape(dims)
    return payload, {"h": h, "dt": dt, "eps": eps, "version": version}


def write_field_slab(field, path: str | Path) -> None:
    write_slab(path, field.values, field.grid.h, field.dt, field.epsilon)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, repr-exact floats."""

    def default(o):
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"not serializable: {type(o)}")

    return json.dumps(obj, sort_keys=True, indent=2, default=default)


def write_report(path: str | Path, config_echo: dict, results: dict, stamp: bool = True) -> dict:
    """Versioned JSON report.  Everything outside the ``stamp`` section is a
    deterministic function of the configuration."""
    doc = {
        "schema_version": 1,
        "config_echo": config_echo,
        "results": results,
    }
    if stamp:
        doc["stamp"] = {
            "unix_time": time.time(),
            "cwd": os.getcwd(),
        }
    Path(path).write_text(canonical_json(doc) + "\n")
    return doc


# ---------------------------------------------------------------------------
# Effective-table cache
# ---------------------------------------------------------------------------


def table_cache_key(geometry_key: str, model_key: str, k: int, h: float, spacing: float, rho: int) -> str:
    canon = f"geom[{geometry_key}]model[{model_key}]k={k};h={h!r};spacing={spacing!r};rho={rho}"
    return fnv_hex(canon)


def save_tables(tables: EffectiveTables, cache_dir: str | Path, key: str) -> Path:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    csv_path = cache_dir / f"tables-{key}.csv"
    sidecar = cache_dir / f"tables-{key}.json"
    tmp = csv_path.with_suffix(".csv.tmp")
    with open(tmp, "w") as f:
        f.write("table,i,j,value\n")
        for name, arr in (("lbar", tables.lbar), ("hbar", tables.hbar)):
            for i in range(arr.shape[0]):
                row = arr[i]
                f.write(
                    "".join(
                        f"{name},{i},{j},{float(row[j])!r}\n" for j in range(len(row))
                    )
                )
    os.replace(tmp, csv_path)
    meta = {
        "key": key,
        "k": tables.k,
        "k0": tables.k0,
        "v_axis": tables.v_axis.tolist(),
        "p_axis": tables.p_axis.tolist(),
        "provenance": tables.provenance,
        "written_at": time.time(),
    }
    tmp_j = sidecar.with_suffix(".json.tmp")
    tmp_j.write_text(canonical_json(meta) + "\n")
    os.replace(tmp_j, sidecar)
    return csv_path


def load_tables(cache_dir: str | Path, key: str) -> EffectiveTables | None:
    cache_dir = Path(cache_dir)
    csv_path = cache_dir / f"tables-{key}.csv"
    sidecar = cache_dir / f"tables-{key}.json"
    if not csv_path.exists() or not sidecar.exists():
        return None
    meta = json.loads(sidecar.read_text())
    v_axis = np.asarray(meta["v_axis"])
    p_axis = np.asarray(meta["p_axis"])
    lbar = np.full((len(v_axis), len(v_axis)), np.nan)
    hbar = np.full((len(p_axis), len(p_axis)), np.nan)
    with open(csv_path) as f:
        header = f.readline()
        if header.strip() != "table,i,j,value":
            return None
        for line in f:
            name, i, j, val = line.rstrip("\n").split(",")
            target = lbar if name == "lbar" else hbar
            target[int(i), int(j)] = float(val)
    return EffectiveTables(
        v_axis=v_axis,
        lbar=lbar,
        p_axis=p_axis,
        hbar=hbar,
        k=int(meta["k"]),
        k0=float(meta["k0"]),
        provenance=meta["provenance"],
    )


def tables_cached(
    cell,
    model,
    cache_dir: str | Path,
    geometry_key: str,
    k: int = 8,
    spacing: float = 0.05,
    h: float = 1 / 16,
    rho: int = 4,
    **kwargs,
) -> EffectiveTables:
    """Build-or-load wrapper around :func:`hjhomog.metric.build_tables`."""
    from hjhomog.metric import build_tables

    key = table_cache_key(geometry_key, model.key(), k, h, spacing, rho)
    cached = load_tables(cache_dir, key)
    if cached is not None:
        return cached
    tables = build_tables(cell, model, k=k, spacing=spacing, h=h, rho=rho, **kwargs)
    save_tables(tables, cache_dir, key)
    return tables
