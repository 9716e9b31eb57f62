"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    magic   b"PWCKPT\\0\\0"
    u32     format version
    u32     header byte length, then UTF-8 ``key = value`` lines
    u32     blob count
    per blob: u16 name length, name (UTF-8), u8 ndim, ndim x u64 dims,
              float64 little-endian values (C order)
"""
from __future__ import annotations

import hashlib
import os
import struct
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigError
from .student import FlowStack
from .teacher import TeacherParams
from .wavenet import Conditioner, WaveNet, WaveNetConfig

MAGIC = b"PWCKPT\0\0"
VERSION = 1


def save(path, header: Dict[str, str], blobs: Dict[str, np.ndarray]) -> None:
    text = "".join(f"{k} = {v}\n" for k, v in header.items()).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(text)), text, struct.pack("<I", len(blobs))]
    for name, arr in blobs.items():
        arr = np.require(np.asarray(arr, dtype="<f8"), requirements="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def load(path) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        return _parse(data)
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise ConfigError(f"{path}: corrupt checkpoint ({exc})") from exc


def _parse(data: bytes):
    if data[:8] != MAGIC:
        raise ValueError("bad magic")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    off = 16
    header = {}
    for line in data[off:off + hlen].decode("utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            header[k.strip()] = v.strip()
    off += hlen
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    blobs = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        if off + 8 * n > len(data):
            raise ValueError(f"blob {name!r} truncated")
        blobs[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    return header, blobs


def file_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# -------------------------------------------------------- model (de)serialization

def _net_header(prefix: str, cfg: WaveNetConfig) -> Dict[str, str]:
    return {f"{prefix}{k}": str(v) for k, v in cfg.to_dict().items()}


def _net_config(header: Dict[str, str], prefix: str) -> WaveNetConfig:
    fields = WaveNetConfig.__dataclass_fields__
    try:
        return WaveNetConfig(**{k: int(header[f"{prefix}{k}"]) for k in fields})
    except KeyError as exc:
        raise ConfigError(f"checkpoint header missing {exc}") from exc


def _assign(params: Dict[str, "object"], blobs: Dict[str, np.ndarray], prefix: str) -> None:
    for name, t in params.items():
        key = prefix + name
        if key not in blobs:
            raise ConfigError(f"checkpoint is missing parameter {key!r}")
        if blobs[key].shape != t.shape:
            raise ConfigError(f"parameter {key!r} has shape {blobs[key].shape}, expected {t.shape}")
        t.data = blobs[key].copy()


def save_teacher(path, teacher: TeacherParams, extra: Optional[Dict[str, str]] = None) -> None:
    header = {"kind": "teacher", "bands": str(teacher.conditioner.bands),
              "cond_channels": str(teacher.conditioner.channels)}
    header.update(_net_header("net.", teacher.config))
    header.update(extra or {})
    blobs = {k: v.data for k, v in teacher.parameters().items()}
    save(path, header, blobs)


def load_teacher(path) -> Tuple[TeacherParams, Dict[str, str]]:
    header, blobs = load(path)
    if header.get("kind") != "teacher":
        raise ConfigError(f"{path} is not a teacher checkpoint")
    cfg = _net_config(header, "net.")
    teacher = TeacherParams(cfg, bands=int(header["bands"]))
    _assign(teacher.parameters(), blobs, "")
    return teacher, header


def save_student(path, stack: FlowStack, extra: Optional[Dict[str, str]] = None) -> None:
    header = {"kind": "student", "flows": str(len(stack)),
              "layers": ",".join(str(f.config.layers) for f in stack.flows),
              "reverse_time": ",".join("1" if r else "0" for r in stack.reverse_time),
              "bands": str(stack.conditioner.bands), "cond_channels": str(stack.conditioner.channels)}
    for i, flow in enumerate(stack.flows):
        header.update(_net_header(f"flow{i}.", flow.config))
    header.update(extra or {})
    blobs = {f"cond.{k}": v.data for k, v in stack.conditioner.params.items()}
    blobs.update({k: v.data for k, v in stack.parameters().items()})
    save(path, header, blobs)


def load_student(path, conditioner: Optional[Conditioner] = None) -> Tuple[FlowStack, Dict[str, str]]:
    """Rebuild a flow stack; pass the teacher's conditioner to keep it shared."""
    header, blobs = load(path)
    if header.get("kind") != "student":
        raise ConfigError(f"{path} is not a student checkpoint")
    n = int(header["flows"])
    if conditioner is None:
        conditioner = Conditioner(int(header["bands"]), int(header["cond_channels"]))
        _assign({f"cond.{k}": v for k, v in conditioner.params.items()}, blobs, "")
    flows = []
    for i in range(n):
        net = WaveNet(_net_config(header, f"flow{i}."))
        _assign(net.params, blobs, f"flow{i}.")
        flows.append(net)
    flags = [f == "1" for f in header["reverse_time"].split(",")]
    return FlowStack(flows, flags, conditioner), header


def checkpoint_kind(path) -> str:
    header, _ = load(path)
    kind = header.get("kind")
    if kind not in ("teacher", "student"):
        raise ConfigError(f"{path}: unknown checkpoint kind {kind!r}")
    return kind
