"""Checkpoint serialization.

Layout: 8-byte magic "CDMCKPT1", little-endian uint32 header length, JSON
header (version, architecture, geometry, schedule fingerprint, epoch,
tensor index), then each tensor's raw little-endian float64 data in index
order. Writes are atomic (temp file + rename) so an interrupted run never
leaves a half-written checkpoint behind.
"""

import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .channel import SystemGeometry
from .errors import CheckpointError, GeometryError
from .nnet import DenoiserParams

__all__ = ["Checkpoint", "save_params", "load_params", "ensure_geometry"]

MAGIC = b"CDMCKPT1"
VERSION = 1


@dataclass
class Checkpoint:
    params: DenoiserParams
    geometry: dict      # {"n": ..., "m1": ..., "m2": ..., "spacing": ...}
    schedule: dict      # {"t_max": ..., "beta_start": ..., "beta_end": ...}
    epoch: int
    meta: dict

    def system_geometry(self) -> SystemGeometry:
        return SystemGeometry(
            n_bs_antennas=self.geometry["n"],
            m1_elements=self.geometry["m1"],
            m2_elements=self.geometry["m2"],
            element_spacing=self.geometry["spacing"],
        )


def save_params(params: DenoiserParams, path, *, geometry: dict, schedule: dict,
                epoch: int, meta: dict | None = None):
    names = sorted(params.tensors)
    header = {
        "version": VERSION,
        "arch": params.arch,
        "x_dim": params.x_dim,
        "cond_in_dim": params.cond_in_dim,
        "geometry": geometry,
        "schedule": schedule,
        "epoch": int(epoch),
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(params.tensors[n].data.shape)}
                    for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            for n in names:
                data = np.ascontiguousarray(params.tensors[n].data, dtype="<f8")
                f.write(data.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_params(path) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"corrupt checkpoint {path}: bad magic")
    (hlen,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    if len(raw) < start + hlen:
        raise CheckpointError(f"corrupt checkpoint {path}: truncated header")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint {path}: unreadable header") from e
    if header.get("version") != VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {header.get('version')} in {path}"
        )
    offset = start + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + nbytes > len(raw):
            raise CheckpointError(f"corrupt checkpoint {path}: truncated tensor "
                                  f"{entry['name']}")
        data = np.frombuffer(raw[offset:offset + nbytes], dtype="<f8").reshape(shape)
        tensors[entry["name"]] = Tensor(data.copy(), requires_grad=True)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"corrupt checkpoint {path}: trailing bytes")
    params = DenoiserParams(arch=header["arch"], x_dim=header["x_dim"],
                            cond_in_dim=header["cond_in_dim"], tensors=tensors)
    return Checkpoint(params=params, geometry=header["geometry"],
                      schedule=header["schedule"], epoch=header["epoch"],
                      meta=header.get("meta", {}))


def ensure_geometry(ckpt: Checkpoint, geom: SystemGeometry):
    got = ckpt.geometry
    want = {"n": geom.n_bs_antennas, "m1": geom.m1_elements,
            "m2": geom.m2_elements, "spacing": geom.element_spacing}
    if (got["n"], got["m1"], got["m2"]) != (want["n"], want["m1"], want["m2"]):
        raise GeometryError(
            f"checkpoint geometry (N={got['n']}, M1={got['m1']}, M2={got['m2']}) "
            f"does not match requested (N={want['n']}, M1={want['m1']}, "
            f"M2={want['m2']})"
        )
