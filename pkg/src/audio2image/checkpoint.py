"""Single-file binary checkpoints with bit-exact round-trips.

Layout, all little-endian:

    magic   8 bytes  b"A2ICKPT1"
    version u32
    meta    u64 byte length, then canonical JSON (sorted keys, no spaces)
    count   u32 number of arrays
    arrays  repeated, sorted by name:
        name    u32 byte length, then UTF-8 name
        dtype   u8 code (0 f32, 1 f64, 2 i64, 3 i32, 4 u8)
        ndim    u32
        shape   ndim x u64
        data    u64 byte length, then raw row-major values

Canonical JSON plus name-sorted arrays make save -> load -> save reproduce
the file byte for byte.
"""

import hashlib
import json
import struct

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"A2ICKPT1"
FORMAT_VERSION = 1

DTYPE_CODES = {"<f4": 0, "<f8": 1, "<i8": 2, "<i4": 3, "|u1": 4}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_U8 = struct.Struct("<B")


def _canonical_json(metadata) -> bytes:
    return json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_arrays(path, metadata, arrays) -> None:
    """Write metadata plus named numpy arrays in the checkpoint layout."""
    blobs = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            # ascontiguousarray would flatten 0-dim scalars to shape (1,)
            arr = np.ascontiguousarray(arr)
        key = arr.dtype.str if arr.dtype.str in DTYPE_CODES else None
        if key is None:
            # normalize byte order; reject dtypes outside the table
            for candidate in DTYPE_CODES:
                if arr.dtype == np.dtype(candidate):
                    arr = arr.astype(candidate)
                    key = candidate
                    break
        if key is None:
            raise CheckpointError(f"array {name!r} has unsupported dtype {arr.dtype}")
        record = [
            _U32.pack(len(name.encode("utf-8"))),
            name.encode("utf-8"),
            _U8.pack(DTYPE_CODES[key]),
            _U32.pack(arr.ndim),
        ]
        record.extend(_U64.pack(d) for d in arr.shape)
        payload = arr.tobytes()
        record.append(_U64.pack(len(payload)))
        record.append(payload)
        blobs.append(b"".join(record))

    meta = _canonical_json(metadata)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_U32.pack(FORMAT_VERSION))
        fh.write(_U64.pack(len(meta)))
        fh.write(meta)
        fh.write(_U32.pack(len(blobs)))
        for blob in blobs:
            fh.write(blob)


class _Reader:
    def __init__(self, path, data):
        self.path = path
        self.data = data
        self.pos = 0

    def take(self, n, section):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated in section {section!r}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, section):
        return _U32.unpack(self.take(4, section))[0]

    def u64(self, section):
        return _U64.unpack(self.take(8, section))[0]

    def u8(self, section):
        return _U8.unpack(self.take(1, section))[0]


def load_arrays(path):
    """Read a checkpoint; returns (metadata dict, {name: array})."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(path, data)
    if r.take(len(MAGIC), "header") != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version = r.u32("header")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} not supported (expected {FORMAT_VERSION})"
        )
    meta_len = r.u64("metadata")
    try:
        metadata = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata section ({exc})")
    count = r.u32("array table")
    arrays = {}
    for _ in range(count):
        name_len = r.u32("array table")
        name = r.take(name_len, "array table").decode("utf-8")
        section = f"array {name!r}"
        code = r.u8(section)
        if code not in CODE_DTYPES:
            raise CheckpointError(f"{path}: {section} has unknown dtype code {code}")
        ndim = r.u32(section)
        shape = tuple(r.u64(section) for _ in range(ndim))
        nbytes = r.u64(section)
        dtype = np.dtype(CODE_DTYPES[code])
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        if nbytes != expected:
            raise CheckpointError(
                f"{path}: {section} declares {nbytes} bytes but shape {shape} "
                f"needs {expected}"
            )
        payload = r.take(nbytes, section)
        arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} trailing bytes after arrays")
    return metadata, arrays


# -- torch bridges -------------------------------------------------------------


def module_arrays(prefix, module) -> dict:
    """Flatten a module's state dict into checkpoint arrays."""
    out = {}
    for name, tensor in module.state_dict().items():
        out[f"{prefix}/{name}"] = tensor.detach().cpu().numpy()
    return out


def load_module_arrays(module, arrays, prefix) -> None:
    """Restore a module from checkpoint arrays; strict about the key set."""
    state = module.state_dict()
    wanted = {f"{prefix}/{name}": name for name in state}
    missing = sorted(set(wanted) - set(arrays))
    if missing:
        raise CheckpointError(f"checkpoint lacks arrays for {prefix}: {missing[:4]}")
    new_state = {}
    for key, name in wanted.items():
        arr = arrays[key]
        expect = tuple(state[name].shape)
        if tuple(arr.shape) != expect:
            raise CheckpointError(
                f"array {key!r} has shape {tuple(arr.shape)}, module expects {expect}"
            )
        new_state[name] = torch.from_numpy(np.array(arr))
    module.load_state_dict(new_state)


def optimizer_arrays(prefix, optimizer, param_names) -> dict:
    """Flatten Adam moments keyed by parameter name rather than position."""
    params = [p for group in optimizer.param_groups for p in group["params"]]
    if len(params) != len(param_names):
        raise CheckpointError(
            f"{prefix}: {len(param_names)} names for {len(params)} optimizer params"
        )
    out = {}
    for param, name in zip(params, param_names):
        state = optimizer.state.get(param)
        if not state:
            continue  # param not yet updated
        for key in ("step", "exp_avg", "exp_avg_sq"):
            value = state[key]
            if isinstance(value, torch.Tensor):
                out[f"{prefix}/{name}/{key}"] = value.detach().cpu().numpy()
            else:
                out[f"{prefix}/{name}/{key}"] = np.asarray(value, dtype=np.float64)
    return out


def load_optimizer_arrays(optimizer, param_names, arrays, prefix) -> None:
    """Rebuild Adam moments saved by ``optimizer_arrays``."""
    params = [p for group in optimizer.param_groups for p in group["params"]]
    if len(params) != len(param_names):
        raise CheckpointError(
            f"{prefix}: {len(param_names)} names for {len(params)} optimizer params"
        )
    for param, name in zip(params, param_names):
        step_key = f"{prefix}/{name}/step"
        if step_key not in arrays:
            continue
        state = {}
        for key in ("step", "exp_avg", "exp_avg_sq"):
            full = f"{prefix}/{name}/{key}"
            if full not in arrays:
                raise CheckpointError(f"checkpoint lacks optimizer array {full!r}")
            state[key] = torch.from_numpy(np.array(arrays[full]))
        expect = tuple(param.shape)
        if tuple(state["exp_avg"].shape) != expect:
            raise CheckpointError(
                f"optimizer array {prefix}/{name} has shape "
                f"{tuple(state['exp_avg'].shape)}, parameter expects {expect}"
            )
        optimizer.state[param] = state


def weights_hash(module) -> str:
    """SHA-256 over the module's state dict, stable across processes."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(tensor.detach().cpu().numpy()).tobytes())
    return digest.hexdigest()
