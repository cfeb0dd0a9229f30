"""Binary policy checkpoints.

Layout (little-endian)::

    magic  b"MACOPT-POLICY\\n"
    u32 version, u32 obs_dim, u32 act_dim, u32 hidden, u64 adam_step, u32 n_arrays
    n_arrays x { u16 name_len, name (utf-8), u8 ndim, ndim x u32 dims, float64 data (row-major) }

Arrays are parameters, both Adam moments and the observation/return
normalization statistics; every float is stored verbatim so a round trip is
bit-exact.
"""

import struct

import numpy as np

from ..errors import CorruptionError, ParseError
from .ppo import PolicyState, RunningNorm, param_names

MAGIC = b"MACOPT-POLICY\n"
VERSION = 1
_HEAD = struct.Struct("<IIIIQI")


def _arrays(policy):
    out = []
    for k in param_names():
        out.append((k, policy.params[k]))
    for k in param_names():
        out.append(("adam_m/" + k, policy.adam_m[k]))
    for k in param_names():
        out.append(("adam_v/" + k, policy.adam_v[k]))
    for tag, norm in (("obs_norm", policy.obs_norm), ("ret_norm", policy.ret_norm)):
        out.append((tag + "/count", np.array(norm.count)))
        out.append((tag + "/mean", norm.mean))
        out.append((tag + "/var", norm.var))
    return out


def dumps(policy):
    arrays = _arrays(policy)
    chunks = [MAGIC, _HEAD.pack(VERSION, policy.obs_dim, policy.act_dim, policy.hidden, policy.adam_t, len(arrays))]
    for name, a in arrays:
        a = np.asarray(a, dtype="<f8", order="C")
        raw = name.encode()
        chunks.append(struct.pack("<HB", len(raw), a.ndim))
        chunks.append(raw)
        chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(a.tobytes())
    return b"".join(chunks)


def loads(data):
    if not data.startswith(MAGIC):
        raise ParseError("not a policy checkpoint (bad magic)")
    pos = len(MAGIC)

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise ParseError(f"truncated checkpoint while reading {what}")
        out = data[pos : pos + n]
        pos += n
        return out

    version, obs_dim, act_dim, hidden, adam_t, count = _HEAD.unpack(take(_HEAD.size, "header"))
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    arrays = {}
    for i in range(count):
        name_len, ndim = struct.unpack("<HB", take(3, f"array {i} header"))
        name = take(name_len, f"array {i} name").decode()
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, f"{name} shape"))
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(take(8 * size, name), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(data):
        raise ParseError("trailing bytes after last array")

    try:
        params = {k: arrays[k] for k in param_names()}
        m = {k: arrays["adam_m/" + k] for k in param_names()}
        v = {k: arrays["adam_v/" + k] for k in param_names()}
        norms = []
        for tag in ("obs_norm", "ret_norm"):
            mean = arrays[tag + "/mean"]
            norms.append(RunningNorm(mean.size, float(arrays[tag + "/count"]), mean, arrays[tag + "/var"]))
    except KeyError as err:
        raise ParseError(f"checkpoint is missing array {err}") from None
    for k, a in params.items():
        if not np.all(np.isfinite(a)):
            raise CorruptionError(f"checkpoint parameter {k} is non-finite")
    return PolicyState(params, m, v, int(adam_t), norms[0], norms[1], obs_dim, act_dim, hidden)


def save_policy(policy, path):
    with open(path, "wb") as fh:
        fh.write(dumps(policy))


def load_policy(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
