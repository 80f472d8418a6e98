"""Snapshots, observation records, run manifests and the flat config format.

Binary layouts (all little-endian):

Snapshot::

    "NSE3" | u32 version | u32 n | f64 L | f64 time
    3 x (n, n, n) complex128, full Fourier coefficients in numpy FFT index order

Observation record::

    "NSOB" | u32 version | u32 header length | JSON header (utf-8)
    repeated blocks: f64 time | (3, n, n, n//2+1) complex128 rfft coefficients
"""
from __future__ import annotations

import ast
import datetime as _dt
import hashlib
import json
import math
import operator
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from nudge3d.errors import (
    ConfigurationError,
    EndOfObservations,
    RecordFormatError,
    RecordWriteError,
)
from nudge3d.interpolants import InterpolantSpec, make_operator
from nudge3d.spectral import GridSpec, SpectralField, _norm_sq

SNAPSHOT_MAGIC = b"NSE3"
SNAPSHOT_VERSION = 1
_SNAP_HEADER = struct.Struct("<4sIIdd")

RECORD_MAGIC = b"NSOB"
RECORD_VERSION = 1
_REC_PREFIX = struct.Struct("<4sII")
_TIME = struct.Struct("<d")
_CDTYPE = np.dtype("<c16")


# snapshots

def _full_from_half(grid, half):
    n = grid.n
    full = np.empty((3, n, n, n), np.complex128)
    nz = n // 2 + 1
    full[..., :nz] = half
    neg = (-np.arange(n)) % n
    kz = np.arange(nz, n)
    full[..., nz:] = np.conj(half[:, neg][:, :, neg][..., n - kz])
    return full


def write_snapshot(path, v, time=0.0):
    g = v.grid
    with open(path, "wb") as fh:
        fh.write(_SNAP_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, g.n, g.L, float(time)))
        fh.write(_full_from_half(g, v.coeffs).astype(_CDTYPE).tobytes())


def read_snapshot(path, dealias="two-thirds"):
    """Return (SpectralField, time)."""
    with open(path, "rb") as fh:
        head = fh.read(_SNAP_HEADER.size)
        if len(head) != _SNAP_HEADER.size:
            raise RecordFormatError(f"{path}: truncated snapshot header")
        magic, version, n, L, time = _SNAP_HEADER.unpack(head)
        if magic != SNAPSHOT_MAGIC:
            raise RecordFormatError(f"{path}: bad magic {magic!r}")
        if version != SNAPSHOT_VERSION:
            raise RecordFormatError(f"{path}: unsupported snapshot version {version}")
        payload = fh.read()
    if len(payload) != 3 * n**3 * 16:
        raise RecordFormatError(f"{path}: payload size {len(payload)} does not match n={n}")
    grid = GridSpec(n, L, dealias)
    full = np.frombuffer(payload, _CDTYPE).reshape(3, n, n, n)
    half = np.ascontiguousarray(full[..., : n // 2 + 1], dtype=np.complex128)
    return SpectralField(grid, half, copy=False), time


# observation records

def _check_block(spec, grid, block, time):
    op = make_operator(spec, grid)
    scale = float(np.abs(block).max())
    if not np.isfinite(scale):
        raise RecordFormatError(f"non-finite observation at t={time}")
    if spec.kind == "modal":
        if np.any(block[:, op.mask == 0] != 0):
            raise RecordFormatError(f"block at t={time} has coefficients outside the observed shells")
        return
    if scale == 0:
        return
    rebuilt = op.from_cell_means(op.cell_means_from(block))
    if float(np.abs(rebuilt - block).max()) > 1e-9 * scale:
        raise RecordFormatError(f"block at t={time} is not in the range of the {spec.kind} interpolant")


class ObservationRecord:
    """Time-stamped interpolant outputs, in memory or backed by a file."""

    def __init__(self, spec, grid, dt_obs, times, blocks, run_hash="", path=None):
        self.spec = spec
        self.grid = grid
        self.dt_obs = float(dt_obs)
        self.times = np.asarray(times, dtype=float)
        self._blocks = blocks
        self.run_hash = run_hash
        self.path = path
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise RecordFormatError("observation times must be strictly increasing")

    def __len__(self):
        return int(self.times.size)

    def block(self, i):
        return np.ascontiguousarray(self._blocks[i], dtype=np.complex128)

    def items(self):
        for i, t in enumerate(self.times):
            yield float(t), self.block(i)

    def field(self, i):
        return SpectralField(self.grid, self.block(i), copy=False)

    def h1_norms(self):
        return np.array([math.sqrt(_norm_sq(self.grid, b, 1)) for _, b in self.items()])

    def header(self):
        return {
            "interpolant": self.spec.to_dict(),
            "dt_obs": self.dt_obs,
            "grid": {"n": self.grid.n, "L": self.grid.L, "dealias": self.grid.dealias},
            "run_hash": self.run_hash,
            "layout": "rfft (3, n, n, n//2+1) complex128",
        }

    def validate(self):
        for t, b in self.items():
            _check_block(self.spec, self.grid, b, t)

    def save(self, path):
        rec = ObservationRecorder(path, self.spec, self.grid, self.dt_obs, self.run_hash)
        for t, b in self.items():
            rec.append(t, b)
        return rec.close()

    @classmethod
    def load(cls, path, validate=True):
        try:
            size = os.path.getsize(path)
            with open(path, "rb") as fh:
                prefix = fh.read(_REC_PREFIX.size)
                if len(prefix) != _REC_PREFIX.size:
                    raise RecordFormatError(f"{path}: truncated record header")
                magic, version, hlen = _REC_PREFIX.unpack(prefix)
                if magic != RECORD_MAGIC:
                    raise RecordFormatError(f"{path}: bad magic {magic!r}")
                if version != RECORD_VERSION:
                    raise RecordFormatError(f"{path}: unsupported record version {version}")
                header = json.loads(fh.read(hlen).decode("utf-8"))
        except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise RecordFormatError(f"{path}: {exc}") from exc
        gd = header["grid"]
        grid = GridSpec(int(gd["n"]), float(gd["L"]), gd.get("dealias", "two-thirds"))
        spec = InterpolantSpec.from_dict(header["interpolant"])
        dtype = np.dtype([("t", "<f8"), ("c", _CDTYPE, grid.spectral_shape)])
        start = _REC_PREFIX.size + hlen
        count, rem = divmod(size - start, dtype.itemsize)
        if rem:
            raise RecordFormatError(f"{path}: trailing partial block ({rem} bytes)")
        if count:
            mm = np.memmap(path, dtype=dtype, mode="r", offset=start, shape=(count,))
            times, blocks = np.array(mm["t"]), mm["c"]
        else:
            times, blocks = np.empty(0), []
        rec = cls(spec, grid, header["dt_obs"], times, blocks, header.get("run_hash", ""), path)
        if validate:
            rec.validate()
        return rec


class ObservationRecorder:
    """Append-only writer; each block is flushed as soon as it is appended.

    With ``path=None`` blocks are kept in memory and ``close`` returns an
    in-memory record.
    """

    def __init__(self, path, spec, grid, dt_obs, run_hash=""):
        self.path = path
        self.spec = spec
        self.grid = grid
        self.dt_obs = float(dt_obs)
        self.run_hash = run_hash
        self.times = []
        self.blocks = []
        self.last_committed = None
        self._fh = None
        if path is not None:
            header = ObservationRecord(spec, grid, dt_obs, [], [], run_hash).header()
            raw = json.dumps(header, sort_keys=True).encode("utf-8")
            try:
                self._fh = open(path, "wb")
                self._fh.write(_REC_PREFIX.pack(RECORD_MAGIC, RECORD_VERSION, len(raw)) + raw)
                self._fh.flush()
            except OSError as exc:
                raise RecordWriteError(None, exc) from exc

    def append(self, t, coeffs):
        t = float(t)
        if self.last_committed is not None and t <= self.last_committed:
            raise RecordFormatError("observation times must be strictly increasing")
        arr = np.ascontiguousarray(coeffs, dtype=np.complex128)
        if arr.shape != self.grid.spectral_shape:
            raise RecordFormatError(f"block shape {arr.shape} does not match the grid")
        if self._fh is not None:
            try:
                self._fh.write(_TIME.pack(t) + arr.astype(_CDTYPE, copy=False).tobytes())
                self._fh.flush()
            except OSError as exc:
                raise RecordWriteError(self.last_committed, exc) from exc
        else:
            self.blocks.append(arr.copy())
        self.times.append(t)
        self.last_committed = t

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None
            return ObservationRecord.load(self.path, validate=False)
        return ObservationRecord(self.spec, self.grid, self.dt_obs, self.times, self.blocks,
                                 self.run_hash)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def record_observations(u0, cfg, spec, dt_obs, path=None, run_hash="", n_steps=None):
    """Run the reference system from ``u0`` and record I_h u every ``dt_obs``.

    Returns (record, RunResult).
    """
    from nudge3d.dynamics import integrate

    ratio = dt_obs / cfg.dt
    every = int(round(ratio))
    if every < 1 or abs(ratio - every) > 1e-9 * max(1.0, ratio):
        raise ConfigurationError(f"dt_obs={dt_obs:g} must be a multiple of dt={cfg.dt:g}")
    rec = ObservationRecorder(path, spec, cfg.grid, dt_obs, run_hash)
    try:
        result = integrate(u0, cfg, recorder=rec, record_every=every,
                           emit_every=max(every, 1), n_steps=n_steps)
    finally:
        record = rec.close()
    return record, result


class ReplaySource:
    """Observation source reading a record.

    ``hold="linear"`` interpolates linearly between samples (the stored blocks
    are returned untouched at sample times); ``hold="zoh"`` holds the last
    sample over each step. Requests past the record raise EndOfObservations.
    """

    def __init__(self, record, hold="linear"):
        if hold not in ("linear", "zoh"):
            raise ConfigurationError("hold must be 'linear' or 'zoh'")
        self.record = record
        self.hold = hold
        self._cache = {}

    def _block(self, i):
        b = self._cache.get(i)
        if b is None:
            if len(self._cache) > 4:
                self._cache.clear()
            b = self.record.block(i)
            self._cache[i] = b
        return b

    def at(self, t):
        times = self.record.times
        if times.size == 0:
            raise EndOfObservations(t)
        tol = 1e-9 * max(self.record.dt_obs, 1e-300) + 1e-12 * abs(t)
        if t < times[0] - tol or t > times[-1] + tol:
            raise EndOfObservations(t)
        i = int(np.searchsorted(times, t - tol))
        if i < times.size and abs(times[i] - t) <= tol:
            return self._block(i)
        if self.hold == "zoh":
            return self._block(i - 1)
        t0, t1 = times[i - 1], times[i]
        theta = (t - t0) / (t1 - t0)
        return (1 - theta) * self._block(i - 1) + theta * self._block(i)

    def window(self, t, dt):
        o0 = self.at(t)
        o1 = self.at(t + dt)
        if self.hold == "zoh":
            return o0, o0
        return o0, o1


def replay_observations(record, hold="linear"):
    return ReplaySource(record, hold)


# flat config format

def coerce_value(text):
    """Typed value of one config entry: bool, int, float or inf, else the string."""
    s = text.strip()
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def parse_config(text):
    """Parse ``key = value`` lines with dotted keys; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, val = (x.strip() for x in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        out[key] = coerce_value(val)
    return out


def load_config(path):
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc


def dump_config(cfg):
    lines = []
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, float):
            val = "inf" if math.isinf(val) else repr(val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}


def parse_length(expr, L=None, **names):
    """Evaluate expressions such as ``L/8``, ``2*pi``, ``0.25`` or ``pi*L/16``.

    Extra keyword arguments add named constants (``lambda1=...``).
    """
    if isinstance(expr, (int, float)):
        return float(expr)
    names = {k: float(v) for k, v in names.items()}
    names["pi"] = math.pi
    names["inf"] = math.inf
    if L is not None:
        names["L"] = float(L)

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in names:
            return names[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        raise ConfigurationError(f"cannot evaluate length expression {expr!r}")

    try:
        tree = ast.parse(str(expr).strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"bad length expression {expr!r}") from exc
    try:
        return float(ev(tree))
    except ZeroDivisionError as exc:
        raise ConfigurationError(f"division by zero in {expr!r}") from exc


def config_hash(cfg):
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()[:16]


# manifests

def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    config: dict
    code_version: str = ""
    seed: int | None = None
    started: str = field(default_factory=_now)
    finished: str | None = None
    outputs: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)
    interpolant: dict | None = None
    schedule: list | None = None
    kernel_backend: str = ""

    def finish(self):
        self.finished = _now()

    def to_json(self):
        cfg = {k: ("inf" if isinstance(v, float) and math.isinf(v) else v)
               for k, v in self.config.items()}
        d = {
            "format": "nudge3d-manifest/1",
            "config": cfg,
            "config_hash": config_hash(self.config),
            "code_version": self.code_version,
            "seed": self.seed,
            "started": self.started,
            "finished": self.finished,
            "outputs": list(self.outputs),
            "verdicts": self.verdicts,
            "interpolant": self.interpolant,
            "schedule": self.schedule,
            "kernel_backend": self.kernel_backend,
        }
        return json.dumps(d, indent=2, sort_keys=True, default=_json_default)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if d.get("format") != "nudge3d-manifest/1":
            raise RecordFormatError("not a nudge3d run manifest")
        cfg = {k: (math.inf if v == "inf" else v) for k, v in d["config"].items()}
        return cls(cfg, d.get("code_version", ""), d.get("seed"), d.get("started"),
                   d.get("finished"), d.get("outputs", []), d.get("verdicts", {}),
                   d.get("interpolant"), d.get("schedule"), d.get("kernel_backend", ""))

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj):
    """JSON with numpy scalars/arrays and report objects converted; inf becomes a string."""

    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, np.ndarray):
            return clean(x.tolist())
        if isinstance(x, np.generic):
            return clean(x.item())
        if hasattr(x, "to_dict"):
            return clean(x.to_dict())
        return x

    return json.dumps(clean(obj), indent=2, sort_keys=True)
