"""Binary dataset format and CSV export.

Layout (little-endian)::

    magic        6s   b"SABRDS"
    version      u16
    meta_len     u32, then meta_len bytes of UTF-8 JSON (tool version, config hash)
    hyper        u32 m, u32 n, 10 x f64 (alpha0/nu/rho/eta ranges, t_last, dt), u8 flags
    role         u8
    antithetic   u8
    seed         u64
    n_paths      u64
    dt           f64
    count        u64
    surfaces     count x record
    end          4s   b"SEND", u32 CRC-32 of every preceding byte

Each surface record is ``u64 id``, ``4 x f64 (alpha0, nu, rho, eta_f)``, the
``m`` maturities, then ``m x n`` strikes, vols and noise scales as f64, and
the exclusion mask as a packed bitset. Excluded vols are stored as NaN.
"""

import json
import math
import struct
import zlib

import numpy as np

from . import __version__
from .exceptions import FormatError, VersionError
from .model import SabrParams
from .surfaces import NU_MODES, ROLE_NAMES, ROLES, Dataset, GenHyper, IvSurface, SurfaceSpec

MAGIC = b"SABRDS"
VERSION = 1
END = b"SEND"

CSV_COLUMNS = ("surface_id", "k1", "k2", "T", "K", "alpha0", "nu", "rho", "iv", "noise", "excluded")

_HYPER = struct.Struct("<II10dB")
_TAIL = struct.Struct("<BBQQdQ")
_SURF = struct.Struct("<Q4d")


def _flags(h):
    return (int(h.literal_k_formula) | (int(h.literal_dk) << 1)
            | (NU_MODES.index(h.nu_mode) << 2))


def dataset_bytes(ds):
    h = ds.hyper
    m, n = h.m, h.n
    meta = dict(ds.meta)
    meta.setdefault("tool_version", __version__)
    mb = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(mb)), mb,
             _HYPER.pack(m, n, h.alpha0_min, h.alpha0_max, h.nu_min, h.nu_max, h.rho_min,
                         h.rho_max, h.t_last, h.eta_min, h.eta_max, h.dt, _flags(h)),
             _TAIL.pack(ROLES[ds.role], int(ds.antithetic), ds.seed, ds.n_paths, ds.dt,
                        len(ds.surfaces))]
    for s in sorted(ds.surfaces, key=lambda s: s.spec.surface_id):
        p = s.spec.params
        if s.iv.shape != (m, n):
            raise FormatError(f"surface {s.spec.surface_id} has shape {s.iv.shape}, expected {(m, n)}")
        parts.append(_SURF.pack(s.spec.surface_id, p.alpha0, p.nu, p.rho, s.spec.eta_f))
        for arr in (s.spec.maturities, s.spec.strikes, s.iv, s.noise):
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        parts.append(np.packbits(s.mask.ravel().astype(np.uint8)).tobytes())
    body = b"".join(parts)
    return body + END + struct.pack("<I", zlib.crc32(body))


def write_dataset(ds, path):
    data = dataset_bytes(ds)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.off = 0

    def take(self, nbytes, what):
        if self.off + nbytes > len(self.data):
            raise FormatError(f"truncated while reading {what}", offset=self.off)
        out = self.data[self.off:self.off + nbytes]
        self.off += nbytes
        return out

    def unpack(self, st, what):
        return st.unpack(self.take(st.size, what))

    def array(self, count, what):
        return np.frombuffer(self.take(8 * count, what), dtype="<f8").astype(float)


def parse_dataset(data):
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("bad magic; not a dataset file", offset=0)
    version, mlen = r.unpack(struct.Struct("<HI"), "version")
    if version != VERSION:
        raise VersionError(f"dataset format version {version}, this reader handles {VERSION}")
    try:
        meta = json.loads(r.take(mlen, "metadata"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("corrupt metadata block", offset=r.off) from None
    hoff = r.off
    m, n, *vals, flags = r.unpack(_HYPER, "hyperparameters")
    try:
        hyper = GenHyper(m, n, *vals, literal_k_formula=bool(flags & 1),
                         literal_dk=bool(flags & 2), nu_mode=NU_MODES[(flags >> 2) & 1])
    except Exception as exc:
        raise FormatError(f"corrupt hyperparameter block: {exc}", offset=hoff) from None
    toff = r.off
    role_code, anti, seed, n_paths, dt, count = r.unpack(_TAIL, "header")
    if role_code not in ROLE_NAMES:
        raise FormatError(f"unknown role code {role_code}", offset=toff)
    mask_bytes = math.ceil(m * n / 8)
    surfaces = []
    for _ in range(count):
        sid, a0, nu, rho, eta = r.unpack(_SURF, "surface record")
        T = r.array(m, "maturities")
        K = r.array(m * n, "strikes").reshape(m, n)
        iv = r.array(m * n, "vols").reshape(m, n)
        noise = r.array(m * n, "noise").reshape(m, n)
        bits = np.frombuffer(r.take(mask_bytes, "mask"), dtype=np.uint8)
        mask = np.unpackbits(bits)[:m * n].astype(bool).reshape(m, n)
        spec = SurfaceSpec(SabrParams(a0, nu, rho), T, K, eta, int(sid), hyper.nu_mode)
        surfaces.append(IvSurface(spec, iv, noise, mask, int(n_paths)))
    end_off = r.off
    if r.take(len(END), "end marker") != END:
        raise FormatError("missing end marker", offset=end_off)
    (crc,) = r.unpack(struct.Struct("<I"), "checksum")
    if crc != zlib.crc32(data[:end_off]):
        raise FormatError("checksum mismatch", offset=end_off)
    if r.off != len(data):
        raise FormatError("trailing bytes after end marker", offset=r.off)
    return Dataset(surfaces, hyper, int(n_paths), dt, int(seed), ROLE_NAMES[role_code], bool(anti), meta)


def read_dataset(path):
    with open(path, "rb") as fh:
        return parse_dataset(fh.read())


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def export_csv(ds, path, header=None):
    """One row per grid point; excluded vols and noise are left empty."""
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for s in sorted(ds.surfaces, key=lambda s: s.spec.surface_id):
            p = s.spec.params
            m, n = s.iv.shape
            for k1 in range(m):
                for k2 in range(n):
                    ex = bool(s.mask[k1, k2])
                    fh.write(",".join((
                        str(s.spec.surface_id), str(k1), str(k2),
                        repr(float(s.spec.maturities[k1])), repr(float(s.spec.strikes[k1, k2])),
                        repr(p.alpha0), repr(p.nu), repr(p.rho),
                        "" if ex else _fmt(s.iv[k1, k2]), "" if ex else _fmt(s.noise[k1, k2]),
                        str(int(ex)))) + "\n")


def import_csv_grids(path):
    """Read an exported CSV back into ``{surface_id: (iv, noise, mask)}`` grids."""
    rows = {}
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    if not lines or tuple(lines[0].strip().split(",")) != CSV_COLUMNS:
        raise FormatError("unexpected CSV header", offset=0)
    for ln in lines[1:]:
        f = ln.rstrip("\n").split(",")
        rows.setdefault(int(f[0]), []).append(
            (int(f[1]), int(f[2]), float(f[8]) if f[8] else math.nan,
             float(f[9]) if f[9] else math.nan, f[10] == "1"))
    out = {}
    for sid, pts in rows.items():
        m = max(p[0] for p in pts) + 1
        n = max(p[1] for p in pts) + 1
        iv = np.full((m, n), np.nan)
        noise = np.full((m, n), np.nan)
        mask = np.zeros((m, n), dtype=bool)
        for k1, k2, v, b, ex in pts:
            iv[k1, k2], noise[k1, k2], mask[k1, k2] = v, b, ex
        out[sid] = (iv, noise, mask)
    return out
