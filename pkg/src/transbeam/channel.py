"""Gaussian MU-MISO channel sampling and batch files.

Random stream: sample ``index`` of stream ``seed`` is drawn from numpy's
``Generator(Philox(key=seed + 2**64 * index))``. Each sample consumes
``2*N*K`` standard normals: the first ``N*K`` are the real parts and the
next ``N*K`` the imaginary parts, both in row-major (user, antenna) order,
scaled by ``sqrt(sigma_H2 / (2*N*K))``.
"""
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyBatchError, ParseError

NORMALIZATIONS = ("std", "variance")


@dataclass(frozen=True)
class SystemConfig:
    K: int
    N: int
    P: float = 1.0
    sigma_H2: float = 1.0
    sigma2: float = 1.0
    normalization: str = "std"

    def __post_init__(self):
        if self.K < 1 or self.N < 1:
            raise ConfigError("K and N must be at least 1", "K/N")
        for name in ("P", "sigma_H2", "sigma2"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError("must be positive and finite", name)
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"must be one of {NORMALIZATIONS}", "normalization")

    @classmethod
    def from_snr(cls, K, N, snr_db, P=1.0, sigma_H2=1.0, normalization="std"):
        sigma2 = sigma_H2 * P / 10.0 ** (snr_db / 10.0)
        return cls(K, N, P, sigma_H2, sigma2, normalization)

    @property
    def snr_db(self):
        return 10.0 * math.log10(self.sigma_H2 * self.P / self.sigma2)

    @property
    def norm_constant(self):
        """Divisor turning raw channels into unit-noise channels."""
        return math.sqrt(self.sigma2) if self.normalization == "std" else self.sigma2

    @property
    def noise(self):
        """Noise variance seen by the normalized channel (1 under "std")."""
        return self.sigma2 / self.norm_constant**2

    def normalize(self, h_raw):
        return h_raw / self.norm_constant


@dataclass
class ChannelSample:
    h_raw: np.ndarray
    h_norm: np.ndarray
    seed: int
    index: int = 0


@dataclass
class Batch:
    """``n`` channel draws stacked as arrays of shape (n, K, N)."""

    cfg: SystemConfig
    h_raw: np.ndarray
    seeds: np.ndarray
    indices: np.ndarray
    h_norm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.h_raw = np.asarray(self.h_raw, dtype=np.complex128)
        self.h_norm = self.cfg.normalize(self.h_raw)
        self.seeds = np.asarray(self.seeds, dtype=np.uint64)
        self.indices = np.asarray(self.indices, dtype=np.uint64)

    @property
    def size(self):
        return self.h_raw.shape[0]

    def __len__(self):
        return self.size

    def __getitem__(self, i):
        return ChannelSample(self.h_raw[i], self.h_norm[i], int(self.seeds[i]),
                             int(self.indices[i]))

    def __iter__(self):
        return (self[i] for i in range(self.size))


def _generator(seed, index):
    key = (int(seed) % 2**64) + (int(index) % 2**64) * 2**64
    return np.random.Generator(np.random.Philox(key=key))


def _draw(cfg, seed, index):
    nk = cfg.N * cfg.K
    z = _generator(seed, index).standard_normal(2 * nk)
    s = math.sqrt(cfg.sigma_H2 / (2.0 * nk))
    return (s * (z[:nk] + 1j * z[nk:])).reshape(cfg.K, cfg.N)


def sample_channel(cfg, seed, index=0):
    h = _draw(cfg, seed, index)
    return ChannelSample(h, cfg.normalize(h), int(seed), int(index))


def make_batch(cfg, seed, n, start=0):
    """Samples ``start .. start+n-1`` of stream ``seed``."""
    if n < 1:
        raise ValueError("batch size must be at least 1")
    idx = np.arange(start, start + n, dtype=np.uint64)
    h = np.stack([_draw(cfg, seed, i) for i in idx])
    return Batch(cfg, h, np.full(n, seed, dtype=np.uint64), idx)


# ---------------------------------------------------------------------------
# Batch files
#
#   magic   8 bytes  b"TBBATCH\x01"
#   hlen    uint64   little-endian length of the JSON header
#   header  hlen     UTF-8 JSON: K, N, sigma2, sigma_H2, P, seed, count,
#                    normalization, seeds (list), indices (list)
#   payload          count*K*N complex entries of h_raw as interleaved
#                    (real, imag) little-endian float64, row-major
# ---------------------------------------------------------------------------

BATCH_MAGIC = b"TBBATCH\x01"
_HLEN = struct.Struct("<Q")


def save_batch(path, batch):
    cfg = batch.cfg
    header = {
        "K": cfg.K, "N": cfg.N, "sigma2": cfg.sigma2, "sigma_H2": cfg.sigma_H2,
        "P": cfg.P, "normalization": cfg.normalization, "count": batch.size,
        "seed": int(batch.seeds[0]) if batch.size else None,
        "seeds": [int(s) for s in batch.seeds],
        "indices": [int(i) for i in batch.indices],
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(batch.h_raw).view(np.float64).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(BATCH_MAGIC)
        fh.write(_HLEN.pack(len(hb)))
        fh.write(hb)
        fh.write(payload.tobytes())


def load_batch(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob:
        raise EmptyBatchError("batch file is empty", 0)
    if blob[:8] != BATCH_MAGIC:
        raise ParseError("bad batch magic", 0)
    if len(blob) < 16:
        raise ParseError("truncated header length", len(blob))
    (hlen,) = _HLEN.unpack_from(blob, 8)
    if len(blob) < 16 + hlen:
        raise ParseError("truncated header", len(blob))
    try:
        header = json.loads(blob[16: 16 + hlen].decode("utf-8"))
        cfg = SystemConfig(header["K"], header["N"], header["P"], header["sigma_H2"],
                           header["sigma2"], header["normalization"])
        count = int(header["count"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"malformed batch header: {exc}", 16)
    if count == 0:
        raise EmptyBatchError("batch file holds no samples", 16 + hlen)
    need = count * cfg.K * cfg.N * 16
    have = len(blob) - 16 - hlen
    if have != need:
        raise ParseError(f"payload is {have} bytes, expected {need}",
                         16 + hlen + min(have, need))
    h = np.frombuffer(blob, dtype="<f8", offset=16 + hlen).astype(np.float64)
    h = h.view(np.complex128).reshape(count, cfg.K, cfg.N)
    return Batch(cfg, h, header["seeds"], header["indices"])
