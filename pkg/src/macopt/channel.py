"""Stochastic indoor channel realizations and the text trace format.

The generator is distance path loss ``d**-exponent`` times i.i.d. Rayleigh
(or Rician) fading per user, subcarrier and AP antenna. Each trial draws
from its own Philox stream keyed by ``mix64(seed, trial)``, so any subset of
trials can be regenerated, in any order or process, bit for bit.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParseError
from .scenario import require_valid

MAGIC = "MACOPT-CHAN v1"
_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x):
    """One round of the SplitMix64 finalizer on an unsigned 64-bit integer."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix64(seed, index):
    """Substream key for ``index`` under master ``seed``."""
    return splitmix64((seed ^ splitmix64(index & _MASK64)) & _MASK64)


def substream(seed, index):
    """Counter-based generator for one trial (or episode)."""
    return np.random.Generator(np.random.Philox(key=mix64(seed, index)))


@dataclass(eq=False)
class ChannelTrace:
    """Per-trial complex channel vectors.

    ``h`` has shape ``(trials, U, N, L)``; ``h[t, u, n]`` is the length-L
    vector from user ``u`` on subcarrier ``n`` in trial ``t``.
    """

    h: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.complex128)
        if self.h.ndim != 4:
            raise DomainError(f"trace array must be 4-D (trials, U, N, L), got {self.h.shape}")
        if not np.all(np.isfinite(self.h)):
            raise DomainError("trace contains non-finite values")

    @property
    def dims(self):
        """(U, L, N, trials)."""
        t, u, n, l = self.h.shape
        return (u, l, n, t)

    @property
    def trials(self):
        return self.h.shape[0]

    def trial(self, index):
        """Channel slice of one trial, shape (U, N, L)."""
        return self.h[index]

    def subset(self, indices):
        return ChannelTrace(self.h[list(indices)], dict(self.metadata))

    def __eq__(self, other):
        if not isinstance(other, ChannelTrace):
            return NotImplemented
        return self.h.shape == other.h.shape and bool(np.array_equal(self.h, other.h))


def generate(scenario, trials, fading="rayleigh", k_db=None):
    """Draw ``trials`` realizations for ``scenario``.

    Parameters
    ----------
    fading : {"rayleigh", "rician"}
        Rician fading needs ``k_db``; the LOS term is a unit-modulus
        half-wavelength array response with a random angle and phase per
        user and trial, held constant across subcarriers.
    """
    require_valid(scenario)
    if trials < 1:
        raise DomainError("trials must be >= 1")
    if fading not in ("rayleigh", "rician"):
        raise DomainError(f"unknown fading {fading!r}")
    if fading == "rician" and (k_db is None or not math.isfinite(k_db)):
        raise DomainError("rician fading needs a finite k_db")

    U, N, L = scenario.num_users, scenario.num_subcarriers, scenario.num_ap_antennas
    gain = scenario.distances ** (-scenario.pathloss_exponent)
    amp = np.sqrt(gain)[:, None, None]
    h = np.empty((trials, U, N, L), dtype=np.complex128)
    for t in range(trials):
        rng = substream(scenario.seed, t)
        z = rng.standard_normal((U, N, L, 2))
        scatter = (z[..., 0] + 1j * z[..., 1]) / math.sqrt(2.0)
        if fading == "rician":
            k = 10.0 ** (k_db / 10.0)
            angle = rng.uniform(-math.pi / 2, math.pi / 2, size=U)
            phase = rng.uniform(0.0, 2 * math.pi, size=U)
            ell = np.arange(L)
            los = np.exp(1j * (phase[:, None] + math.pi * np.sin(angle)[:, None] * ell[None, :]))
            scatter = math.sqrt(k / (k + 1)) * los[:, None, :] + math.sqrt(1 / (k + 1)) * scatter
        h[t] = amp * scatter
    meta = {
        "generator": fading if fading == "rayleigh" else f"rician(k_db={k_db!r})",
        "seed": scenario.seed,
        "pathloss_exponent": scenario.pathloss_exponent,
    }
    return ChannelTrace(h, meta)


def mean_receive_snr(trace, scenario):
    """Mean over trials, users, subcarriers and antennas of p_max |h|^2 / (N sigma^2).

    ``p_max`` is a user's total power spread evenly over the N subcarriers,
    so this is received power over the noise power of the whole band.
    """
    return scenario.max_power_mw * float(np.mean(np.abs(trace.h) ** 2)) / _band_noise(scenario)


def _band_noise(scenario):
    return scenario.noise_power_mw * scenario.num_subcarriers


def scale_to_snr(trace, scenario, target_snr_db):
    """Scale the whole trace by one real factor so its mean receive SNR hits the target.

    Relative gains between users, subcarriers and trials are preserved.
    """
    if not math.isfinite(target_snr_db):
        raise DomainError("target SNR must be finite")
    power = float(np.mean(np.abs(trace.h) ** 2))
    if power == 0.0:
        raise DomainError("cannot scale an all-zero trace")
    want = 10.0 ** (target_snr_db / 10.0) * _band_noise(scenario) / scenario.max_power_mw
    meta = dict(trace.metadata)
    meta["snr_db"] = target_snr_db
    return ChannelTrace(trace.h * math.sqrt(want / power), meta)


def scale_reference_snr(trace, scenario, snr_db_at_1m):
    """Scale so that a unit path gain (1 m) corresponds to ``snr_db_at_1m``.

    Unlike :func:`scale_to_snr` this keeps absolute distance effects, which
    the distance sweep needs.
    """
    factor = 10.0 ** (snr_db_at_1m / 10.0) * _band_noise(scenario) / scenario.max_power_mw
    meta = dict(trace.metadata)
    meta["snr_db_at_1m"] = snr_db_at_1m
    return ChannelTrace(trace.h * math.sqrt(factor), meta)


# -- text format --------------------------------------------------------------


def save_trace(trace, path):
    U, L, N, T = trace.dims
    with open(path, "w") as fh:
        fh.write(MAGIC + "\n")
        fh.write(f"U={U} L={L} N={N} trials={T}\n")
        for t in range(T):
            for u in range(U):
                for n in range(N):
                    vec = trace.h[t, u, n]
                    nums = " ".join(f"{float(c.real)!r} {float(c.imag)!r}" for c in vec)
                    fh.write(f"{u} {n} {nums}\n")


def load_trace(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    return parse_trace(lines)


def parse_trace(lines):
    if not lines or lines[0].strip() != MAGIC:
        raise ParseError(f"expected header {MAGIC!r}", line=1)
    if len(lines) < 2:
        raise ParseError("missing dimension line", line=2)
    dims = {}
    for tok in lines[1].split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise ParseError(f"malformed dimension token {tok!r}", line=2)
        try:
            dims[key] = int(val)
        except ValueError:
            raise ParseError(f"non-integer dimension {tok!r}", line=2) from None
    if sorted(dims) != ["L", "N", "U", "trials"]:
        raise ParseError("dimension line must set U, L, N and trials", line=2)
    U, L, N, T = dims["U"], dims["L"], dims["N"], dims["trials"]
    if min(U, L, N, T) < 1:
        raise ParseError("dimensions must be >= 1", line=2)

    body = lines[2:]
    block = U * N
    h = np.empty((T, U, N, L), dtype=np.complex128)
    for t in range(T):
        for k in range(block):
            idx = t * block + k
            lineno = idx + 3
            if idx >= len(body):
                raise ParseError(f"truncated trace: block {t + 1} of {T} incomplete", line=lineno)
            toks = body[idx].split()
            if len(toks) != 2 + 2 * L:
                raise ParseError(f"expected {2 + 2 * L} fields, found {len(toks)}", line=lineno)
            try:
                u, n = int(toks[0]), int(toks[1])
                vals = [float(x) for x in toks[2:]]
            except ValueError:
                raise ParseError("non-numeric token", line=lineno) from None
            if (u, n) != divmod(k, N):
                raise ParseError(f"expected entry u={k // N} n={k % N}, found u={u} n={n}", line=lineno)
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite value", line=lineno)
            arr = np.asarray(vals)
            h[t, u, n] = arr[0::2] + 1j * arr[1::2]
    extra = [i for i in range(T * block, len(body)) if body[i].strip()]
    if extra:
        raise ParseError("data beyond the declared trials", line=extra[0] + 3)
    return ChannelTrace(h, {"generator": "file"})
