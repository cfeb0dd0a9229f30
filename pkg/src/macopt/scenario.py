"""Problem instances, unit conversions and the ``key = value`` config format.

Rates are carried internally as bits per subcarrier-use summed over the
subcarriers of one user; Mbps only appears when results are displayed.
Energy is the linear-mW sum of a user's per-subcarrier powers.
"""

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ConfigError, DomainError

#: Aggregate uplink rate that the energy-mode presets have to deliver.
UPLINK_TARGET_BPS = 500e6

CONFIG_KEYS = (
    "users",
    "antennas",
    "subcarriers",
    "bandwidth_hz",
    "noise_psd_dbm_hz",
    "rate_targets",
    "energy_weights",
    "max_power_dbm",
    "snr_db",
    "distances_m",
    "pathloss_exponent",
    "seed",
)
_LIST_KEYS = ("rate_targets", "energy_weights", "distances_m")


@dataclass(frozen=True)
class Scenario:
    """Static description of one uplink multiple-access problem.

    Attributes
    ----------
    num_users, num_ap_antennas, num_subcarriers : int
        U, L and N.
    bandwidth_hz : float
        Total bandwidth shared by the N subcarriers.
    noise_psd_dbm_hz : float
        Thermal noise density.
    rate_targets : tuple of float
        Per-user target in bits per subcarrier-use, summed over subcarriers.
    energy_weights : tuple of float
        Positive weights of the users' energies in the objective.
    max_power_dbm : float
        Per-user transmit power cap.
    snr_db : float
        Receive SNR operating point used to scale channel traces.
    distances_m : tuple of float
        User distances from the access point.
    pathloss_exponent : float
    seed : int
        Master seed (unsigned 64 bit).
    """

    num_users: int = 3
    num_ap_antennas: int = 2
    num_subcarriers: int = 64
    bandwidth_hz: float = 80e6
    noise_psd_dbm_hz: float = -174.0
    rate_targets: tuple = None
    energy_weights: tuple = None
    max_power_dbm: float = 17.0
    snr_db: float = 20.0
    distances_m: tuple = None
    pathloss_exponent: float = 4.0
    seed: int = 0

    def __post_init__(self):
        # Fill per-user defaults and freeze list-like inputs as float tuples.
        u = self.num_users
        n_users = max(int(u), 0) if _is_int(u) else 0
        if self.rate_targets is None:
            b = default_rate_target(self.bandwidth_hz, self.num_subcarriers, n_users)
            object.__setattr__(self, "rate_targets", (b,) * n_users)
        if self.energy_weights is None:
            object.__setattr__(self, "energy_weights", (1.0,) * n_users)
        if self.distances_m is None:
            object.__setattr__(self, "distances_m", (3.0,) * n_users)
        for name in _LIST_KEYS:
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    @property
    def U(self):
        return self.num_users

    @property
    def L(self):
        return self.num_ap_antennas

    @property
    def N(self):
        return self.num_subcarriers

    @property
    def subcarrier_bandwidth_hz(self):
        return self.bandwidth_hz / self.num_subcarriers

    @property
    def noise_power_mw(self):
        """Noise power per subcarrier, sigma^2, in mW."""
        return unit_convert(self.noise_psd_dbm_hz, "psd->noise_mw", bandwidth_hz=self.subcarrier_bandwidth_hz)

    @property
    def max_power_mw(self):
        return unit_convert(self.max_power_dbm, "dbm->mw")

    @property
    def targets(self):
        return np.asarray(self.rate_targets, dtype=float)

    @property
    def weights(self):
        return np.asarray(self.energy_weights, dtype=float)

    @property
    def distances(self):
        return np.asarray(self.distances_m, dtype=float)

    def with_(self, **changes):
        """Copy with some fields replaced; per-user tuples are re-derived when U changes."""
        u = changes.get("num_users", self.num_users)
        if u != self.num_users:
            changes.setdefault("rate_targets", None)
            for name, fallback in (("energy_weights", 1.0), ("distances_m", 3.0)):
                vals = getattr(self, name)
                changes.setdefault(name, (vals[0] if vals else fallback,) * u)
        return replace(self, **changes)

    # -- serialization -----------------------------------------------------

    def to_config(self):
        """Render as config text; ``read_config(to_config(s)) == s`` exactly."""
        values = {
            "users": self.num_users,
            "antennas": self.num_ap_antennas,
            "subcarriers": self.num_subcarriers,
            "bandwidth_hz": self.bandwidth_hz,
            "noise_psd_dbm_hz": self.noise_psd_dbm_hz,
            "rate_targets": self.rate_targets,
            "energy_weights": self.energy_weights,
            "max_power_dbm": self.max_power_dbm,
            "snr_db": self.snr_db,
            "distances_m": self.distances_m,
            "pathloss_exponent": self.pathloss_exponent,
            "seed": self.seed,
        }
        lines = []
        for key in CONFIG_KEYS:
            v = values[key]
            if isinstance(v, tuple):
                text = ", ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                text = repr(v)
            else:
                text = str(v)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"


def _is_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def default_rate_target(bandwidth_hz, num_subcarriers, num_users):
    """Equal per-user share of a 500 Mbps aggregate, in bits per subcarrier-use.

    With symbol rate B/N per subcarrier, R bps corresponds to R*N/B bits
    summed over the subcarriers.
    """
    if num_users <= 0 or not bandwidth_hz or bandwidth_hz <= 0:
        return 0.0
    return UPLINK_TARGET_BPS * num_subcarriers / bandwidth_hz / num_users


def validate(scenario):
    """Return the list of violated invariants (empty list means ok).

    >>> validate(Scenario())
    []
    """
    s = scenario
    out = []
    if not _is_int(s.num_users) or s.num_users < 1:
        out.append("num_users >= 1")
    if not _is_int(s.num_ap_antennas) or s.num_ap_antennas < 1:
        out.append("num_ap_antennas >= 1")
    if not _is_int(s.num_subcarriers) or s.num_subcarriers < 1:
        out.append("num_subcarriers >= 1")
    if not _finite(s.bandwidth_hz) or s.bandwidth_hz <= 0:
        out.append("bandwidth_hz > 0")
    if not _finite(s.noise_psd_dbm_hz):
        out.append("noise_psd_dbm_hz finite")
    u = s.num_users if _is_int(s.num_users) else -1
    for name in _LIST_KEYS:
        if u >= 1 and len(getattr(s, name)) != u:
            out.append(f"len({name}) == num_users")
    if not all(_finite(b) and b >= 0 for b in s.rate_targets):
        out.append("rate_targets finite and >= 0")
    if not all(_finite(t) and t > 0 for t in s.energy_weights):
        out.append("energy_weights > 0")
    if not all(_finite(d) and d > 0 for d in s.distances_m):
        out.append("distances_m > 0")
    if not _finite(s.max_power_dbm):
        out.append("max_power_dbm finite")
    if not _finite(s.snr_db):
        out.append("snr_db finite")
    if not _finite(s.pathloss_exponent) or s.pathloss_exponent < 0:
        out.append("pathloss_exponent >= 0")
    if not _is_int(s.seed) or not 0 <= s.seed < 2**64:
        out.append("seed is an unsigned 64-bit integer")
    if "bandwidth_hz > 0" not in out and "num_subcarriers >= 1" not in out and _finite(s.noise_psd_dbm_hz):
        if not s.noise_power_mw > 0:
            out.append("noise power > 0")
    return out


def require_valid(scenario):
    problems = validate(scenario)
    if problems:
        raise ConfigError("invalid scenario: " + "; ".join(problems))
    return scenario


def _finite(x):
    try:
        return math.isfinite(x)
    except TypeError:
        return False


def unit_convert(value, kind, bandwidth_hz=None, num_subcarriers=None):
    """Decibel and rate conversions.

    kind is one of ``"dbm->mw"``, ``"mw->dbm"``, ``"psd->noise_mw"``
    (PSD in dBm/Hz integrated over ``bandwidth_hz``) and ``"bits->mbps"``
    (aggregate bits per subcarrier-use at symbol rate ``bandwidth_hz / num_subcarriers``).
    """
    if not _finite(value):
        raise DomainError(f"non-finite input {value!r}")
    if kind == "dbm->mw":
        return 10.0 ** (value / 10.0)
    if kind == "mw->dbm":
        if value <= 0:
            raise DomainError("mw->dbm needs a positive power")
        return 10.0 * math.log10(value)
    if kind == "psd->noise_mw":
        if bandwidth_hz is None or not _finite(bandwidth_hz) or bandwidth_hz <= 0:
            raise DomainError("bandwidth must be positive")
        return 10.0 ** ((value + 10.0 * math.log10(bandwidth_hz)) / 10.0)
    if kind == "bits->mbps":
        if bandwidth_hz is None or not num_subcarriers or bandwidth_hz <= 0:
            raise DomainError("bits->mbps needs bandwidth and subcarrier count")
        return value * bandwidth_hz / num_subcarriers / 1e6
    raise DomainError(f"unknown conversion {kind!r}")


# -- config files -------------------------------------------------------------

_FIELD_OF_KEY = {
    "users": "num_users",
    "antennas": "num_ap_antennas",
    "subcarriers": "num_subcarriers",
    "bandwidth_hz": "bandwidth_hz",
    "noise_psd_dbm_hz": "noise_psd_dbm_hz",
    "rate_targets": "rate_targets",
    "energy_weights": "energy_weights",
    "max_power_dbm": "max_power_dbm",
    "snr_db": "snr_db",
    "distances_m": "distances_m",
    "pathloss_exponent": "pathloss_exponent",
    "seed": "seed",
}
_INT_KEYS = ("users", "antennas", "subcarriers", "seed")


def parse_config(text, base=None):
    """Parse ``key = value`` lines into a :class:`Scenario`.

    Unknown or repeated keys are errors; missing keys keep the defaults of
    ``base`` (or of :class:`Scenario`). The result is validated.
    """
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_OF_KEY:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                parsed = int(value)
            elif key in _LIST_KEYS:
                parsed = tuple(float(v) for v in value.split(",") if v.strip())
            else:
                parsed = float(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from None
        seen[key] = parsed

    kwargs = {_FIELD_OF_KEY[k]: v for k, v in seen.items()}
    if base is None:
        scenario = Scenario(**kwargs)
    else:
        scenario = base.with_(**kwargs)
    require_valid(scenario)
    return scenario


def read_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def write_config(scenario, path):
    with open(path, "w") as fh:
        fh.write(scenario.to_config())


def scenario_fields():
    return [f.name for f in fields(Scenario)]
