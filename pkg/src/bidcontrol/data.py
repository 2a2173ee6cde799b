"""Domain types, bid-log file handling, and the synthetic campaign-log generator."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

SECONDS_PER_DAY = 86400

LOG_FIELDS = ("id", "timestamp", "wp", "ctr", "cvr")


class BidLogError(ValueError):
    """A bid log, row, or config violates the data contract."""


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise BidLogError(msg)


@dataclass(frozen=True)
class Opportunity:
    """One logged bid request: the atom of auction replay.

    ``wp`` is the winning price observed for the request, ``ctr`` and
    ``cvr`` the estimated click-through and (click-conditioned)
    conversion rates. ``value`` is the expected conversions from a win.
    """

    id: int
    timestamp: int
    wp: float
    ctr: float
    cvr: float

    def __post_init__(self):
        _check(0 <= self.timestamp < SECONDS_PER_DAY,
               f"timestamp must be in [0, {SECONDS_PER_DAY}), got {self.timestamp}")
        _check(self.wp > 0, f"wp must be > 0, got {self.wp}")
        _check(0.0 <= self.ctr <= 1.0, f"ctr must be in [0, 1], got {self.ctr}")
        _check(0.0 <= self.cvr <= 1.0, f"cvr must be in [0, 1], got {self.cvr}")

    @property
    def value(self) -> float:
        return self.ctr * self.cvr


@dataclass(frozen=True)
class BidLog:
    """A validated, (timestamp, id)-sorted day of bid requests in columnar form."""

    ids: np.ndarray
    timestamps: np.ndarray
    wp: np.ndarray
    ctr: np.ndarray
    cvr: np.ndarray
    day_label: str = "train"

    @classmethod
    def from_arrays(cls, ids, timestamps, wp, ctr, cvr, day_label: str = "train") -> "BidLog":
        ids = np.asarray(ids, dtype=np.int64)
        timestamps = np.asarray(timestamps, dtype=np.int64)
        wp = np.asarray(wp, dtype=np.float64)
        ctr = np.asarray(ctr, dtype=np.float64)
        cvr = np.asarray(cvr, dtype=np.float64)
        n = len(ids)
        _check(n > 0, "bid log must be nonempty")
        for name, arr in (("timestamp", timestamps), ("wp", wp), ("ctr", ctr), ("cvr", cvr)):
            _check(len(arr) == n, f"column {name} has length {len(arr)}, expected {n}")
        order = np.lexsort((ids, timestamps))
        ids, timestamps, wp, ctr, cvr = (a[order] for a in (ids, timestamps, wp, ctr, cvr))
        _check(len(np.unique(ids)) == n, "opportunity ids must be unique")
        cls._validate_bounds(timestamps, wp, ctr, cvr)
        log = cls(ids, timestamps, wp, ctr, cvr, day_label)
        for arr in (log.ids, log.timestamps, log.wp, log.ctr, log.cvr):
            arr.setflags(write=False)
        return log

    @staticmethod
    def _validate_bounds(timestamps, wp, ctr, cvr) -> None:
        checks = (
            ("timestamp", (timestamps >= 0) & (timestamps < SECONDS_PER_DAY),
             f"in [0, {SECONDS_PER_DAY})"),
            ("wp", wp > 0, "> 0"),
            ("ctr", (ctr >= 0) & (ctr <= 1), "in [0, 1]"),
            ("cvr", (cvr >= 0) & (cvr <= 1), "in [0, 1]"),
        )
        for name, ok, bound in checks:
            if not ok.all():
                i = int(np.argmin(ok))
                col = {"timestamp": timestamps, "wp": wp, "ctr": ctr, "cvr": cvr}[name]
                raise BidLogError(f"row {i}: {name} must be {bound}, got {col[i]}")

    @classmethod
    def from_opportunities(cls, opportunities: Sequence[Opportunity],
                           day_label: str = "train") -> "BidLog":
        _check(len(opportunities) > 0, "bid log must be nonempty")
        return cls.from_arrays(
            [o.id for o in opportunities],
            [o.timestamp for o in opportunities],
            [o.wp for o in opportunities],
            [o.ctr for o in opportunities],
            [o.cvr for o in opportunities],
            day_label,
        )

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> Opportunity:
        return Opportunity(int(self.ids[i]), int(self.timestamps[i]),
                           float(self.wp[i]), float(self.ctr[i]), float(self.cvr[i]))

    def opportunities(self) -> Iterator[Opportunity]:
        for i in range(len(self)):
            yield self[i]

    @property
    def value(self) -> np.ndarray:
        """Expected conversions per opportunity (ctr * cvr)."""
        return self.ctr * self.cvr

    def step_index(self, step_seconds: int) -> np.ndarray:
        return self.timestamps // step_seconds


@dataclass(frozen=True)
class CampaignSpec:
    """Budget, CPC cap, and time-step layout for one campaign-day."""

    campaign_id: str
    budget: float
    cpc_cap: float
    step_seconds: int = 3600
    num_steps: int = 24

    def __post_init__(self):
        _check(self.budget >= 0, f"budget must be >= 0, got {self.budget}")
        _check(self.cpc_cap > 0, f"cpc_cap must be > 0, got {self.cpc_cap}")
        _check(self.step_seconds > 0 and self.num_steps > 0,
               "step_seconds and num_steps must be positive")
        _check(self.step_seconds * self.num_steps == SECONDS_PER_DAY,
               f"step_seconds * num_steps must equal {SECONDS_PER_DAY}, "
               f"got {self.step_seconds} * {self.num_steps}")

    def to_dict(self) -> dict:
        return {"campaign_id": self.campaign_id, "budget": self.budget,
                "cpc_cap": self.cpc_cap, "step_seconds": self.step_seconds,
                "num_steps": self.num_steps}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CampaignSpec":
        return cls(str(d["campaign_id"]), float(d["budget"]), float(d["cpc_cap"]),
                   int(d.get("step_seconds", 3600)), int(d.get("num_steps", 24)))


@dataclass(frozen=True)
class DriftConfig:
    """Test-day multiplicative drift: winning-price inflation and volume reshaping."""

    wp_factor: float = 1.0
    volume_factors: tuple[float, ...] | None = None

    def __post_init__(self):
        _check(self.wp_factor > 0, "drift wp_factor must be > 0")
        if self.volume_factors is not None:
            object.__setattr__(self, "volume_factors", tuple(float(f) for f in self.volume_factors))
            _check(all(f >= 0 for f in self.volume_factors),
                   "drift volume_factors must be >= 0")


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for generating one campaign's train/test bid logs.

    ``wp`` is correlated with ``ctr`` through a power term so that
    high-attention inventory is more contested; the strength is the
    ``wp_ctr_exponent`` knob. Identical seed + config gives a
    bit-identical log.
    """

    n_opportunities: int
    volume_profile: tuple[float, ...]
    ctr_shape: tuple[float, float]
    cvr_shape: tuple[float, float]
    wp_base: float
    wp_ctr_exponent: float
    wp_noise_sigma: float
    rng_seed: int
    drift: DriftConfig = field(default_factory=DriftConfig)

    def __post_init__(self):
        object.__setattr__(self, "volume_profile", tuple(float(w) for w in self.volume_profile))
        object.__setattr__(self, "ctr_shape", tuple(float(x) for x in self.ctr_shape))
        object.__setattr__(self, "cvr_shape", tuple(float(x) for x in self.cvr_shape))
        _check(self.n_opportunities > 0, "n_opportunities must be positive")
        _check(len(self.volume_profile) > 0 and SECONDS_PER_DAY % len(self.volume_profile) == 0,
               f"volume_profile length must divide {SECONDS_PER_DAY}")
        _check(all(w >= 0 for w in self.volume_profile), "volume_profile weights must be >= 0")
        total = sum(self.volume_profile)
        _check(total > 0, "volume_profile must not be all zero")
        _check(abs(total - 1.0) < 1e-6, f"volume_profile must sum to 1, got {total}")
        for name in ("ctr_shape", "cvr_shape"):
            a, b = getattr(self, name)
            _check(a > 0 and b > 0, f"{name} parameters must be positive")
        _check(self.wp_base > 0, "wp_base must be > 0")
        _check(self.wp_ctr_exponent >= 0, "wp_ctr_exponent must be >= 0")
        _check(self.wp_noise_sigma >= 0, "wp_noise_sigma must be >= 0")
        if self.drift.volume_factors is not None:
            _check(len(self.drift.volume_factors) == len(self.volume_profile),
                   "drift volume_factors length must match volume_profile")

    @property
    def num_steps(self) -> int:
        return len(self.volume_profile)

    @property
    def step_seconds(self) -> int:
        return SECONDS_PER_DAY // self.num_steps

    def to_dict(self) -> dict:
        return {
            "n_opportunities": self.n_opportunities,
            "volume_profile": list(self.volume_profile),
            "ctr_shape": list(self.ctr_shape),
            "cvr_shape": list(self.cvr_shape),
            "wp_base": self.wp_base,
            "wp_ctr_exponent": self.wp_ctr_exponent,
            "wp_noise_sigma": self.wp_noise_sigma,
            "rng_seed": self.rng_seed,
            "drift": {
                "wp_factor": self.drift.wp_factor,
                "volume_factors": (list(self.drift.volume_factors)
                                   if self.drift.volume_factors is not None else None),
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticConfig":
        drift_d = d.get("drift") or {}
        drift = DriftConfig(
            wp_factor=float(drift_d.get("wp_factor", 1.0)),
            volume_factors=(tuple(drift_d["volume_factors"])
                            if drift_d.get("volume_factors") else None),
        )
        return cls(
            n_opportunities=int(d["n_opportunities"]),
            volume_profile=tuple(d["volume_profile"]),
            ctr_shape=tuple(d["ctr_shape"]),
            cvr_shape=tuple(d["cvr_shape"]),
            wp_base=float(d["wp_base"]),
            wp_ctr_exponent=float(d["wp_ctr_exponent"]),
            wp_noise_sigma=float(d["wp_noise_sigma"]),
            rng_seed=int(d["rng_seed"]),
            drift=drift,
        )

    def with_seed(self, seed: int) -> "SyntheticConfig":
        return replace(self, rng_seed=seed)


@dataclass(frozen=True)
class LogSummary:
    """Exact aggregates of one bid log."""

    count: int
    mean_ctr: float
    mean_cvr: float
    mean_wp: float
    per_step_volumes: tuple[int, ...]


def load_log(path: str | Path, schema: Mapping[str, str] | None = None,
             day_label: str | None = None) -> BidLog:
    """Load and validate a bid log from a CSV or JSONL file.

    ``schema`` optionally maps the canonical field names
    (id, timestamp, wp, ctr, cvr) to the file's column names.

    Raises:
        BidLogError: on a malformed row (reported with its index) or any
            field-bound violation (reported with the offending field).
    """
    path = Path(path)
    _check(path.exists(), f"bid log file not found: {path}")
    colmap = {f: f for f in LOG_FIELDS}
    if schema:
        colmap.update(schema)
    label = day_label if day_label is not None else path.stem
    if path.suffix.lower() == ".jsonl":
        rows = _read_jsonl_rows(path, colmap)
    else:
        rows = _read_csv_rows(path, colmap)
    ids, ts, wp, ctr, cvr = zip(*rows)
    return BidLog.from_arrays(ids, ts, wp, ctr, cvr, day_label=label)


def _parse_row(raw: Mapping[str, object], colmap: Mapping[str, str], row_index: int):
    try:
        return (int(raw[colmap["id"]]), int(raw[colmap["timestamp"]]),
                float(raw[colmap["wp"]]), float(raw[colmap["ctr"]]),
                float(raw[colmap["cvr"]]))
    except (KeyError, TypeError, ValueError) as exc:
        raise BidLogError(f"row {row_index}: malformed record ({exc})") from exc


def _read_csv_rows(path: Path, colmap: Mapping[str, str]) -> list[tuple]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _check(reader.fieldnames is not None, f"{path}: empty file")
        missing = [c for c in colmap.values() if c not in reader.fieldnames]
        _check(not missing, f"{path}: missing columns {missing}")
        for i, raw in enumerate(reader):
            rows.append(_parse_row(raw, colmap, i))
    _check(len(rows) > 0, f"{path}: no data rows")
    return rows


def _read_jsonl_rows(path: Path, colmap: Mapping[str, str]) -> list[tuple]:
    rows = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BidLogError(f"row {i}: invalid JSON ({exc})") from exc
            rows.append(_parse_row(raw, colmap, i))
    _check(len(rows) > 0, f"{path}: no data rows")
    return rows


def write_log(log: BidLog, path: str | Path) -> None:
    """Write a bid log in canonical form (CSV or JSONL by extension).

    Floats are written with ``repr`` so a load/write round trip is
    byte-identical.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".jsonl":
        with open(path, "w") as fh:
            for i in range(len(log)):
                fh.write(json.dumps({
                    "id": int(log.ids[i]), "timestamp": int(log.timestamps[i]),
                    "wp": float(log.wp[i]), "ctr": float(log.ctr[i]),
                    "cvr": float(log.cvr[i]),
                }, sort_keys=True) + "\n")
    else:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_FIELDS)
            for i in range(len(log)):
                writer.writerow([int(log.ids[i]), int(log.timestamps[i]),
                                 repr(float(log.wp[i])), repr(float(log.ctr[i])),
                                 repr(float(log.cvr[i]))])


def generate_log(cfg: SyntheticConfig, day: str = "train") -> BidLog:
    """Generate one synthetic campaign-day.

    Timestamps are multinomial over steps by the volume profile; ctr and
    cvr are beta draws; wp couples to ctr through a power term plus
    lognormal noise. ``day="test"`` applies the drift factors and uses an
    independent RNG stream spawned from the same seed.
    """
    if day not in ("train", "test"):
        raise BidLogError(f"day must be 'train' or 'test', got {day!r}")
    streams = np.random.SeedSequence(cfg.rng_seed).spawn(2)
    rng = np.random.default_rng(streams[0] if day == "train" else streams[1])

    profile = np.asarray(cfg.volume_profile, dtype=np.float64)
    wp_scale = cfg.wp_base
    if day == "test":
        if cfg.drift.volume_factors is not None:
            profile = profile * np.asarray(cfg.drift.volume_factors)
            _check(profile.sum() > 0, "drifted volume_profile must not be all zero")
        wp_scale = cfg.wp_base * cfg.drift.wp_factor
    profile = profile / profile.sum()

    n = cfg.n_opportunities
    counts = rng.multinomial(n, profile)
    steps = np.repeat(np.arange(cfg.num_steps), counts)
    offsets = rng.integers(0, cfg.step_seconds, size=n)
    timestamps = steps * cfg.step_seconds + offsets

    ctr_a, ctr_b = cfg.ctr_shape
    cvr_a, cvr_b = cfg.cvr_shape
    ctr = rng.beta(ctr_a, ctr_b, size=n)
    cvr = rng.beta(cvr_a, cvr_b, size=n)
    mean_ctr = ctr_a / (ctr_a + ctr_b)

    wp = wp_scale * np.exp(rng.normal(0.0, cfg.wp_noise_sigma, size=n))
    if cfg.wp_ctr_exponent > 0:
        wp = wp * (ctr / mean_ctr) ** cfg.wp_ctr_exponent
    # beta draws can underflow to 0; keep wp strictly positive
    wp = np.maximum(wp, np.finfo(np.float64).tiny)

    order = np.argsort(timestamps, kind="stable")
    ids = np.arange(n, dtype=np.int64)
    return BidLog.from_arrays(ids, timestamps[order], wp[order], ctr[order], cvr[order],
                              day_label=day)


def summarize_log(log: BidLog, step_seconds: int = 3600, num_steps: int = 24) -> LogSummary:
    """Exact aggregates: counts, unweighted means, and per-step volumes."""
    steps = np.minimum(log.step_index(step_seconds), num_steps - 1)
    volumes = np.bincount(steps, minlength=num_steps)
    return LogSummary(
        count=len(log),
        mean_ctr=float(log.ctr.mean()),
        mean_cvr=float(log.cvr.mean()),
        mean_wp=float(log.wp.mean()),
        per_step_volumes=tuple(int(v) for v in volumes),
    )
