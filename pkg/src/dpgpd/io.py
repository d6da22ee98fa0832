"""Data ingestion and on-disk formats.

A fitted run lives in one directory::

    chain.csv       iter,u,sigma,xi,n_star,a_lambda,a_gamma,log_post
    clusters.jsonl  one line per retained sample: shapes, rates, counts
                    (and memberships when the run kept them)
    manifest.json   config, seed, data_sha256, acceptance_rates, wall_ms, version

Floats are written with ``repr`` so every file parses back bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dpgpd.distributions import TailParams
from dpgpd.dpmg import BaseMeasureParams
from dpgpd.model import Chain, ClusterSnapshot, DensityGrid, FitConfig, PosteriorSample

CHAIN_COLUMNS = ("iter", "u", "sigma", "xi", "n_star", "a_lambda", "a_gamma", "log_post")
GRID_COLUMNS = ("x", "mean", "lo", "hi")
CHAIN_FILE = "chain.csv"
CLUSTER_FILE = "clusters.jsonl"
MANIFEST_FILE = "manifest.json"

NWIS_IV_URL = "https://waterservices.usgs.gov/nwis/iv/"
CACHE_ENV = "DPGPD_CACHE_DIR"
DISCHARGE_CODE = "00060"


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(frozen=True)
class Dataset:
    values: np.ndarray
    source: str
    timestamps: tuple | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size == 0:
            raise DataError(f"{self.source}: no values")
        if np.any(~(v > 0)) or np.any(~np.isfinite(v)):
            raise DataError(f"{self.source}: values must be finite and strictly positive")
        if self.timestamps is not None and len(self.timestamps) != v.size:
            raise DataError(f"{self.source}: {len(self.timestamps)} timestamps for {v.size} values")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


# --- CSV --------------------------------------------------------------------------


def read_csv(path) -> Dataset:
    """One numeric column, optional header, LF or CRLF line endings.

    A non-numeric first line is taken as the header. Errors name the
    1-based line number.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    values = []
    with path.open(newline="", encoding="utf-8-sig") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row]
            if not any(cells):
                continue
            if len(cells) != 1:
                raise DataError(f"{path}:{lineno}: expected one column, got {len(cells)}")
            try:
                v = float(cells[0])
            except ValueError:
                if lineno == 1:
                    continue
                raise DataError(f"{path}:{lineno}: not a number: {cells[0]!r}") from None
            if not math.isfinite(v) or v <= 0:
                raise DataError(f"{path}:{lineno}: value must be positive, got {cells[0]}")
            values.append(v)
    if not values:
        raise DataError(f"{path}: no values")
    return Dataset(np.array(values), source=str(path))


def write_csv(path, values, header: str = "value") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for v in np.asarray(values, dtype=float):
            fh.write(repr(float(v)) + "\n")


# --- USGS NWIS --------------------------------------------------------------------


def parse_nwis_json(payload, parameter: str = DISCHARGE_CODE) -> Dataset:
    """Values of one parameter from an NWIS instantaneous-values JSON document.

    No-data sentinels and non-positive readings are dropped.
    """
    if isinstance(payload, (str, bytes)):
        try:
            payload = json.loads(payload)
        except json.JSONDecodeError as exc:
            raise DataError(f"NWIS response is not JSON: {exc}") from None
    try:
        series = payload["value"]["timeSeries"]
    except (KeyError, TypeError):
        raise DataError("NWIS response has no value.timeSeries") from None
    for ts in series:
        try:
            codes = [c["value"] for c in ts["variable"]["variableCode"]]
        except (KeyError, TypeError):
            raise DataError("NWIS time series without a variable code") from None
        if parameter not in codes:
            continue
        site = ts.get("sourceInfo", {}).get("siteCode", [{}])[0].get("value", "?")
        no_data = ts["variable"].get("noDataValue")
        values, stamps = [], []
        for block in ts.get("values", []):
            for obs in block.get("value", []):
                try:
                    v = float(obs["value"])
                except (KeyError, TypeError, ValueError):
                    raise DataError(f"NWIS observation without a numeric value: {obs!r}") from None
                if (no_data is not None and v == no_data) or not v > 0:
                    continue
                values.append(v)
                stamps.append(obs.get("dateTime"))
        if not values:
            raise DataError(f"NWIS series for site {site} parameter {parameter} is empty")
        return Dataset(np.array(values), source=f"nwis:{site}:{parameter}", timestamps=tuple(stamps))
    raise DataError(f"NWIS response has no series for parameter {parameter}")


def nwis_cache_path(site: str, start: str, end: str, parameter: str, cache_dir=None) -> Path:
    cache_dir = Path(cache_dir or os.environ.get(CACHE_ENV) or ".")
    return cache_dir / f"nwis_{site}_{parameter}_{start}_{end}.json"


def fetch_usgs(site: str, start: str, end: str, parameter: str = DISCHARGE_CODE, cache_dir=None, timeout: float = 60.0) -> Dataset:
    """Instantaneous values from the public NWIS service, cached as raw JSON.

    A cached response is used without touching the network. ``cache_dir``
    falls back to ``$DPGPD_CACHE_DIR`` and then the working directory.
    """
    cache = nwis_cache_path(site, start, end, parameter, cache_dir)
    if cache.is_file():
        return parse_nwis_json(cache.read_text(encoding="utf-8"), parameter)

    import requests

    params = {"format": "json", "sites": site, "startDT": start, "endDT": end, "parameterCd": parameter}
    try:
        resp = requests.get(NWIS_IV_URL, params=params, timeout=timeout)
    except requests.RequestException as exc:
        raise ConnectionError(f"NWIS request failed: {exc}") from None
    if resp.status_code != 200:
        raise ConnectionError(f"NWIS HTTP {resp.status_code}: {resp.text.strip()[:300]}")
    data = parse_nwis_json(resp.text, parameter)
    cache.parent.mkdir(parents=True, exist_ok=True)
    cache.write_text(resp.text, encoding="utf-8")
    return data


# --- config and manifest ----------------------------------------------------------


def load_config(path) -> FitConfig:
    """FitConfig from a flat JSON object; a run manifest is accepted too."""
    with Path(path).open(encoding="utf-8") as fh:
        d = json.load(fh)
    if not isinstance(d, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    if "config" in d and isinstance(d["config"], dict):
        d = d["config"]
    return FitConfig.from_dict(d)


@dataclass
class RunManifest:
    config: dict
    seed: int
    data_sha256: str
    acceptance_rates: dict
    wall_ms: int
    version: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "config": self.config,
            "seed": self.seed,
            "data_sha256": self.data_sha256,
            "acceptance_rates": self.acceptance_rates,
            "wall_ms": self.wall_ms,
            "version": self.version,
        }
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> RunManifest:
        core = ("config", "seed", "data_sha256", "acceptance_rates", "wall_ms", "version")
        missing = [k for k in core if k not in d]
        if missing:
            raise ValueError(f"manifest missing {missing}")
        return cls(**{k: d[k] for k in core}, extra={k: v for k, v in d.items() if k not in core})


def write_manifest(path, manifest: RunManifest) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(path) -> RunManifest:
    return RunManifest.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --- chains -----------------------------------------------------------------------


def _row(s: PosteriorSample) -> list:
    return [
        str(s.iteration),
        repr(float(s.tail.u)),
        repr(float(s.tail.sigma)),
        repr(float(s.tail.xi)),
        str(s.clusters.n_star),
        repr(float(s.base.a_lambda)),
        repr(float(s.base.a_gamma)),
        repr(float(s.log_post)),
    ]


def write_chain_csv(path, chain: Chain) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CHAIN_COLUMNS) + "\n")
        for s in chain.samples:
            fh.write(",".join(_row(s)) + "\n")


def read_chain_csv(path) -> dict:
    """Columns of a chain CSV as arrays (``iter`` and ``n_star`` as integers)."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CHAIN_COLUMNS:
            raise DataError(f"{path}: header must be {','.join(CHAIN_COLUMNS)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CHAIN_COLUMNS):
                raise DataError(f"{path}:{lineno}: expected {len(CHAIN_COLUMNS)} fields")
            rows.append(row)
    cols = {}
    for k, name in enumerate(CHAIN_COLUMNS):
        kind = int if name in ("iter", "n_star") else float
        cols[name] = np.array([kind(r[k]) for r in rows], dtype=kind)
    return cols


def write_clusters(path, chain: Chain) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in chain.samples:
            c = s.clusters
            rec = {"iter": s.iteration, "shapes": list(c.shapes), "rates": list(c.rates), "counts": list(c.counts)}
            if c.memberships is not None:
                rec["memberships"] = c.memberships.tolist()
            fh.write(json.dumps(rec) + "\n")


def save_run(out_dir, chain: Chain, manifest: RunManifest) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_chain_csv(out / CHAIN_FILE, chain)
    write_clusters(out / CLUSTER_FILE, chain)
    write_manifest(out / MANIFEST_FILE, manifest)
    return out


def load_run(run_dir) -> tuple[Chain, RunManifest]:
    """Rebuild a :class:`Chain` from a run directory written by :func:`save_run`."""
    run = Path(run_dir)
    for name in (CHAIN_FILE, CLUSTER_FILE, MANIFEST_FILE):
        if not (run / name).is_file():
            raise FileNotFoundError(f"{run}: missing {name}")
    manifest = read_manifest(run / MANIFEST_FILE)
    cfg = FitConfig.from_dict(manifest.config)
    cols = read_chain_csv(run / CHAIN_FILE)
    with (run / CLUSTER_FILE).open(encoding="utf-8") as fh:
        clusters = [json.loads(line) for line in fh if line.strip()]
    if len(clusters) != cols["iter"].size:
        raise DataError(f"{run}: {cols['iter'].size} chain rows but {len(clusters)} cluster records")
    samples = []
    for k, rec in enumerate(clusters):
        if rec["iter"] != cols["iter"][k] or len(rec["counts"]) != cols["n_star"][k]:
            raise DataError(f"{run}: chain row {k + 1} does not match its cluster record")
        mem = np.array(rec["memberships"], dtype=np.int64) if "memberships" in rec else None
        base = BaseMeasureParams(
            a_lambda=float(cols["a_lambda"][k]),
            a_gamma=float(cols["a_gamma"][k]),
            b_lambda=cfg.b_lambda,
            c_lambda=cfg.c_lambda,
            b_gamma=cfg.b_gamma,
            c_gamma=cfg.c_gamma,
            alpha=cfg.alpha,
        )
        samples.append(
            PosteriorSample(
                tail=TailParams(float(cols["u"][k]), float(cols["sigma"][k]), float(cols["xi"][k])),
                clusters=ClusterSnapshot(tuple(rec["shapes"]), tuple(rec["rates"]), tuple(rec["counts"]), mem),
                base=base,
                log_post=float(cols["log_post"][k]),
                iteration=int(cols["iter"][k]),
            )
        )
    chain = Chain(samples=samples, config=cfg, data_digest=manifest.data_sha256, acceptance_rates=manifest.acceptance_rates)
    return chain, manifest


# --- density grid -----------------------------------------------------------------


def write_grid_csv(path, grid: DensityGrid) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(GRID_COLUMNS) + "\n")
        for row in zip(grid.x, grid.mean, grid.lo, grid.hi):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_grid_csv(path) -> DensityGrid:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != GRID_COLUMNS:
            raise DataError(f"{path}: header must be {','.join(GRID_COLUMNS)}")
        rows = np.array([[float(v) for v in r] for r in reader if r], dtype=float).reshape(-1, 4)
    return DensityGrid(*(rows[:, k] for k in range(4)))
