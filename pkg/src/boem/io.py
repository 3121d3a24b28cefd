"""File formats: input CSVs, run configuration, the draws file and output tables.

Every loader validates the whole file and raises :class:`DataError` listing
all bad rows (1-based line numbers, header is line 1) rather than stopping at
the first problem.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .graph import AdjacencyGraph, GraphError, from_edges
from .model import SD_NAMES, month_years
from .mcmc import PosteriorSamples

ADJACENCY_HEADER = ["area_a", "area_b"]
COUNTS_HEADER = ["area_id", "month_index", "deaths"]
POPULATION_HEADER = ["area_id", "year", "population"]
EXCESS_HEADER = [
    "area_id", "month_index", "observed", "pop", "pred_med", "pred_lo", "pred_hi",
    "excess_med", "excess_lo", "excess_hi", "rate_obs", "rate_pred_med", "emr_med", "emr_lo", "emr_hi",
]
EXCESS_ANNUAL_HEADER = ["area_id", "year"] + EXCESS_HEADER[2:] + ["partial"]
EXCESS_TOTAL_HEADER = [
    "month_index", "observed", "pop", "pred_med", "pred_lo", "pred_hi", "excess_med", "excess_lo", "excess_hi",
]
SUMMARY_HEADER = ["parameter", "Mean", "SD", "95% lower", "Median", "95% upper"]
DIAGNOSTICS_HEADER = ["parameter", "rhat", "ess", "acceptance"]
METRICS_HEADER = ["replication", "n_leftout", "me", "mde", "mae", "mse", "mre", "mdre", "mare", "coverage95",
                  "alpha_covered", "rho_covered"]
GEN_TRUTH_HEADER = ["replication", "area_id", "month_index", "theta", "pi", "y"]
TRACE_HEADER = ["chain", "iteration", "value"]
SCALAR_PARAMS = ("alpha", "rho") + SD_NAMES


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    def __init__(self, path, problems: list[str]):
        self.path = str(path)
        self.problems = list(problems)
        shown = "\n  ".join(self.problems[:50])
        more = f"\n  ... and {len(self.problems) - 50} more" if len(self.problems) > 50 else ""
        super().__init__(f"{self.path}: {len(self.problems)} problem(s)\n  {shown}{more}")


# --- inputs ---


def _read_csv(path, header: list[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(path, [str(exc)]) from exc
    missing = [c for c in header if c not in df.columns]
    if missing:
        raise DataError(path, [f"line 1: missing column(s) {missing}; expected header {','.join(header)}"])
    return df[header]


def _int_column(df, col, problems, lo=None, hi=None):
    out = np.zeros(len(df), dtype=np.int64)
    ok = np.ones(len(df), bool)
    for k, raw in enumerate(df[col]):
        line = k + 2
        try:
            val = float(raw)
            if not val.is_integer():
                raise ValueError
            val = int(val)
        except ValueError:
            problems.append(f"line {line}: {col}={raw!r} is not an integer")
            ok[k] = False
            continue
        if (lo is not None and val < lo) or (hi is not None and val > hi):
            rng_txt = f"[{lo if lo is not None else '-inf'}, {hi if hi is not None else 'inf'}]"
            problems.append(f"line {line}: {col}={val} outside {rng_txt}")
            ok[k] = False
        out[k] = val
    return out, ok


def _check_ids(df, col, known: dict, problems, ok):
    for k, a in enumerate(df[col]):
        if a not in known:
            problems.append(f"line {k + 2}: unknown area {a!r}")
            ok[k] = False


def read_population(path, anchor_year: int, anchor_month: int, n_months_total: int, area_ids=None):
    """Return ``(area_ids, population[n_areas, n_months_total])``.

    Area order follows first appearance in the file unless ``area_ids`` is
    given. Every (area, calendar year) the horizon touches must be present.
    """
    df = _read_csv(path, POPULATION_HEADER)
    problems: list[str] = []
    years, ok_y = _int_column(df, "year", problems)
    pops, ok_p = _int_column(df, "population", problems, lo=1)
    ok = ok_y & ok_p
    if area_ids is None:
        area_ids = tuple(dict.fromkeys(a for a in df["area_id"] if a))
    index = {a: i for i, a in enumerate(area_ids)}
    _check_ids(df, "area_id", index, problems, ok)
    need = np.unique(month_years(n_months_total, anchor_year, anchor_month))
    table = {}
    for k in np.flatnonzero(ok):
        key = (df["area_id"].iat[k], int(years[k]))
        if key in table:
            problems.append(f"line {k + 2}: duplicate population for {key[0]} {key[1]}")
        table[key] = int(pops[k])
    for a in area_ids:
        gaps = [int(y) for y in need if (a, int(y)) not in table]
        if gaps:
            problems.append(f"area {a}: no population for year(s) {gaps} (needed through month {n_months_total})")
    if problems:
        raise DataError(path, problems)
    my = month_years(n_months_total, anchor_year, anchor_month)
    pop = np.array([[table[(a, int(y))] for y in my] for a in area_ids], dtype=np.int64)
    return tuple(area_ids), pop


def read_adjacency(path, area_ids) -> AdjacencyGraph:
    df = _read_csv(path, ADJACENCY_HEADER)
    index = {a: i for i, a in enumerate(area_ids)}
    problems: list[str] = []
    for k, (a, b) in enumerate(zip(df["area_a"], df["area_b"])):
        for x in (a, b):
            if x not in index:
                problems.append(f"line {k + 2}: unknown area {x!r}")
        if a == b:
            problems.append(f"line {k + 2}: self-loop on {a!r}")
    if problems:
        raise DataError(path, problems)
    try:
        return from_edges(zip(df["area_a"], df["area_b"]), area_ids)
    except GraphError as exc:
        raise DataError(path, [str(exc)]) from exc


def read_counts(path, area_ids, first_month: int, last_month: int, require_complete: bool = True) -> np.ndarray:
    """Counts for 1-based months ``first_month..last_month`` as a float array
    ``(n_areas, last_month - first_month + 1)``; absent cells are NaN unless
    ``require_complete``."""
    df = _read_csv(path, COUNTS_HEADER)
    index = {a: i for i, a in enumerate(area_ids)}
    problems: list[str] = []
    months, ok_m = _int_column(df, "month_index", problems, lo=first_month, hi=last_month)
    deaths, ok_d = _int_column(df, "deaths", problems, lo=0)
    ok = ok_m & ok_d
    _check_ids(df, "area_id", index, problems, ok)
    out = np.full((len(area_ids), last_month - first_month + 1), np.nan)
    for k in np.flatnonzero(ok):
        i, m = index[df["area_id"].iat[k]], months[k] - first_month
        if not np.isnan(out[i, m]):
            problems.append(f"line {k + 2}: duplicate row for {df['area_id'].iat[k]} month {months[k]}")
        out[i, m] = deaths[k]
    if require_complete and not problems:
        miss = np.argwhere(np.isnan(out))
        for i, m in miss[:200]:
            problems.append(f"missing count for {area_ids[i]} month {m + first_month}")
        if len(miss) > 200:
            problems.append(f"... {len(miss) - 200} further missing cells")
    if problems:
        raise DataError(path, problems)
    return out


# --- configuration ---


@dataclass
class RunConfig:
    counts: str | None = None
    population: str | None = None
    adjacency: str | None = None
    crisis_counts: str | None = None
    out_dir: str = "boem_out"
    draws: str | None = None
    n_months_train: int = 24
    n_months_total: int = 60
    anchor_year: int = 2018
    anchor_month: int = 1
    n_chains: int = 8
    n_iterations: int = 80_000
    n_burnin: int = 40_000
    thin: int = 10
    seed: int = 0
    n_jobs: int = 1
    adapt_target: float = 0.44
    adapt_window: int = 50
    scale_alpha: float = 1.0
    scale_v: float = 1.0
    scale_u: float = 1.0
    scale_kappa: float = 1.0
    scale_omega: float = 1.0
    ppd_samples: int | None = None
    compact: bool = False
    # validate mode
    n_replications: int = 20
    reference_rate: float | None = None
    alpha_true: float = 0.1
    tau_true: float = 1.0
    sd_v_true: float = 0.1
    sd_omega_true: float = 0.5
    rho_true: float = 0.2
    sd_kappa_true: float = 0.05
    oracle: bool = False
    base_dir: str = field(default=".", repr=False)

    def path(self, name: str) -> Path | None:
        value = getattr(self, name)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def validate(self) -> None:
        if not 0 < self.n_months_train < self.n_months_total:
            raise ConfigError(
                f"need 0 < n_months_train < n_months_total, got {self.n_months_train} and {self.n_months_total}"
            )
        if not 1 <= self.anchor_month <= 12:
            raise ConfigError("anchor_month must be in 1..12")
        for name in ("n_chains", "n_iterations", "thin", "n_jobs", "n_replications"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.n_burnin < self.n_iterations:
            raise ConfigError("need 0 <= n_burnin < n_iterations")
        if self.ppd_samples is not None and self.ppd_samples < 1:
            raise ConfigError("ppd_samples must be positive")


_CONFIG_FIELDS = {f.name: f for f in fields(RunConfig) if f.name != "base_dir"}


def _coerce(name, value):
    kind = str(_CONFIG_FIELDS[name].type)
    if value is None:
        return None
    try:
        if kind.startswith("int"):
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError
            return int(float(value))
        if kind.startswith("float"):
            return float(value)
        if kind == "bool":
            if isinstance(value, bool):
                return value
            if str(value).lower() in ("true", "1", "yes"):
                return True
            if str(value).lower() in ("false", "0", "no"):
                return False
            raise ValueError
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot interpret {value!r} as {kind}") from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Flat YAML key/value file plus overrides (overrides win). Relative paths
    in the file resolve against the file's directory; paths given as overrides
    resolve against the working directory."""
    values: dict = {}
    base = "."
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: expected key: value pairs")
        unknown = sorted(set(raw) - set(_CONFIG_FIELDS))
        if unknown:
            raise ConfigError(f"{p}: unknown key(s) {unknown}")
        for k, v in raw.items():
            if isinstance(v, (dict, list)):
                raise ConfigError(f"{p}: {k} must be a scalar value")
            values[k] = _coerce(k, v)
        base = str(p.parent)
    cfg = RunConfig(**values, base_dir=base)
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in _CONFIG_FIELDS:
            raise ConfigError(f"unknown setting {k}")
        v = _coerce(k, v)
        if k in ("counts", "population", "adjacency", "crisis_counts", "out_dir", "draws"):
            v = str(Path(v).resolve())
        setattr(cfg, k, v)
    cfg.validate()
    return cfg


# --- draws file ---

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def draw_columns(area_ids, n_months: int, compact: bool = False) -> list[str]:
    cols = ["chain", "iteration", "alpha", "rho", *SD_NAMES]
    if compact:
        return cols
    cols += [f"u.{a}" for a in area_ids]
    cols += [f"v.{a}" for a in area_ids]
    cols += [f"kappa.{m}" for m in range(1, n_months + 1)]
    cols += [f"omega.{a}.{m}" for a in area_ids for m in range(1, n_months + 1)]
    return cols


def _zip_array(zf, name, arr):
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    info = zipfile.ZipInfo(name + ".npy", date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, buf.getvalue())


def write_draws(path, samples: PosteriorSamples, reference_rate: float, compact: bool = False, extra: dict | None = None):
    """One row per saved draw (chain-major). The file is an uncompressed
    ``.npz`` with fixed timestamps, so identical draws give identical bytes.
    ``extra`` adds named arrays (e.g. PPD summaries in compact mode)."""
    C, S = samples.n_chains, samples.n_draws
    n, T = len(samples.area_ids), samples.n_months_train
    rows = C * S
    parts = [
        np.repeat(np.arange(1, C + 1), S)[:, None].astype(float),
        samples.iteration.reshape(rows, 1).astype(float),
        samples.alpha.reshape(rows, 1),
        samples.rho.reshape(rows, 1),
        samples.sds.reshape(rows, 5),
    ]
    if not compact:
        parts += [samples.u.reshape(rows, n), samples.v.reshape(rows, n),
                  samples.kappa.reshape(rows, T), samples.omega.reshape(rows, n * T)]
    values = np.hstack(parts)
    meta = {
        "area_ids": list(samples.area_ids),
        "n_months_train": T,
        "n_chains": C,
        "n_draws": S,
        "seeds": [int(s) for s in samples.seeds],
        "acceptance": [dict(a) for a in samples.acceptance],
        "reference_rate": float(reference_rate),
        "compact": bool(compact),
    }
    columns = np.array(draw_columns(samples.area_ids, T, compact))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as zf:
        _zip_array(zf, "columns", columns)
        _zip_array(zf, "values", values)
        _zip_array(zf, "meta", np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8))
        for k, v in sorted((extra or {}).items()):
            _zip_array(zf, f"extra_{k}", np.asarray(v))


@dataclass
class DrawsFile:
    columns: list[str]
    values: np.ndarray
    meta: dict
    extra: dict

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def by_chain(self, name: str) -> np.ndarray:
        C, S = self.meta["n_chains"], self.meta["n_draws"]
        return self.column(name).reshape(C, S)

    def samples(self) -> PosteriorSamples:
        if self.meta.get("compact"):
            raise DataError("draws", ["compact draws file holds hyperparameters only"])
        C, S = self.meta["n_chains"], self.meta["n_draws"]
        ids = tuple(self.meta["area_ids"])
        n, T = len(ids), self.meta["n_months_train"]
        v = self.values.reshape(C, S, -1)
        k = 4 + len(SD_NAMES)
        take = lambda w: v[:, :, k: k + w]  # noqa: E731
        u = take(n).copy()
        k += n
        vv = take(n).copy()
        k += n
        kap = take(T).copy()
        k += T
        om = take(n * T).reshape(C, S, n, T).copy()
        return PosteriorSamples(
            area_ids=ids,
            n_months_train=T,
            iteration=v[:, :, 1].astype(np.int64),
            alpha=v[:, :, 2].copy(),
            rho=v[:, :, 3].copy(),
            sds=v[:, :, 4:9].copy(),
            u=u, v=vv, kappa=kap, omega=om,
            seeds=tuple(self.meta["seeds"]),
            acceptance=tuple(self.meta["acceptance"]),
        )


def read_draws(path) -> DrawsFile:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"draws file not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            columns = [str(c) for c in z["columns"]]
            values = z["values"]
            meta = json.loads(bytes(z["meta"]).decode())
            extra = {k[len("extra_"):]: z[k] for k in z.files if k.startswith("extra_")}
    except (OSError, KeyError, ValueError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise DataError(path, [f"corrupt draws file: {exc}"]) from exc
    expected = draw_columns(meta.get("area_ids", []), meta.get("n_months_train", 0), meta.get("compact", False))
    if columns != expected or values.ndim != 2 or values.shape != (meta["n_chains"] * meta["n_draws"], len(columns)):
        raise DataError(path, ["corrupt draws file: column layout does not match its metadata"])
    return DrawsFile(columns=columns, values=values, meta=meta, extra=extra)


# --- output tables ---


def write_table(path, rows, header: list[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=header).to_csv(path, index=False, na_rep="")


def write_traces(out_dir, draws: DrawsFile) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    chain = draws.column("chain").astype(int)
    it = draws.column("iteration").astype(int)
    for name in SCALAR_PARAMS:
        p = out_dir / f"trace_{name}.csv"
        write_table(p, {"chain": chain, "iteration": it, "value": draws.column(name)}, TRACE_HEADER)
        paths.append(p)
    return paths
