"""Seeded Monte Carlo execution, sweeps and result files."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .codebook import Codebook, generate_codebook
from .config import FIELD_NAMES, ScenarioConfig
from .errors import ConfigurationError
from .fec import LdpcCode, ldpc_encode, make_ldpc
from .metrics import TrialMetrics, aggregate, trial_metrics
from .phy import Scene, channel_apply, draw_scene, encode_users
from .receiver import TrialResult, receive

log = logging.getLogger(__name__)

COLUMNS = ("sweep_param", "sweep_value", "trials", "p_md", "p_md_stderr", "p_fa", "p_fa_stderr",
           "p_e", "p_e_stderr", "ser", "ser_stderr", "k_est_mean", "runtime_ms_mean", "seed_base")

STREAMS = ("codebook", "assign", "bits", "channel", "noise", "dl")


def stream(base: int, name: str, *index: int) -> np.random.Generator:
    """Independent generator for a named stage, keyed by ``(name, *index)``."""
    return np.random.default_rng(np.random.SeedSequence(base, spawn_key=(zlib.crc32(name.encode()), *index)))


@lru_cache(maxsize=16)
def _code(B: int, rate: float, dv: int, base: int) -> LdpcCode:
    return make_ldpc(B, rate, stream(base, "ldpc"), dv=dv)


def scenario_code(cfg: ScenarioConfig) -> LdpcCode:
    """The LDPC code of a scenario: drawn once per base seed and shared by all trials."""
    return _code(cfg.B, cfg.rate, cfg.ldpc_dv, cfg.seed)


@dataclass
class TrialRecord:
    index: int
    result: TrialResult | None
    metrics: TrialMetrics | None
    error: str | None = None


@dataclass
class TrialInputs:
    code: LdpcCode
    codebook: Codebook
    scene: Scene
    Y: np.ndarray


def build_trial(cfg: ScenarioConfig, seed: int | None = None, trial: int = 0) -> TrialInputs:
    """Transmitter and channel side of one trial; receiver settings play no part."""
    base = cfg.seed if seed is None else seed
    code = _code(cfg.B, cfg.rate, cfg.ldpc_dv, base)
    cb = generate_codebook(cfg.L, cfg.S, cfg.Ktot, stream(base, "codebook", trial))
    scene = draw_scene(cb, cfg.n_active, cfg.M, cfg.B, cfg.rho, cfg.noise_var, CR=cfg.CR, m_rep=cfg.m_rep,
                       rng_assign=stream(base, "assign", trial), rng_bits=stream(base, "bits", trial),
                       rng_channel=stream(base, "channel", trial))
    X = encode_users(scene.bits, code, cb, scene.codewords)
    Y = channel_apply(scene, X, stream(base, "noise", trial)).Y
    return TrialInputs(code, cb, scene, Y)


def run_trial(cfg: ScenarioConfig, seed: int | None = None, trial: int = 0,
              timing: bool = False) -> tuple[TrialResult, TrialMetrics]:
    """One end-to-end trial.  All randomness comes from ``(seed, trial)``."""
    base = cfg.seed if seed is None else seed
    inp = build_trial(cfg, base, trial)
    code, scene = inp.code, inp.scene
    Ka = cfg.n_active
    t0 = time.perf_counter()
    res = receive(inp.Y, inp.codebook, code, cfg.receiver_config(), cfg.noise_var,
                  Ka if cfg.ka_known else None, stream(base, "dl", trial))
    runtime = (time.perf_counter() - t0) * 1e3 if timing else None
    met = trial_metrics(scene.codewords, scene.bits, res.codewords, res.bits, ka_known=cfg.ka_known,
                        det_parity_errors=res.parity_errors,
                        truth_coded=ldpc_encode(code, scene.bits) if Ka else np.zeros((0, code.n), np.uint8),
                        det_coded=ldpc_encode(code, res.bits) if len(res.bits) else np.zeros((0, code.n), np.uint8),
                        K_est=res.K_est, runtime_ms=runtime)
    return res, met


def _safe_trial(args) -> TrialRecord:
    cfg, seed, trial, timing = args
    try:
        res, met = run_trial(cfg, seed, trial, timing)
        return TrialRecord(trial, res, met)
    except Exception as exc:  # recorded and skipped in aggregation
        return TrialRecord(trial, None, None, f"trial {trial}: {type(exc).__name__}: {exc}")


def run_trials(cfg: ScenarioConfig, trials: int | None = None, seed: int | None = None,
               workers: int = 1, timing: bool = False, keep_results: bool = False) -> list[TrialRecord]:
    """Run trials ``0..n-1``; the returned list is ordered by trial index whatever ``workers`` is."""
    n = cfg.trials if trials is None else trials
    base = cfg.seed if seed is None else seed
    jobs = [(cfg, base, t, timing) for t in range(n)]
    if workers <= 1 or n <= 1:
        out = [_safe_trial(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_safe_trial, jobs, chunksize=max(1, n // (4 * workers))))
    out.sort(key=lambda r: r.index)
    if not keep_results:
        for r in out:
            r.result = None
    return out


def summarize(records: list[TrialRecord], seed: int, param: str = "", value="") -> dict:
    ok = [r.metrics for r in records if r.metrics is not None]
    failed = [r.error for r in records if r.error is not None]
    for e in failed:
        log.warning("failed %s", e)
    if not ok:
        raise RuntimeError(f"all {len(records)} trials failed; first: {failed[0] if failed else '?'}")
    s = aggregate(ok, failed=len(failed))
    row = {"sweep_param": param, "sweep_value": value, "trials": s.trials}
    for k in COLUMNS[3:-1]:
        row[k] = getattr(s, k)
    row["seed_base"] = seed
    row["failed"] = s.failed
    row["detection_ratio"] = s.detection_ratio
    return row


def run_point(cfg: ScenarioConfig, trials: int | None = None, seed: int | None = None,
              workers: int = 1, timing: bool = False, param: str = "", value="") -> dict:
    base = cfg.seed if seed is None else seed
    recs = run_trials(cfg, trials, base, workers, timing)
    return summarize(recs, base, param, value)


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple
    trials: int | None = None

    def __post_init__(self):
        head = self.param.partition(".")[0]
        if head not in FIELD_NAMES:
            raise ConfigurationError(f"sweep parameter {self.param!r} is not a scenario field")
        if not self.values:
            raise ConfigurationError("sweep needs at least one value")


def run_sweep(cfg: ScenarioConfig, sweep: SweepSpec, seed: int | None = None, workers: int = 1,
              timing: bool = False, progress=None) -> list[dict]:
    """One aggregated row per sweep value, in the order given."""
    base = cfg.seed if seed is None else seed
    points = [cfg.replace(**{sweep.param: v}) for v in sweep.values]  # validate all before running
    rows = []
    for i, (v, pc) in enumerate(zip(sweep.values, points)):
        t0 = time.perf_counter()
        rows.append(run_point(pc, sweep.trials, base, workers, timing, sweep.param, v))
        log.info("point %d/%d %s=%r done in %.1f s", i + 1, len(points), sweep.param, v,
                 time.perf_counter() - t0)
        if progress is not None:
            progress(i + 1, len(points), rows[-1])
    return rows


# --------------------------------------------------------------------------
# result files
# --------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def format_results(rows: list[dict], fmt: str = "csv", config: dict | None = None) -> str:
    if not rows:
        raise ValueError("no result rows to write")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(k)) for k in COLUMNS])
        return buf.getvalue()
    if fmt == "json":
        doc = {"columns": list(COLUMNS), "rows": [{k: r.get(k) for k in COLUMNS} for r in rows]}
        if config is not None:
            doc["config"] = config
        return json.dumps(doc, indent=2) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def write_results(rows: list[dict], path, fmt: str = "csv", config: dict | None = None) -> None:
    """CSV with the fixed column set, or JSON (rows plus the effective config)."""
    text = format_results(rows, fmt, config)
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write results to {path}: {exc.strerror}") from None


def _parse_cell(text: str):
    if text == "":
        return None
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def read_results(path) -> list[dict]:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        return json.loads(text)["rows"]
    rows = list(csv.DictReader(text.splitlines()))
    return [{k: _parse_cell(v) for k, v in r.items()} for r in rows]
