"""Scenario configuration: JSON files, presets and validation."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

from .errors import ConfigurationError
from .phy import rho_for_eb_n0
from .receiver import KaEstimatorConfig, ReceiverConfig

ATOM_MODES = ("optimized", "upper", "explicit")

_RECEIVER_KEYS = {f.name for f in fields(ReceiverConfig)} - {"atom_mode", "atoms", "m_rep", "ka_estimator"}
_ESTIMATOR_KEYS = {f.name for f in fields(KaEstimatorConfig)} - {"rho_min"}


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    Ktot: int = 200
    Ka: int | str = 20                  # or "unknown"
    ka_active: int = 20                 # true activity when Ka is "unknown"
    M: int = 32
    L: int = 400
    S: int | None = None
    sparsity: float | None = None       # L/S, alternative to S
    B: int | None = None
    rate: float = 0.5
    snr_db: float | None = None         # per-symbol received power over noise_var
    ebn0_db: float | None = None
    noise_var: float = 1.0
    rho_check_db: float | None = None   # assumed minimum power when Ka is unknown; None: the true power
    CR: float = 0.0
    m_rep: int = 2
    atom_mode: str = "optimized"
    atoms: int | None = None
    ldpc_dv: int = 3
    receiver: dict = field(default_factory=dict)
    ka_estimator: dict = field(default_factory=dict)
    trials: int = 100
    seed: int = 0
    sweep: dict | None = None           # default axis for ``ura-sim sweep``: {"param", "values"}

    def __post_init__(self):
        S, B = _resolve_dims(self)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "sparsity", self.L / S)
        _validate(self)

    @property
    def p(self) -> int:
        return 2 * self.S - self.B

    @property
    def ka_known(self) -> bool:
        return self.Ka != "unknown"

    @property
    def n_active(self) -> int:
        return int(self.Ka) if self.ka_known else int(self.ka_active)

    @property
    def rho(self) -> float:
        if self.snr_db is not None:
            return self.noise_var * 10.0 ** (self.snr_db / 10.0)
        return rho_for_eb_n0(self.ebn0_db, self.S, self.L, self.noise_var)

    @property
    def rho_check(self) -> float:
        if self.rho_check_db is None:
            return self.rho
        return self.noise_var * 10.0 ** (self.rho_check_db / 10.0)

    def receiver_config(self) -> ReceiverConfig:
        est = None
        if not self.ka_known:
            est = KaEstimatorConfig(rho_min=self.rho_check, **self.ka_estimator)
        return ReceiverConfig(atom_mode=self.atom_mode, atoms=self.atoms, m_rep=self.m_rep,
                              ka_estimator=est, **self.receiver)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def resolved(self) -> dict:
        """``to_dict`` plus derived quantities and the receiver config with defaults filled in."""
        d = self.to_dict()
        d["receiver_resolved"] = dataclasses.asdict(self.receiver_config())
        d.update(p=self.p, rho=self.rho, rho_check=self.rho_check, n_active=self.n_active)
        return d

    def replace(self, **changes) -> ScenarioConfig:
        """Copy with changes; dotted keys (``receiver.crp``) reach the sub-configs.

        Setting one of ``S``/``sparsity``/``B`` drops the others so they are re-derived;
        a new ``L`` keeps ``L/S`` unless ``S`` is set too.  Setting one of
        ``snr_db``/``ebn0_db`` clears the other.
        """
        d = self.to_dict()
        d["receiver"] = dict(d["receiver"])
        d["ka_estimator"] = dict(d["ka_estimator"])
        for key, value in changes.items():
            head, _, tail = key.partition(".")
            if tail:
                if head not in ("receiver", "ka_estimator"):
                    raise ConfigurationError(f"unknown config section {head!r}")
                d[head][tail] = value
                continue
            if head not in d:
                raise ConfigurationError(f"unknown config field {head!r}")
            d[head] = value
            if head in ("S", "sparsity"):
                d.update({k: None for k in ("S", "sparsity", "B") if k != head})
            elif head == "B":
                d.update(S=None, sparsity=None)
            elif head == "L" and "S" not in changes and "B" not in changes:
                d.update(S=None, B=None)
            elif head == "snr_db" and value is not None:
                d["ebn0_db"] = None
            elif head == "ebn0_db" and value is not None:
                d["snr_db"] = None
        return ScenarioConfig(**d)


def _resolve_dims(c: ScenarioConfig) -> tuple[int, int]:
    if not 0.0 < c.rate < 1.0:
        raise ConfigurationError(f"rate={c.rate} must lie in (0, 1)")
    S = c.S
    if c.sparsity is not None:
        s_sp = c.L / c.sparsity
        if abs(s_sp - round(s_sp)) > 1e-9:
            raise ConfigurationError(f"L/sparsity = {s_sp} is not an integer")
        if S is not None and S != round(s_sp):
            raise ConfigurationError(f"S={S} contradicts L/sparsity={s_sp}")
        S = int(round(s_sp))
    B = c.B
    if S is None and B is None:
        raise ConfigurationError("give S (or sparsity) or B")
    if S is None:
        s_f = B / (2.0 * c.rate)
        if abs(s_f - round(s_f)) > 1e-9:
            raise ConfigurationError(f"B={B} at rate {c.rate} gives non-integer S={s_f}")
        S = int(round(s_f))
    if B is None:
        b_f = 2.0 * S * c.rate
        if abs(b_f - round(b_f)) > 1e-9:
            raise ConfigurationError(f"S={S} at rate {c.rate} gives non-integer B={b_f}")
        B = int(round(b_f))
    if abs(B / c.rate - 2 * S) > 1e-9:
        raise ConfigurationError(
            f"inconsistent S={S}, B={B}, rate={c.rate}: need S=(B+p)/2 with p=B(1-rate)/rate")
    return int(S), int(B)


def _validate(c: ScenarioConfig) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigurationError(msg)

    for name in ("Ktot", "M", "L", "S", "B", "trials", "m_rep", "ldpc_dv"):
        v = getattr(c, name)
        need(isinstance(v, int) and not isinstance(v, bool) and v >= 1, f"{name}={v!r} must be a positive integer")
    need(isinstance(c.seed, int) and c.seed >= 0, f"seed={c.seed!r} must be a non-negative integer")
    need(c.S < c.L, f"need S < L (S={c.S}, L={c.L})")
    need(c.S / c.L <= 0.5, f"sparsity ratio S/L={c.S / c.L:.3f} exceeds 0.5")
    need(c.Ktot <= math.comb(c.L, c.S), f"Ktot={c.Ktot} exceeds binom(L, S)")
    need(c.B % 2 == 0 and c.p % 2 == 0 and c.p >= 2, f"B={c.B} and p={c.p} must be even with p >= 2")
    if c.ka_known:
        need(isinstance(c.Ka, int) and 0 <= c.Ka <= c.Ktot, f"Ka={c.Ka!r} must be 'unknown' or in [0, Ktot]")
    need(isinstance(c.ka_active, int) and 0 <= c.ka_active <= c.Ktot, f"ka_active={c.ka_active!r} outside [0, Ktot]")
    need((c.snr_db is None) != (c.ebn0_db is None), "give exactly one of snr_db and ebn0_db")
    need(c.noise_var > 0, f"noise_var={c.noise_var} must be positive")
    need(0.0 <= c.CR <= 1.0, f"CR={c.CR} must lie in [0, 1]")
    need(c.atom_mode in ATOM_MODES, f"atom_mode={c.atom_mode!r} not in {ATOM_MODES}")
    need(c.atom_mode != "explicit" or (c.atoms or 0) >= 1, "atom_mode 'explicit' needs atoms >= 1")
    bad = set(c.receiver) - _RECEIVER_KEYS
    need(not bad, f"unknown receiver keys: {sorted(bad)}")
    bad = set(c.ka_estimator) - _ESTIMATOR_KEYS
    need(not bad, f"unknown ka_estimator keys: {sorted(bad)}")
    if c.sweep is not None:
        need(isinstance(c.sweep, dict) and set(c.sweep) <= {"param", "values", "trials"}
             and "param" in c.sweep and isinstance(c.sweep.get("values"), list) and c.sweep["values"],
             "sweep must be {\"param\": name, \"values\": [...]}")
        need(str(c.sweep["param"]).partition(".")[0] in _FIELDS, f"sweep parameter {c.sweep['param']!r} is not a scenario field")
    try:
        c.receiver_config()
    except TypeError as exc:  # pragma: no cover - keys are checked above
        raise ConfigurationError(str(exc)) from None


FIELD_NAMES = tuple(f.name for f in fields(ScenarioConfig))
_FIELDS = set(FIELD_NAMES)


def parse_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        lines = text.splitlines()
        ctx = lines[exc.lineno - 1] if 0 < exc.lineno <= len(lines) else ""
        raise ConfigurationError(
            f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {ctx}\n    {' ' * (exc.colno - 1)}^") from None
    if not isinstance(obj, dict):
        raise ConfigurationError(f"{source}: top level must be a JSON object")
    unknown = set(obj) - set(FIELD_NAMES)
    if unknown:
        raise ConfigurationError(f"{source}: unknown keys {sorted(unknown)}")
    try:
        return ScenarioConfig(**obj)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{source}: {exc}") from None


def preset_names() -> list[str]:
    root = resources.files("ura_sim") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> ScenarioConfig:
    path = resources.files("ura_sim") / "presets" / f"{name}.json"
    if not path.is_file():
        raise ConfigurationError(f"no preset named {name!r} (have {', '.join(preset_names())})")
    return parse_scenario(path.read_text(), f"preset {name}")


def load_scenario(path) -> ScenarioConfig:
    """Read a scenario JSON file; a bare preset name is accepted too."""
    p = Path(path)
    if not p.exists() and str(path) in preset_names():
        return load_preset(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc.strerror}") from None
    return parse_scenario(text, str(path))


def dump_scenario(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=False)


def coerce_value(cfg: ScenarioConfig, name: str, text: str):
    """Parse a command-line value for field ``name`` (JSON literal, else bare string)."""
    head = name.partition(".")[0]
    if head not in FIELD_NAMES:
        raise ConfigurationError(f"{name!r} is not a scenario field")
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text
