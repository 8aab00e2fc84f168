"""Run configuration, persistence and experiment orchestration.

Config files are UTF-8 ``section.key=value`` lines; ``#`` starts a comment.
Sections are ``env``, ``policy``, ``reward``, ``grpo`` and ``eval``; the
top-level keys are ``master_seed`` and ``output_dir``. Arrays are written as
comma-separated floats with ``;`` between matrix rows.
"""
from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from conradlab import __version__, calib
from conradlab.baselines import ProbeConfig, compare_baselines
from conradlab.grpo import EVAL_BASE, EvalResult, GrpoConfig, TrainState, evaluate_policy, train
from conradlab.policy import (
    INVALID, Kind, PARAM_NAMES, PolicyConfig, PolicyParams, Scenario, head_log_probs,
    init_policy,
)
from conradlab.reward import RewardConfig
from conradlab.simgen import EnvConfig, InvalidConfig, shift_distribution
from conradlab.triage import DEFAULT_THRESHOLDS, clinical_table, risk_coverage_table, sentence_entries

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
COMMANDS = ("train", "eval", "filter", "baselines", "ood")

# held-out index range for probe (baseline) training, apart from GRPO studies
PROBE_TRAIN_BASE = 30_000_000


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class MissingArtifact(FileNotFoundError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    num_eval_studies: int = 1000
    num_bins: int = 10
    thresholds: tuple = DEFAULT_THRESHOLDS
    ood_norm: float = 2.0
    self_consistency_k: int = 10
    num_probe_train: int = 3000
    num_clinical_reports: int = 50
    num_raters: int = 3
    rater_noise: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        if self.num_eval_studies < 1:
            raise InvalidConfig("num_eval_studies", "must be >= 1")
        if self.num_bins < 1:
            raise InvalidConfig("num_bins", "must be >= 1")
        if not self.thresholds or any(not 0 <= t <= 1 for t in self.thresholds):
            raise InvalidConfig("thresholds", "must be a non-empty list of values in [0, 1]")
        if not (math.isfinite(self.ood_norm) and self.ood_norm >= 0):
            raise InvalidConfig("ood_norm", "must be finite and >= 0")
        if self.self_consistency_k < 1:
            raise InvalidConfig("self_consistency_k", "must be >= 1")
        if self.num_probe_train < 10:
            raise InvalidConfig("num_probe_train", "must be >= 10")
        if self.num_clinical_reports < 1:
            raise InvalidConfig("num_clinical_reports", "must be >= 1")
        if self.num_raters < 1:
            raise InvalidConfig("num_raters", "must be >= 1")
        if not 0 <= self.rater_noise <= 1:
            raise InvalidConfig("rater_noise", "must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    master_seed: int = 0
    output_dir: str = "runs/default"

    def __eq__(self, other):
        if not isinstance(other, RunConfig):
            return NotImplemented
        return serialize_config(self) == serialize_config(other)

    __hash__ = None

    @property
    def scenario(self) -> Scenario:
        return self.policy.scenario

    def ood_offset(self) -> np.ndarray:
        d = self.env.feature_dim
        return np.full(d, self.eval.ood_norm / math.sqrt(d))


SECTIONS = {"env": EnvConfig, "policy": PolicyConfig, "reward": RewardConfig,
            "grpo": GrpoConfig, "eval": EvalConfig}
# config key -> dataclass field, where they differ
_KEY_ALIASES = {("reward", "lambda"): "lam"}
_FIELD_KEYS = {(s, f): k for (s, k), f in _KEY_ALIASES.items()}


def _fmt_float(x: float) -> str:
    return repr(float(x))


def _format_value(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, Scenario):
        return value.value
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return _fmt_float(value)
    if isinstance(value, np.ndarray):
        if value.ndim == 2:
            return ";".join(",".join(_fmt_float(v) for v in row) for row in value)
        return ",".join(_fmt_float(v) for v in value)
    if isinstance(value, tuple):
        return ",".join(_fmt_float(v) for v in value)
    return str(value)


def _parse_value(kind: str, text: str):
    text = text.strip()
    if kind == "int":
        return int(text)
    if kind == "float":
        v = float(text)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v
    if kind == "str":
        return text
    if kind == "Scenario":
        return Scenario(text)
    if kind == "Optional[int]":
        return None if text == "auto" else int(text)
    if kind == "tuple":
        return tuple(float(v) for v in text.split(",")) if text else ()
    if kind == "Optional[np.ndarray]":
        if text == "auto":
            return None
        rows = [[float(v) for v in row.split(",")] for row in text.split(";")]
        arr = np.array(rows)
        return arr if ";" in text else arr[0]
    raise TypeError(f"unsupported field type {kind}")


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section, cls in SECTIONS.items():
        obj = getattr(cfg, section)
        for f in dataclasses.fields(cls):
            key = _FIELD_KEYS.get((section, f.name), f.name)
            lines.append(f"{section}.{key}={_format_value(getattr(obj, f.name))}")
    lines.append(f"master_seed={cfg.master_seed}")
    lines.append(f"output_dir={cfg.output_dir}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()


def parse_config(text: str) -> RunConfig:
    """Parse and validate; every error names its line."""
    values = {s: {} for s in SECTIONS}
    lines = {s: {} for s in SECTIONS}
    top = {}
    kinds = {s: {f.name: str(f.type) for f in dataclasses.fields(c)} for s, c in SECTIONS.items()}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {raw!r}", no)
        key, value = (p.strip() for p in line.split("=", 1))
        if key in ("master_seed", "output_dir"):
            try:
                top[key] = int(value) if key == "master_seed" else value
            except ValueError as e:
                raise ConfigError(f"{key}: {e}", no) from None
            if key == "master_seed" and not 0 <= top[key] < 2 ** 64:
                raise ConfigError("master_seed must be a 64-bit unsigned integer", no)
            continue
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"unknown key {key!r}", no)
        fname = _KEY_ALIASES.get((section, name), name)
        if fname not in kinds[section]:
            raise ConfigError(f"unknown key {key!r}", no)
        try:
            values[section][fname] = _parse_value(kinds[section][fname], value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{key}: bad value {value!r} ({e})", no) from None
        lines[section][fname] = no
    built = {}
    for section, cls in SECTIONS.items():
        try:
            built[section] = cls(**values[section])
        except InvalidConfig as e:
            fname = e.field if e.field in lines[section] else _KEY_ALIASES.get((section, e.field), e.field)
            raise ConfigError(f"{section}.{e}", lines[section].get(fname)) from None
    if built["policy"].seed < 0:
        raise ConfigError("policy.seed must be non-negative", lines["policy"].get("seed"))
    return RunConfig(**built, **top)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# --- checkpoints -------------------------------------------------------------

def save_checkpoint(path, state: TrainState, cfg: RunConfig) -> None:
    arrays = {}
    for prefix, p in (("policy", state.params), ("reference", state.reference)):
        for n in PARAM_NAMES:
            arrays[f"{prefix}.{n}"] = getattr(p, n)
    meta = {
        "version": CHECKPOINT_VERSION,
        "dims": [state.params.feature_dim, state.params.num_findings, state.params.max_sentences],
        "temperature": state.params.temperature,
        "scenario": cfg.scenario.value,
        "config_sha256": config_hash(cfg),
        "train_state": {"next_batch": state.next_batch, "best_probe": state.best_probe,
                        "stale_probes": state.stale_probes, "master_seed": cfg.master_seed},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path) -> tuple:
    """Returns ``(TrainState, meta)``."""
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        d, F, S = meta["dims"]

        def params(prefix):
            return PolicyParams(**{n: z[f"{prefix}.{n}"].copy() for n in PARAM_NAMES},
                                feature_dim=d, num_findings=F, max_sentences=S,
                                temperature=meta["temperature"])

        ts = meta["train_state"]
        state = TrainState(params("policy"), params("reference"), ts["next_batch"],
                           ts["best_probe"], ts["stale_probes"])
    return state, meta


# --- CSV / manifest -----------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    path = Path(path)
    path.write_text(buf.getvalue(), encoding="utf-8", newline="")
    return path


def write_manifest(out: Path, cfg: RunConfig, command: str, files) -> Path:
    """Write config.txt and manifest.json. Commands run into the same
    directory with the same config accumulate in one manifest."""
    text = serialize_config(cfg)
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    path = out / "manifest.json"
    commands = {}
    if path.is_file():
        old = json.loads(path.read_text(encoding="utf-8"))
        if old.get("config_sha256") == digest:
            commands = old.get("commands", {})
    commands[command] = {
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "files": sorted(Path(f).name for f in files),
    }
    (out / "config.txt").write_text(text, encoding="utf-8", newline="")
    manifest = {"config_sha256": digest, "master_seed": cfg.master_seed, "version": __version__,
                "commands": commands}
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def verify_manifest(out) -> bool:
    out = Path(out)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    data = (out / "config.txt").read_bytes()
    return manifest["config_sha256"] == hashlib.sha256(data).hexdigest()


# --- experiments ---------------------------------------------------------------

@dataclass
class RunArtifacts:
    out_dir: Path
    files: list
    manifest: Path
    summary: dict = field(default_factory=dict)


def _policies(cfg: RunConfig, checkpoint) -> tuple:
    state, meta = load_checkpoint(checkpoint)
    if meta["scenario"] != cfg.scenario.value:
        raise ConfigError(f"checkpoint was trained for {meta['scenario']}, config asks for "
                          f"{cfg.scenario.value}")
    base = init_policy(cfg.policy, cfg.env.feature_dim, cfg.env.num_findings, cfg.env.max_sentences)
    if state.params.w_in.shape != base.w_in.shape:
        raise ConfigError("checkpoint dimensions do not match the config")
    return base, state.params


def _eval_indices(cfg: RunConfig):
    return range(EVAL_BASE, EVAL_BASE + cfg.eval.num_eval_studies)


def unimodal_fraction(params: PolicyParams, res: EvalResult) -> float:
    """Share of confidence steps whose distribution over the 11 levels is
    unimodal (rises to a single peak, then falls)."""
    states = [s.state for r in res.rollouts for s in r.steps if s.kind == Kind.CONFIDENCE]
    if not states:
        return float("nan")
    p = np.exp(head_log_probs(params, np.array(states), Kind.CONFIDENCE))[:, :INVALID]
    d = np.sign(np.diff(p, axis=1))
    ok = 0
    for row in d:
        row = row[row != 0]
        # at most one + -> - transition and no - -> + transition
        ok += not np.any((row[:-1] < 0) & (row[1:] > 0))
    return ok / len(p)


def _safe(fn, records) -> float:
    try:
        return fn(records)
    except ValueError:
        return float("nan")


def _summary_row(name, params, res: EvalResult, scenario, num_bins):
    rec = res.records
    if scenario == Scenario.REPORT:
        disc, extra = _safe(calib.pearson, rec), [_safe(calib.spearman, rec)]
    else:
        disc, extra = _safe(calib.auroc, rec), []
    return [name, len(rec), calib.ece(rec, num_bins), disc, *extra, calib.brier(rec),
            res.mean_oracle_score, unimodal_fraction(params, res)]


def _summary_header(scenario):
    if scenario == Scenario.REPORT:
        return ["policy", "n_records", "ece", "pearson", "spearman", "brier",
                "mean_oracle_score", "unimodal_fraction"]
    return ["policy", "n_records", "ece", "auroc", "brier", "mean_oracle_score", "unimodal_fraction"]


def _write_eval_tables(out: Path, prefix: str, evals, scenario, num_bins) -> list:
    files = []
    rows = [_summary_row(name, params, res, scenario, num_bins) for name, params, res in evals]
    files.append(write_csv(out / f"{prefix}_summary.csv", _summary_header(scenario), rows))
    for name, _, res in evals:
        bins = calib.reliability_curve(res.records, num_bins)
        files.append(write_csv(out / f"{prefix}_reliability_{name}.csv",
                               ["bin_lo", "bin_hi", "count", "mean_conf", "mean_target"],
                               [[b.lower, b.upper, b.count, b.mean_confidence, b.mean_target]
                                for b in bins]))
        hist = calib.confidence_histogram(res.records)
        files.append(write_csv(out / f"{prefix}_histogram_{name}.csv", ["level", "count"],
                               list(enumerate(hist.tolist()))))
    return files


def run_experiment(cfg: RunConfig, command: str, out_dir=None, checkpoint=None) -> RunArtifacts:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(checkpoint) if checkpoint else out / "checkpoint.npz"
    seed = cfg.master_seed
    scenario = cfg.scenario
    files, summary = [], {}

    if command == "train":
        _, history = train(cfg.env, cfg.policy, cfg.reward, cfg.grpo, seed)
        save_checkpoint(ckpt, history.state, cfg)
        files.append(ckpt)
        files.append(write_csv(out / "history.csv",
                               ["batch", "mean_reward", "mean_kl", "clip_fraction", "probe_ece"],
                               [[b.batch, b.mean_reward, b.mean_kl, b.clip_fraction, b.probe_ece]
                                for b in history.batches]))
        summary["batches"] = len(history.batches)

    elif command in ("eval", "ood"):
        base, trained = _policies(cfg, ckpt)
        env = cfg.env if command == "eval" else shift_distribution(cfg.env, cfg.ood_offset())
        evals = [(name, p, evaluate_policy(p, env, scenario, _eval_indices(cfg), seed, "eval"))
                 for name, p in (("untrained", base), ("trained", trained))]
        files += _write_eval_tables(out, command, evals, scenario, cfg.eval.num_bins)
        for name, _, res in evals:
            summary[name] = {"ece": calib.ece(res.records, cfg.eval.num_bins),
                             "mean_oracle_score": res.mean_oracle_score}
        if command == "eval" and scenario == Scenario.REPORT:
            n = cfg.eval.num_clinical_reports
            rows = []
            for name, _, res in evals:
                sub = EvalResult(res.studies[:n], res.rollouts[:n], res.records[:n], res.report_scores[:n])
                for r in clinical_table(sub, cfg.eval.num_raters, cfg.eval.rater_noise, seed,
                                        cfg.eval.num_bins):
                    rows.append([r.aggregation, name, r.correlation, r.auroc, r.ece])
            files.append(write_csv(out / "clinical.csv",
                                   ["aggregation", "policy", "spearman", "auroc", "ece"], rows))

    elif command == "filter":
        if scenario != Scenario.SENTENCE:
            raise ConfigError("filter needs policy.scenario=SentenceLevel")
        base, trained = _policies(cfg, ckpt)
        for name, p in (("untrained", base), ("trained", trained)):
            res = evaluate_policy(p, cfg.env, scenario, _eval_indices(cfg), seed, "eval")
            truths = {s.id: s.truth for s in res.studies}
            table = risk_coverage_table(sentence_entries(res), cfg.eval.thresholds, truths)
            files.append(write_csv(
                out / f"filter_{name}.csv",
                ["threshold", "n_sentences", "precision", "coverage", "mean_report_score_after_filtering"],
                [[r.threshold, r.retained_count, r.precision, r.coverage, r.mean_report_score]
                 for r in table]))
            summary[name] = [dataclasses.asdict(r) for r in table]

    elif command == "baselines":
        if scenario != Scenario.REPORT:
            raise ConfigError("baselines needs policy.scenario=ReportLevel")
        base, trained = _policies(cfg, ckpt)
        probe_idx = range(PROBE_TRAIN_BASE, PROBE_TRAIN_BASE + cfg.eval.num_probe_train)
        rows, _ = compare_baselines(base, trained, cfg.env, _eval_indices(cfg), probe_idx, seed,
                                    cfg.eval.self_consistency_k, cfg.eval.num_bins,
                                    ProbeConfig(seed=seed))
        files.append(write_csv(out / "baselines.csv",
                               ["method", "ece", "correlation", "mean_oracle_score"],
                               [[r.method, r.ece, r.correlation, r.mean_oracle_score] for r in rows]))
        summary["rows"] = [dataclasses.asdict(r) for r in rows]

    manifest = write_manifest(out, cfg, command, files)
    return RunArtifacts(out, files, manifest, summary)
