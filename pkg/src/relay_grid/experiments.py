"""Experiment presets, JSON configs, rate calibration and report output."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .markov import OutageCurve, analytical_curve, estimate_diversity, overall_outage
from .policy import PolicyKind
from .simulation import derive_seeds, sweep
from .state import DEFAULT_STATE_CAP, NetworkConfig

log = logging.getLogger(__name__)

CSV_HEADER = "snr_db,p_out,source,policy,K,LD,LE,rho,alpha,eta,ci"
DEFAULT_RATES = (0.5, 1.0, 1.5, 2.0)
PRESET_NAMES = ("fig3", "fig4", "fig5", "fig6", "table3")


class ConfigError(ValueError):
    """Malformed or invalid experiment configuration."""


# JSON key -> (NetworkConfig / PowerParams field, default or REQUIRED)
REQUIRED = object()
NETWORK_KEYS = {
    "num_relays": REQUIRED,
    "buffer_capacity_packets": REQUIRED,
    "storage_capacity_units": REQUIRED,
    "harvest_coeff": REQUIRED,
    "relay_coeff": REQUIRED,
    "mean_gain": 1.0,
    "noise_power_w": 1.0,
    "target_rate_bps_hz": 1.0,
}
SERIES_KEYS = {"label", "policy", "mode", "snr_db", "slots", "network", "vary"}
CALIBRATION_KEYS = {"snr_db", "target", "candidates", "network"}
PRESET_KEYS = {"name", "description", "seed", "warmup_slots", "network",
               "calibration", "series", "checks"}
CHECK_KINDS = {"agreement", "calibration", "diversity", "threshold", "monotone"}
MODES = {"analytical", "simulated", "both"}


def _reject_unknown(d: dict, allowed, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")


def network_from_dict(d: dict, where: str = "network") -> NetworkConfig:
    _reject_unknown(d, NETWORK_KEYS, where)
    vals = {}
    for key, default in NETWORK_KEYS.items():
        if key in d:
            vals[key] = d[key]
        elif default is REQUIRED:
            raise ConfigError(f"{where}: missing required field '{key}'")
        else:
            vals[key] = default
    try:
        return NetworkConfig.uniform(
            int(vals["num_relays"]), int(vals["buffer_capacity_packets"]),
            int(vals["storage_capacity_units"]), mean_gain=float(vals["mean_gain"]),
            harvest_coeff=float(vals["harvest_coeff"]), relay_coeff=float(vals["relay_coeff"]),
            noise_power=float(vals["noise_power_w"]),
            target_rate=float(vals["target_rate_bps_hz"]))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{where}: {err}") from None


@dataclass
class Series:
    label: str
    policy: PolicyKind
    mode: str
    snr_db: list
    slots: int
    network: dict = field(default_factory=dict)
    vary: dict | None = None


@dataclass
class ExperimentPreset:
    """A named experiment: network grid, SNR grid, policies, slot budgets
    and embedded acceptance checks.  ``raw`` keeps the JSON form."""

    name: str
    raw: dict
    network: dict
    series: list
    seed: int = 0
    warmup_slots: int = 10_000
    calibration: dict | None = None
    checks: list = field(default_factory=list)
    description: str = ""

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def __eq__(self, other):
        return isinstance(other, ExperimentPreset) and self.raw == other.raw


def preset_from_dict(d: dict) -> ExperimentPreset:
    _reject_unknown(d, PRESET_KEYS, "preset")
    for key in ("name", "network", "series"):
        if key not in d:
            raise ConfigError(f"preset: missing required field '{key}'")
    base = dict(d["network"])
    network_from_dict(base)
    if not d["series"]:
        raise ConfigError("preset: 'series' must not be empty")
    series = []
    labels = set()
    for n, s in enumerate(d["series"]):
        where = f"series[{n}]"
        _reject_unknown(s, SERIES_KEYS, where)
        for key in ("label", "snr_db"):
            if key not in s:
                raise ConfigError(f"{where}: missing required field '{key}'")
        if s["label"] in labels:
            raise ConfigError(f"{where}: duplicate label {s['label']!r}")
        labels.add(s["label"])
        snrs = [float(v) for v in s["snr_db"]]
        if not snrs:
            raise ConfigError(f"{where}: empty SNR grid")
        vary = s.get("vary")
        if vary is not None:
            _reject_unknown(vary, {"field", "values"}, f"{where}.vary")
            if vary.get("field") not in NETWORK_KEYS:
                raise ConfigError(f"{where}.vary: unknown network field {vary.get('field')!r}")
            if not vary.get("values"):
                raise ConfigError(f"{where}.vary: empty 'values'")
            if len(snrs) != 1:
                raise ConfigError(f"{where}: a varied series takes exactly one SNR")
        elif any(b <= a for a, b in zip(snrs, snrs[1:])):
            raise ConfigError(f"{where}: snr_db must be strictly increasing")
        mode = s.get("mode", "simulated")
        if mode not in MODES:
            raise ConfigError(f"{where}: mode must be one of {sorted(MODES)}")
        try:
            policy = PolicyKind(s.get("policy", "proposed"))
        except ValueError:
            raise ConfigError(f"{where}: unknown policy {s.get('policy')!r}") from None
        if mode != "simulated" and policy is not PolicyKind.PROPOSED:
            raise ConfigError(f"{where}: baselines have no analytical path")
        overrides = s.get("network", {})
        network_from_dict({**base, **overrides}, f"{where}.network")
        series.append(Series(s["label"], policy, mode, snrs, int(s.get("slots", 1_000_000)),
                             overrides, vary))
    cal = d.get("calibration")
    if cal is not None:
        _reject_unknown(cal, CALIBRATION_KEYS, "calibration")
        for key in ("snr_db", "target"):
            if key not in cal:
                raise ConfigError(f"calibration: missing required field '{key}'")
        network_from_dict({**base, **cal.get("network", {})}, "calibration.network")
    for n, c in enumerate(d.get("checks", [])):
        if c.get("kind") not in CHECK_KINDS:
            raise ConfigError(f"checks[{n}]: kind must be one of {sorted(CHECK_KINDS)}")
    return ExperimentPreset(
        name=str(d["name"]), raw=copy.deepcopy(d), network=base, series=series,
        seed=int(d.get("seed", 0)), warmup_slots=int(d.get("warmup_slots", 10_000)),
        calibration=cal, checks=list(d.get("checks", [])),
        description=str(d.get("description", "")))


def load_config(path) -> ExperimentPreset:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: line {err.lineno} column {err.colno}: {err.msg}") from None
    return preset_from_dict(d)


def save_config(preset: ExperimentPreset, path):
    Path(path).write_text(json.dumps(preset.to_dict(), indent=2) + "\n")


# ------------------------------------------------------------- presets ---

_FIG3_NET = {"num_relays": 2, "buffer_capacity_packets": 3, "storage_capacity_units": 2,
             "harvest_coeff": 0.5, "relay_coeff": 1.0, "mean_gain": 1.0}
_FIG3_CAL = {"snr_db": 8.0, "target": 0.1, "candidates": list(DEFAULT_RATES),
             "network": {}}
_SNR_0_20 = [float(s) for s in range(0, 21, 2)]


def _fig3():
    return {
        "name": "fig3",
        "description": "K=2, LD=3, LE=2, rho=0.5, alpha=1: analysis vs simulation and baselines",
        "seed": 3003,
        "network": dict(_FIG3_NET),
        "calibration": {**_FIG3_CAL, "network": dict(_FIG3_NET)},
        "series": [
            {"label": "proposed", "policy": "proposed", "mode": "both",
             "snr_db": _SNR_0_20, "slots": 10_000_000},
            {"label": "alternating", "policy": "alternating", "snr_db": _SNR_0_20,
             "slots": 2_000_000},
            {"label": "maxmin", "policy": "maxmin", "snr_db": _SNR_0_20, "slots": 2_000_000},
        ],
        "checks": [
            {"kind": "agreement", "series": "proposed", "rel_tol": 0.05, "ci_mult": 3.0},
            {"kind": "calibration", "abs_tol": 0.03},
        ],
    }


def _fig4():
    series = [{"label": f"proposed_K{k}", "policy": "proposed", "snr_db": _SNR_0_20,
               "slots": 2_000_000, "network": {"num_relays": k}} for k in (2, 3, 4, 5, 6)]
    series.append({"label": "alternating_K6", "policy": "alternating", "snr_db": _SNR_0_20,
                   "slots": 2_000_000, "network": {"num_relays": 6}})
    return {
        "name": "fig4",
        "description": "Outage vs SNR for K = 2..6 (other parameters as fig3)",
        "seed": 4004,
        "network": dict(_FIG3_NET),
        "calibration": {**_FIG3_CAL, "network": dict(_FIG3_NET)},
        "series": series,
        "checks": [{"kind": "monotone", "across": [s["label"] for s in series[:5]],
                    "ci_mult": 1.0}],
    }


def _fig5():
    alphas = (0.2, 0.4, 0.6, 0.8, 1.0)
    return {
        "name": "fig5",
        "description": "Influence of the relay power coefficient: K=6, LD=3, LE=10, rho=0.5",
        "seed": 5005,
        "network": {**_FIG3_NET, "num_relays": 6, "storage_capacity_units": 10},
        "calibration": {**_FIG3_CAL, "network": dict(_FIG3_NET)},
        "series": [{"label": f"alpha_{a:g}", "policy": "proposed", "snr_db": _SNR_0_20,
                    "slots": 500_000, "network": {"relay_coeff": a}} for a in alphas],
        "checks": [],
    }


def _fig6():
    net = {"num_relays": 3, "buffer_capacity_packets": 3, "storage_capacity_units": 10,
           "harvest_coeff": 0.5, "relay_coeff": 0.4, "mean_gain": 0.5}
    sizes = list(range(1, 11))
    return {
        "name": "fig6",
        "description": "Buffer and storage sizes: K=3, rho=0.5, mean gain 0.5, alpha=0.4, 10 dB",
        "seed": 6006,
        "network": net,
        "calibration": {"snr_db": 10.0, "target": 0.12, "candidates": list(DEFAULT_RATES),
                        "network": {"buffer_capacity_packets": 3, "storage_capacity_units": 1}},
        "series": [
            {"label": "vs_LD", "policy": "proposed", "snr_db": [10.0], "slots": 5_000_000,
             "network": {"storage_capacity_units": 10},
             "vary": {"field": "buffer_capacity_packets", "values": sizes}},
            {"label": "vs_LE", "policy": "proposed", "snr_db": [10.0], "slots": 5_000_000,
             "network": {"buffer_capacity_packets": 3},
             "vary": {"field": "storage_capacity_units", "values": sizes}},
        ],
        "checks": [
            {"kind": "threshold", "series": "vs_LD", "at": 1, "op": "gt", "value": 0.45},
            {"kind": "threshold", "series": "vs_LE", "at": 1, "op": "within", "value": 0.12,
             "tol": 0.04},
            {"kind": "monotone", "along": "vs_LD", "ci_mult": 1.0},
            {"kind": "monotone", "along": "vs_LE", "ci_mult": 1.0},
        ],
    }


def _table3():
    net = {**_FIG3_NET, "num_relays": 6}
    return {
        "name": "table3",
        "description": "Diversity order estimates with K=6",
        "seed": 7007,
        "network": net,
        "calibration": {**_FIG3_CAL, "network": dict(_FIG3_NET)},
        "series": [
            {"label": "proposed_6_7", "policy": "proposed", "snr_db": [6.0, 7.0],
             "slots": 100_000_000},
            {"label": "alternating_16_17", "policy": "alternating", "snr_db": [16.0, 17.0],
             "slots": 20_000_000},
        ],
        "checks": [
            {"kind": "diversity", "series": "proposed_6_7", "lo": 6.0, "hi": 7.0,
             "expected": 12.0, "tol": 2.0},
            {"kind": "diversity", "series": "alternating_16_17", "lo": 16.0, "hi": 17.0,
             "report_only": True},
        ],
    }


_PRESETS = {"fig3": _fig3, "fig4": _fig4, "fig5": _fig5, "fig6": _fig6, "table3": _table3}


def get_preset(name: str) -> ExperimentPreset:
    try:
        return preset_from_dict(_PRESETS[name]())
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}") from None


# --------------------------------------------------------- calibration ---

@dataclass
class Calibration:
    eta: float
    p_out: float
    target: float
    snr_db: float
    residual_log10: float
    candidates: dict
    ok: bool
    message: str = ""

    @property
    def abs_error(self) -> float:
        return abs(self.p_out - self.target)


def calibrate_rate(anchor, config: NetworkConfig, candidate_rates=DEFAULT_RATES,
                   abs_tol: float = 0.03, cap: int = DEFAULT_STATE_CAP) -> Calibration:
    """Pick the target rate whose analytical outage at ``anchor = (snr_db,
    p_out)`` is closest to the anchor in log10.

    ``ok`` is False when the target is not a probability strictly inside
    (0, 1), or when even the best rate misses it by more than ``abs_tol``.
    """
    snr_db, target = float(anchor[0]), float(anchor[1])
    rates = [float(r) for r in candidate_rates]
    if not rates:
        raise ValueError("no candidate rates")
    if not 0 < target < 1:
        return Calibration(rates[0], float("nan"), target, snr_db, float("inf"), {}, False,
                           f"target {target} outside the achievable range (0, 1)")
    results = {r: overall_outage(config.with_power(target_rate=r), snr_db, cap=cap)
               for r in rates}

    def resid(p):
        return abs(math.log10(p) - math.log10(target)) if p > 0 else math.inf

    eta = min(rates, key=lambda r: resid(results[r]))
    p = results[eta]
    ok = abs(p - target) <= abs_tol
    msg = "" if ok else (f"calibration failure: best rate {eta} gives P_out={p:.4g}, "
                         f"target {target} +/- {abs_tol}")
    return Calibration(eta, p, target, snr_db, resid(p), results, ok, msg)


# -------------------------------------------------------------- running ---

@dataclass
class CurveRecord:
    label: str
    source: str
    policy: str
    rows: list       # dicts keyed by CSV columns, plus "ci_batch" for simulated rows

    @property
    def p_out(self) -> np.ndarray:
        return np.array([r["p_out"] for r in self.rows])

    @property
    def ci(self) -> np.ndarray:
        return np.array([r["ci"] if r["ci"] is not None else 0.0 for r in self.rows])

    @property
    def ci_batch(self) -> np.ndarray:
        """Batch-means half-widths (0 for analytical rows)."""
        return np.array([r.get("ci_batch") or 0.0 for r in self.rows])

    @property
    def snr_db(self) -> np.ndarray:
        return np.array([r["snr_db"] for r in self.rows])

    def as_curve(self) -> OutageCurve:
        return OutageCurve(self.snr_db, self.p_out, self.source, self.policy)


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    detail: str
    report_only: bool = False


@dataclass
class ExperimentReport:
    preset: ExperimentPreset
    calibration: Calibration | None
    curves: list
    checks: list
    files: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if not c.report_only)

    def curve(self, label: str, source: str | None = None) -> CurveRecord:
        for c in self.curves:
            if c.label == label and (source is None or c.source == source):
                return c
        raise KeyError((label, source))


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.10g}"


def _row(snr, p, source, policy, cfg: NetworkConfig, ci):
    return {"snr_db": snr, "p_out": p, "source": source, "policy": policy,
            "K": cfg.num_relays, "LD": cfg.buffer_capacity, "LE": cfg.storage_capacity,
            "rho": cfg.power.harvest_coeff, "alpha": cfg.power.relay_coeff,
            "eta": cfg.power.target_rate, "ci": ci}


def write_csv(curve: CurveRecord, path):
    cols = CSV_HEADER.split(",")
    lines = [CSV_HEADER] + [",".join(_fmt(r[c]) for c in cols) for r in curve.rows]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> list:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        cols = header.split(",")
        for line in fh:
            if line.strip():
                rows.append(dict(zip(cols, line.rstrip("\n").split(","))))
    return rows


def _series_points(series: Series, base: dict, eta: float | None):
    """Yield ``(NetworkConfig, snr_db)`` for each point of a series."""
    net = {**base, **series.network}
    if eta is not None and "target_rate_bps_hz" not in series.network:
        net["target_rate_bps_hz"] = eta
    if series.vary is None:
        cfg = network_from_dict(net)
        return [(cfg, s) for s in series.snr_db]
    key = series.vary["field"]
    return [(network_from_dict({**net, key: v}), series.snr_db[0])
            for v in series.vary["values"]]


def _run_series(series: Series, preset: ExperimentPreset, eta, seed, cap, slots_scale,
                notes) -> list:
    points = _series_points(series, preset.network, eta)
    mode = series.mode
    want_ana = mode in ("analytical", "both")
    want_sim = mode in ("simulated", "both")
    if want_ana and any(cfg.num_states > cap for cfg, _ in points):
        log.warning("%s: state count exceeds cap %d; analytical path skipped", series.label, cap)
        notes.append(f"{series.label}: analytical path skipped (state cap {cap})")
        want_ana, want_sim = False, True
    policy = series.policy.value
    out = []
    slots = max(int(series.slots * slots_scale), preset.warmup_slots + 1)
    if want_sim:
        rows = []
        if series.vary is None:
            cfg = points[0][0]
            curve = sweep(cfg, series.policy, series.snr_db, slots, seed,
                          preset.warmup_slots, analytical=False)
            for s, p, ci, cb in zip(curve.snr_db, curve.p_out, curve.ci, curve.ci_batch):
                rows.append({**_row(s, p, "simulated", policy, cfg, ci), "ci_batch": cb})
        else:
            seeds = derive_seeds(seed, len(points))
            for (cfg, s), sd in zip(points, seeds):
                c = sweep(cfg, series.policy, [s], slots, sd, preset.warmup_slots,
                          analytical=False)
                rows.append({**_row(s, c.p_out[0], "simulated", policy, cfg, c.ci[0]),
                             "ci_batch": c.ci_batch[0]})
        out.append(CurveRecord(series.label, "simulated", policy, rows))
    if want_ana:
        rows = [_row(s, overall_outage(cfg, s, cap=cap), "analytical", policy, cfg, None)
                for cfg, s in points]
        out.append(CurveRecord(series.label, "analytical", policy, rows))
    return out


def _evaluate_check(check: dict, report: ExperimentReport) -> CheckOutcome:
    kind = check["kind"]
    if kind == "calibration":
        cal = report.calibration
        if cal is None:
            return CheckOutcome("calibration", False, "no calibration configured")
        tol = check.get("abs_tol", 0.03)
        ok = cal.ok and cal.abs_error <= tol
        return CheckOutcome("calibration", ok,
                            f"eta={cal.eta} P_out({cal.snr_db:g} dB)={cal.p_out:.4g} "
                            f"target={cal.target} tol={tol}"
                            + ("" if ok else " -- CALIBRATION FAILURE"))
    if kind == "agreement":
        sim = report.curve(check["series"], "simulated")
        try:
            ana = report.curve(check["series"], "analytical")
        except KeyError:
            return CheckOutcome(f"agreement[{check['series']}]", True,
                                "skipped: no analytical series", report_only=True)
        mult, rel = check.get("ci_mult", 3.0), check.get("rel_tol", 0.05)
        dev = np.abs(sim.p_out - ana.p_out)
        allowed = np.maximum(mult * sim.ci, rel * ana.p_out)
        return CheckOutcome(f"agreement[{check['series']}]", bool(np.all(dev <= allowed)),
                            f"max |ana-sim|={dev.max():.3g}, worst ratio to allowance="
                            f"{np.max(dev / np.where(allowed > 0, allowed, np.inf)):.3g}")
    if kind == "diversity":
        rec = report.curve(check["series"])
        d = estimate_diversity(rec.as_curve(), check["lo"], check["hi"])
        if check.get("report_only"):
            return CheckOutcome(f"diversity[{check['series']}]", True, f"d={d:.3f}",
                                report_only=True)
        ok = abs(d - check["expected"]) <= check["tol"]
        return CheckOutcome(f"diversity[{check['series']}]", ok,
                            f"d={d:.3f} expected {check['expected']} +/- {check['tol']}")
    if kind == "threshold":
        rec = report.curve(check["series"])
        rows = rec.rows
        key = {"buffer_capacity_packets": "LD", "storage_capacity_units": "LE",
               "num_relays": "K"}
        series = next(s for s in report.preset.series if s.label == check["series"])
        col = key.get(series.vary["field"]) if series.vary else "snr_db"
        row = next(r for r in rows if float(r[col]) == float(check["at"]))
        p = row["p_out"]
        if check["op"] == "gt":
            ok, want = p > check["value"], f"> {check['value']}"
        else:
            ok = abs(p - check["value"]) <= check["tol"]
            want = f"{check['value']} +/- {check['tol']}"
        return CheckOutcome(f"threshold[{check['series']}@{check['at']}]", bool(ok),
                            f"P_out={p:.4g} want {want}")
    if kind == "monotone":
        mult = check.get("ci_mult", 1.0)
        if "along" in check:
            rec = report.curve(check["along"])
            p, ci = rec.p_out, rec.ci_batch * mult
            bad = [i for i in range(len(p) - 1) if p[i + 1] - ci[i + 1] > p[i] + ci[i]]
            return CheckOutcome(f"monotone[{check['along']}]", not bad,
                                "nonincreasing within CI" if not bad else f"increases at {bad}")
        recs = [report.curve(lbl) for lbl in check["across"]]
        bad = []
        for a, b in zip(recs, recs[1:]):
            viol = (b.p_out - b.ci_batch * mult) > (a.p_out + a.ci_batch * mult)
            bad += [(b.label, float(s)) for s, v in zip(a.snr_db, viol) if v]
        return CheckOutcome("monotone[" + ",".join(check["across"]) + "]", not bad,
                            "nonincreasing within CI" if not bad else f"violations {bad}")
    raise ConfigError(f"unknown check kind {kind!r}")


def run_experiment(preset: ExperimentPreset, out_dir=None, cap: int = DEFAULT_STATE_CAP,
                   slots_scale: float = 1.0) -> ExperimentReport:
    """Run every series of ``preset``, write one CSV per curve plus
    ``<name>_summary.txt`` into ``out_dir`` (if given), and evaluate the
    embedded checks."""
    cal = None
    notes = []
    if preset.calibration is not None:
        c = preset.calibration
        cfg = network_from_dict({**preset.network, **c.get("network", {})})
        cal = calibrate_rate((c["snr_db"], c["target"]), cfg,
                             c.get("candidates", DEFAULT_RATES), cap=cap)
        if not cal.ok:
            log.warning(cal.message)
    eta = cal.eta if cal is not None else None
    seeds = np.random.SeedSequence(preset.seed).spawn(len(preset.series))
    curves = []
    for series, seed in zip(preset.series, seeds):
        log.info("running series %s", series.label)
        curves += _run_series(series, preset, eta, seed, cap, slots_scale, notes)
    report = ExperimentReport(preset, cal, curves, [], notes=notes)
    report.checks = [_evaluate_check(c, report) for c in preset.checks]
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def summary_text(report: ExperimentReport) -> str:
    p = report.preset
    lines = [f"experiment: {p.name}", f"description: {p.description}", f"seed: {p.seed}"]
    cal = report.calibration
    if cal is not None:
        lines.append(f"calibration: anchor P_out({cal.snr_db:g} dB)={cal.target}; chosen eta={cal.eta}"
                     f"; achieved {cal.p_out:.6g}; log10 residual {cal.residual_log10:.4g}")
        for r, v in cal.candidates.items():
            lines.append(f"  eta={r:g}: P_out={v:.6g}")
        if not cal.ok:
            lines.append(f"  {cal.message}")
    for c in report.curves:
        if c.source == "simulated" and len(c.rows) >= 2 and c.rows[0]["snr_db"] != c.rows[1]["snr_db"]:
            curve = c.as_curve()
            pairs = list(zip(curve.snr_db, curve.snr_db[1:]))
            lo, hi = pairs[-1]
            if curve.p_out[-1] > 0 and curve.p_out[-2] > 0:
                lines.append(f"diversity {c.label} ({c.source}) {lo:g}->{hi:g} dB: "
                             f"{estimate_diversity(curve, lo, hi):.3f}")
    labels = {c.label for c in report.curves}
    for lbl in sorted(labels):
        srcs = {c.source: c for c in report.curves if c.label == lbl}
        if {"analytical", "simulated"} <= set(srcs):
            dev = np.abs(srcs["analytical"].p_out - srcs["simulated"].p_out)
            lines.append(f"max |analytical - simulated| {lbl}: {dev.max():.4g}")
    for n in report.notes:
        lines.append(f"note: {n}")
    for ch in report.checks:
        tag = "INFO" if ch.report_only else ("PASS" if ch.passed else "FAIL")
        lines.append(f"check {ch.name}: {tag} ({ch.detail})")
    lines.append(f"status: {'ok' if report.ok else 'FAILED'}")
    return "\n".join(lines) + "\n"


def write_report(report: ExperimentReport, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = report.preset.name
    for c in report.curves:
        path = out / f"{name}_{c.label}_{c.source}.csv"
        write_csv(c, path)
        report.files.append(path)
    summary = out / f"{name}_summary.txt"
    with open(summary, "w", newline="\n") as fh:
        fh.write(summary_text(report))
    report.files.append(summary)
