"""Experiment plans, sweeps, result tables and the command line front-end.

    starhop run --plan plan.json --out results/
    starhop summarize --in results/
    starhop selftest
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import multiprocessing
import sys
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .marl import ALGORITHMS, BASELINES, POLICIES, Hyperparams, TrainRecord, train, window_mean
from .scenario import ScenarioConfig, config_from_dict

log = logging.getLogger(__name__)

AXES = ("total_users", "n_elements", "v_surfaces", "m_antennas", "surface_spacing_m")

RESULT_FIELDS = ("axis_value", "algorithm", "baseline", "policy", "seed",
                 "ee", "rate", "power", "ee_first", "status")

REWARD_NOTE = ("reward curves report the global reward, i.e. the instantaneous energy "
               "efficiency in bits/joule")


@dataclass
class ExperimentPlan:
    base: dict[str, Any]
    axis: str
    values: list
    algorithms: list[str] = field(default_factory=lambda: ["MAGAR"])
    baselines: list[str] = field(default_factory=lambda: ["ES"])
    policies: list[str] = field(default_factory=lambda: ["OPTIMIZED"])
    seeds: list[int] = field(default_factory=lambda: [0])
    hyper: dict[str, Any] = field(default_factory=dict)
    assertions: list[dict] = field(default_factory=list)
    name: str = "plan"

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if not self.values or not self.seeds:
            raise ValueError("plan needs at least one axis value and one seed")
        for name, allowed in (("algorithms", ALGORITHMS), ("baselines", BASELINES),
                              ("policies", POLICIES)):
            items = getattr(self, name)
            if not items:
                raise ValueError(f"plan needs at least one entry in {name}")
            bad = [x for x in items if x not in allowed]
            if bad:
                raise ValueError(f"unknown {name}: {bad}")
        if "NONE" in self.baselines and len(self.policies) > 1:
            raise ValueError("the NONE baseline has no elements to switch; drop the on-off sweep")
        Hyperparams(**self.hyper)  # validate early

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentPlan":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown plan keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def tuples(self) -> list[tuple]:
        return list(product(self.values, self.algorithms, self.baselines, self.policies, self.seeds))

    def config_for(self, value) -> tuple[ScenarioConfig, int]:
        data = dict(self.base)
        data[self.axis] = value
        if self.axis == "v_surfaces":
            data.pop("i_regions", None)
            if "users_per_region" in data:
                data["total_users"] = sum(data.pop("users_per_region"))
        if "total_users" not in data and "users_per_region" not in data:
            data["total_users"] = 10
        return config_from_dict(data)

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(**self.hyper)


def _run_one(args) -> tuple[dict, list[TrainRecord] | None]:
    plan, (value, algorithm, baseline, policy, seed), keep_records = args
    config, _ = plan.config_for(value)
    row = {"axis_value": value, "algorithm": algorithm, "baseline": baseline,
           "policy": policy, "seed": seed}
    try:
        result = train(config, plan.hyperparams(), algorithm, seed, baseline=baseline, policy=policy)
    except Exception as exc:  # noqa: BLE001 - a failed point must not stop the sweep
        log.exception("run %s failed", row)
        row.update(ee=math.nan, rate=math.nan, power=math.nan, ee_first=math.nan,
                   status=f"failed: {exc}")
        return row, None
    recs = result.records
    row.update(
        ee=window_mean(recs, "last", attr="ee"),
        rate=window_mean(recs, "last", attr="rate"),
        power=window_mean(recs, "last", attr="power"),
        ee_first=window_mean(recs, "first", attr="ee"),
        status="ok" if result.ok else f"failed: {result.diagnostic}",
    )
    return row, (recs if keep_records else None)


def _sort_key(row: dict):
    return (float(row["axis_value"]), row["algorithm"], row["baseline"], row["policy"], int(row["seed"]))


def run_plan(plan: ExperimentPlan, workers: int = 1, record_dir: str | Path | None = None) -> list[dict]:
    """Train every (value, algorithm, baseline, policy, seed) tuple; one row each."""
    jobs = [(plan, t, record_dir is not None) for t in plan.tuples()]
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            outputs = pool.map(_run_one, jobs, chunksize=1)
    else:
        outputs = [_run_one(j) for j in jobs]
    if record_dir is not None:
        rdir = Path(record_dir)
        rdir.mkdir(parents=True, exist_ok=True)
        for row, recs in outputs:
            if recs is not None:
                tag = "{axis_value}_{algorithm}_{baseline}_{policy}_{seed}".format(**row)
                (rdir / f"{tag}.csv").write_text(records_csv(recs))
    return sorted((row for row, _ in outputs), key=_sort_key)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def records_csv(records: Sequence[TrainRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n_agents = len(records[0].agent_rewards) if records else 0
    w.writerow(["slot", "episode", "algorithm", *[f"reward_agent{a}" for a in range(n_agents)],
                "global_reward", "rate", "power", "ee"])
    for r in records:
        w.writerow([r.slot, r.episode, r.algorithm, *map(_fmt, r.agent_rewards),
                    _fmt(r.global_reward), _fmt(r.rate), _fmt(r.power), _fmt(r.ee)])
    return buf.getvalue()


def results_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_FIELDS)
    for row in rows:
        w.writerow([_fmt(row[k]) for k in RESULT_FIELDS])
    return buf.getvalue()


def read_results(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row = dict(raw)
            for k in ("ee", "rate", "power", "ee_first"):
                row[k] = float(row[k])
            row["seed"] = int(row["seed"])
            text = raw["axis_value"]
            row["axis_value"] = float(text) if any(c in text for c in ".eEn") else int(text)
            rows.append(row)
    return rows


# summaries and ordering checks

GROUP_KEYS = ("axis_value", "algorithm", "baseline", "policy")


def _matches(row: dict, where: dict) -> bool:
    return all(float(row[k]) == float(v) if k == "axis_value" else row[k] == v
               for k, v in where.items())


def _mean_by(rows: Sequence[dict], key: str, where: dict, metric: str = "ee") -> dict:
    out: dict = {}
    for row in rows:
        if row["status"] == "ok" and _matches(row, where):
            out.setdefault(row[key], []).append(row[metric])
    return {k: float(np.mean(v)) for k, v in out.items()}


def check_assertion(rows: Sequence[dict], spec: dict) -> dict:
    """Evaluate one ordering assertion over seed-averaged (or per-seed) results.

    Kinds: ``order`` (non-increasing means along ``order`` of column ``by``),
    ``interior_peak`` (argmax over the axis is neither end), ``peak_geq``
    (value at ``peak`` >= value at every entry of ``others``), ``strict_gap``
    (mean at ``hi`` minus mean at ``lo`` > 0), ``seedwise_geq`` (per seed,
    ``hi`` >= ``lo`` in at least ``min_count`` seeds), ``improves`` (final
    window above first window in at least ``min_count`` runs).
    """
    kind = spec["type"]
    where = spec.get("where", {})
    metric = spec.get("metric", "ee")
    detail: dict[str, Any] = {}
    if kind == "order":
        means = _mean_by(rows, spec["by"], where, metric)
        seq = [means.get(k, math.nan) for k in spec["order"]]
        detail["means"] = dict(zip(map(str, spec["order"]), seq))
        ok = all(a >= b for a, b in zip(seq, seq[1:]))
    elif kind == "interior_peak":
        means = _mean_by(rows, "axis_value", where, metric)
        keys = sorted(means, key=float)
        best = max(keys, key=lambda k: means[k])
        detail.update(means={str(k): means[k] for k in keys}, argmax=best)
        ok = len(keys) >= 3 and best not in (keys[0], keys[-1])
    elif kind == "peak_geq":
        means = _mean_by(rows, spec.get("by", "axis_value"), where, metric)
        lookup = {float(k) if spec.get("by", "axis_value") == "axis_value" else k: v
                  for k, v in means.items()}
        conv = float if spec.get("by", "axis_value") == "axis_value" else (lambda x: x)
        peak = lookup.get(conv(spec["peak"]), math.nan)
        others = [lookup.get(conv(o), math.nan) for o in spec["others"]]
        detail.update(peak=peak, others=others)
        ok = all(peak >= o for o in others)
    elif kind == "strict_gap":
        means = _mean_by(rows, spec["by"], where, metric)
        gap = means.get(spec["hi"], math.nan) - means.get(spec["lo"], math.nan)
        detail["gap"] = gap
        ok = gap > 0
    elif kind == "seedwise_geq":
        by = spec["by"]
        conv = float if by == "axis_value" else (lambda x: x)
        per: dict = {}
        for row in rows:
            if row["status"] == "ok" and _matches(row, where):
                per.setdefault(row["seed"], {})[conv(row[by])] = row[metric]
        wins = sum(1 for d in per.values()
                   if conv(spec["hi"]) in d and conv(spec["lo"]) in d and d[conv(spec["hi"])] >= d[conv(spec["lo"])])
        detail.update(wins=wins, seeds=len(per))
        ok = wins >= spec["min_count"]
    elif kind == "improves":
        sel = [r for r in rows if r["status"] == "ok" and _matches(r, where)]
        wins = sum(1 for r in sel if r["ee"] > r["ee_first"])
        detail.update(wins=wins, runs=len(sel))
        ok = wins >= spec["min_count"]
    else:
        raise ValueError(f"unknown assertion type {kind!r}")
    return {"name": spec.get("name", kind), "pass": bool(ok), **detail}


def summarize(rows: Sequence[dict], assertions: Sequence[dict] = ()) -> tuple[str, dict]:
    """Mean and sample std over seeds per group, plus assertion verdicts."""
    if not rows:
        raise ValueError("empty result table")
    groups: dict = {}
    for row in rows:
        if row["status"] == "ok":
            groups.setdefault(tuple(row[k] for k in GROUP_KEYS), []).append(row)
    entries = []
    for key in sorted(groups, key=lambda k: (float(k[0]), *k[1:])):
        g = groups[key]
        entry = dict(zip(GROUP_KEYS, key))
        entry["seeds"] = len(g)
        for metric in ("ee", "rate", "power"):
            vals = np.array([r[metric] for r in g])
            entry[f"{metric}_mean"] = float(vals.mean())
            entry[f"{metric}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        entries.append(entry)
    verdicts = [check_assertion(rows, a) for a in assertions]
    failed = [r for r in rows if r["status"] != "ok"]
    summary = {"groups": entries, "assertions": verdicts, "failed_runs": len(failed),
               "note": REWARD_NOTE}
    lines = [f"{'value':>8} {'algorithm':>10} {'baseline':>8} {'policy':>9} {'n':>3} "
             f"{'EE mean (bit/J)':>16} {'EE std':>12}"]
    for e in entries:
        lines.append(f"{e['axis_value']!s:>8} {e['algorithm']:>10} {e['baseline']:>8} "
                     f"{e['policy']:>9} {e['seeds']:>3} {e['ee_mean']:>16.6g} {e['ee_std']:>12.4g}")
    for v in verdicts:
        lines.append(f"[{'PASS' if v['pass'] else 'FAIL'}] {v['name']}")
    if failed:
        lines.append(f"{len(failed)} run(s) failed")
    lines.append(f"note: {REWARD_NOTE}")
    return "\n".join(lines), summary


def write_outputs(out: Path, plan: ExperimentPlan, rows: list[dict]) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(results_csv(rows))
    text, summary = summarize(rows, plan.assertions)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=str))
    manifest = {
        "plan": plan.to_dict(),
        "resolved": {str(v): plan.config_for(v)[0].to_dict() for v in plan.values},
        "hyper": plan.hyperparams().to_dict(),
        "version": __version__,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
    print(text)
    return summary


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="starhop", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute an experiment plan")
    p_run.add_argument("--plan", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--no-records", action="store_true", help="skip per-slot CSV logs")
    p_sum = sub.add_parser("summarize", help="re-summarize a results directory")
    p_sum.add_argument("--in", dest="indir", required=True)
    sub.add_parser("selftest", help="run the built-in invariant checks")
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "run":
        plan = ExperimentPlan.load(args.plan)
        if extra:
            from .scenario import parse_overrides
            over = parse_overrides(extra)
            hyper_keys = set(Hyperparams.__dataclass_fields__)
            plan.hyper.update({k: v for k, v in over.items() if k in hyper_keys})
            plan.base.update({k: v for k, v in over.items() if k not in hyper_keys})
            plan.__post_init__()
        out = Path(args.out)
        rows = run_plan(plan, workers=args.workers,
                        record_dir=None if args.no_records else out / "runs")
        summary = write_outputs(out, plan, rows)
        return 0 if all(a["pass"] for a in summary["assertions"]) else 1
    if extra:
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    if args.command == "summarize":
        indir = Path(args.indir)
        manifest = json.loads((indir / "manifest.json").read_text())
        plan = ExperimentPlan.from_dict(manifest["plan"])
        rows = read_results(indir / "results.csv")
        text, summary = summarize(rows, plan.assertions)
        (indir / "summary.json").write_text(json.dumps(summary, indent=2, default=str))
        print(text)
        return 0 if all(a["pass"] for a in summary["assertions"]) else 1
    if args.command == "selftest":
        from .selftest import run_selftest
        return run_selftest()
    return 2


if __name__ == "__main__":
    sys.exit(main())
