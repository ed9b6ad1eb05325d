"""Command-line driver: validate configs, run experiments, write reports.

Subcommands:
  validate CONFIG          schema-check a YAML experiment file
  run CONFIG [options]     execute the experiment ladder and write outputs
  fixtures [--list|NAME]   list or copy the bundled example configs
  report DIR               re-print the summary of a finished run

Exit codes: 0 success, 2 configuration/usage error, 3 runtime or numerical
failure, 4 completed with skipped rungs under --partial. Outputs
(rungs.csv, diagnostics.csv, summary.txt, result.json) are byte-identical
across reruns and thread counts: every rung has a fixed seed, workers are
pure functions of (config, rung index), and results are reduced in index
order. TUMBLEREC_OUT overrides the configured output directory; the --out
flag overrides both.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, validate_config
from .errors import ConfigurationError, TumblerecError
from .fields import KERNEL_CATALOG
from .geometry import normalize
from .reconstruction import (LadderReport, _monotone, _richardson,
                             lemma_diagnostics, run_k_ladder,
                             run_sigma_ladder)

import yaml


def _branches(cfg: ExperimentConfig):
    """(branch name, t_m) pairs; sigma-point differences two ladders."""
    e = cfg.experiment
    kind = e["kind"]
    if kind == "sigma-point":
        return [("minus", e["t_m"] - e["h"]), ("plus", e["t_m"] + e["h"])]
    if kind == "sigma-line":
        return [("main", e["t_m"])]
    return [("main", None)]


def _rung_task(cfg_dict, branch, t_m, eps, idx):
    """Run one ladder rung; pure function of its arguments.

    Returns (branch, idx, rung_dict_or_None, failure_or_None). Exceptions
    are captured so the caller can honor --partial.
    """
    cfg = ExperimentConfig.from_dict(cfg_dict)
    model = cfg.build_model()
    spec = cfg.build_quadrature()
    ladder = replace(cfg.build_ladder(), eps_values=(float(eps),))
    ladder = replace(ladder, seed=ladder.seed + idx)
    e = cfg.experiment
    x_i = np.asarray(e["x_i"], float)
    v_i = normalize(e["v_i"])
    try:
        if e["kind"] == "k-point":
            rep = run_k_ladder(model, x_i, v_i, normalize(e["v_hat"]),
                               e["lambda"], e["alpha"], ladder, spec=spec)
        else:
            rep = run_sigma_ladder(model, x_i, v_i, t_m, ladder, spec=spec)
    except Exception as exc:  # noqa: BLE001 - reported per rung
        return branch, idx, None, {"eps": float(eps),
                                   "error": f"{type(exc).__name__}: {exc}"}
    return branch, idx, dict(rep.rungs[0]), None


def _assemble_report(cfg, branch, t_m, results):
    e = cfg.experiment
    kind = e["kind"]
    rungs = tuple(r for (_, _, r, _) in results if r is not None)
    failures = tuple(f for (_, _, _, f) in results if f is not None)
    if not rungs:
        raise TumblerecError("every ladder rung failed: " + "; ".join(
            f["error"] for f in failures))
    est = np.array([r["estimate"] for r in rungs])
    eps = np.array([r["eps"] for r in rungs])
    if kind == "k-point":
        target = {"x_i": list(map(float, e["x_i"])),
                  "v_i": normalize(e["v_i"]).tolist(),
                  "v_hat": normalize(e["v_hat"]).tolist(),
                  "lambda": float(e["lambda"]), "alpha": float(e["alpha"])}
        rkind = "kernel-point"
    else:
        target = {"x_i": list(map(float, e["x_i"])),
                  "v_i": normalize(e["v_i"]).tolist(), "t_m": float(t_m)}
        rkind = "sigma-line-integral"
    return LadderReport(kind=rkind, target=target, rungs=rungs,
                        final=float(est[-1]),
                        richardson=_richardson(eps, est),
                        monotone=_monotone(est), failures=failures)


def _pyify(obj):
    """Recursively convert numpy scalars/arrays so json round-trips exactly."""
    if isinstance(obj, dict):
        return {k: _pyify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_pyify(v) for v in obj]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _pyify(obj.tolist())
    return obj


def run_experiment(cfg: ExperimentConfig, threads=1, partial=False):
    """Execute all ladder rungs and assemble the result payload."""
    tasks = []
    for branch, t_m in _branches(cfg):
        for idx, eps in enumerate(cfg.experiment["eps_values"]):
            tasks.append((cfg.to_dict(), branch, t_m, float(eps), idx))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_rung_task, *zip(*tasks)))
    else:
        results = [_rung_task(*t) for t in tasks]

    if not partial:
        for (_, _, _, failure) in results:
            if failure is not None:
                raise TumblerecError(
                    f"rung eps={failure['eps']} failed: {failure['error']} "
                    "(use --partial to continue past failing rungs)")

    reports = []
    for branch, t_m in _branches(cfg):
        rep = _assemble_report(cfg, branch, t_m,
                               [r for r in results if r[0] == branch])
        reports.append({"branch": branch, "t_m": t_m, "kind": rep.kind,
                        "target": rep.target, "final": rep.final,
                        "richardson": rep.richardson,
                        "monotone": rep.monotone,
                        "failures": list(rep.failures),
                        "rungs": [dict(r) for r in rep.rungs],
                        "diagnostics": lemma_diagnostics(
                            rep, alpha=cfg.experiment.get("alpha"))})

    e = cfg.experiment
    payload = {"kind": e["kind"], "config_key": cfg.cache_key(),
               "reports": reports}
    if e["kind"] == "sigma-point":
        lo, hi = reports[0]["final"], reports[1]["final"]
        payload["estimate"] = (hi - lo) / (2.0 * e["h"])
    else:
        payload["estimate"] = reports[0]["final"]
    return _pyify(payload)


# --- output rendering --------------------------------------------------------

CSV_VERSION = "# tumblerec csv v1\n"


def _rungs_csv(payload):
    orders = sorted({po[0] for rep in payload["reports"]
                     for r in rep["rungs"] for po in r["per_order"]})
    cols = (["branch", "index", "eps", "estimate", "total", "stderr"]
            + [f"order{n}" for n in orders]
            + ["tail_estimate", "tail_bound"])
    buf = io.StringIO()
    buf.write(CSV_VERSION)
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for rep in payload["reports"]:
        for idx, r in enumerate(rep["rungs"]):
            row = {"branch": rep["branch"], "index": idx,
                   "eps": repr(float(r["eps"])),
                   "estimate": repr(float(r["estimate"])),
                   "total": repr(float(r["total"])),
                   "stderr": repr(float(r["stderr"])),
                   "tail_estimate": repr(float(r["tail_estimate"])),
                   "tail_bound": "" if r["tail_bound"] is None
                   else repr(float(r["tail_bound"]))}
            for (n, v, _) in r["per_order"]:
                row[f"order{n}"] = repr(float(v))
            w.writerow(row)
    return buf.getvalue()


def _diagnostics_csv(payload):
    share_keys = sorted({k for rep in payload["reports"]
                         for s in rep["diagnostics"]["shares"] for k in s})
    cols = ["branch", "index", "eps"] + [f"share_{k}" for k in share_keys] \
        + ["tail_within_bound"]
    buf = io.StringIO()
    buf.write(CSV_VERSION)
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for rep in payload["reports"]:
        d = rep["diagnostics"]
        for idx, r in enumerate(rep["rungs"]):
            row = {"branch": rep["branch"], "index": idx,
                   "eps": repr(float(r["eps"])),
                   "tail_within_bound": d["tail_within_bound"][idx]}
            for k, v in d["shares"][idx].items():
                row[f"share_{k}"] = repr(float(v))
            w.writerow(row)
    return buf.getvalue()


def _summary_text(payload):
    lines = [f"experiment kind: {payload['kind']}",
             f"config key: {payload['config_key']}"]
    for rep in payload["reports"]:
        lines.append(f"[{rep['branch']}] {rep['kind']} "
                     f"target={json.dumps(rep['target'], sort_keys=True)}")
        for r in rep["rungs"]:
            lines.append(f"  eps={r['eps']:<8g} estimate={r['estimate']:.8g} "
                         f"stderr={r['stderr']:.3g} "
                         f"tail={r['tail_estimate']:.3g}")
        for f in rep["failures"]:
            lines.append(f"  eps={f['eps']:<8g} FAILED: {f['error']}")
        lines.append(f"  final={rep['final']:.8g} monotone={rep['monotone']} "
                     f"richardson={rep['richardson']}")
        d = rep["diagnostics"]
        if d.get("tail_exponent") is not None:
            ref = d.get("tail_exponent_reference")
            lines.append(f"  tail exponent fit: {d['tail_exponent']:.3f}"
                         + ("" if ref is None else f" (reference {ref:.3f})"))
    lines.append(f"estimate: {payload['estimate']:.10g}")
    return "\n".join(lines) + "\n"


def write_outputs(payload, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n")
    (out / "rungs.csv").write_text(_rungs_csv(payload))
    (out / "diagnostics.csv").write_text(_diagnostics_csv(payload))
    (out / "summary.txt").write_text(_summary_text(payload))


# --- subcommands -------------------------------------------------------------

def _cmd_validate(args):
    with open(args.config) as fh:
        data = yaml.safe_load(fh.read())
    violations = validate_config(data)
    if violations:
        print("invalid configuration:")
        for v in violations:
            print(f"- {v}")
        return 2
    print("configuration is valid")
    return 0


def _check_expected(cfg, payload):
    """Compare the run estimate against a frozen regression value, if any."""
    if "estimate" not in cfg.expected:
        return 0
    want = float(cfg.expected["estimate"])
    rtol = float(cfg.expected.get("rtol", 1e-9))
    got = payload["estimate"]
    ok = abs(got - want) <= rtol * abs(want)
    print(f"expected {want!r} (rtol {rtol:g}): "
          f"{'match' if ok else f'MISMATCH, got {got!r}'}")
    return 0 if ok else 3


def _cmd_run(args):
    try:
        cfg = ExperimentConfig.load(args.config)
    except (ConfigurationError, yaml.YAMLError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(args.out or os.environ.get("TUMBLEREC_OUT")
                   or cfg.output.get("directory", "out"))
    cache_file = out_dir / "cache" / f"{cfg.cache_key()}.json"
    payload = None
    if cache_file.exists() and not args.no_cache:
        payload = json.loads(cache_file.read_text())
        print(f"loaded cached result {cache_file}")
    if payload is None:
        payload = run_experiment(cfg, threads=args.threads,
                                 partial=args.partial)
        cache_file.parent.mkdir(parents=True, exist_ok=True)
        cache_file.write_text(json.dumps(payload, sort_keys=True) + "\n")
    write_outputs(payload, out_dir)
    print(_summary_text(payload), end="")
    status = _check_expected(cfg, payload)
    if status:
        return status
    if any(rep["failures"] for rep in payload["reports"]):
        return 4
    return 0


def _fixture_description(path):
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            return line.lstrip("# ").rstrip()
    return ""


def _cmd_fixtures(args):
    root = resources.files("tumblerec") / "fixtures"
    names = sorted(p.name for p in root.iterdir() if p.name.endswith(".yaml"))
    if args.name is None:
        print("builtin kernels: " + ", ".join(sorted(KERNEL_CATALOG)))
        print("builtin sigma fields: constant, smooth-space, zero")
        for n in names:
            print(f"{n}  {_fixture_description(root / n)}")
        return 0
    name = args.name if args.name.endswith(".yaml") else args.name + ".yaml"
    if name not in names:
        print(f"unknown fixture {args.name!r}; available: {names}",
              file=sys.stderr)
        return 2
    dest = Path(args.out or name)
    dest.write_text((root / name).read_text())
    print(f"wrote {dest}")
    return 0


def _cmd_report(args):
    result = Path(args.directory) / "result.json"
    if not result.exists():
        print(f"no result.json under {args.directory}", file=sys.stderr)
        return 3
    print(_summary_text(json.loads(result.read_text())), end="")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="tumblerec",
        description="Reconstruction experiments for the kinetic chemotaxis "
                    "forward model")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="schema-check a YAML experiment file")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)

    r = sub.add_parser("run", help="run an experiment ladder")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--threads", type=int, default=1,
                   help="worker processes across ladder rungs")
    r.add_argument("--partial", action="store_true",
                   help="continue past failing rungs")
    r.add_argument("--no-cache", action="store_true",
                   help="recompute even when a cached result exists")
    r.set_defaults(func=_cmd_run)

    f = sub.add_parser("fixtures", help="list or copy bundled example configs")
    f.add_argument("name", nargs="?", default=None)
    f.add_argument("--out", default=None)
    f.set_defaults(func=_cmd_fixtures)

    g = sub.add_parser("report", help="re-print the summary of a finished run")
    g.add_argument("directory")
    g.set_defaults(func=_cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    except TumblerecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
