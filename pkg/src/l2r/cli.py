"""Command line: ``generate``, ``run``, ``compare`` and ``report``.

Run flags mirror :class:`l2r.runner.RunConfig`.  A JSON config file given
with ``--config`` supplies defaults which explicit flags override.  Relative
data and output paths resolve against ``$L2R_DATA`` when it is set.
"""

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .benchmark import GeneratorConfig, generate_synthetic_stream, load_external_stream, write_stream, data_root
from .runner import METHODS, RunConfig, run_stream, train_initial_session, write_run, FeatureCache

log = logging.getLogger("l2r")

SUMMARY_COLUMNS = ("name", "method", "seed", "metric", "P_T", "AP", "Forget_T", "FWT", "embed_ops")


def _resolve(path):
    p = Path(path)
    return p if p.is_absolute() else data_root() / p


def _bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_dataclass_flags(parser, cls, skip=()):
    """One ``--field`` flag per dataclass field, defaulting to None so that
    only explicitly given flags override the config file."""
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        kind = f.type if not isinstance(f.type, str) else {"int": int, "float": float, "bool": bool, "str": str}.get(f.type, str)
        if kind is bool:
            parser.add_argument(flag, dest=f.name, type=_bool, default=None, metavar="BOOL")
        elif f.name == "metrics":
            parser.add_argument(flag, dest=f.name, default=None, help="comma separated, e.g. S@5,R@100")
        elif kind in (int, float):
            parser.add_argument(flag, dest=f.name, type=kind, default=None)
        elif f.name == "clip_norm":
            parser.add_argument(flag, dest=f.name, type=float, default=None)
        else:
            parser.add_argument(flag, dest=f.name, default=None)


def _merged(cls, args, file_values, skip=()):
    values = dict(file_values)
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    if isinstance(values.get("metrics"), str):
        values["metrics"] = tuple(m.strip() for m in values["metrics"].split(",") if m.strip())
    return values


def _load_config(path):
    if not path:
        return {}
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise SystemExit(f"{path}: config must be a JSON object")
    return data


def _load_stream(args):
    return load_external_stream(_resolve(args.data))


def cmd_generate(args):
    file_values = _load_config(args.config).get("generator", _load_config(args.config))
    values = _merged(GeneratorConfig, args, {k: v for k, v in file_values.items() if k in {f.name for f in dataclasses.fields(GeneratorConfig)}})
    cfg = GeneratorConfig(**values)
    stream = generate_synthetic_stream(cfg, seed=args.seed)
    out = write_stream(stream, _resolve(args.out))
    print(f"wrote {stream.T + 1} sessions ({sum(stream.session_sizes())} docs) to {out}")
    return 0


def _run_config(args, **overrides):
    file_values = _load_config(args.config)
    file_values = file_values.get("run", file_values)
    values = _merged(RunConfig, args, file_values)
    values.update(overrides)
    return RunConfig.from_dict(values)


def cmd_run(args):
    stream = _load_stream(args)
    cfg = _run_config(args)
    result = run_stream(stream, cfg)
    name = args.name or f"{cfg.method}_s{cfg.seed}"
    out = write_run(result, _resolve(args.runs) / name)
    s = result["summaries"].get(cfg.primary_metric, {})
    print(f"{name}: AP={_fmt(s.get('AP'))} Forget_T={_fmt(s.get('Forget_t'))} FWT={_fmt(s.get('FWT'))} -> {out}")
    return 0


def cmd_compare(args):
    stream = _load_stream(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    for m in methods:
        if m.split(":")[0] not in METHODS:
            raise SystemExit(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    root = _resolve(args.runs)
    rows = []
    for seed in seeds:
        base = _run_config(args, seed=seed)
        feats = FeatureCache(stream, base.F)
        initial = train_initial_session(stream, base, feats)
        for spec in methods:
            method, *variant = spec.split(":")
            extra = dict(kv.split("=", 1) for kv in variant)
            cfg = RunConfig.from_dict({**base.to_dict(), "method": method, **{k: json.loads(v) for k, v in extra.items()}})
            result = run_stream(stream, cfg, initial_state=initial, feats=feats)
            name = spec.replace(":", "_").replace("=", "-") + f"_s{seed}"
            write_run(result, root / name, save_artifacts=not args.no_artifacts)
            rows += _summary_rows(name, cfg, result)
            s = result["summaries"].get(cfg.primary_metric, {})
            print(f"{name}: AP={_fmt(s.get('AP'))}", flush=True)
    _write_rows(root / "compare.csv", rows)
    print(f"wrote {root / 'compare.csv'}")
    return 0


def _summary_rows(name, cfg, result):
    rows = []
    for metric, s in result["summaries"].items():
        rows.append({
            "name": name, "method": cfg.method, "seed": cfg.seed, "metric": metric,
            "P_T": s.get("P_t"), "AP": s.get("AP"), "Forget_T": s.get("Forget_t"), "FWT": s.get("FWT"),
            "embed_ops": result["cost_report"]["embed_ops"],
        })
    return rows


def _write_rows(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in SUMMARY_COLUMNS})


def cmd_report(args):
    """Aggregate every summary.json under the runs directory into one CSV
    plus a seed-averaged table on stdout."""
    root = _resolve(args.runs)
    rows = []
    for path in sorted(root.glob("*/summary.json")):
        data = json.loads(path.read_text())
        cfg = data["config"]
        for metric, s in data["summaries"].items():
            rows.append({
                "name": path.parent.name, "method": cfg["method"], "seed": cfg["seed"], "metric": metric,
                "P_T": s.get("P_t"), "AP": s.get("AP"), "Forget_T": s.get("Forget_t"), "FWT": s.get("FWT"),
                "embed_ops": data["cost_report"]["embed_ops"],
            })
    if not rows:
        raise SystemExit(f"no runs found under {root}")
    out = Path(args.out) if args.out else root / "report.csv"
    _write_rows(out, rows)
    groups = {}
    for r in rows:
        label = r["name"].rsplit("_s", 1)[0]
        groups.setdefault((label, r["metric"]), []).append(r)
    print(f"{'run':32s} {'metric':8s} {'seeds':>5s} {'AP':>8s} {'Forget_T':>9s} {'FWT':>8s}")
    for (label, metric), rs in sorted(groups.items()):
        print(f"{label:32s} {metric:8s} {len(rs):5d} {_fmt(_avg(rs, 'AP')):>8s} {_fmt(_avg(rs, 'Forget_T')):>9s} {_fmt(_avg(rs, 'FWT')):>8s}")
    print(f"wrote {out}")
    return 0


def _avg(rows, key):
    vals = [r[key] for r in rows if r[key] is not None]
    return float(np.mean(vals)) if vals else None


def _fmt(x):
    return "n/a" if x is None else f"{x:.4f}"


def build_parser():
    p = argparse.ArgumentParser(prog="l2r", description="Lifelong first-stage retrieval simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic drifting stream")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--config")
    _add_dataclass_flags(g, GeneratorConfig)
    g.set_defaults(func=cmd_generate)

    for name, func, help_ in (("run", cmd_run, "run one method over a stream"),
                              ("compare", cmd_compare, "methods x seeds over one stream")):
        r = sub.add_parser(name, help=help_)
        r.add_argument("--data", required=True, help="stream directory")
        r.add_argument("--runs", default="runs")
        r.add_argument("--config")
        if name == "run":
            r.add_argument("--name")
        else:
            r.add_argument("--methods", required=True, help="comma separated; method:field=value for variants")
            r.add_argument("--seeds", default="0")
            r.add_argument("--no-artifacts", action="store_true")
        _add_dataclass_flags(r, RunConfig, skip=("seed",) if name == "compare" else ())
        r.set_defaults(func=func)

    rep = sub.add_parser("report", help="aggregate run summaries into CSV")
    rep.add_argument("--runs", default="runs")
    rep.add_argument("--out")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
