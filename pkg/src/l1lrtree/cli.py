"""Command-line entry point: ``l1lrtree {fit,loo,compare,synth}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from . import l1lr, pipeline, synth
from .data import DataError, Schema, fingerprint, load_csv, write_csv
from .evaluation import DecisionConfig, proportion_threshold
from .rules import render as render_rules
from .rules import rules_from_tree

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("l1lrtree")


class ConfigError(ValueError):
    pass


# keys a [run] section may set, with their parsers
_INT_KEYS = ("seed", "jobs", "min_display_count")
_RUN_KEYS = ("data", "schema", "method", "threshold", "seed", "folds", "jobs", "out",
             "min_display_count", "p0", "nested")


def _read_config(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not parser.has_section("run"):
        raise ConfigError(f"{path}: missing [run] section")
    out = {}
    for key, val in parser["run"].items():
        key = key.replace("-", "_")
        if key not in _RUN_KEYS:
            raise ConfigError(f"{path}: unknown key {key!r} in [run]")
        if key == "method":
            out[key] = [m.strip() for m in val.replace("\n", ",").split(",") if m.strip()]
        else:
            out[key] = val.strip()
    return out


def parse_method(text: str, seed: int, folds, nested: bool) -> pipeline.MethodSpec:
    """``kind`` or ``kind:key=value,key=value`` into a :class:`MethodSpec`."""
    kind, _, rest = text.partition(":")
    kw: dict = {"seed": seed, "folds": folds, "nested": nested}
    fields = {f: t for f, t in pipeline.MethodSpec.__annotations__.items()}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, val = item.partition("=")
        key = key.strip()
        if not eq or key not in fields or key in ("kind", "seed"):
            raise ConfigError(f"bad method option {item!r} in {text!r}")
        try:
            if key in ("tol", "eps"):
                kw[key] = float(val)
            elif key == "nested":
                kw[key] = _parse_bool(val)
            else:
                kw[key] = int(val)
        except ValueError:
            raise ConfigError(f"bad value for {key} in {text!r}") from None
    try:
        return pipeline.MethodSpec(kind.strip(), **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _parse_bool(val) -> bool:
    if isinstance(val, bool):
        return val
    v = str(val).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {val!r}")


def parse_threshold(text: str):
    """``fixed:<v>`` or ``proportion``."""
    text = text.strip()
    if text == "proportion":
        return "proportion"
    if text.startswith("fixed:"):
        try:
            return DecisionConfig(float(text[6:]))
        except ValueError as exc:
            raise ConfigError(f"bad threshold {text!r}: {exc}") from None
    raise ConfigError(f"threshold must be 'fixed:<value>' or 'proportion', got {text!r}")


def resolve(args) -> dict:
    """Merge the optional config file with command-line flags (flags win)."""
    conf = _read_config(args.config) if getattr(args, "config", None) else {}
    for key in _RUN_KEYS:
        val = getattr(args, key, None)
        if val is not None and val != []:
            conf[key] = val
    for key in ("data", "schema", "seed", "out"):
        if conf.get(key) in (None, ""):
            raise ConfigError(f"--{key.replace('_', '-')} is required")
    try:
        for key in _INT_KEYS:
            if key in conf:
                conf[key] = int(conf[key])
        folds = conf.get("folds", "auto")
        conf["folds"] = None if str(folds) == "auto" else int(folds)
        conf["p0"] = float(conf.get("p0", 0.5))
    except ValueError as exc:
        raise ConfigError(f"bad numeric setting: {exc}") from None
    if conf["folds"] is not None and conf["folds"] < 2:
        raise ConfigError("--folds must be 'auto' or an integer >= 2")
    if not 0.0 < conf["p0"] < 1.0:
        raise ConfigError("--p0 must lie in (0, 1)")
    conf.setdefault("jobs", 1)
    conf.setdefault("min_display_count", 10)
    conf["nested"] = _parse_bool(conf.get("nested", True))
    conf["threshold"] = str(conf.get("threshold", "fixed:0.5"))
    conf["method"] = list(conf.get("method") or ["l1lr_tree"])
    if conf["jobs"] < 1:
        raise ConfigError("--jobs must be at least 1")
    return conf


def _load(conf):
    schema = Schema.from_file(conf["schema"])
    ds = load_csv(conf["data"], schema)
    thr = parse_threshold(conf["threshold"])
    decision = proportion_threshold(ds) if thr == "proportion" else thr
    specs = [parse_method(m, conf["seed"], conf["folds"], conf["nested"]) for m in conf["method"]]
    return ds, decision, specs


def embedded_config(command: str, conf: dict, specs) -> dict:
    """Everything that determines the results; execution settings excluded."""
    return {
        "command": command,
        "data": str(conf["data"]),
        "schema": str(conf["schema"]),
        "methods": [s.to_dict() for s in specs],
        "threshold": conf["threshold"],
        "seed": conf["seed"],
        "folds": "auto" if conf["folds"] is None else conf["folds"],
        "p0": conf["p0"],
        "min_display_count": conf["min_display_count"],
    }


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    log.info("wrote %s", path)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


# --------------------------------------------------------------------------
# commands


def cmd_fit(conf) -> int:
    ds, decision, specs = _load(conf)
    names = pipeline.method_names(specs)
    models = []
    md = [f"# Full-data fits ({ds.target_name})", "",
          f"- tool: l1lrtree {__version__}", f"- dataset fingerprint: `{fingerprint(ds)}`",
          f"- seed: {conf['seed']}", f"- decision threshold: {decision.threshold:.6g} ({decision.source})", ""]
    for name, spec in zip(names, specs):
        fm = pipeline.fit_method(ds, spec)
        entry = {"name": name, "spec": spec.to_dict(), "model": fm.dump()}
        if fm.cv is not None:
            entry["lambda_path"] = {"lambda": fm.cv.lambda_grid.tolist(),
                                    "cv_mean_error": fm.cv.mean_error.tolist(),
                                    "cv_se_error": fm.cv.se_error.tolist()}
        rs = None
        if spec.kind in pipeline.TREE_KINDS and not isinstance(fm.model, pipeline.ConstantModel):
            rs = rules_from_tree(fm.model, decision)
        entry["rule_set"] = None if rs is None else rs.to_dict()
        models.append(entry)
        md += [f"## {name}", "", f"Selected: {', '.join(fm.selected) or '(none)'}", ""]
        if fm.flags:
            md += [f"Flags: {', '.join(fm.flags)}", ""]
        if isinstance(fm.model, l1lr.RegularizedLogisticModel):
            md += ["| Term | Coefficient |", "|---|---|"]
            md += [f"| {k} | {v:.6g} |" for k, v in fm.model.dump().items()]
            md.append("")
        if rs is not None:
            md += [render_rules(rs).rstrip("\n"), ""]
    config = embedded_config("fit", conf, specs)
    md += pipeline.config_block(config)
    report = {"tool": {"name": "l1lrtree", "version": __version__},
              "config": config, "seed": conf["seed"],
              "dataset": pipeline.dataset_summary(ds), "decision": decision.to_dict(), "models": models}
    out = Path(conf["out"])
    _write(out / "fit.json", _dumps(report))
    _write(out / "fit.md", "\n".join(md).rstrip("\n") + "\n")
    return EXIT_OK


def cmd_loo(conf) -> int:
    ds, decision, specs = _load(conf)
    out = Path(conf["out"])
    for name, spec in zip(pipeline.method_names(specs), specs):
        rep = pipeline.compare_methods(ds, [spec], decision, conf["jobs"], conf["p0"],
                                       embedded_config("loo", conf, [spec]), conf["seed"])
        rep.outcomes[0].name = name
        _write(out / f"loo-{name}.json", rep.to_json())
        _write(out / f"loo-{name}.md", rep.to_markdown(conf["min_display_count"]))
    return EXIT_OK


def cmd_compare(conf) -> int:
    ds, decision, specs = _load(conf)
    rep = pipeline.compare_methods(ds, specs, decision, conf["jobs"], conf["p0"],
                                   embedded_config("compare", conf, specs), conf["seed"])
    out = Path(conf["out"])
    _write(out / "compare.json", rep.to_json())
    _write(out / "compare.md", rep.to_markdown(conf["min_display_count"]))
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.seed is None:
        raise ConfigError("--seed is required")
    if args.out is None:
        raise ConfigError("--out is required")
    if (args.spec is None) == (args.builtin is None):
        raise ConfigError("give exactly one of --spec or --builtin")
    if args.spec is not None:
        try:
            spec = synth.SynthSpec.from_json(args.spec)
        except (OSError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"cannot read synthetic spec {args.spec}: {exc}") from None
        spec = synth.SynthSpec(args.n or spec.n, spec.features, spec.rules, spec.default_class,
                               spec.noise, args.seed, spec.target_name)
    else:
        if args.builtin not in synth.BUILTIN:
            raise ConfigError(f"unknown builtin {args.builtin!r}; choose from {', '.join(synth.BUILTIN)}")
        kw = {"seed": args.seed}
        if args.n:
            kw["n"] = args.n
        spec = synth.BUILTIN[args.builtin](**kw)
    ds, clean = synth.synth_generate_with_truth(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out / "data.csv")
    _write(out / "schema.ini", Schema.for_dataset(ds).to_text())
    truth = {"tool": {"name": "l1lrtree", "version": __version__}, "seed": args.seed,
             "dataset": pipeline.dataset_summary(ds), "spec": spec.to_dict(),
             "flipped_rows": [int(i) for i in (ds.target != clean).nonzero()[0]]}
    _write(out / "truth.json", _dumps(truth))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="l1lrtree", description="L1 logistic regression, regression trees "
                                "and their combination, evaluated by leave-one-out.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("fit", "fit each method on all rows"),
                           ("loo", "leave-one-out evaluation, one report per method"),
                           ("compare", "leave-one-out comparison of several methods")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", help="INI file with a [run] section mirroring these flags")
        s.add_argument("--data")
        s.add_argument("--schema")
        s.add_argument("--method", action="append", default=[],
                       help="kind[:key=value,...]; kinds: " + ", ".join(pipeline.KINDS))
        s.add_argument("--threshold", help="fixed:<value> or proportion (default fixed:0.5)")
        s.add_argument("--seed", type=int)
        s.add_argument("--folds", help="'auto' (n // 10) or an integer")
        s.add_argument("--jobs", type=int)
        s.add_argument("--out")
        s.add_argument("--min-display-count", dest="min_display_count", type=int)
        s.add_argument("--p0", type=float, help="null success probability of the binomial test")
        s.add_argument("--no-nested", dest="nested", action="store_const", const=False,
                       help="select hyperparameters once on all rows instead of per replicate")
    s = sub.add_parser("synth", help="write a synthetic cohort, its schema and ground truth")
    s.add_argument("--spec", help="JSON cohort description")
    s.add_argument("--builtin", help="built-in cohort: " + ", ".join(synth.BUILTIN))
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, pipeline.ReplicateError):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, (pipeline.NumericalError, FloatingPointError, ArithmeticError, l1lr.ConvergenceWarning)):
        return EXIT_NUMERIC
    return EXIT_DATA if isinstance(exc, ValueError) else EXIT_NUMERIC


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore")
            if args.command == "synth":
                return cmd_synth(args)
            conf = resolve(args)
            return {"fit": cmd_fit, "loo": cmd_loo, "compare": cmd_compare}[args.command](conf)
    except (ConfigError, DataError, pipeline.ReplicateError, pipeline.NumericalError,
            FloatingPointError, ValueError, ArithmeticError) as exc:
        print(f"l1lrtree: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
