"""Command-line pipeline: generate, train, evaluate, and emit plot tables.

Every output carries the tool version and a hash of the resolved config.
Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .config import RunConfig, _wrap, schema_text
from .dataio import export_csv, read_dataset, write_dataset
from .error_stats import (CI_QUANTILE_99, ci_table, data_size_study, evaluate, random_synthetic_spec,
                          run_synthetic_validation)
from .exceptions import (ConfigError, ConvergenceError, DomainError, FormatError, NoSolutionError,
                         TrainingError)
from .mc import mc_surface
from .model import SabrParams, hagan_iv
from .netfit import (INPUT_NAMES, NetConfig, init_network, fit_standardization, load_network,
                     save_network, train, write_history_csv)
from .surfaces import ROLES, SurfaceSpec, generate_dataset, strike_range, subset

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _write_csv(path, header, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _need(cfg, key):
    path = cfg[key]
    if not path:
        raise ConfigError(f"{key} is not set")
    return path


def _meta(cfg, **extra):
    return dict(tool_version=__version__, config_hash=cfg.hash(), config=cfg.dump(), **extra)


# ------------------------------------------------------------ commands


def cmd_generate(cfg, args):
    role = args.role
    if role not in ROLES:
        raise ConfigError(f"unknown role {role!r}; expected one of {sorted(ROLES)}")
    count = args.count or cfg["generate.count"]
    n_paths = args.n_paths or cfg["sim.n_paths"] * (cfg["sim.accurate_factor"] if role == "test-accurate" else 1)
    sim = cfg.sim_config(n_paths)
    log = {}
    ds = generate_dataset(cfg.gen_hyper(), count, sim, role, workers=cfg["run.workers"],
                          meta=_meta(cfg, role=role), log=log)
    write_dataset(ds, args.out)
    grid_rows = count * cfg["gen.m"]
    log.update(role=role, n_paths=n_paths, file=args.out,
               paths_per_second=grid_rows * n_paths / log["wall_seconds"] if log["wall_seconds"] > 0 else math.inf,
               tool_version=__version__, config_hash=cfg.hash())
    with open(args.out + ".log", "w") as fh:
        json.dump(log, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {count} {role} surfaces (N={n_paths}) to {args.out}; "
          f"excluded {100 * log['exclusion_fraction']:.3f}% in {log['wall_seconds']:.1f}s")


def _train_one(cfg, train_ds, val_ds, net_cfg=None, progress=True):
    net = init_network(net_cfg or cfg.net_config())
    if net.config.standardize:
        fit_standardization(net, train_ds)

    def cb(row):
        if progress:
            print(f"epoch {row['epoch']}: train {row['train_loss']:.4e} val {row['val_loss']:.4e} "
                  f"lr {row['lr']:.1e}", file=sys.stderr)

    return train(net, train_ds, val_ds, cfg.train_config(), callback=cb)


def cmd_train(cfg, args):
    train_ds = read_dataset(args.train or _need(cfg, "data.train"))
    val_ds = read_dataset(args.validate or _need(cfg, "data.validate"))
    net = _train_one(cfg, train_ds, val_ds, progress=not args.quiet)
    net.meta.update(_meta(cfg))
    save_network(net, args.out)
    write_history_csv(net, args.out + ".history.csv", header=cfg.provenance())
    print(f"trained {len(net.history)} epochs; best val loss "
          f"{min(r['val_loss'] for r in net.history):.6e}; wrote {args.out}")


def _check_versions(net, *datasets):
    want = net.meta.get("tool_version", __version__).split(".")[0]
    for ds in datasets:
        got = str(ds.meta.get("tool_version", __version__)).split(".")[0]
        if got != want:
            raise FormatError(f"dataset written by tool {got}.x, checkpoint by {want}.x")


def cmd_evaluate(cfg, args):
    net = load_network(args.checkpoint)
    lo = read_dataset(args.test or _need(cfg, "data.test"))
    hi = read_dataset(args.test_accurate or _need(cfg, "data.test_accurate"))
    _check_versions(net, lo, hi)
    names = [s.strip() for s in cfg["evaluate.quintile_inputs"].split(",") if s.strip()]
    bad = [s for s in names if s not in INPUT_NAMES]
    if bad:
        raise ConfigError(f"evaluate.quintile_inputs: unknown inputs {bad}")
    rep = evaluate(net, lo, hi, names)
    os.makedirs(args.out, exist_ok=True)
    prov = cfg.provenance()
    with open(os.path.join(args.out, "report.txt"), "w") as fh:
        fh.write(f"# {prov}\n{rep.to_text()}\n")
    _write_csv(os.path.join(args.out, "report.csv"), prov, ("field", "value"), rep.rows())
    for name, rows in rep.quintiles.items():
        # the first row is the whole range, matching the headline numbers
        full = {"bucket": "all", "lo": -math.inf, "hi": math.inf, "n_lo": rep.l2, "n_hi": rep.l1,
                "msfe_lo": rep.msfe_lo, "msfe_hi": rep.msfe_hi, "e_pred": rep.e_pred_hat,
                "n_pred": rep.n_pred, "flagged": False}
        cols = ("bucket", "lo", "hi", "n_lo", "n_hi", "msfe_lo", "msfe_hi", "e_pred", "n_pred", "flagged")
        _write_csv(os.path.join(args.out, f"quintiles_{name}.csv"), prov, cols,
                   [[r[c] for c in cols] for r in [full] + rows])
    ids = sorted(hi.ids)[:cfg["evaluate.ci_surfaces"]]
    _write_csv(os.path.join(args.out, "ci_plot.csv"), prov,
               ("surface_id", "k1", "k2", "T", "K", "iv_net", "iv_mc", "ci_half_width", "excluded"),
               ci_table(net, hi, ids))
    print(rep.to_text())


def cmd_subset(cfg, args):
    ds = read_dataset(args.input)
    sub = subset(ds, args.fraction)
    sub.meta.update(subset_of=os.path.basename(args.input), fraction=args.fraction)
    write_dataset(sub, args.out)
    print(f"wrote {len(sub)} of {len(ds)} surfaces to {args.out}")


def cmd_export(cfg, args):
    export_csv(read_dataset(args.input), args.out, header=cfg.provenance())


def cmd_synth_validate(cfg, args):
    spec = random_synthetic_spec(cfg["synth.points"], cfg["synth.m1"], cfg["synth.m2"],
                                 cfg["synth.replications"], seed=cfg["run.seed"],
                                 delta_scale=cfg["synth.delta_scale"],
                                 beta_range=(cfg["synth.beta_min"], cfg["synth.beta_max"]))
    s = run_synthetic_validation(spec, workers=cfg["run.workers"])
    prov = cfg.provenance()
    _write_csv(args.out, prov, ("replication", "e_pred_hat", "msfe1", "msfe2", "msae2", "cross2"),
               [(r, float(s.e_pred_hat[r]), float(s.msfe1[r]), float(s.msfe2[r]), float(s.msae2[r]),
                 float(s.cross2[r])) for r in range(len(s.e_pred_hat))])
    q = s.abs_pred_error_quantiles(spec)
    summary = [("true_mspe", s.true_mspe), ("mean_e_pred_hat", s.mean), ("stderr", s.stderr),
               ("z_score", s.z_score), ("empirical_var", s.var), ("closed_form_var", s.var_formula),
               ("var_ratio", s.var / s.var_formula)]
    summary += [(f"abs_error_q{int(round(100 * k))}", float(v)) for k, v in q.items()]
    _write_csv(args.out + ".summary.csv", prov, ("field", "value"), summary)
    for k, v in summary:
        print(f"{k}: {v:.6e}")


def hagan_rows(cfg):
    params = _wrap(SabrParams, alpha0=cfg["hagan.alpha0"], nu=cfg["hagan.nu"], rho=cfg["hagan.rho"])
    mats = sorted(cfg.floats("hagan.maturities"))
    if not mats or mats[0] <= 0:
        raise ConfigError("hagan.maturities must be positive")
    n = cfg["hagan.n_strikes"]
    if n < 2:
        raise ConfigError("hagan.n_strikes must be >= 2")
    strikes = np.empty((len(mats), n))
    for k, T in enumerate(mats):
        lo, hi = strike_range(params.alpha0, params.nu, T, cfg["hagan.eta"])
        strikes[k] = np.linspace(lo, hi, n)
    spec = SurfaceSpec(params, np.array(mats), strikes, cfg["hagan.eta"], 0, "single")
    surf = mc_surface(spec, cfg.sim_config(cfg["hagan.n_paths"]))
    rows = []
    for k, T in enumerate(mats):
        for j in range(n):
            K = float(strikes[k, j])
            mc = float(surf.iv[k, j])
            half = CI_QUANTILE_99 * float(surf.noise[k, j]) / math.sqrt(surf.n_paths)
            rows.append((T, K, hagan_iv(params, K, T), mc, mc - half, mc + half, bool(surf.mask[k, j])))
    return rows


def cmd_hagan_compare(cfg, args):
    rows = hagan_rows(cfg)
    _write_csv(args.out, cfg.provenance(), ("T", "K", "hagan_iv", "mc_iv", "ci_lo", "ci_hi", "excluded"), rows)
    outside = sum(1 for r in rows if not r[6] and not (r[4] <= r[2] <= r[5]))
    print(f"wrote {len(rows)} rows; Hagan outside the MC 99% interval at {outside} strikes")


def _load_eval_sets(cfg):
    return tuple(read_dataset(_need(cfg, k)) for k in
                 ("data.train", "data.validate", "data.test", "data.test_accurate"))


def cmd_sweep(cfg, args):
    tr, va, lo, hi = _load_eval_sets(cfg)
    base = cfg.net_config()
    cols = ("hidden_layers", "nodes_per_layer", "n_params", "epochs", "msfe_lo", "msfe_hi", "e_pred", "n_pred")
    rows = []
    for layers in cfg.ints("sweep.layers"):
        for nodes in cfg.ints("sweep.nodes"):
            nc = NetConfig(layers, nodes, base.init_seed, base.standardize, base.activation)
            net = _train_one(cfg, tr, va, nc, progress=not args.quiet)
            rep = evaluate(net, lo, hi, ())
            rows.append((layers, nodes, net.n_params, len(net.history), rep.msfe_lo, rep.msfe_hi,
                         rep.e_pred_hat, rep.n_pred))
            print(f"{layers}x{nodes}: E_pred={rep.e_pred_hat:.3e} MSFE={rep.msfe_lo:.3e}")
    _write_csv(args.out, cfg.provenance(), cols, rows)


def cmd_study(cfg, args):
    tr, va, lo, hi = _load_eval_sets(cfg)
    net_cfg = cfg.net_config()
    cols = ("fraction", "surfaces", "points", "msfe_lo", "msfe_hi", "e_pred", "n_pred")
    rows = data_size_study(tr, cfg.floats("study.fractions"), net_cfg, cfg.train_config(), va, lo, hi,
                           callback=lambda r: print(f"fraction {r['fraction']}: E_pred={r['e_pred']:.3e}"))
    _write_csv(args.out, cfg.provenance(), cols, [[r[c] for c in cols] for r in rows])


# ------------------------------------------------------------ entry point


def build_parser():
    p = argparse.ArgumentParser(prog="sabrnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"sabrnet {__version__}")
    p.add_argument("--print-config", action="store_true", help="print the documented config schema and exit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, help="overrides run.seed")
    common.add_argument("--workers", type=int, help="overrides run.workers")
    common.add_argument("--out", required=True, help="output file (directory for evaluate)")
    common.add_argument("--quiet", action="store_true")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("generate", parents=[common], help="simulate a dataset")
    g.add_argument("--role", required=True, choices=sorted(ROLES))
    g.add_argument("--count", type=int)
    g.add_argument("--n-paths", type=int)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="fit a network")
    t.add_argument("--train")
    t.add_argument("--validate")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", parents=[common], help="two-precision error report")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--test")
    e.add_argument("--test-accurate")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("subset", parents=[common], help="nested prefix subset of a dataset")
    s.add_argument("--input", required=True)
    s.add_argument("--fraction", type=float, required=True)
    s.set_defaults(func=cmd_subset)

    x = sub.add_parser("export", parents=[common], help="dataset to CSV")
    x.add_argument("--input", required=True)
    x.set_defaults(func=cmd_export)

    for name, func, text in (("synth-validate", cmd_synth_validate, "estimator check with known truth"),
                             ("hagan-compare", cmd_hagan_compare, "Hagan vs Monte-Carlo table"),
                             ("sweep", cmd_sweep, "layers x nodes grid"),
                             ("study", cmd_study, "training-set size study")):
        sub.add_parser(name, parents=[common], help=text).set_defaults(func=func)
    return p


def resolve_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), value)
    if args.seed is not None:
        cfg.set("run.seed", args.seed)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg.set("run.workers", args.workers)
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        sys.stdout.write(schema_text())
        return EXIT_OK
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        cfg = resolve_config(args)
        args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NoSolutionError, ConvergenceError, TrainingError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DomainError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if not args.quiet:
        print(f"done in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
