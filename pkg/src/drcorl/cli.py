"""Command line: ``drcorl <command> [--config PATH] [--seed N] [--out DIR]``.

Commands run one pipeline stage each and communicate through files in the
output directory:

    gen-data            dataset.csv
    pretrain-diffusion  denoiser.json
    pretrain-critics    critics.json
    train               policy.json, metrics.csv, regions.csv (+ .plot.json sidecars)
    eval                eval.csv
    theorem             theorem.csv
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import pipeline as pl
from .cmdp import load_cmdp
from .config import ConfigError, load_config, loads_config, save_config, validate
from .critics import CriticEnsemble
from .dataset import load_dataset, save_dataset
from .diffusion import Denoiser
from .theorem import tabular_theorem_harness


def _load_dataset(cfg):
    return load_dataset(pl.require(pl.out_path(cfg, pl.DATASET_FILE), "run `gen-data` first"))


def cmd_gen_data(cfg):
    ds = pl.generate_dataset(cfg)
    path = pl.out_path(cfg, pl.DATASET_FILE)
    save_dataset(ds, path)
    lo, hi = ds.return_range()
    print(f"wrote {len(ds)} transitions to {path} (episode returns {lo:.3f}..{hi:.3f})")
    return path


def cmd_pretrain_diffusion(cfg):
    den = pl.pretrain_diffusion(cfg, _load_dataset(cfg))
    path = pl.out_path(cfg, pl.DENOISER_FILE)
    den.save(path)
    print(f"wrote {path}")
    return path


def cmd_pretrain_critics(cfg):
    ds = _load_dataset(cfg)
    den = None
    if not cfg.is_tabular:
        den = Denoiser.load(pl.require(pl.out_path(cfg, pl.DENOISER_FILE),
                                       "run `pretrain-diffusion` first"))
    critics = pl.pretrain_critics(cfg, ds, den)
    path = pl.out_path(cfg, pl.CRITICS_FILE)
    critics.save(path)
    print(f"wrote {path}")
    return path


def _checkpoint(cfg, name, build):
    """Load a pretrained artifact, or build it when inline pretraining is on."""
    path = pl.out_path(cfg, name)
    if path.is_file():
        return path
    if not cfg.train.pretrain_inline:
        pl.require(path, "pretraining is disabled; set train.pretrain_inline = true or run the "
                         "pretrain commands")
    return build(cfg)


def cmd_train(cfg):
    if cfg.is_tabular:
        raise ConfigError("experiment.env", "`train` needs the continuous point_mass environment")
    ds = _load_dataset(cfg)
    den = Denoiser.load(_checkpoint(cfg, pl.DENOISER_FILE, cmd_pretrain_diffusion))
    critics = CriticEnsemble.load(_checkpoint(cfg, pl.CRITICS_FILE, cmd_pretrain_critics))
    result = pl.train_policy(cfg, ds, den, critics)
    out = Path(cfg.experiment.out_dir)
    result.policy.save(out / pl.POLICY_FILE)
    pl.write_rows(out / pl.METRICS_FILE, pl.METRIC_COLUMNS, result.metrics)
    pl.write_rows(out / pl.REGIONS_FILE, pl.REGION_COLUMNS, result.region_log)
    pl.write_plot_sidecar(out / (pl.METRICS_FILE + ".plot.json"), pl.METRICS_FILE, "step",
                          ["normalized_return", "normalized_cost"],
                          "normalized return and cost during training")
    pl.write_plot_sidecar(out / (pl.REGIONS_FILE + ".plot.json"), pl.REGIONS_FILE, "step",
                          ["normalized_estimate", "cosine"],
                          "estimated normalized cost and reward/cost gradient cosine")
    last = result.metrics[-1]
    print(f"wrote {out / pl.POLICY_FILE}; final normalized return "
          f"{last['normalized_return']:.3f}, cost {last['normalized_cost']:.3f}")
    return out / pl.POLICY_FILE


def cmd_eval(cfg, policy_path=None, behavior=False):
    ds = _load_dataset(cfg)
    policy = None
    if not behavior:
        policy = pl.load_policy(policy_path or pl.out_path(cfg, pl.POLICY_FILE))
    report = pl.evaluate(cfg, ds, policy)
    path = pl.out_path(cfg, pl.EVAL_FILE)
    cols = list(report)
    pl.write_rows(path, cols, [report])
    for key in cols:
        print(f"{key}: {report[key]}")
    return report


def cmd_theorem(cfg):
    if not cfg.is_tabular:
        raise ConfigError("experiment.env", "`theorem` needs a tabular CMDP file")
    th = cfg.theorem
    report = tabular_theorem_harness(
        load_cmdp(cfg.experiment.env), Ts=th.horizons, eta_scale=th.eta_scale,
        h_plus=th.h_plus, h_minus=th.h_minus, step_rule=th.step_rule,
        slack="auto" if th.auto_slack else "fixed", eps_dist=th.eps_dist)
    rows = report["rows"]
    cols = list(rows[0])
    path = pl.out_path(cfg, pl.THEOREM_FILE)
    pl.write_rows(path, cols, rows)
    pl.write_plot_sidecar(Path(str(path) + ".plot.json"), pl.THEOREM_FILE, "T",
                          ["gap", "violation"], "weighted-policy gap and violation against T")
    print(f"V_r of the best feasible policy: {report['v_star']:.6f}")
    print(f"{'T':>6} {'eta':>9} {'gap':>10} {'violation':>10} {'final gap':>10}")
    for r in rows:
        print(f"{r['T']:>6} {r['eta']:>9.4f} {r['gap']:>10.5f} {r['violation']:>10.5f} "
              f"{r['final_gap']:>10.5f}")
    return report


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain-diffusion": cmd_pretrain_diffusion,
    "pretrain-critics": cmd_pretrain_critics,
    "train": cmd_train,
    "eval": cmd_eval,
    "theorem": cmd_theorem,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="drcorl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI experiment config (defaults if omitted)")
        p.add_argument("--seed", type=int, help="override experiment.seed")
        p.add_argument("--out", type=Path, help="override experiment.out_dir")
        if name == "eval":
            p.add_argument("--policy", type=Path, help="policy checkpoint (default: out/policy.json)")
            p.add_argument("--behavior", action="store_true",
                           help="evaluate the data-generating behavior policy instead")
    return parser


def resolve_config(args):
    cfg = load_config(args.config) if args.config else loads_config("")
    exp = cfg.experiment
    if args.seed is not None:
        exp = dataclasses.replace(exp, seed=args.seed)
    if args.out is not None:
        exp = dataclasses.replace(exp, out_dir=str(args.out))
    cfg = dataclasses.replace(cfg, experiment=exp)
    return validate(cfg, check_files=True)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        Path(cfg.experiment.out_dir).mkdir(parents=True, exist_ok=True)
        save_config(cfg, pl.out_path(cfg, "config.ini"))
        if args.command == "eval":
            cmd_eval(cfg, args.policy, args.behavior)
        else:
            COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"drcorl: invalid config: {exc}", file=sys.stderr)
        return 2
    except (pl.MissingArtifact, FileNotFoundError) as exc:
        print(f"drcorl: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"drcorl: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
