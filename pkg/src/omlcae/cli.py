"""Command-line interface.

Subcommands:
  run            -- execute the experiment grid, write metrics/summary CSVs
  efficiency     -- pilot-efficiency ratios from two metrics CSVs
  constellation  -- train on one channel realization and export JSON
  gradcheck      -- backprop vs central finite differences
  channel-stats  -- AR(1) fading statistics sanity report
"""

import argparse
import os
import sys

import numpy as np

from . import rng as rngmod
from .cae import CaeModel, loss_and_grads
from .channel import FadingProcess, NoiseModel, rayleigh_sample, snr_to_sigma2, to_complex
from .harness import (ExperimentConfig, PROFILES, efficiency_analysis,
                      export_constellation, mean_efficiency_ratio, parse_config,
                      read_metrics_csv, run_experiment, summarize)
from .metalearn import (MetaConfig, RunConfig, inner_adapt, make_pilot_task,
                        online_run, task_sequence)
from .numerics import finite_diff_grad


def _add_run_parser(sub):
    p = sub.add_parser("run", help="run the experiment grid")
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--bits", type=int, dest="k")
    p.add_argument("--channel-uses", type=int, dest="n_ch")
    p.add_argument("--snr-db", dest="snr_db",
                   type=lambda s: tuple(float(v) for v in s.split(",")))
    p.add_argument("--shots", dest="shots",
                   type=lambda s: tuple(int(v) for v in s.split(",")))
    p.add_argument("--sequences", type=int, dest="n_sequences")
    p.add_argument("--rho", type=float)
    p.add_argument("--buffer-size", type=int, dest="buffer_capacity")
    p.add_argument("--methods",
                   type=lambda s: tuple(v.strip() for v in s.split(",")))
    p.add_argument("--seed", type=int)
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--n-eval", type=int, dest="n_eval")
    p.add_argument("--out", dest="out_dir")


def _cmd_run(args):
    keys = ("k", "n_ch", "snr_db", "shots", "n_sequences", "rho",
            "buffer_capacity", "methods", "seed", "profile", "n_eval",
            "out_dir")
    overrides = {k: getattr(args, k, None) for k in keys}
    cfg = parse_config(args.config, overrides)
    records = run_experiment(cfg)
    print(f"wrote {len(records)} rows to {os.path.join(cfg.out_dir, 'metrics.csv')}")
    for method, snr, shots, mean_ser, n, _ in summarize(records, cfg.warmup):
        print(f"  {method:10s} snr={snr:g} shots={shots}: "
              f"mean SER {mean_ser:.4g} over {n} sequences")


def _mean_ser_by_shots(records, method_prefix):
    cells = {}
    for r in records:
        if method_prefix and not r.method.startswith(method_prefix):
            continue
        cells.setdefault(r.shots, []).append(r.ser)
    return sorted((shots, float(np.mean(v))) for shots, v in cells.items())


def _cmd_efficiency(args):
    oml = _mean_ser_by_shots(read_metrics_csv(args.oml), "oml")
    cae = _mean_ser_by_shots(read_metrics_csv(args.cae), "cae")
    rows = efficiency_analysis(oml, cae)
    lines = ["target_ser,oml_shots,cae_equivalent_shots,ratio,reachable"]
    for r in rows:
        lines.append(f"{r.target_ser:.10g},{r.oml_shots:g},"
                     f"{r.cae_equivalent_shots:.6g},{r.ratio:.6g},"
                     f"{str(r.reachable).lower()}")
    with open(args.out, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    print(f"mean ratio over reachable targets: {mean_efficiency_ratio(rows):.3g}")


def _cmd_constellation(args):
    meta = MetaConfig(finetune_iters=args.iters, outer_iters=args.meta_iters)
    cfg = RunConfig(k=args.bits, n_ch=args.channel_uses, snr_db=args.snr_db,
                    shots=args.shots, n_sequences=args.sequences,
                    seed=args.seed, meta=meta, n_eval=args.n_show)
    model = cfg.build_model()
    h = task = None
    if args.method == "oml_cae":
        _, theta = online_run(cfg, model=model, return_final_theta=True)
        for _, h, task in task_sequence(cfg, model):  # last sequence's channel
            pass
    else:
        for _, h, task in task_sequence(cfg, model):
            pass
        theta = inner_adapt(model, model.params, task,
                            cfg.meta.finetune_iters, cfg.meta.inner_lr)
    export_constellation(model, h, NoiseModel(cfg.sigma2), args.snr_db,
                         args.n_show, cfg.cell_substream("export"),
                         args.out, theta=theta)
    print(f"wrote constellation to {args.out}")


def _cmd_gradcheck(args):
    worst = 0.0
    rng = rngmod.substream(args.seed, "gradcheck")
    for k in (1, 2):
        for n_ch in (1, 2):
            model = CaeModel.build(k, n_ch, rng, hidden=args.hidden)
            task = make_pilot_task(model, rayleigh_sample(rng, n_ch),
                                   snr_to_sigma2(10.0), 2, rng)
            _, grads = loss_and_grads(model, task.support, task.h)
            fd = finite_diff_grad(
                lambda th: loss_and_grads(model, task.support, task.h,
                                          theta=th)[0],
                model.params, eps=args.eps)
            mask = np.abs(grads) > 1e-8
            rel = np.max(np.abs(grads[mask] - fd[mask]) / np.abs(grads[mask]))
            worst = max(worst, rel)
            print(f"k={k} n_ch={n_ch}: max relative error {rel:.3e}")
    ok = worst < 1e-4
    print(f"gradcheck {'PASS' if ok else 'FAIL'} (worst {worst:.3e})")
    return 0 if ok else 1


def _cmd_channel_stats(args):
    rng = rngmod.substream(args.seed, "channel-stats")
    proc = FadingProcess(args.rho, args.n, rng)
    hs = np.stack([proc.step() for _ in range(args.steps)])
    hc = to_complex(hs)
    power = float(np.mean(np.abs(hc) ** 2))
    lag1 = float(np.mean((hc[1:] * hc[:-1].conj()).real) /
                 np.mean(np.abs(hc) ** 2))
    print(f"rho={args.rho} steps={args.steps} n={args.n}")
    print(f"  stationary E|h|^2 = {power:.4f} (expect 1.0)")
    print(f"  lag-1 correlation = {lag1:.4f} (expect {args.rho})")


def main(argv=None):
    parser = argparse.ArgumentParser(prog="omlcae")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_parser(sub)

    p = sub.add_parser("efficiency", help="pilot-efficiency analysis")
    p.add_argument("--oml", required=True, help="metrics CSV with OML-CAE rows")
    p.add_argument("--cae", required=True, help="metrics CSV with CAE rows")
    p.add_argument("--out", required=True)

    p = sub.add_parser("constellation", help="export a learned constellation")
    p.add_argument("--bits", type=int, default=2)
    p.add_argument("--channel-uses", type=int, default=1)
    p.add_argument("--snr-db", type=float, default=5.0)
    p.add_argument("--shots", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sequences", type=int, default=1)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--meta-iters", type=int, default=200)
    p.add_argument("--n-show", type=int, default=200)
    p.add_argument("--method", choices=("cae", "oml_cae"), default="cae")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="backprop vs finite differences")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--hidden", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("channel-stats", help="AR fading statistics")
    p.add_argument("--rho", type=float, default=0.99)
    p.add_argument("--steps", type=int, default=100000)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "efficiency": _cmd_efficiency,
        "constellation": _cmd_constellation,
        "gradcheck": _cmd_gradcheck,
        "channel-stats": _cmd_channel_stats,
    }
    return handlers[args.command](args) or 0


if __name__ == "__main__":
    sys.exit(main())
