"""Command-line front end.

Subcommands wire the config file to the library modules and write CSVs
(the contract) plus SVG plots (convenience).  Every command is
deterministic given the config and seed.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "hpmri"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .config import ExperimentConfig, read_config  # noqa: E402
from .errors import ConfigError, HpmriError  # noqa: E402
from .inference import hf_stats_to_csv, validate_hf, validate_lf  # noqa: E402
from .information import (  # noqa: E402
    MIEvaluator,
    optimize_constant_flip,
    optimize_varying_flip,
    sigma_from_snr,
)
from .kinetics import simulate_lf  # noqa: E402
from .phantom import (  # noqa: E402
    HFParams,
    build_phantom,
    convergence_error,
    run_hf,
    select_cells,
)

DT_SEQUENCE = (0.6, 0.3, 0.15, 0.075)
GRID_SEQUENCE = (16, 32, 48)


def _savefig(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _fmt(x) -> str:
    return repr(float(x))


def cmd_simulate_lf(cfg: ExperimentConfig, out: Path) -> int:
    series, states = simulate_lf(cfg.model, cfg.design)
    series.to_csv(out / "lf_signals.csv")
    _write_rows(out / "lf_magnetization.csv", ["t", "phiP", "phiL"],
                [[_fmt(t), _fmt(s.phiP), _fmt(s.phiL)]
                 for t, s in zip(series.times, states)])
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(series.times, series.s_p, "o-", ms=3, label="pyruvate")
    ax.plot(series.times, series.s_l, "s-", ms=3, label="lactate")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("signal")
    ax.legend()
    fig.tight_layout()
    _savefig(fig, out / "lf_signals.svg")
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(series.times, [s.phiP for s in states], "o-", ms=3,
            label="pyruvate")
    ax.plot(series.times, [s.phiL for s in states], "s-", ms=3,
            label="lactate")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("longitudinal magnetization")
    ax.legend()
    fig.tight_layout()
    _savefig(fig, out / "lf_magnetization.svg")
    print(f"peak pyruvate signal: {series.peak_pyruvate():.6f}")
    return 0


def cmd_optimize(cfg: ExperimentConfig, out: Path, scheme: str,
                 snr_values, order: int | None, bounds, seed: int) -> int:
    order = order or cfg.order
    summary = []
    ok = True
    for snr in snr_values:
        noise = sigma_from_snr(snr, cfg.s_ref, cfg.design.n)
        ev = MIEvaluator(cfg.model, cfg.prior, noise, cfg.design, order)
        const = optimize_constant_flip(cfg.model, cfg.prior, noise,
                                       cfg.design, order, bounds,
                                       evaluator=ev)
        if scheme == "constant":
            result = const
        else:
            result = optimize_varying_flip(cfg.model, cfg.prior, noise,
                                           cfg.design, order, bounds,
                                           init=const.design, seed=seed,
                                           evaluator=ev)
        ok = ok and result.converged
        design = result.design
        tag = f"{scheme}_snr{snr:g}"
        _write_rows(out / f"schedule_{tag}.csv",
                    ["k", "t", "thetaP_deg", "thetaL_deg"],
                    [[k + 1, _fmt(t), _fmt(tp), _fmt(tl)]
                     for k, (t, tp, tl) in enumerate(zip(
                         design.times, design.theta_p_deg,
                         design.theta_l_deg))])
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.step(design.times, design.theta_p_deg, where="mid",
                label="pyruvate")
        ax.step(design.times, design.theta_l_deg, where="mid",
                label="lactate")
        ax.set_xlabel("time (s)")
        ax.set_ylabel("flip angle (deg)")
        ax.set_ylim(-2, 92)
        ax.legend()
        fig.tight_layout()
        _savefig(fig, out / f"schedule_{tag}.svg")
        summary.append([_fmt(snr), scheme, _fmt(result.mi), _fmt(result.H_z),
                        _fmt(result.H_z_given_P), str(result.converged)])
        print(f"snr={snr:g} scheme={scheme} MI={result.mi:.6f} nats "
              f"converged={result.converged}")
    _write_rows(out / f"optimize_summary_{scheme}.csv",
                ["snr", "scheme", "MI_nats", "H_z", "H_z_given_P",
                 "converged"], summary)
    return 0 if ok else 1


def cmd_simulate_hf(cfg: ExperimentConfig, out: Path, design=None) -> int:
    design = design or cfg.design
    grid = build_phantom(cfg.phantom)
    hf = HFParams(model=cfg.model)
    cellgrid = run_hf(grid, hf, design, cfg.phantom_dt)
    cells = select_cells(cellgrid)
    cellgrid.to_csv(out / "hf_cells.csv", cells=[c.index for c in cells])
    _write_rows(out / "hf_selected_cells.csv",
                ["cell", "band", "peak_phiPV"],
                [[c.index, c.band + 1, _fmt(c.peak)] for c in cells])
    counts = [sum(1 for c in cells if c.band == b) for b in range(4)]
    print(f"selected cells per band: {counts}")
    print(f"vascular volume fraction: {grid.vascular_volume_fraction():.4f}")
    return 0


def _convergence_csv(path, errs):
    rows = []
    for (pair_a, pair_b), (times, e_p, e_l) in errs.items():
        for t, ep, el in zip(times, e_p, e_l):
            rows.append([_fmt(t), _fmt(ep), _fmt(el), pair_a, pair_b])
    _write_rows(path, ["t", "eP", "eL", "pairA", "pairB"], rows)


def cmd_convergence(cfg: ExperimentConfig, out: Path) -> int:
    from .phantom import PhantomSpec

    design = cfg.design
    hf = HFParams(model=cfg.model)

    grid = build_phantom(cfg.phantom)
    runs = {dt: run_hf(grid, hf, design, dt) for dt in DT_SEQUENCE}
    finest = runs[DT_SEQUENCE[-1]]
    errs = {}
    for dt in DT_SEQUENCE[:-1]:
        e_p, e_l = convergence_error(runs[dt], finest)
        errs[(f"dt={dt:g}", f"dt={DT_SEQUENCE[-1]:g}")] = (
            finest.times, e_p, e_l)
    _convergence_csv(out / "hf_convergence_dt.csv", errs)

    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for (label, _), (times, e_p, e_l) in errs.items():
        ax.semilogy(times[1:], e_p[1:], "o-", ms=3, label=f"P {label}")
        ax.semilogy(times[1:], e_l[1:], "s--", ms=3, label=f"L {label}")
    ax.set_xlabel("scan time (s)")
    ax.set_ylabel("aggregation error")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _savefig(fig, out / "hf_convergence_dt.svg")

    base = cfg.phantom
    if base.family != "cylinders":
        raise ConfigError(
            "grid refinement needs resolution-independent geometry "
            "(cylinders family)")
    grid_errs = {}
    grid_runs = {}
    dt = DT_SEQUENCE[-1]
    for n_side in GRID_SEQUENCE:
        scale = n_side / base.dims[0]
        spec = PhantomSpec(dims=(n_side,) * 3,
                           spacing=base.spacing / scale,
                           family=base.family, cylinders=base.cylinders,
                           density=base.density, voxels=base.voxels,
                           seed=base.seed)
        grid_runs[n_side] = run_hf(build_phantom(spec), hf, design, dt)
    finest = grid_runs[GRID_SEQUENCE[-1]]
    for n_side in GRID_SEQUENCE[:-1]:
        e_p, e_l = convergence_error(grid_runs[n_side], finest)
        grid_errs[(f"h={n_side}", f"h={GRID_SEQUENCE[-1]}")] = (
            finest.times, e_p, e_l)
    _convergence_csv(out / "hf_convergence_grid.csv", grid_errs)
    print("convergence study written")
    return 0


def cmd_validate(cfg: ExperimentConfig, out: Path, source: str) -> int:
    if cfg.replicates < 1:
        raise ConfigError("replicates must be >= 1 for validation")
    ok = True
    if source == "lf":
        for req in cfg.validate_designs:
            design = req.resolve(cfg.design)
            stats = validate_lf(design, snr_list=cfg.snr_list,
                                R=cfg.replicates, seed=cfg.seed,
                                truth=cfg.model, s_ref=cfg.s_ref,
                                n_jobs=cfg.threads)
            stats.to_csv(out / f"validate_lf_{req.label}.csv")
            ok = ok and bool((stats.n_converged == cfg.replicates).all())
            fig, ax = plt.subplots(figsize=(5, 3.4))
            ax.errorbar(stats.snr_data, stats.mean_kPL, yerr=stats.std_kPL,
                        fmt="o-", capsize=4)
            ax.axhline(cfg.model.kPL, color="k", ls=":", lw=1)
            ax.set_xlabel("SNR of injected noise")
            ax.set_ylabel("recovered kPL (1/s)")
            ax.set_title(req.label)
            fig.tight_layout()
            _savefig(fig, out / f"validate_lf_{req.label}.svg")
            print(f"{req.label}: mean kPL at snr levels = "
                  f"{np.round(stats.mean_kPL, 4).tolist()}")
    else:
        grid = build_phantom(cfg.phantom)
        hf = HFParams(model=cfg.model)
        design = cfg.validate_designs[0].resolve(cfg.design)
        cellgrid = run_hf(grid, hf, design, cfg.phantom_dt)
        cells = select_cells(cellgrid)
        stats = validate_hf(cellgrid, cells, design, snr_list=cfg.snr_list,
                            R=cfg.replicates, seed=cfg.seed, knowns=cfg.model,
                            n_jobs=cfg.threads)
        hf_stats_to_csv(stats, out / "validate_hf.csv")
        ok = ok and all(st.usable and (st.n_converged == cfg.replicates).all()
                        for st in stats)
        fig, axes = plt.subplots(2, 1, figsize=(6.5, 5), sharex=True)
        xs = np.arange(len(stats))
        for j, snr in enumerate(cfg.snr_list):
            axes[0].plot(xs, [st.mean_kPL[j] for st in stats], "o-", ms=3,
                         label=f"snr={snr:g}")
            axes[1].plot(xs, [st.std_kPL[j] for st in stats], "o-", ms=3)
        axes[0].plot(xs, [st.noiseless_kPL for st in stats], "k*--", ms=5,
                     label="noiseless")
        axes[0].axhline(cfg.model.kPL, color="k", ls=":", lw=1)
        axes[0].set_ylabel("mean recovered kPL")
        axes[0].legend(fontsize=7)
        axes[1].set_ylabel("std of recovered kPL")
        axes[1].set_xlabel("selected cell (ordered by band)")
        fig.tight_layout()
        _savefig(fig, out / "validate_hf.svg")
        print(f"validated {len(stats)} cells")
    return 0 if ok else 1


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hpmri",
        description="Flip-angle design and validation for hyperpolarized MRI")
    p.add_argument("--config", type=str, default=None,
                   help="experiment config file (key = value sections)")
    p.add_argument("--seed", type=int, default=None, help="override run seed")
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="parallel fit workers")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate-lf", help="kinetic-model signals and states")

    p_opt = sub.add_parser("optimize", help="maximize mutual information")
    p_opt.add_argument("--scheme", choices=("constant", "varying"),
                       default="constant")
    p_opt.add_argument("--snr", type=float, nargs="+", default=None,
                       help="SNR levels to optimize for")
    p_opt.add_argument("--order", type=int, default=None,
                       help="quadrature order")
    p_opt.add_argument("--bounds", type=float, nargs=2, default=(0.0, 90.0),
                       metavar=("LO", "HI"), help="angle bounds in degrees")

    sub.add_parser("simulate-hf", help="phantom run and per-cell signals")
    sub.add_parser("convergence", help="phantom time-step and grid studies")

    p_val = sub.add_parser("validate", help="noisy-replicate kPL recovery")
    p_val.add_argument("--source", choices=("lf", "hf"), default="lf")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = read_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out
        if args.threads is not None:
            cfg.threads = args.threads
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate-lf":
            return cmd_simulate_lf(cfg, out)
        if args.command == "optimize":
            snrs = args.snr if args.snr else cfg.snr_list
            return cmd_optimize(cfg, out, args.scheme, snrs, args.order,
                                tuple(args.bounds), cfg.seed)
        if args.command == "simulate-hf":
            return cmd_simulate_hf(cfg, out)
        if args.command == "convergence":
            return cmd_convergence(cfg, out)
        if args.command == "validate":
            return cmd_validate(cfg, out, args.source)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except HpmriError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
