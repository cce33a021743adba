"""Command-line front end.

Exit codes: 0 success, 2 usage/config error, 3 data-format error,
4 numerical/convergence error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from nvfret import config as cfgmod
from nvfret import io
from nvfret.errors import ConfigError, NvFretError
from nvfret.fitting import OBJECTIVES, FitModelSpec, effective_lifetime, fit_decay, gate_histogram
from nvfret.flim import edge_profile, empirical_min_photons, fit_flim_cube, photon_budget
from nvfret.inversion import invert_radius, read_curve_csv, tau_eff_curve, write_curve_csv
from nvfret.simulate import compose_signal, ensemble_decay, sample_histogram, simulate_flim_cube

# keys a config file must set for each command (defaults cover the rest)
REQUIRED_KEYS = {
    "simulate-decay": ("model.foerster_radius_nm",),
    "simulate-flim": ("scene.width_px", "scene.height_px", "scene.polygons"),
}


def _point(text: str):
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}") from None
    return x, y


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvfret",
        description="Simulate, fit and invert NV-ensemble FRET lifetime data.",
    )
    parser.add_argument("--config", help="flat key = value run configuration")
    parser.add_argument("--seed", type=int, help="overrides run.seed")
    parser.add_argument("--threads", type=int, help="worker processes (results do not change)")
    parser.add_argument("--dump-config", action="store_true",
                        help="print the resolved configuration and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate-decay", help="simulate a TCSPC histogram")
    p.add_argument("--out", required=True, help="histogram CSV")
    p.add_argument("--plot", help="semilog decay plot (SVG)")

    p = sub.add_parser("fit-decay", help="fit a histogram CSV")
    p.add_argument("histogram")
    p.add_argument("--components", type=int, choices=(1, 2))
    p.add_argument("--objective", choices=OBJECTIVES)
    p.add_argument("--gated", action="store_true",
                   help="gate the histogram and report the effective lifetime")
    p.add_argument("--out", help="fit report CSV")
    p.add_argument("--plot", help="semilog decay plot with the fit (SVG)")

    p = sub.add_parser("radius-curve", help="tabulate tau_eff(R)")
    p.add_argument("--out", required=True, help="curve CSV")
    p.add_argument("--plot", help="curve plot (SVG)")

    p = sub.add_parser("invert-radius", help="Foerster radius from an effective lifetime")
    p.add_argument("tau_eff_ns", type=float)
    p.add_argument("--sigma", type=float, default=0.0, help="uncertainty of tau_eff (ns)")
    p.add_argument("--curve", help="curve CSV; generated from the config when omitted")
    p.add_argument("--plot", help="curve plot with the estimate (SVG)")

    p = sub.add_parser("simulate-flim", help="render a synthetic FLIM cube")
    p.add_argument("--out", required=True, help="cube payload path (metadata at PATH.meta)")

    p = sub.add_parser("fit-flim", help="fit every pixel of a cube")
    p.add_argument("cube")
    p.add_argument("--out", required=True, help="lifetime map CSV")
    p.add_argument("--plot", help="lifetime map image (SVG)")

    p = sub.add_parser("edge", help="edge profile across a lifetime map")
    p.add_argument("map")
    p.add_argument("--start", type=_point, required=True, help="X,Y in pixel units")
    p.add_argument("--end", type=_point, required=True, help="X,Y in pixel units")
    p.add_argument("--halfwidth", type=int, default=1, help="transverse averaging (pixels)")
    p.add_argument("--out", help="profile CSV")
    p.add_argument("--plot", help="profile plot (SVG)")

    p = sub.add_parser("budget", help="dwell time per pixel")
    p.add_argument("count_rate_cps", type=float)
    p.add_argument("min_photons", type=float, nargs="?", default=1000)

    p = sub.add_parser("min-photons", help="Monte Carlo photon count for a lifetime precision")
    p.add_argument("--tau", type=float, default=12.0, help="true lifetime (ns)")
    p.add_argument("--target", type=float, default=0.1, help="relative standard deviation")
    p.add_argument("--trials", type=int, default=200)
    return parser


def resolve_config(args) -> cfgmod.RunConfig:
    required = REQUIRED_KEYS.get(args.command, ())
    cfg = cfgmod.load(args.config, required) if args.config else cfgmod.RunConfig()
    run = cfg.run
    if args.seed is not None:
        run = replace(run, seed=args.seed)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        run = replace(run, threads=args.threads)
    return replace(cfg, run=run)


def cmd_simulate_decay(args, cfg):
    depth = cfg.depth_distribution()
    model = compose_signal(ensemble_decay(cfg.model, depth, cfg.grid), cfg.signal, cfg.irf)
    h = sample_histogram(model, cfg.run.photons, cfg.run.seed)
    io.write_histogram_csv(h, args.out)
    print(f"wrote {args.out}: {cfg.grid.n_bins} bins, {h.total} counts (seed {cfg.run.seed})")
    if args.plot:
        from nvfret.plots import plot_decay

        plot_decay(h, args.plot)


def _report_rows(fit):
    rows = []
    for k, c in enumerate(fit.components, start=1):
        rows.append((f"amplitude_{k}", c.amplitude, c.amplitude_sigma))
        rows.append((f"lifetime_ns_{k}", c.lifetime_ns, c.lifetime_sigma))
    rows.append(("background", fit.background, fit.background_sigma))
    rows.append(("t0_ns", fit.t0_ns, fit.t0_sigma))
    return rows


def cmd_fit_decay(args, cfg):
    h = io.read_histogram_csv(args.histogram, cfg.grid.origin_ps)
    objective = args.objective
    if args.gated:
        eff = effective_lifetime(h, cfg.gate, objective=objective or "relative-least-squares")
        fit, irf, times = eff.fit, None, gate_histogram(h, cfg.gate).times_ns()
        print(f"effective lifetime: {eff.tau_ns:.4f} +/- {eff.sigma_ns:.4f} ns")
    else:
        n = args.components or cfg.fit.components
        spec = FitModelSpec(n, irf=cfg.irf, objective=objective or cfg.fit.objective)
        fit, irf, times = fit_decay(h, spec), cfg.irf, None
        for k, c in enumerate(fit.components, start=1):
            print(f"component {k}: tau = {c.lifetime_ns:.4f} +/- {c.lifetime_sigma:.4f} ns, "
                  f"amplitude = {c.amplitude:.6g} +/- {c.amplitude_sigma:.3g}")
        print(f"background = {fit.background:.4g}, t0 = {fit.t0_ns:.4f} ns")
    print(f"objective {fit.objective}: goodness {fit.goodness:.4f} (dof {fit.dof}), "
          f"{'converged' if fit.converged else 'NOT converged'} after {fit.n_iter} iterations")
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write("parameter,value,sigma\n")
            for name, value, sigma in _report_rows(fit):
                fh.write(f"{name},{value!r},{sigma!r}\n")
            fh.write(f"goodness,{fit.goodness!r},\n")
    if args.plot:
        from nvfret.plots import plot_decay

        plot_decay(h, args.plot, fit, times, irf)


def _curve(cfg):
    c = cfg.curve
    return tau_eff_curve(c.r_min_nm, c.r_max_nm, c.n_points, cfg.model,
                         cfg.depth_distribution(), cfg.gate, cfg.grid, cfg.irf)


def cmd_radius_curve(args, cfg):
    curve = _curve(cfg)
    write_curve_csv(curve, args.out)
    lo, hi = curve.tau_range
    print(f"wrote {args.out}: {curve.r_nm.size} points, tau_eff in [{lo:.4g}, {hi:.4g}] ns")
    if args.plot:
        from nvfret.plots import plot_radius_curve

        plot_radius_curve(curve, args.plot)


def cmd_invert_radius(args, cfg):
    curve = read_curve_csv(args.curve) if args.curve else _curve(cfg)
    est = invert_radius(args.tau_eff_ns, args.sigma, curve)
    print(f"R = {est.r_nm:.3f} +/- {est.sigma_nm:.3f} nm (dR/dtau = {est.slope_nm_per_ns:.4g} nm/ns)")
    if args.plot:
        from nvfret.plots import plot_radius_curve

        plot_radius_curve(curve, args.plot, est, args.tau_eff_ns)


def cmd_simulate_flim(args, cfg):
    cube = simulate_flim_cube(cfg.scene, cfg.model, cfg.depth_distribution(), cfg.irf, cfg.grid,
                              cfg.run.seed, workers=cfg.run.threads)
    io.write_cube(cube, args.out)
    print(f"wrote {args.out} ({cube.height_px}x{cube.width_px} pixels, {cube.grid.n_bins} bins)")


def cmd_fit_flim(args, cfg):
    cube = io.read_cube(args.cube)
    m = fit_flim_cube(cube, cfg.gate, cfg.irf, cfg.fit.min_counts, workers=cfg.run.threads)
    io.write_map_csv(m, args.out)
    counts = {name: int((m.cls == code).sum()) for code, name in
              ((2, "on-flake"), (1, "off-flake"), (0, "low-signal"))}
    print(f"wrote {args.out}: " + ", ".join(f"{v} {k}" for k, v in counts.items()))
    if args.plot:
        from nvfret.plots import plot_lifetime_map

        plot_lifetime_map(m, args.plot)


def cmd_edge(args, cfg):
    m = io.read_map_csv(args.map)
    if m.grid is None:
        m.grid, m.irf, m.gate = cfg.grid, cfg.irf, cfg.gate
    e = edge_profile(m, args.start, args.end, args.halfwidth)
    print(f"edge at {e.edge_position_nm:.1f} +/- {e.edge_position_sigma:.1f} nm along the line")
    print(f"PSF FWHM = {e.psf_fwhm_nm:.1f} +/- {e.psf_fwhm_sigma:.1f} nm")
    print(f"plateaus: {e.plateau_start_ns:.3f} ns -> {e.plateau_end_ns:.3f} ns")
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write("position_nm,tau_ns,fit_ns\n")
            for s, t, f in zip(e.positions_nm, e.tau_ns, e.fit_ns):
                fh.write(f"{s!r},{t!r},{f!r}\n")
    if args.plot:
        from nvfret.plots import plot_edge

        plot_edge(e, args.plot)


def cmd_budget(args, cfg):
    dwell = photon_budget(args.count_rate_cps, args.min_photons)
    print(f"{dwell * 1e3:.2f} ms")


def cmd_min_photons(args, cfg):
    n = empirical_min_photons(args.tau, args.target, cfg.run.seed, cfg.irf, cfg.grid, args.trials)
    print(f"{n} photons")


COMMANDS = {
    "simulate-decay": cmd_simulate_decay,
    "fit-decay": cmd_fit_decay,
    "radius-curve": cmd_radius_curve,
    "invert-radius": cmd_invert_radius,
    "simulate-flim": cmd_simulate_flim,
    "fit-flim": cmd_fit_flim,
    "edge": cmd_edge,
    "budget": cmd_budget,
    "min-photons": cmd_min_photons,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.dump_config:
            sys.stdout.write(cfgmod.dumps(cfg))
            return 0
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("nvfret: error: a command is required", file=sys.stderr)
            return 2
        COMMANDS[args.command](args, cfg)
    except NvFretError as exc:
        print(f"nvfret: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
