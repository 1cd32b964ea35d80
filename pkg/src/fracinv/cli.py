"""Command line front end.

Exit status: 0 on success, 2 for configuration or usage errors, 3 when a
numerical certification fails (negative two-constants margin or a moment
identity residual above tolerance).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import frequency, inverse, spectral
from .config import ConfigError, ExperimentConfig, load_config
from .inverse import INITIAL_STATE, SOURCE
from .specfun import MLParams, mittag_leffler

log = logging.getLogger("fracinv")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CERT = 3


class CertificationFailed(RuntimeError):
    pass


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class Run:
    """State shared by the stages of one invocation; the only writer of output files."""

    cfg: ExperimentConfig
    out: Path
    threads: int = 1
    seed: int = 0
    _trace: frequency.TraceData | None = None
    report: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        self.basis = self.cfg.build_basis()
        self.unknown = self.cfg.build_unknown(self.basis)
        self.g = self.cfg.build_source()
        self.solver = self.cfg.build_solver(self.threads)
        self.target = self.cfg.unknown.target

    def roles(self):
        """(f, u0) for the configured target."""
        zero = self.basis.zero()
        return (self.unknown, zero) if self.target == SOURCE else (zero, self.unknown)

    def trace(self) -> frequency.TraceData:
        if self._trace is None:
            self._trace = inverse.synthesize_trace(self.unknown, self.g, self.cfg.alpha,
                                                   self.target, self.solver)
        return self._trace

    # {{{ stages

    def synthesize(self) -> None:
        tr = self.trace()
        tr.write_csv(self.out / "trace.csv")
        _write_json(self.out / "unknown.json", {"target": self.target, **self.unknown.to_json()})
        self.report["synthesize"] = {"time_nodes": len(tr.times), "boundary_nodes": len(tr.quad),
                                     "trace_norm": tr.norm()}

    def certify(self) -> None:
        cfg = self.cfg
        d = self.basis.domain.dim
        f, u0 = self.roles()
        probes = frequency.standard_probes(d, cfg.alpha, cfg.probes.omegas, cfg.probes.n_dirs)
        records = frequency.probe_sweep(probes, f, u0, self.g, self.trace(), cfg.probes.n_dirs)
        frequency.write_probe_csv(records, self.out / "probes.csv")
        worst_probe = max(r.residual for r in records)

        s_values = cfg.certify.s_values or [inverse.s_from_alpha(cfg.alpha)]
        l1 = spectral.l1_norm(self.unknown)
        reports = []
        for s in s_values:
            for i, xi in enumerate(frequency.directions(d, cfg.certify.n_dirs)):
                ctx = frequency.continuation_context(self.unknown, s, xi, l1)
                rep = frequency.certify(ctx, cfg.certify.n, cfg.certify.lo, cfg.certify.hi)
                reports.append({"xi_id": i, **rep.to_json()})
                if not reports[1:]:
                    self._write_margins(ctx)
        passed = all(r["passed"] for r in reports) and worst_probe <= cfg.certify.probe_tol
        summary = {
            "probe_residual_max": worst_probe,
            "probe_tol": cfg.certify.probe_tol,
            "min_margin": min(r["min_margin"] for r in reports),
            "passed": passed,
            "reports": reports,
        }
        _write_json(self.out / "certification.json", summary)
        self.report["certify"] = {"passed": passed, "min_margin": summary["min_margin"],
                                  "probe_residual_max": worst_probe}
        if not passed:
            raise CertificationFailed("certification failed; see certification.json")

    def _write_margins(self, ctx) -> None:
        cfg = self.cfg.certify
        Z = frequency.quadrant_grid(cfg.n, cfg.lo, cfg.hi).ravel()
        Z = Z[~np.isnan(Z)]
        margin = frequency.two_constants_margin(ctx, Z)
        w = frequency.harmonic_measure(Z)
        with open(self.out / "margins.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["re", "im", "w", "margin"])
            for z, wi, mi in zip(Z, w, margin):
                wr.writerow([f"{z.real:.17g}", f"{z.imag:.17g}", f"{wi:.17g}", f"{mi:.17g}"])

    def _stability_context(self, basis) -> inverse.StabilityContext:
        cfg = self.cfg
        if self.target == INITIAL_STATE:
            c0 = 1.0
        elif cfg.source_time.c0 is not None:
            c0 = cfg.source_time.c0
        else:
            # lower bound of |g~| over the probed range of p
            p = np.array(cfg.probes.omegas) ** (2.0 / cfg.alpha)
            c0 = self.g.check_c0(p)
        return inverse.StabilityContext.for_domain(basis.domain, cfg.alpha, cfg.sweep.k,
                                                   cfg.sweep.theta, c0)

    def sweep(self) -> None:
        cfg = self.cfg
        n = cfg.sweep.count
        basis = self.basis if n <= len(self.basis) else spectral.build_basis(
            self.basis.domain, n)
        ctx = self._stability_context(basis)
        family = [(cfg.sweep.amplitude * basis.unit(j), f"e{j + 1}") for j in range(n)]
        records = inverse.stability_sweep(family, self.g, ctx, self.solver, self.target)
        inverse.write_sweep_csv(records, self.out / "sweep.csv")
        self.report["sweep"] = {"c0": ctx.c0, **inverse.sweep_summary(records)}

    def reconstruct(self) -> None:
        cfg = self.cfg
        rc = cfg.reconstruct
        d = self.basis.domain.dim
        probes = inverse.reconstruction_probes(d, cfg.alpha, rc.omega_max, rc.n_omega, rc.n_dirs)
        tr = self.trace()
        if rc.noise_level > 0:
            tr = frequency.add_noise(tr, rc.noise_level, np.random.default_rng(self.seed))
        g = self.g if self.target == SOURCE else None
        moments = inverse.reconstruct_fourier_line(tr, g, None, probes, self.target)
        if rc.noise_level > 0 and rc.reg is None:
            sigma = rc.noise_level * math.sqrt(float(np.mean(self.trace().values ** 2)))
            std = inverse.moment_noise_std(self.trace(), probes, g, sigma, self.target)
            est, reg = inverse.discrepancy_reconstruct(moments, probes, self.basis, std, rc.k)
        else:
            reg = 1e-8 if rc.reg is None else rc.reg
            est = inverse.tikhonov_reconstruct(moments, probes, self.basis, reg, rc.k)
        err = (est - self.unknown).l2_norm() / self.unknown.l2_norm()
        _write_json(self.out / "reconstruction.json", {
            "field": est.to_json(),
            "reg": reg,
            "noise_level": rc.noise_level,
            "truth": self.unknown.to_json(),
            "relative_l2_error": err,
        })
        with open(self.out / "reconstruction.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["mode", "lambda", "true", "estimate"])
            for j in range(len(self.basis)):
                wr.writerow([j + 1, f"{self.basis.lambdas[j]:.17g}",
                             f"{self.unknown.coeffs[j]:.17g}", f"{est.coeffs[j]:.17g}"])
        self.report["reconstruct"] = {"reg": reg, "relative_l2_error": err}

    # }}}


# {{{ ml-table and plot scripts


def write_ml_table(cfg: ExperimentConfig, path: Path) -> None:
    spec = cfg.ml_table
    tau = np.linspace(spec.tau_min, 0.0, spec.n)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["beta1", "beta2", "tau", "value"])
        for b1 in spec.beta1:
            for b2 in spec.beta2:
                vals = mittag_leffler(MLParams(b1, b2), tau)
                for t, v in zip(tau, np.atleast_1d(vals)):
                    wr.writerow([f"{b1:.17g}", f"{b2:.17g}", f"{t:.17g}", f"{v:.17g}"])


PLOT_SCRIPTS = {
    "sweep.csv": ("stability_curve.gp", """\
set datafile separator ","
set logscale xy
set xlabel "epsilon"
set ylabel "ratio"
set title "stability ratio against measured epsilon"
plot "{csv}" using (column("epsilon")):(column("ratio")) with linespoints title "ratio"
"""),
    "margins.csv": ("margin_heatmap.gp", """\
set datafile separator ","
set xlabel "Re z"
set ylabel "Im z"
set title "two-constants margin on the quadrant"
set view map
splot "{csv}" using (column("re")):(column("im")):(column("margin")) with points palette pointtype 5 notitle
"""),
    "reconstruction.csv": ("reconstruction_overlay.gp", """\
set datafile separator ","
set xlabel "mode"
set ylabel "coefficient"
set title "reconstruction against truth"
plot "{csv}" using (column("mode")):(column("true")) with points title "true", \\
     "{csv}" using (column("mode")):(column("estimate")) with linespoints title "estimate"
"""),
}


def emit_plot_scripts(artifact_dir: Path) -> list[Path]:
    """Write gnuplot scripts for whichever CSV artifacts exist; ConfigError if none do."""
    if not artifact_dir.is_dir():
        raise ConfigError(f"{artifact_dir}: not a directory")
    written = []
    for csv_name, (script, body) in PLOT_SCRIPTS.items():
        if (artifact_dir / csv_name).exists():
            path = artifact_dir / script
            path.write_text(body.format(csv=csv_name), encoding="utf-8")
            written.append(path)
    if not written:
        raise ConfigError(f"{artifact_dir}: none of {', '.join(PLOT_SCRIPTS)} present")
    return written


# }}}


# {{{ argument parsing


def _global_flags(default) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=default, help="experiment config (JSON)")
    p.add_argument("--out", type=Path, default=default, help="output directory")
    p.add_argument("--threads", type=int, default=default, help="worker threads")
    p.add_argument("--seed", type=int, default=default, help="noise seed (overrides config)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracinv", parents=[_global_flags(None)],
                                     description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub_flags = _global_flags(argparse.SUPPRESS)
    for name, help_ in (
        ("synthesize", "forward-solve and write trace.csv"),
        ("certify", "moment identity probes and two-constants certification"),
        ("sweep", "stability sweep over unit modes"),
        ("reconstruct", "Tikhonov reconstruction from the synthesized trace"),
        ("ml-table", "tabulate Mittag-Leffler values"),
        ("run", "run the stages listed under 'experiments' in the config"),
        ("schema", "print the config JSON schema"),
    ):
        sub.add_parser(name, parents=[sub_flags], help=help_)
    ps = sub.add_parser("plot-scripts", parents=[sub_flags], help="write gnuplot scripts")
    ps.add_argument("artifact_dir", type=Path, nargs="?", default=None)
    return parser


def _resolve_config(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError("--config is required for this subcommand")
    return load_config(args.config)


def _run_settings(args, cfg: ExperimentConfig) -> tuple[Path, int, int]:
    out = args.out if args.out is not None else Path(cfg.output_dir)
    threads = 1 if args.threads is None else args.threads
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    seed = cfg.seed if args.seed is None else args.seed
    if not 0 <= seed < 2**64:
        raise ConfigError("--seed must be an unsigned 64-bit integer")
    return out, threads, seed


def run_config(cfg: ExperimentConfig, out: Path, threads: int = 1, seed: int | None = None) -> int:
    """Run every stage listed in ``cfg.experiments``; returns the exit status."""
    run = Run(cfg, out, threads, cfg.seed if seed is None else seed)
    status = EXIT_OK
    for stage in cfg.experiments:
        try:
            getattr(run, stage)()
        except CertificationFailed as exc:
            log.error("%s", exc)
            status = EXIT_CERT
    _write_json(out / "report.json", {"stages": list(cfg.experiments), "status": status,
                                      "results": run.report})
    return status


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.command == "schema":
            from .config import json_schema
            print(json.dumps(json_schema(), indent=2))
            return EXIT_OK
        if args.command == "plot-scripts":
            target = args.artifact_dir or args.out
            if target is None:
                raise ConfigError("plot-scripts needs an artifact directory")
            for p in emit_plot_scripts(Path(target)):
                print(p)
            return EXIT_OK
        cfg = _resolve_config(args)
        if args.command == "ml-table":
            out = args.out if args.out is not None else Path(cfg.output_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_ml_table(cfg, out / "ml_table.csv")
            return EXIT_OK
        out, threads, seed = _run_settings(args, cfg)
        if args.command == "run":
            return run_config(cfg, out, threads, seed)
        run = Run(cfg, out, threads, seed)
        stage = {"synthesize": run.synthesize, "certify": run.certify, "sweep": run.sweep,
                 "reconstruct": run.reconstruct}[args.command]
        stage()
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CertificationFailed as exc:
        print(f"certification failed: {exc}", file=sys.stderr)
        return EXIT_CERT


if __name__ == "__main__":
    sys.exit(main())


# }}}
