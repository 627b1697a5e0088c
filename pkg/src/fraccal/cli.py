"""Command-line experiment runner.

``fraccal <subcommand> --config FILE [--out DIR] [--cache DIR] [--seed N]``

Each subcommand maps onto one library operation, builds a
:class:`~fraccal.records.ResultRecord` and writes it with
:func:`~fraccal.records.emit`.  Exit codes: 0 success, 2 invalid input,
3 solver non-convergence, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from .cache import cached_assemble, matrix_hash
from .config import ExperimentConfig, load_config, parse_blocks, parse_ranges
from .errors import ConfigError, FraccalError, NoConvergenceError
from .forms import MFormEvaluator, Potential, compare_mforms, make_battery, mform_dn, ordering_flags
from .grid import build_grid, lp_norm
from .inversion import (
    contiguous_balls,
    even_partition,
    inner_support_scan,
    lipschitz_estimate,
    nested_family,
    reconstruct_potential,
    support_reconstruct,
)
from .records import ResultRecord, Table, append_log, emit
from .runge import localized_potentials
from .solver import build_lift, default_fd_step, fd_derivative, solve_semilinear

EXIT_OK, EXIT_INVALID, EXIT_NO_CONVERGENCE, EXIT_IO = 0, 2, 3, 4

SUBCOMMANDS = ("assemble", "forward", "linearize", "monotonicity", "localize", "detect", "reconstruct", "stability")

# which localized targets a battery gets when battery.localized = auto
_AUTO_LOCALIZED = {"monotonicity": "cells", "detect": "cells", "reconstruct": "partition"}


class Context:
    """Objects shared by the subcommands, built lazily from one config."""

    def __init__(self, config: ExperimentConfig, subcommand: str):
        self.config = config
        self.subcommand = subcommand
        c = config
        self.grid = build_grid(c["geometry.a"], c["geometry.b"], c["geometry.collar"], c["geometry.n_cells"])
        self.op, self.cache_hit = cached_assemble(c["io.cache"], self.grid, c["s"])
        self.lift = build_lift(self.op)
        self.m = c["m"]
        self.q0 = Potential(self.grid, np.full(self.grid.n_interior, c["phantom.q0"]), self.m)
        values = self.q0.values.copy()
        for cells, value in parse_blocks(c["phantom.blocks"]):
            values[self.grid.interior_positions(cells)] += value
        self.q = Potential(self.grid, values, self.m)
        self._battery = None

    @property
    def partition(self):
        return even_partition(self.grid, self.config["inversion.partition"])

    def localized_targets(self):
        mode = self.config["battery.localized"]
        if mode == "auto":
            mode = _AUTO_LOCALIZED.get(self.subcommand, "none")
        if mode == "none":
            return []
        if mode == "cells":
            return [[int(c)] for c in self.grid.interior_idx]
        if mode == "partition":
            return self.partition
        return parse_ranges(mode)

    def battery(self, count=None):
        if self._battery is None or count is not None:
            c = self.config
            self._battery = make_battery(
                self.lift,
                count or c["battery.count"],
                self.m,
                c["battery.seed"],
                include_localized=self.localized_targets(),
                h_count=c["battery.h_count"],
                localize_options=dict(lambda0=c["battery.lambda0"], rho=c["battery.rho"], levels=c["battery.levels"]),
            )
        return self._battery

    def battery_composition(self, battery):
        counts = {}
        for label in battery.labels_g:
            kind = label.split(":", 1)[0]
            counts[kind] = counts.get(kind, 0) + 1
        return {"pairs": len(battery), "g": len(battery.g_list), "h": len(battery.h_list), "kinds": counts}


# Subcommands


def cmd_assemble(ctx: Context, rec: ResultRecord):
    grid, op = ctx.grid, ctx.op
    rec.outputs.update(
        n_cells=grid.n_cells,
        n_interior=grid.n_interior,
        n_exterior=grid.n_exterior,
        h=grid.h,
        s=op.s,
        cache_hit=ctx.cache_hit,
        matrix_sha256=matrix_hash(op),
    )
    table = Table(["k", "weight"])
    for k, w in enumerate(op.weights):
        table.add(k, w)
    rec.tables["weights"] = table


def cmd_forward(ctx: Context, rec: ResultRecord):
    c = ctx.config
    battery = ctx.battery()
    amp = c["forward.amplitude"]
    table = Table(["datum", "amplitude", "iterations", "residual", "converged", "u_max", "dn_norm", "linear_dn_norm"])
    failures = []
    first = None
    for i, g in enumerate(battery.g_list[: c["forward.count"]]):
        f = amp * g
        try:
            sol = solve_semilinear(ctx.lift, ctx.q, f, ctx.m, tol=c["solver.tol"], max_iter=c["solver.max_iter"])
        except NoConvergenceError as exc:
            sol = exc.solution
            failures.append(i)
        with np.errstate(over="ignore", invalid="ignore"):  # diverged iterates are reported as inf/nan
            dn = ctx.op.matrix[ctx.grid.exterior_idx] @ sol.u
            table.add(i, amp, sol.iterations, sol.residual, sol.converged, np.max(np.abs(sol.u)),
                      lp_norm(ctx.grid, dn), lp_norm(ctx.grid, ctx.lift.dn_matrix @ f))
        if first is None:
            first = sol
    rec.tables["data"] = table
    profile = Table(["cell", "x", "u"])
    for j, (x, u) in enumerate(zip(ctx.grid.centers, first.u)):
        profile.add(j, x, u)
    rec.tables["solution0"] = profile
    rec.outputs.update(count=len(table.rows), failures=failures)
    if failures:
        raise NoConvergenceError(f"forward solves did not converge for data {failures}")


def cmd_linearize(ctx: Context, rec: ResultRecord):
    c = ctx.config
    battery = ctx.battery()
    g = battery.g_list[0]
    gnorm = lp_norm(ctx.grid, g)
    m = ctx.m
    table = Table(["order", "eps", "norm", "relative_norm", "reference_error"])
    worst_vanishing = 0.0
    for k in range(1, m + 1):
        base = default_fd_step(k, g) if c["fd.eps"] == "auto" else c["fd.eps"][k - 1]
        for mult in c["fd.sweep"]:
            eps = base * mult
            d = fd_derivative(ctx.lift, ctx.q, g, k, m, eps=eps, max_iter=c["solver.max_iter"], check=False)
            norm = lp_norm(ctx.grid, d)
            if k == 1:
                lin = ctx.lift.dn_matrix @ g
                ref = lp_norm(ctx.grid, d - lin) / lp_norm(ctx.grid, lin)
            elif k < m:
                ref = norm / gnorm
                worst_vanishing = max(worst_vanishing, ref)
            else:
                ref = max(
                    abs(ctx.grid.h * float(np.dot(h, d)) - mform_dn(ctx.lift, ctx.q, g, h))
                    for h in battery.h_list
                )
            table.add(k, eps, norm, norm / gnorm, ref)
    rec.tables["derivatives"] = table
    rec.outputs.update(max_vanishing_relative_norm=worst_vanishing, data_norm=gnorm)


def cmd_monotonicity(ctx: Context, rec: ResultRecord):
    battery = ctx.battery()
    e_q, e_q0 = MFormEvaluator.dn(ctx.lift, ctx.q), MFormEvaluator.dn(ctx.lift, ctx.q0)
    ge, le, diff = ordering_flags(e_q, e_q0, battery)
    values_q, values_q0 = e_q.values(battery), e_q0.values(battery)
    table = Table(["pair", "g_index", "h_index", "g_label", "form_q", "form_q0", "difference"])
    for p, (i, j) in enumerate(battery.pairs()):
        table.add(p, i, j, battery.labels_g[i], values_q[p], values_q0[p], diff[p])
    rec.tables["pairs"] = table
    rec.outputs.update(
        verdict=compare_mforms(e_q, e_q0, battery).value,
        ge_holds=ge,
        le_holds=le,
        violations_ge=int(np.sum(diff < 0)),
        battery=ctx.battery_composition(battery),
    )


def cmd_localize(ctx: Context, rec: ResultRecord):
    c = ctx.config
    target = c["runge.target"]
    if target in ("auto", "none", "cells", "partition"):
        mid = ctx.grid.n_interior // 2
        cells = tuple(int(x) for x in ctx.grid.interior_idx[max(0, mid - 2) : mid + 2])
    else:
        cells = tuple(sorted(set().union(*parse_ranges(target))))
    seq = localized_potentials(
        ctx.lift, cells, c["runge.a"], levels=c["runge.levels"], lambda0=c["runge.lambda0"], rho=c["runge.rho"]
    )
    table = Table(["level", "reg_lambda", "norm_on", "norm_off", "ratio", "residual", "data_norm"])
    for k, e in enumerate(seq.entries):
        table.add(k, e.reg_lambda, e.norm_on_M, e.norm_off_M, e.ratio, e.residual, lp_norm(ctx.grid, e.g))
    rec.tables["levels"] = table
    ratios = seq.ratios
    rec.outputs.update(target=list(cells), a=seq.a, ratio_monotone=bool(np.all(np.diff(ratios) > 0)))


def _alpha_max(ctx, diff):
    setting = ctx.config["inversion.alpha_max"]
    if setting == "inf":
        return math.inf
    if setting == "auto":
        peak = float(np.max(np.abs(diff)))
        return peak if peak > 0 else math.inf
    return float(setting)


def cmd_detect(ctx: Context, rec: ResultRecord):
    c = ctx.config
    battery = ctx.battery()
    diff = ctx.q.values - ctx.q0.values
    alpha_max = _alpha_max(ctx, diff)
    est = support_reconstruct(ctx.lift, diff, battery, ctx.m, alpha_max=alpha_max, pairs_of_intervals=c["inversion.pairs"])
    definiteness = c["inversion.definiteness"]
    if definiteness == "auto":
        definiteness = "GE" if np.all(diff >= 0) else "LE" if np.all(diff <= 0) else None
    inner = ()
    if definiteness is not None:
        balls = contiguous_balls(ctx.grid, c["inversion.ball_width"])
        inner = inner_support_scan(ctx.lift, diff, balls, c["inversion.alpha_grid"], battery, ctx.m, definiteness)
    table = Table(["cell", "x", "q_minus_q0", "in_support", "in_inner"])
    for cell, x, d in zip(ctx.grid.interior_idx, ctx.grid.interior_centers, diff):
        table.add(int(cell), x, d, int(cell) in est.cells, int(cell) in inner)
    rec.tables["cells"] = table
    rec.outputs.update(
        support=list(est.cells),
        inner_support=list(inner),
        definiteness=definiteness or "indefinite",
        alpha_max=alpha_max,
        candidates=est.n_candidates,
        admissible=est.n_admissible,
        battery=ctx.battery_composition(battery),
    )


def cmd_reconstruct(ctx: Context, rec: ResultRecord):
    c = ctx.config
    battery = ctx.battery()
    part = ctx.partition
    unknown = MFormEvaluator.dn(ctx.lift, ctx.q)
    r = reconstruct_potential(
        ctx.lift, unknown, part, (c["inversion.lo"], c["inversion.hi"]), c["inversion.depth"], battery, ctx.m
    )
    table = Table(["part", "first_cell", "last_cell", "lower", "upper", "estimate", "true_mean"])
    errors = []
    for j, (P, (lo, hi)) in enumerate(zip(part, r.per_cell_bounds)):
        truth = float(np.mean(ctx.q.values[ctx.grid.interior_positions(P)]))
        estimate = 0.5 * (lo + hi)
        errors.append(abs(estimate - truth))
        table.add(j, P[0], P[-1], lo, hi, estimate, truth)
    rec.tables["cells"] = table
    rec.outputs.update(
        max_error=max(errors),
        target_width=(c["inversion.hi"] - c["inversion.lo"]) * 2.0 ** -c["inversion.depth"],
        inconsistent=r.inconsistent,
        unresolved=r.unresolved,
        rounds=r.rounds,
        bisection_depth=r.bisection_depth,
        battery=ctx.battery_composition(battery),
    )


def cmd_stability(ctx: Context, rec: ResultRecord):
    c = ctx.config
    sizes = c["stability.levels"]
    battery = ctx.battery(count=max(max(sizes), c["battery.count"]))
    dim = c["stability.dim"]
    blocks = even_partition(ctx.grid, dim)
    Q = [np.isin(ctx.grid.interior_idx, b).astype(float) for b in blocks]
    curve = lipschitz_estimate(
        ctx.lift, Q, nested_family(battery, sizes), ctx.m, sphere_samples=c["stability.samples"], seed=c["stability.seed"]
    )
    table = Table(["ell", "c_of_ell"] + [f"kappa_{i}" for i in range(dim)])
    for ell, const, kappa in zip(curve.subspace_dims, curve.constants, curve.kappa_argmin):
        table.add(ell, const, *kappa)
    rec.tables["curve"] = table
    consts = np.array(curve.constants)
    rec.outputs.update(
        nondecreasing=bool(np.all(np.diff(consts) >= -1e-10)), final_constant=float(consts[-1]), dim=dim
    )


COMMANDS = {name: globals()[f"cmd_{name}"] for name in SUBCOMMANDS}


def run(config: ExperimentConfig, subcommand: str) -> ResultRecord:
    """Execute one subcommand; failures are recorded and re-raised."""
    if subcommand not in COMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    rec = ResultRecord(config["experiment.id"], subcommand, config.digest)
    t0 = time.perf_counter()
    try:
        ctx = Context(config, subcommand)
        rec.timings["setup_s"] = time.perf_counter() - t0
        COMMANDS[subcommand](ctx, rec)
    except NoConvergenceError as exc:
        rec.status = "no_convergence"
        rec.diagnostics["error"] = str(exc)
        raise RecordedError(rec, EXIT_NO_CONVERGENCE) from exc
    except (FraccalError, ValueError, IndexError) as exc:
        rec.status = "invalid"
        rec.diagnostics["error"] = str(exc)
        raise RecordedError(rec, EXIT_INVALID) from exc
    finally:
        rec.timings["total_s"] = time.perf_counter() - t0
    return rec


class RecordedError(Exception):
    def __init__(self, record, code):
        super().__init__(record.diagnostics.get("error", record.status))
        self.record = record
        self.code = code


def thread_cap() -> int | None:
    raw = os.environ.get("FRACCAL_THREADS", "0").strip() or "0"
    value = int(raw)
    if value < 0:
        raise ValueError
    return value or None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fraccal", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="flat key=value config file")
    parser.add_argument("--out", help="output directory (overrides io.out)")
    parser.add_argument("--cache", help="operator cache directory (overrides io.cache)")
    parser.add_argument("--seed", type=int, help="battery seed (overrides battery.seed)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        limit = thread_cap()
    except ValueError:
        print("fraccal: FRACCAL_THREADS must be a nonnegative integer", file=sys.stderr)
        return EXIT_INVALID
    try:
        config = load_config(args.config)
        overrides = {}
        if args.out is not None:
            overrides["io.out"] = args.out
        if args.cache is not None:
            overrides["io.cache"] = args.cache
        if args.seed is not None:
            overrides["battery.seed"] = args.seed
        config = config.with_overrides(**overrides)
    except ConfigError as exc:
        where = f" (line {exc.line})" if exc.line else ""
        print(f"fraccal: config error{where}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"fraccal: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    code = EXIT_OK
    try:
        with threadpool_limits(limits=limit):
            record = run(config, args.subcommand)
    except RecordedError as exc:
        record, code = exc.record, exc.code
        print(f"fraccal: {args.subcommand} failed: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"fraccal: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        paths = emit(record, config["io.out"], config["io.format"])
        append_log(record, config["io.out"])
    except OSError as exc:
        print(f"fraccal: cannot write results: {exc}", file=sys.stderr)
        return EXIT_IO
    for path in paths:
        print(path)
    return code


if __name__ == "__main__":
    sys.exit(main())
