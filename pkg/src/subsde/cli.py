"""Command-line experiments.

Each subcommand reads an :class:`~subsde.config.ExperimentConfig`, runs one
check, and writes ``<command>.csv`` (detail table) and
``<command>_summary.csv`` (one row per check) into ``--out``.  The first line
of every CSV is a ``#`` comment carrying the timestamp, config hash, seed and
thread count; everything below it is a deterministic function of the config.

Exit status: 0 when every check passes, 2 when a check fails, 1 on usage or
configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .batch import simulate_batch
from .config import ConfigError, ExperimentConfig, load_config
from .flow import propagate
from .hormander import check_Hn, kalman_rank, uniform_h1_constant
from .malliavin import energies, loglog_slope, stable_half_cdf, wilson_interval
from .noise import decomposition_samples, _cf
from .oracles import OuSystem, ou_char_function, stable_calibration
from .stats import (
    SampleEnsemble,
    empirical_cf,
    fokker_planck_residual,
    generator_apply,
    grid_mass,
    kde_density,
    silverman_bandwidth,
    truncation_bias,
)
from .subordinator import phi, sample_clock_totals, seed_sequence
from .testfunctions import cosine_wave, gaussian_bump

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2
SUMMARY_HEADER = ["check", "value", "threshold", "pass", "claim"]


@dataclass
class Report:
    header: list
    rows: list
    checks: list = field(default_factory=list)  # (check, value, threshold, passed or None, claim)

    @property
    def passed(self) -> bool:
        return all(c[3] is None or bool(c[3]) for c in self.checks)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return "" if v is None else v


def _write_csv(path, banner, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(banner + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _z_grid(d: int, z_max: float, per_axis: int = 5) -> np.ndarray:
    if d == 1:
        return np.linspace(-z_max, z_max, per_axis * per_axis)[:, None]
    if d == 2:
        a = np.linspace(-z_max, z_max, per_axis) / math.sqrt(2.0)
        return np.array([(x, y) for x in a for y in a])
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((per_axis * per_axis, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * np.linspace(0.0, z_max, per_axis * per_axis)[:, None]


def _x0(cfg, d):
    return cfg.get_vector("x0", np.zeros(d))


# --------------------------------------------------------------------------
# subcommands


def cmd_ou_validate(cfg: ExperimentConfig) -> Report:
    model = cfg.build_model()
    if cfg.model["name"] not in ("zero-drift", "linear", "kinetic-linear"):
        raise ConfigError("model.name: ou-validate needs a linear model")
    spec = cfg.build_spec()
    d = model.d
    B = model.jacobian(np.zeros(d))
    system = OuSystem.from_spec(B, model.A, spec)
    x0 = _x0(cfg, d)
    Z = _z_grid(d, cfg.get_float("z_max", 3.0), cfg.get_int("per_axis", 5))
    res = simulate_batch(model, spec, x0, cfg.t, cfg.N, seed_sequence(cfg.seed), eps=cfg.eps, dt_max=cfg.dt_max, threads=cfg.threads)
    emp, se = empirical_cf(SampleEnsemble(res.X), Z)
    ora = ou_char_function(system, cfg.t, Z, x0)
    bias = np.array([truncation_bias(B, model.A, spec, cfg.t, z, cfg.eps) for z in Z])
    err = np.abs(emp - ora)
    budget = 4.0 / math.sqrt(cfg.N) + float(bias.max())
    rows = [list(z) + [e.real, e.imag, s, o.real, o.imag, a, b] for z, e, s, o, a, b in zip(Z, emp, se, ora, err, bias)]
    header = [f"z_{i}" for i in range(d)] + ["re_emp", "im_emp", "se", "re_oracle", "im_oracle", "abs_err", "trunc_bias"]
    return Report(header, rows, [("max_cf_error", float(err.max()), budget, bool(err.max() <= budget), "ou-characteristic-function")])


def cmd_hormander_check(cfg: ExperimentConfig) -> Report:
    model = cfg.build_model()
    d = model.d
    n = cfg.get_int("order", 1)
    if "points" in cfg.experiment:
        pts = cfg.get_matrix("points", np.zeros((1, d)))
    else:
        pts = np.random.default_rng(seed_sequence(cfg.seed)).uniform(-math.pi, math.pi, (cfg.get_int("n_points", 16), d))
    tol = cfg.get_float("tol", 1e-8)
    rows, ok = [], True
    for x in pts:
        r = check_Hn(model, x, n, tol)
        ok &= r.passed
        rows.append(list(x) + [r.rank, r.smallest_retained, r.passed, uniform_h1_constant(model, x[None])])
    c1 = uniform_h1_constant(model, pts)
    checks = [
        (f"bracket_rank_order_{n}", sum(int(r[d + 2]) for r in rows) / len(rows), 1.0, bool(ok), "bracket-rank-condition"),
        ("uniform_first_bracket_c1", c1, 0.0, bool(c1 > 0), "uniform-first-bracket-condition"),
    ]
    if cfg.model["name"] in ("zero-drift", "linear", "kinetic-linear"):
        k = kalman_rank(model.jacobian(np.zeros(d)), model.A, tol)
        checks.append(("kalman_rank", float(k), float(d), k == d, "kalman-condition"))
    header = [f"x_{i}" for i in range(d)] + ["rank", "smallest_sv", "pass", "c1_local"]
    return Report(header, rows, checks)


def cmd_malliavin_spectrum(cfg: ExperimentConfig) -> Report:
    model = cfg.build_model()
    spec = cfg.build_spec()
    d = model.d
    if cfg.N < 10_000:
        raise ConfigError("run.N: malliavin-spectrum needs at least 10000 paths")
    a = cfg.get_matrix("a", np.eye(d))
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    e = cfg.get_vector("eps_grid", [0.2, 0.3, 0.45, 0.65, 1.0])
    x0 = _x0(cfg, d)
    en, res = energies(model, spec, x0, cfg.t, a, cfg.N, seed_sequence(cfg.seed), eps=cfg.eps, dt_max=cfg.dt_max, threads=cfg.threads)
    sigma = res.J @ res.C @ np.swapaxes(res.J, -1, -2)
    lam = np.linalg.eigvalsh(0.5 * (sigma + np.swapaxes(sigma, -1, -2)))[:, 0]
    jumped = res.n_jumps > 0
    counts = (en[:, :, None] <= e[None, None, :]).sum(axis=1)
    lo, hi = wilson_interval(counts, cfg.N)
    p = counts / cfg.N
    rows = [[i, float(ej), p[i, j], lo[i, j], hi[i, j]] for i in range(a.shape[0]) for j, ej in enumerate(e)]
    expect = cfg.get("expect", "nondegenerate" if check_Hn(model, x0, 1).passed else "none")
    frac = float(np.mean(lam[jumped] > 0)) if jumped.any() else math.nan
    checks = [("min_eig_positive_fraction", frac, 1.0, (frac == 1.0) if expect == "nondegenerate" else None, "malliavin-nondegeneracy")]
    for i in range(a.shape[0]):
        s = loglog_slope(e, p[i])
        checks.append((f"small_ball_slope_a{i}", s, 1.0, bool(s > 1.0) if expect == "nondegenerate" else None, "small-ball-decay"))
    if expect == "degenerate":
        z = float(np.max(np.abs(en)))
        checks.append(("max_directional_energy", z, 0.0, z == 0.0, "degenerate-direction"))
    return Report(["a_index", "eps", "p_hat", "ci_lo", "ci_hi"], rows, checks)


def cmd_generator_check(cfg: ExperimentConfig) -> Report:
    model = cfg.build_model()
    spec = cfg.build_spec()
    alpha, c_L = stable_calibration(spec)
    d = model.d
    y = cfg.get_vector("y", np.zeros(d))
    radii = cfg.get_vector("z_radii", [0.5, 1.0, 2.0])
    dirs = np.concatenate([np.eye(d), np.ones((1, d)) / math.sqrt(d)])
    tol = cfg.get_float("tol", 1e-3)
    rows, worst = [], 0.0
    for r in radii:
        for u in dirs:
            z = r * u
            val = generator_apply(model, spec, cosine_wave(z), y)
            ph = float(z @ y)
            exact = -c_L * np.linalg.norm(model.A.T @ z) ** alpha * math.cos(ph) - math.sin(ph) * float(model.drift(y) @ z)
            rel = abs(val - exact) / max(abs(exact), 1e-300) if exact != 0 else abs(val)
            worst = max(worst, rel)
            rows.append(list(z) + [val, exact, rel])
    header = [f"z_{i}" for i in range(d)] + ["generator", "closed_form", "rel_err"]
    return Report(header, rows, [("max_rel_err", worst, tol, worst <= tol, "generator-closed-form")])


def cmd_fp_residual(cfg: ExperimentConfig) -> Report:
    model = cfg.build_model()
    spec = cfg.build_spec()
    d = model.d
    x0 = _x0(cfg, d)
    kind = cfg.get("f", "cosine")
    if kind == "cosine":
        z = cfg.get_vector("z", np.r_[0.25, np.zeros(d - 1)])
        f = cosine_wave(z)
    elif kind == "bump":
        f = gaussian_bump(cfg.get_vector("center", x0), cfg.get_float("width", 0.5))
    else:
        raise ConfigError(f"experiment.f: unknown test function {kind!r}")
    dt = cfg.get_float("dt", 0.01 * cfg.t)
    r = fokker_planck_residual(
        model, spec, f, x0, cfg.t, dt, cfg.N, seed_sequence(cfg.seed),
        inner=cfg.get_int("inner", 64), eps=cfg.eps, dt_max=cfg.dt_max, threads=cfg.threads,
    )
    rows = [[kind, r.residual, r.budget, r.lhs, r.rhs, r.sigma, r.discretization, r.truncation_bias]]
    checks = [("residual", r.residual, r.budget, r.passed, "weak-fokker-planck")]
    if kind == "cosine" and cfg.model["name"] == "zero-drift":
        alpha, c_L = stable_calibration(spec)
        q = c_L * np.linalg.norm(model.A.T @ z) ** alpha
        exact = -q * math.exp(-cfg.t * q) * math.cos(float(z @ x0))
        checks.append(("budget_over_derivative", r.budget / abs(exact), 0.05, r.budget <= 0.05 * abs(exact), "weak-fokker-planck-sharpness"))
        checks.append(("lhs_vs_analytic", abs(r.lhs - exact), r.budget, abs(r.lhs - exact) <= r.budget, "weak-fokker-planck-oracle"))
    header = ["test", "residual", "budget", "lhs", "rhs", "sigma", "discretization", "truncation_bias"]
    return Report(header, rows, checks)


def cmd_decomp_check(cfg: ExperimentConfig) -> Report:
    model = cfg.build_model()
    spec = cfg.build_spec()
    d = model.d
    if cfg.N < 1000:
        raise ConfigError("run.N: decomp-check needs at least 1000 paths")
    Z = _z_grid(d, cfg.get_float("z_max", 3.0), cfg.get_int("per_axis", 5))
    full, split = decomposition_samples(spec, d, cfg.t, cfg.N, seed_sequence(cfg.seed), cfg.eps, model.A)
    c1, c2 = _cf(full, Z), _cf(split, Z)
    alpha, c_L = stable_calibration(spec)
    ora = np.exp(-cfg.t * c_L * np.linalg.norm(Z @ model.A, axis=1) ** alpha)
    gap = np.abs(c1 - c2)
    rows = [list(z) + [a.real, a.imag, b.real, b.imag, o, g] for z, a, b, o, g in zip(Z, c1, c2, ora, gap)]
    header = [f"z_{i}" for i in range(d)] + ["re_full", "im_full", "re_split", "im_split", "oracle", "gap"]
    thr = 8.0 / math.sqrt(cfg.N)
    return Report(header, rows, [("max_cf_gap", float(gap.max()), thr, bool(gap.max() <= thr), "big-jump-decomposition")])


def cmd_norris_bound(cfg: ExperimentConfig) -> Report:
    spec = cfg.build_spec()
    T, N = cfg.t, cfg.N
    eps_grid = cfg.get_vector("eps_grid", np.linspace(0.1, 1.0, 5))
    fracs = cfg.get_vector("delta_fractions", np.linspace(0.5, 0.9, 5))
    S = sample_clock_totals(spec, T, N, np.random.default_rng(seed_sequence(cfg.seed)), cfg.eps)
    rows, ok_bound, ok_oracle = [], True, True
    oracle = stable_half_cdf(spec, T, eps_grid) if spec.beta == 0.5 else None
    for i, e in enumerate(eps_grid):
        p = float(np.mean(S <= e))
        sd = math.sqrt(p * (1 - p) / N)
        for f in fracs:
            bound = math.exp(1.0 - phi(spec, 1.0 / e) * f * T)
            ok = p <= bound + 3 * sd
            ok_bound &= ok
            o = float(oracle[i]) if oracle is not None else math.nan
            rows.append([float(e), float(f * T), p, sd, bound, o, ok])
        if oracle is not None:
            po = float(oracle[i])
            ok_oracle &= abs(p - po) <= 3 * math.sqrt(po * (1 - po) / N) + 1e-12
    checks = [("exponential_bound_grid", float(len(rows)), float(len(rows)), bool(ok_bound), "exponential-clock-bound")]
    if oracle is not None:
        checks.append(("closed_form_cdf_3sigma", 1.0 if ok_oracle else 0.0, 1.0, bool(ok_oracle), "half-stable-clock-cdf"))
    return Report(["eps", "delta", "p_hat", "sigma", "bound", "closed_form", "pass"], rows, checks)


def cmd_kinetic_density(cfg: ExperimentConfig) -> Report:
    model = cfg.build_model()
    spec = cfg.build_spec()
    d = model.d
    x0 = _x0(cfg, d)
    res = simulate_batch(model, spec, x0, cfg.t, cfg.N, seed_sequence(cfg.seed), eps=cfg.eps, dt_max=cfg.dt_max, threads=cfg.threads)
    m = max(1, math.ceil(cfg.t / (cfg.dt_max or cfg.t / 256)))
    h = np.full((1, m), cfg.t / m)
    det = propagate(model, x0, h, np.zeros((1, m, d)), np.zeros((1, m)), 0.0)["X"][0]
    coords = [0, d // 2] if d >= 2 else [0]
    X = res.X[:, coords]
    ens = SampleEnsemble(X)
    scale = silverman_bandwidth(X) / (4.0 / ((len(coords) + 2) * len(X))) ** (1.0 / (len(coords) + 4))
    half = cfg.get_float("half_width", 4.0) * scale
    n_grid = cfg.get_int("n_grid", 41)
    axes = [np.linspace(det[c] - w, det[c] + w, n_grid) for c, w in zip(coords, half)]
    dens = kde_density(ens, axes if len(coords) > 1 else axes[0])
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    rows = [list(p) + [v] for p, v in zip(pts, dens.ravel())]
    inner = np.all(np.abs(pts - det[coords]) <= 0.25 * half, axis=1)
    low = float(dens.ravel()[inner].min())
    checks = [
        ("min_density_near_flow_image", low, 0.0, low > 0.0, "density-positivity"),
        ("grid_mass", grid_mass(dens, axes if len(coords) > 1 else axes[0]), 1.0, None, "density-mass"),
    ]
    header = [f"x_{c}" for c in coords] + ["density"]
    return Report(header, rows, checks)


COMMANDS: dict[str, Callable[[ExperimentConfig], Report]] = {
    "ou-validate": cmd_ou_validate,
    "hormander-check": cmd_hormander_check,
    "malliavin-spectrum": cmd_malliavin_spectrum,
    "generator-check": cmd_generator_check,
    "fp-residual": cmd_fp_residual,
    "decomp-check": cmd_decomp_check,
    "norris-bound": cmd_norris_bound,
    "kinetic-density": cmd_kinetic_density,
}


def run(command: str, cfg: ExperimentConfig, out_dir: str = ".") -> int:
    """Run one subcommand and write its reports; returns the exit status."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown subcommand {command!r}")
    report = COMMANDS[command](cfg)
    os.makedirs(out_dir, exist_ok=True)
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    banner = f"# subsde {command} generated={stamp} config_hash={cfg.digest()} seed={cfg.seed} threads={cfg.threads}"
    _write_csv(os.path.join(out_dir, f"{command}.csv"), banner, report.header, report.rows)
    _write_csv(os.path.join(out_dir, f"{command}_summary.csv"), banner, SUMMARY_HEADER, report.checks)
    return EXIT_OK if report.passed else EXIT_FAIL


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="subsde", description="Simulation checks for SDEs driven by subordinated Brownian motion.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="INI or JSON experiment config")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--threads", type=int, help="override run.threads")
    p.add_argument("--out", default=".", help="output directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.threads)
        status = run(args.command, cfg, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    with open(os.path.join(args.out, f"{args.command}_summary.csv"), encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
