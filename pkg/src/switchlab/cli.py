"""Command-line interface.

Subcommands: ``fit``, ``test``, ``simulate``, ``study``, ``design-compare``.
Options resolve in priority order: command-line flag, then ``--config``
file (flat ``key=value`` lines, keys named like the long flags with
underscores), then the ``SWITCHLAB_SEED`` environment variable for the
seed, then defaults. Every run writes a ``manifest.json`` with the resolved
options so it can be reproduced exactly.

Exit codes: 0 success, 2 input/schema error, 3 numerical degeneracy,
4 internal failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .design import (
    DesignSpec,
    StudyConfig,
    ar1_cov,
    mse_compare,
    noise_environment,
    rejection_study,
    simulate_dataset,
    simulate_st_dataset,
    st_analog_environment,
    temporal_analog_environment,
)
from .errors import (
    AllWeightsZero,
    BootstrapDegenerate,
    DegenerateDesign,
    SchemaError,
    SwitchlabError,
)
from .io import (
    read_panel_csv,
    read_spatio_panel_csv,
    write_adjacency_csv,
    write_coords_csv,
    write_panel_csv,
    write_spatio_panel_csv,
)
from .kernels import KernelSpec
from .stvcdp import STVCDP, decompose_residuals_st, outcome_covariance_st
from .tvcdp import TVCDP, decompose_residuals, outcome_covariance

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DEGENERATE = 3
EXIT_INTERNAL = 4


def _read_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    cfg: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read config file: {exc}") from exc
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SchemaError(f"config line {line_no} is not key=value: {line!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def _resolve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Fill argument values from the config file where flags were left at
    their defaults, and the seed from SWITCHLAB_SEED as a last resort."""
    cfg = _read_config(getattr(args, "config", None))
    defaults = {a.dest: a.default for a in parser._actions}
    types = {a.dest: a.type for a in parser._actions}
    for key, raw in cfg.items():
        if key == "config" or not hasattr(args, key):
            raise SchemaError(f"unknown config key: {key!r}")
        if getattr(args, key) == defaults.get(key):
            default = defaults.get(key)
            caster = types.get(key)
            if isinstance(default, bool):
                setattr(args, key, raw.lower() in ("1", "true", "yes"))
            elif caster is not None:
                setattr(args, key, caster(raw))
            elif isinstance(default, int):
                setattr(args, key, int(raw))
            elif isinstance(default, float):
                setattr(args, key, float(raw))
            else:
                setattr(args, key, raw)
    if getattr(args, "seed", None) is None:
        env_seed = os.environ.get("SWITCHLAB_SEED")
        args.seed = int(env_seed) if env_seed is not None else 0


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace) -> None:
    payload = {
        "tool": "switchlab",
        "version": __version__,
        "command": command,
        "options": {
            k: v
            for k, v in sorted(vars(args).items())
            if k not in ("func", "command", "_subparser")
        },
    }
    (out_dir / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(args: argparse.Namespace):
    if args.model == "stvcdp":
        if not args.adjacency:
            raise SchemaError("--adjacency is required for the spatio-temporal model")
        return read_spatio_panel_csv(args.input, args.adjacency, args.coords)
    return read_panel_csv(args.input)


def _fit_estimator(args: argparse.Namespace, dataset):
    if args.model == "stvcdp":
        est = STVCDP(bandwidth=args.bandwidth, spatial_bandwidth=args.spatial_bandwidth)
    else:
        est = TVCDP(bandwidth=args.bandwidth)
    return est.fit(dataset)


def _write_fit_diagnostics(out: Path, args: argparse.Namespace, dataset, est) -> None:
    """Outcome error covariance and residual-component CSVs for a fit."""
    spec = est._spec()
    if args.model == "stvcdp":
        n, m, r = dataset.n, dataset.m, dataset.r
        total, eta_ts, eta_region, eta_time, eps = decompose_residuals_st(
            dataset, est.path_, spec
        )
        sigma_y = outcome_covariance_st(eta_ts, eta_region, eta_time, eps)
        idx = pd.MultiIndex.from_product(
            [range(n), range(1, m + 1), range(r)], names=["date", "time", "region_id"]
        )
        resid = pd.DataFrame(
            {
                "residual": total.transpose(0, 1, 2).ravel(),
                "eta_smooth": eta_ts.ravel(),
                "eta_region": eta_region.ravel(),
                "eta_time": eta_time.ravel(),
                "eps": eps.ravel(),
            },
            index=idx,
        ).reset_index()
    else:
        n, m = dataset.n, dataset.m
        total, eta, eps = decompose_residuals(dataset, est.path_, spec)
        sigma_y = outcome_covariance(eta, eps)
        idx = pd.MultiIndex.from_product(
            [range(n), range(1, m + 1)], names=["date", "time"]
        )
        resid = pd.DataFrame(
            {"residual": total.ravel(), "eta": eta.ravel(), "eps": eps.ravel()},
            index=idx,
        ).reset_index()
    pd.DataFrame(sigma_y).to_csv(out / "sigma_y.csv", index=False)
    resid.to_csv(out / "residuals.csv", index=False)


def cmd_fit(args: argparse.Namespace) -> int:
    dataset = _load_dataset(args)
    est = _fit_estimator(args, dataset)
    out = _out_dir(args)
    theta = est.path_.theta
    if args.model == "stvcdp":
        m, r, p = theta.shape
        rows = {
            "time": np.repeat(np.arange(1, m + 1), r),
            "region_id": np.tile(np.arange(r), m),
        }
        flat = theta.reshape(m * r, p)
    else:
        m, p = theta.shape
        rows = {"time": np.arange(1, m + 1)}
        flat = theta
    for j in range(p):
        rows[f"coef_{j}"] = flat[:, j]
    pd.DataFrame(rows).to_csv(out / "coefficients.csv", index=False)
    _write_fit_diagnostics(out, args, dataset, est)
    summary = {
        "model": args.model,
        "direct_effect": est.direct_effect_,
        "indirect_effect": est.indirect_effect_,
        "bandwidth": est.bandwidth_,
    }
    if args.model == "stvcdp":
        summary["spatial_bandwidth"] = est.spatial_bandwidth_
    (out / "fit.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_manifest(out, "fit", args)
    print(
        f"fit {args.model}: DE={summary['direct_effect']:.6g} "
        f"IE={summary['indirect_effect']:.6g}"
    )
    return EXIT_OK


def cmd_test(args: argparse.Namespace) -> int:
    dataset = _load_dataset(args)
    est = _fit_estimator(args, dataset)
    if args.effect == "DE":
        report = est.de_test(alpha=args.alpha, sides=args.sides)
    else:
        report = est.ie_test(
            n_bootstrap=args.bootstrap, alpha=args.alpha, sides=args.sides, seed=args.seed
        )
    out = _out_dir(args)
    (out / "test.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    _write_manifest(out, "test", args)
    verdict = "reject" if report.reject else "fail to reject"
    print(
        f"{args.effect} test ({args.sides}): estimate={report.estimate:.6g} "
        f"p={report.p_value:.4g} alpha={report.alpha} -> {verdict}"
    )
    return EXIT_OK


def _preset_env(args: argparse.Namespace, delta_de: float, delta_ie: float):
    if args.preset == "spatiotemporal":
        return st_analog_environment(delta_de, delta_ie, m=args.m)
    if args.preset == "temporal":
        return temporal_analog_environment(delta_de, delta_ie, m=args.m)
    raise SchemaError(f"unknown preset: {args.preset!r}")


def cmd_simulate(args: argparse.Namespace) -> int:
    env = _preset_env(args, args.delta_de, args.delta_ie)
    design = DesignSpec(kind=args.design, ti=args.ti)
    out = _out_dir(args)
    if args.preset == "spatiotemporal":
        ds = simulate_st_dataset(env, design, args.n, args.seed)
        write_spatio_panel_csv(out / "panel.csv", ds)
        write_adjacency_csv(out / "adjacency.csv", ds.adjacency)
        write_coords_csv(out / "coords.csv", ds.coords)
    else:
        ds = simulate_dataset(env, design, args.n, args.seed)
        write_panel_csv(out / "panel.csv", ds)
    _write_manifest(out, "simulate", args)
    print(f"simulated {args.preset} panel: n={args.n} m={args.m} -> {out / 'panel.csv'}")
    return EXIT_OK


def _float_grid(raw: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in raw.split(",") if x != "")
    except ValueError as exc:
        raise SchemaError(f"bad numeric grid: {raw!r}") from exc


def _int_grid(raw: str) -> tuple[int, ...]:
    return tuple(int(x) for x in _float_grid(raw))


def cmd_study(args: argparse.Namespace) -> int:
    delta_pairs = tuple(
        (d_de, d_ie)
        for d_de in _float_grid(args.delta_de_grid)
        for d_ie in _float_grid(args.delta_ie_grid)
    )
    config = StudyConfig(
        model="stvcdp" if args.preset == "spatiotemporal" else "tvcdp",
        effects=tuple(args.effects.split(",")),
        designs=tuple(args.designs.split(",")),
        n_grid=_int_grid(args.n_grid),
        ti_grid=_int_grid(args.ti_grid),
        delta_pairs=delta_pairs,
        replicates=args.replicates,
        alpha=args.alpha,
        sides=args.sides,
        n_bootstrap=args.bootstrap,
        bandwidth=args.bandwidth,
        spatial_bandwidth=args.spatial_bandwidth,
        seed=args.seed,
        workers=args.workers,
        verbose=True,
    )
    builder = (
        st_analog_environment
        if args.preset == "spatiotemporal"
        else temporal_analog_environment
    )
    table = rejection_study(builder, config)
    out = _out_dir(args)
    table.to_csv(out / "study.csv", index=False)
    _write_manifest(out, "study", args)
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_design_compare(args: argparse.Namespace) -> int:
    designs = [DesignSpec(kind=k, ti=args.ti) for k in args.designs.split(",")]
    rows = []
    for m in _int_grid(args.m_grid):
        env = noise_environment(m=m, rho=args.rho, eps_sd=args.eps_sd)
        mses = mse_compare(env, designs, args.n, args.replicates, seed=args.seed)
        for kind, mse in mses.items():
            rows.append({"m": m, "rho": args.rho, "design": kind, "mse": mse})
    table = pd.DataFrame(rows)
    out = _out_dir(args)
    table.to_csv(out / "design_compare.csv", index=False)
    _write_manifest(out, "design-compare", args)
    print(table.to_string(index=False))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="switchlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None, help="master RNG seed")
        p.add_argument("--out", required=True, help="output directory")

    def data_opts(p: argparse.ArgumentParser) -> None:
        p.add_argument("--input", required=True, help="panel CSV")
        p.add_argument("--adjacency", help="adjacency edge-list CSV (spatio model)")
        p.add_argument("--coords", help="region coordinates CSV")
        p.add_argument("--model", choices=("tvcdp", "stvcdp"), default="tvcdp")
        p.add_argument("--bandwidth", type=float, default=None)
        p.add_argument("--spatial-bandwidth", type=float, default=None)

    p_fit = sub.add_parser("fit", help="fit a model and export coefficient paths")
    data_opts(p_fit)
    common(p_fit)
    p_fit.set_defaults(_subparser=p_fit, func=cmd_fit)

    p_test = sub.add_parser("test", help="test the direct or indirect effect")
    data_opts(p_test)
    p_test.add_argument("--effect", choices=("DE", "IE"), default="DE")
    p_test.add_argument("--alpha", type=float, default=0.05)
    p_test.add_argument("--sides", choices=("one_sided", "two_sided"), default="one_sided")
    p_test.add_argument("--bootstrap", type=int, default=400)
    common(p_test)
    p_test.set_defaults(_subparser=p_test, func=cmd_test)

    p_sim = sub.add_parser("simulate", help="simulate a synthetic panel")
    p_sim.add_argument("--preset", choices=("temporal", "spatiotemporal"), default="temporal")
    p_sim.add_argument("--n", type=int, default=8)
    p_sim.add_argument("--m", type=int, default=48)
    p_sim.add_argument("--delta-de", type=float, default=0.0)
    p_sim.add_argument("--delta-ie", type=float, default=0.0)
    p_sim.add_argument("--design", default="switchback")
    p_sim.add_argument("--ti", type=int, default=1)
    common(p_sim)
    p_sim.set_defaults(_subparser=p_sim, func=cmd_simulate)

    p_study = sub.add_parser("study", help="rejection-rate study over a grid")
    p_study.add_argument("--preset", choices=("temporal", "spatiotemporal"), default="temporal")
    p_study.add_argument("--effects", default="DE")
    p_study.add_argument("--designs", default="switchback")
    p_study.add_argument("--n-grid", default="8,14,20")
    p_study.add_argument("--ti-grid", default="1,3,6")
    p_study.add_argument("--delta-de-grid", default="0")
    p_study.add_argument("--delta-ie-grid", default="0")
    p_study.add_argument("--replicates", type=int, default=400)
    p_study.add_argument("--alpha", type=float, default=0.05)
    p_study.add_argument("--sides", choices=("one_sided", "two_sided"), default="one_sided")
    p_study.add_argument("--bootstrap", type=int, default=400)
    p_study.add_argument("--bandwidth", type=float, default=None)
    p_study.add_argument("--spatial-bandwidth", type=float, default=None)
    p_study.add_argument("--workers", type=int, default=1)
    common(p_study)
    p_study.set_defaults(_subparser=p_study, func=cmd_study)

    p_dc = sub.add_parser("design-compare", help="MSE comparison across designs")
    p_dc.add_argument("--designs", default="switchback,alternating_day")
    p_dc.add_argument("--m-grid", default="6,12,24,48")
    p_dc.add_argument("--n", type=int, default=200)
    p_dc.add_argument("--ti", type=int, default=1)
    p_dc.add_argument("--rho", type=float, default=0.8)
    p_dc.add_argument("--eps-sd", type=float, default=0.6)
    p_dc.add_argument("--replicates", type=int, default=400)
    common(p_dc)
    p_dc.set_defaults(_subparser=p_dc, func=cmd_design_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _resolve(args, getattr(args, "_subparser", parser))
        return args.func(args)
    except (SchemaError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DegenerateDesign, AllWeightsZero, BootstrapDegenerate) as exc:
        print(f"numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except SwitchlabError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - safety net
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
