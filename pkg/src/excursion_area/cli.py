"""Command-line front end: ``analyze``, ``exact``, ``mc``, ``fit`` and ``zeromean``.

A run is described by a :class:`RunConfig`, read from an optional JSON
config file and overridden by flags. Artifacts go to ``<out>/<hash>/`` where
the hash covers every field except the subcommand, so the subcommands of one
setup share a directory (``fit`` reads the table written by ``exact``).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import assemble_constants, chebyshev_bound, cramer_profile, saddle
from .errors import ExcursionError, GateFailure, ValidationError
from .exact import (area_tail, area_tails, excursion_law, load_table, save_table, survival_exact,
                    tilted_layer)
from .fit import (cheb_check, duration_clt_trace, kappa_fit, llt_error, tail_ratio, zero_mean_check)
from .increments import LatticePMF, tilt, validate
from .simulate import is_local, is_tail, naive_excursion, survival_q, survival_qhat

EXAMPLE_PMF = [[-1, 0.5], [0, 0.3], [1, 0.2]]
ZERO_MEAN_PMF = [[-1, 0.3], [0, 0.4], [1, 0.3]]

DEFAULT_TOLERANCES = {
    "kappa": 0.05,
    "kappa_assembled": 0.10,
    "tail": 0.05,
    "tail_closed_form": 0.10,
    "tv": 0.05,
    "mean": 0.02,
    "peak": 0.15,
    "zero_mean": 0.10,
    "chebyshev_spread": 2.0,
}


@dataclass
class RunConfig:
    """Everything a run depends on. ``command`` is not part of :meth:`config_hash`."""

    pmf: list = field(default_factory=lambda: [list(e) for e in EXAMPLE_PMF])
    command: str = "analyze"
    a_max: int = 4000
    n_max: int | None = None
    s_max: int | None = None
    xgrid: list = field(default_factory=lambda: list(range(400, 4001, 400)))
    seed: int = 0
    replicas: int = 100_000
    is_replicas: int = 256
    survival_horizon: int = 400
    mc_x: int = 400
    llt_horizons: list = field(default_factory=lambda: [20, 40, 80, 160])
    barriers: list = field(default_factory=lambda: [0, 1, 2])
    bridge_endpoints: list = field(default_factory=lambda: [1, 2, 3])
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    out: str = "out"
    precision: str = "double"
    workers: int = 1
    zero_mean_pmf: list = field(default_factory=lambda: [list(e) for e in ZERO_MEAN_PMF])
    zero_mean_n: int = 400
    zero_mean_samples: int = 20_000

    def __post_init__(self):
        self.pmf = [[int(k), float(p)] for k, p in self.pmf]
        self.zero_mean_pmf = [[int(k), float(p)] for k, p in self.zero_mean_pmf]
        self.xgrid = sorted({int(x) for x in self.xgrid})
        tol = dict(DEFAULT_TOLERANCES)
        tol.update({k: float(v) for k, v in self.tolerances.items()})
        self.tolerances = tol
        if self.precision not in ("double", "dd"):
            raise ValidationError("precision must be 'double' or 'dd'")

    @classmethod
    def from_dict(cls, doc: dict, base: Path | None = None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        for key in ("pmf", "zero_mean_pmf"):
            if isinstance(doc.get(key), str):
                path = Path(doc[key])
                if base is not None and not path.is_absolute():
                    path = base / path
                doc[key] = _read_pmf_file(path)
        if isinstance(doc.get("xgrid"), str):
            doc["xgrid"] = parse_grid(doc["xgrid"])
        return cls(**doc)

    def canonical(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        doc = asdict(self)
        doc.pop("command")
        doc.pop("workers")
        return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:12]

    def lattice_pmf(self) -> LatticePMF:
        return LatticePMF.from_pairs(self.pmf)

    @property
    def run_dir(self) -> Path:
        return Path(self.out) / self.config_hash()


def _read_pmf_file(path: Path) -> list:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"distribution file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"distribution file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "pmf" not in doc:
        raise ValidationError(f'distribution file {path} must hold an object with a "pmf" list')
    return [[int(k), float(p)] for k, p in doc["pmf"]]


def parse_grid(text: str) -> list[int]:
    """``"a:b:step"`` to the integers a, a + step, ... <= b."""
    try:
        parts = [int(v) for v in text.split(":")]
    except ValueError:
        raise ValidationError(f"bad grid {text!r}; expected a:b:step") from None
    if len(parts) != 3 or parts[2] <= 0 or parts[0] > parts[1]:
        raise ValidationError(f"bad grid {text!r}; expected a:b:step with a <= b and step > 0")
    return list(range(parts[0], parts[1] + 1, parts[2]))


def _dump(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _line(name: str, ok: bool, detail: str) -> str:
    return f"{'PASS' if ok else 'FAIL'}  {name:<36} {detail}"


# ---------------------------------------------------------------------------
# subcommands


def _survival_constants(pmf: LatticePMF, lam: float, cfg: RunConfig, ys) -> dict:
    tilted, neg = tilt(pmf, lam), pmf.negated()
    q = {a: survival_q(tilted, a, cfg.survival_horizon, cfg.replicas, cfg.seed, workers=cfg.workers)
         for a in sorted(set(cfg.barriers) | {0})}
    qhat = {y: survival_qhat(neg, y, cfg.survival_horizon, cfg.replicas, cfg.seed, workers=cfg.workers)
            for y in ys}
    return {"q": q, "qhat": qhat}


def cmd_analyze(cfg: RunConfig) -> int:
    pmf = cfg.lattice_pmf()
    report = validate(pmf)
    if not report.valid:
        print("invalid increment law: " + "; ".join(report.messages), file=sys.stderr)
        return ValidationError.exit_code
    prof = cramer_profile(pmf)
    lam = prof.lam
    y_max = max(1, -pmf.min_offset)
    q0 = survival_exact(tilt(pmf, lam), 0, cfg.survival_horizon)
    qhat = [survival_exact(pmf.negated(), y, cfg.survival_horizon) for y in range(1, y_max + 1)]
    consts = assemble_constants(prof, pmf, q0.finite_horizon, [v.finite_horizon for v in qhat])
    cheb = chebyshev_bound(prof, float(cfg.mc_x))
    doc = {
        "config_hash": cfg.config_hash(),
        "pmf": pmf.entries,
        "validation": {"mean": report.mean, "aperiodic": report.aperiodic,
                       "negative_drift": report.negative_drift, "cramer_root_exists": report.cramer_satisfiable},
        "profile": prof.to_dict(),
        "theta_identity_gap": abs(prof.theta ** 2 / (4 * lam ** 2) - prof.I),
        "survival_exact": {"horizon": cfg.survival_horizon, "q0": q0.finite_horizon, "q0_bracket": q0.bracket,
                           "qhat": [v.finite_horizon for v in qhat]},
        "constants": consts.to_dict(),
        "chebyshev": {"sup_gap": prof.gap_sup, "constant": cheb.constant,
                      "envelope_constant": cheb.envelope_constant},
        "saddle": dict(zip(("t0", "n_minus", "n_plus"), saddle(prof, float(cfg.mc_x)))),
    }
    out = cfg.run_dir / "profile.json"
    _dump(out, doc)
    rows = [("lambda", lam), ("I", prof.I), ("theta", prof.theta), ("theta^2/(4 lambda^2) - I", doc["theta_identity_gap"]),
            ("V", prof.V), ("V_cond", prof.V_cond), ("Delta^2 (derived)", prof.delta2),
            ("q(0)", consts.q0), ("Q", consts.Q), ("kappa (derived)", consts.kappa)]
    for name, val in rows:
        print(f"{name:<26} {val:.12g}")
    print(f"wrote {out}")
    return 0


def _cached_table(cfg: RunConfig, pmf: LatticePMF):
    d = cfg.run_dir
    if (d / "table_header.json").exists():
        try:
            return load_table(d, expect_pmf=pmf)
        except ValidationError:
            return None
    return None


def cmd_exact(cfg: RunConfig) -> int:
    pmf = cfg.lattice_pmf()
    table = _cached_table(cfg, pmf)
    source = "cached"
    if table is None:
        table = excursion_law(pmf, cfg.a_max, cfg.n_max, cfg.s_max, precision=cfg.precision)
        save_table(table, cfg.run_dir, {"config_hash": cfg.config_hash()})
        source = "computed"
    tails = area_tails(table)
    marg = np.asarray(table.marginal, dtype=np.float64)
    lines = ["a,probability,tail"]
    lines += [f"{a},{m!r},{t!r}" for a, (m, t) in enumerate(zip(marg.tolist(), tails.tolist()))]
    (cfg.run_dir / "marginals.csv").write_text("\n".join(lines) + "\n")
    total = float(table.total_stopped_mass + table.alive_mass_at_caps + table.overflow_mass)
    print(f"table {source}: layers={table.layers} a_max={table.a_max} s_max={table.s_max}")
    print(f"conservation: stopped + alive + overflow = {total!r} (error {abs(total - 1):.3g})")
    print(f"P(A=0) = {float(marg[0])!r}; P(X<=0) = {float(pmf.prob_at_most(0))!r}")
    return 0


def cmd_mc(cfg: RunConfig) -> int:
    pmf = cfg.lattice_pmf()
    prof = cramer_profile(pmf)
    x = cfg.mc_x
    naive = naive_excursion(pmf, cfg.replicas, cfg.seed, local=(0, 1), tail=(1,), workers=cfg.workers)
    loc = is_local(pmf, prof, x, N=cfg.is_replicas, seed=cfg.seed, workers=cfg.workers)
    tl = is_tail(pmf, prof, x, N=cfg.is_replicas, seed=cfg.seed, workers=cfg.workers)
    table = _cached_table(cfg, pmf)
    if table is None or table.a_max < x:
        table = excursion_law(pmf, x)
    exact_local = float(table.marginal[x])
    exact_tail = area_tail(table, x).value
    surv = _survival_constants(pmf, prof.lam, cfg, range(1, max(1, -pmf.min_offset) + 1))

    def check(rep, exact):
        z = (rep.estimate - exact) / rep.std_error
        return {"exact": exact, "z": z, "within_3se": bool(abs(z) <= 3)}

    doc = {
        "config_hash": cfg.config_hash(),
        "x": x,
        "naive": {k: v.to_dict() for k, v in naive.items()},
        "is_local": loc.to_dict(),
        "is_tail": tl.to_dict(),
        "is_vs_dp": {"local": check(loc, exact_local), "tail": check(tl, exact_tail)},
        "survival_q": {str(a): r.to_dict() for a, r in surv["q"].items()},
        "survival_qhat": {str(y): r.to_dict() for y, r in surv["qhat"].items()},
    }
    _dump(cfg.run_dir / "mc.json", doc)
    for name, rep in (("naive P(A=0)", naive["P(A=0)"]), (f"IS P(A={x})", loc), (f"IS P(A>={x})", tl)):
        print(f"{name:<16} {rep.estimate:.6g} +- {rep.std_error:.3g} (N={rep.replicas})")
    for key, res in doc["is_vs_dp"].items():
        print(f"IS-vs-DP {key}: exact {res['exact']:.6g}, z = {res['z']:+.2f}, within 3 SE: {res['within_3se']}")
    return 0


def run_fit(cfg: RunConfig, table=None) -> dict:
    """Compute every convergence check for ``cfg``; returns the summary and traces."""
    pmf = cfg.lattice_pmf()
    if table is None:
        table = load_table(cfg.run_dir, expect_pmf=pmf)
    prof = cramer_profile(pmf)
    tol = cfg.tolerances
    traces = {}
    checks = {}

    kt = kappa_fit(table, prof, tol["kappa"])
    traces["kappa_hat"] = kt
    y_max = max(1, -pmf.min_offset)
    ys = sorted(set(range(1, y_max + 1)) | set(cfg.bridge_endpoints))
    surv = _survival_constants(pmf, prof.lam, cfg, ys)
    q = {a: r.estimate for a, r in surv["q"].items()}
    qhat = {y: r.estimate for y, r in surv["qhat"].items()}
    consts = assemble_constants(prof, pmf, q[0], [qhat[y] for y in range(1, y_max + 1)])
    kappa_gap = abs(consts.kappa / kt.summary["kappa_top"] - 1)
    checks["local_asymptotics"] = {
        "kappa_variation": {"passed": bool(kt.passed),
                            "tolerance": tol["kappa"], **kt.summary},
        "kappa_assembled": {"passed": bool(kappa_gap <= tol["kappa_assembled"]), "kappa_assembled": consts.kappa,
                            "kappa_hat_top": kt.summary["kappa_top"], "relative_gap": kappa_gap,
                            "tolerance": tol["kappa_assembled"], "Q": consts.Q,
                            "survival_brackets": max(r.extras["bracket"] for r in
                                                     list(surv["q"].values()) + list(surv["qhat"].values()))},
    }
    rt, ct = tail_ratio(table, prof, tol["tail"], tol["tail_closed_form"])
    traces["tail_ratio"], traces["tail_closed_form"] = rt, ct
    checks["tail_asymptotics"] = {"ratio": {"passed": bool(rt.passed), **rt.summary},
                                  "closed_form": {"passed": bool(ct.passed), **ct.summary}}
    bt, gt = cheb_check(table, prof, 50, tol["chebyshev_spread"])
    traces["chebyshev_bound"], traces["chebyshev_gap"] = bt, gt
    checks["chebyshev_bound"] = {"dominates": {"passed": bool(bt.passed), **bt.summary},
                                 "sqrt_x_gap": {"passed": bool(gt.passed), **gt.summary}}
    xs = [x for x in cfg.xgrid if x <= table.a_max]
    tvt, mt = duration_clt_trace(table, prof, xs, tol["tv"], tol["mean"])
    traces["duration_tv"], traces["duration_mean"] = tvt, mt
    checks["duration_clt"] = {"tv": {"passed": bool(tvt.passed), **tvt.summary},
                              "mean": {"passed": bool(mt.passed), **mt.summary}}
    free = [llt_error(pmf, prof, n, 0.5) for n in cfg.llt_horizons]
    errs = [r.sup_error for r in free]
    checks["free_local_limit"] = {"passed": bool(np.all(np.diff(errs) < 0)),
                                  "horizons": list(cfg.llt_horizons), "sup_errors": errs}
    n_top = max(cfg.llt_horizons)
    barrier = {a: llt_error(pmf, prof, n_top, 0.5, "barrier", barrier=a, q=q[a]) for a in cfg.barriers}
    checks["barrier_local_limit"] = {
        "passed": bool(all(abs(r.peak_ratio - 1) <= tol["peak"] for r in barrier.values())),
        "n": n_top, "peak_ratios": {str(a): r.peak_ratio for a, r in barrier.items()},
        "q": {str(a): q[a] for a in cfg.barriers}, "tolerance": tol["peak"]}
    layer = tilted_layer(pmf, n_top, 1.0, barrier=0, lam=prof.lam)
    bridge = {x: llt_error(pmf, prof, n_top, 1.0, "bridge", endpoint=x, q=q[0], qhat=qhat[x], layer=layer)
              for x in cfg.bridge_endpoints}
    checks["bridge_local_limit"] = {
        "passed": bool(all(abs(r.peak_ratio - 1) <= tol["peak"] for r in bridge.values())),
        "n": n_top, "peak_ratios": {str(x): r.peak_ratio for x, r in bridge.items()},
        "qhat": {str(x): qhat[x] for x in cfg.bridge_endpoints}, "tolerance": tol["peak"]}
    return {"checks": checks, "traces": traces, "constants": consts}


def _flatten_verdicts(checks: dict):
    for name, body in checks.items():
        if "passed" in body:
            yield name, body
        else:
            for sub, inner in body.items():
                yield f"{name}.{sub}", inner


def _detail(body: dict) -> str:
    skip = {"passed", "tolerance", "horizons", "n", "q", "qhat"}
    parts = []
    for key, val in body.items():
        if key in skip:
            continue
        if isinstance(val, float):
            parts.append(f"{key}={val:.4g}")
        elif isinstance(val, list) and val and isinstance(val[0], float):
            parts.append(f"{key}=[" + ", ".join(f"{v:.4g}" for v in val) + "]")
        elif isinstance(val, dict):
            parts.append(f"{key}={{" + ", ".join(f"{k}: {v:.4g}" for k, v in val.items()) + "}")
    return " ".join(parts[:4])


def cmd_fit(cfg: RunConfig) -> int:
    try:
        result = run_fit(cfg)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"hint: run `excursion-area exact` with the same configuration to create {cfg.run_dir}/table.bin",
              file=sys.stderr)
        return ValidationError.exit_code
    for name, trace in result["traces"].items():
        trace.to_csv(cfg.run_dir / "traces" / f"{name}.csv")
    flat = dict(_flatten_verdicts(result["checks"]))
    verdicts = {name: body["passed"] for name, body in flat.items()}
    summary = {"config_hash": cfg.config_hash(), "checks": result["checks"],
               "constants": result["constants"].to_dict(), "verdicts": verdicts,
               "all_passed": all(verdicts.values())}
    _dump(cfg.run_dir / "summary.json", summary)
    for name, body in flat.items():
        print(_line(name, body["passed"], _detail(body)))
    return 0 if summary["all_passed"] else GateFailure.exit_code


def cmd_zeromean(cfg: RunConfig) -> int:
    pmf = LatticePMF.from_pairs(cfg.zero_mean_pmf)
    res = zero_mean_check(pmf, a_max=cfg.a_max, conditioned_n=cfg.zero_mean_n, samples=cfg.zero_mean_samples,
                          seed=cfg.seed, tolerance=cfg.tolerances["zero_mean"])
    d = cfg.run_dir / "zeromean"
    res.c0_trace.to_csv(d / "traces" / "c0_fit.csv")
    res.dp_trace.to_csv(d / "traces" / "zero_mean_tail.csv")
    _dump(d / "summary.json", {"config_hash": cfg.config_hash(), **res.to_dict()})
    lo, hi = res.interval
    print(f"C0 = {res.c0:.6g}; integral = {res.integral:.6g} +- {res.integral_se:.2g}")
    print(_line("zero_mean_tail", res.passed,
                f"x^(1/3) P(A>x) at x={res.dp_x}: {res.dp_value:.6g} in [{lo:.6g}, {hi:.6g}]"))
    return 0 if res.passed else GateFailure.exit_code


COMMANDS = {"analyze": cmd_analyze, "exact": cmd_exact, "mc": cmd_mc, "fit": cmd_fit, "zeromean": cmd_zeromean}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="excursion-area", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its fields")
    common.add_argument("--pmf", help='distribution file {"pmf": [[offset, prob], ...]}')
    common.add_argument("--amax", type=int, dest="a_max")
    common.add_argument("--nmax", type=int, dest="n_max")
    common.add_argument("--smax", type=int, dest="s_max")
    common.add_argument("--xgrid", help="a:b:step")
    common.add_argument("--seed", type=int)
    common.add_argument("--replicas", type=int, help="naive and survival replica count")
    common.add_argument("--is-replicas", type=int, dest="is_replicas", help="importance-sampling bundles")
    common.add_argument("--mc-x", type=int, dest="mc_x")
    common.add_argument("--out")
    common.add_argument("--precision", choices=["double", "dd"])
    common.add_argument("--workers", type=int)
    for name in DEFAULT_TOLERANCES:
        common.add_argument(f"--tol-{name.replace('_', '-')}", type=float, dest=f"tol_{name}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    doc: dict = {}
    base = None
    if args.config:
        path = Path(args.config)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None
        base = path.parent
    if args.pmf:
        doc["pmf"] = _read_pmf_file(Path(args.pmf))
    for key in ("a_max", "n_max", "s_max", "seed", "replicas", "is_replicas", "mc_x", "out", "precision",
                "workers"):
        val = getattr(args, key)
        if val is not None:
            doc[key] = val
    if args.xgrid:
        doc["xgrid"] = parse_grid(args.xgrid)
    tol = dict(doc.get("tolerances", {}))
    for name in DEFAULT_TOLERANCES:
        val = getattr(args, f"tol_{name}")
        if val is not None:
            tol[name] = val
    doc["tolerances"] = tol
    doc["command"] = args.command
    return RunConfig.from_dict(doc, base)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        cfg.lattice_pmf()
        cfg.run_dir.mkdir(parents=True, exist_ok=True)
        (cfg.run_dir / "config.json").write_text(
            json.dumps(json.loads(cfg.canonical()) | {"command": None}, indent=2, sort_keys=True) + "\n")
        return COMMANDS[cfg.command](cfg)
    except ExcursionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
