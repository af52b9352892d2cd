"""Command-line front end.

Every subcommand reads one JSON input, writes canonical JSON to ``--out``
(or stdout) and, when writing files, a ``<out>.manifest.json`` run record.
Exit codes: 0 ok, 2 input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys as _sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import io
from .criteria import (GapConfig, check_condition_C, check_equality_fixed_chain,
                       condC_density_probe, gap_report,
                       sampled_lyapunov_certificate)
from .ctmc import MarkovParams, stationary_structure
from .detlyap import (DEFAULT_GRID, BracketConfig, lambda_d_bracket,
                      max_abscissa_over_hull)
from .errors import InvalidInput, SwitchLyapError
from .hierarchy import (DEFAULT_FIT_TOL, build_hierarchy, limit_process)
from .linalg import skew_shift_certificate
from .pdmp import (ConvexifiedProcess, coupled_convergence_experiment,
                   lambda_p_by_classes, lambda_p_estimate, mu_scan,
                   sphere_occupation)

log = logging.getLogger("switchlyap")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
SCAN_COLUMNS = ("mu", "value", "stderr", "T", "n_traj")


def _floats(text: str, name: str) -> List[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InvalidInput(f"--{name}: expected comma-separated numbers") from None
    if not vals:
        raise InvalidInput(f"--{name}: empty list")
    return vals


def parse_ngrid(text: str) -> List[float]:
    """``a:b`` (decades), ``a:b:k`` (k log-spaced points) or a comma list."""
    if ":" not in text:
        return _floats(text, "ngrid")
    parts = text.split(":")
    try:
        lo, hi = float(parts[0]), float(parts[1])
        k = int(parts[2]) if len(parts) == 3 else None
    except (ValueError, IndexError):
        raise InvalidInput("--ngrid: expected a:b or a:b:k") from None
    if len(parts) > 3 or not (0 < lo < hi):
        raise InvalidInput("--ngrid: need 0 < a < b")
    if k is None:
        k = int(round(np.log10(hi / lo))) + 1
    if k < 3:
        raise InvalidInput("--ngrid: need at least 3 grid points")
    return [float(v) for v in np.logspace(np.log10(lo), np.log10(hi), k)]


def _require_markov(params: Optional[MarkovParams]) -> MarkovParams:
    if params is None:
        raise InvalidInput("markov: required for this command (fields nu, mu, P)")
    return params


def _hull_point(sysm, weights, seed):
    if weights is not None:
        return np.asarray(weights, dtype=float), None
    val, w = max_abscissa_over_hull(sysm, seed=seed)
    return w, val


def _bracket_config(args) -> BracketConfig:
    grid = tuple(_floats(args.grid, "grid")) if args.grid else DEFAULT_GRID
    return BracketConfig(grid=grid, depth=args.depth or 12, seed=args.seed)


# each handler returns (json document, optional csv rows)

def cmd_det(args):
    sysm, _, _ = io.parse_system_file(args.input)
    br = lambda_d_bracket(sysm, _bracket_config(args))
    return {"lower": br.lower, "upper": br.upper, "gap": br.gap,
            "witness": br.lower_witness, "Q": br.upper_norm}, None


def cmd_prob(args):
    sysm, params, _ = io.parse_system_file(args.input)
    params = _require_markov(params)
    T, n = args.T or 100.0, args.traj or 100
    est = lambda_p_estimate(sysm, params, T, n, args.seed, args.threads)
    by_class = lambda_p_by_classes(sysm, params, T, n, args.seed, args.threads)
    return {"estimate": est, "class_decomposition": by_class}, None


def cmd_classes(args):
    _, params, _ = io.parse_system_file(args.input)
    st = stationary_structure(_require_markov(params))
    return {"classes": [c + 1 for c in st.classes],
            "transient": st.transient + 1,
            "class_invariants": st.class_invariants,
            "absorption": st.alphas}, None


def _level_doc(lv):
    return {"classes": [c + 1 for c in lv.classes], "delta": lv.delta + 1,
            "exponent": lv.exponent, "coefficient": lv.coefficient,
            "raw_exponent": lv.raw_exponent, "residual": lv.residual,
            "rates": lv.rates, "rate_exponents": lv.rate_exponents,
            "low_confidence": lv.low_confidence}


def _hierarchy(args):
    family, modes = io.parse_rate_family_file(args.input)
    grid = parse_ngrid(args.ngrid) if args.ngrid else None
    kw = {"fit_tol": args.tol if args.tol is not None else DEFAULT_FIT_TOL,
          "threads": args.threads}
    if grid is not None:
        kw["n_grid"] = grid
    return family, modes, build_hierarchy(family, **kw)


def cmd_hierarchy(args):
    _, _, rep = _hierarchy(args)
    return {"levels": [_level_doc(lv) for lv in rep.levels], "p": rep.p,
            "h": rep.h, "case": rep.case,
            "final_classes": [c + 1 for c in rep.final_classes],
            "final_delta": rep.final_delta + 1, "n_grid": rep.n_grid,
            "fit_tol": rep.fit_tol}, None


def cmd_limit(args):
    if not args.system:
        raise InvalidInput("--system: a system file with the mode matrices is required")
    family, modes, rep = _hierarchy(args)
    sysm, _, _ = io.parse_system_file(args.system)
    start = None if args.start is None else args.start - 1
    if start is not None and not 0 <= start < family.N:
        raise InvalidInput(f"--start: state must be in 1..{family.N}")
    conv = limit_process(rep, family, sysm, start=start, mode_map=modes)
    return {"case": rep.case, "index_sets": [s + 1 for s in conv.index_sets],
            "weights": conv.weights, "modes": conv.modes,
            "chain": {"nu": conv.chain.nu, "mu": conv.chain.mu,
                      "P": conv.chain.P}}, None


def cmd_converge(args):
    sysm, _, weights = io.parse_system_file(args.input)
    w = np.full(sysm.N, 1.0 / sysm.N) if weights is None else weights
    conv = ConvexifiedProcess.build(sysm, [np.arange(sysm.N)], [w],
                                    MarkovParams([1.0], 1.0, [[1.0]]))
    x0 = (np.eye(sysm.d)[-1] if args.x0 is None
          else np.asarray(_floats(args.x0, "x0")))
    table = coupled_convergence_experiment(
        sysm, conv, x0, args.T or 5.0, _floats(args.n_list, "n-list"),
        args.traj or 500, args.delta, args.seed, args.threads)
    return {"target_weights": w, "x0": x0, "delta": args.delta,
            "table": table}, None


def cmd_mu_scan(args):
    sysm, _, weights = io.parse_system_file(args.input)
    pi, _ = _hull_point(sysm, weights, args.seed)
    mus = _floats(args.mu, "mu")
    scan = mu_scan(sysm, pi, mus, args.T or 200.0, args.traj or 32, args.seed,
                   args.threads)
    rows = [{"mu": m, "value": e.value, "stderr": e.stderr, "T": e.T,
             "n_traj": e.n_traj} for m, e in zip(mus, scan)]
    return {"weights": pi, "scan": rows}, rows


def cmd_sphere(args):
    sysm, _, weights = io.parse_system_file(args.input)
    pi, _ = _hull_point(sysm, weights, args.seed)
    T = args.T or 200.0
    rows = [{"mu": m, "occupation": sphere_occupation(
        sysm, pi, m, T, args.eps, args.seed)} for m in _floats(args.mu, "mu")]
    return {"weights": pi, "T": T, "eps_angle": args.eps,
            "occupation": rows}, None


def cmd_criteria(args):
    sysm, params, weights = io.parse_system_file(args.input)
    pi, hull = _hull_point(sysm, weights, args.seed)
    M = sysm.combination(pi)
    cc = check_condition_C(sysm, M)
    doc: Dict[str, object] = {
        "weights": pi, "hull_abscissa": hull,
        "condition_C": {"holds": cc.holds, "witnesses": cc.witnesses,
                        "singular_values": cc.singular_values, "tol": cc.tol},
        "density_probe": condC_density_probe(sysm, seed=args.seed),
        "certificate": sampled_lyapunov_certificate(M, seed=args.seed)}
    if params is not None:
        cert = skew_shift_certificate(list(sysm.modes))
        if args.ref is not None:
            ref = args.ref
        elif cert is not None:
            ref = cert[0]
        else:
            br = lambda_d_bracket(sysm, _bracket_config(args))
            ref = 0.5 * (br.lower + br.upper)
        v = check_equality_fixed_chain(sysm, params, ref, seed=args.seed,
                                       tol=args.tol)
        doc["fixed_chain"] = {"lambda_d_ref": ref, "verdict": v.verdict,
                              "max_deviation": v.max_deviation, "tol": v.tol,
                              "certified_classes": [r + 1 for r in v.certified_classes],
                              "evidence": v.evidence}
    return doc, None


def cmd_gap(args):
    sysm, _, _ = io.parse_system_file(args.input)
    kw = {"bracket": _bracket_config(args), "seed": args.seed,
          "threads": args.threads}
    if args.T:
        kw["T"] = args.T
    if args.traj:
        kw["n_traj"] = args.traj
    if args.tol is not None:
        kw["tol"] = args.tol
    if args.mu:
        kw["mu_list"] = tuple(_floats(args.mu, "mu"))
    rep = gap_report(sysm, GapConfig(**kw))
    return rep, rep["mu_scan"]


COMMANDS: Dict[str, Callable] = {
    "det": cmd_det, "prob": cmd_prob, "classes": cmd_classes,
    "hierarchy": cmd_hierarchy, "limit": cmd_limit, "converge": cmd_converge,
    "mu-scan": cmd_mu_scan, "sphere": cmd_sphere, "criteria": cmd_criteria,
    "gap": cmd_gap,
}

HELP = {
    "det": "bracket the deterministic exponent",
    "prob": "estimate the exponent under Markov switching",
    "classes": "recurrent classes and absorption probabilities",
    "hierarchy": "timescale ladder of a rate family",
    "limit": "limit convexified process of a rate family",
    "converge": "coupled fast-switching convergence experiment",
    "mu-scan": "exponent estimates along increasing clock rates",
    "sphere": "time the direction spends near the dominant eigenspace",
    "criteria": "condition (C), certificate and fixed-chain equality",
    "gap": "bounds and verdicts for the deterministic/probabilistic gap",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", required=True, help="input JSON file")
    common.add_argument("--out", help="output JSON file (default stdout)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads; results do not depend on it")
    common.add_argument("--T", type=float, help="time horizon")
    common.add_argument("--traj", type=int, help="number of trajectories")
    common.add_argument("--depth", type=int, help="product depth for det")
    common.add_argument("--grid", help="comma-separated durations for det")
    common.add_argument("--ngrid", help="n grid, a:b, a:b:k or comma list")
    common.add_argument("--tol", type=float, help="comparison tolerance")

    parser = argparse.ArgumentParser(
        prog="switchlyap",
        description="Lyapunov exponents of switched linear systems.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = {name: sub.add_parser(name, parents=[common], help=HELP[name])
         for name in COMMANDS}
    p["limit"].add_argument("--system", help="system file with the mode matrices")
    p["limit"].add_argument("--start", type=int, help="1-based start state")
    p["converge"].add_argument("--n-list", default="10,100,1000")
    p["converge"].add_argument("--delta", type=float, default=0.1)
    p["converge"].add_argument("--x0", help="comma-separated start vector")
    for name, default in (("mu-scan", "1,10,100,1000"), ("sphere", "1,10,100,1000"),
                          ("gap", None)):
        p[name].add_argument("--mu", default=default, help="comma-separated clock rates")
    p["sphere"].add_argument("--eps", type=float, default=0.1,
                             help="angle (radians) defining the neighbourhood")
    p["criteria"].add_argument("--ref", type=float,
                               help="reference deterministic exponent")
    return parser


def _configure_logging():
    level = os.environ.get("SWITCHLYAP_LOG", "error").lower()
    logging.basicConfig(
        level={"error": logging.ERROR, "info": logging.INFO,
               "debug": logging.DEBUG}.get(level, logging.ERROR),
        format="%(levelname)s %(name)s: %(message)s", stream=_sys.stderr)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def run_command(argv: Sequence[str]) -> int:
    """Run one subcommand; returns the exit code."""
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    if args.threads < 1:
        print("error: invalid-input: --threads must be >= 1", file=_sys.stderr)
        return EXIT_INPUT
    try:
        doc, rows = COMMANDS[args.command](args)
        text = io.dumps(doc)
        if args.out is None:
            _sys.stdout.write(text)
            if rows:
                _sys.stdout.write(io.csv_text(rows, SCAN_COLUMNS))
            return EXIT_OK
        out = Path(args.out)
        _write(out, text)
        outputs = [str(out)]
        if rows:
            csv_path = out.with_suffix(".csv")
            _write(csv_path, io.csv_text(rows, SCAN_COLUMNS))
            outputs.append(str(csv_path))
        inputs = [args.input] + ([args.system] if getattr(args, "system", None) else [])
        man = io.manifest(args.command, argv, inputs, args.seed, outputs)
        _write(out.with_name(out.name + ".manifest.json"), io.dumps(man))
        return EXIT_OK
    except InvalidInput as exc:
        print(f"error: {exc.kind}: {exc}", file=_sys.stderr)
        return EXIT_INPUT
    except SwitchLyapError as exc:
        print(f"error: {exc.kind}: {exc}", file=_sys.stderr)
        return EXIT_NUMERIC
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"error: numerical-failure: {exc}", file=_sys.stderr)
        return EXIT_NUMERIC


def main(argv: Optional[Sequence[str]] = None) -> int:
    return run_command(_sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    raise SystemExit(main())
