"""Command-line front end: fit, eigen, predict, simulate, validate.

Fits are written to a versioned JSON artifact so the eigen and predict
commands can run without refitting. All outputs report times in the
original (pre-rescaling) units; all commands are deterministic under a
fixed seed, and `--threads` changes wall time only.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from . import gcv
from .dataset import SparseFunctionalDataset, SubjectRecord, load_csv, rescale_time
from .design import build_design
from .oracle import DenseProblem, dense_igcv, isserlis_cov, mvn_condition, refit_icv
from .predict import confidence_bands, predict_subject
from .sim import METRIC_COLUMNS, SimConfig, run_study
from .solver import FitResult, MeanFit, diagonalize, fit_two_step
from .spectral import eigendecompose, eval_cov_grid
from .splines import basis_from_knots, eval_basis_matrix, make_basis, penalty_matrices, vech
from .weights import covariance_of_products

__all__ = ["main", "build_parser", "read_fit_artifact", "FIT_FORMAT"]

FIT_FORMAT = "face-fit/1"


# ---------------------------------------------------------------------------
# argument types (argparse maps ArgumentTypeError to a usage error, exit 2)

def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _ge2_int(text):
    value = _positive_int(text)
    if value < 2:
        raise argparse.ArgumentTypeError("must be at least 2")
    return value


def _positive_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not math.isfinite(value) or value <= 0:
        raise argparse.ArgumentTypeError("must be a positive number")
    return value


def _beta_float(text):
    value = _positive_float(text)
    if value > 1.0:
        raise argparse.ArgumentTypeError("must lie in (0, 1]")
    return value


def _level_float(text):
    value = _positive_float(text)
    if value >= 1.0:
        raise argparse.ArgumentTypeError("must lie strictly between 0 and 1")
    return value


def _m_set_arg(text):
    if text in ("I1", "I2"):
        return text
    try:
        counts = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"{text!r} is neither I1, I2 nor a comma-separated list of counts"
        ) from None
    if not counts or any(c < 1 for c in counts):
        raise argparse.ArgumentTypeError("observation counts must be positive")
    return counts


def _fmt(x) -> str:
    # repr of a Python float is the shortest round-trip form, so reruns
    # produce byte-identical files
    return repr(float(x))


# ---------------------------------------------------------------------------
# fit artifact

def _write_fit_artifact(path, fit: FitResult, ds: SparseFunctionalDataset,
                        grid_size: int) -> None:
    u = np.linspace(0.0, 1.0, grid_size)
    C = eval_cov_grid(fit, u)
    counts = ds.counts
    diag = fit.diagnostics
    sigma2_raw = float(diag.get("sigma2_raw", fit.sigma2_hat))
    obj = {
        "format": FIT_FORMAT,
        "basis": {
            "order": int(fit.basis.order),
            "interior_knots": [float(k) for k in fit.basis.interior_knots],
        },
        "theta_vech": [float(v) for v in fit.theta_vech],
        "sigma2": float(fit.sigma2_hat),
        "sigma2_raw": sigma2_raw,
        "lambdas": [float(l) for l in fit.lambdas],
        "mean": {
            "order": int(fit.mean_fit.basis.order),
            "interior_knots": [float(k) for k in fit.mean_fit.basis.interior_knots],
            "coef": [float(v) for v in fit.mean_fit.coef],
            "lambda": float(fit.mean_fit.lam),
        },
        "time_domain": [float(ds.time_domain[0]), float(ds.time_domain[1])],
        "cov_grid": {"grid_size": int(grid_size), "values": C.tolist()},
        "diagnostics": {
            "ridge": [float(r) for r in diag.get("ridge", ())],
            "selection": diag.get("selection", "igcv"),
            "sigma2_clamped": bool(sigma2_raw < 0.0),
            "n_subjects": int(ds.n),
            "n_rows": int(np.sum(counts * (counts + 1) // 2)),
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_fit_artifact(path):
    """Load a fit artifact; returns (FitResult, time_domain)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(obj, dict) or obj.get("format") != FIT_FORMAT:
        raise ValueError(f"{path}: not a {FIT_FORMAT} artifact")
    try:
        basis = basis_from_knots(obj["basis"]["interior_knots"], obj["basis"]["order"])
        mean_basis = basis_from_knots(obj["mean"]["interior_knots"], obj["mean"]["order"])
        mean_fit = MeanFit(
            basis=mean_basis,
            coef=np.asarray(obj["mean"]["coef"], dtype=float),
            lam=float(obj["mean"]["lambda"]),
        )
        fit = FitResult(
            theta_vech=np.asarray(obj["theta_vech"], dtype=float),
            sigma2_hat=float(obj["sigma2"]),
            lambdas=tuple(float(l) for l in obj["lambdas"]),
            basis=basis,
            mean_fit=mean_fit,
            diagnostics=dict(obj.get("diagnostics", {})),
        )
        lo, hi = obj["time_domain"]
    except KeyError as exc:
        raise ValueError(f"{path}: fit artifact is missing key {exc.args[0]!r}") from None
    q = basis.c * (basis.c + 1) // 2
    if fit.theta_vech.size != q:
        raise ValueError(
            f"{path}: theta_vech has {fit.theta_vech.size} entries, expected {q}"
        )
    return fit, (float(lo), float(hi))


def _load_times_csv(path) -> np.ndarray:
    """Read a one-column CSV of prediction times (header `time`)."""
    times = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: file is empty")
        if [h.strip() for h in header] != ["time"]:
            raise ValueError(f"{path}: expected header time, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 1:
                raise ValueError(f"{path}: row {lineno}: expected 1 field, got {len(row)}")
            try:
                t = float(row[0])
            except ValueError:
                raise ValueError(f"{path}: row {lineno}: non-numeric time") from None
            if not math.isfinite(t):
                raise ValueError(f"{path}: row {lineno}: non-finite time")
            times.append(t)
    if not times:
        raise ValueError(f"{path}: no times given")
    return np.array(times)


# ---------------------------------------------------------------------------
# subcommands

def cmd_fit(args) -> int:
    ds = rescale_time(load_csv(args.input))
    lam_grid = np.geomspace(args.lambda_min, args.lambda_max, args.n_lambda)
    fit = fit_two_step(
        ds,
        n_interior=args.knots,
        order=args.order,
        beta=args.beta,
        lambda_grid=lam_grid,
        use_exact_icv=args.exact_icv,
    )
    _write_fit_artifact(args.output, fit, ds, grid_size=args.grid)
    print(f"wrote {args.output} (sigma2={fit.sigma2_hat:.6g}, "
          f"lambda={fit.lambdas[1]:.6g})")
    return 0


def cmd_eigen(args) -> int:
    fit, (lo, hi) = read_fit_artifact(args.fit)
    u = np.linspace(0.0, 1.0, args.grid)
    res = eigendecompose(eval_cov_grid(fit, u), u)
    k = res.k if args.k is None else args.k
    if k > res.k:
        warnings.warn(
            f"requested {k} components but only {res.k} are positive; truncating",
            RuntimeWarning,
            stacklevel=2,
        )
        k = res.k
    span = hi - lo if hi > lo else 1.0
    times = lo + u * span
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["component", "eigenvalue", "time", "value"])
        for j in range(k):
            value = res.eigenvalues[j] * span
            psi = res.eigenfunctions[:, j] / math.sqrt(span)
            for g in range(u.size):
                writer.writerow([j + 1, _fmt(value), _fmt(times[g]), _fmt(psi[g])])
    print(f"wrote {args.output} ({k} components on a {args.grid}-point grid)")
    return 0


def cmd_predict(args) -> int:
    fit, (lo, hi) = read_fit_artifact(args.fit)
    span = hi - lo
    if span <= 0:
        raise ValueError(f"{args.fit}: fit artifact has a degenerate time domain")
    ds = load_csv(args.data)
    t_new = _load_times_csv(args.new_times)
    u_new = (t_new - lo) / span
    outside = (u_new < 0.0) | (u_new > 1.0)
    if np.any(outside):
        bad = t_new[outside][0]
        raise ValueError(f"new time {bad:g} lies outside the fitted domain [{lo:g}, {hi:g}]")
    ids = [s.id for s in ds.subjects] if not args.subject else list(args.subject)
    out_rows = []
    for sid in ids:
        record = ds.subject(sid)
        u_obs = (record.times - lo) / span
        if u_obs.min() < 0.0 or u_obs.max() > 1.0:
            raise ValueError(
                f"subject {sid!r} has observations outside the fitted domain "
                f"[{lo:g}, {hi:g}]"
            )
        pred = predict_subject(
            fit,
            SubjectRecord(id=record.id, times=u_obs, values=record.values),
            u_new,
            latent=args.latent,
        )
        pred = confidence_bands(pred, args.level)
        for j in range(u_new.size):
            out_rows.append([
                sid, _fmt(t_new[j]), _fmt(pred.x_hat[j]),
                _fmt(pred.band_lo[j]), _fmt(pred.band_hi[j]),
            ])
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "time", "x_hat", "lo", "hi"])
        writer.writerows(out_rows)
    print(f"wrote {args.output} ({len(ids)} subjects x {u_new.size} times)")
    return 0


def _resolve_threads(value):
    if value is not None:
        return value
    env = os.environ.get("FACE_THREADS")
    if env:
        try:
            k = int(env)
        except ValueError:
            raise ValueError(f"FACE_THREADS={env!r} is not an integer") from None
        if k < 1:
            raise ValueError("FACE_THREADS must be a positive integer")
        return k
    return os.cpu_count()


def _finite_or_none(x):
    x = float(x)
    return x if math.isfinite(x) else None


def cmd_simulate(args) -> int:
    config = SimConfig(
        case=args.case,
        n=args.n,
        m_set=args.m_set,
        snr=args.snr,
        replications=args.reps,
        seed=args.seed,
        grid_size=args.grid,
        n_interior=args.knots,
        order=args.order,
        beta=args.beta,
        snr_convention=args.snr_convention,
        threads=_resolve_threads(args.threads),
    )
    rows, summary = run_study(config)
    # the metrics CSV holds only seed-determined values; runtimes go to the
    # summary JSON so reruns produce byte-identical CSVs
    with open(args.output_metrics, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([str(int(row["replication"]))]
                            + [_fmt(row[c]) for c in METRIC_COLUMNS[1:]])
    summary_obj = {
        "median": {k: _finite_or_none(v) for k, v in summary["median"].items()},
        "iqr": {k: _finite_or_none(v) for k, v in summary["iqr"].items()},
        "n_fail": int(summary["n_fail"]),
        "replications": int(summary["replications"]),
        "runtime_seconds": float(summary["runtime_seconds"]),
    }
    with open(args.output_summary, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary_obj, sort_keys=True, indent=2) + "\n")
    med = summary_obj["median"].get("ise_cov")
    med_text = "nan" if med is None else f"{med:.4g}"
    print(f"wrote {args.output_metrics} and {args.output_summary} "
          f"(median ise_cov {med_text}, {summary_obj['n_fail']} failures)")
    return 0


# ---------------------------------------------------------------------------
# self-checks against the brute-force oracles

def _validate_instance(rng):
    n = int(rng.integers(6, 10))
    records = []
    for i in range(n):
        m = int(rng.integers(2, 5))
        records.append(SubjectRecord(
            id=f"v{i + 1}", times=rng.random(m), values=rng.standard_normal(m)))
    ds = SparseFunctionalDataset(subjects=records, time_domain=(0.0, 1.0))
    basis = make_basis(ds.all_times(), n_interior=1, order=4)
    blocks, _, _ = build_design(ds, basis)
    return basis, [b.X for b in blocks], [b.C_hat for b in blocks]


def cmd_validate(args) -> int:
    rng = np.random.default_rng(args.seed)
    ok_all = True

    def report(name, err, tol):
        nonlocal ok_all
        ok = err <= tol
        ok_all = ok_all and ok
        print(f"validate {name}: {'PASS' if ok else 'FAIL'} "
              f"(max err {err:.3g}, tol {tol:g})")

    err_igcv = 0.0
    err_icv = 0.0
    for _ in range(args.instances):
        basis, Xb, Cb = _validate_instance(rng)
        Q = penalty_matrices(basis.c).Q
        XtX = np.add.reduce([X.T @ X for X in Xb])
        diag = diagonalize(XtX, Q, Xb)
        pre = gcv.precompute(diag, Cb)
        problem = DenseProblem.from_blocks(Xb, Cb, Q, ridge=diag.ridge)
        for lam in (0.37, 10.0):
            fast = gcv.igcv_value(pre, diag.s, lam)
            exact = dense_igcv(problem, lam)
            err_igcv = max(err_igcv, abs(fast - exact) / max(abs(exact), 1e-12))
        lam = 3.7
        icv = gcv.exact_icv(Xb, Cb, Q, lam, ridge=diag.ridge)
        err_icv = max(err_icv, abs(icv - refit_icv(problem, lam))
                      / max(abs(icv), 1e-12))
    report("fast criterion vs dense oracle", err_igcv, 1e-8)
    report("exact leave-one-out vs literal refit", err_icv, 1e-6)

    err_w = 0.0
    for _ in range(args.instances):
        m = int(rng.integers(2, 5))
        t = rng.random(m)
        A = rng.standard_normal((m, m))
        fast = covariance_of_products(A @ A.T, 0.4, t)
        slow = isserlis_cov(A @ A.T, 0.4, t)
        err_w = max(err_w, float(np.max(np.abs(fast - slow))))
    report("product covariance vs pairing enumeration", err_w, 1e-10)

    err_p = 0.0
    basis = basis_from_knots([0.5], order=4)
    c = basis.c
    for _ in range(args.instances):
        B = rng.standard_normal((c, c))
        Theta = B @ B.T / c
        fit = FitResult(
            theta_vech=vech(Theta), sigma2_hat=0.25, lambdas=(1.0, 1.0),
            basis=basis, mean_fit=MeanFit(basis=basis, coef=np.zeros(c), lam=0.0),
        )
        m = int(rng.integers(2, 5))
        record = SubjectRecord(id="v", times=rng.random(m),
                               values=rng.standard_normal(m))
        t_new = rng.random(3)
        pred = predict_subject(fit, record, t_new)
        t_all = np.concatenate([t_new, record.times])
        H = eval_basis_matrix(basis, t_all)
        joint = H @ Theta @ H.T + 0.25 * np.eye(t_all.size)
        mean, cond_cov, _ = mvn_condition(
            np.zeros(t_all.size), joint, np.arange(3, t_all.size), record.values)
        err_p = max(err_p, float(np.max(np.abs(pred.x_hat - mean))),
                    float(np.max(np.abs(pred.cov - cond_cov))))
    report("subject prediction vs conditional-normal oracle", err_p, 1e-10)

    return 0 if ok_all else 1


# ---------------------------------------------------------------------------
# parser and dispatch

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facecov",
        description="Penalized-spline covariance estimation for sparse functional data.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True, metavar="command")

    fit = sub.add_parser("fit", help="fit the covariance surface from an observation CSV")
    fit.add_argument("--input", required=True,
                     help="CSV with header subject_id,time,value")
    fit.add_argument("--output", required=True, help="fit artifact JSON to write")
    fit.add_argument("--knots", type=_positive_int, default=10,
                     help="interior knots per axis (default 10)")
    fit.add_argument("--order", type=_ge2_int, default=4,
                     help="spline order; 4 = cubic (default)")
    fit.add_argument("--beta", type=_beta_float, default=0.05,
                     help="diagonal blending weight for step-2 weights (default 0.05)")
    fit.add_argument("--lambda-min", type=_positive_float, default=1e-6)
    fit.add_argument("--lambda-max", type=_positive_float, default=1e6)
    fit.add_argument("--n-lambda", type=_ge2_int, default=100,
                     help="size of the geometric lambda grid (default 100)")
    fit.add_argument("--grid", type=_ge2_int, default=101,
                     help="covariance grid size stored in the artifact (default 101)")
    fit.add_argument("--exact-icv", action="store_true",
                     help="select lambda by exact leave-one-subject-out CV "
                          "(small problems only)")

    eig = sub.add_parser("eigen", help="eigenvalues and eigenfunctions of a fitted surface")
    eig.add_argument("--fit", required=True, help="fit artifact JSON")
    eig.add_argument("--output", required=True, help="CSV to write")
    eig.add_argument("--k", type=_positive_int, default=None,
                     help="number of components (default: all positive)")
    eig.add_argument("--grid", type=_ge2_int, default=101,
                     help="evaluation grid size (default 101)")

    pred = sub.add_parser("predict", help="predict subject curves at new times")
    pred.add_argument("--fit", required=True, help="fit artifact JSON")
    pred.add_argument("--data", required=True,
                      help="observation CSV with header subject_id,time,value")
    pred.add_argument("--new-times", required=True,
                      help="CSV with header time listing prediction times")
    pred.add_argument("--output", required=True, help="CSV to write")
    pred.add_argument("--level", type=_level_float, default=0.95,
                      help="pointwise band level (default 0.95)")
    pred.add_argument("--latent", action="store_true",
                      help="predict the noise-free curve instead of a new observation")
    pred.add_argument("--subject", action="append", default=None,
                      help="restrict to this subject id (repeatable)")

    sim = sub.add_parser("simulate", help="run a replication study on synthetic data")
    sim.add_argument("--case", type=int, choices=(1, 2), default=1,
                     help="1 = rank-3 trigonometric, 2 = Matern process")
    sim.add_argument("--n", type=_positive_int, default=100,
                     help="subjects per replication (default 100)")
    sim.add_argument("--m-set", type=_m_set_arg, default="I1",
                     help="I1 (3-7 obs), I2 (5-15 obs), or comma-separated counts")
    sim.add_argument("--snr", type=_positive_float, default=2.0)
    sim.add_argument("--reps", type=_positive_int, default=200)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--grid", type=_ge2_int, default=101,
                     help="evaluation grid for the error integrals (default 101)")
    sim.add_argument("--knots", type=_positive_int, default=10)
    sim.add_argument("--order", type=_ge2_int, default=4)
    sim.add_argument("--beta", type=_beta_float, default=0.05)
    sim.add_argument("--snr-convention", choices=("trace", "double"), default=None,
                     help="noise calibration (default: trace for case 1, "
                          "double integral for case 2)")
    sim.add_argument("--threads", type=_positive_int, default=None,
                     help="worker threads (default: FACE_THREADS or logical cores)")
    sim.add_argument("--output-metrics", required=True, help="per-replication CSV")
    sim.add_argument("--output-summary", required=True, help="summary JSON")

    val = sub.add_parser("validate",
                         help="cross-check fast formulas against brute-force oracles")
    val.add_argument("--instances", type=_positive_int, default=5,
                     help="random instances per check (default 5)")
    val.add_argument("--seed", type=int, default=0)

    return parser


_DISPATCH = {
    "fit": cmd_fit,
    "eigen": cmd_eigen,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.cmd == "fit" and args.lambda_min >= args.lambda_max:
        parser.error("--lambda-min must be smaller than --lambda-max")
    try:
        return _DISPATCH[args.cmd](args)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
