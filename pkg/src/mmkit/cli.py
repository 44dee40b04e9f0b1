"""Benchmark and reproduction harness.

Every solver is a subcommand sharing the same stopping-rule flags; runs can
emit results, an iteration trace, and a manifest recording everything needed
to reproduce them.  ``bench`` sweeps a parameter grid under both backends
and checks that their objective traces agree bitwise.

Exit status: 0 on success (converged or cap reached normally), 2 on input
errors, 3 on violated numerical invariants.
"""

import argparse
import math
import sys

import numpy as np

from .driver import MmConfig
from .errors import InputError, NumericsError
from .io import RunManifest, load_matrix, save_matrix, sha256_file, \
    write_pgm, write_trace_csv
from .kernels import Backend
from .mds import MdsProblem, mds_run, stress, votes_to_dissimilarity
from .nnmf import NnmfProblem, cbcl_preprocess, nnmf_poisson_run, nnmf_run
from .pet import PetGeometry, PetProblem, build_neighborhoods, \
    build_system_matrix, default_phantom, pet_run, simulate_counts
from .rosenbrock import RosenbrockProblem, rosenbrock_objective
from . import driver

__all__ = ["main", "entrypoint"]


def _add_common(parser):
    parser.add_argument("--epsilon", type=float, default=1e-9,
                        help="relative-change convergence threshold")
    parser.add_argument("--max-iters", type=int, default=100_000,
                        help="iteration cap")
    parser.add_argument("--seed", type=int, default=0, help="RNG seed")
    parser.add_argument("--backend", choices=["serial", "parallel"],
                        default="serial")
    parser.add_argument("--threads", type=int, default=2,
                        help="worker threads for the parallel backend")
    parser.add_argument("--trace-out", metavar="PATH",
                        help="write the iteration trace as CSV")
    parser.add_argument("--manifest-out", metavar="PATH",
                        help="write the run manifest as JSON")


def _backend_of(args):
    if args.backend == "parallel":
        return Backend.parallel(args.threads)
    return Backend.serial()


def _config_of(args, seed=None):
    return MmConfig(epsilon=args.epsilon, max_iters=args.max_iters,
                    seed=args.seed if seed is None else seed)


def _emit(args, trace, manifest):
    if args.trace_out:
        write_trace_csv(trace, args.trace_out)
    if args.manifest_out:
        manifest.save(args.manifest_out)


def _manifest(solver, args, params, inputs, trace):
    config = {"epsilon": args.epsilon, "max_iters": args.max_iters,
              "seed": args.seed}
    config.update(params)
    return RunManifest(
        solver=solver, config=config, backend=args.backend,
        threads=args.threads if args.backend == "parallel" else 1,
        inputs=inputs, converged=bool(trace.converged),
        final_objective=float(trace.objective_values[-1]),
        iterations=int(trace.iters), wall_time_s=float(trace.wall_time),
    )


def _cmd_rosenbrock(args):
    x0 = np.array([float(v) for v in args.x0.split(",")])
    if x0.shape != (2,):
        raise InputError(f"--x0 needs two comma-separated numbers, got {args.x0!r}")
    state, trace = driver.run_mm(RosenbrockProblem(), x0, _config_of(args))
    print(f"final point: ({state[0]!r}, {state[1]!r})")
    print(f"objective:   {rosenbrock_objective(state)!r}")
    print(f"iterations:  {trace.iters} (converged={trace.converged})")
    _emit(args, trace, _manifest("rosenbrock", args, {"x0": args.x0}, {}, trace))
    return 0


def _load_nnmf_input(args):
    x = load_matrix(args.input)
    inputs = {"input": sha256_file(args.input)}
    if args.cbcl_preprocess:
        x = cbcl_preprocess(x)
    return NnmfProblem(x=x, rank=args.rank), inputs


def _emit_factors(args, state, backend):
    from .kernels import matmul
    if args.out_v:
        save_matrix(state.v, args.out_v)
    if args.out_w:
        save_matrix(state.w, args.out_w)
    if args.out_recon:
        save_matrix(matmul(state.v, state.w, backend=backend), args.out_recon)
    if args.basis_pgm_dir:
        side = math.isqrt(state.w.shape[1])
        if side * side != state.w.shape[1]:
            raise InputError(
                f"cannot render basis images: {state.w.shape[1]} pixels is "
                "not a perfect square")
        import os
        os.makedirs(args.basis_pgm_dir, exist_ok=True)
        for k, row in enumerate(state.w):
            write_pgm(row.reshape(side, side),
                      os.path.join(args.basis_pgm_dir, f"basis_{k:03d}.pgm"))


def _cmd_nnmf(args, poisson=False):
    problem, inputs = _load_nnmf_input(args)
    backend = _backend_of(args)
    runner = nnmf_poisson_run if poisson else nnmf_run
    state, trace = runner(problem, _config_of(args), backend=backend)
    name = "nnmf-poisson" if poisson else "nnmf"
    print(f"{name}: rank {args.rank}, {trace.iters} iterations, "
          f"converged={trace.converged}, objective={trace.objective_values[-1]!r}")
    _emit_factors(args, state, backend)
    _emit(args, trace, _manifest(name, args, {"rank": args.rank}, inputs, trace))
    return 0


def _pet_problem(args):
    geometry = PetGeometry(grid_side=args.grid, n_detectors=args.detectors)
    e = build_system_matrix(geometry)
    inputs = {}
    if args.phantom:
        img = load_matrix(args.phantom)
        if img.shape != (args.grid, args.grid):
            raise InputError(
                f"phantom {img.shape} does not match grid {args.grid}")
        lam_true = img.ravel()
        inputs["phantom"] = sha256_file(args.phantom)
    else:
        lam_true = default_phantom(args.grid)
    y = simulate_counts(lam_true, e, args.seed)
    problem = PetProblem(e=e, y=y, mu=args.mu,
                         neighborhoods=build_neighborhoods(args.grid))
    return problem, lam_true, inputs


def _cmd_pet(args):
    problem, lam_true, inputs = _pet_problem(args)
    backend = _backend_of(args)
    lam, trace = pet_run(problem, _config_of(args), backend=backend)
    image = lam.reshape(args.grid, args.grid)
    mse = float(np.mean((lam - lam_true) ** 2))
    print(f"pet: mu={args.mu}, {trace.iters} iterations, "
          f"converged={trace.converged}, objective={trace.objective_values[-1]!r}")
    print(f"mean squared error to phantom: {mse!r}")
    if args.out_image:
        write_pgm(image, args.out_image)
    if args.out_image_csv:
        save_matrix(image, args.out_image_csv)
    params = {"mu": args.mu, "grid": args.grid, "detectors": args.detectors}
    _emit(args, trace, _manifest("pet", args, params, inputs, trace))
    return 0


def _mds_problem(args):
    inputs = {}
    if args.votes:
        diss = votes_to_dissimilarity(load_matrix(args.votes))
        inputs["votes"] = sha256_file(args.votes)
    elif args.input:
        diss = load_matrix(args.input)
        inputs["input"] = sha256_file(args.input)
    else:
        raise InputError("mds needs --input (dissimilarities) or --votes")
    weights = 1.0 - np.eye(diss.shape[0])
    return MdsProblem(weights=weights, dissimilarities=diss, p=args.dim), inputs


def _cmd_mds(args):
    problem, inputs = _mds_problem(args)
    backend = _backend_of(args)
    theta, trace = mds_run(problem, _config_of(args), backend=backend,
                           anchor=True)
    print(f"mds: p={args.dim}, q={problem.q}, {trace.iters} iterations, "
          f"converged={trace.converged}, stress={trace.objective_values[-1]!r}")
    if args.out_coords:
        save_matrix(theta.T, args.out_coords)
    _emit(args, trace, _manifest("mds", args, {"p": args.dim}, inputs, trace))
    return 0


def _cmd_gen_phantom(args):
    save_matrix(default_phantom(args.grid).reshape(args.grid, args.grid),
                args.out)
    print(f"wrote {args.grid}x{args.grid} phantom to {args.out}")
    return 0


def _cmd_gen_sysmat(args):
    geometry = PetGeometry(grid_side=args.grid, n_detectors=args.detectors)
    save_matrix(build_system_matrix(geometry), args.out)
    print(f"wrote {geometry.n_rays}x{geometry.n_pixels} system matrix "
          f"to {args.out}")
    return 0


def _bench_rows(args):
    """Yield (label, runner) pairs for the chosen sweep."""
    if args.solver == "nnmf":
        x = (load_matrix(args.input) if args.input else
             np.random.default_rng(args.seed).random((args.synth_rows,
                                                      args.synth_cols)))
        for rank in _int_list(args.ranks):
            problem = NnmfProblem(x=x, rank=rank)
            yield (f"rank={rank}",
                   lambda backend, cfg, pr=problem: nnmf_run(pr, cfg, backend))
    elif args.solver == "pet":
        geometry = PetGeometry(grid_side=args.grid, n_detectors=args.detectors)
        e = build_system_matrix(geometry)
        lam_true = default_phantom(args.grid)
        y = simulate_counts(lam_true, e, args.seed)
        nbrs = build_neighborhoods(args.grid)
        for mu in _float_list(args.mus):
            problem = PetProblem(e=e, y=y, mu=mu, neighborhoods=nbrs)
            yield (f"mu={mu:g}",
                   lambda backend, cfg, pr=problem: pet_run(pr, cfg, backend))
    else:
        if args.votes:
            diss = votes_to_dissimilarity(load_matrix(args.votes))
        elif args.input:
            diss = load_matrix(args.input)
        else:
            diss = votes_to_dissimilarity(
                _synthetic_votes(args.synth_objects, args.synth_calls,
                                 args.seed))
        weights = 1.0 - np.eye(diss.shape[0])
        for p in _int_list(args.dims):
            problem = MdsProblem(weights=weights, dissimilarities=diss, p=p)
            yield (f"p={p}",
                   lambda backend, cfg, pr=problem: mds_run(pr, cfg, backend))


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _synthetic_votes(q, m, seed):
    """Two-bloc roll-call matrix for demo sweeps: entries 1/-1/0."""
    rng = np.random.default_rng(seed)
    bloc = (np.arange(q) >= q // 2)
    party_line = rng.choice([-1.0, 1.0], size=m)
    votes = np.where(bloc[:, None], party_line[None, :], -party_line[None, :])
    flips = rng.random((q, m)) < 0.15
    votes = np.where(flips, -votes, votes)
    votes[rng.random((q, m)) < 0.05] = 0.0
    return votes


def _cmd_bench(args):
    backend_par = Backend.parallel(args.threads)
    cfg = _config_of(args)
    header = (f"{'case':<14} {'iters':>7} {'serial_s':>9} {'parallel_s':>11} "
              f"{'speedup':>8} {'objective':>18} {'converged':>9}")
    print(header)
    print("-" * len(header))
    lines = []
    for label, runner in _bench_rows(args):
        _, trace_s = runner(Backend.serial(), cfg)
        _, trace_p = runner(backend_par, cfg)
        if not np.array_equal(trace_s.objective_values,
                              trace_p.objective_values):
            raise NumericsError(
                f"serial and parallel objective traces differ for {label}; "
                "kernel determinism is broken")
        speedup = trace_s.wall_time / trace_p.wall_time if trace_p.wall_time else float("nan")
        row = (label, trace_s.iters, trace_s.wall_time, trace_p.wall_time,
               speedup, trace_s.objective_values[-1], trace_s.converged)
        lines.append(row)
        print(f"{label:<14} {trace_s.iters:>7d} {trace_s.wall_time:>9.3f} "
              f"{trace_p.wall_time:>11.3f} {speedup:>8.2f} "
              f"{trace_s.objective_values[-1]:>18.10g} {str(trace_s.converged):>9}")
    if args.out_csv:
        with open(args.out_csv, "w", encoding="ascii") as fh:
            fh.write("case,iters,serial_s,parallel_s,speedup,objective,converged\n")
            for row in lines:
                fh.write(",".join(str(v) for v in row) + "\n")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mmkit",
        description="Data-parallel MM solvers: NNMF, PET reconstruction, MDS.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        return p

    p = add("rosenbrock", "minimize the banana function (driver demo)")
    p.add_argument("--x0", default="-1,-1", help="start point 'a,b'")

    for name, help_text in (("nnmf", "Frobenius-loss factorization"),
                            ("nnmf-poisson", "Poisson-loss factorization")):
        p = add(name, help_text)
        p.add_argument("--input", required=True, help="data matrix (.csv/.mmx)")
        p.add_argument("--rank", type=int, required=True)
        p.add_argument("--cbcl-preprocess", action="store_true",
                       help="scale rows to mean/std 0.25 and clamp to [0,1]")
        p.add_argument("--out-v")
        p.add_argument("--out-w")
        p.add_argument("--out-recon")
        p.add_argument("--basis-pgm-dir",
                       help="render rows of W as square PGM images")

    p = add("pet", "penalized tomographic reconstruction")
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--detectors", type=int, default=64)
    p.add_argument("--mu", type=float, default=1e-5)
    p.add_argument("--phantom", help="true-intensity image (.csv/.mmx)")
    p.add_argument("--out-image", help="reconstruction as 16-bit PGM")
    p.add_argument("--out-image-csv", help="reconstruction as CSV matrix")

    p = add("mds", "stress-minimizing embedding")
    p.add_argument("--input", help="dissimilarity matrix (.csv/.mmx)")
    p.add_argument("--votes", help="roll-call matrix with entries 1/-1/0")
    p.add_argument("--dim", type=int, default=2, help="embedding dimension")
    p.add_argument("--out-coords", help="coordinates, one row per object")

    p = add("gen-phantom", "write the default test phantom")
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--out", required=True)

    p = add("gen-sysmat", "write a system matrix for a scanner geometry")
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--detectors", type=int, default=64)
    p.add_argument("--out", required=True)

    p = add("bench", "sweep a parameter grid under both backends")
    p.add_argument("--solver", choices=["nnmf", "pet", "mds"], required=True)
    p.add_argument("--ranks", default="10,20,30", help="nnmf rank sweep")
    p.add_argument("--mus", default="0,1e-7,1e-6,1e-5", help="pet penalty sweep")
    p.add_argument("--dims", default="2,3,4,5", help="mds dimension sweep")
    p.add_argument("--input", help="data/dissimilarity matrix")
    p.add_argument("--votes", help="mds roll-call matrix")
    p.add_argument("--grid", type=int, default=16)
    p.add_argument("--detectors", type=int, default=16)
    p.add_argument("--synth-rows", type=int, default=200)
    p.add_argument("--synth-cols", type=int, default=100)
    p.add_argument("--synth-objects", type=int, default=40)
    p.add_argument("--synth-calls", type=int, default=120)
    p.add_argument("--out-csv", help="write the report table as CSV")

    return parser


_HANDLERS = {
    "rosenbrock": _cmd_rosenbrock,
    "nnmf": lambda args: _cmd_nnmf(args, poisson=False),
    "nnmf-poisson": lambda args: _cmd_nnmf(args, poisson=True),
    "pet": _cmd_pet,
    "mds": _cmd_mds,
    "gen-phantom": _cmd_gen_phantom,
    "gen-sysmat": _cmd_gen_sysmat,
    "bench": _cmd_bench,
}


def main(argv=None):
    """Run one subcommand; returns the process exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return _HANDLERS[args.command](args)
    except NumericsError as exc:
        print(f"numerical invariant violated: {exc}", file=sys.stderr)
        return 3
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


def entrypoint():
    raise SystemExit(main())
