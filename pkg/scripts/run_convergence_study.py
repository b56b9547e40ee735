"""Manufactured-solution convergence study for the midpoint time stepper.

Refines the mesh and the time step together against an exact product
solution and prints the observed orders (expected: 2 in both).
"""

import argparse

import numpy as np

import waveinv as wi


def manufactured_error(n_elements, n_steps):
    disc = wi.build_grid("wave1d", n_elements)
    tg = np.linspace(0.0, 1.0, n_steps + 1)
    point = wi.ParameterPoint.from_constants(
        "wave1d", tg, disc.n_nodes, a=1.0, b=0.0, q=0.0, rho=1.0
    )
    f = wi.make_source(
        disc, tg, lambda t, x: (np.pi**2 - 1.0) * np.sin(np.pi * x) * np.sin(t)
    )
    tl = wi.assemble_operators(disc, point)
    u1 = tl.C[0] @ np.sin(np.pi * disc.nodes[disc.free_nodes])
    traj = wi.forward_map(disc, point, f, u1=u1)
    exact = np.outer(np.sin(tg), np.sin(np.pi * disc.nodes[disc.free_nodes]))
    diff = traj.u - exact
    return max(np.sqrt(d @ (disc.M @ d)) for d in diff)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--levels", type=int, default=4)
    parser.add_argument("--base-elements", type=int, default=8)
    parser.add_argument("--base-steps", type=int, default=16)
    args = parser.parse_args(argv)

    print(f"{'level':>5}  {'elements':>8}  {'steps':>6}  "
          f"{'error':>12}  {'order':>6}")
    previous = None
    for level in range(args.levels):
        n = args.base_elements * 2**level
        steps = args.base_steps * 2**level
        err = manufactured_error(n, steps)
        order = "" if previous is None else f"{np.log2(previous / err):6.3f}"
        print(f"{level:>5}  {n:>8}  {steps:>6}  {err:>12.4e}  {order:>6}")
        previous = err
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
