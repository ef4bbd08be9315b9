"""Built-in benchmark problems, constructed fresh on each lookup."""

from __future__ import annotations

from .problem import BolzaProblem, ControlSet

__all__ = ["REGISTRY_NAMES", "get_problem"]


def _lq1d() -> BolzaProblem:
    # integrator state with bounded control; trade state energy against
    # control energy
    return BolzaProblem.build(
        name="lq1d", T=1.0, n=1, k=1,
        control_set=ControlSet.box([-1.0], [1.0]), xi0=[1.0],
        dynamics=["u[0]"],
        running=["-(x[0]^2)", "-(u[0]^2)"],
        terminal=["0", "0"])


def _lq1d_free() -> BolzaProblem:
    return BolzaProblem.build(
        name="lq1d-free", T=1.0, n=1, k=1,
        control_set=ControlSet.free(1), xi0=[1.0],
        dynamics=["a*x[0] + u[0]"],
        running=["-(x[0]^2)", "-(u[0]^2)"],
        terminal=["0", "0"],
        params={"a": 1.0})


def _lq2obj_terminal() -> BolzaProblem:
    # reach x(T)=1 cheaply; the terminal inequality x(T) >= 0 stays inactive
    # at every interior-weight solution
    return BolzaProblem.build(
        name="lq2obj-terminal", T=1.0, n=1, k=1,
        control_set=ControlSet.free(1), xi0=[0.0],
        dynamics=["u[0]"],
        running=["0", "-(u[0]^2)"],
        terminal=["-((x[0]-1)^2)", "0"],
        ineq=["x[0]"])


def _bilinear_box() -> BolzaProblem:
    # bilinear growth control; the maximized Hamiltonian is convex in the
    # state, which the sufficiency samplers are expected to notice
    return BolzaProblem.build(
        name="bilinear-box", T=1.0, n=1, k=1,
        control_set=ControlSet.box([-1.0], [1.0]), xi0=[1.0],
        dynamics=["x[0]*u[0]"],
        running=["0", "-(u[0]^2)"],
        terminal=["x[0]", "0"])


_BUILDERS = {
    "lq1d": _lq1d,
    "lq1d-free": _lq1d_free,
    "lq2obj-terminal": _lq2obj_terminal,
    "bilinear-box": _bilinear_box,
}

REGISTRY_NAMES = tuple(_BUILDERS)


def get_problem(name: str) -> BolzaProblem:
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise KeyError(
            f"unknown problem {name!r}; known: {', '.join(REGISTRY_NAMES)}") from None
