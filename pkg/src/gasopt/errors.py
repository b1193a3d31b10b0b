"""Exception hierarchy shared by all gasopt modules."""


class GasOptError(Exception):
    """Base class; every subclass carries a stable machine-readable ``code``."""

    code = "error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


# -- network file ----------------------------------------------------------


class NetworkFormatError(GasOptError):
    code = "network_format"


class NetworkSyntaxError(NetworkFormatError):
    code = "syntax"

    def __init__(self, msg, line=None, column=None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{msg}{where}")

    def to_dict(self):
        d = super().to_dict()
        d.update(line=self.line, column=self.column)
        return d


class UnknownKey(NetworkFormatError):
    code = "unknown_key"


class UnknownNode(NetworkFormatError):
    code = "unknown_node"

    def __init__(self, node_id):
        self.node_id = node_id
        super().__init__(f"reference to undefined node {node_id!r}")


class DuplicateId(NetworkFormatError):
    code = "duplicate_id"


class NoSlackNode(NetworkFormatError):
    code = "no_slack_node"

    def __init__(self, msg="network has no slack node"):
        super().__init__(msg)


class MultipleSlackNodes(NetworkFormatError):
    code = "multiple_slack_nodes"


class DisconnectedNetwork(NetworkFormatError):
    code = "disconnected"


class BoundViolation(NetworkFormatError):
    code = "bound_violation"


class InvalidValue(NetworkFormatError):
    code = "invalid_value"


class LaminarRegime(GasOptError):
    code = "laminar_regime"


class OutOfHorizon(GasOptError):
    code = "out_of_horizon"


# -- simulation ------------------------------------------------------------


class SimulationError(GasOptError):
    code = "simulation"


class DegeneratePressure(SimulationError):
    code = "degenerate_pressure"


class NoConvergence(SimulationError):
    code = "no_convergence"

    def __init__(self, iterations, norm, msg=None):
        self.iterations = iterations
        self.norm = norm
        super().__init__(msg or f"Newton failed after {iterations} iterations (residual {norm:.3e})")


class FlowReversalLoop(SimulationError):
    code = "flow_reversal_loop"


class StepFailure(SimulationError):
    """Wraps a failure at a given time step of :func:`simulate`."""

    code = "step_failure"

    def __init__(self, step, cause):
        self.step = step
        self.cause = cause
        super().__init__(f"step {step}: {cause}")

    def to_dict(self):
        d = super().to_dict()
        d.update(step=self.step, cause=getattr(self.cause, "code", type(self.cause).__name__))
        return d


# -- adjoint / optimisation ------------------------------------------------


class SingularAdjointSystem(GasOptError):
    code = "singular_adjoint"

    def __init__(self, step):
        self.step = step
        super().__init__(f"transposed Jacobian is singular at step {step}")


class EmptyAggregate(GasOptError):
    code = "empty_aggregate"


class IterationLimit(GasOptError):
    code = "iteration_limit"

    def __init__(self, msg, solution=None):
        self.solution = solution
        super().__init__(msg)


class SimulationFailure(GasOptError):
    code = "simulation_failure"

    def __init__(self, kappa, cause):
        self.kappa = kappa
        self.cause = cause
        super().__init__(f"simulation failed at kappa={list(kappa)}: {cause}")


class BridgeError(GasOptError):
    code = "bridge_contract"


class MeshMismatch(GasOptError):
    code = "mesh_mismatch"


class ConfigError(GasOptError):
    code = "config"
