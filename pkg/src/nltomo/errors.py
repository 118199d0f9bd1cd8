"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid experiment configuration (unknown ids, unordered pairs, bad schema)."""


class NonConvergenceError(RuntimeError):
    """Forward solve stopped without meeting its residual tolerance."""

    def __init__(self, iterations, residual, message=None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            message
            or f"forward solve did not converge: {iterations} iterations, residual {residual:.3e}"
        )


class QuadratureNotConvergedError(RuntimeError):
    """Adaptive scaling-parameter quadrature hit its node cap above tolerance."""

    def __init__(self, nodes, estimate):
        self.nodes = nodes
        self.estimate = estimate
        super().__init__(
            f"quadrature error estimate {estimate:.3e} above tolerance at K={nodes} nodes"
        )
