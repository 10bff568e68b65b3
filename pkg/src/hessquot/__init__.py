"""hessquot: numerical laboratory for complex Hessian quotient equations on flat tori."""

__version__ = "0.1.0"
