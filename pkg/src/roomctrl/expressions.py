"""Small arithmetic expression language for shapes and forcing terms.

Scenario files describe boundary shape functions and body forcings as
closed-form strings such as

    "exp(-0.00004 / ((0.625 - xi2)*(0.875 - xi2))^2)"

The grammar is deliberately tiny: numbers, the coordinate variables, pi,
the operators + - * / ^ (power), unary minus, and the functions sin, cos,
exp. Strings are parsed with the Python ast module against a whitelist, so
nothing outside the grammar can execute, and evaluation is vectorized over
numpy arrays of quadrature points.
"""

import ast

import numpy as np

_FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
           ast.Div: np.divide, ast.Pow: np.power}


class ExpressionError(ValueError):
    """Raised for syntax or vocabulary violations in an expression string."""


class Expression:
    """Compiled expression over a fixed set of variable names."""

    def __init__(self, text, variables=("xi1", "xi2")):
        self.text = text
        self.variables = tuple(variables)
        try:
            tree = ast.parse(text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
        self._tree = tree.body
        self._validate(self._tree)

    def _validate(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)):
                raise ExpressionError(f"non-numeric constant in {self.text!r}")
        elif isinstance(node, ast.Name):
            if node.id != "pi" and node.id not in self.variables:
                raise ExpressionError(
                    f"unknown name {node.id!r} in {self.text!r}; "
                    f"allowed: pi, {', '.join(self.variables)}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExpressionError(f"operator not allowed in {self.text!r}")
            self._validate(node.left)
            self._validate(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError(f"operator not allowed in {self.text!r}")
            self._validate(node.operand)
        elif isinstance(node, ast.Call):
            if (not isinstance(node.func, ast.Name)
                    or node.func.id not in _FUNCTIONS
                    or len(node.args) != 1 or node.keywords):
                raise ExpressionError(
                    f"only sin, cos, exp of one argument allowed in {self.text!r}")
            self._validate(node.args[0])
        else:
            raise ExpressionError(f"construct not allowed in {self.text!r}")

    def __call__(self, **values):
        """Evaluate at coordinate arrays, e.g. expr(xi1=x, xi2=y).

        Division blowups at removable singularities (the bump shapes at
        their interval endpoints) follow IEEE semantics, so exp(-1/0) is 0.
        """
        missing = [v for v in self.variables if v not in values]
        if missing:
            raise ExpressionError(f"missing values for {missing}")
        with np.errstate(divide="ignore", over="ignore"):
            out = self._eval(self._tree, values)
        return np.asarray(out, dtype=float)

    def _eval(self, node, values):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return np.pi if node.id == "pi" else np.asarray(values[node.id], dtype=float)
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, values),
                                          self._eval(node.right, values))
        if isinstance(node, ast.UnaryOp):
            operand = self._eval(node.operand, values)
            return -operand if isinstance(node.op, ast.USub) else +operand
        # validated, so this is a whitelisted call
        return _FUNCTIONS[node.func.id](self._eval(node.args[0], values))

    def __repr__(self):
        return f"Expression({self.text!r})"


def compile_expression(text, variables=("xi1", "xi2")):
    """Parse `text` and return a vectorized callable Expression."""
    return Expression(text, variables)
