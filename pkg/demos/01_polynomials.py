"""
Polynomial dynamics and symbolic disturbances
=============================================

State maps are stored as stacked Kronecker coefficient blocks; the same
dynamics can be expanded symbolically in past disturbances.
"""

import numpy as np

from polysls import PolyDynamics, Polynomial, VarId, kron_power, poly_eval, poly_substitute

# x (x) x lists every ordered product of the components
x = np.array([1.0, 2.0])
print("x (x) x =", kron_power(x, 2))

# x+ = 0.5 x1 + 0.2 x2 + 0.05 (x1 x2 + x2 x1), second row 0.3 x2
H1 = np.array([[0.5, 0.2], [0.0, 0.3]])
H2 = np.zeros((2, 4))
H2[0, 1] = H2[0, 2] = 0.05
dyn = PolyDynamics([H1, H2])
print("f(x) =", poly_eval(dyn, x))

# symbolic: w(age, component) stands for a disturbance `age` steps ago
w0, w1 = Polynomial.var(0, 0), Polynomial.var(1, 0)
p = w0 * w0 + 0.5 * w0
q = poly_substitute(p, {VarId(0, 0): w0 + w1})
print("p(w0 + w1) =", q)
print("p evaluated at w0=1, w1=2:", q.evaluate({VarId(0, 0): 1.0, VarId(1, 0): 2.0}))

# canonical JSON round trip
assert Polynomial.loads(q.dumps()) == q
