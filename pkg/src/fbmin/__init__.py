"""fbmin: grid minimizer and free-boundary diagnostics for the vector cavitation energy.

Minimizes J(u) = integral of |grad u|^2 + Q^2 chi_{|u|>0} over nonnegative
vector fields with Dirichlet data on a rectangular grid, and verifies the
quantitative free-boundary theory (growth, nondegeneracy, density, boundary
condition, Weiss monotonicity, blowup classification, hodograph regularity)
on computed and closed-form solutions.
"""

__version__ = "0.1.0"
