"""
chebvio: visual-inertial trajectory estimation with Chebyshev
polynomials, compared against an IMU preintegration baseline.
"""

__version__ = "1.0.0"
