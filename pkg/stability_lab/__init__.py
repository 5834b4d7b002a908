"""
Stability bounds lab for posteriors whose likelihood carries an intractable
normalizing function Z(theta): exact grid posteriors, deterministic and
expected-distance bounds, and randomized recoveries of Z.
"""

__version__ = "1.0.0"
