"""Safety performance testing of black-box longitudinal driving policies.

Trains adversarial-yet-safe opponent policies against vehicle-under-test
policies with deep Q-learning, then compares the aggressiveness the trained
opponents can afford as a safety indicator.
"""

__version__ = "0.1.0"
