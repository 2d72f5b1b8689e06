"""Physical constants (exact SI definitions) and shared unit helpers."""

ELEMENTARY_CHARGE = 1.602176634e-19  # C
ATOMIC_MASS = 1.66053906660e-27      # kg

UM = 1e-6   # metres per micrometre
NM = 1e-9   # metres per nanometre
MHZ = 1e6   # hertz per megahertz

# Default Monte Carlo seed; all stochastic entry points accept an override.
DEFAULT_SEED = 0xC0FFEE
