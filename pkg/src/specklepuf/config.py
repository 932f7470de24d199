"""Calibrated defaults shared across modules.

The values below come out of ``scripts/calibrate.py``; rerun it after changing
the measurement or misalignment model and paste the new numbers here.
"""

# Experimental operating point reproduced by the simulator.
SEGMENTS = 1200  # 40 x 30 DMD segments
CELLS = 302  # speckle cells on the detector; fitted gamma shape 301.8
MEAN_PHOTONS = 2429.0
KEY_LENGTH = 150

# Laser power jitter giving an intra-HD mean of 0.056 at L=150 with shot
# noise disabled (see DetectorConfig.calibrated).
INTENSITY_JITTER_REL = 0.0070
DARK_RATE = 0.1  # counts per 1 ms window
INTEGRATION_WINDOW_MS = 1.0

# Gaussian decorrelation scales for misalignment; key HD >= 0.45 at 30 um and
# at 0.5 degrees.
ELL_X_UM = 22.8
ELL_THETA_DEG = 0.38

# Intra / inter binomial means used when no fitted values are supplied.
P_INTRA = 0.056
P_INTER = 0.496

DB_ENV_VAR = "SPECKLEPUF_DB"
