"""
oamlink - constants

Copyright (c) 2020 Aiven Ltd
See LICENSE for details
"""

# Wavelength, meters
SIGNAL_WAVELENGTH = 633e-9

# Kolmogorov turbulence
PLANE_WAVE_R0_COEFFICIENT = 0.423
STRUCTURE_FUNCTION_COEFFICIENT = 6.88
PSD_COEFFICIENT = 0.023
GREENWOOD_COEFFICIENT = 0.427
TILT_VARIANCE_COEFFICIENT = 0.182
SUBHARMONIC_LEVELS = 3

# Sampling
MIN_GRID_SAMPLES = 64
MIN_SAMPLES_PER_WAIST = 8
MIN_PUPIL_SAMPLES = 16
ALIASING_POWER_FRACTION = 0.99
INVALID_SUBAPERTURE_FRACTION = 0.01

# Adaptive optics defaults
DEFAULT_LOOP_GAIN = 0.3
DEFAULT_LATENCY_FRAMES = 1
DEFAULT_DM_COUPLING = 0.15
DEFAULT_ZERNIKE_TERMS = 15
WFS_REFERENCE_FRAME_RATE = 1000.0

# Lab-scale link
LAB_D_OVER_R0_RANGE = (0.11, 3.06)
LAB_DM_ACTUATORS = 6
LAB_WFS_LENSLETS = 23

# Cross-campus link
CAMPUS_LINK_LENGTH = 340.0
CAMPUS_CN2_RANGE = (5.4e-15, 3.2e-14)
CAMPUS_APERTURE = 0.0762
CAMPUS_FRESNEL_NUMBER_PRODUCT = 4.89
CAMPUS_DM_ACTUATORS = 12

# Measured values kept as context for reports, never used as targets
REPORTED_FIDELITY_THRESHOLDS = {3: 0.8405, 5: 0.7901, 7: 0.7630, 10: 0.7378}
REPORTED_FIDELITY_MODEL_COEFFICIENT = 3.404
REPORTED_NO_TURBULENCE_MUB_FIDELITY = 0.9369
REPORTED_POLARIZATION_FIDELITY = 0.9823
REPORTED_POLARIZATION_FIDELITY_AO = 0.9817
REPORTED_GREENWOOD_FREQUENCY = 60.0
REPORTED_ELL3_THEORETICAL_EFFICIENCY = 0.8683
REPORTED_GAUSSIAN_THEORETICAL_EFFICIENCY = 0.9079
