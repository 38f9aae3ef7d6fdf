"""RF fingerprinting toolkit for Orbcomm-style SDPSK satellite downlinks."""

__version__ = "0.1.0"

SYMBOL_RATE = 4800.0
SPS = 2
SAMPLE_RATE = SYMBOL_RATE * SPS
PACKET_BITS = 96
PACKET_SAMPLES = PACKET_BITS * SPS
