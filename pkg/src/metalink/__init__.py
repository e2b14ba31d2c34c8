"""End-to-end link training over an unknown fading channel.

Subpackages: autodiff (double-backward engine), channel (AR Rayleigh fading
simulator), link (neural encoder/decoder), training (online hybrid
joint/meta-training), baselines (BPSK/MMSE/ML), evaluation + experiment
(BLER harness and CLI).
"""

__version__ = "0.1.0"
