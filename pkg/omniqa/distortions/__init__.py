from .registry import DISTORTIONS, DISTORTION_TYPES, synth_distort
