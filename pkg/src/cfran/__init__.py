"""Cell-free RAN simulation toolkit: channels, joint detection, 2-D coding,
interference coordination and a fiber-THz link model."""

__version__ = "0.1.0"
