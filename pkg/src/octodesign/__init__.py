"""Bi-level plant/controller co-design of a coaxial eight-rotor multicopter."""
__version__ = "0.1.0"
