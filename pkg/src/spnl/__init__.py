"""Fock-basis simulation of single-photon CHSH tests with independent references."""

__version__ = "0.1.0"
