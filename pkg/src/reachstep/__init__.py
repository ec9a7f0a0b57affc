"""Reach-avoid controller synthesis by SOS programming and backstepping."""
