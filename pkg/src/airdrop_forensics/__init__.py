"""Token-distribution forensics toolkit.

Reconstructs a token community from transaction exports, clusters member
behavior into roles, computes temporal network health metrics, simulates
airdrop eligibility rules, and detects hunter cliques -- with a synthetic
community generator providing ground truth for every detector.
"""

__version__ = "0.1.0"
