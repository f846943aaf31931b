"""Offline traffic signal control from coarse-grained observations.

Rewards (queue lengths and delays) are reconstructed from 5-second spatial counts
and 5-minute flows with a shockwave queuing model fitted by Gaussian-process
Metropolis-Hastings; a cycle-length and green-split policy is then trained with
in-sample offline RL and evaluated in a bundled point-queue simulator.
"""

__version__ = "0.1.0"
