"""Digital-twin toolkit for a simulated three-well gas-lift process.

Offline pipeline: Latin hypercube experiment design, NARX structure
selection via Lipschitz indices, from-scratch feedforward network
training, Hyperband tuning, random-walk Metropolis weight posteriors,
Monte Carlo coverage regions, and ensemble reduction. Online: a
cognitive twin that monitors coverage violations over a moving horizon
and retrains itself when the plant drifts, exercised software-in-the-loop
against the virtual plant.
"""

__version__ = "0.1.0"
