"""Temporally aligned spiking recurrent agents for partially observable control.

One spiking-cell update per environment transition, gated recurrent spiking
neurons, recurrent TD3 / discrete SAC trainers, gradient-theory checks, and
synaptic-operation energy accounting.
"""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, finite_difference_check, no_grad, spike
from .neurons import GrsnParams, LifParams, NeuronState, grsn_step, gru_step, lif_step

__all__ = [
    "Tape",
    "Tensor",
    "finite_difference_check",
    "no_grad",
    "spike",
    "LifParams",
    "GrsnParams",
    "NeuronState",
    "lif_step",
    "grsn_step",
    "gru_step",
]
