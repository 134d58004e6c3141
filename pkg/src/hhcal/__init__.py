"""Calcium-gated Hodgkin-Huxley dynamics and transcritical hybrid neuron models.

Library layout:

* :mod:`hhcal.models` — right-hand sides, gating kinetics, reset maps, presets
* :mod:`hhcal.integrate` — adaptive RK integration with events and resets
* :mod:`hhcal.phaseplane` — nullclines, fixed points, saddle manifolds
* :mod:`hhcal.bifurcation` — codimension-1 bifurcation detectors
* :mod:`hhcal.normalform` — quadratic normal-form transform at the
  transcritical point
* :mod:`hhcal.signatures` — spike latency / plateau / ADP quantification
* :mod:`hhcal.cli` — scenario runner and figure recipes
"""

from .models import (
    FoldHybridModel,
    FullModel,
    HybridModel,
    HybridParams,
    ModelParams,
    PRESETS,
    ReducedModel,
    TruncatedNormalForm,
    preset,
)
from .integrate import (
    IntegratorOptions,
    StimulusProtocol,
    Trajectory,
    integrate,
    integrate_hybrid,
)

__version__ = "0.1.0"
