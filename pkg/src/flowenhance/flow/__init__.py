from .layers import CouplingSubnet, FlowBlock, Inv1x1, squeeze, unsqueeze
from .model import (FlowConfig, FlowModel, count_parameters, flow_forward, flow_inverse, nll,
                    parameter_breakdown)

__all__ = [
    "CouplingSubnet",
    "FlowBlock",
    "FlowConfig",
    "FlowModel",
    "Inv1x1",
    "count_parameters",
    "flow_forward",
    "flow_inverse",
    "nll",
    "parameter_breakdown",
    "squeeze",
    "unsqueeze",
]
