"""
Unfolding Model
Normalized measurement, reference frames, the frozen uncertainty network,
per-phase UM features and J CTM phases wired through the GAP phase loop
"""

import logging
from typing import Dict, List, Optional, Union

import numpy as np

from config.settings import CtmConfig
from src.ctm_network import CtmPhase, cube_to_volume
from src.errors import ConfigError, ContractError
from src.forward_model import MaskSet, Measurement
from src.gap_solver import PhaseState, initial_estimate, unfold_run
from src.nn import Module, copy_matching_parameters
from src.tensor import Tensor, concat, no_grad
from src.uncertainty import UmFeatures, UncertaintyMap, UncertaintyNet

logger = logging.getLogger(__name__)

MAX_PHASES = 4


class UnfoldingModel(Module):
    """
    Deep-unfolding reconstructor

    Phase j receives concat(x_j, RF, UM features_j) when the uncertainty
    network is enabled and concat(x_j, RF) otherwise. The uncertainty map is
    computed once per measurement by the frozen network.
    """

    def __init__(self, cfg: CtmConfig, phases: int = 3, with_uncertainty: bool = True):
        super().__init__()
        if not 1 <= phases <= MAX_PHASES:
            raise ContractError(f"phase count must lie in 1..{MAX_PHASES}, got {phases}")
        cfg.validate()
        rng = np.random.default_rng(cfg.init_seed)
        self.cfg = cfg
        self.num_phases = phases
        self.with_uncertainty = with_uncertainty

        in_channels = 2
        if with_uncertainty:
            self.uncertainty = UncertaintyNet(cfg, rng)
            self.um = UmFeatures(cfg, phases, rng)
            in_channels += cfg.um_channels
        self.phases: List[CtmPhase] = [
            self.add_module(f"phase{j}", CtmPhase(cfg, in_channels, rng)) for j in range(phases)
        ]
        self.bind_names()

    def uncertainty_map(self, y: Union[Measurement, np.ndarray], m: MaskSet) -> Optional[UncertaintyMap]:
        if not self.with_uncertainty:
            return None
        return self.uncertainty.estimate(y, m)[1]

    def auxiliary_inputs(self, y: Union[Measurement, np.ndarray], m: MaskSet) -> List[Union[np.ndarray, Tensor]]:
        """Gamma_j for every phase"""
        rf = cube_to_volume(initial_estimate(y, m, "rf")).data
        if not self.with_uncertainty:
            return [rf] * self.num_phases
        beta = self.uncertainty_map(y, m).beta
        return [concat([rf, self.um(beta, j)], axis=0) for j in range(self.num_phases)]

    def forward(
        self,
        y: Union[Measurement, np.ndarray],
        m: MaskSet,
        states: Optional[List[PhaseState]] = None,
        active_phases: Optional[int] = None,
    ) -> Tensor:
        """Run the first `active_phases` phases (all by default)"""
        count = self.num_phases if active_phases is None else active_phases
        if not 1 <= count <= self.num_phases:
            raise ConfigError(f"cannot run {count} phase(s) of a {self.num_phases}-phase model")
        gammas = self.auxiliary_inputs(y, m)[:count]
        return unfold_run(y, m, self.phases[:count], gammas, states=states)

    def reconstruct(
        self,
        y: Union[Measurement, np.ndarray],
        m: MaskSet,
        active_phases: Optional[int] = None,
    ) -> np.ndarray:
        with no_grad():
            return self(y, m, active_phases=active_phases).data

    def duplicate_backbone(self) -> Dict[str, str]:
        """
        Copy the uncertainty trunk and mean head into every phase by name suffix

        The phase init conv sees more input channels than the uncertainty
        trunk; its leading (x, RF) input channels are copied.
        """
        if not self.with_uncertainty:
            raise ContractError("model has no uncertainty network to duplicate from")
        copied = {}
        for j in range(self.num_phases):
            copied.update(copy_matching_parameters(self, self, "uncertainty.trunk.", f"phase{j}.trunk."))
            copied.update(copy_matching_parameters(self, self, "uncertainty.mean_head.", f"phase{j}.head."))
        logger.info("duplicated %d parameters into %d phases", len(copied), self.num_phases)
        return copied
