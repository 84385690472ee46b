"""
Training
Staged schedule: MSE pretraining of the uncertainty backbone, heteroscedastic
fine-tuning with a learning-rate drop, then parameter duplication into the
phases and MSE training of the full unfolding model
"""

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from config.settings import CtmConfig, TrainConfig
from src.errors import ContractError, DivergenceError
from src.forward_model import Sample
from src.metrics import psnr
from src.nn import count_parameters
from src.optim import Adam
from src.tensor import Parameter, Tensor
from src.uncertainty import mse_loss, network_inputs, uncertainty_loss
from src.unfolding import UnfoldingModel

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["step", "loss", "psnr"]

LossFn = Callable[[int], Tuple[Tensor, np.ndarray]]


@dataclass
class TrainingHistory:
    rows: List[Dict[str, Union[str, int, float]]] = field(default_factory=list)

    def add(self, stage: str, step: int, loss: float, psnr_db: float) -> None:
        self.rows.append({"stage": stage, "step": step, "loss": loss, "psnr": psnr_db})

    def stage(self, name: str) -> List[Dict[str, Union[str, int, float]]]:
        return [row for row in self.rows if row["stage"] == name]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["stage"] + HISTORY_COLUMNS)

    def write_csv(self, path: Union[str, Path]) -> Path:
        """Curve CSV with columns step,loss,psnr; steps count across stages"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame()[HISTORY_COLUMNS].to_csv(path, index=False)
        return path


@dataclass
class TrainingResult:
    model: UnfoldingModel
    history: TrainingHistory
    diverged: Optional[DivergenceError] = None
    runtime_s: float = 0.0


def build_model(ctm: CtmConfig, train: TrainConfig) -> UnfoldingModel:
    return UnfoldingModel(ctm, phases=train.phases, with_uncertainty=train.with_uncertainty)


class _Schedule:
    """Shared state of one train_schedule call"""

    def __init__(self, model: UnfoldingModel, dataset: Sequence[Sample], cfg: TrainConfig):
        self.model = model
        self.dataset = list(dataset)
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.history = TrainingHistory()
        self.global_step = 0
        self._order: List[int] = []
        self._inputs: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

    def next_index(self) -> int:
        if not self._order:
            self._order = list(self.rng.permutation(len(self.dataset)))
        return int(self._order.pop(0))

    def inputs(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        if index not in self._inputs:
            sample = self.dataset[index]
            self._inputs[index] = network_inputs(sample.measurement, sample.masks)
        return self._inputs[index]

    def run(
        self,
        stage: str,
        steps: int,
        parameters: List[Parameter],
        lr: Callable[[int], float],
        loss_fn: LossFn,
    ) -> None:
        if steps == 0:
            return
        cfg = self.cfg
        optimizer = Adam(parameters, lr(0), cfg.beta1, cfg.beta2, cfg.eps)
        logger.info("stage %s: %d steps over %d trainable parameters", stage, steps,
                    int(sum(p.size for p in optimizer.params)))
        progress = tqdm(range(steps), desc=f"stage {stage}", disable=not logger.isEnabledFor(logging.INFO), leave=False)
        for step in progress:
            optimizer.lr = lr(step)
            index = self.next_index()
            self.model.zero_grad()
            loss, prediction = loss_fn(index)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(stage, step, value)
            loss.backward()
            optimizer.step()

            quality = psnr(self.dataset[index].cube.values, prediction)
            self.history.add(stage, self.global_step, value, quality)
            self.global_step += 1
            if (step + 1) % cfg.log_every == 0 or step + 1 == steps:
                progress.set_postfix(loss=f"{value:.3e}", psnr=f"{quality:.2f}")
                logger.info("stage %s step %d/%d: loss %.4e, psnr %.2f dB", stage, step + 1, steps, value, quality)

    # ----------------------------------------------------------- stages
    def mean_mse(self, index: int) -> Tuple[Tensor, np.ndarray]:
        mean, _ = self.model.uncertainty(*self.inputs(index))
        return mse_loss(mean, self.dataset[index].cube.values), mean.data

    def heteroscedastic(self, index: int) -> Tuple[Tensor, np.ndarray]:
        mean, beta = self.model.uncertainty(*self.inputs(index))
        return uncertainty_loss(self.dataset[index].cube.values, mean, beta), mean.data

    def unfolding_mse(self, index: int) -> Tuple[Tensor, np.ndarray]:
        sample = self.dataset[index]
        v = self.model(sample.measurement, sample.masks)
        return mse_loss(v, sample.cube.values), v.data


def train_schedule(model: UnfoldingModel, dataset: Sequence[Sample], cfg: TrainConfig) -> TrainingResult:
    """
    Run stages A (MSE on the uncertainty mean), B (L_U, lr_b1 then lr_b2) and
    C (frozen uncertainty net, duplicated backbone, MSE on the unfolding output)

    With `direct_lu` stage A is skipped and a divergence during stage B is
    recorded on the result instead of raised. Models without an uncertainty
    network run stage C only.

    Raises:
        DivergenceError: non-finite loss, naming the stage and step
    """
    cfg.validate()
    if not dataset:
        raise ContractError("training needs at least one sample")
    start = time.perf_counter()
    schedule = _Schedule(model, dataset, cfg)
    result = TrainingResult(model, schedule.history)

    if model.with_uncertainty:
        net = model.uncertainty
        if not cfg.direct_lu:
            backbone = net.trunk.parameters(True) + net.mean_head.parameters(True)
            schedule.run("A", cfg.steps_a, backbone, lambda step: cfg.lr_a, schedule.mean_mse)

        half = cfg.steps_b // 2
        try:
            schedule.run("B", cfg.steps_b, net.parameters(True),
                         lambda step: cfg.lr_b1 if step < half else cfg.lr_b2, schedule.heteroscedastic)
        except DivergenceError as e:
            if not cfg.direct_lu:
                raise
            logger.warning("direct L_U training diverged: %s", e)
            result.diverged = e
            result.runtime_s = time.perf_counter() - start
            return result

        net.freeze()
        model.duplicate_backbone()
    else:
        logger.info("no uncertainty network; running stage C only")

    schedule.run("C", cfg.steps_c, model.parameters(True), lambda step: cfg.lr_c, schedule.unfolding_mse)
    result.runtime_s = time.perf_counter() - start
    logger.info("training finished in %.1fs (%d steps)", result.runtime_s, schedule.global_step)
    return result


def evaluate_model(model: UnfoldingModel, dataset: Sequence[Sample]) -> List[float]:
    return [psnr(sample.cube.values, model.reconstruct(sample.measurement, sample.masks)) for sample in dataset]


def phase_sweep(
    dataset: Sequence[Sample],
    ctm: CtmConfig,
    train: TrainConfig,
    max_phases: int = 4,
) -> pd.DataFrame:
    """
    Train one model per phase count 1..max_phases with the same step budget

    Returns:
        one row per phase count: phases, parameters, trainable_parameters,
        psnr_mean, runtime_s
    """
    rows = []
    for phases in range(1, max_phases + 1):
        cfg = replace(train, phases=phases)
        model = build_model(ctm, cfg)
        result = train_schedule(model, dataset, cfg)
        scores = evaluate_model(model, dataset)
        rows.append({
            "phases": phases,
            "parameters": count_parameters(model),
            "trainable_parameters": count_parameters(model, trainable_only=True),
            "psnr_mean": float(np.mean(scores)),
            "runtime_s": result.runtime_s,
        })
        logger.info("phase sweep: %d phase(s) -> %.2f dB", phases, rows[-1]["psnr_mean"])
    return pd.DataFrame(rows)
