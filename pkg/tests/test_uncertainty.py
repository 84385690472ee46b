import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from config.settings import CtmConfig
from src.errors import ConfigError, ContractError, DimensionError
from src.forward_model import make_scene, simulate
from src.gap_solver import gap_project, initial_estimate
from src.tensor import Tensor, check_gradients
from src.uncertainty import (
    BETA_CLAMP,
    UmFeatures,
    UncertaintyMap,
    UncertaintyNet,
    binarize_um,
    mask_adaptability,
    mse_loss,
    network_inputs,
    uncertainty_loss,
)
from src.unfolding import UnfoldingModel


def tiny_cfg(**overrides):
    values = dict(channels=4, heads=2, window_size=2, window_frames=2, group_size=2, group_frames=2,
                  blocks_per_phase=1, um_channels=2)
    values.update(overrides)
    return CtmConfig(**values)


@pytest.fixture
def sample():
    return simulate(make_scene("moving-square", 8, 8, 4, seed=0), mask_seed=1)


# ------------------------------------------------------------------------ loss
def test_zero_beta_loss_is_mse(rng):
    truth, mean = rng.random((4, 4, 2)), rng.random((4, 4, 2))
    value = uncertainty_loss(truth, Tensor(mean), Tensor(np.zeros((4, 4, 2)))).item()
    assert value == pytest.approx(mse_loss(Tensor(mean), truth).item(), rel=1e-12)


def test_loss_minimized_at_log_squared_residual():
    truth = np.zeros((3, 3, 1))
    mean = np.full((3, 3, 1), 0.3)
    best = np.log(0.09)

    def loss_at(beta):
        return uncertainty_loss(truth, Tensor(mean), Tensor(np.full((3, 3, 1), beta))).item()

    assert loss_at(best) < loss_at(best - 0.1)
    assert loss_at(best) < loss_at(best + 0.1)
    beta = Tensor(np.full((3, 3, 1), best), requires_grad=True)
    uncertainty_loss(truth, Tensor(mean), beta).backward()
    np.testing.assert_allclose(beta.grad, 0.0, atol=1e-12)


@pytest.mark.parametrize("residual", [0.3, 0.05, 1.2])
def test_numeric_minimizer_matches_log_squared_residual(residual):
    truth = np.zeros((2, 2, 1))
    mean = Tensor(np.full((2, 2, 1), residual))

    def loss_at(beta):
        return uncertainty_loss(truth, mean, Tensor(np.full((2, 2, 1), beta))).item()

    found = minimize_scalar(loss_at, bounds=(-BETA_CLAMP, BETA_CLAMP), method="bounded", options={"xatol": 1e-10})
    assert found.x == pytest.approx(np.log(residual ** 2), abs=1e-6)


def test_loss_clamps_beta():
    truth, mean = np.zeros((2, 2, 1)), np.full((2, 2, 1), 0.5)
    value = uncertainty_loss(truth, Tensor(mean), Tensor(np.full((2, 2, 1), 50.0))).item()
    assert value == pytest.approx(np.exp(-BETA_CLAMP) * 0.25 + BETA_CLAMP)


def test_loss_shape_mismatch():
    with pytest.raises(DimensionError):
        uncertainty_loss(np.zeros((2, 2, 1)), Tensor(np.zeros((2, 2, 1))), Tensor(np.zeros((2, 2, 2))))


# ----------------------------------------------------------------- binarization
def test_binarize_is_scale_invariant(rng):
    sigma2 = rng.random((6, 6, 2))
    np.testing.assert_array_equal(binarize_um(sigma2), binarize_um(7.5 * sigma2))


def test_binarize_marks_above_mean():
    out = binarize_um(np.array([1.0, 2.0, 3.0, 10.0]))
    np.testing.assert_array_equal(out, [False, False, False, True])


def test_binarize_constant_map_is_empty():
    assert not binarize_um(np.full((4, 4, 2), 0.2)).any()


def test_uncertainty_map_variance():
    um = UncertaintyMap(np.log(np.array([[[0.5, 2.0]]])))
    np.testing.assert_allclose(um.sigma2, [[[0.5, 2.0]]])
    np.testing.assert_array_equal(um.binarized, [[[False, True]]])


# --------------------------------------------------------------------- network
def test_fresh_network_returns_projection_and_flat_map(sample):
    net = UncertaintyNet(tiny_cfg())
    mean, um = net.estimate(sample.measurement, sample.masks)
    expected = gap_project(initial_estimate(sample.measurement, sample.masks, "rf"), sample.measurement, sample.masks)
    np.testing.assert_array_equal(mean, expected)
    np.testing.assert_array_equal(um.beta, np.zeros(sample.masks.shape))
    assert not um.binarized.any()


def test_network_inputs_shapes(sample):
    x_init, gamma = network_inputs(sample.measurement, sample.masks)
    assert x_init.shape == (8, 8, 4)
    assert gamma.shape == (1, 4, 8, 8)


def test_mask_adaptability_of_flat_map(sample):
    net = UncertaintyNet(tiny_cfg())
    changes = mask_adaptability(net, sample.cube, sample.masks, [2, 3])
    assert changes == {2: 0.0, 3: 0.0}


def test_head_gradients_match_finite_differences(sample, rng):
    net = UncertaintyNet(tiny_cfg())
    for head in (net.mean_head, net.beta_head):
        for param in head.parameters():
            param.data[...] = rng.normal(scale=0.1, size=param.shape)
    x_init, gamma = network_inputs(sample.measurement, sample.masks)
    truth = sample.cube.values

    def loss():
        mean, beta = net(x_init, gamma)
        return uncertainty_loss(truth, mean, beta)

    tensors = {f"{head}.{name}": param for head in ("mean_head", "beta_head")
               for name, param in getattr(net, head).named_parameters()}
    result = check_gradients(loss, tensors, entries=6)
    assert result.passed(), result


# ----------------------------------------------------------------- UM features
def test_zero_um_weights_give_zero_features(rng):
    features = UmFeatures(tiny_cfg(), phases=2)
    for param in features.parameters():
        param.data[...] = 0.0
    out = features(rng.normal(size=(4, 4, 2)), 1)
    assert out.shape == (2, 2, 4, 4)
    np.testing.assert_array_equal(out.data, 0.0)


def test_um_blocks_do_not_share_parameters():
    features = UmFeatures(tiny_cfg(), phases=3)
    names = [name for name, _ in features.named_parameters()]
    assert len(names) == len(set(names)) == 12
    first = features.blocks[0].conv1.weight
    assert all(block.conv1.weight is not first for block in features.blocks[1:])
    assert not np.array_equal(features.blocks[0].conv1.weight.data, features.blocks[1].conv1.weight.data)


def test_um_feature_gradients(rng):
    features = UmFeatures(tiny_cfg(), phases=2)
    beta = Tensor(rng.normal(size=(4, 4, 2)), requires_grad=True)
    weights = Tensor(rng.normal(size=(2, 2, 4, 4)))
    tensors = {"beta": beta, **dict(features.blocks[1].named_parameters())}
    result = check_gradients(lambda: (features(beta, 1) * weights).sum(), tensors, entries=6)
    assert result.passed(), result


def test_um_phase_index_out_of_range():
    features = UmFeatures(tiny_cfg(), phases=2)
    with pytest.raises(ContractError):
        features(np.zeros((4, 4, 2)), 2)


# ------------------------------------------------------------------- unfolding
@pytest.mark.parametrize("phases", [0, 5])
def test_model_phase_count_range(phases):
    with pytest.raises(ContractError):
        UnfoldingModel(tiny_cfg(), phases=phases)


def test_fresh_model_reconstructs_single_projection(sample):
    model = UnfoldingModel(tiny_cfg(), phases=2)
    out = model.reconstruct(sample.measurement, sample.masks)
    expected = gap_project(initial_estimate(sample.measurement, sample.masks, "rf"), sample.measurement, sample.masks)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_active_phases_must_fit_model(sample):
    model = UnfoldingModel(tiny_cfg(), phases=2)
    with pytest.raises(ConfigError):
        model(sample.measurement, sample.masks, active_phases=3)


@pytest.mark.parametrize("with_uncertainty, channels", [(True, 3), (False, 1)])
def test_auxiliary_input_channels(sample, with_uncertainty, channels):
    model = UnfoldingModel(tiny_cfg(), phases=2, with_uncertainty=with_uncertainty)
    gammas = model.auxiliary_inputs(sample.measurement, sample.masks)
    assert len(gammas) == 2
    assert all(g.shape == (channels, 4, 8, 8) for g in gammas)
    assert (model.uncertainty_map(sample.measurement, sample.masks) is None) is not with_uncertainty


def test_parameter_names_are_dotted_paths():
    model = UnfoldingModel(tiny_cfg(), phases=1)
    named = dict(model.named_parameters())
    assert "phase0.trunk.block0.bda.attn.qkv.weight" in named
    assert "uncertainty.beta_head.bias" in named
    assert all(param.name == name for name, param in named.items())


def test_duplicate_backbone_copies_bit_exactly(rng):
    model = UnfoldingModel(tiny_cfg(), phases=2)
    for param in model.uncertainty.parameters():
        param.data[...] = rng.normal(size=param.shape)
    copied = model.duplicate_backbone()
    named = dict(model.named_parameters())
    for j in range(2):
        for suffix in ("block0.bda.attn.qkv.weight", "block0.dsa.norm.gain", "block0.ff.fuse.weight"):
            np.testing.assert_array_equal(named[f"phase{j}.trunk.{suffix}"].data,
                                          named[f"uncertainty.trunk.{suffix}"].data)
        np.testing.assert_array_equal(named[f"phase{j}.head.weight"].data,
                                      named["uncertainty.mean_head.weight"].data)
        # the phase init conv also reads the UM channels; only x and RF are copied
        np.testing.assert_array_equal(named[f"phase{j}.trunk.init.weight"].data[:, :2],
                                      named["uncertainty.trunk.init.weight"].data)
        assert copied[f"phase{j}.head.bias"] == "uncertainty.mean_head.bias"


def test_duplicate_without_uncertainty_network():
    with pytest.raises(ContractError):
        UnfoldingModel(tiny_cfg(), phases=1, with_uncertainty=False).duplicate_backbone()
