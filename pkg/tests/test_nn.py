import math

import numpy as np
import pytest

from capmeter import nn
from capmeter.config import Config, Stream
from capmeter.exceptions import BoundDomainError, CheckpointError, LabelRangeError, ShapeError
from capmeter.train import init_network
from capmeter.utils import rng_stream


@pytest.fixture
def toy_net() -> nn.TwoLayerNet:
    return init_network(3, 4, 2, seed=1)


# MARK: TwoLayerNet
def test_network_validates_shapes() -> None:
    with pytest.raises(ShapeError):
        nn.TwoLayerNet.at_init(np.ones((4, 3)), np.ones((2, 5)))
    with pytest.raises(ShapeError):
        nn.TwoLayerNet(U=np.ones((4, 3)), V=np.ones((2, 4)), U0=np.ones((3, 3)), V0=np.ones((2, 4)))


def test_reference_matrices_are_frozen(toy_net: nn.TwoLayerNet) -> None:
    with pytest.raises(ValueError):
        toy_net.U0[0, 0] = 1.0


def test_dataset_validates_labels() -> None:
    with pytest.raises(LabelRangeError):
        nn.LabeledDataset(X=np.ones((2, 2)), y=[0, 2], c=2)
    with pytest.raises(ShapeError):
        nn.LabeledDataset(X=np.ones((2, 2)), y=[0], c=2)


@pytest.mark.parametrize(
    argnames=["gamma", "delta"],
    argvalues=[(0.0, 0.1), (-1.0, 0.1), (1.0, 0.0), (1.0, 1.0)],
)
def test_margin_params_domain(gamma: float, delta: float) -> None:
    with pytest.raises(BoundDomainError):
        nn.MarginParams(gamma, delta)


# MARK: forward
def test_forward_applies_relu() -> None:
    net = nn.TwoLayerNet.at_init(np.eye(2), np.eye(2))
    assert np.array_equal(nn.forward(net, np.array([1.0, -1.0])), [1.0, 0.0])


def test_forward_with_zero_top_layer() -> None:
    net = nn.TwoLayerNet.at_init(np.ones((3, 2)), np.zeros((2, 3)))
    assert np.array_equal(nn.forward(net, np.array([5.0, -2.0])), [0.0, 0.0])


def test_forward_matches_loop(toy_net: nn.TwoLayerNet) -> None:
    """Vectorized scores agree with an explicit double loop."""
    x = np.array([1.0, 0.0, 0.0])
    expected = [
        sum(toy_net.V[j, i] * max(0.0, sum(toy_net.U[i, k] * x[k] for k in range(3)))
        for i in range(4))
        for j in range(2)
    ]
    assert np.allclose(nn.forward(toy_net, x), expected, atol=1e-12)


def test_score_matrix_matches_forward(toy_net: nn.TwoLayerNet) -> None:
    X = rng_stream(2, Stream.SAMPLING).standard_normal((5, 3))
    S = nn.score_matrix(toy_net, X)
    for i in range(5):
        assert np.allclose(S[i], nn.forward(toy_net, X[i]), atol=1e-12)


def test_forward_rejects_wrong_length(toy_net: nn.TwoLayerNet) -> None:
    with pytest.raises(ShapeError):
        nn.forward(toy_net, np.ones(4))


def test_forward_ignores_the_order_of_hidden_units() -> None:
    net = init_network(5, 8, 3, seed=2)
    order = rng_stream(2, Stream.SAMPLING).permutation(8)
    shuffled = nn.TwoLayerNet(
        U=net.U[order], V=net.V[:, order], U0=net.U0[order], V0=net.V0[:, order]
    )
    for x in rng_stream(3, Stream.SAMPLING).standard_normal((10, 5)):
        assert np.allclose(nn.forward(shuffled, x), nn.forward(net, x), rtol=1e-12, atol=1e-15)


# MARK: margin_operator
@pytest.mark.parametrize(
    argnames=["scores", "y", "expected"],
    argvalues=[
        ([2.0, 0.0, 1.0], 0, 1.0),
        ([0.0, 0.0], 0, 0.0),
        ([-1.0, 3.0], 0, -4.0),
    ],
)
def test_margin_operator(scores: list, y: int, expected: float) -> None:
    assert nn.margin_operator(np.array(scores), y) == expected


def test_margin_operator_rejects_bad_label() -> None:
    with pytest.raises(ValueError):
        nn.margin_operator(np.array([1.0, 2.0]), 2)


def test_margin_distribution_matches_operator(toy_net: nn.TwoLayerNet) -> None:
    rng = rng_stream(4, Stream.SAMPLING)
    data = nn.LabeledDataset(X=rng.standard_normal((3, 3)), y=[0, 1, 1], c=2)
    margins = nn.margin_distribution(toy_net, data)
    S = nn.score_matrix(toy_net, data.X)
    expected = [nn.margin_operator(S[i], int(data.y[i])) for i in range(3)]
    assert np.allclose(margins, expected, atol=1e-15)


# MARK: ramp_loss
@pytest.mark.parametrize(
    argnames=["mu", "gamma", "expected"],
    argvalues=[
        (2.0, 1.0, 0.0),
        (-0.1, 3.0, 1.0),
        (0.5, 1.0, 0.5),
        (0.0, 1.0, 1.0),
        (1.0, 1.0, 0.0),
    ],
)
def test_ramp_loss(mu: float, gamma: float, expected: float) -> None:
    assert nn.ramp_loss(mu, gamma) == pytest.approx(expected)


def test_ramp_loss_is_nonincreasing() -> None:
    mu = np.linspace(-2, 2, 401)
    loss = nn.ramp_loss(mu, 0.7)
    assert (np.diff(loss) <= 0).all()
    assert ((loss >= 0) & (loss <= 1)).all()


# MARK: empirical_margin_loss
def test_margin_loss_hand_built_case() -> None:
    gamma = 0.8
    margins = np.array([-1.0, 0.25 * gamma, 0.5 * gamma, 2 * gamma])
    assert nn.margin_loss_from_margins(margins, gamma) == pytest.approx(0.5625)


def test_zero_network_counts_ties_as_errors() -> None:
    net = nn.TwoLayerNet.at_init(np.ones((3, 2)), np.zeros((2, 3)))
    data = nn.LabeledDataset(X=np.eye(2), y=[0, 1], c=2)
    assert nn.empirical_margin_loss(net, data, 0.0) == 1.0
    assert np.array_equal(nn.margin_distribution(net, data), [0.0, 0.0])


def test_margin_loss_dominates_error(toy_net: nn.TwoLayerNet) -> None:
    rng = rng_stream(8, Stream.SAMPLING)
    data = nn.LabeledDataset(X=rng.standard_normal((40, 3)), y=rng.integers(0, 2, 40), c=2)
    losses = [nn.empirical_margin_loss(toy_net, data, gamma) for gamma in (0.0, 0.1, 1.0)]
    assert losses[0] <= losses[1] <= losses[2]


@pytest.mark.parametrize(argnames="gamma", argvalues=[0.05, 0.3, 1.0])
def test_margin_loss_is_homogeneous_in_the_top_layer(toy_net: nn.TwoLayerNet, gamma) -> None:
    """Doubling V doubles every margin, so the loss at 2 gamma on 2V is the loss at gamma on V."""
    rng = rng_stream(9, Stream.SAMPLING)
    data = nn.LabeledDataset(X=rng.standard_normal((40, 3)), y=rng.integers(0, 2, 40), c=2)
    doubled = nn.TwoLayerNet(U=toy_net.U, V=2 * toy_net.V, U0=toy_net.U0, V0=toy_net.V0)
    assert nn.empirical_margin_loss(doubled, data, 2 * gamma) == pytest.approx(
        nn.empirical_margin_loss(toy_net, data, gamma), abs=1e-15
    )


# MARK: cross_entropy
@pytest.mark.parametrize(
    argnames=["scores", "y", "expected"],
    argvalues=[
        ([0.0, 0.0], 0, math.log(2)),
        ([1000.0, 0.0], 0, 0.0),
        ([1.0, 2.0, 3.0], 2, -math.log(math.e**3 / (math.e + math.e**2 + math.e**3))),
    ],
)
def test_cross_entropy(scores: list, y: int, expected: float) -> None:
    assert nn.cross_entropy(np.array(scores), y) == pytest.approx(expected, abs=1e-12)


def test_mean_cross_entropy_matches_rows() -> None:
    S = np.array([[0.0, 0.0], [1.0, 3.0]])
    y = np.array([0, 1])
    expected = (nn.cross_entropy(S[0], 0) + nn.cross_entropy(S[1], 1)) / 2
    assert nn.mean_cross_entropy(S, y) == pytest.approx(expected)


# MARK: checkpoints
def test_checkpoint_round_trip_is_exact(tmp_path, toy_net: nn.TwoLayerNet) -> None:
    """
    Ensure every weight comes back bit for bit.

    The sidecar carries shapes, seed and the provenance given at save time.
    """
    toy_net.U += 0.5
    path = tmp_path / "net.capm"
    nn.save_checkpoint(toy_net, path, {"dataset": "toy"})
    loaded, sidecar = nn.load_checkpoint(path)

    for name in ("U", "V", "U0", "V0"):
        assert np.array_equal(getattr(loaded, name), getattr(toy_net, name))
    assert loaded.seed == toy_net.seed
    assert sidecar["shapes"]["U"] == [4, 3]
    assert sidecar["provenance"] == {"dataset": "toy"}


def test_checkpoint_bytes_are_deterministic(tmp_path, toy_net: nn.TwoLayerNet) -> None:
    nn.save_checkpoint(toy_net, tmp_path / "a.capm")
    nn.save_checkpoint(toy_net.copy(), tmp_path / "b.capm")
    assert (tmp_path / "a.capm").read_bytes() == (tmp_path / "b.capm").read_bytes()


@pytest.mark.parametrize(
    argnames=["corrupt"],
    argvalues=[
        (lambda raw: b"XXXX" + raw[4:],),
        (lambda raw: raw[:4] + b"\x09\x00" + raw[6:],),
        (lambda raw: raw[:-3],),
        (lambda raw: raw[:10],),
    ],
)
def test_corrupt_checkpoints_are_rejected(tmp_path, toy_net: nn.TwoLayerNet, corrupt) -> None:
    path = tmp_path / "net.capm"
    nn.save_checkpoint(toy_net, path)
    path.write_bytes(corrupt(path.read_bytes()))
    with pytest.raises(CheckpointError):
        nn.load_checkpoint(path)


def test_checkpoint_header_layout(tmp_path, toy_net: nn.TwoLayerNet) -> None:
    path = tmp_path / "net.capm"
    nn.save_checkpoint(toy_net, path)
    raw = path.read_bytes()
    assert raw[:4] == Config.CHECKPOINT_MAGIC
    assert len(raw) == 4 + 2 + 12 + 8 * 2 * (4 * 3 + 2 * 4) + 8
