import numpy as np
import pytest

from deepmr import data, deepnet, rbm, synth

CORPUS_SEED = 20260810


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """Synthetic digit corpus shared by the whole session: 12k train and
    2.5k test cases cover every workload in the acceptance suite."""
    out = tmp_path_factory.mktemp("corpus")
    synth.make_corpus(out, train_count=12000, test_count=2500, seed=CORPUS_SEED)
    return out


@pytest.fixture(scope="session")
def train_dataset(corpus_dir):
    return data.load_idx(corpus_dir / "train-images-idx3-ubyte",
                         corpus_dir / "train-labels-idx1-ubyte")


@pytest.fixture(scope="session")
def test_dataset(corpus_dir):
    return data.load_idx(corpus_dir / "t10k-images-idx3-ubyte",
                         corpus_dir / "t10k-labels-idx1-ubyte")


@pytest.fixture(scope="session")
def tiny_cases():
    """A handful of small random cases for engine/job plumbing tests."""
    rng = np.random.default_rng(99)
    return [deepnet.TrainingCase(i, rng.random(12), int(rng.integers(10)))
            for i in range(10)]


@pytest.fixture(scope="session")
def desk_models(train_dataset, test_dataset):
    """Small but genuinely trained classifier + autoencoder for the demo
    service and CLI integration tests."""
    hp = rbm.CdHyperParams()
    train = data.subset(train_dataset, 600, seed=4).cases
    clf_cfg = deepnet.NetworkConfig(
        num_nodes=(784, 64, 10), max_epoch=5, hp=hp, seed=21,
        mode="classifier", batch_size=50, finetune_epochs=30)
    stack = deepnet.pretrain(train, clf_cfg)
    classifier = deepnet.finetune(
        deepnet.attach_classifier_head(stack, seed=21), train, clf_cfg)

    ae_cfg = deepnet.NetworkConfig(
        num_nodes=(784, 64, 30), max_epoch=5, hp=hp, seed=22,
        mode="autoencoder", batch_size=50, finetune_epochs=10)
    ae_stack = deepnet.pretrain(train, ae_cfg)
    autoencoder = deepnet.finetune(deepnet.unroll(ae_stack), train, ae_cfg)
    return {"classifier": classifier, "autoencoder": autoencoder, "train": train}
