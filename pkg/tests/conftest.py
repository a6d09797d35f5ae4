"""
Shared fixtures: a tiny synthetic corpus and model configurations small
enough to train in seconds on a CPU.
"""

import pytest

from src.dataset import apply_kcore, build_sequences
from src.recommender import RecommenderConfig
from src.synthetic import embeddings_for_dataset, generate_interactions
from src.teacher import TeacherConfig
from src.tokenizer import TokenizerConfig
from src.training import TrainingConfig

TINY_ITEMS = 16
TINY_DIM = 8


@pytest.fixture
def tiny_dataset():
    records = generate_interactions(
        n_users=30, n_items=TINY_ITEMS, n_clusters=2, min_len=5, max_len=8, stay_prob=0.8, seed=0
    )
    return build_sequences(apply_kcore(records, 2))


@pytest.fixture
def tiny_semantic(tiny_dataset):
    return embeddings_for_dataset(tiny_dataset, TINY_ITEMS, TINY_DIM, 2, 0.1, seed=0)


@pytest.fixture
def tiny_tokenizer_config():
    return TokenizerConfig(
        input_dim=TINY_DIM,
        encoder_dims=[16],
        num_levels=2,
        codebook_size=4,
        code_dim=4,
        tau_max=0.5,
        tau_min=0.05,
        kmeans_init=False,
    )


@pytest.fixture
def tiny_recommender_config():
    return RecommenderConfig(
        d_model=16, num_heads=2, num_encoder_layers=1, num_decoder_layers=1, ff_dim=32, dropout=0.0, max_history=5
    )


@pytest.fixture
def tiny_teacher_config():
    return TeacherConfig(dim=8, num_blocks=1, num_heads=1, dropout=0.0, max_len=5, batch_size=16, epochs=2, patience=2)


@pytest.fixture
def tiny_training_config():
    return TrainingConfig(
        pretrain_batch=8,
        pretrain_epochs=2,
        checkpoint_every=1,
        joint_batch=32,
        joint_epochs=2,
        patience=2,
        tokenizer_lr=1e-4,
        beam_size=10,
        top_ks=[5, 10],
    )
