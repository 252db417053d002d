"""Shared fixtures: a small corpus and briefly trained models.

These are deliberately cheap (seconds, not minutes); they exist so inference,
checkpoint, and CLI tests have real trained objects to exercise. Output
quality at these step counts is irrelevant and untested here; the acceptance
suite trains its own, larger fixtures.
"""

import numpy as np
import pytest

from landsyn.corpus import CorpusConfig, gen_corpus
from landsyn.landmark import DecoderConfig
from landsyn.landmark_train import (
    LandmarkTrainConfig,
    train_landmark_decoder,
)
from landsyn.tts import TtsConfig, TtsSystem
from landsyn.tts_train import TtsTrainConfig, train_tts


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    config = CorpusConfig(
        num_speakers=3,
        num_paired_speakers=2,
        num_unseen_speakers=1,
        num_emotions=2,
        num_utterances=40,
    )
    return gen_corpus(config, seed=0, out_dir=tmp_path_factory.mktemp("corpus"))


@pytest.fixture(scope="session")
def small_chain(small_corpus):
    config = TtsConfig(
        num_phonemes=small_corpus.inventory.num_phonemes,
        num_cond_labels=2,
        feat_dim=small_corpus.feat_dim,
        hidden_dim=48,
        flow_hidden_dim=32,
    )
    result = train_tts(
        small_corpus, TtsTrainConfig(steps=120, batch_size=8, seed=0), model_config=config
    )
    return TtsSystem(result.model)


@pytest.fixture(scope="session")
def small_decoder(small_corpus, small_chain):
    config = DecoderConfig(
        in_dim=small_chain.config.latent_dim,
        num_points=small_corpus.num_keypoints,
        num_layers=6,
        channels=48,
    )
    result = train_landmark_decoder(
        small_corpus,
        small_chain,
        LandmarkTrainConfig(steps=60, batch_size=16, seed=0),
        decoder_config=config,
    )
    return result.system


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
